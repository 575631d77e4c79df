"""Truncated state-space system, structural covariances, and the
approximation corrections that make the truncated filter exact.

The observation covariance objects are assembled from the Wold forms
y*_t = sum phi_k(d) eta_{t-k} + sum omega_k eps_{t-k} (demeaned y), giving

    Cov(y_t, eta_{t-j}) = phi_j sigma_eta^2 + omega_j sigma_etaeps
    Cov(y_t, eps_{t-j}) = phi_j sigma_etaeps + omega_j sigma_eps^2
    Cov(y_t, y_s)       = the corresponding double sums,

all exact under the zero-pre-sample convention. The corrections
eps_x[t], eps_c[t] are the conditional means of the trend/cycle
approximation errors given observations before t; subtracting them from
y and predicting the truncated components by Gaussian projection (the
conditional-expectation route, not a bare covariance recursion) yields
prediction errors identical to the exact high-dimensional filter.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cholesky, solve_triangular, toeplitz

from .arma_map import CoeffMap, arma_wold
from .fracops import frac_ar_expand, invert_ar, phi_int_coeffs, pi_coeffs
from .model import InvalidParams, ModelSpec, Params, deterministic_terms

__all__ = [
    "StateSpace",
    "CovCache",
    "CorrectedPass",
    "NumericalFailure",
    "build_state_space",
    "exact_state_space",
    "structural_covariances",
    "correction_terms",
    "corrected_pass",
]

MAX_COV_N = 4096


class NumericalFailure(RuntimeError):
    """Factorisation or filter breakdown at a particular parameter point."""


@dataclass
class StateSpace:
    """System matrices of the truncated representation.

    T is block diagonal over (deterministic block, ARMA trend block of size
    u = max(v, w+1), cycle companion block of size l); R loads the shock
    pair (eta_t, eps_t) with covariance Qshock; Z picks out
    (level, x_t, c_t) with unit weights. `det` carries the exact
    deterministic path, which the filter propagates outside the stochastic
    recursion (those states are noiseless).
    """

    T: np.ndarray
    R: np.ndarray
    Z: np.ndarray
    Qshock: np.ndarray
    det: np.ndarray
    mu_dim: int
    x_dim: int
    c_dim: int

    @property
    def dim(self) -> int:
        return self.T.shape[0]

    def stochastic_system(self):
        """(T, R, Z) restricted to the stochastic (trend, cycle) blocks."""
        s = slice(self.mu_dim, self.dim)
        return self.T[s, s], self.R[s, :], self.Z[s]


def _mu_block(spec: ModelSpec):
    if spec.break_index is None:
        return np.array([[1.0, 1.0], [0.0, 1.0]])
    return np.array([[1.0, 1.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]])


def build_state_space(params: Params, spec: ModelSpec, coeff_map: CoeffMap) -> StateSpace:
    """Assemble the truncated system for the given parameter point."""
    if not coeff_map.contains(params.d):
        raise InvalidParams(
            f"d={params.d} outside the coefficient map domain {coeff_map.domain}"
        )
    a, m = coeff_map(params.d)
    v, w, l = coeff_map.v, coeff_map.w, spec.l
    u = max(v, w + 1)

    Tx = np.zeros((u, u))
    Tx[: len(a), 0] = a
    Tx[:-1, 1:] = np.eye(u - 1)
    Rx = np.zeros(u)
    Rx[0] = 1.0
    Rx[1 : 1 + len(m)] = m

    delta = frac_ar_expand(params.d, params.ar_poly(), l)
    Tc = np.zeros((l, l))
    Tc[0, :] = -delta[1:]
    if l > 1:
        Tc[1:, :-1] = np.eye(l - 1)
    Rc = np.zeros(l)
    Rc[0] = 1.0

    Tm = _mu_block(spec)
    md = Tm.shape[0]
    dim = md + u + l
    T = np.zeros((dim, dim))
    T[:md, :md] = Tm
    T[md : md + u, md : md + u] = Tx
    T[md + u :, md + u :] = Tc
    R = np.zeros((dim, 2))
    R[md : md + u, 0] = Rx
    R[md + u :, 1] = Rc
    Z = np.zeros(dim)
    Z[0] = 1.0
    Z[md] = 1.0
    Z[md + u] = 1.0
    return StateSpace(
        T=T, R=R, Z=Z, Qshock=params.q_matrix(),
        det=deterministic_terms(params, spec),
        mu_dim=md, x_dim=u, c_dim=l,
    )


def exact_state_space(params: Params, spec: ModelSpec) -> StateSpace:
    """Exact AR(n-1) representation of trend and cycle (no approximation).

    State dimension 2(n-1): the trend block carries the full fractional
    difference recursion, the cycle block the full fractional-lag AR
    expansion. Used as the high-dimensional reference filter.
    """
    n = spec.n
    k = n - 1
    pi = pi_coeffs(params.d, n)
    delta = frac_ar_expand(params.d, params.ar_poly(), k)

    def companion(first_row):
        C = np.zeros((k, k))
        C[0, :] = first_row
        if k > 1:
            C[1:, :-1] = np.eye(k - 1)
        return C

    Tx = companion(-pi[1:])
    Tc = companion(-delta[1:])
    Tm = _mu_block(spec)
    md = Tm.shape[0]
    dim = md + 2 * k
    T = np.zeros((dim, dim))
    T[:md, :md] = Tm
    T[md : md + k, md : md + k] = Tx
    T[md + k :, md + k :] = Tc
    R = np.zeros((dim, 2))
    R[md, 0] = 1.0
    R[md + k, 1] = 1.0
    Z = np.zeros(dim)
    Z[0] = 1.0
    Z[md] = 1.0
    Z[md + k] = 1.0
    return StateSpace(
        T=T, R=R, Z=Z, Qshock=params.q_matrix(),
        det=deterministic_terms(params, spec),
        mu_dim=md, x_dim=k, c_dim=k,
    )


@dataclass
class CovCache:
    """theta-specific covariance objects shared by corrections and filter."""

    sigma_y: np.ndarray
    chol: np.ndarray  # lower-triangular factor L, sigma_y = L L'
    innov_var: np.ndarray  # exact one-step prediction-error variances
    sigma_eta_y: np.ndarray  # (i, s): Cov(eta_i, y_s)
    sigma_eps_y: np.ndarray
    wold_trend: np.ndarray  # phi_j(d)
    wold_cycle: np.ndarray  # omega_j, untruncated
    arma_b: np.ndarray | None  # b_j(d) of the fitted ARMA
    omega_trunc: np.ndarray | None  # MA weights of the l-truncated cycle
    n: int


def structural_covariances(
    params: Params,
    spec: ModelSpec,
    coeff_map: CoeffMap | None = None,
    max_n: int = MAX_COV_N,
) -> CovCache:
    """Exact joint covariances of (shocks, observations) under theta.

    With a coefficient map, also caches the truncated-model weights b_j and
    omega~_j needed by the corrections.
    """
    n = spec.n
    if n > max_n:
        raise ValueError(f"n={n} exceeds the configured maximum {max_n}")
    params.validate(check_stability=False)

    phi_w = phi_int_coeffs(params.d, n)
    delta_full = frac_ar_expand(params.d, params.ar_poly(), n - 1) if n > 1 else np.array([1.0])
    omega = invert_ar(delta_full, n)

    zeros = np.zeros(n)
    PHI = toeplitz(phi_w, zeros)
    OMG = toeplitz(omega, zeros)
    se2, see, sx2 = params.sigma_eta2, params.sigma_eta_eps, params.sigma_eps2
    cross = PHI @ OMG.T
    sigma_y = se2 * (PHI @ PHI.T) + sx2 * (OMG @ OMG.T) + see * (cross + cross.T)

    try:
        L = cholesky(sigma_y, lower=True)
    except np.linalg.LinAlgError as exc:
        piv = float(np.min(np.linalg.eigvalsh(sigma_y)))
        raise NumericalFailure(
            f"Sigma_y not positive definite (smallest eigenvalue {piv:.3e})"
        ) from exc

    sigma_eta_y = se2 * PHI.T + see * OMG.T
    sigma_eps_y = see * PHI.T + sx2 * OMG.T

    arma_b = None
    omega_trunc = None
    if coeff_map is not None:
        a, m = coeff_map(params.d)
        arma_b = arma_wold(a, m, n)
        delta_tr = delta_full[: spec.l + 1]
        omega_trunc = invert_ar(delta_tr, n)

    return CovCache(
        sigma_y=sigma_y,
        chol=L,
        innov_var=np.diag(L) ** 2,
        sigma_eta_y=sigma_eta_y,
        sigma_eps_y=sigma_eps_y,
        wold_trend=phi_w,
        wold_cycle=omega,
        arma_b=arma_b,
        omega_trunc=omega_trunc,
        n=n,
    )


@dataclass
class CorrectedPass:
    """Everything the approximation-corrected filter produces in one sweep."""

    eps_x: np.ndarray
    eps_c: np.ndarray
    y_corrected: np.ndarray  # demeaned corrected observations
    v: np.ndarray  # prediction errors (match the exact filter)
    innov_var: np.ndarray
    x_filtered: np.ndarray  # E[x~_t | F_t]
    c_filtered: np.ndarray
    corr_x_filtered: np.ndarray  # E[x_t - x~_t | F_t]
    corr_c_filtered: np.ndarray
    loglik: float


def corrected_pass(cache: CovCache, y_demeaned: np.ndarray) -> CorrectedPass:
    """One sweep of the approximation-corrected truncated filter.

    For each t the conditional shock means E[eta_{1:t}|F_t], E[eps_{1:t}|F_t]
    are obtained from the grown Cholesky blocks (one factorisation for the
    whole sample); corrections, truncated-component predictions and filtered
    components are weighted sums of those means.
    """
    if cache.arma_b is None or cache.omega_trunc is None:
        raise ValueError("covariance cache was built without a coefficient map")
    ystar = np.asarray(y_demeaned, float)
    n = cache.n
    if ystar.shape != (n,):
        raise ValueError(f"series length {ystar.shape} does not match n={n}")

    L = cache.chol
    phi_w, omega = cache.wold_trend, cache.wold_cycle
    b, om_t = cache.arma_b, cache.omega_trunc
    dx = phi_w - b
    dc = omega - om_t

    z = solve_triangular(L, ystar, lower=True, check_finite=False)
    eps_x = np.zeros(n)
    eps_c = np.zeros(n)
    v = np.empty(n)
    xf = np.empty(n)
    cf = np.empty(n)
    cxf = np.empty(n)
    ccf = np.empty(n)
    v[0] = ystar[0]

    xpred = cpred = 0.0
    for h in range(1, n + 1):
        G = solve_triangular(L[:h, :h].T, z[:h], lower=False, check_finite=False)
        e_eta = cache.sigma_eta_y[:h, :h] @ G
        e_eps = cache.sigma_eps_y[:h, :h] @ G
        rev_eta = e_eta[::-1]
        rev_eps = e_eps[::-1]
        # filtered components at time h (history 1..h)
        xf[h - 1] = b[:h] @ rev_eta
        cf[h - 1] = om_t[:h] @ rev_eps
        cxf[h - 1] = dx[:h] @ rev_eta
        ccf[h - 1] = dc[:h] @ rev_eps
        if h < n:
            eps_x[h] = dx[1 : h + 1] @ rev_eta
            eps_c[h] = dc[1 : h + 1] @ rev_eps
            xpred = b[1 : h + 1] @ rev_eta
            cpred = om_t[1 : h + 1] @ rev_eps
            v[h] = ystar[h] - eps_x[h] - eps_c[h] - xpred - cpred

    y_corrected = ystar - eps_x - eps_c
    F = cache.innov_var
    loglik = -0.5 * float(np.sum(np.log(2.0 * np.pi) + np.log(F) + v**2 / F))
    return CorrectedPass(
        eps_x=eps_x, eps_c=eps_c, y_corrected=y_corrected,
        v=v, innov_var=F.copy(),
        x_filtered=xf, c_filtered=cf,
        corr_x_filtered=cxf, corr_c_filtered=ccf,
        loglik=loglik,
    )


def correction_terms(
    cache: CovCache,
    y_demeaned: np.ndarray,
    params: Params | None = None,
    spec: ModelSpec | None = None,
):
    """Approximation-error corrections and the corrected observations.

    eps_x[t] (resp. eps_c[t]) is the conditional mean of the trend (cycle)
    approximation error entering observation t, a function of observations
    strictly before t; the first observation is returned unchanged.
    """
    out = corrected_pass(cache, y_demeaned)
    return out.eps_x, out.eps_c, out.y_corrected

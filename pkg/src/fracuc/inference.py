"""Likelihood evaluation, multi-start ML estimation, model selection, tests.

Two likelihood routes coexist:

* `kalman_filter` runs the standard recursion on the truncated system and
  prices the data under that approximate model. It is cheap and is what the
  search over 100 starting values uses (corrections ignored there).
* `corrected_filter` evaluates the exact likelihood: the corrections make
  the truncated system's prediction errors identical to those of the exact
  high-dimensional filter, and the prediction-error variances come from the
  one Cholesky factorisation of Var(y_1..y_n).
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy import stats
from scipy.optimize import minimize

from ._filters import kf_core
from .arma_map import CoeffMap
from .model import InvalidParams, ModelSpec, Params, deterministic_terms, is_stable
from .ssmodel import (
    CovCache,
    NumericalFailure,
    StateSpace,
    build_state_space,
    corrected_pass,
    structural_covariances,
)

__all__ = [
    "FilterOutput",
    "FitResult",
    "EstimateOptions",
    "kalman_filter",
    "corrected_filter",
    "loglik_at",
    "estimate",
    "select_p",
    "lr_test",
]

LOG2PI = np.log(2.0 * np.pi)


@dataclass
class FilterOutput:
    """Prediction errors, their variances, filtered components, likelihood."""

    v: np.ndarray
    F: np.ndarray
    loglik: float
    trend: np.ndarray  # deterministic path + filtered long-run component
    cycle: np.ndarray
    eps_x: np.ndarray | None = None
    eps_c: np.ndarray | None = None
    y_corrected: np.ndarray | None = None
    corr_x_filtered: np.ndarray | None = None
    corr_c_filtered: np.ndarray | None = None


def _pe_loglik(v, F):
    return -0.5 * float(np.sum(LOG2PI + np.log(F) + v * v / F))


def kalman_filter(ss: StateSpace, y) -> FilterOutput:
    """Standard prediction-error recursion on the truncated system.

    The deterministic block is noiseless, so its path is propagated exactly
    and removed from the observations before the stochastic recursion.
    """
    y = np.asarray(y, float)
    if y.shape != ss.det.shape:
        raise ValueError("series length does not match the system")
    T, R, Z = ss.stochastic_system()
    RQR = R @ ss.Qshock @ R.T
    v, F, xf, cf, fail = kf_core(
        np.ascontiguousarray(T),
        np.ascontiguousarray(RQR),
        np.ascontiguousarray(Z),
        np.ascontiguousarray(y - ss.det),
        0,
        ss.x_dim,
    )
    if fail >= 0:
        raise NumericalFailure(f"prediction-error variance not positive at t={fail + 1}")
    return FilterOutput(
        v=v, F=F, loglik=_pe_loglik(v, F), trend=ss.det + xf, cycle=cf,
    )


def corrected_filter(
    params: Params,
    spec: ModelSpec,
    y,
    coeff_map: CoeffMap,
    cache: CovCache | None = None,
) -> FilterOutput:
    """Approximation-corrected filter: exact likelihood and components."""
    y = np.asarray(y, float)
    det = deterministic_terms(params, spec)
    if cache is None:
        cache = structural_covariances(params, spec, coeff_map)
    out = corrected_pass(cache, y - det)
    return FilterOutput(
        v=out.v,
        F=out.innov_var,
        loglik=out.loglik,
        trend=det + out.x_filtered,
        cycle=out.c_filtered,
        eps_x=out.eps_x,
        eps_c=out.eps_c,
        y_corrected=out.y_corrected + det,
        corr_x_filtered=out.corr_x_filtered,
        corr_c_filtered=out.corr_c_filtered,
    )


def loglik_at(
    params: Params,
    spec: ModelSpec,
    y,
    coeff_map: CoeffMap,
    corrected: bool = True,
) -> float:
    """Log-likelihood at theta; -inf sentinel for inadmissible points."""
    try:
        params.validate()
        if not coeff_map.contains(params.d):
            return -np.inf
        if corrected:
            return corrected_filter(params, spec, y, coeff_map).loglik
        ss = build_state_space(params, spec, coeff_map)
        return kalman_filter(ss, y).loglik
    except (InvalidParams, NumericalFailure, np.linalg.LinAlgError):
        return -np.inf


# ---------------------------------------------------------------------------
# parameter packing: optimisation runs in a transformed space where the
# shock covariance is unconstrained (log variances, atanh correlation)


def _free_names(spec: ModelSpec) -> list[str]:
    names = []
    if spec.d_free:
        names.append("d")
    names += [f"phi{i + 1}" for i in range(spec.p)]
    names += ["log_sigma_eta2", "atanh_rho", "log_sigma_eps2", "mu0", "mu1"]
    if spec.break_index is not None:
        names.append("mu_break")
    return names


def _unpack(zeta: np.ndarray, spec: ModelSpec) -> Params:
    i = 0
    if spec.d_free:
        d = zeta[0]
        i = 1
    else:
        d = spec.d_fixed
    phi = tuple(zeta[i : i + spec.p])
    i += spec.p
    ls_eta, zr, ls_eps = zeta[i], zeta[i + 1], zeta[i + 2]
    mu0, mu1 = zeta[i + 3], zeta[i + 4]
    mu_break = zeta[i + 5] if spec.break_index is not None else None
    s_eta2 = np.exp(ls_eta)
    s_eps2 = np.exp(ls_eps)
    s_ee = np.tanh(zr) * np.sqrt(s_eta2 * s_eps2)
    return Params(
        d=float(d), phi=phi, sigma_eta2=float(s_eta2), sigma_eta_eps=float(s_ee),
        sigma_eps2=float(s_eps2), mu0=float(mu0), mu1=float(mu1),
        mu_break=None if mu_break is None else float(mu_break),
    )


def _pack(params: Params, spec: ModelSpec) -> np.ndarray:
    z = []
    if spec.d_free:
        z.append(params.d)
    z += list(params.phi)
    rho = np.clip(params.rho, -0.9999999, 0.9999999)
    z += [np.log(params.sigma_eta2), np.arctanh(rho), np.log(params.sigma_eps2)]
    z += [params.mu0, params.mu1]
    if spec.break_index is not None:
        z.append(params.mu_break if params.mu_break is not None else 0.0)
    return np.array(z, float)


def _natural_names(spec: ModelSpec) -> list[str]:
    names = ["d"] if spec.d_free else []
    names += [f"phi{i + 1}" for i in range(spec.p)]
    names += ["sigma_eta2", "sigma_eta_eps", "sigma_eps2", "mu0", "mu1"]
    if spec.break_index is not None:
        names.append("mu_break")
    return names


def _natural_jacobian(zeta: np.ndarray, spec: ModelSpec) -> np.ndarray:
    """d(natural)/d(transformed) for the delta-method back-transform."""
    p = _unpack(zeta, spec)
    k = len(zeta)
    i = 1 if spec.d_free else 0
    iv = i + spec.p  # index of log_sigma_eta2
    rows = []

    def unit(j):
        e = np.zeros(k)
        e[j] = 1.0
        return e

    if spec.d_free:
        rows.append(unit(0))
    for j in range(spec.p):
        rows.append(unit(i + j))
    # sigma_eta2 = exp(z1)
    rows.append(p.sigma_eta2 * unit(iv))
    # sigma_eta_eps = tanh(z2) sqrt(exp(z1) exp(z3))
    zr = zeta[iv + 1]
    se = np.sqrt(p.sigma_eta2 * p.sigma_eps2)
    g = np.zeros(k)
    g[iv] = 0.5 * p.sigma_eta_eps
    g[iv + 2] = 0.5 * p.sigma_eta_eps
    g[iv + 1] = (1.0 - np.tanh(zr) ** 2) * se
    rows.append(g)
    rows.append(p.sigma_eps2 * unit(iv + 2))
    rows.append(unit(iv + 3))
    rows.append(unit(iv + 4))
    if spec.break_index is not None:
        rows.append(unit(iv + 5))
    return np.vstack(rows)


@dataclass
class EstimateOptions:
    """Search configuration; defaults follow the estimation protocol."""

    n_starts: int = 100
    seed: int = 0
    coarse_maxiter: int = 2000
    fine_maxiter: int = 5000
    coarse_ftol: float = 1e-4
    fine_ftol: float = 1e-8
    log_var_box: tuple[float, float] = (-6.0, 4.0)
    atanh_rho_box: tuple[float, float] = (-3.0, 3.0)
    hessian_step: float = 1e-4
    compute_std_errors: bool = True
    d_margin: float = 1e-3

    def tolerances(self) -> dict:
        return {
            "coarse_ftol": self.coarse_ftol,
            "fine_ftol": self.fine_ftol,
            "coarse_maxiter": self.coarse_maxiter,
            "fine_maxiter": self.fine_maxiter,
            "hessian_step": self.hessian_step,
        }


@dataclass
class FitResult:
    """ML estimate with inference metadata."""

    params: Params
    loglik: float
    std_errors: dict[str, float]
    converged: bool
    n_starts_used: int
    bic: float
    k_free: int
    seed: int
    tolerances: dict
    hessian_ok: bool
    stage1_loglik: float
    spec: ModelSpec

    def se(self, name: str) -> float:
        return self.std_errors.get(name, float("nan"))


def _draw_starts(spec: ModelSpec, coeff_map: CoeffMap, y, opts: EstimateOptions):
    """Uniform draws over the documented boxes; mu terms start at OLS."""
    rng = np.random.default_rng(opts.seed)
    n = spec.n
    t = np.arange(1, n + 1, dtype=float)
    cols = [np.ones(n), t]
    if spec.break_index is not None:
        cols.append(np.maximum(0.0, t - spec.break_index))
    X = np.column_stack(cols)
    beta, *_ = np.linalg.lstsq(X, np.asarray(y, float), rcond=None)

    lo, hi = coeff_map.domain
    lo += opts.d_margin
    hi -= opts.d_margin
    starts = []
    for _ in range(opts.n_starts):
        z = []
        d = rng.uniform(lo, hi) if spec.d_free else spec.d_fixed
        if spec.d_free:
            z.append(d)
        for _ in range(200):
            phi = rng.uniform(-2.0, 2.0, size=spec.p)
            if spec.p == 0 or is_stable(phi, d):
                break
        else:
            phi = np.zeros(spec.p)
        z += list(phi)
        z += [rng.uniform(*opts.log_var_box), rng.uniform(*opts.atanh_rho_box),
              rng.uniform(*opts.log_var_box)]
        z += list(beta[:2])
        if spec.break_index is not None:
            z.append(beta[2] if len(beta) > 2 else 0.0)
        starts.append(np.array(z, float))
    return starts


def estimate(
    spec: ModelSpec,
    y,
    coeff_map: CoeffMap,
    opts: EstimateOptions | None = None,
) -> FitResult:
    """Two-stage maximum likelihood.

    Stage 1 draws `n_starts` starting points and runs a coarse Nelder-Mead
    on the truncated model's own likelihood (corrections ignored, which has
    negligible impact on the search but is much cheaper). Stage 2 refines
    the best point under the exact corrected likelihood and takes standard
    errors from a central-difference Hessian in the transformed coordinates.
    """
    opts = opts or EstimateOptions()
    y = np.asarray(y, float)
    if y.shape != (spec.n,):
        raise ValueError(f"series length {y.shape} does not match spec.n={spec.n}")

    def neg_approx(z):
        return -loglik_at(_unpack(z, spec), spec, y, coeff_map, corrected=False)

    def neg_exact(z):
        return -loglik_at(_unpack(z, spec), spec, y, coeff_map, corrected=True)

    starts = _draw_starts(spec, coeff_map, y, opts)
    best_z, best_f = None, np.inf
    n_used = 0
    for z0 in starts:
        n_used += 1
        if not np.isfinite(neg_approx(z0)):
            continue
        res = minimize(
            neg_approx, z0, method="Nelder-Mead",
            options={"maxiter": opts.coarse_maxiter, "fatol": opts.coarse_ftol,
                     "xatol": 1e-4, "adaptive": True},
        )
        if res.fun < best_f:
            best_f, best_z = res.fun, res.x
    if best_z is None:
        raise NumericalFailure(
            f"all {n_used} starting values were inadmissible or failed"
        )

    fine = minimize(
        neg_exact, best_z, method="Nelder-Mead",
        options={"maxiter": opts.fine_maxiter, "fatol": opts.fine_ftol,
                 "xatol": 1e-6, "adaptive": True},
    )
    zhat = fine.x if fine.fun <= neg_exact(best_z) else best_z
    loglik = -neg_exact(zhat)
    params = _unpack(zhat, spec)

    std_errors = {nm: float("nan") for nm in _natural_names(spec)}
    hessian_ok = False
    if opts.compute_std_errors:
        H = _hessian(lambda z: -neg_exact(z), zhat, opts.hessian_step)
        try:
            cov_z = np.linalg.inv(-H)
            if np.any(np.diag(cov_z) <= 0):
                raise np.linalg.LinAlgError("negative variance")
            J = _natural_jacobian(zhat, spec)
            cov_nat = J @ cov_z @ J.T
            ses = np.sqrt(np.diag(cov_nat))
            std_errors = dict(zip(_natural_names(spec), ses.tolist()))
            hessian_ok = True
        except np.linalg.LinAlgError:
            hessian_ok = False  # reported as-is, never pseudo-inverted

    k = len(zhat)
    bic = k * np.log(spec.n) - 2.0 * loglik
    return FitResult(
        params=params,
        loglik=loglik,
        std_errors=std_errors,
        converged=bool(fine.success or fine.fun < best_f),
        n_starts_used=n_used,
        bic=float(bic),
        k_free=k,
        seed=opts.seed,
        tolerances=opts.tolerances(),
        hessian_ok=hessian_ok,
        stage1_loglik=float(-best_f),
        spec=spec,
    )


def _hessian(f, x, h):
    k = len(x)
    H = np.empty((k, k))
    f0 = f(x)
    for i in range(k):
        ei = np.zeros(k)
        ei[i] = h
        H[i, i] = (f(x + ei) - 2.0 * f0 + f(x - ei)) / h**2
        for j in range(i + 1, k):
            ej = np.zeros(k)
            ej[j] = h
            H[i, j] = H[j, i] = (
                f(x + ei + ej) - f(x + ei - ej) - f(x - ei + ej) + f(x - ei - ej)
            ) / (4.0 * h**2)
    return H


def select_p(
    y,
    spec: ModelSpec,
    p_max: int,
    coeff_map: CoeffMap,
    opts: EstimateOptions | None = None,
):
    """Fit p = 0..p_max and return (p, FitResult) minimising the BIC.

    Ties go to the smaller order; individual fit failures are tolerated as
    long as at least one order succeeds.
    """
    if p_max < 0:
        raise ValueError("p_max must be >= 0")
    results = {}
    failures = {}
    for p in range(p_max + 1):
        sp = replace(spec, p=p, l=max(spec.l, max(p, 1)))
        try:
            results[p] = estimate(sp, y, coeff_map, opts)
        except (NumericalFailure, InvalidParams) as exc:
            failures[p] = exc
    if not results:
        raise NumericalFailure(f"all cycle orders failed: {failures}")
    best_p = min(results, key=lambda p: (round(results[p].bic, 12), p))
    return best_p, results[best_p]


def lr_test(loglik_restricted: float, loglik_unrestricted: float, df: int) -> float:
    """Likelihood-ratio p-value against the chi-squared reference."""
    if df < 1:
        raise ValueError("df must be >= 1")
    stat = 2.0 * (loglik_unrestricted - loglik_restricted)
    if stat < -1e-8:
        raise ValueError(
            f"unrestricted log-likelihood below restricted (stat={stat:.3e})"
        )
    return float(stats.chi2.sf(max(stat, 0.0), df))

"""Reduced-form machinery: moving-average aggregation in the fractional lag
operator, closed-form autocovariances, variance identification, the
fractional Beveridge-Nelson decomposition, and the log-periodogram memory
diagnostic.

Sign convention: the aggregation determines c_l only up to sign (the
matching condition pins c_l^2); the positive root is taken throughout.
Under that convention the MA(1)-in-L_d structure of the p = 1 reduced form
is reproduced exactly for d in (0, 1), where the L_d weights keep one sign.

Precision: the psi recursion divides by varsigma_{l,l}(d) = d^l, which is
tiny for d < 1 at moderate lags, so the recursion runs in extended
precision (mpmath) and is rounded on return.
"""
from __future__ import annotations

from dataclasses import dataclass

import mpmath as mp
import numpy as np

from .fracops import frac_ar_expand, invert_ar, phi_int_coeffs, pi_coeffs, varsigma_coeffs
from .model import InvalidParams, ModelSpec, Params

__all__ = [
    "ReducedForm",
    "IdentificationError",
    "aggregate_ma",
    "reduced_psi",
    "autocov_reduced",
    "identify_sigmas",
    "bn_decompose",
    "gph_estimate",
]


class IdentificationError(RuntimeError):
    """Variance identification is numerically degenerate (d near 1, small p)."""


@dataclass(frozen=True)
class ReducedForm:
    """Aggregated univariate form: z_t = psi_+(L_d) u_t = c(L) u_t."""

    d: float
    psi: np.ndarray  # MA weights in the fractional lag operator, psi_0 = 1
    c_std: np.ndarray  # MA weights in the standard lag operator, c_0 = 1
    sigma_u2: float


def _mp_pi_coeffs(d: mp.mpf, n: int):
    out = [mp.mpf(1)] * n
    for j in range(1, n):
        out[j] = out[j - 1] * (j - d - 1) / j
    return out


def _mp_varsigma_table(d: mp.mpf, n: int):
    """rows[k][i] = varsigma_{k,i}(d), k = 1..n-1, i = 0..n-1."""
    pi = _mp_pi_coeffs(d, n)
    base = [mp.mpf(0)] + [-x for x in pi[1:]]
    rows = [None, base]
    for k in range(2, n):
        prev = rows[-1]
        row = [mp.mpf(0)] * n
        for i in range(k, n):
            acc = mp.mpf(0)
            # convolution of prev (zero below k-1) with base (zero below 1)
            for j in range(k - 1, i):
                if prev[j] != 0:
                    acc += prev[j] * base[i - j]
            row[i] = acc
        rows.append(row)
    return rows


def aggregate_ma(h, h_tilde, Q, d: float, n: int) -> ReducedForm:
    """Aggregate h(L_d) eta_t + h~(L_d) eps_t into a single MA process.

    Computes the standard-lag weights g, g~ via the varsigma sums, the
    aggregated standard-lag coefficients c_l (positive root), and the
    fractional-lag coefficients psi_l by the triangular recursion
    psi_l = (c_l - sum_{k<l} varsigma_{k,l} psi_k) / varsigma_{l,l}.
    """
    h = np.asarray(h, float)
    ht = np.asarray(h_tilde, float)
    if h[0] != 1.0 or ht[0] != 1.0:
        raise ValueError("lag polynomials must be normalised with h_0 = 1")
    if d <= 0:
        raise ValueError("aggregation requires d > 0")
    Q = np.asarray(Q, float)
    s_eta2, s_ee, s_eps2 = Q[0, 0], Q[0, 1], Q[1, 1]
    sigma_u2 = s_eta2 + s_eps2 + 2.0 * s_ee
    if sigma_u2 <= 0:
        raise InvalidParams("sigma_u^2 = 0: perfectly cancelling shocks")

    # working precision: the recursion loses ~ l*log10(1/d) digits for d < 1
    extra = int(np.ceil(n * max(0.0, -np.log10(min(d, 1.0)))))
    with mp.workdps(30 + extra):
        dm = mp.mpf(repr(float(d)))
        vs = _mp_varsigma_table(dm, n)
        hm = [mp.mpf(repr(float(x))) for x in h]
        htm = [mp.mpf(repr(float(x))) for x in ht]
        se, sx, sc = (mp.mpf(repr(float(s_eta2))), mp.mpf(repr(float(s_eps2))),
                      mp.mpf(repr(float(s_ee))))
        su2 = se + sx + 2 * sc

        g = [mp.mpf(1)] + [mp.mpf(0)] * (n - 1)
        gt = [mp.mpf(1)] + [mp.mpf(0)] * (n - 1)
        for l in range(1, n):
            acc = mp.mpf(0)
            acct = mp.mpf(0)
            for k in range(1, min(l, len(hm) - 1) + 1):
                acc += vs[k][l] * hm[k]
            for k in range(1, min(l, len(htm) - 1) + 1):
                acct += vs[k][l] * htm[k]
            g[l] = acc
            gt[l] = acct

        c = [mp.mpf(1)] + [mp.mpf(0)] * (n - 1)
        for l in range(1, n):
            val = g[l] ** 2 * se + gt[l] ** 2 * sx + 2 * g[l] * gt[l] * sc
            c[l] = mp.sqrt(val / su2) if val > 0 else mp.mpf(0)

        psi = [mp.mpf(1)] + [mp.mpf(0)] * (n - 1)
        for l in range(1, n):
            acc = mp.mpf(0)
            for k in range(1, l):
                acc += vs[k][l] * psi[k]
            denom = vs[l][l]
            if denom == 0:
                raise ZeroDivisionError(f"varsigma_{{{l},{l}}}(d) = 0")
            psi[l] = (c[l] - acc) / denom

        psi_f = np.array([float(x) for x in psi])
        c_f = np.array([float(x) for x in c])
    return ReducedForm(d=float(d), psi=psi_f, c_std=c_f, sigma_u2=float(sigma_u2))


def reduced_psi(params: Params, spec: ModelSpec, n: int | None = None) -> ReducedForm:
    """Reduced form of the structural model: phi(L_d) eta + (1 - L_d) eps."""
    params.validate(check_stability=False)
    n = spec.n if n is None else n
    h = np.r_[1.0, -np.asarray(params.phi, float)]
    h_tilde = np.array([1.0, -1.0])
    return aggregate_ma(h, h_tilde, params.q_matrix(), params.d, n)


def _ma_weights(params: Params, n: int):
    """Standard-lag weights of phi(L_d) Delta^d_+(y - det) on (eta, eps)."""
    g = frac_ar_expand(params.d, params.ar_poly(), n - 1)
    gt = pi_coeffs(params.d, n)
    return g, gt


def _gamma_from_weights(g, gt, q, J):
    n = len(g)
    s_eta2, s_ee, s_eps2 = q[0, 0], q[0, 1], q[1, 1]
    out = np.empty(J + 1)
    for j in range(J + 1):
        out[j] = (
            s_eta2 * (g[j:] @ g[: n - j])
            + s_eps2 * (gt[j:] @ gt[: n - j])
            + s_ee * ((g[j:] @ gt[: n - j]) + (gt[j:] @ g[: n - j]))
        )
    return out


def autocov_reduced(params: Params, J: int, n: int, route: str = "auto") -> np.ndarray:
    """Autocovariances gamma_0..gamma_J of the reduced-form series.

    route="closed" uses the displayed p <= 2 algebra in pi(d) and pi(2d);
    route="conv" builds the weights from the fractional-lag expansion for
    any p. They agree to working precision where both apply.
    """
    p = params.p
    if route == "auto":
        route = "closed" if p <= 2 else "conv"
    if route == "closed":
        if p > 2:
            raise ValueError("closed-form autocovariances displayed only for p <= 2")
        phi1 = params.phi[0] if p >= 1 else 0.0
        phi2 = params.phi[1] if p >= 2 else 0.0
        pid = pi_coeffs(params.d, n)
        pi2d = pi_coeffs(2.0 * params.d, n)
        g = (phi1 + 2.0 * phi2) * pid - phi2 * pi2d
        g[0] = 1.0
        gt = pid
    elif route == "conv":
        g, gt = _ma_weights(params, n)
    else:
        raise ValueError(f"unknown route {route!r}")
    return _gamma_from_weights(np.asarray(g), np.asarray(gt), params.q_matrix(), J)


def identify_sigmas(gamma, d: float, phi, n: int, cond_max: float = 1e10):
    """Recover (sigma_eta2, sigma_eta_eps, sigma_eps2) from gamma_0..gamma_2.

    The autocovariances are linear in the three variance parameters, so this
    solves a 3x3 system. At d = 1 with p <= 1 the system is singular (the
    non-identified case) and an IdentificationError is raised.
    """
    gamma = np.asarray(gamma, float)
    if gamma.size < 3:
        raise ValueError("need gamma_0..gamma_2")
    poly = np.r_[1.0, np.asarray(phi, float)]
    g = frac_ar_expand(d, poly, n - 1)
    gt = pi_coeffs(d, n)
    cols = []
    for q in (np.array([[1.0, 0.0], [0.0, 0.0]]),
              np.array([[0.0, 1.0], [1.0, 0.0]]),
              np.array([[0.0, 0.0], [0.0, 1.0]])):
        cols.append(_gamma_from_weights(g, gt, q, 2))
    A = np.column_stack(cols)
    cond = np.linalg.cond(A)
    if not np.isfinite(cond) or cond > cond_max:
        raise IdentificationError(
            f"variance system condition number {cond:.3e}: "
            "not identified (d close to 1 with p < 2)"
        )
    sol = np.linalg.solve(A, gamma[:3])
    return float(sol[0]), float(sol[1]), float(sol[2])


def _theta_eps(params: Params, n: int) -> np.ndarray:
    """(1 - L_d)[phi(L_d)^{-1}]_+ as coefficients in powers of L_d."""
    xi = np.zeros(n)
    xi[0] = 1.0
    p = params.p
    for i in range(1, n):
        hi = min(i, p)
        if hi > 0:
            xi[i] = np.asarray(params.phi[:hi]) @ xi[i - hi : i][::-1]
    th = xi.copy()
    th[1:] -= xi[:-1]
    return th


def bn_decompose(u, params: Params):
    """Beveridge-Nelson split of the reduced form driven by the shocks u.

    trend_t integrates theta_u(1) u_t fractionally; the cycle collects the
    discounted tail sums in powers of the fractional lag operator. The two
    always add back to the integrated series; with perfectly correlated
    structural shocks they coincide with the structural components.
    """
    u = np.asarray(u, float)
    n = u.size
    if n == 0:
        raise ValueError("u must be non-empty")
    if params.d < 0 or not np.isfinite(params.d):
        raise InvalidParams("d must be non-negative")  # d = 0 edge allowed here
    s_u = np.sqrt(params.sigma_eta2 + params.sigma_eps2 + 2 * params.sigma_eta_eps)
    if s_u <= 0:
        raise InvalidParams("sigma_u = 0")
    th = _theta_eps(params, n)
    theta_u = th * (np.sqrt(params.sigma_eps2) / s_u)
    theta_u[0] = 1.0
    theta_u_one = float(np.sum(theta_u))

    if params.d > 0:
        pi_d = pi_coeffs(params.d, n)
        trend = np.convolve(phi_int_coeffs(params.d, n), theta_u_one * u)[:n]
    else:
        trend = theta_u_one * u.copy()

    tails = np.cumsum(theta_u[::-1])[::-1]
    tails = np.r_[tails[1:], 0.0]  # tails[k] = sum_{j>k} theta_u_j
    s = np.zeros(n)
    w = u.copy()
    for k in range(n - 1):
        if tails[k] != 0.0:
            s += tails[k] * w
        if params.d > 0:
            w = w - np.convolve(pi_d, w)[:n]  # apply L_d = 1 - (1-L)^d_+
        else:
            break
    cycle = -s
    return trend, cycle


def gph_estimate(y, alpha: float = 0.65, taper: str = "hann"):
    """Log-periodogram (GPH) estimate of the integration order.

    The regression runs on the first floor(n^alpha) Fourier frequencies of
    the first-differenced series and the estimate is shifted back by one.
    Differencing puts trending series in the invertibility region but makes
    the very lowest periodogram ordinates leak when the differenced memory
    falls below -1/2; the cosine-bell taper (default) suppresses that
    leakage. Returns (d_hat, regression standard error).
    """
    y = np.asarray(y, float)
    if y.size < 32:
        raise ValueError("need at least 32 observations")
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must be in (0, 1)")
    x = np.diff(y)
    n = x.size
    m = int(np.floor(n**alpha))
    if m < 4:
        raise ValueError("bandwidth too small")
    x = x - x.mean()
    if taper == "hann":
        hwin = 0.5 * (1.0 - np.cos(2.0 * np.pi * (np.arange(n) + 0.5) / n))
        xw = x * hwin
        scale = float(np.sum(hwin**2))
    elif taper == "none":
        xw = x
        scale = float(n)
    else:
        raise ValueError(f"unknown taper {taper!r}")
    J = np.fft.rfft(xw)
    lam = 2.0 * np.pi * np.arange(1, m + 1) / n
    I = np.abs(J[1 : m + 1]) ** 2 / (2.0 * np.pi * scale)
    X = np.log(4.0 * np.sin(lam / 2.0) ** 2)
    Y = np.log(I)
    Xc = X - X.mean()
    sxx = float(Xc @ Xc)
    slope = float(Xc @ (Y - Y.mean())) / sxx
    resid = (Y - Y.mean()) - slope * Xc
    dof = max(m - 2, 1)
    se = float(np.sqrt((resid @ resid) / dof / sxx))
    return -slope + 1.0, se

"""ARMA(v,w) approximations to the fractional integration filter.

The long-memory Wold weights phi_j(d) of (1-L)^{-d}_+ are matched over a
fixed horizon n by the impulse response b_j of m(L)/a(L), minimising the
mean squared coefficient error. A CoeffMap fits every knot of a d-grid and
splines each coefficient so the likelihood optimiser sees a smooth map
d -> (a, m).

Fitting strategy: the objective has many poor local minima under naive
derivative-free search, so each fit combines (i) a Shanks/Prony linear
least-squares start, (ii) continuation from the nearest integer order
(where the representation is exact), and (iii) a deterministic set of
log-spaced AR root patterns, each polished by Levenberg-Marquardt with the
analytic Jacobian of the impulse response.
"""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from scipy.interpolate import CubicSpline
from scipy.optimize import least_squares
from scipy.signal import lfilter

from .fracops import phi_int_coeffs

__all__ = [
    "ArmaApprox",
    "CoeffMap",
    "FitFailure",
    "arma_wold",
    "fit_arma_approx",
    "build_coeff_map",
    "default_grid",
]


class FitFailure(RuntimeError):
    """ARMA fit did not converge; carries the best iterate found."""

    def __init__(self, message: str, best: "ArmaApprox | None" = None):
        super().__init__(message)
        self.best = best


def arma_wold(a, m, n: int) -> np.ndarray:
    """Impulse response b_0..b_{n-1} of [a(L)^{-1} m(L)]_+ with b_0 = 1.

    Conventions: a(L) = 1 - a_1 L - ... - a_v L^v, m(L) = 1 + m_1 L + ...
    + m_w L^w, so b_j = sum_i a_i b_{j-i} + m_j.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    a = np.atleast_1d(np.asarray(a, dtype=float)) if np.size(a) else np.zeros(0)
    m = np.atleast_1d(np.asarray(m, dtype=float)) if np.size(m) else np.zeros(0)
    imp = np.zeros(n)
    imp[0] = 1.0
    return lfilter(np.r_[1.0, m], np.r_[1.0, -a], imp)


def _fit_residual_jac(v: int, w: int, n: int, target: np.ndarray):
    imp = np.zeros(n)
    imp[0] = 1.0

    def resid(x):
        return arma_wold(x[:v], x[v:], n) - target

    def jac(x):
        a, m = x[:v], x[v:]
        k = lfilter([1.0], np.r_[1.0, -a], imp)  # 1/a(L)
        b = lfilter(np.r_[1.0, m], np.r_[1.0, -a], imp)  # m(L)/a(L)
        g = np.convolve(b, k)[:n]  # d b / d a_i shifts of m/a^2
        J = np.zeros((n, v + w))
        for i in range(1, v + 1):
            J[i:, i - 1] = g[: n - i]
        for i in range(1, w + 1):
            J[i:, v + i - 1] = k[: n - i]
        return J

    return resid, jac


def _polish(x0, v, w, n, target, max_nfev=2000):
    resid, jac = _fit_residual_jac(v, w, n, target)
    try:
        ls = least_squares(
            resid, np.asarray(x0, float), jac=jac, method="lm",
            xtol=1e-15, ftol=1e-15, gtol=1e-15, max_nfev=max_nfev,
        )
    except (ValueError, np.linalg.LinAlgError):
        return np.inf, np.asarray(x0, float)
    if not np.all(np.isfinite(ls.x)):
        return np.inf, np.asarray(x0, float)
    return float(2.0 * ls.cost) / n, ls.x


def _shanks_start(target, v, w, n):
    rows = np.empty((n - w - 1, v))
    for i in range(1, v + 1):
        rows[:, i - 1] = target[w + 1 - i : n - i]
    a, *_ = np.linalg.lstsq(rows, target[w + 1 : n], rcond=None)
    k = arma_wold(a, (), n)
    K = np.zeros((n, w))
    for i in range(1, w + 1):
        K[i:, i - 1] = k[: n - i]
    m, *_ = np.linalg.lstsq(K, target - k, rcond=None)
    return np.r_[a, m]


def _canonical_integer(d_int: int, v: int, w: int):
    """Exact ARMA representation of (1-L)^{-d_int}: a(L) = (1-L)^{d_int}."""
    if d_int < 1 or d_int > v:
        return None
    from math import comb

    binom = np.array([comb(d_int, j) * (-1.0) ** j for j in range(d_int + 1)])
    apoly = np.zeros(v)
    apoly[:d_int] = -binom[1:]
    return np.r_[apoly, np.zeros(w)]


_ROOT_PATTERNS = [
    (0.999, 0.99, 0.9, 0.5),
    (0.9995, 0.995, 0.95, 0.7),
    (0.998, 0.98, 0.85, 0.3),
    (0.9999, 0.999, 0.99, 0.9),
    (0.99, 0.9, 0.6, 0.2),
    (1.0, 0.995, 0.95, 0.75),
    (1.0, 0.99, 0.9, 0.5),
    (1.0, 1.0, 0.99, 0.9),
]


def _root_starts(v, w, target, n):
    starts = []
    for pat in _ROOT_PATTERNS:
        r = np.array(pat[:v]) if v <= 4 else np.r_[pat, [0.1] * (v - 4)]
        a = -np.poly(r)[1:]
        k = arma_wold(a, (), n)
        K = np.zeros((n, w))
        for i in range(1, w + 1):
            K[i:, i - 1] = k[: n - i]
        m, *_ = np.linalg.lstsq(K, target - k, rcond=None)
        starts.append(np.r_[a, m])
    return starts


@dataclass(frozen=True)
class ArmaApprox:
    """Fitted ARMA(v,w) approximation at one integration order."""

    d: float
    a: np.ndarray
    m: np.ndarray
    fit_mse: float
    n: int

    def wold(self, n: int | None = None) -> np.ndarray:
        return arma_wold(self.a, self.m, self.n if n is None else n)


def fit_arma_approx(
    d: float,
    v: int,
    w: int,
    n: int,
    warm=None,
    mse_cap: float | None = None,
) -> ArmaApprox:
    """Fit m(L)/a(L) to phi_j(d) over j < n by mean squared error.

    `warm` seeds the search (e.g. the neighbouring grid knot). A fit whose
    mse exceeds `mse_cap` (when given) raises FitFailure carrying the best
    iterate.
    """
    if v < 1 or w < 1:
        raise ValueError("v, w must be >= 1")
    if n < v + w + 1:
        raise ValueError("fit horizon too short for the parameter count")
    if not np.isfinite(d) or d < 0:
        raise ValueError("d must be finite and non-negative")
    target = phi_int_coeffs(d, n)

    starts = []
    if warm is not None:
        starts.append(np.asarray(warm, float))
    starts.append(_shanks_start(target, v, w, n))
    # continuation from the nearest exactly-representable integer order
    nearest = int(np.clip(round(d), 1, v))
    x = _canonical_integer(nearest, v, w)
    if x is not None:
        step = 0.05 if d >= nearest else -0.05
        path = np.arange(nearest + step, d, step) if abs(d - nearest) > 1e-12 else []
        for dd in path:
            _, x = _polish(x, v, w, n, phi_int_coeffs(dd, n), max_nfev=400)
        starts.append(x)
    starts.extend(_root_starts(v, w, target, n))

    best_mse, best_x = np.inf, None
    for s in starts:
        mse, xs = _polish(s, v, w, n, target)
        if mse < best_mse:
            best_mse, best_x = mse, xs
    if best_x is None or not np.isfinite(best_mse):
        raise FitFailure(f"ARMA({v},{w}) fit failed at d={d}", None)
    approx = ArmaApprox(d=float(d), a=best_x[:v].copy(), m=best_x[v:].copy(),
                        fit_mse=best_mse, n=n)
    if mse_cap is not None and best_mse > mse_cap:
        raise FitFailure(
            f"ARMA({v},{w}) fit at d={d} stalled at mse={best_mse:.3e} > {mse_cap:.1e}",
            approx,
        )
    return approx


def default_grid(lo: float = 0.50, hi: float = 2.50, step: float = 0.05) -> np.ndarray:
    return np.round(np.arange(lo, hi + step / 2, step), 10)


@dataclass
class CoeffMap:
    """Spline map d -> ARMA coefficients over a fitted grid.

    Natural cubic splines per coefficient; queries outside the grid range
    raise (no silent extrapolation).
    """

    d_grid: np.ndarray
    coefs: np.ndarray  # shape (n_knots, v + w)
    fit_mse: np.ndarray
    v: int
    w: int
    n: int

    def __post_init__(self):
        self.d_grid = np.asarray(self.d_grid, float)
        self.coefs = np.asarray(self.coefs, float)
        self.fit_mse = np.asarray(self.fit_mse, float)
        if self.d_grid.size >= 4:
            self._splines = [
                CubicSpline(self.d_grid, self.coefs[:, j], bc_type="natural")
                for j in range(self.coefs.shape[1])
            ]
        else:
            self._splines = None

    @property
    def domain(self) -> tuple[float, float]:
        return float(self.d_grid[0]), float(self.d_grid[-1])

    def contains(self, d: float) -> bool:
        lo, hi = self.domain
        return lo <= d <= hi

    def __call__(self, d: float) -> tuple[np.ndarray, np.ndarray]:
        if not self.contains(d):
            lo, hi = self.domain
            raise ValueError(f"d={d} outside the fitted grid [{lo}, {hi}]")
        if self._splines is None:
            raise ValueError("grid too small for spline evaluation")
        x = np.array([float(s(d)) for s in self._splines])
        return x[: self.v], x[self.v :]

    def wold(self, d: float, n: int | None = None) -> np.ndarray:
        a, m = self(d)
        return arma_wold(a, m, self.n if n is None else n)

    def to_json(self) -> str:
        doc = {
            "format": "fracuc.coeffmap.v1",
            "v": self.v,
            "w": self.w,
            "n": self.n,
            "d_grid": self.d_grid.tolist(),
            "coefs": self.coefs.tolist(),
            "fit_mse": self.fit_mse.tolist(),
        }
        return json.dumps(doc)

    @classmethod
    def from_json(cls, text: str) -> "CoeffMap":
        doc = json.loads(text)
        if doc.get("format") != "fracuc.coeffmap.v1":
            raise ValueError("unrecognised coefficient-map document")
        return cls(
            d_grid=np.array(doc["d_grid"]),
            coefs=np.array(doc["coefs"]),
            fit_mse=np.array(doc["fit_mse"]),
            v=int(doc["v"]),
            w=int(doc["w"]),
            n=int(doc["n"]),
        )


def build_coeff_map(d_grid=None, v: int = 4, w: int = 4, n: int = 232) -> CoeffMap:
    """Fit every grid knot and spline the coefficients across d.

    Knots are fitted by continuation: each integer order inside the grid
    anchors an exact representation and the fits march outward from the
    nearest anchor, warm-starting from the neighbour (plus the standalone
    multistart as a safety net at every knot). A knot whose fit fails
    aborts the build naming the offending d.
    """
    grid = default_grid() if d_grid is None else np.asarray(d_grid, float)
    if grid.size < 4:
        raise ValueError("need at least 4 grid points for splines")
    if np.any(np.diff(grid) <= 0) or grid[0] <= 0:
        raise ValueError("grid must be ascending and positive")

    anchors = [k for k in range(1, v + 1) if grid[0] - 0.5 <= k <= grid[-1] + 0.5]
    if not anchors:
        anchors = [grid[np.argmin(np.abs(grid - 1.0))]]
    nearest_anchor = np.array([anchors[int(np.argmin([abs(g - a) for a in anchors]))]
                               for g in grid])

    coefs = np.zeros((grid.size, v + w))
    mses = np.zeros(grid.size)
    done = np.zeros(grid.size, bool)

    for anchor in anchors:
        mine = np.nonzero(nearest_anchor == anchor)[0]
        if mine.size == 0:
            continue
        below = sorted([i for i in mine if grid[i] <= anchor], key=lambda i: -grid[i])
        above = sorted([i for i in mine if grid[i] > anchor], key=lambda i: grid[i])
        for branch in (below, above):
            warm = _canonical_integer(int(round(anchor)), v, w)
            for i in branch:
                try:
                    fit = fit_arma_approx(grid[i], v, w, n, warm=warm)
                except FitFailure as exc:
                    raise FitFailure(
                        f"coefficient map build failed at grid point d={grid[i]}: {exc}",
                        exc.best,
                    ) from exc
                coefs[i] = np.r_[fit.a, fit.m]
                mses[i] = fit.fit_mse
                warm = coefs[i]
                done[i] = True
    if not np.all(done):
        raise FitFailure(f"grid points not covered: {grid[~done]}")
    return CoeffMap(d_grid=grid, coefs=coefs, fit_mse=mses, v=v, w=w, n=n)

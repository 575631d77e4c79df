"""Model structure and parameter containers shared across the package."""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

__all__ = ["ModelSpec", "Params", "InvalidParams", "is_stable", "deterministic_terms"]


class InvalidParams(ValueError):
    """Parameter point outside the admissible region."""


@dataclass(frozen=True)
class ModelSpec:
    """Structural choices: AR order, d treatment, deterministics, truncations.

    `d_fixed=None` leaves the integration order free; a float pins it (the
    benchmark restricts d=1). `break_index` is the 1-based observation t_b of
    the slope-break regressor max(0, t - t_b).
    """

    n: int
    p: int = 1
    d_fixed: float | None = None
    break_index: int | None = None
    v: int = 4
    w: int = 4
    l: int = 10

    def __post_init__(self):
        if self.p < 0:
            raise ValueError("p must be >= 0")
        if self.v < 1 or self.w < 1:
            raise ValueError("ARMA orders v, w must be >= 1")
        if self.l < max(self.p, 1):
            raise ValueError(f"l={self.l} must be >= max(p, 1)={max(self.p, 1)}")
        if self.n <= self.l:
            raise ValueError(f"sample length n={self.n} must exceed l={self.l}")
        if self.break_index is not None and not (1 <= self.break_index <= self.n):
            raise ValueError("break_index outside the sample")

    @property
    def d_free(self) -> bool:
        return self.d_fixed is None


@dataclass(frozen=True)
class Params:
    """Structural parameter point theta.

    `phi` holds (phi_1, ..., phi_p) of the fractional-lag AR polynomial
    phi(z) = 1 - phi_1 z - ... - phi_p z^p. Shock covariance
    Q = [[sigma_eta2, sigma_eta_eps], [sigma_eta_eps, sigma_eps2]].
    """

    d: float
    phi: tuple[float, ...] = ()
    sigma_eta2: float = 1.0
    sigma_eta_eps: float = 0.0
    sigma_eps2: float = 1.0
    mu0: float = 0.0
    mu1: float = 0.0
    mu_break: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "phi", tuple(float(x) for x in self.phi))

    @property
    def p(self) -> int:
        return len(self.phi)

    def q_matrix(self) -> np.ndarray:
        return np.array(
            [
                [self.sigma_eta2, self.sigma_eta_eps],
                [self.sigma_eta_eps, self.sigma_eps2],
            ]
        )

    @property
    def rho(self) -> float:
        return self.sigma_eta_eps / np.sqrt(self.sigma_eta2 * self.sigma_eps2)

    def ar_poly(self) -> np.ndarray:
        return np.r_[1.0, self.phi]

    def validate(self, *, psd_tol: float = 1e-12, check_stability: bool = True) -> None:
        """Raise InvalidParams outside the admissible region.

        Enforces positive variances, Q positive semidefinite (|rho| = 1 is on
        the admissible boundary) and, for p >= 1, the fractional-lag
        stability condition.
        """
        if not np.isfinite(self.d) or self.d <= 0:
            raise InvalidParams(f"d must be positive and finite, got {self.d}")
        if self.sigma_eta2 <= 0 or self.sigma_eps2 <= 0:
            raise InvalidParams("shock variances must be strictly positive")
        det_q = self.sigma_eta2 * self.sigma_eps2 - self.sigma_eta_eps**2
        if det_q < -psd_tol * self.sigma_eta2 * self.sigma_eps2:
            raise InvalidParams(
                f"shock covariance not PSD (implied rho = {self.rho:.4f})"
            )
        if check_stability and self.p > 0 and not is_stable(self.phi, self.d):
            raise InvalidParams(
                f"phi={self.phi} has a root inside the fractional stability region for d={self.d}"
            )

    def is_valid(self, **kw) -> bool:
        try:
            self.validate(**kw)
        except InvalidParams:
            return False
        return True

    def with_(self, **kw) -> "Params":
        return replace(self, **kw)


def _stability_boundary(d: float, m: int = 720) -> np.ndarray:
    lam = 2.0 * np.pi * (np.arange(m) + 0.5) / m
    z = np.exp(1j * lam)
    return 1.0 - (1.0 - z) ** d


def is_stable(phi, d: float, m: int = 720, atol: float = 1e-9) -> bool:
    """Check that the roots of phi(z) lie outside the image of the unit disk
    under z -> 1 - (1-z)^d.

    The boundary curve is sampled at m points and each root of phi is tested
    by winding number; a root inside the curve, or within atol of it, fails.
    """
    phi = np.atleast_1d(np.asarray(phi, dtype=float))
    if phi.size == 0 or np.all(phi == 0.0):
        return True
    if not np.all(np.isfinite(phi)):
        return False
    # roots of 1 - phi_1 z - ... - phi_p z^p
    coeffs = np.r_[-phi[::-1], 1.0]
    nz = np.nonzero(coeffs)[0]
    coeffs = coeffs[nz[0] :]
    if coeffs.size <= 1:
        return True
    roots = np.roots(coeffs)
    curve = _stability_boundary(d, m)
    for r in roots:
        rel = curve - r
        if np.min(np.abs(rel)) < atol:
            return False
        ang = np.angle(rel)
        winding = np.round(np.sum(np.diff(np.unwrap(ang))) / (2 * np.pi))
        if winding != 0:
            return False
    return True


def deterministic_terms(params: Params, spec: ModelSpec, n: int | None = None) -> np.ndarray:
    """mu0 + mu1*t (+ mu_break*max(0, t - t_b)) for t = 1..n."""
    n = spec.n if n is None else n
    t = np.arange(1, n + 1, dtype=float)
    det = params.mu0 + params.mu1 * t
    if spec.break_index is not None:
        mb = params.mu_break if params.mu_break is not None else 0.0
        det = det + mb * np.maximum(0.0, t - spec.break_index)
    return det

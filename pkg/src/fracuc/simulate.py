"""Exact simulation from the structural model and a Monte Carlo harness."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from joblib import Parallel, delayed

from .arma_map import CoeffMap
from .fracops import frac_ar_expand, phi_int_coeffs
from .inference import EstimateOptions, FitResult, estimate
from .model import InvalidParams, ModelSpec, Params, deterministic_terms

__all__ = ["SimPath", "McResult", "simulate", "monte_carlo", "GENERATOR"]

GENERATOR = "numpy.random.default_rng (PCG64)"


@dataclass
class SimPath:
    """One simulated path with its shocks and generation metadata."""

    y: np.ndarray
    x: np.ndarray
    c: np.ndarray
    eta: np.ndarray
    eps: np.ndarray
    seed: int
    params: Params
    spec: ModelSpec
    generator: str = GENERATOR


def _shock_factor(params: Params) -> np.ndarray:
    """Lower-triangular factor of Q, tolerating the |rho| = 1 boundary."""
    se = np.sqrt(params.sigma_eta2)
    l21 = params.sigma_eta_eps / se
    rem = params.sigma_eps2 - l21**2
    if rem < -1e-10 * params.sigma_eps2:
        raise InvalidParams("shock covariance not PSD")
    return np.array([[se, 0.0], [l21, np.sqrt(max(rem, 0.0))]])


def simulate(params: Params, spec: ModelSpec, n: int | None = None, seed: int = 0) -> SimPath:
    """Draw one exact path: x by fractional integration of eta, c by the
    full-length fractional-lag AR recursion, zero pre-sample values."""
    params.validate(check_stability=False)
    n = spec.n if n is None else n
    rng = np.random.default_rng(seed)
    shocks = _shock_factor(params) @ rng.standard_normal((2, n))
    eta, eps = shocks[0], shocks[1]

    x = np.convolve(phi_int_coeffs(params.d, n), eta)[:n]

    c = np.empty(n)
    if params.p > 0:
        delta = frac_ar_expand(params.d, params.ar_poly(), n - 1) if n > 1 else np.array([1.0])
        for t in range(n):
            hi = min(t, delta.size - 1)
            c[t] = eps[t] - (delta[1 : hi + 1] @ c[t - hi : t][::-1] if hi else 0.0)
    else:
        c[:] = eps

    det = deterministic_terms(params, spec, n)
    return SimPath(y=det + x + c, x=x, c=c, eta=eta, eps=eps,
                   seed=seed, params=params, spec=spec)


@dataclass
class McResult:
    """Per-parameter summary of a Monte Carlo study."""

    names: list[str]
    truth: np.ndarray
    mean: np.ndarray
    bias: np.ndarray
    sd: np.ndarray
    rmse: np.ndarray
    n_ok: int
    n_failed: int
    reps: int
    seed: int | None
    estimates: np.ndarray  # (n_ok, k) individual estimates
    failures: list[str] = field(default_factory=list)

    def as_dict(self) -> dict:
        return {
            "names": self.names,
            "truth": self.truth.tolist(),
            "mean": self.mean.tolist(),
            "bias": self.bias.tolist(),
            "sd": self.sd.tolist(),
            "rmse": self.rmse.tolist(),
            "n_ok": self.n_ok,
            "n_failed": self.n_failed,
            "reps": self.reps,
            "seed": self.seed,
        }


def _param_vector(params: Params, spec: ModelSpec):
    names = ["d"] + [f"phi{i+1}" for i in range(spec.p)] + [
        "sigma_eta2", "sigma_eta_eps", "sigma_eps2", "mu0", "mu1",
    ]
    vals = [params.d, *params.phi, params.sigma_eta2, params.sigma_eta_eps,
            params.sigma_eps2, params.mu0, params.mu1]
    if spec.break_index is not None:
        names.append("mu_break")
        vals.append(params.mu_break if params.mu_break is not None else 0.0)
    return names, np.array(vals, float)


def _one_rep(rep_seed, params, sim_spec, fit_spec, coeff_map, opts):
    path = simulate(params, sim_spec, seed=rep_seed)
    try:
        fit = estimate(fit_spec, path.y, coeff_map, opts)
    except Exception as exc:  # failures recorded, not fatal
        return None, f"rep seed {rep_seed}: {exc}"
    _, vec = _param_vector(fit.params, fit_spec)
    return vec, None


def monte_carlo(
    params: Params,
    spec: ModelSpec,
    coeff_map: CoeffMap,
    reps: int,
    seed: int | None = 0,
    fit_spec: ModelSpec | None = None,
    opts: EstimateOptions | None = None,
    n_jobs: int = 1,
    rep_seeds=None,
) -> McResult:
    """Simulate `reps` paths from `params` and re-estimate each one.

    Sub-seeds are spawned from `seed` via numpy SeedSequence (documented
    splitting rule); `rep_seeds` overrides them. `fit_spec` lets the fitted
    model differ from the generating one (misspecification studies). The
    reduction is ordered by replication index, so results do not depend on
    scheduling.
    """
    if reps < 2:
        raise ValueError("reps must be >= 2")
    if rep_seeds is None:
        ss = np.random.SeedSequence(seed)
        rep_seeds = [int(s.generate_state(1)[0]) for s in ss.spawn(reps)]
    elif len(rep_seeds) != reps:
        raise ValueError("rep_seeds length must equal reps")
    fit_spec = spec if fit_spec is None else fit_spec
    base_opts = opts or EstimateOptions()

    jobs = []
    for i in range(reps):
        rep_opts = EstimateOptions(**{**base_opts.__dict__, "seed": rep_seeds[i]})
        jobs.append(delayed(_one_rep)(rep_seeds[i], params, spec, fit_spec,
                                      coeff_map, rep_opts))
    out = Parallel(n_jobs=n_jobs)(jobs)

    names, truth_full = _param_vector(params, fit_spec)
    if len(params.phi) != fit_spec.p:
        # misspecified fit: truth entries for mismatched phi are NaN
        tr = {nm: np.nan for nm in names}
        base_names, base_vals = _param_vector(params, spec)
        for nm, val in zip(base_names, base_vals):
            if nm in tr:
                tr[nm] = val
        if not fit_spec.d_free:
            tr["d"] = fit_spec.d_fixed
        truth_full = np.array([tr[nm] for nm in names])

    rows = [r for r, _ in out if r is not None]
    failures = [msg for _, msg in out if msg is not None]
    if not rows:
        raise RuntimeError(f"every replication failed; first: {failures[:1]}")
    est = np.vstack(rows)
    mean = est.mean(axis=0)
    bias = mean - truth_full
    sd = est.std(axis=0, ddof=1) if est.shape[0] > 1 else np.zeros(est.shape[1])
    rmse = np.sqrt(np.nanmean((est - truth_full) ** 2, axis=0))
    return McResult(
        names=names, truth=truth_full, mean=mean, bias=bias, sd=sd, rmse=rmse,
        n_ok=est.shape[0], n_failed=len(failures), reps=reps, seed=seed,
        estimates=est, failures=failures,
    )

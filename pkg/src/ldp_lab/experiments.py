"""Monte Carlo probes of the large deviation statements at desk scale."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtr

from .bounds import skeleton_bound
from .coefficients import BrusselatorCoefficients
from .control import Control
from .errors import DomainError, PreconditionError
from .events import AlwaysTrue, EventMonitor
from .integrators import NormAccumulator, Recorder, check_control_bound, integrate, steps_for
from .noise import noise_batch
from .spectral import mr_norm, mr_norm_from_norms


@dataclass(frozen=True)
class EpsilonLadder:
    values: tuple
    samples_per_eps: int = 1000
    seed_base: int = 0

    def __post_init__(self):
        vals = tuple(float(v) for v in self.values)
        if not vals or any(v <= 0 or not math.isfinite(v) for v in vals):
            raise DomainError("ladder values must be positive")
        if any(b >= a for a, b in zip(vals, vals[1:])):
            raise DomainError("ladder values must be strictly decreasing")
        if self.samples_per_eps < 1:
            raise DomainError("samples_per_eps must be positive")
        object.__setattr__(self, "values", vals)

    def seed(self, i):
        return int(self.seed_base) + i


@dataclass
class McEstimate:
    p_hat: float
    stderr: float
    n_hits: int
    n_samples: int
    eps: float
    seed: int
    importance_control: Control | None = None
    hits: np.ndarray | None = None
    weights: np.ndarray | None = None
    n_blowup: int = 0

    def recompute(self):
        """``(p_hat, stderr)`` from the stored indicators and weights."""
        return _estimate(self.hits, self.weights)

    def to_row(self):
        return {"eps": self.eps, "estimate": self.p_hat, "stderr": self.stderr, "n": self.n_samples,
                "hits": self.n_hits, "seed": self.seed, "importance": self.importance_control is not None,
                "blowups": self.n_blowup}


def _estimate(hits, weights):
    n = hits.size
    if weights is None:
        p = hits.mean()
        return float(p), float(math.sqrt(p * (1.0 - p) / n))
    vals = np.where(hits, weights, 0.0)
    p = float(vals.mean())
    se = float(vals.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0
    return min(p, 1.0), se


def girsanov_log_weights(psi_steps, dW, eps, dt):
    """``-eps^{-1/2} sum psi.dW - (2 eps)^{-1} sum dt |psi|^2`` per path."""
    lin = np.einsum("sm,psm->p", psi_steps, dW)
    quad = dt * float(np.sum(psi_steps**2))
    return -lin / math.sqrt(eps) - quad / (2.0 * eps)


def mc_probability(coeffs, x, eps, event, n, seed, importance=None, *, T, cfg, chunk=2500):
    """Plain or importance-sampled estimate of ``P(Y^eps in E)``.

    With ``importance = psi`` the tilted equation is simulated and each path carries
    the likelihood ratio built from the same increments the integrator used.
    """
    if n <= 0:
        raise DomainError("n must be positive")
    if not eps > 0:
        raise DomainError("eps must be positive")
    cfg = cfg.with_(epsilon=float(eps))
    steps = steps_for(T, cfg.dt)
    M = coeffs.noise_modes
    psi = None
    if importance is not None:
        check_control_bound(importance, cfg.control_bound)
        psi = importance.expand(cfg.dt, steps)
    use_weights = psi is not None
    hits, logw, blow = [], [], 0
    for start in range(0, int(n), int(chunk)):
        size = min(int(chunk), int(n) - start)
        dW = noise_batch(cfg.dt, steps, M, seed, size, start)
        mon = EventMonitor(event, coeffs.grid, size)
        u0 = np.broadcast_to(x.coeffs, (size,) + x.grid.shape)
        res = integrate(coeffs, u0, cfg, steps, psi, dW, observers=(mon,))
        blow += int(res.blown_up.sum())
        hits.append(mon.hits())
        if use_weights:
            logw.append(girsanov_log_weights(psi, dW, eps, cfg.dt))
    hits = np.concatenate(hits)
    weights = np.exp(np.concatenate(logw)) if use_weights else None
    if isinstance(event, AlwaysTrue):
        p, se = 1.0, 0.0
    else:
        p, se = _estimate(hits, weights)
    return McEstimate(p, se, int(hits.sum()), int(n), float(eps), int(seed), importance, hits, weights, blow)


def ou_discrete_exceedance_probability(lam, sigma, eps, gamma, T, dt, x0=0.0, lower=None, cells=1500):
    """``P(max_n X_n >= gamma)`` for ``X_{n+1} = (X_n + sigma sqrt(eps) dW_n) / (1 + lam dt)``.

    The density is propagated on a uniform grid below ``gamma`` with cell-integrated
    Gaussian kernels; mass leaving upward is absorbed.
    """
    steps = steps_for(T, dt)
    if x0 >= gamma:
        return 1.0
    sd = sigma * math.sqrt(eps * dt) / (1.0 + lam * dt)
    spread = sigma * math.sqrt(eps / (2.0 * lam)) if lam > 0 else sigma * math.sqrt(eps * T)
    lower = min(x0, -gamma) - 8.0 * spread if lower is None else lower
    edges = np.linspace(lower, gamma, cells + 1)
    centers = 0.5 * (edges[1:] + edges[:-1])
    mean = centers / (1.0 + lam * dt)
    kernel = ndtr((edges[None, 1:] - mean[:, None]) / sd) - ndtr((edges[None, :-1] - mean[:, None]) / sd)
    start = x0 / (1.0 + lam * dt)
    mass = ndtr((edges[1:] - start) / sd) - ndtr((edges[:-1] - start) / sd)
    for _ in range(steps - 1):
        mass = mass @ kernel
    return float(1.0 - mass.sum())


# ---------------------------------------------------------------- decay curve


@dataclass
class DecayTable:
    rows: list
    intercept: float
    slope: float
    rate: float

    def relative_error(self):
        return abs(self.intercept + self.rate) / self.rate if self.rate else math.inf


def ldp_decay_curve(coeffs, x, event, ladder, rate_ref, importance=None, *, T, cfg, chunk=2500):
    """Table of ``(eps, eps log p_hat, -I)`` and the intercept of a linear fit in ``eps``."""
    if not rate_ref.converged:
        raise PreconditionError("the reference rate must be converged")
    rows = []
    for i, eps in enumerate(ladder.values):
        est = mc_probability(coeffs, x, eps, event, ladder.samples_per_eps, ladder.seed(i), importance,
                             T=T, cfg=cfg, chunk=chunk)
        degenerate = est.n_hits == 0 or est.p_hat <= 0.0
        rows.append({"eps": eps, "eps_log_p": (eps * math.log(est.p_hat)) if not degenerate else -math.inf,
                     "minus_rate": -rate_ref.value, "p_hat": est.p_hat, "stderr": est.stderr,
                     "hits": est.n_hits, "n": est.n_samples, "seed": ladder.seed(i), "degenerate": degenerate})
    good = [r for r in rows if not r["degenerate"]]
    if len(good) >= 2:
        slope, intercept = np.polyfit([r["eps"] for r in good], [r["eps_log_p"] for r in good], 1)
    elif len(good) == 1:
        slope, intercept = 0.0, good[0]["eps_log_p"]
    else:
        slope, intercept = math.nan, math.nan
    return DecayTable(rows, float(intercept), float(slope), float(rate_ref.value))


# ---------------------------------------------------------------- convergence in probability


def _reference_path(coeffs, x, cfg, steps, psi_vals):
    rec = Recorder()
    integrate(coeffs, x.coeffs[None], cfg.with_(epsilon=0.0), steps, psi_vals, observers=(rec,))
    return rec.stack()[0]


def _mr_batch(coeffs, x, cfg, steps, psi_vals, n, seed, reference, chunk):
    """MR norms of ``X - reference`` (or of ``X`` when reference is None) for ``n`` paths."""
    out, blow = [], []
    for start in range(0, int(n), int(chunk)):
        size = min(int(chunk), int(n) - start)
        dW = noise_batch(cfg.dt, steps, coeffs.noise_modes, seed, size, start) if cfg.epsilon > 0 else None
        acc = NormAccumulator(coeffs.grid, reference)
        u0 = np.broadcast_to(x.coeffs, (size,) + x.grid.shape)
        res = integrate(coeffs, u0, cfg, steps, psi_vals, dW, observers=(acc,))
        h, v = acc.arrays()
        out.append(mr_norm_from_norms(h, v, cfg.dt))
        blow.append(res.blown_up)
    return np.concatenate(out), np.concatenate(blow)


def convergence_study(coeffs, x, psi, ladder, *, T, cfg, include_zero=False, chunk=200):
    """Median and 90th percentile of ``|X^eps - u^psi|_MR`` per ``eps``."""
    steps = steps_for(T, cfg.dt)
    psi_vals = None if psi is None else psi.expand(cfg.dt, steps)
    if psi is not None:
        check_control_bound(psi, cfg.control_bound)
    ref = _reference_path(coeffs, x, cfg, steps, psi_vals)
    eps_list = ([0.0] if include_zero else []) + list(ladder.values)
    rows = []
    for i, eps in enumerate(eps_list):
        seed = ladder.seed(i - (1 if include_zero else 0)) if eps > 0 else ladder.seed_base
        d, blown = _mr_batch(coeffs, x, cfg.with_(epsilon=eps), steps, psi_vals, ladder.samples_per_eps,
                             seed, ref, chunk)
        ok = d[~blown]
        rows.append({"eps": eps, "median": float(np.median(ok)) if ok.size else math.nan,
                     "p90": float(np.quantile(ok, 0.9)) if ok.size else math.nan,
                     "n": int(ok.size), "blowups": int(blown.sum()), "seed": seed})
    return rows


def strictly_decreasing(values):
    return all(b < a for a, b in zip(values, values[1:]))


def log_log_slope(rows, key="median"):
    pts = [(r["eps"], r[key]) for r in rows if r["eps"] > 0 and r[key] > 0]
    e, m = np.log([p[0] for p in pts]), np.log([p[1] for p in pts])
    return float(np.polyfit(e, m, 1)[0])


# ---------------------------------------------------------------- tightness


def tightness_probe(coeffs, x, psi_family, ladder, gamma_grid, *, T, cfg, level=1e-2, chunk=250):
    """Empirical tails ``P(|X^eps|_MR > gamma)`` for every control and ``eps``.

    Returns the rows and whether the sup over rows of the tail at the largest ``gamma``
    stays below ``level``.
    """
    steps = steps_for(T, cfg.dt)
    gammas = np.sort(np.asarray(gamma_grid, dtype=float))
    rows = []
    for j, psi in enumerate(psi_family):
        if psi is not None:
            check_control_bound(psi, cfg.control_bound)
        psi_vals = None if psi is None else psi.expand(cfg.dt, steps)
        det, _ = _mr_batch(coeffs, x, cfg.with_(epsilon=0.0), steps, psi_vals, 1, 0, None, 1)
        rows.append({"eps": 0.0, "control": j, "tails": (det[0] > gammas).astype(float).tolist(),
                     "n": 1, "mr_det": float(det[0])})
        for i, eps in enumerate(ladder.values):
            mr, blown = _mr_batch(coeffs, x, cfg.with_(epsilon=eps), steps, psi_vals, ladder.samples_per_eps,
                                  ladder.seed(i), None, chunk)
            mr = np.where(blown, np.inf, mr)
            tails = [(float(np.mean(mr > g))) for g in gammas]
            rows.append({"eps": eps, "control": j, "tails": tails, "n": int(mr.size),
                         "blowups": int(blown.sum())})
    worst = max(r["tails"][-1] for r in rows if r["eps"] > 0) if rows else 0.0
    return {"gammas": gammas.tolist(), "rows": rows, "sup_tail": worst, "level": level,
            "passed": bool(worst <= level)}


# ---------------------------------------------------------------- energy audit


@dataclass
class EnergyAudit:
    holds: bool
    mr_norm: float
    log_bound: float
    psi_l2: float
    details: dict = field(default_factory=dict)

    @property
    def bound(self):
        return math.exp(self.log_bound) if self.log_bound < 700 else math.inf

    @property
    def log_margin(self):
        return self.log_bound - (math.log(self.mr_norm) if self.mr_norm > 0 else -math.inf)


def energy_bound(coeffs, x, T, psi_l2):
    """``log`` of the explicit skeleton bound as a function of ``(T, |psi|_L2)``."""
    return skeleton_bound(coeffs, x, T, float(psi_l2) ** 2)


def energy_bound_audit(coeffs, traj, psi):
    """Compare ``|u|_MR`` of a skeleton trajectory with the explicit Gronwall constant."""
    if not isinstance(coeffs, BrusselatorCoefficients):
        raise DomainError("the energy audit applies to Brusselator coefficients")
    prov = traj.provenance
    if prov.get("solver") != "skeleton" or prov.get("coeffs") != coeffs.fingerprint():
        raise DomainError("trajectory was not produced by solve_skeleton on these coefficients")
    cost = 0.0 if psi is None else psi.cost
    if abs(prov.get("control_cost", 0.0) - cost) > 1e-12 * max(1.0, cost):
        raise DomainError("control does not match the trajectory provenance")
    if traj.blown_up:
        raise DomainError("trajectory blew up; the bound concerns solutions on all of [0, T]")
    psi_l2 = 0.0 if psi is None else psi.l2_norm
    mr = mr_norm(traj)
    lb = energy_bound(coeffs, traj[0], traj.horizon, psi_l2)
    holds = mr == 0.0 or math.log(mr) <= lb
    return EnergyAudit(holds, mr, lb, psi_l2, {"T": traj.horizon})

"""Upper bounds on the rate function by optimal control.

``I(z) = 1/2 inf { int |psi|^2 : u^psi = z }`` is approached by minimizing
``cost(psi) + p * (mismatch / scale)^2`` over piecewise-constant controls with
Barzilai-Borwein gradient steps, raising the penalty ``p`` stage by stage. Every
evaluated control that meets the target within ``tol`` is a certificate; the cheapest
one is returned. When none is found the value is the ``+inf`` sentinel.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .coefficients import LinearCoefficients
from .control import Control
from .errors import DomainError, PreconditionError
from .events import Event, EventMonitor
from .integrators import Recorder, SolverConfig, integrate, steps_for
from .spectral import SpectralField, theta_norm_sq

GRAD_MODES = ("finite_difference", "adjoint_linear")


def lq_oracle(lam, sigma, y, T):
    """Minimum of ``1/2 int psi^2`` steering ``u' = -lam u + sigma psi`` from 0 to ``y`` at ``T``."""
    if not (lam > 0 and T > 0):
        raise DomainError("lq_oracle needs lam > 0 and T > 0")
    if sigma == 0:
        raise DomainError("sigma must be nonzero")
    return lam * y * y / (sigma * sigma * -math.expm1(-2.0 * lam * T))


def ou_exceedance_oracle(lam, sigma, gamma, T, points=2001):
    """Cheapest way to reach level ``gamma`` at some time in ``(0, T]`` from 0."""
    times = np.linspace(T / points, T, points)
    vals = [lq_oracle(lam, sigma, gamma, t) for t in times]
    i = int(np.argmin(vals))
    return float(vals[i]), float(times[i])


@dataclass(frozen=True)
class RateQuery:
    T: float
    solver: SolverConfig
    target: SpectralField | None = None
    event: Event | None = None
    tol: float = 1e-3
    control_dt: float | None = None
    penalties: tuple = (1e1, 1e2, 1e3, 1e4, 1e5)
    max_iters: int = 2000
    stage_iters: int = 300
    grad_mode: str = "finite_difference"
    fd_step: float = 1e-6
    gtol: float = 1e-9
    ftol: float = 1e-9

    def __post_init__(self):
        if not self.tol > 0:
            raise DomainError("tol must be positive")
        pen = tuple(float(p) for p in self.penalties)
        if not pen or pen[0] <= 0 or any(b <= a for a, b in zip(pen, pen[1:])):
            raise DomainError("penalty schedule must be positive and strictly increasing")
        object.__setattr__(self, "penalties", pen)
        if self.grad_mode not in GRAD_MODES:
            raise DomainError(f"grad_mode must be one of {GRAD_MODES}")
        if self.max_iters < 0 or self.stage_iters < 1:
            raise DomainError("iteration limits must be positive")
        steps_for(self.T, self.solver.dt)
        if self.control_dt is not None:
            steps_for(self.T, self.control_dt)

    @property
    def control_step(self):
        return self.control_dt if self.control_dt is not None else self.T / 20.0

    def control_steps(self):
        return steps_for(self.T, self.control_step)


@dataclass
class RateResult:
    value: float
    control: Control
    mismatch: float
    converged: bool
    iterations: int
    best_cost: float
    evaluations: int = 0
    stages: list = field(default_factory=list)

    @property
    def is_upper_bound(self):
        return True

    def to_dict(self):
        return {"value": self.value if math.isfinite(self.value) else "inf", "converged": self.converged,
                "mismatch": self.mismatch, "iterations": self.iterations, "best_cost": self.best_cost,
                "evaluations": self.evaluations, "stages": self.stages, "bound": "upper"}


# ---------------------------------------------------------------- problems


class _Problem:
    """Maps flat control vectors to (cost, raw mismatch) and gradients of the penalty."""

    def __init__(self, coeffs, x, query, event):
        self.coeffs = coeffs
        self.x = x
        self.query = query
        self.event = event
        self.cfg = query.solver.with_(epsilon=0.0, eta_mode="none")
        self.steps = steps_for(query.T, self.cfg.dt)
        self.cdt = query.control_step
        self.csteps = query.control_steps()
        self.modes = coeffs.noise_modes
        self.ratio = int(round(self.cdt / self.cfg.dt))
        if abs(self.ratio * self.cfg.dt - self.cdt) > 1e-9 * self.cdt:
            raise DomainError("control step must be a multiple of the solver step")
        self.dim = self.csteps * self.modes
        self.grid = coeffs.grid
        if event is None:
            self.target = query.target.coeffs

    def control(self, vec):
        return Control(self.cdt, vec.reshape(self.csteps, self.modes))

    def expand(self, vecs):
        v = vecs.reshape(vecs.shape[:-1] + (self.csteps, self.modes))
        return np.repeat(v, self.ratio, axis=-2)

    def cost(self, vec):
        return 0.5 * self.cdt * float(np.dot(vec, vec))

    def _mismatch_from(self, final, stat):
        if self.event is None:
            return np.sqrt(theta_norm_sq(final - self.target, self.grid, 0.5))
        return self.event.deficit(stat)

    def run(self, vecs):
        """Raw mismatches for a batch of control vectors ``(P, dim)``."""
        P = vecs.shape[0]
        psi = self.expand(vecs)
        u0 = np.broadcast_to(self.x.coeffs, (P,) + self.grid.shape)
        obs = ()
        mon = None
        if self.event is not None:
            mon = EventMonitor(self.event, self.grid, P)
            obs = (mon,)
        res = integrate(self.coeffs, u0, self.cfg, self.steps, psi if np.any(psi) else None, observers=obs)
        stat = None if mon is None else mon.value
        mism = self._mismatch_from(res.final, stat)
        return np.where(res.blown_up, np.inf, mism)

    def mismatch(self, vec):
        return float(self.run(vec[None])[0])

    def penalty_grad(self, vec, scale):
        """Gradient of ``(mismatch/scale)^2`` by central differences, one batched solve."""
        if self.dim == 0:
            return np.zeros(0)
        h = self.query.fd_step * max(1.0, float(np.max(np.abs(vec))))
        eye = np.eye(self.dim) * h
        m = self.run(np.concatenate([vec + eye, vec - eye]))
        m2 = (m / scale) ** 2
        return (m2[: self.dim] - m2[self.dim:]) / (2.0 * h)


class _LinearProblem(_Problem):
    """Affine skeleton map: responses to unit controls are computed once and superposed."""

    def __init__(self, coeffs, x, query, event):
        if not isinstance(coeffs, LinearCoefficients) or coeffs._bsym is not None:
            raise PreconditionError("adjoint_linear needs linear drift and state-independent noise")
        super().__init__(coeffs, x, query, event)
        need_path = event is not None and event.reduce != "terminal"
        vecs = np.concatenate([np.zeros((1, self.dim)), np.eye(self.dim)])
        P = vecs.shape[0]
        u0 = np.concatenate([self.x.coeffs[None], np.zeros((self.dim,) + self.grid.shape)])
        rec = Recorder() if need_path else None
        res = integrate(self.coeffs, u0, self.cfg, self.steps, self.expand(vecs),
                        observers=(rec,) if rec else ())
        data = rec.stack() if rec else res.final[:, None]
        self.base = data[0]
        self.resp = data[1:].reshape(self.dim, -1)
        self.shape = data.shape[1:]

    def trajectories(self, vecs):
        return self.base + (vecs @ self.resp).reshape((vecs.shape[0],) + self.shape)

    def run(self, vecs):
        data = self.trajectories(vecs)
        if self.event is None:
            return self._mismatch_from(data[:, -1], None)
        return self._mismatch_from(None, self.event.statistic(data, self.grid))

    def penalty_grad(self, vec, scale):
        if self.event is not None:
            return super().penalty_grad(vec, scale)
        r = self.trajectories(vec[None])[0, -1] - self.target
        rf = (self.resp.reshape((self.dim,) + self.shape)[:, -1])
        g = 2.0 * np.sum((np.conj(rf) * r[None]).real * self.grid.volume, axis=(-3, -2, -1))
        return g / scale**2


# ---------------------------------------------------------------- optimizer


def _optimize(problem, query):
    dim = problem.dim
    vec = np.zeros(dim)
    m0 = problem.mismatch(vec)
    if dim and m0 > query.tol and not np.any(problem.penalty_grad(vec, max(m0, 1e-12))):
        # symmetric start (a norm event at the origin): step off the critical point
        vec = 1e-3 * np.random.default_rng(0).standard_normal(dim)
        m0 = problem.mismatch(vec)
    if problem.event is None:
        scale = max(m0, query.tol)
    else:
        scale = max(m0, query.tol, 1e-12)
    evals = 1
    best = (0.0, m0, vec.copy()) if m0 <= query.tol else None
    closest = (m0, 0.0, vec.copy())
    iters = 0
    stages = []

    def record(v, c, m):
        nonlocal best, closest
        if m <= query.tol and (best is None or c < best[0]):
            best = (c, m, v.copy())
        if m < closest[0] or (m == closest[0] and c < closest[1]):
            closest = (m, c, v.copy())

    cur_m = m0
    for p in query.penalties:
        if iters >= query.max_iters or best is not None and best[0] == 0.0:
            break

        def J(c, m, p=p):
            return c + p * (m / scale) ** 2

        f = J(problem.cost(vec), cur_m)
        g = problem.cdt * vec + p * problem.penalty_grad(vec, scale)
        recent = [f]
        alpha = 1.0 / problem.cdt
        for _ in range(query.stage_iters):
            if iters >= query.max_iters:
                break
            gg = float(np.dot(g, g))
            if not math.isfinite(gg) or math.sqrt(gg) <= query.gtol * max(1.0, abs(f)):
                break
            ref = max(recent[-10:])
            accepted = False
            for _bt in range(50):
                trial = vec - alpha * g
                c, m = problem.cost(trial), problem.mismatch(trial)
                evals += 1
                record(trial, c, m)
                ft = J(c, m)
                if ft <= ref - 1e-4 * alpha * gg:
                    accepted = True
                    break
                alpha *= 0.5
            if not accepted:
                break
            iters += 1
            gn = problem.cdt * trial + p * problem.penalty_grad(trial, scale)
            s, y = trial - vec, gn - g
            sy = float(np.dot(s, y))
            alpha = float(np.dot(s, s)) / sy if sy > 0 else 2.0 * alpha
            vec, f, g, cur_m = trial, ft, gn, m
            recent.append(f)
            # stalled: ten steps gained less than the relative floor
            if len(recent) > 10 and recent[-11] - f <= query.ftol * max(1.0, abs(f)):
                break
        stages.append({"penalty": p, "objective": f, "cost": problem.cost(vec), "mismatch": cur_m,
                       "iterations": iters})
    if best is not None:
        c, m, v = best
        return RateResult(c, problem.control(v), m, True, iters, c, evals, stages)
    m, c, v = closest
    return RateResult(math.inf, problem.control(v), m, False, iters, c, evals, stages)


def _problem(coeffs, x, query, event):
    if not isinstance(x, SpectralField) or x.grid != coeffs.grid:
        raise DomainError("initial state must be a SpectralField on the coefficient grid")
    cls = _LinearProblem if query.grad_mode == "adjoint_linear" else _Problem
    return cls(coeffs, x, query, event)


def evaluate_rate(coeffs, x, query):
    """Upper bound on ``I`` for the terminal target (or event) carried by ``query``."""
    if query.event is not None:
        return rate_over_event(coeffs, x, query.event, query)
    if query.target is None or query.target.grid != coeffs.grid:
        raise DomainError("query needs a terminal target on the coefficient grid")
    return _optimize(_problem(coeffs, x, query, None), query)


def rate_over_event(coeffs, x, event, query):
    """Upper bound on ``inf_E I`` for ``E = {statistic >= threshold}``."""
    if not isinstance(event, Event):
        raise DomainError("event must be an Event")
    return _optimize(_problem(coeffs, x, query, event), query)


def replay(coeffs, x, result, query, event=None):
    """Re-run the skeleton with the returned control; returns the raw mismatch."""
    from .integrators import solve_skeleton

    traj = solve_skeleton(coeffs, x, result.control, query.T, query.solver.with_(epsilon=0.0, eta_mode="none"))
    event = event or query.event
    if event is None:
        return float(np.sqrt(theta_norm_sq(traj.final.coeffs - query.target.coeffs, coeffs.grid, 0.5)))
    return float(event.deficit(event.statistic(traj.data, coeffs.grid)))

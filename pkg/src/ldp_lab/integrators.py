"""Semi-implicit time steppers for the skeleton, Ito, tilted and perturbed equations.

One step of size ``dt`` from ``u`` reads

    (1 + dt S) u_new = u + dt D(t, u) + sum_n w_n B_n(t, u) + dt eta A~(t, u),
    w = dt psi_n + sqrt(eps) dW_n,

where ``S`` is the diagonal multiplier ``coeffs.symbol`` and ``D`` the explicit rest of
the drift. Terms that are identically zero (no control, ``eps = 0``, ``eta = 0``) are
skipped rather than multiplied by zero, which is what makes the degenerate cases of
the four solvers agree bit for bit.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, replace

import numpy as np

from .bounds import skeleton_bound
from .coefficients import BrusselatorCoefficients
from .control import Control
from .errors import DomainError, PreconditionError
from .noise import NoisePath, noise_batch
from .spectral import SpectralField, Trajectory, mr_norm, theta_norm_sq

ETA_MODES = ("none", "stratonovich", "custom")


@dataclass(frozen=True)
class SolverConfig:
    dt: float
    scheme: str = "semi_implicit"
    dealias: bool = True
    epsilon: float = 0.0
    eta_mode: str = "none"
    eta: float = 0.0
    blowup_cap: float = 1e6
    control_bound: float | None = None

    def __post_init__(self):
        if not (self.dt > 0 and math.isfinite(self.dt)):
            raise DomainError(f"dt must be positive, got {self.dt!r}")
        if not (self.epsilon >= 0 and math.isfinite(self.epsilon)):
            raise DomainError(f"epsilon must be >= 0, got {self.epsilon!r}")
        if self.scheme != "semi_implicit":
            raise DomainError(f"unknown scheme {self.scheme!r}")
        if self.eta_mode not in ETA_MODES:
            raise DomainError(f"eta_mode must be one of {ETA_MODES}")
        if not math.isfinite(self.eta):
            raise DomainError("eta must be finite")
        if not self.blowup_cap > 0:
            raise DomainError("blowup_cap must be positive")
        if self.control_bound is not None and not self.control_bound > 0:
            raise DomainError("control_bound must be positive")

    def eta_value(self):
        if self.eta_mode == "stratonovich":
            return self.epsilon
        if self.eta_mode == "custom":
            return self.eta
        return 0.0

    def with_(self, **changes):
        return replace(self, **changes)

    def to_dict(self):
        return asdict(self)


def steps_for(T, dt):
    steps = int(round(T / dt))
    if steps < 1 or abs(steps * dt - T) > 1e-9 * max(1.0, T):
        raise DomainError(f"horizon {T} is not a positive multiple of dt={dt}")
    return steps


# ---------------------------------------------------------------- observers


class Recorder:
    """Keeps every ``every``-th state of a batch."""

    def __init__(self, every=1):
        self.every = int(every)
        self.frames = []

    def __call__(self, n, t, u, active):
        if n % self.every == 0:
            self.frames.append(u.copy())

    def stack(self):
        return np.stack(self.frames, axis=1)


class NormAccumulator:
    """Per-step squared H and V norms of ``u - reference[n]`` (reference may be None)."""

    def __init__(self, grid, reference=None):
        self.grid = grid
        self.reference = reference
        self.h_sq = []
        self.v_sq = []

    def __call__(self, n, t, u, active):
        d = u if self.reference is None else u - self.reference[n]
        self.h_sq.append(theta_norm_sq(d, self.grid, 0.5))
        self.v_sq.append(theta_norm_sq(d, self.grid, 1.0))

    def arrays(self):
        return np.array(self.h_sq), np.array(self.v_sq)


# ---------------------------------------------------------------- core


@dataclass
class BatchResult:
    final: np.ndarray
    blowup_step: np.ndarray  # -1 where the path stayed below the cap

    @property
    def blown_up(self):
        return self.blowup_step >= 0


def integrate(coeffs, u0, cfg, steps, psi=None, dW=None, eta=0.0, tilde_A=None, observers=()):
    """Advance a batch ``u0`` of shape ``(P, C, N, N)`` by ``steps`` steps.

    ``psi`` is ``(steps, M)`` or ``(P, steps, M)``; ``dW`` is ``(P, steps, M)``. A path whose
    H-norm exceeds ``cfg.blowup_cap`` (or turns non-finite) is frozen at its last
    admissible state and its step index recorded.
    """
    coeffs = coeffs.with_dealias(cfg.dealias)
    grid = coeffs.grid
    dt = cfg.dt
    u = np.array(u0, dtype=complex)
    if u.ndim != 4 or u.shape[1:] != grid.shape:
        raise DomainError(f"state batch must be (P,) + {grid.shape}, got {u.shape}")
    P = u.shape[0]
    use_psi = psi is not None and np.any(psi)
    if use_psi:
        psi = np.asarray(psi, dtype=float)
        if psi.shape[-2:] != (steps, coeffs.noise_modes):
            raise DomainError(f"control must cover {steps} steps x {coeffs.noise_modes} modes, got {psi.shape}")
    use_noise = dW is not None and cfg.epsilon > 0
    if use_noise:
        dW = np.asarray(dW, dtype=float)
        if dW.shape != (P, steps, coeffs.noise_modes):
            raise DomainError(f"noise must be {(P, steps, coeffs.noise_modes)}, got {dW.shape}")
        sqrt_eps = math.sqrt(cfg.epsilon)
    use_eta = eta != 0.0
    if use_eta and tilde_A is None:
        tilde_A = coeffs.tilde_A
    cap_sq = cfg.blowup_cap**2
    active = np.ones(P, dtype=bool)
    blowup = np.full(P, -1)
    for obs in observers:
        obs(0, 0.0, u, active)
    for n in range(steps):
        t = n * dt
        rhs = u
        ex = coeffs.explicit_drift(t, u)
        if ex is not None:
            rhs = rhs + dt * ex
        w = None
        if use_psi:
            w = dt * (psi[n] if psi.ndim == 2 else psi[:, n])
            w = np.broadcast_to(w, (P, coeffs.noise_modes))
        if use_noise:
            kick = sqrt_eps * dW[:, n]
            w = kick if w is None else w + kick
        if w is not None:
            rhs = rhs + coeffs.diffusion_contract(t, u, w)
        if use_eta:
            rhs = rhs + (dt * eta) * tilde_A(t, u)
        new = coeffs.project(rhs / (1.0 + dt * coeffs.symbol(t)))
        with np.errstate(invalid="ignore", over="ignore"):
            ok = theta_norm_sq(new, grid, 0.5) <= cap_sq
        bad = active & ~ok
        if bad.any():
            blowup[bad] = n + 1
            active = active & ok
        if not active.all():
            new[~active] = u[~active]
        u = new
        for obs in observers:
            obs(n + 1, t + dt, u, active)
    return BatchResult(u, blowup)


# ---------------------------------------------------------------- trajectory solvers


def _control_values(psi, cfg, steps, modes):
    if psi is None:
        return None
    if not isinstance(psi, Control):
        raise DomainError("psi must be a Control")
    if psi.modes != modes:
        raise DomainError(f"control has {psi.modes} modes, system has {modes}")
    return psi.expand(cfg.dt, steps)


def _check_noise(noise, cfg, modes):
    if not isinstance(noise, NoisePath):
        raise DomainError("noise must be a NoisePath")
    if abs(noise.dt - cfg.dt) > 1e-12 * cfg.dt:
        raise PreconditionError(f"noise dt {noise.dt} differs from solver dt {cfg.dt}")
    if noise.modes != modes:
        raise DomainError(f"noise has {noise.modes} modes, system has {modes}")


def _check_state(coeffs, x):
    if not isinstance(x, SpectralField) or x.grid != coeffs.grid:
        raise DomainError("initial state must be a SpectralField on the coefficient grid")


def _trajectory(coeffs, x, cfg, steps, psi_vals, dW, eta, tilde_A, provenance, record_every):
    rec = Recorder(record_every)
    res = integrate(coeffs, x.coeffs[None], cfg, steps, psi_vals, dW, eta, tilde_A, observers=(rec,))
    data = rec.stack()[0]
    times = cfg.dt * record_every * np.arange(data.shape[0])
    flags = ()
    prov = dict(provenance, config=cfg.to_dict(), coeffs=coeffs.fingerprint(), steps=steps)
    if res.blown_up[0]:
        stop = int(res.blowup_step[0])
        keep = (stop - 1) // record_every + 1
        data, times = data[:keep], times[:keep]
        flags = ("blown_up",)
        prov["blowup_time"] = stop * cfg.dt
    return Trajectory(coeffs.grid, times, data, dt=cfg.dt * record_every, flags=flags, provenance=prov)


def solve_skeleton(coeffs, x, psi, T, cfg, record_every=1):
    """Deterministic controlled equation ``u' = -A(t,u) + B(t,u) psi``."""
    _check_state(coeffs, x)
    steps = steps_for(T, cfg.dt)
    vals = _control_values(psi, cfg, steps, coeffs.noise_modes)
    cost = 0.0 if psi is None else psi.cost
    traj = _trajectory(coeffs, x, cfg, steps, vals, None, 0.0, None,
                       {"solver": "skeleton", "control_cost": cost}, record_every)
    if isinstance(coeffs, BrusselatorCoefficients) and not traj.blown_up:
        traj = _attach_energy_bound(coeffs, x, traj, T, 2.0 * cost)
    return traj


def _attach_energy_bound(coeffs, x, traj, T, psi_sq):
    log_bound = skeleton_bound(coeffs, x, T, psi_sq)
    mr = mr_norm(traj)
    holds = mr == 0.0 or math.log(mr) <= log_bound
    prov = dict(traj.provenance, mr_norm=mr, log_energy_bound=log_bound, energy_bound_holds=holds)
    flags = traj.flags if holds else traj.flags + ("energy_bound_violated",)
    return Trajectory(traj.grid, traj.times, traj.data, dt=traj.dt, flags=flags, provenance=prov)


def solve_spde(coeffs, x, noise, cfg, record_every=1):
    """Ito equation ``dY = -A(t,Y) dt + sqrt(eps) B(t,Y) dW``."""
    _check_state(coeffs, x)
    _check_noise(noise, cfg, coeffs.noise_modes)
    return _trajectory(coeffs, x, cfg, noise.steps, None, noise.increments[None], 0.0, None,
                       {"solver": "spde", "seed": noise.seed, "path": noise.path}, record_every)


def check_control_bound(psi, K):
    if K is not None and psi is not None and psi.l2_norm > K:
        raise PreconditionError(f"|psi|_L2 = {psi.l2_norm:.6g} exceeds the bound K = {K}")


def solve_tilted(coeffs, x, psi, noise, cfg, record_every=1):
    """Controlled Ito equation with drift ``B(t,X) psi`` added."""
    _check_state(coeffs, x)
    _check_noise(noise, cfg, coeffs.noise_modes)
    check_control_bound(psi, cfg.control_bound)
    vals = _control_values(psi, cfg, noise.steps, coeffs.noise_modes)
    cost = 0.0 if psi is None else psi.cost
    return _trajectory(coeffs, x, cfg, noise.steps, vals, noise.increments[None], 0.0, None,
                       {"solver": "tilted", "seed": noise.seed, "path": noise.path, "control_cost": cost},
                       record_every)


def solve_perturbed(coeffs, tilde_A, x, noise, cfg, record_every=1):
    """Ito equation with the extra drift ``eta(eps) A~(t,u)``.

    ``tilde_A`` is a callable ``(t, coeffs_array) -> coeffs_array``; ``None`` uses
    ``coeffs.tilde_A``, the Ito-Stratonovich correction of the transport part.
    """
    _check_state(coeffs, x)
    _check_noise(noise, cfg, coeffs.noise_modes)
    eta = cfg.eta_value()
    if not math.isfinite(eta):
        raise PreconditionError("eta(eps) must be finite")
    return _trajectory(coeffs, x, cfg, noise.steps, None, noise.increments[None], eta, tilde_A,
                       {"solver": "perturbed", "seed": noise.seed, "path": noise.path, "eta": eta},
                       record_every)


def stratonovich_reference(coeffs, u0, cfg, steps, dW, method="heun", observers=()):
    """Fully explicit Stratonovich scheme (stochastic Heun or explicit midpoint) on a batch.

    Independent of the semi-implicit machinery; meant for non-stiff cross-checks.
    """
    if method not in ("heun", "midpoint"):
        raise DomainError(f"unknown method {method!r}")
    coeffs = coeffs.with_dealias(cfg.dealias)
    dt, s = cfg.dt, math.sqrt(cfg.epsilon)
    u = np.array(u0, dtype=complex)
    for obs in observers:
        obs(0, 0.0, u, None)
    for n in range(steps):
        t = n * dt
        w = s * dW[:, n]
        f0 = coeffs.drift(t, u)
        b0 = coeffs.diffusion_contract(t, u, w)
        if method == "heun":
            pred = u + dt * f0 + b0
            u = u + 0.5 * dt * (f0 + coeffs.drift(t + dt, pred)) + 0.5 * (b0 + coeffs.diffusion_contract(t + dt, pred, w))
        else:
            mid = u + 0.5 * (dt * f0 + b0)
            u = u + dt * coeffs.drift(t + 0.5 * dt, mid) + coeffs.diffusion_contract(t + 0.5 * dt, mid, w)
        u = coeffs.project(u)
        for obs in observers:
            obs(n + 1, t + dt, u, None)
    return u


def solve_stratonovich_reference(coeffs, x, noise, cfg, method="heun"):
    """Single-path trajectory of :func:`stratonovich_reference`."""
    _check_state(coeffs, x)
    _check_noise(noise, cfg, coeffs.noise_modes)
    rec = Recorder()
    stratonovich_reference(coeffs, x.coeffs[None], cfg, noise.steps, noise.increments[None], method, (rec,))
    times = cfg.dt * np.arange(noise.steps + 1)
    return Trajectory(coeffs.grid, times, rec.stack()[0], dt=cfg.dt,
                      provenance={"solver": f"stratonovich_{method}", "seed": noise.seed, "path": noise.path})


# ---------------------------------------------------------------- batches


def run_batch(coeffs, x, cfg, steps, paths, seed, first_path=0, psi=None, eta=0.0,
              observers_factory=None, chunk=256):
    """Integrate ``paths`` independent paths with noise keyed by ``(seed, path index)``.

    Returns the final states ``(paths, C, N, N)``, the blow-up steps and the list of
    observer objects (one list per chunk) produced by ``observers_factory(chunk_size)``.
    """
    psi_vals = _control_values(psi, cfg, steps, coeffs.noise_modes)
    finals, blows, obs_all = [], [], []
    for start in range(0, int(paths), int(chunk)):
        size = min(int(chunk), int(paths) - start)
        dW = noise_batch(cfg.dt, steps, coeffs.noise_modes, seed, size, first_path + start)
        u0 = np.broadcast_to(x.coeffs, (size,) + x.grid.shape)
        obs = observers_factory(size) if observers_factory else ()
        res = integrate(coeffs, u0, cfg, steps, psi_vals, dW, eta, None, observers=obs)
        finals.append(res.final)
        blows.append(res.blowup_step)
        obs_all.append(obs)
    return np.concatenate(finals), np.concatenate(blows), obs_all


def simulate(mode, coeffs, x, cfg, T, seed=0, path=0, psi=None, record_every=1):
    """Dispatch for the command line: ``skeleton``, ``ito``, ``tilted`` or ``stratonovich``."""
    steps = steps_for(T, cfg.dt)
    if mode == "skeleton":
        return solve_skeleton(coeffs, x, psi, T, cfg, record_every)
    noise = NoisePath(cfg.dt, steps, coeffs.noise_modes, seed, path)
    if mode == "ito":
        return solve_spde(coeffs, x, noise, cfg, record_every)
    if mode == "tilted":
        return solve_tilted(coeffs, x, psi, noise, cfg, record_every)
    if mode == "stratonovich":
        return solve_perturbed(coeffs, None, x, noise, cfg.with_(eta_mode="stratonovich"), record_every)
    raise DomainError(f"unknown mode {mode!r}")

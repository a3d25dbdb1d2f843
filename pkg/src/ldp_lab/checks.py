"""Executable versions of the structural hypotheses.

Arithmetic conditions are decided exactly with rationals. Operator inequalities are
sampled with one independent stream per sample, ``numpy.random.default_rng([seed, i])``,
so any reported witness can be regenerated from ``(seed, i)`` alone.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from fractions import Fraction

import numpy as np

from .coefficients import (
    AllenCahnCoefficients,
    BrusselatorCoefficients,
    effective_min_eigenvalue,
    effective_tensor,
    exact,
)
from .errors import DomainError
from .spectral import pairing_array, random_field, theta_norm_sq

PASS, FAIL, INCONCLUSIVE = "pass", "fail", "inconclusive"
MAX_WITNESSES = 5


def _jsonable(x):
    if isinstance(x, Fraction):
        return str(x)
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    raise TypeError(f"not serializable: {type(x)}")


@dataclass
class CheckReport:
    name: str
    verdict: str
    margin: object
    witnesses: list = field(default_factory=list)
    samples: int = 0
    seed: object = None
    details: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.verdict not in (PASS, FAIL, INCONCLUSIVE):
            raise DomainError(f"unknown verdict {self.verdict!r}")
        if self.verdict == FAIL and not self.witnesses:
            raise DomainError("a failing report needs at least one witness")
        self.witnesses = list(self.witnesses)[:MAX_WITNESSES]

    @property
    def passed(self):
        return self.verdict == PASS

    def to_dict(self):
        return asdict(self)

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True, indent=2, default=_jsonable)


def _verdict(ok):
    return PASS if ok else FAIL


# ------------------------------------------------------------ exact arithmetic


def check_subcriticality(rho, beta):
    """``(1 + rho)(2 beta - 1) <= 1`` decided exactly."""
    rho, beta = exact(rho), exact(beta)
    if rho < 0:
        raise DomainError("rho must be nonnegative")
    if not Fraction(1, 2) < beta < 1:
        raise DomainError("beta must lie in (1/2, 1)")
    margin = 1 - (1 + rho) * (2 * beta - 1)
    wit = [] if margin >= 0 else [{"rho": rho, "beta": beta, "product": (1 + rho) * (2 * beta - 1)}]
    return CheckReport("subcriticality", _verdict(margin >= 0), margin, wit, samples=0)


def check_alpha_subcriticality(rho_hat, beta_hat, alpha):
    """``(1 + rho_hat)(2 beta_hat - 1) <= 1 + 2 alpha`` decided exactly.

    ``rho_hat = 0`` is accepted as the limiting boundary value.
    """
    rho_hat, beta_hat, alpha = exact(rho_hat), exact(beta_hat), exact(alpha)
    if rho_hat < 0:
        raise DomainError("rho_hat must be positive")
    if not Fraction(1, 2) < beta_hat <= 1:
        raise DomainError("beta_hat must lie in (1/2, 1]")
    if not 0 <= alpha <= Fraction(1, 2):
        raise DomainError("alpha must lie in [0, 1/2]")
    margin = 1 + 2 * alpha - (1 + rho_hat) * (2 * beta_hat - 1)
    wit = [] if margin >= 0 else [{"rho_hat": rho_hat, "beta_hat": beta_hat, "alpha": alpha}]
    return CheckReport("alpha_subcriticality", _verdict(margin >= 0), margin, wit, samples=0)


def check_criticality_params(params):
    """All (sub)criticality conditions of a :class:`CriticalityParams`."""
    reports = [check_subcriticality(r, b) for r, b in params.G]
    reports += [check_alpha_subcriticality(r, b, a) for r, b, a in params.F]
    return reports


def check_allen_cahn_noise(b, C0, C1):
    """``1/2 |b|^2 < 1``, ``C0 >= 0`` and ``0 <= C1 <= 2``.

    The margin is the smallest of ``1 - |b|^2/2`` and ``2 - C1``; a margin of zero from
    the first term still fails since that inequality is strict.
    """
    b = np.asarray(b, dtype=float)
    half_sq = exact(0.5 * float(np.sum(b**2)))
    C0, C1 = exact(C0), exact(C1)
    noise_margin = 1 - half_sq
    margin = min(noise_margin, 2 - C1, C0 if C0 < 0 else noise_margin)
    ok = noise_margin > 0 and C0 >= 0 and 0 <= C1 <= 2
    wit = [] if ok else [{"half_b_sq": half_sq, "C0": C0, "C1": C1}]
    return CheckReport("allen_cahn_noise", _verdict(ok), margin, wit, samples=0)


# ------------------------------------------------------------ sampled tensor checks


def check_parabolicity(a, b, samples=None, seed=0):
    """Smallest eigenvalue of ``sym(a_i) - 1/2 sum_n b_{n,i} b_{n,i}^T`` over grid points.

    ``a`` has shape ``(C, 2, 2[, N, N])`` and ``b`` ``(M, C, 2[, N, N])``. The exact 2x2
    eigenvalue is cross-checked against 64 equispaced directions.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if b.size == 0:
        b = np.zeros((0,) + a.shape[:1] + (2,) + a.shape[3:])
    eff = effective_tensor(a, b)
    lam = effective_min_eigenvalue(a, b)
    C = lam.shape[0]
    flat_eig = lam.reshape(C, -1)
    flat_eff = eff.reshape(C, 2, 2, -1)
    points = flat_eig.shape[1]
    idx = np.arange(points)
    if samples is not None and samples < points:
        idx = np.sort(np.random.default_rng(seed).choice(points, size=samples, replace=False))
    phi = np.pi * np.arange(64) / 64
    xi = np.stack([np.cos(phi), np.sin(phi)])
    nus, dir_nus, witnesses = [], [], []
    for i in range(C):
        e = flat_eig[i, idx]
        nus.append(float(np.min(e)))
        quad = np.einsum("jd,jkp,kd->pd", xi, flat_eff[i][:, :, idx], xi)
        dir_nus.append(float(np.min(quad)))
        if nus[-1] <= 0:
            p = int(idx[int(np.argmin(e))])
            witnesses.append({"component": i, "point": p, "eigenvalue": nus[-1],
                              "tensor": flat_eff[i, :, :, p].tolist()})
    margin = min(nus)
    return CheckReport("parabolicity", _verdict(margin > 0), margin, witnesses, samples=int(idx.size),
                       seed=seed, details={"nu": nus, "nu_directions": dir_nus})


def _growth_lhs(coeffs, y):
    """Left side of the growth envelope per species for physical samples ``y`` of shape (2, S)."""
    nu = coeffs.nu
    bnorm = np.sqrt(np.sum(coeffs.b**2, axis=2))  # (M, 2[, N, N])
    if bnorm.ndim > 2:
        bnorm = bnorm.reshape(bnorm.shape[0], 2, -1).max(axis=-1)
    gy = coeffs.g_family.abs_values(y.T[:, :, None, None])[..., 0, 0]  # (S, M, 2)
    gy = np.moveaxis(gy, 0, -1)
    out = []
    for i in range(2):
        weighted = np.sum(bnorm[:, i, None] * gy[:, i], axis=0)
        out.append(weighted**2 / (4.0 * (nu[i] - coeffs.delta)) + 0.5 * np.sum(gy[:, i] ** 2, axis=0))
    return out


def check_growth_envelope(coeffs, samples=10_000, box=10.0, seed=0):
    """Sampled check of the Brusselator growth envelopes ``N_1``, ``N_2``."""
    if not isinstance(coeffs, BrusselatorCoefficients):
        raise DomainError("growth envelopes are defined for the Brusselator")
    if np.any(coeffs.delta >= coeffs.nu):
        raise DomainError("delta must be smaller than both parabolicity constants")
    lo, hi = (-float(box), float(box)) if np.isscalar(box) else map(float, box)
    rng = np.random.default_rng([seed, 0])
    y = rng.uniform(lo, hi, size=(2, samples))
    lhs = _growth_lhs(coeffs, y)
    n1, n2 = coeffs.growth_envelopes(y)
    slack = np.minimum(n1 - lhs[0], n2 - lhs[1])
    margin = float(np.min(slack))
    witnesses = []
    if margin < 0:
        for s in np.argsort(slack)[:MAX_WITNESSES]:
            if slack[s] < 0:
                witnesses.append({"y": y[:, s].tolist(), "slack": float(slack[s]), "index": int(s)})
    return CheckReport("growth_envelope", _verdict(margin >= 0), margin, witnesses, samples=samples,
                       seed=seed, details={"delta": coeffs.delta, "M": coeffs.M_growth,
                                           "epsilon": coeffs.epsilon_growth, "box": [lo, hi]})


# ------------------------------------------------------------ sampled operator checks


def sample_direction(coeffs, seed, index, *, offsets=True):
    """Deterministic random test field number ``index`` for ``seed``.

    Band-limited to ``|k_j| < N/4`` so that quartic grid quadratures are exact; random
    spectral decay, overall scale and (optionally) per-component constant offsets.
    """
    rng = np.random.default_rng([int(seed), int(index)])
    grid = coeffs.grid
    decay = rng.uniform(0.0, 2.0)
    scale = 10.0 ** rng.uniform(-1.0, 0.5)
    v = random_field(grid, rng, decay=decay, amplitude=scale).coeffs.copy()
    if offsets:
        v[:, 0, 0] += scale * rng.standard_normal(grid.components)
    return coeffs.project(v)


def coercivity_form(coeffs, v, t=0.0):
    """``<A(t,v), v> - 1/2 |B(t,v)|_HS^2`` for a batch of spectral arrays."""
    grid = coeffs.grid
    a_term = -pairing_array(coeffs.drift(t, v), v, grid)
    if coeffs.noise_modes == 0:
        return a_term
    return a_term - 0.5 * coeffs.diffusion_hs_sq(t, v)


def linear_coercivity_form(coeffs, u, v, t=0.0, eps=0.0, stratonovich=False):
    """``<A0(u)v, v> - 1/2 |B0(u)v|^2`` with optional ``-eps <tilde A v, v>`` and ``eps`` noise weight."""
    grid = coeffs.grid
    a_term = pairing_array(coeffs.apply_A0(t, u, v), v, grid)
    weight = eps if stratonovich else 1.0
    if stratonovich:
        a_term = a_term - eps * pairing_array(coeffs.tilde_A(t, v), v, grid)
    if coeffs.noise_modes == 0:
        return a_term
    bv = coeffs.apply_B0(t, u, v)
    return a_term - 0.5 * weight * np.sum(theta_norm_sq(bv, grid, 0.5), axis=-1)


def _norms(coeffs, v):
    return theta_norm_sq(v, coeffs.grid, 1.0), theta_norm_sq(v, coeffs.grid, 0.5)


def check_linear_coercivity(coeffs, n_ball=1.0, samples=1000, seed=0, eps=1.0, stratonovich=False,
                            chunk=256):
    """Fit ``q(v) >= theta |v|_V^2 - M |v|_H^2`` for the linear part over sampled ``(u, v)``.

    ``theta`` comes from a least-squares fit; ``M`` is then raised until every sample holds.
    With ``stratonovich=True`` the form includes the correction ``-eps <tilde A v, v>``
    and weights the noise by ``eps``.
    """
    q_all, V_all, H_all = [], [], []
    for start in range(0, samples, chunk):
        idx = range(start, min(samples, start + chunk))
        v = np.stack([sample_direction(coeffs, seed, 2 * i, offsets=False) for i in idx])
        u = np.stack([sample_direction(coeffs, seed, 2 * i + 1) for i in idx])
        hu = np.sqrt(theta_norm_sq(u, coeffs.grid, 0.5))
        u = u * np.minimum(1.0, n_ball / np.maximum(hu, 1e-300))[:, None, None, None]
        q_all.append(linear_coercivity_form(coeffs, u, v, eps=eps, stratonovich=stratonovich))
        V, H = _norms(coeffs, v)
        V_all.append(V)
        H_all.append(H)
    q, V, H = map(np.concatenate, (q_all, V_all, H_all))
    design = np.stack([V, -H], axis=1)
    (theta, M), *_ = np.linalg.lstsq(design, q, rcond=None)
    theta = float(theta)
    witnesses = []
    if theta <= 1e-12 * max(1.0, float(np.max(np.abs(q)) / max(np.max(V), 1e-300))):
        worst = int(np.argmin(q / V))
        witnesses.append({"seed": seed, "index": worst, "q": float(q[worst]), "V": float(V[worst]),
                          "H": float(H[worst])})
        return CheckReport("linear_coercivity", FAIL, theta, witnesses, samples, seed,
                           details={"theta": theta, "M": float(M), "n_ball": n_ball})
    M = max(float(M), float(np.max((theta * V - q) / H)))
    slack = q - theta * V + M * H
    margin = float(np.min(slack))
    return CheckReport("linear_coercivity", PASS, margin, [], samples, seed,
                       details={"theta": theta, "M": M, "n_ball": n_ball, "stratonovich": stratonovich})


FULL_AMPLITUDES = (1.0, 4.0, 16.0, -4.0, -16.0)


def named_quartic_terms(coeffs, v):
    """Named super-quadratic contributions to the coercivity form (Brusselator only)."""
    if not isinstance(coeffs, BrusselatorCoefficients):
        return {}
    from .spectral import padded_physical

    y = padded_physical(v, 2)
    w = (coeffs.grid.period / y.shape[-1]) ** 2
    y1, y2 = y[..., 0, :, :], y[..., 1, :, :]
    return {"u1^2*u2^2": w * np.sum(y1**2 * y2**2, axis=(-2, -1)),
            "u1*u2^3": -w * np.sum(y1 * y2**3, axis=(-2, -1))}


def ray_defect(coeffs, v, amplitudes=FULL_AMPLITUDES):
    """Defect slopes of ``rho(s) = q(s v) / s^2`` in ``s^2`` along positive and negative rays.

    Returns ``(q_values, defect)`` where ``q_values`` has one column per amplitude and
    ``defect`` is the most negative normalized slope over both rays.
    """
    amps = np.asarray(amplitudes, dtype=float)
    qs = np.stack([coercivity_form(coeffs, s * v) for s in amps], axis=-1)
    rho = qs / amps**2
    V, _ = _norms(coeffs, v)
    slopes = []
    for a, b in ((1, 2), (3, 4)):
        slopes.append((rho[..., b] - rho[..., a]) / (amps[b] ** 2 - amps[a] ** 2))
    defect = np.minimum(*slopes) / np.maximum(V, 1e-300) ** 1.0
    return qs, defect


def check_full_coercivity(coeffs, samples=10_000, seed=0, tol=1e-9, chunk=200):
    """Search for rays along which ``q(v) = <A(v),v> - 1/2 |B(v)|^2`` is super-quadratically negative.

    A coercive pair admits ``q >= theta |v|_V^2 - M |v|_H^2 - phi^2``, so ``q(s v)/s^2`` stays
    bounded below as ``s`` grows. A negative slope of that ratio in ``s^2`` is reported as a
    witness. If no ray fails, ``(theta, M)`` are fitted on the linear part ``(A0, B0)`` and
    ``phi^2`` is the smallest constant covering every sampled amplitude.
    """
    amps = np.asarray(FULL_AMPLITUDES)
    defects, q_all, ql, V_unit, H_unit = [], [], [], [], []
    for start in range(0, samples, chunk):
        idx = range(start, min(samples, start + chunk))
        v = np.stack([sample_direction(coeffs, seed, i) for i in idx])
        qs, d = ray_defect(coeffs, v)
        defects.append(d)
        q_all.append(qs)
        ql.append(linear_coercivity_form(coeffs, v, v))
        V, H = _norms(coeffs, v)
        V_unit.append(V)
        H_unit.append(H)
    d, q, ql, V, H = map(np.concatenate, (defects, q_all, ql, V_unit, H_unit))
    bad = np.flatnonzero(d < -tol)
    if bad.size:
        witnesses = []
        for i in bad[np.argsort(d[bad])][:MAX_WITNESSES]:
            witnesses.append(full_coercivity_witness(coeffs, seed, int(i)))
        return CheckReport("full_coercivity", FAIL, float(np.min(d)), witnesses, samples, seed,
                           details={"amplitudes": list(FULL_AMPLITUDES), "failing_rays": int(bad.size)})
    (theta, M), *_ = np.linalg.lstsq(np.stack([V, -H], axis=1), ql, rcond=None)
    theta = float(theta)
    if theta <= 0:
        worst = int(np.argmin(ql / V))
        wit = {"seed": seed, "index": worst, "q_linear": float(ql[worst]), "reason": "no dissipation"}
        return CheckReport("full_coercivity", FAIL, theta, [wit], samples, seed, details={"theta": theta})
    M = max(float(M), float(np.max((theta * V - ql) / H)), 0.0)
    scale = amps**2
    gap = theta * V[:, None] * scale - M * H[:, None] * scale - q
    phi2 = max(0.0, float(np.max(gap)))
    return CheckReport("full_coercivity", PASS, float(np.min(d)), [], samples, seed,
                       details={"theta": theta, "M": M, "phi_sq": phi2,
                                "amplitudes": list(FULL_AMPLITUDES)})


def full_coercivity_witness(coeffs, seed, index):
    """Evaluate one sampled ray on its own; used both for reporting and for replay."""
    v = sample_direction(coeffs, seed, index)[None]
    qs, d = ray_defect(coeffs, v)
    wit = {"seed": int(seed), "index": int(index), "defect": float(d[0]),
           "q": [float(x) for x in qs[0]], "amplitudes": list(FULL_AMPLITUDES)}
    terms = named_quartic_terms(coeffs, v)
    if terms:
        vals = {k: float(x[0]) for k, x in terms.items()}
        wit["terms"] = vals
        wit["term"] = min(vals, key=vals.get)
    return wit


def replay_witness(coeffs, report, i=0):
    """Recompute a stored witness from its seed and index."""
    w = report.witnesses[i]
    if report.name == "full_coercivity" and "defect" in w:
        return full_coercivity_witness(coeffs, w["seed"], w["index"])
    if report.name == "growth_envelope":
        y = np.asarray(w["y"], dtype=float)[:, None]
        lhs = _growth_lhs(coeffs, y)
        n1, n2 = coeffs.growth_envelopes(y)
        return {"y": w["y"], "slack": float(np.minimum(n1 - lhs[0], n2 - lhs[1])[0]), "index": w["index"]}
    raise DomainError(f"no replay rule for {report.name!r}")


def estimate_lipschitz_G(coeffs, beta=0.75, n_ball=1.0, samples=200, seed=0):
    """Fit ``C`` in ``|G(u)-G(v)|_HS <= C (1 + |u|_beta + |v|_beta) |u - v|_beta`` on random pairs."""
    ratios = []
    for i in range(samples):
        u = sample_direction(coeffs, seed, 2 * i)
        v = sample_direction(coeffs, seed, 2 * i + 1)
        for w in (u, v):
            h = np.sqrt(theta_norm_sq(w, coeffs.grid, 0.5))
            w *= min(1.0, n_ball / h)
        gu, gv = coeffs.G(0.0, u), coeffs.G(0.0, v)
        if gu is None:
            return 0.0, np.zeros(0)
        lhs = np.sqrt(np.sum(theta_norm_sq(gu - gv, coeffs.grid, 0.5)))
        nb = lambda w: np.sqrt(theta_norm_sq(w, coeffs.grid, beta))  # noqa: E731
        ratios.append(lhs / ((1 + nb(u) + nb(v)) * nb(u - v)))
    ratios = np.asarray(ratios)
    return float(np.max(ratios)), ratios


def preset_checks(coeffs, samples=10_000, seed=0):
    """All eager checks that apply to a coefficient set."""
    reports = check_criticality_params(coeffs.params)
    if isinstance(coeffs, BrusselatorCoefficients):
        reports.append(check_parabolicity(coeffs.a, coeffs.b, seed=seed))
        reports.append(check_growth_envelope(coeffs, samples=samples, seed=seed))
    if isinstance(coeffs, AllenCahnCoefficients):
        reports.append(check_allen_cahn_noise(coeffs.b, coeffs.C0, coeffs.C1))
    return reports

"""Named coefficient sets.

``brusselator``, ``allen_cahn`` and ``navier_stokes`` are the three reaction/fluid
systems; ``ou_scalar`` and ``heat_linear`` exist only as analytic oracles and carry
``oracle_only = True`` in their configuration.
"""

from __future__ import annotations

from fractions import Fraction

import numpy as np

from .coefficients import (
    AllenCahnCoefficients,
    BrusselatorCoefficients,
    CriticalityParams,
    LinearCoefficients,
    NavierStokesCoefficients,
    g_family_from_config,
)
from .errors import DomainError
from .spectral import TorusGrid

# exponents with a published source: G of the Brusselator (rho, beta) and its cubic term
BRUSSELATOR_G_EXPONENTS = (Fraction(1), Fraction(3, 4))
BRUSSELATOR_CUBIC_EXPONENTS = (Fraction(2), Fraction(5, 6), Fraction(1, 2))


def _ring(modes, radius, phase=0.0):
    ang = 2.0 * np.pi * np.arange(modes) / modes + phase
    return radius * np.stack([np.cos(ang), np.sin(ang)], axis=-1)


def _grid(overrides, components, default_n=32, default_period=2.0 * np.pi):
    return TorusGrid(int(overrides.pop("modes_per_dim", default_n)),
                     float(overrides.pop("period", default_period)), components)


def _params(overrides, default, cited):
    spec = overrides.pop("params", None)
    if spec is None:
        return default
    return CriticalityParams(G=spec.get("G", ()), F=spec.get("F", ()), cited=False)


def brusselator(**overrides):
    ov = dict(overrides)
    grid = _grid(ov, 2)
    modes = int(ov.pop("noise_modes", 8))
    a = np.asarray(ov.pop("a", np.stack([np.eye(2), np.eye(2)])), dtype=float)
    radius = float(ov.pop("b_radius", 0.2))
    b = ov.pop("b", None)
    if b is None:
        b = np.stack([_ring(modes, radius), _ring(modes, radius, np.pi / modes)], axis=1)
    b = np.asarray(b, dtype=float)
    lam = ov.pop("lam", (0.0, 0.0, 1.5))
    mu = ov.pop("mu", (1.0, 0.0, -2.5))
    g_cfg = ov.pop("g", {"kind": "bounded", "c": (0.1 / np.arange(1, b.shape[0] + 1)).tolist()})
    g = g_family_from_config(g_cfg, b.shape[0], 2)
    sup_c = float(np.max(np.abs(g_cfg.get("c", [0.0])))) if g_cfg.get("kind", "zero") != "zero" else 0.0
    M = float(ov.pop("M", max(10.0 * sup_c**2, 0.1)))
    delta = ov.pop("delta", None)
    eps_g = float(ov.pop("epsilon_growth", 0.1))
    default = CriticalityParams(G=[BRUSSELATOR_G_EXPONENTS],
                                F=[(1, Fraction(3, 4), 0), BRUSSELATOR_CUBIC_EXPONENTS], cited=True)
    params = _params(ov, default, True)
    dealias = bool(ov.pop("dealias", True))
    _no_leftovers("brusselator", ov)
    return BrusselatorCoefficients(grid, a, b, lam, mu, g, M_growth=M, delta=delta, epsilon_growth=eps_g,
                                   params=params, dealias=dealias)


def allen_cahn(**overrides):
    ov = dict(overrides)
    grid = _grid(ov, 1)
    modes = int(ov.pop("noise_modes", 8))
    b = ov.pop("b", None)
    if b is None:
        b = _ring(modes, np.sqrt(0.5 / modes))
    b = np.asarray(b, dtype=float).reshape(-1, 2)
    g_cfg = ov.pop("g", {"kind": "square", "c": [float(np.sqrt(1.0 / b.shape[0]))] * b.shape[0]})
    g = g_family_from_config(g_cfg, b.shape[0], 1)
    c = np.asarray(g_cfg.get("c", [0.0]), dtype=float)
    C1 = float(ov.pop("C1", float(np.sum(c**2))))
    C0 = float(ov.pop("C0", float(np.sqrt(np.sum(c**2)))))
    default = CriticalityParams(G=[(1, Fraction(3, 4))], F=[(1, Fraction(3, 4), 0), (2, Fraction(5, 6), Fraction(1, 2))])
    params = _params(ov, default, False)
    dealias = bool(ov.pop("dealias", True))
    _no_leftovers("allen_cahn", ov)
    return AllenCahnCoefficients(grid, b, g, C0=C0, C1=C1, params=params, dealias=dealias)


def navier_stokes(**overrides):
    ov = dict(overrides)
    grid = _grid(ov, 2)
    modes = int(ov.pop("noise_modes", 8))
    nu = float(ov.pop("nu", 0.1))
    b = ov.pop("b", None)
    if b is None:
        b = _ring(modes, 0.2)
    default = CriticalityParams(F=[(1, Fraction(3, 4), 0)])
    params = _params(ov, default, False)
    dealias = bool(ov.pop("dealias", True))
    _no_leftovers("navier_stokes", ov)
    return NavierStokesCoefficients(grid, nu, np.asarray(b, dtype=float), params=params, dealias=dealias)


def ou_scalar(**overrides):
    """``du = -lam u dt + sigma sqrt(eps) dW`` carried by the mean mode of a 4x4 grid of side 1."""
    ov = dict(overrides)
    grid = _grid(ov, 1, default_n=4, default_period=1.0)
    lam = float(ov.pop("lam", 1.0))
    sigma = float(ov.pop("sigma", 1.0))
    mult = ov.pop("mult", None)
    add = np.zeros((1,) + grid.shape, dtype=complex)
    add[0, 0, 0, 0] = sigma
    _no_leftovers("ou_scalar", ov)
    if mult is not None:
        return LinearCoefficients(grid, lam=lam, mult=np.atleast_1d(mult), name="ou_scalar")
    return LinearCoefficients(grid, lam=lam, additive=add, name="ou_scalar")


def heat_linear(**overrides):
    """Heat equation with four additive noise modes ``sigma cos/sin(x_j)``."""
    ov = dict(overrides)
    grid = _grid(ov, 1, default_n=16)
    nu = float(ov.pop("nu", 1.0))
    sigma = float(ov.pop("sigma", 0.5))
    x1, x2 = grid.coordinates
    from .spectral import to_spectral

    fields = [np.cos(x1), np.sin(x1), np.cos(x2), np.sin(x2)]
    add = np.stack([sigma * to_spectral(f)[None] for f in fields]) if sigma else None
    _no_leftovers("heat_linear", ov)
    return LinearCoefficients(grid, nu=nu, additive=add, noise_modes=0 if add is None else 4, name="heat_linear")


def _no_leftovers(name, ov):
    if ov:
        raise DomainError(f"unknown {name} override(s): {sorted(ov)}")


PRESETS = {
    "brusselator": brusselator,
    "allen_cahn": allen_cahn,
    "navier_stokes": navier_stokes,
    "ou_scalar": ou_scalar,
    "heat_linear": heat_linear,
}

ORACLE_ONLY = frozenset({"ou_scalar", "heat_linear"})


def make_preset(name, **overrides):
    if name not in PRESETS:
        raise DomainError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    return PRESETS[name](**overrides)


def verify_preset_fidelity():
    """Assert the cited exponents of the Brusselator preset; raises AssertionError otherwise."""
    p = brusselator(modes_per_dim=4).params
    assert p.cited
    assert p.G[0] == BRUSSELATOR_G_EXPONENTS, p.G
    assert p.F[1] == BRUSSELATOR_CUBIC_EXPONENTS, p.F
    assert BRUSSELATOR_G_EXPONENTS == (1, Fraction(3, 4))
    assert BRUSSELATOR_CUBIC_EXPONENTS == (2, Fraction(5, 6), Fraction(1, 2))
    return True

"""Coefficient decompositions ``A = A0(t,v)v - F_hat(t,v) - f_hat`` and ``B = B0(t,v)v + G(t,v) + g``.

Every operator acts on spectral arrays of shape ``(..., C, N, N)``; leading axes are
batch axes (independent paths). Noise-indexed outputs carry an extra axis of length
``noise_modes`` just before the component axis: ``(..., M, C, N, N)``.

The field-level wrappers :func:`apply_drift` and :func:`apply_diffusion` accept and
return :class:`~ldp_lab.spectral.SpectralField` objects.
"""

from __future__ import annotations

import hashlib
import json
from fractions import Fraction

import numpy as np

from .errors import DomainError, PreconditionError
from .spectral import (
    SpectralField,
    divergence_coeffs,
    from_padded,
    padded_physical,
    project_divergence_free,
    theta_norm_sq,
    to_physical,
    to_spectral,
)


def exact(x):
    """Exact rational for a parameter given as Fraction, int, str or float.

    Floats are read through their shortest decimal representation, so ``0.9``
    becomes ``9/10`` while ``5/6`` must be passed as a Fraction or the string "5/6".
    """
    if isinstance(x, Fraction):
        return x
    if isinstance(x, (int, np.integer)):
        return Fraction(int(x))
    if isinstance(x, str):
        return Fraction(x.strip())
    return Fraction(repr(float(x)))


class CriticalityParams:
    """Exponents of the (sub)criticality conditions.

    ``G`` holds one ``(rho, beta)`` pair per index, ``F`` one ``(rho_hat, beta_hat, alpha)``
    triple per index. ``cited`` marks values that must match published ones exactly.
    """

    def __init__(self, G=(), F=(), cited=False):
        self.G = tuple((exact(r), exact(b)) for r, b in G)
        self.F = tuple((exact(r), exact(b), exact(a)) for r, b, a in F)
        self.cited = bool(cited)
        for rho, beta in self.G:
            if rho < 0 or not Fraction(1, 2) < beta < 1:
                raise DomainError(f"G exponents out of range: rho={rho}, beta={beta}")
        for rho_hat, beta_hat, alpha in self.F:
            if rho_hat < 0 or not Fraction(1, 2) < beta_hat <= 1 or not 0 <= alpha <= Fraction(1, 2):
                raise DomainError(
                    f"F exponents out of range: rho_hat={rho_hat}, beta_hat={beta_hat}, alpha={alpha}")

    @property
    def m(self):
        return max(len(self.G), len(self.F), 1)

    def to_config(self):
        return {"G": [[str(r), str(b)] for r, b in self.G],
                "F": [[str(r), str(b), str(a)] for r, b, a in self.F]}

    def __eq__(self, other):
        return isinstance(other, CriticalityParams) and self.G == other.G and self.F == other.F

    def __repr__(self):
        return f"CriticalityParams(G={self.to_config()['G']}, F={self.to_config()['F']})"


def _as_list(x):
    return np.asarray(x).tolist() if isinstance(x, np.ndarray) else x


# ------------------------------------------------------------ pointwise maps


def brusselator_reaction(y):
    """The cubic reaction ``(-y1 y2^2, y1 y2^2)``; works on arrays with a leading axis of 2."""
    y = np.asarray(y, dtype=float)
    r = y[0] * y[1] ** 2
    return np.stack([-r, r])


class ZeroG:
    """The zero noise nonlinearity."""

    kind = "zero"

    def __init__(self, modes, components):
        self.modes = modes
        self.components = components

    def values(self, y):
        return None

    def contract(self, y, w):
        return None

    def abs_values(self, y):
        return np.zeros(y.shape[:-3] + (self.modes,) + y.shape[-3:])

    def to_config(self):
        return {"kind": self.kind}


class BoundedG:
    """``g_{n,i}(y) = c_n y_i / (1 + |y|)``: bounded and globally Lipschitz."""

    kind = "bounded"

    def __init__(self, c, components=2):
        self.c = np.asarray(c, dtype=float)
        self.modes = self.c.size
        self.components = components

    def base(self, y):
        mag = np.sqrt(np.sum(y**2, axis=-3, keepdims=True))
        return y / (1.0 + mag)

    def values(self, y):
        base = self.base(y)
        return self.c[:, None, None, None] * base[..., None, :, :, :]

    def contract(self, y, w):
        return (np.asarray(w) @ self.c)[..., None, None, None] * self.base(y)

    def abs_values(self, y):
        return np.abs(self.values(y))

    def to_config(self):
        return {"kind": self.kind, "c": self.c.tolist()}


class StressorG:
    """``g_{n,1}(y) = c_n y_1 y_2`` and ``g_{n,2} = 0``: quadratic, critical growth."""

    kind = "stressor"

    def __init__(self, c, components=2):
        self.c = np.asarray(c, dtype=float)
        self.modes = self.c.size
        self.components = components

    def base(self, y):
        out = np.zeros_like(y)
        out[..., 0, :, :] = y[..., 0, :, :] * y[..., 1, :, :]
        return out

    def values(self, y):
        return self.c[:, None, None, None] * self.base(y)[..., None, :, :, :]

    def contract(self, y, w):
        return (np.asarray(w) @ self.c)[..., None, None, None] * self.base(y)

    def abs_values(self, y):
        return np.abs(self.values(y))

    def to_config(self):
        return {"kind": self.kind, "c": self.c.tolist()}


class SquareG:
    """``g_n(y) = c_n y^2`` for a scalar equation."""

    kind = "square"

    def __init__(self, c, components=1):
        self.c = np.asarray(c, dtype=float)
        self.modes = self.c.size
        self.components = components

    def base(self, y):
        return y**2

    def values(self, y):
        return self.c[:, None, None, None] * (y**2)[..., None, :, :, :]

    def contract(self, y, w):
        return (np.asarray(w) @ self.c)[..., None, None, None] * y**2

    def abs_values(self, y):
        return np.abs(self.values(y))

    def to_config(self):
        return {"kind": self.kind, "c": self.c.tolist()}


G_FAMILIES = {"zero": ZeroG, "bounded": BoundedG, "stressor": StressorG, "square": SquareG}


def g_family_from_config(cfg, modes, components):
    kind = cfg.get("kind", "zero")
    if kind == "zero":
        return ZeroG(modes, components)
    if kind not in G_FAMILIES:
        raise DomainError(f"unknown g family {kind!r}")
    fam = G_FAMILIES[kind](cfg["c"], components)
    if fam.modes != modes:
        raise DomainError(f"g family has {fam.modes} coefficients, expected {modes}")
    return fam


# ------------------------------------------------------------ shared helpers


def _separable_G(family, u):
    """``c_n * FFT(phi(u))``: every shipped family is a scalar sequence times one map."""
    base = to_spectral(family.base(to_physical(u)))
    return family.c[:, None, None, None] * base[..., None, :, :, :]


def _transport_symbols(b, grid):
    """``i (b . k)`` for constant vectors ``b[..., 2]`` -> shape ``b.shape[:-1] + (N, N)``."""
    d1, d2 = grid.derivative_symbols
    return b[..., 0, None, None] * d1 + b[..., 1, None, None] * d2


def _grad_physical(v, grid):
    d1, d2 = grid.derivative_symbols
    return to_physical(d1 * v), to_physical(d2 * v)


def _sym_min_eig(t11, t12, t22):
    half_tr = 0.5 * (t11 + t22)
    rad = np.sqrt(0.25 * (t11 - t22) ** 2 + t12**2)
    return half_tr - rad, half_tr + rad


def effective_tensor(a, b):
    """``sym(a_i) - 1/2 sum_n b_{n,i} b_{n,i}^T`` per component and grid point.

    ``a`` has shape ``(C, 2, 2[, N, N])`` and ``b`` ``(M, C, 2[, N, N])``; returns
    ``(C, 2, 2, ...)``.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    sym = 0.5 * (a + np.swapaxes(a, 1, 2))
    if b.size:
        bb = 0.5 * np.einsum("nij...,nik...->ijk...", b, b)
        sym, bb = np.broadcast_arrays(sym, bb)
        return sym - bb
    return sym


def effective_min_eigenvalue(a, b):
    """Pointwise smallest eigenvalue of :func:`effective_tensor`, shape ``(C, ...)``."""
    e = effective_tensor(a, b)
    return _sym_min_eig(e[:, 0, 0], e[:, 0, 1], e[:, 1, 1])[0]


# ------------------------------------------------------------ base class


class CoefficientSet:
    """Base class: a drift/diffusion pair in semilinear-plus-transport form.

    Subclasses override the hooks ``apply_A0``, ``apply_B0``, ``F_hat``, ``G``,
    ``f_hat``, ``g``, ``symbol`` and optionally ``A0_remainder``, ``project`` and
    ``tilde_A``. ``symbol`` is the diagonal Fourier multiplier treated implicitly by the
    integrators; ``A0_remainder(t, u)`` returns ``symbol*u - A0(t,u)u`` (``None`` if zero).
    """

    name = "abstract"
    oracle_only = False

    def __init__(self, grid, noise_modes, params=None, dealias=True):
        if grid.components != self.components:
            raise DomainError(f"{self.name} needs {self.components} components, grid has {grid.components}")
        self.grid = grid
        self.noise_modes = int(noise_modes)
        self.params = params or CriticalityParams()
        self.dealias = bool(dealias)

    # hooks -------------------------------------------------------------
    def symbol(self, t=0.0):
        return np.zeros(self.grid.shape)

    def apply_A0(self, t, u_frozen, v):
        return self.symbol(t) * v

    def A0_remainder(self, t, u):
        return None

    def apply_B0(self, t, u_frozen, v):
        return np.zeros(v.shape[:-3] + (self.noise_modes,) + v.shape[-3:], dtype=complex)

    def B0_contract(self, t, u_frozen, v, w):
        out = self.apply_B0(t, u_frozen, v)
        return np.einsum("...n,...nckl->...ckl", np.asarray(w), out)

    def F_hat(self, t, u):
        return []

    def G(self, t, u):
        return None

    def G_contract(self, t, u, w):
        vals = self.G(t, u)
        if vals is None:
            return None
        return np.einsum("...n,...nckl->...ckl", np.asarray(w), vals)

    def f_hat(self, t):
        return []

    def g(self, t):
        return None

    def project(self, u):
        return u

    def tilde_A(self, t, u):
        """Ito-Stratonovich correction ``1/2 sum_n B0_n (B0_n u)`` for state-independent ``B0``."""
        first = self.apply_B0(t, u, u)
        second = np.stack([self.apply_B0(t, u, first[..., n, :, :, :])[..., n, :, :, :]
                           for n in range(self.noise_modes)], axis=-4)
        return 0.5 * np.sum(second, axis=-4)

    # assembled operators -----------------------------------------------
    def drift(self, t, u):
        """``-A(t,u) = -A0(t,u)u + sum F_hat_i(t,u) + sum f_hat_i(t)``."""
        out = -self.apply_A0(t, u, u)
        for term in self.F_hat(t, u):
            out = out + term
        for term in self.f_hat(t):
            out = out + term
        return out

    def explicit_drift(self, t, u):
        """``-A(t,u) + symbol*u``: the part of the drift the integrators treat explicitly."""
        out = self.A0_remainder(t, u)
        for term in self.F_hat(t, u):
            out = term if out is None else out + term
        for term in self.f_hat(t):
            out = term if out is None else out + term
        return out

    def diffusion(self, t, u):
        """``B(t,u)`` as an array ``(..., M, C, N, N)``."""
        out = self.apply_B0(t, u, u)
        gu = self.G(t, u)
        if gu is not None:
            out = out + gu
        g0 = self.g(t)
        if g0 is not None:
            out = out + g0
        return out

    def diffusion_hs_sq(self, t, u):
        """``sum_n |B_n(t,u)|_H^2`` for a batch of states."""
        return np.sum(theta_norm_sq(self.diffusion(t, u), self.grid, 0.5), axis=-1)

    def diffusion_contract(self, t, u, w):
        """``sum_n w_n B_n(t,u)`` with weights ``w`` of shape ``(..., M)``."""
        w = np.asarray(w, dtype=float)
        out = self.B0_contract(t, u, u, w)
        gu = self.G_contract(t, u, w)
        if gu is not None:
            out = out + gu
        g0 = self.g(t)
        if g0 is not None:
            out = out + np.tensordot(w, g0, axes=([-1], [0]))
        return out

    # identity ----------------------------------------------------------
    def to_config(self):
        return {"system": self.name, "modes_per_dim": self.grid.modes_per_dim,
                "period": self.grid.period, "noise_modes": self.noise_modes,
                "dealias": self.dealias, "params": self.params.to_config()}

    def fingerprint(self):
        blob = json.dumps(self.to_config(), sort_keys=True, default=_as_list).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def with_dealias(self, flag):
        if bool(flag) == self.dealias:
            return self
        clone = object.__new__(type(self))
        clone.__dict__.update(self.__dict__)
        clone.dealias = bool(flag)
        return clone

    def __repr__(self):
        return f"{type(self).__name__}(N={self.grid.modes_per_dim}, M={self.noise_modes})"


def _transport_plus_separable_hs(bsym, family, u, grid):
    """``sum_n |S_n u + c_n Phi(u)|^2`` expanded mode-wise, without forming the M terms."""
    sq_sym = np.sum(np.abs(bsym) ** 2, axis=0)
    total = np.sum(sq_sym * (u.real**2 + u.imag**2), axis=(-3, -2, -1))
    if not isinstance(family, ZeroG):
        phi = to_spectral(family.base(to_physical(u)))
        cs = np.tensordot(family.c, bsym, axes=([0], [0]))
        cross = np.sum((np.conj(cs * u) * phi).real, axis=(-3, -2, -1))
        total = total + 2.0 * cross + float(family.c @ family.c) * np.sum(
            phi.real**2 + phi.imag**2, axis=(-3, -2, -1))
    return grid.volume * total


# ------------------------------------------------------------ Brusselator


def _cubic_reaction_spectral(u, grid, dealias):
    if dealias:
        y = padded_physical(u, 2)
        r = y[..., 0, :, :] * y[..., 1, :, :] ** 2
        return from_padded(np.stack([-r, r], axis=-3), grid.modes_per_dim)
    y = to_physical(u)
    r = y[..., 0, :, :] * y[..., 1, :, :] ** 2
    return to_spectral(np.stack([-r, r], axis=-3))


class BrusselatorCoefficients(CoefficientSet):
    """Two-species reaction-diffusion system with transport noise.

    Parameters
    ----------
    a : array (2, 2, 2) or (2, 2, 2, N, N)
        Diffusion tensors ``a[i, j, k]`` of species ``i``.
    b : array (M, 2, 2) or (M, 2, 2, N, N)
        Transport vectors ``b[n, i, :]`` of noise mode ``n`` acting on species ``i``.
    lam, mu : sequences of three scalars or (N, N) arrays
        ``(lambda_0, lambda_1, lambda_2)`` and ``(mu_0, mu_1, mu_2)`` of the affine part.
    g_family : object with ``values``, ``contract``, ``abs_values``
        Pointwise noise nonlinearity, see :class:`BoundedG` and :class:`StressorG`.
    M_growth, delta, epsilon_growth : float
        Constants of the growth envelopes ``N_1``, ``N_2``.
    """

    name = "brusselator"
    components = 2

    def __init__(self, grid, a, b, lam, mu, g_family=None, M_growth=1.0, delta=None,
                 epsilon_growth=0.1, params=None, dealias=True):
        b = np.asarray(b, dtype=float)
        super().__init__(grid, b.shape[0], params, dealias)
        a = np.asarray(a, dtype=float)
        if a.shape[:3] != (2, 2, 2) or b.shape[1:3] != (2, 2):
            raise DomainError("a must have shape (2,2,2[,N,N]) and b (M,2,2[,N,N])")
        self.a = a
        self.b = b
        self.lam = [np.asarray(x, dtype=float) for x in lam]
        self.mu = [np.asarray(x, dtype=float) for x in mu]
        if len(self.lam) != 3 or len(self.mu) != 3:
            raise DomainError("lam and mu need three entries (index 0, 1, 2)")
        for arr in [a, b, *self.lam, *self.mu]:
            if not np.all(np.isfinite(arr)):
                raise DomainError("coefficient fields must be bounded")
        self.g_family = g_family or ZeroG(self.noise_modes, 2)
        if self.g_family.modes != self.noise_modes:
            raise DomainError("g family and b disagree on the number of noise modes")
        self.constant_a = a.ndim == 3
        self.constant_b = b.ndim == 3
        self.constant_rates = all(x.ndim == 0 for x in self.lam + self.mu)
        nu = effective_min_eigenvalue(a, b)
        self.nu = np.array([float(np.min(nu[i])) for i in range(2)])
        if not (0 < epsilon_growth <= 1):
            raise DomainError("epsilon_growth must lie in (0, 1]")
        if not M_growth > 0:
            raise DomainError("M must be positive")
        self.M_growth = float(M_growth)
        self.epsilon_growth = float(epsilon_growth)
        self.delta = float(0.5 * min(self.nu)) if delta is None else float(delta)
        if not self.delta > 0:
            raise DomainError("delta must be positive")
        self._build_symbols()

    def _build_symbols(self):
        grid = self.grid
        k1, k2 = grid.wavenumbers
        if self.constant_a:
            sym = np.stack([self.a[i, 0, 0] * k1 * k1 + (self.a[i, 0, 1] + self.a[i, 1, 0]) * k1 * k2
                            + self.a[i, 1, 1] * k2 * k2 for i in range(2)])
            self._symbol = sym
        else:
            sym_a = 0.5 * (self.a + np.swapaxes(self.a, 1, 2))
            top = _sym_min_eig(sym_a[:, 0, 0], sym_a[:, 0, 1], sym_a[:, 1, 1])[1]
            cmax = np.max(top.reshape(2, -1), axis=1)
            self._symbol = cmax[:, None, None] * grid.ksq[None]
        if self.constant_b:
            self._bsym = _transport_symbols(self.b, grid)  # (M, 2, N, N)

    @property
    def R(self):
        return max(float(np.max(np.abs(l))) + float(np.max(np.abs(m))) for l, m in zip(self.lam, self.mu))

    def symbol(self, t=0.0):
        return self._symbol

    def apply_A0(self, t, u_frozen, v):
        if self.constant_a:
            return self._symbol * v
        d1, d2 = self.grid.derivative_symbols
        out = []
        for i in range(2):
            g1, g2 = _grad_physical(v[..., i, :, :], self.grid)
            f1 = self.a[i, 0, 0] * g1 + self.a[i, 0, 1] * g2
            f2 = self.a[i, 1, 0] * g1 + self.a[i, 1, 1] * g2
            out.append(-(d1 * to_spectral(f1) + d2 * to_spectral(f2)))
        return np.stack(out, axis=-3)

    def A0_remainder(self, t, u):
        if self.constant_a:
            return None
        return self._symbol * u - self.apply_A0(t, u, u)

    def apply_B0(self, t, u_frozen, v):
        if self.constant_b:
            return self._bsym * v[..., None, :, :, :]
        g1, g2 = _grad_physical(v, self.grid)
        phys = self.b[:, :, 0] * g1[..., None, :, :, :] + self.b[:, :, 1] * g2[..., None, :, :, :]
        return to_spectral(phys)

    def B0_contract(self, t, u_frozen, v, w):
        w = np.asarray(w, dtype=float)
        if self.constant_b:
            return np.tensordot(w, self._bsym, axes=([-1], [0])) * v
        beff = np.tensordot(w, self.b, axes=([-1], [0]))  # (..., 2, 2, N, N)
        g1, g2 = _grad_physical(v, self.grid)
        return to_spectral(beff[..., :, 0, :, :] * g1 + beff[..., :, 1, :, :] * g2)

    def tilde_A(self, t, u):
        if self.constant_b:
            return 0.5 * np.sum(self._bsym**2, axis=0) * u
        return super().tilde_A(t, u)

    def diffusion_hs_sq(self, t, u):
        if not self.constant_b:
            return super().diffusion_hs_sq(t, u)
        return _transport_plus_separable_hs(self._bsym, self.g_family, u, self.grid)

    def affine_reaction(self, t, u):
        """``F(u) = (lam_1 u_1 + lam_2 u_2 + lam_0, mu_1 u_1 + mu_2 u_2 + mu_0)``."""
        if self.constant_rates:
            out = np.empty_like(u)
            out[..., 0, :, :] = float(self.lam[1]) * u[..., 0, :, :] + float(self.lam[2]) * u[..., 1, :, :]
            out[..., 1, :, :] = float(self.mu[1]) * u[..., 0, :, :] + float(self.mu[2]) * u[..., 1, :, :]
            out[..., 0, 0, 0] += float(self.lam[0])
            out[..., 1, 0, 0] += float(self.mu[0])
            return out
        y = to_physical(u)
        f1 = self.lam[1] * y[..., 0, :, :] + self.lam[2] * y[..., 1, :, :] + self.lam[0]
        f2 = self.mu[1] * y[..., 0, :, :] + self.mu[2] * y[..., 1, :, :] + self.mu[0]
        return to_spectral(np.stack([f1, f2], axis=-3))

    def cubic_reaction(self, t, u):
        return _cubic_reaction_spectral(u, self.grid, self.dealias)

    def F_hat(self, t, u):
        return [self.affine_reaction(t, u), self.cubic_reaction(t, u)]

    def G(self, t, u):
        if isinstance(self.g_family, ZeroG):
            return None
        return _separable_G(self.g_family, u)

    def G_contract(self, t, u, w):
        if isinstance(self.g_family, ZeroG):
            return None
        return to_spectral(self.g_family.contract(to_physical(u), w))

    def growth_envelopes(self, y):
        """``(N_1(y), N_2(y))`` for physical values ``y`` of shape ``(2, ...)``."""
        y1, y2 = y[0], y[1]
        M, eps = self.M_growth, self.epsilon_growth
        n1 = M * (1 + y1**2) + (1 - eps) * y1**2 * y2**2
        n2 = M * (1 + (1 + y1**2) * y2**2 + np.abs(y1) * np.abs(y2) ** 3 + y1**4)
        return n1, n2

    def to_config(self):
        cfg = super().to_config()
        cfg.update({"a": self.a, "b": self.b, "lam": [x for x in self.lam], "mu": [x for x in self.mu],
                    "g": self.g_family.to_config(), "M": self.M_growth, "delta": self.delta,
                    "epsilon_growth": self.epsilon_growth})
        return cfg


# ------------------------------------------------------------ Allen-Cahn


class AllenCahnCoefficients(CoefficientSet):
    """``du - Lap u dt = (u - u^3) dt + sqrt(eps) sum_n [(b_n . grad) u + g_n(u)] dw^n`` on the torus."""

    name = "allen_cahn"
    components = 1

    def __init__(self, grid, b, g_family=None, C0=0.0, C1=0.0, params=None, dealias=True):
        b = np.asarray(b, dtype=float).reshape(-1, 2)
        super().__init__(grid, b.shape[0], params, dealias)
        self.b = b
        self.g_family = g_family or ZeroG(self.noise_modes, 1)
        if self.g_family.modes != self.noise_modes:
            raise DomainError("g family and b disagree on the number of noise modes")
        self.C0 = float(C0)
        self.C1 = float(C1)
        self._bsym = _transport_symbols(b, grid)[:, None]  # (M, 1, N, N)

    def symbol(self, t=0.0):
        return self.grid.ksq[None]

    def apply_B0(self, t, u_frozen, v):
        return self._bsym * v[..., None, :, :, :]

    def B0_contract(self, t, u_frozen, v, w):
        return np.tensordot(np.asarray(w, dtype=float), self._bsym, axes=([-1], [0])) * v

    def tilde_A(self, t, u):
        return 0.5 * np.sum(self._bsym**2, axis=0) * u

    def diffusion_hs_sq(self, t, u):
        return _transport_plus_separable_hs(self._bsym, self.g_family, u, self.grid)

    def cubic(self, t, u):
        if self.dealias:
            y = padded_physical(u, 2)
            return from_padded(-(y**3), self.grid.modes_per_dim)
        return to_spectral(-(to_physical(u) ** 3))

    def F_hat(self, t, u):
        return [u, self.cubic(t, u)]

    def G(self, t, u):
        if isinstance(self.g_family, ZeroG):
            return None
        return _separable_G(self.g_family, u)

    def G_contract(self, t, u, w):
        if isinstance(self.g_family, ZeroG):
            return None
        return to_spectral(self.g_family.contract(to_physical(u), w))

    def to_config(self):
        cfg = super().to_config()
        cfg.update({"b": self.b, "g": self.g_family.to_config(), "C0": self.C0, "C1": self.C1})
        return cfg


# ------------------------------------------------------------ Navier-Stokes


def leray_project(v):
    """Helmholtz projection of a 2-component field onto divergence-free fields."""
    if v.grid.components != 2:
        raise DomainError("the Leray projection needs a 2-component field")
    return SpectralField(v.grid, project_divergence_free(v.coeffs, v.grid), check=False)


def divergence_norm(coeffs, grid):
    div = divergence_coeffs(coeffs, grid)
    return np.sqrt(grid.volume * np.sum(np.abs(div) ** 2, axis=(-2, -1)))


class NavierStokesCoefficients(CoefficientSet):
    """Incompressible 2D Navier-Stokes with transport noise on the periodic torus.

    ``b`` has shape ``(M, 2)`` (constant vectors) or ``(M, 2, N, N)`` (fields).
    """

    name = "navier_stokes"
    components = 2

    def __init__(self, grid, nu, b, params=None, dealias=True):
        b = np.asarray(b, dtype=float)
        super().__init__(grid, b.shape[0], params, dealias)
        if not nu > 0:
            raise DomainError("viscosity must be positive")
        if not np.all(np.isfinite(b)):
            raise DomainError("b must be bounded")
        self.nu = float(nu)
        self.b = b
        self.constant_b = b.ndim == 2
        self.a_b = 0.5 * np.einsum("nj...,nk...->jk...", b, b)
        if self.constant_b:
            self._bsym = _transport_symbols(b, grid)  # (M, N, N)

    @staticmethod
    def eta(eps):
        return eps

    def symbol(self, t=0.0):
        return np.broadcast_to(self.nu * self.grid.ksq, self.grid.shape)

    def apply_A0(self, t, u_frozen, v):
        return project_divergence_free(self.nu * self.grid.ksq * v, self.grid)

    def A0_remainder(self, t, u):
        return None

    def project(self, u):
        return project_divergence_free(u, self.grid)

    def _transport(self, bvec, v):
        """``(b . grad) v`` for one transport field (constant (2,) or (2, N, N))."""
        if bvec.ndim == 1:
            return _transport_symbols(bvec, self.grid) * v
        g1, g2 = _grad_physical(v, self.grid)
        return to_spectral(bvec[0] * g1 + bvec[1] * g2)

    def apply_B0(self, t, u_frozen, v):
        if self.constant_b:
            raw = self._bsym[:, None] * v[..., None, :, :, :]
        else:
            raw = np.stack([self._transport(self.b[n], v) for n in range(self.noise_modes)], axis=-4)
        return project_divergence_free(raw, self.grid)

    def B0_contract(self, t, u_frozen, v, w):
        w = np.asarray(w, dtype=float)
        if self.constant_b:
            raw = np.tensordot(w, self._bsym, axes=([-1], [0]))[..., None, :, :] * v
        else:
            beff = np.tensordot(w, self.b, axes=([-1], [0]))
            g1, g2 = _grad_physical(v, self.grid)
            raw = to_spectral(beff[..., 0, None, :, :] * g1 + beff[..., 1, None, :, :] * g2)
        return project_divergence_free(raw, self.grid)

    def nonlinearity(self, u):
        """``-P div(u (x) u)``, pseudo-spectral, padded when ``dealias`` is set."""
        n = self.grid.modes_per_dim
        if self.dealias:
            y = padded_physical(u, 2)
            back = lambda f: from_padded(f, n)  # noqa: E731
        else:
            y = to_physical(u)
            back = to_spectral
        u1, u2 = y[..., 0, :, :], y[..., 1, :, :]
        p11, p12, p22 = back(u1 * u1), back(u1 * u2), back(u2 * u2)
        d1, d2 = self.grid.derivative_symbols
        div = np.stack([d1 * p11 + d2 * p12, d1 * p12 + d2 * p22], axis=-3)
        return -project_divergence_free(div, self.grid)

    def F_hat(self, t, u):
        return [self.nonlinearity(u)]

    def tilde_A(self, t, u):
        """``P[div(a_b grad u) - 1/2 sum_n div(b_n (x) (I-P)[(b_n . grad) u])]``."""
        grid = self.grid
        d1, d2 = grid.derivative_symbols
        k1, k2 = grid.wavenumbers
        if self.constant_b:
            a = self.a_b
            first = -(a[0, 0] * k1 * k1 + (a[0, 1] + a[1, 0]) * k1 * k2 + a[1, 1] * k2 * k2) * u
        else:
            comps = []
            for i in range(2):
                g1, g2 = _grad_physical(u[..., i, :, :], grid)
                f1 = self.a_b[0, 0] * g1 + self.a_b[0, 1] * g2
                f2 = self.a_b[1, 0] * g1 + self.a_b[1, 1] * g2
                comps.append(d1 * to_spectral(f1) + d2 * to_spectral(f2))
            first = np.stack(comps, axis=-3)
        second = np.zeros_like(first)
        for n in range(self.noise_modes):
            bn = self.b[n]
            tr = self._transport(bn, u)
            gradient_part = tr - project_divergence_free(tr, grid)
            if bn.ndim == 1:
                second = second + _transport_symbols(bn, grid) * gradient_part
            else:
                w = to_physical(gradient_part)
                comps = [d1 * to_spectral(bn[0] * w[..., i, :, :]) + d2 * to_spectral(bn[1] * w[..., i, :, :])
                         for i in range(2)]
                second = second + np.stack(comps, axis=-3)
        return project_divergence_free(first - 0.5 * second, grid)

    def to_config(self):
        cfg = super().to_config()
        cfg.update({"nu": self.nu, "b": self.b, "domain": "periodic torus (not the no-slip domain)"})
        return cfg


def _require_divergence_free(u, tol=1e-9):
    if u.grid.components != 2:
        raise PreconditionError("expected a 2-component velocity field")
    div = float(divergence_norm(u.coeffs, u.grid))
    scale = float(np.sqrt(theta_norm_sq(u.coeffs, u.grid, 1.0)))
    if div > tol * max(scale, 1e-300) and div > 1e-300:
        raise PreconditionError(f"field is not divergence-free (|div u| = {div:.3e})")


def ns_tilde_A(u, coeffs):
    """Ito-Stratonovich correction drift of the Navier-Stokes system applied to ``u``."""
    _require_divergence_free(u)
    return SpectralField(u.grid, coeffs.tilde_A(0.0, u.coeffs), check=False)


def ns_nonlinearity(u, coeffs=None):
    """``-P div(u (x) u)`` with padded (dealiased) products."""
    _require_divergence_free(u)
    if coeffs is None:
        coeffs = NavierStokesCoefficients(u.grid, 1.0, np.zeros((0, 2)))
    return SpectralField(u.grid, coeffs.nonlinearity(u.coeffs), check=False)


# ------------------------------------------------------------ linear oracle systems


class LinearCoefficients(CoefficientSet):
    """``A0 = lam I - nu Lap``; noise ``B_n u = mult_n u + (b_n . grad) u + g_n``.

    Used for analytic oracles (heat semigroup, Ornstein-Uhlenbeck). ``additive`` holds
    ``M`` spectral fields of shape ``(M, C, N, N)``.
    """

    name = "linear"
    oracle_only = True

    def __init__(self, grid, nu=0.0, lam=0.0, additive=None, mult=None, transport=None,
                 noise_modes=None, name=None, params=None, dealias=True):
        self.components = grid.components
        modes = noise_modes
        for arr in (additive, mult, transport):
            if arr is not None:
                modes = np.asarray(arr).shape[0]
        super().__init__(grid, modes or 0, params, dealias)
        if name:
            self.name = name
        self.nu = float(nu)
        self.lam = float(lam)
        self.additive = None if additive is None else np.asarray(additive, dtype=complex)
        self.mult = None if mult is None else np.asarray(mult, dtype=float)
        self.transport = None if transport is None else np.asarray(transport, dtype=float).reshape(-1, 2)
        sym = np.zeros(grid.shape) + self.lam + self.nu * grid.ksq
        if self.mult is not None or self.transport is not None:
            bs = np.zeros((self.noise_modes,) + grid.shape, dtype=complex)
            if self.mult is not None:
                bs = bs + self.mult[:, None, None, None]
            if self.transport is not None:
                bs = bs + _transport_symbols(self.transport, grid)[:, None]
            self._bsym = bs
        else:
            self._bsym = None
        self._symbol = sym

    def symbol(self, t=0.0):
        return self._symbol

    def apply_B0(self, t, u_frozen, v):
        if self._bsym is None:
            return super().apply_B0(t, u_frozen, v)
        return self._bsym * v[..., None, :, :, :]

    def B0_contract(self, t, u_frozen, v, w):
        if self._bsym is None:
            return np.zeros_like(v)
        return np.tensordot(np.asarray(w, dtype=float), self._bsym, axes=([-1], [0])) * v

    def tilde_A(self, t, u):
        if self._bsym is None:
            return np.zeros_like(u)
        return 0.5 * np.sum(self._bsym**2, axis=0) * u

    def g(self, t):
        return self.additive

    def diffusion_contract(self, t, u, w):
        w = np.asarray(w, dtype=float)
        out = None
        if self._bsym is not None:
            out = self.B0_contract(t, u, u, w)
        if self.additive is not None:
            add = np.tensordot(w, self.additive, axes=([-1], [0]))
            out = add if out is None else out + add
        if out is None:
            return np.zeros(np.broadcast_shapes(u.shape, w.shape[:-1] + (1, 1, 1)), dtype=complex)
        return out

    def to_config(self):
        cfg = super().to_config()
        cfg.update({"nu": self.nu, "lam": self.lam, "additive": None if self.additive is None else
                    np.stack([self.additive.real, self.additive.imag]),
                    "mult": self.mult, "transport": self.transport, "oracle_only": True})
        return cfg


# ------------------------------------------------------------ field-level API


def apply_drift(coeffs, t, u):
    """``-A(t,u)`` as a field."""
    return SpectralField(u.grid, coeffs.drift(t, u.coeffs), check=False)


def apply_diffusion(coeffs, t, u):
    """``[B_1(t,u), ..., B_M(t,u)]`` as a list of fields."""
    arr = coeffs.diffusion(t, u.coeffs)
    return [SpectralField(u.grid, arr[n], check=False) for n in range(coeffs.noise_modes)]


def hilbert_schmidt_norm(fields):
    """``(sum_n |B_n|_H^2)^(1/2)`` for a finite family of fields."""
    return float(np.sqrt(sum(theta_norm_sq(f.coeffs, f.grid, 0.5) for f in fields)))

"""Fields on the periodic square and the scale of Bessel-potential norms.

Coefficients use the ``norm="forward"`` FFT convention, so ``coeffs[c, 0, 0]``
is the spatial mean of component ``c`` and ``u(x) = sum_k u_k exp(i k.x)``.
With this convention the L2 inner product over the torus is

    <f, g> = L^2 * Re sum_k conj(f_k) g_k,

and the V_theta norm is ``L * sqrt(sum_k (1+|k|^2)^(2 theta - 1) |u_k|^2)``.
Arrays of shape ``(..., C, N, N)`` are accepted by the array-level helpers so
that whole batches of paths can be handled at once.
"""

from __future__ import annotations

import csv
import io
import struct
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np
import scipy.fft as sp_fft

from .errors import DegenerateInputError, DomainError

_HEADER = struct.Struct("<qdqd")


@dataclass(frozen=True)
class TorusGrid:
    """An ``N x N`` collocation grid on the square torus of side ``period``."""

    modes_per_dim: int
    period: float = 2.0 * np.pi
    components: int = 1

    def __post_init__(self):
        n = self.modes_per_dim
        if int(n) != n or n < 4 or n % 2:
            raise DomainError(f"modes_per_dim must be an even integer >= 4, got {n!r}")
        if not self.period > 0 or not np.isfinite(self.period):
            raise DomainError(f"period must be positive, got {self.period!r}")
        if int(self.components) != self.components or self.components < 1:
            raise DomainError(f"components must be a positive integer, got {self.components!r}")
        object.__setattr__(self, "modes_per_dim", int(n))
        object.__setattr__(self, "period", float(self.period))
        object.__setattr__(self, "components", int(self.components))

    @property
    def shape(self):
        return (self.components, self.modes_per_dim, self.modes_per_dim)

    @property
    def volume(self):
        return self.period**2

    @property
    def spacing(self):
        return self.period / self.modes_per_dim

    def with_components(self, components):
        return TorusGrid(self.modes_per_dim, self.period, components)

    @cached_property
    def integer_modes(self):
        """Integer wave numbers ``(k1, k2)`` in FFT order, each of shape (N, N)."""
        n = self.modes_per_dim
        k = np.fft.fftfreq(n, 1.0 / n)
        return np.meshgrid(k, k, indexing="ij")

    @cached_property
    def wavenumbers(self):
        scale = 2.0 * np.pi / self.period
        k1, k2 = self.integer_modes
        return scale * k1, scale * k2

    @cached_property
    def ksq(self):
        k1, k2 = self.wavenumbers
        return k1**2 + k2**2

    @cached_property
    def bessel_weight(self):
        return 1.0 + self.ksq

    @cached_property
    def nyquist_mask(self):
        """True where either integer wave number equals -N/2."""
        k1, k2 = self.integer_modes
        half = self.modes_per_dim // 2
        return (np.abs(k1) == half) | (np.abs(k2) == half)

    @cached_property
    def derivative_symbols(self):
        """Multipliers ``i k_j`` for first derivatives, zero on the Nyquist lines."""
        k1, k2 = self.wavenumbers
        keep = ~self.nyquist_mask
        return 1j * k1 * keep, 1j * k2 * keep

    @cached_property
    def coordinates(self):
        x = np.arange(self.modes_per_dim) * self.spacing
        return np.meshgrid(x, x, indexing="ij")

    def band_mask(self, kmax):
        """Modes with ``|k_1|, |k_2| <= kmax`` (integer units), Nyquist excluded."""
        k1, k2 = self.integer_modes
        return (np.abs(k1) <= kmax) & (np.abs(k2) <= kmax) & ~self.nyquist_mask


# ---------------------------------------------------------------- array level


def to_physical(coeffs):
    """Grid values of Hermitian coefficients (real inverse FFT over the last two axes)."""
    n = coeffs.shape[-1]
    return sp_fft.irfft2(coeffs[..., : n // 2 + 1], s=(n, n), norm="forward")


def to_spectral(values):
    """Full ``N x N`` coefficients of real grid values."""
    n = values.shape[-1]
    half = sp_fft.rfft2(values, norm="forward")
    out = np.empty(half.shape[:-1] + (n,), dtype=complex)
    out[..., : n // 2 + 1] = half
    mirror = half[..., ::-1, n // 2 - 1 : 0 : -1]
    out[..., n // 2 + 1 :] = np.conj(np.roll(mirror, 1, axis=-2))
    return out


def pad(coeffs, m):
    """Embed ``(..., N, N)`` coefficients into an ``M x M`` spectrum (Nyquist dropped)."""
    n = coeffs.shape[-1]
    h = n // 2
    out = np.zeros(coeffs.shape[:-2] + (m, m), dtype=complex)
    for rs, rd in ((slice(0, h), slice(0, h)), (slice(n - h + 1, n), slice(m - h + 1, m))):
        out[..., rd, :h] = coeffs[..., rs, :h]
        out[..., rd, m - h + 1 :] = coeffs[..., rs, n - h + 1 :]
    return out


def truncate(coeffs, n):
    """Inverse of :func:`pad`: keep the ``N x N`` band of an ``M x M`` spectrum."""
    m = coeffs.shape[-1]
    h = n // 2
    out = np.zeros(coeffs.shape[:-2] + (n, n), dtype=complex)
    for rd, rs in ((slice(0, h), slice(0, h)), (slice(n - h + 1, n), slice(m - h + 1, m))):
        out[..., rd, :h] = coeffs[..., rs, :h]
        out[..., rd, n - h + 1 :] = coeffs[..., rs, m - h + 1 :]
    return out


def padded_physical(coeffs, factor=2):
    """Physical values on a grid refined by ``factor`` (used for dealiased products)."""
    n = coeffs.shape[-1]
    m = int(round(factor * n))
    h = n // 2
    half = np.zeros(coeffs.shape[:-2] + (m, m // 2 + 1), dtype=complex)
    half[..., :h, :h] = coeffs[..., :h, :h]
    half[..., m - h + 1 :, :h] = coeffs[..., n - h + 1 :, :h]
    return sp_fft.irfft2(half, s=(m, m), norm="forward")


def from_padded(values, n):
    """Coefficients of the ``N x N`` band (Nyquist zero) of real values on a finer grid."""
    m = values.shape[-1]
    h = n // 2
    half = sp_fft.rfft2(values, norm="forward")
    band = np.zeros(half.shape[:-2] + (n, h), dtype=complex)
    band[..., :h, :] = half[..., :h, :h]
    band[..., n - h + 1 :, :] = half[..., m - h + 1 :, :h]
    out = np.zeros(band.shape[:-1] + (n,), dtype=complex)
    out[..., :h] = band
    mirror = band[..., ::-1, h - 1 : 0 : -1]
    out[..., h + 1 :] = np.conj(np.roll(mirror, 1, axis=-2))
    return out


def theta_norm_sq(coeffs, grid, theta):
    """Squared V_theta norm summed over the trailing (C, N, N) axes."""
    sq = coeffs.real**2 + coeffs.imag**2
    if theta != 0.5:
        sq *= grid.bessel_weight ** (2.0 * theta - 1.0)
    return grid.volume * np.sum(sq, axis=(-3, -2, -1))


def pairing_array(f, g, grid):
    return grid.volume * np.sum((np.conj(f) * g).real, axis=(-3, -2, -1))


def divergence_coeffs(coeffs, grid):
    d1, d2 = grid.derivative_symbols
    return d1 * coeffs[..., 0, :, :] + d2 * coeffs[..., 1, :, :]


def project_divergence_free(coeffs, grid):
    """Per-mode Leray projection ``I - k k^T / |k|^2`` on 2-component coefficients."""
    k1, k2 = grid.wavenumbers
    ksq = grid.ksq
    safe = np.where(ksq == 0, 1.0, ksq)
    dot = (k1 * coeffs[..., 0, :, :] + k2 * coeffs[..., 1, :, :]) / safe
    out = np.array(coeffs, dtype=complex, copy=True)
    out[..., 0, :, :] -= k1 * dot
    out[..., 1, :, :] -= k2 * dot
    return out


def hermitian_defect(coeffs):
    n = coeffs.shape[-1]
    idx = (-np.arange(n)) % n
    mirrored = np.conj(coeffs[..., idx[:, None], idx[None, :]])
    return float(np.max(np.abs(coeffs - mirrored))) if coeffs.size else 0.0


# ---------------------------------------------------------------- field types


class SpectralField:
    """A real vector field on a :class:`TorusGrid`, stored by its Fourier coefficients."""

    __slots__ = ("grid", "coeffs")

    def __init__(self, grid, coeffs, *, check=True):
        arr = np.array(coeffs, dtype=complex, copy=True)
        if arr.shape != grid.shape:
            raise DomainError(f"coefficient shape {arr.shape} does not match grid {grid.shape}")
        if check:
            scale = float(np.max(np.abs(arr))) if arr.size else 0.0
            if hermitian_defect(arr) > 1e-12 * max(scale, 1e-300) and scale > 0:
                raise DomainError("coefficients are not Hermitian; the field would not be real")
        arr.setflags(write=False)
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "coeffs", arr)

    def __setattr__(self, name, value):
        raise AttributeError("SpectralField is immutable")

    def __repr__(self):
        return f"SpectralField(N={self.grid.modes_per_dim}, C={self.grid.components}, |u|_H={h_norm(self):.6g})"

    @classmethod
    def from_physical(cls, grid, values):
        values = np.asarray(values, dtype=float)
        if values.shape == grid.shape[1:] and grid.components == 1:
            values = values[None]
        if values.shape != grid.shape:
            raise DomainError(f"physical shape {values.shape} does not match grid {grid.shape}")
        return cls(grid, to_spectral(values), check=False)

    @classmethod
    def zeros(cls, grid):
        return cls(grid, np.zeros(grid.shape, dtype=complex), check=False)

    @classmethod
    def single_mode(cls, grid, k, amplitude=1.0, component=0):
        """The real field ``amplitude * cos(k . x)`` (or its sine for imaginary amplitude).

        ``k`` is an integer wave vector. The coefficient ``amplitude / 2`` is placed at
        ``k`` and its conjugate at ``-k``; at ``k = 0`` the constant ``Re(amplitude)``.
        """
        n = grid.modes_per_dim
        c = np.zeros(grid.shape, dtype=complex)
        i, j = int(k[0]) % n, int(k[1]) % n
        if i == 0 and j == 0:
            c[component, 0, 0] = complex(amplitude).real
        else:
            c[component, i, j] += amplitude / 2.0
            c[component, (-i) % n, (-j) % n] += np.conj(amplitude) / 2.0
        return cls(grid, c)

    @property
    def physical(self):
        return to_physical(self.coeffs)

    def _binary(self, other, op):
        if isinstance(other, SpectralField):
            if other.grid != self.grid:
                raise DomainError("fields live on different grids")
            other = other.coeffs
        return SpectralField(self.grid, op(self.coeffs, other), check=False)

    def __add__(self, other):
        return self._binary(other, np.add)

    def __sub__(self, other):
        return self._binary(other, np.subtract)

    def __mul__(self, scalar):
        if isinstance(scalar, SpectralField):
            raise TypeError("use pointwise products on physical values")
        return SpectralField(self.grid, self.coeffs * float(scalar), check=False)

    __rmul__ = __mul__

    def __neg__(self):
        return SpectralField(self.grid, -self.coeffs, check=False)

    def component(self, i):
        g = self.grid.with_components(1)
        return SpectralField(g, self.coeffs[i : i + 1], check=False)


def random_field(grid, rng, *, kmax=None, amplitude=1.0, decay=0.0, zero_mean=False,
                 divergence_free=False):
    """A random real field, band-limited to ``|k_j| <= kmax`` (default ``N/4 - 1``).

    ``decay`` multiplies mode ``k`` by ``(1+|k|^2)^(-decay/2)``; the result is rescaled
    to root-mean-square ``amplitude`` (H-norm ``amplitude * L``).
    """
    n = grid.modes_per_dim
    kmax = n // 4 - 1 if kmax is None else int(kmax)
    values = rng.standard_normal(grid.shape)
    c = to_spectral(values) * grid.band_mask(kmax)
    if decay:
        c = c * grid.bessel_weight ** (-decay / 2.0)
    if zero_mean:
        c[..., 0, 0] = 0.0
    if divergence_free:
        c = project_divergence_free(c, grid)
    rms = np.sqrt(np.sum(np.abs(c) ** 2))
    if rms > 0:
        c = c * (amplitude / rms)
    return SpectralField(grid, c, check=False)


# ---------------------------------------------------------------- norms


def _check_theta(theta):
    if not 0.0 <= theta <= 1.0:
        raise DomainError(f"theta must lie in [0, 1], got {theta!r}")


def norm_theta(field, theta):
    """The V_theta norm (Bessel potential order ``2 theta - 1``)."""
    _check_theta(theta)
    return float(np.sqrt(theta_norm_sq(field.coeffs, field.grid, theta)))


def h_norm(field):
    return norm_theta(field, 0.5)


def v_norm(field):
    return norm_theta(field, 1.0)


def vstar_norm(field):
    return norm_theta(field, 0.0)


def pairing(f, g):
    """L2 inner product of two fields on the same grid."""
    if f.grid != g.grid:
        raise DomainError("fields live on different grids")
    return float(pairing_array(f.coeffs, g.coeffs, f.grid))


def physical_l2_norm(field):
    """Direct quadrature of the L2 norm over grid points."""
    vals = field.physical
    return float(np.sqrt(np.sum(vals**2) * field.grid.spacing**2))


def verify_interpolation(field, theta):
    """``|v|_theta - |v|_{V*}^(1-theta) |v|_V^theta``; nonpositive up to rounding."""
    _check_theta(theta)
    if not np.any(field.coeffs):
        raise DegenerateInputError("interpolation residual is undefined for the zero field")
    lhs = norm_theta(field, theta)
    rhs = vstar_norm(field) ** (1.0 - theta) * v_norm(field) ** theta
    return lhs - rhs


# ---------------------------------------------------------------- trajectories


class Trajectory:
    """Fields sampled on a uniform time grid ``0, dt, 2 dt, ...``.

    ``data`` has shape ``(S, C, N, N)``; ``flags`` is a tuple of strings such as
    ``"blown_up"``; ``provenance`` records what produced the trajectory.
    """

    def __init__(self, grid, times, data, dt=None, flags=(), provenance=None):
        times = np.array(times, dtype=float)
        data = np.array(data, dtype=complex)
        if times.ndim != 1 or times.size == 0:
            raise DomainError("a trajectory needs at least one time")
        if data.shape != (times.size,) + grid.shape:
            raise DomainError(f"data shape {data.shape} does not match {times.size} x {grid.shape}")
        if times[0] != 0.0:
            raise DomainError("times must start at 0")
        if times.size > 1:
            steps = np.diff(times)
            dt = float(steps[0]) if dt is None else float(dt)
            if dt <= 0 or np.max(np.abs(steps - dt)) > 1e-12 * dt * max(1, times.size):
                raise DomainError("times must be uniformly spaced with step dt")
        else:
            dt = float(dt) if dt is not None else 0.0
        times.setflags(write=False)
        data.setflags(write=False)
        self.grid = grid
        self.times = times
        self.data = data
        self.dt = dt
        self.flags = tuple(flags)
        self.provenance = dict(provenance or {})

    def __len__(self):
        return self.times.size

    def __getitem__(self, i):
        return SpectralField(self.grid, self.data[i], check=False)

    @property
    def states(self):
        return [self[i] for i in range(len(self))]

    @property
    def final(self):
        return self[len(self) - 1]

    @property
    def horizon(self):
        return float(self.times[-1])

    @property
    def blown_up(self):
        return "blown_up" in self.flags

    def norms(self, theta):
        return np.sqrt(theta_norm_sq(self.data, self.grid, theta))

    @classmethod
    def constant(cls, field, T, steps):
        times = np.linspace(0.0, T, steps + 1)
        data = np.broadcast_to(field.coeffs, (steps + 1,) + field.grid.shape)
        return cls(field.grid, times, data)


def _trapezoid(values, dt):
    if values.shape[0] < 2:
        return np.zeros(values.shape[1:])
    return dt * (0.5 * values[0] + np.sum(values[1:-1], axis=0) + 0.5 * values[-1])


def mr_norm_from_norms(h_sq, v_sq, dt):
    """MR norm from per-time squared H and V norms (time along axis 0)."""
    return np.sqrt(np.max(h_sq, axis=0)) + np.sqrt(_trapezoid(v_sq, dt))


def mr_norm(traj):
    """``max_t |u|_H + (int_0^T |u|_V^2 dt)^(1/2)`` with trapezoidal quadrature."""
    if traj is None or len(traj) == 0:
        raise DomainError("empty trajectory")
    h_sq = theta_norm_sq(traj.data, traj.grid, 0.5)
    v_sq = theta_norm_sq(traj.data, traj.grid, 1.0)
    return float(mr_norm_from_norms(h_sq, v_sq, traj.dt))


def mr_distance(a, b):
    if a.grid != b.grid or len(a) != len(b):
        raise DomainError("trajectories are not comparable")
    diff = Trajectory(a.grid, a.times, a.data - b.data, dt=a.dt)
    return mr_norm(diff)


def _check_beta_hat(beta_hat):
    if not 0.5 < beta_hat <= 1.0:
        raise DomainError(f"beta_hat must lie in (1/2, 1], got {beta_hat!r}")


def critical_space_norm(traj, beta_hat):
    """The ``L^p(0,T; V_beta_hat)`` norm with ``p = 2 / (2 beta_hat - 1)``."""
    _check_beta_hat(beta_hat)
    p = 2.0 / (2.0 * beta_hat - 1.0)
    pointwise = traj.norms(beta_hat)
    return float(_trapezoid(pointwise**p, traj.dt) ** (1.0 / p))


@dataclass(frozen=True)
class CriticalBound:
    lhs: float
    rhs: float
    holds: bool

    @property
    def slack(self):
        return self.rhs - self.lhs


def check_critical_interpolation(traj, beta_hat, rtol=1e-8):
    """Compare the critical-space norm with ``|u|_{L^inf H}^(2-2b) |u|_{L^2 V}^(2b-1)``."""
    lhs = critical_space_norm(traj, beta_hat)
    sup_h = float(np.max(traj.norms(0.5)))
    l2v = float(np.sqrt(_trapezoid(traj.norms(1.0) ** 2, traj.dt)))
    rhs = sup_h ** (2.0 - 2.0 * beta_hat) * l2v ** (2.0 * beta_hat - 1.0)
    return CriticalBound(lhs, rhs, bool(lhs <= rhs * (1.0 + rtol) + 1e-300))


# ---------------------------------------------------------------- serialization


def _as_binary_stream(target, mode):
    if isinstance(target, (str, Path)):
        return open(target, mode), True
    return target, False


def write_field(target, field, time=0.0):
    """Write one snapshot: header ``<q d q d`` then float64 little-endian grid values."""
    stream, owned = _as_binary_stream(target, "wb")
    try:
        g = field.grid
        stream.write(_HEADER.pack(g.modes_per_dim, g.period, g.components, float(time)))
        stream.write(np.ascontiguousarray(field.physical, dtype="<f8").tobytes())
    finally:
        if owned:
            stream.close()


def _read_snapshot(stream):
    head = stream.read(_HEADER.size)
    if not head:
        return None
    if len(head) != _HEADER.size:
        raise DomainError("truncated field header")
    n, period, comps, time = _HEADER.unpack(head)
    grid = TorusGrid(n, period, comps)
    count = comps * n * n
    payload = stream.read(8 * count)
    if len(payload) != 8 * count:
        raise DomainError("truncated field payload")
    values = np.frombuffer(payload, dtype="<f8").reshape(grid.shape)
    return SpectralField.from_physical(grid, values), time


def read_field(source):
    stream, owned = _as_binary_stream(source, "rb")
    try:
        snap = _read_snapshot(stream)
    finally:
        if owned:
            stream.close()
    if snap is None:
        raise DomainError("empty field file")
    return snap


def write_trajectory(target, traj):
    """Concatenated snapshots, one per time."""
    stream, owned = _as_binary_stream(target, "wb")
    try:
        for i, t in enumerate(traj.times):
            write_field(stream, traj[i], t)
    finally:
        if owned:
            stream.close()


def read_trajectory(source):
    stream, owned = _as_binary_stream(source, "rb")
    try:
        fields, times = [], []
        while True:
            snap = _read_snapshot(stream)
            if snap is None:
                break
            fields.append(snap[0])
            times.append(snap[1])
    finally:
        if owned:
            stream.close()
    if not fields:
        raise DomainError("empty trajectory file")
    grid = fields[0].grid
    return Trajectory(grid, times, np.stack([f.coeffs for f in fields]))


def field_to_csv(field, time=0.0):
    """CSV text: a ``#N,period,components,time`` line, then one row per grid value."""
    g = field.grid
    out = io.StringIO()
    out.write(f"#{g.modes_per_dim},{g.period!r},{g.components},{float(time)!r}\n")
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(["component", "i", "j", "value"])
    vals = field.physical
    for c in range(g.components):
        for i in range(g.modes_per_dim):
            for j in range(g.modes_per_dim):
                writer.writerow([c, i, j, repr(float(vals[c, i, j]))])
    return out.getvalue()


def field_from_csv(text):
    lines = text.splitlines()
    if not lines or not lines[0].startswith("#"):
        raise DomainError("missing CSV metadata line")
    n, period, comps, time = lines[0][1:].split(",")
    grid = TorusGrid(int(n), float(period), int(comps))
    values = np.zeros(grid.shape)
    rows = csv.reader(lines[2:])
    for c, i, j, v in rows:
        values[int(c), int(i), int(j)] = float(v)
    return SpectralField.from_physical(grid, values), float(time)

"""Reproducible Brownian increments.

Each path draws from its own Philox stream keyed by ``(seed, path)``. Within a path
the draw for ``(step, mode)`` sits at stream position ``step * M + mode``, so a path can
be regenerated, extended or refined without touching any other path.
"""

from __future__ import annotations

import numpy as np

from .errors import DomainError

_TWO_PI = 2.0 * np.pi
_MASK64 = (1 << 64) - 1


def _uniform53(bitgen, n):
    """``n`` uniforms in ``(0, 1]`` built from the top 53 bits of raw 64-bit words."""
    raw = bitgen.random_raw(n)
    return ((raw >> np.uint64(11)).astype(np.float64) + 1.0) * (1.0 / 9007199254740992.0)


def standard_normals(seed, path, count):
    """Box-Muller (cosine branch) standard normals for one path."""
    bitgen = np.random.Philox(key=np.array([int(seed) & _MASK64, int(path) & _MASK64], dtype=np.uint64))
    u = _uniform53(bitgen, 2 * count).reshape(count, 2)
    return np.sqrt(-2.0 * np.log(u[:, 0])) * np.cos(_TWO_PI * u[:, 1])


class NoisePath:
    """Increments ``dW`` of an ``M``-dimensional Brownian motion on a uniform grid.

    ``increments`` has shape ``(steps, M)`` and variance ``dt`` per entry.
    """

    __slots__ = ("dt", "steps", "modes", "seed", "path", "increments")

    def __init__(self, dt, steps, modes, seed, path=0, increments=None):
        if not dt > 0:
            raise DomainError(f"dt must be positive, got {dt!r}")
        if steps < 0 or modes < 0:
            raise DomainError("steps and modes must be non-negative")
        object.__setattr__(self, "dt", float(dt))
        object.__setattr__(self, "steps", int(steps))
        object.__setattr__(self, "modes", int(modes))
        object.__setattr__(self, "seed", int(seed))
        object.__setattr__(self, "path", int(path))
        if increments is None:
            increments = np.sqrt(self.dt) * standard_normals(seed, path, self.steps * self.modes)
        inc = np.array(increments, dtype=float).reshape(self.steps, self.modes)
        inc.setflags(write=False)
        object.__setattr__(self, "increments", inc)

    def __setattr__(self, name, value):
        raise AttributeError("NoisePath is immutable")

    def __repr__(self):
        return f"NoisePath(dt={self.dt}, steps={self.steps}, M={self.modes}, seed={self.seed}, path={self.path})"

    @classmethod
    def generate(cls, dt, steps, modes, seed, path=0):
        return cls(dt, steps, modes, seed, path)

    def regenerate(self):
        return NoisePath(self.dt, self.steps, self.modes, self.seed, self.path)

    @property
    def horizon(self):
        return self.dt * self.steps

    @property
    def times(self):
        return self.dt * np.arange(self.steps + 1)

    @property
    def W(self):
        """Brownian path values at the grid times, starting from 0."""
        out = np.zeros((self.steps + 1, self.modes))
        np.cumsum(self.increments, axis=0, out=out[1:])
        return out

    def coarsen(self, factor):
        """Path on the grid ``factor * dt`` obtained by summing consecutive increments."""
        factor = int(factor)
        if factor < 1 or self.steps % factor:
            raise DomainError(f"cannot coarsen {self.steps} steps by {factor}")
        inc = self.increments.reshape(self.steps // factor, factor, self.modes).sum(axis=1)
        return NoisePath(self.dt * factor, self.steps // factor, self.modes, self.seed, self.path, inc)


def noise_batch(dt, steps, modes, seed, paths, first_path=0):
    """Increments for paths ``first_path, ..., first_path + paths - 1`` as ``(P, steps, M)``."""
    out = np.empty((int(paths), int(steps), int(modes)))
    scale = np.sqrt(float(dt))
    for i in range(int(paths)):
        out[i] = scale * standard_normals(seed, first_path + i, steps * modes).reshape(steps, modes)
    return out

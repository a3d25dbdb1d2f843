"""Piecewise-constant controls ``psi in L^2(0,T; l^2)`` truncated to ``M`` coordinates."""

from __future__ import annotations

import numpy as np

from .errors import DomainError


class Control:
    """``values[j]`` is the control on ``[j dt, (j+1) dt)``; ``cost = 1/2 sum_j dt |psi_j|^2``."""

    __slots__ = ("dt", "values", "cost")

    def __init__(self, dt, values):
        if not dt > 0:
            raise DomainError(f"control dt must be positive, got {dt!r}")
        vals = np.array(values, dtype=float)
        if vals.ndim == 1:
            vals = vals[:, None]
        if vals.ndim != 2:
            raise DomainError(f"control values must be (steps, M), got shape {vals.shape}")
        if not np.all(np.isfinite(vals)):
            raise DomainError("control values must be finite")
        vals.setflags(write=False)
        object.__setattr__(self, "dt", float(dt))
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "cost", self._cost())

    def _cost(self):
        return 0.5 * self.dt * float(np.sum(self.values**2))

    def __setattr__(self, name, value):
        raise AttributeError("Control is immutable")

    def __repr__(self):
        return f"Control(dt={self.dt}, steps={self.steps}, M={self.modes}, cost={self.cost:.6g})"

    @classmethod
    def zeros(cls, dt, steps, modes):
        return cls(dt, np.zeros((int(steps), int(modes))))

    @classmethod
    def from_function(cls, dt, steps, func):
        """Sample ``func(t)`` at the left end of each interval."""
        return cls(dt, np.array([np.atleast_1d(func(j * dt)) for j in range(int(steps))]))

    @property
    def steps(self):
        return self.values.shape[0]

    @property
    def modes(self):
        return self.values.shape[1]

    @property
    def horizon(self):
        return self.dt * self.steps

    @property
    def l2_norm(self):
        """``|psi|_{L^2(0,T; l^2)}``."""
        return float(np.sqrt(2.0 * self.cost))

    @property
    def is_zero(self):
        return not np.any(self.values)

    def recompute_cost(self):
        return self._cost()

    def scaled(self, factor):
        return Control(self.dt, factor * self.values)

    def expand(self, dt, steps=None):
        """Values on a finer solver grid ``dt`` (the control step must be a multiple of it)."""
        ratio = self.dt / float(dt)
        r = int(round(ratio))
        if r < 1 or abs(ratio - r) > 1e-9 * max(1.0, ratio):
            raise DomainError(f"control step {self.dt} is not a multiple of solver step {dt}")
        out = np.repeat(self.values, r, axis=0)
        if steps is not None and out.shape[0] != int(steps):
            raise DomainError(f"control covers {out.shape[0]} solver steps, expected {steps}")
        return out

    def to_dict(self):
        return {"dt": self.dt, "values": self.values.tolist(), "cost": self.cost}

    @classmethod
    def from_dict(cls, d):
        return cls(d["dt"], d["values"])

"""Event functionals on trajectories.

An event is ``{statistic(u) >= threshold}`` where the statistic reduces a pointwise
quantity over the discrete time grid, either by a running maximum (``sup``) or by
taking the terminal value. Monitoring is discrete: only solver steps are inspected.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import DomainError
from .spectral import theta_norm_sq


class Event:
    kind = "abstract"
    reduce = "sup"

    def __init__(self, threshold=0.0):
        if not math.isfinite(threshold):
            raise DomainError("event threshold must be finite")
        self.threshold = float(threshold)

    def pointwise(self, u, grid):
        """Statistic of a batch of states ``(..., C, N, N)`` at one time, shape ``(...)``."""
        raise NotImplementedError

    def statistic(self, data, grid):
        """Reduce a stack ``(..., S, C, N, N)`` over its time axis."""
        vals = self.pointwise(data, grid)
        return vals[..., -1] if self.reduce == "terminal" else np.max(vals, axis=-1)

    def occurs(self, data, grid):
        return self.statistic(data, grid) >= self.threshold

    def deficit(self, stat):
        """Amount by which the statistic misses the threshold (0 when the event holds)."""
        return np.maximum(self.threshold - stat, 0.0)

    def monitor(self, grid, paths):
        return EventMonitor(self, grid, paths)

    def with_threshold(self, threshold):
        cfg = self.to_config()
        cfg["threshold"] = threshold
        return event_from_config(cfg)

    def to_config(self):
        return {"kind": self.kind, "threshold": self.threshold}

    def __repr__(self):
        return f"{type(self).__name__}({self.to_config()})"


class AlwaysTrue(Event):
    kind = "always"

    def __init__(self, threshold=0.0):
        super().__init__(0.0)

    def pointwise(self, u, grid):
        return np.full(u.shape[:-3], np.inf)


class TerminalNorm(Event):
    """``|u_c(T)|_theta >= threshold`` (all components when ``component`` is None)."""

    kind = "terminal_norm"
    reduce = "terminal"

    def __init__(self, threshold, component=None, theta=0.5):
        super().__init__(threshold)
        self.component = component
        self.theta = float(theta)

    def pointwise(self, u, grid):
        if self.component is not None:
            u = u[..., self.component:self.component + 1, :, :]
        return np.sqrt(theta_norm_sq(u, grid, self.theta))

    def to_config(self):
        return dict(super().to_config(), component=self.component, theta=self.theta)


class SupNorm(TerminalNorm):
    """``sup_t |u_c(t)|_theta >= threshold``."""

    kind = "sup_norm"
    reduce = "sup"


class MeanExceedance(Event):
    """``sup_t <u_c(t)> >= threshold`` with ``<.>`` the spatial mean (``|<.>|`` if absolute)."""

    kind = "mean_exceedance"

    def __init__(self, threshold, component=0, absolute=False, terminal=False):
        super().__init__(threshold)
        self.component = int(component)
        self.absolute = bool(absolute)
        self.terminal = bool(terminal)
        self.reduce = "terminal" if terminal else "sup"

    def pointwise(self, u, grid):
        m = u[..., self.component, 0, 0].real
        return np.abs(m) if self.absolute else m

    def to_config(self):
        return dict(super().to_config(), component=self.component, absolute=self.absolute,
                    terminal=self.terminal)


class EventMonitor:
    """Streaming version of ``Event.statistic`` for use as an integrator observer."""

    def __init__(self, event, grid, paths):
        self.event = event
        self.grid = grid
        self.value = np.full(int(paths), -np.inf)

    def __call__(self, n, t, u, active):
        cur = self.event.pointwise(u, self.grid)
        if self.event.reduce == "terminal":
            self.value = cur
        else:
            self.value = np.maximum(self.value, cur)

    def hits(self):
        return self.value >= self.event.threshold


EVENTS = {cls.kind: cls for cls in (AlwaysTrue, TerminalNorm, SupNorm, MeanExceedance)}


def event_from_config(cfg):
    cfg = dict(cfg)
    kind = cfg.pop("kind", None)
    if kind not in EVENTS:
        raise DomainError(f"unknown event kind {kind!r}; choose from {sorted(EVENTS)}")
    try:
        return EVENTS[kind](**cfg)
    except TypeError as exc:
        raise DomainError(f"bad event config for {kind}: {exc}") from None

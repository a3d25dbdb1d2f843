"""Explicit Gronwall constants for the controlled Brusselator.

``C1`` bounds ``sup |u_1|^2 + int |grad u_1|^2 + int |u_1 u_2|^2`` and ``C2`` bounds
``sup |u_2|^2 + int |grad u_2|^2``. Both grow doubly exponentially, so everything is
kept as a logarithm until the final comparison.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DomainError


def _log_add(a, b):
    if a == -math.inf:
        return b
    if b == -math.inf:
        return a
    hi, lo = max(a, b), min(a, b)
    return hi + math.log1p(math.exp(lo - hi))


def _log(x):
    return math.log(x) if x > 0 else -math.inf


@dataclass(frozen=True)
class BrusselatorConstants:
    R: float
    M: float
    delta: float
    epsilon: float
    period: float

    @property
    def kappa(self):
        return self.delta / (2.0 + 2.0 * self.M)

    @property
    def ladyzhenskaya(self):
        return math.sqrt(2.0 + self.period**-2)

    @property
    def C_kappa(self):
        return self.ladyzhenskaya**2 / (4.0 * self.kappa)

    @property
    def C_kappa_M(self):
        return (1.0 + self.M) * self.C_kappa

    @property
    def C_RMk(self):
        return 2.0 * self.R + self.M * (1.0 + self.kappa) + self.kappa

    @property
    def C_delta(self):
        return max(2.0, 2.0 / self.delta)

    @property
    def C_delta_eps(self):
        return max(2.0, 1.0 / self.delta, 1.0 / self.epsilon)

    @classmethod
    def from_coeffs(cls, coeffs):
        return cls(coeffs.R, coeffs.M_growth, coeffs.delta, coeffs.epsilon_growth, coeffs.grid.period)


def log_C1(k, h1_sq, T, psi_sq):
    pre = k.C_delta_eps * (0.5 * h1_sq + (k.M + k.R) * T)
    return _log(pre) + 2.0 * (2.0 * k.R + k.M) * T + psi_sq


def log_bound_terms(k, h1_sq, h2_sq, T, psi_sq):
    """``(log C1, log C2)`` for initial squared norms ``h1_sq``, ``h2_sq`` and ``|psi|^2_{L^2}``."""
    if T < 0 or psi_sq < 0 or h1_sq < 0 or h2_sq < 0:
        raise DomainError("T, |psi|^2 and the initial norms must be non-negative")
    lc1 = log_C1(k, h1_sq, T, psi_sq)
    c1 = math.exp(lc1) if lc1 < 700 else math.inf
    # prefactor 1/2|u02|^2 + M C1^2 (1+T) + R T, in log space
    lpre = _log_add(_log(0.5 * h2_sq + k.R * T), _log(k.M * (1.0 + T)) + 2.0 * lc1)
    expo = 2.0 * k.C_RMk * T + psi_sq + (2.0 * k.C_kappa_M * c1 if math.isfinite(c1) else math.inf)
    lc2 = _log(k.C_delta) + lpre + expo
    return lc1, lc2


def log_mr_bound(k, h1_sq, h2_sq, T, psi_sq):
    """``log[(1 + sqrt(1+T)) sqrt(C1 + C2)]``: sup-H plus L^2(V) norm, ``|u|_V^2 = |u|^2 + |grad u|^2``."""
    lc1, lc2 = log_bound_terms(k, h1_sq, h2_sq, T, psi_sq)
    return math.log(1.0 + math.sqrt(1.0 + T)) + 0.5 * _log_add(lc1, lc2)


def skeleton_bound(coeffs, x, T, psi_sq):
    """``log`` of the MR bound for the skeleton started at the field ``x``."""
    h = x.coeffs
    vol = x.grid.volume
    h1 = vol * float(np.sum(np.abs(h[0]) ** 2))
    h2 = vol * float(np.sum(np.abs(h[1]) ** 2))
    return log_mr_bound(BrusselatorConstants.from_coeffs(coeffs), h1, h2, T, psi_sq)

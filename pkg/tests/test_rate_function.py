import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from ldp_lab.coefficients import LinearCoefficients
from ldp_lab.control import Control
from ldp_lab.errors import DomainError
from ldp_lab.events import AlwaysTrue, MeanExceedance, SupNorm, TerminalNorm
from ldp_lab.integrators import SolverConfig, solve_skeleton
from ldp_lab.presets import make_preset
from ldp_lab.rate import (
    RateQuery,
    evaluate_rate,
    lq_oracle,
    ou_exceedance_oracle,
    rate_over_event,
    replay,
)
from ldp_lab.spectral import SpectralField, random_field


def discrete_lq(lam, sigma, y, T, steps):
    """Minimum-norm control of the implicit Euler recursion, solved as a least-norm problem."""
    dt = T / steps
    c = dt * sigma * (1 + lam * dt) ** -np.arange(steps, 0, -1.0)
    return 0.5 * dt * y * y / float(np.dot(c, c))


def ou_target(grid, y):
    z = np.zeros(grid.shape, complex)
    z[0, 0, 0] = y
    return SpectralField(grid, z)


@pytest.fixture(scope="module")
def ou():
    c = make_preset("ou_scalar")
    return c, SpectralField.zeros(c.grid)


def lq_query(T=1.0, y=1.0, grid=None, **kw):
    kw.setdefault("grad_mode", "adjoint_linear")
    kw.setdefault("control_dt", T / 40)
    return RateQuery(T=T, solver=SolverConfig(dt=T / 1000), target=ou_target(grid, y), **kw)


class TestOracle:
    def test_zero_target(self):
        assert lq_oracle(1.0, 1.0, 0.0, 1.0) == 0.0

    def test_long_horizon_limit(self):
        assert lq_oracle(1.0, 1.0, 1.0, 50.0) == pytest.approx(1.0, rel=1e-15)
        assert discrete_lq(1.0, 1.0, 1.0, 50.0, 200_000) == pytest.approx(1.0, rel=1e-3)

    def test_sigma_doubling(self):
        assert lq_oracle(0.7, 2.0, 1.3, 0.9) == pytest.approx(lq_oracle(0.7, 1.0, 1.3, 0.9) / 4, rel=1e-14)

    @pytest.mark.parametrize("args", [(0.0, 1.0, 1.0, 1.0), (-1.0, 1.0, 1.0, 1.0), (1.0, 1.0, 1.0, 0.0),
                                      (1.0, 0.0, 1.0, 1.0)])
    def test_domain(self, args):
        with pytest.raises(DomainError):
            lq_oracle(*args)

    @given(st.floats(0.1, 5.0), st.floats(0.1, 5.0), st.floats(-3.0, 3.0), st.floats(0.2, 4.0))
    def test_matches_dense_discrete_solve(self, lam, sigma, y, T):
        assert discrete_lq(lam, sigma, y, T, 20_000) == pytest.approx(lq_oracle(lam, sigma, y, T), rel=1e-3, abs=1e-12)

    def test_exceedance_oracle_is_minimum(self):
        val, t = ou_exceedance_oracle(1.0, 1.0, 1.0, 1.0)
        assert t == pytest.approx(1.0)
        assert val == pytest.approx(lq_oracle(1.0, 1.0, 1.0, 1.0))


class TestControl:
    @given(st.lists(st.floats(-10, 10), min_size=1, max_size=30), st.floats(1e-4, 1.0))
    def test_cost_invariants(self, vals, dt):
        c = Control(dt, vals)
        assert c.cost >= 0
        assert (c.cost == 0) == c.is_zero
        assert abs(c.cost - c.recompute_cost()) <= 1e-12 * max(1.0, c.cost)
        assert c.l2_norm == pytest.approx(math.sqrt(2 * c.cost))

    def test_expand(self):
        c = Control(0.1, [[1.0], [2.0]])
        np.testing.assert_array_equal(c.expand(0.05, 4)[:, 0], [1, 1, 2, 2])
        with pytest.raises(DomainError):
            c.expand(0.03)

    def test_round_trip_and_immutable(self):
        c = Control(0.1, np.arange(6.0).reshape(3, 2))
        d = Control.from_dict(c.to_dict())
        assert np.array_equal(d.values, c.values) and d.cost == c.cost
        with pytest.raises(AttributeError):
            c.cost = 0.0

    @pytest.mark.parametrize("args", [(0.0, [1.0]), (0.1, [[[1.0]]]), (0.1, [math.nan])])
    def test_rejects(self, args):
        with pytest.raises(DomainError):
            Control(*args)


class TestQuery:
    @pytest.mark.parametrize("kw", [dict(tol=0.0), dict(penalties=(10.0, 5.0)), dict(penalties=()),
                                    dict(grad_mode="newton"), dict(control_dt=0.3)])
    def test_rejects(self, ou, kw):
        c, _ = ou
        with pytest.raises(DomainError):
            RateQuery(T=1.0, solver=SolverConfig(dt=1e-2), target=ou_target(c.grid, 1.0), **kw)

    def test_needs_target(self, ou):
        c, x = ou
        with pytest.raises(DomainError):
            evaluate_rate(c, x, RateQuery(T=1.0, solver=SolverConfig(dt=1e-2)))


class TestEvaluateRate:
    def test_free_target(self):
        b = make_preset("brusselator", modes_per_dim=16)
        x = random_field(b.grid, np.random.default_rng(0), amplitude=0.5)
        cfg = SolverConfig(dt=1e-3)
        end = solve_skeleton(b, x, None, 0.1, cfg).final
        res = evaluate_rate(b, x, RateQuery(T=0.1, solver=cfg, target=end))
        assert res.value <= 1e-8 and res.converged and res.control.is_zero

    @pytest.mark.parametrize("grad_mode", ["adjoint_linear", "finite_difference"])
    def test_lq(self, ou, grad_mode):
        c, x = ou
        q = lq_query(grid=c.grid, grad_mode=grad_mode, control_dt=1 / 20)
        res = evaluate_rate(c, x, q)
        assert res.converged and res.mismatch <= q.tol
        assert res.value == pytest.approx(lq_oracle(1.0, 1.0, 1.0, 1.0), rel=0.02)
        assert res.value == res.control.cost
        assert replay(c, x, res, q) <= q.tol

    def test_unreachable(self, ou):
        c, x = ou
        frozen = LinearCoefficients(c.grid, lam=1.0, additive=np.zeros((1,) + c.grid.shape))
        q = RateQuery(T=1.0, solver=SolverConfig(dt=1e-2), target=ou_target(c.grid, 1.0))
        res = evaluate_rate(frozen, x, q)
        assert res.value == math.inf and not res.converged
        assert res.to_dict()["value"] == "inf"

    def test_max_iters_monotone(self, ou):
        c, x = ou
        vals = [evaluate_rate(c, x, lq_query(grid=c.grid, max_iters=k)).value for k in (2, 5, 20, 100, 2000)]
        assert all(b <= a for a, b in zip(vals, vals[1:]))
        assert math.isfinite(vals[-1])

    def test_scaling_law(self, ou):
        c, x = ou
        one = evaluate_rate(c, x, lq_query(grid=c.grid, y=1.0)).value
        three = evaluate_rate(c, x, lq_query(grid=c.grid, y=3.0)).value
        assert three / one == pytest.approx(9.0, rel=0.01)

    @pytest.mark.parametrize("offset,zero", [(5e-4, True), (5e-2, False)])
    def test_zero_cost_characterization(self, ou, offset, zero):
        c, x = ou
        # the H-norm of a mean-mode field on the unit torus equals its mean
        res = evaluate_rate(c, x, lq_query(grid=c.grid, y=offset))
        assert (res.value == 0.0) is zero
        assert res.converged


class TestRateOverEvent:
    def test_always_true(self, ou):
        c, x = ou
        ev = AlwaysTrue()
        res = rate_over_event(c, x, ev, RateQuery(T=1.0, solver=SolverConfig(dt=1e-2), event=ev))
        assert res.value == 0.0 and res.converged

    def test_sup_norm_nonnegative_threshold(self, ou):
        c, x = ou
        ev = SupNorm(0.0)
        res = rate_over_event(c, x, ev, RateQuery(T=1.0, solver=SolverConfig(dt=1e-2), event=ev))
        assert res.value == 0.0

    def test_ou_exceedance(self, ou):
        c, x = ou
        ev = MeanExceedance(1.0)
        q = RateQuery(T=1.0, solver=SolverConfig(dt=1e-3), event=ev, control_dt=1 / 40,
                      grad_mode="adjoint_linear", tol=1e-4)
        res = rate_over_event(c, x, ev, q)
        assert res.converged
        assert res.value == pytest.approx(ou_exceedance_oracle(1.0, 1.0, 1.0, 1.0)[0], rel=0.05)
        assert replay(c, x, res, q, ev) <= q.tol

    def test_brusselator_terminal_event_replays(self):
        b = make_preset("brusselator", modes_per_dim=8)
        x = random_field(b.grid, np.random.default_rng(0), amplitude=0.5)
        cfg = SolverConfig(dt=2e-3)
        base = TerminalNorm(0.0, component=1).statistic(solve_skeleton(b, x, None, 0.2, cfg).data, b.grid)
        ev = TerminalNorm(1.5 * float(base), component=1)
        q = RateQuery(T=0.2, solver=cfg, event=ev, control_dt=0.05)
        res = rate_over_event(b, x, ev, q)
        assert res.converged and math.isfinite(res.value) and res.value > 0
        assert replay(b, x, res, q, ev) <= q.tol
        again = rate_over_event(b, x, ev, q)
        assert again.value == res.value and np.array_equal(again.control.values, res.control.values)

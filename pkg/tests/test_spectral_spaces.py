import io
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from ldp_lab.errors import DegenerateInputError, DomainError
from ldp_lab.spectral import (
    SpectralField,
    TorusGrid,
    Trajectory,
    check_critical_interpolation,
    critical_space_norm,
    field_from_csv,
    field_to_csv,
    h_norm,
    hermitian_defect,
    mr_distance,
    mr_norm,
    norm_theta,
    physical_l2_norm,
    random_field,
    read_field,
    read_trajectory,
    to_physical,
    to_spectral,
    v_norm,
    verify_interpolation,
    write_field,
    write_trajectory,
)

G8 = TorusGrid(8)
G32 = TorusGrid(32)


def field_from_seed(grid, seed, **kw):
    return random_field(grid, np.random.default_rng(seed), **kw)


seeds = st.integers(0, 2**31 - 1)


class TestGrid:
    @pytest.mark.parametrize("n", [3, 5, 2, 0])
    def test_rejects_bad_sizes(self, n):
        with pytest.raises(DomainError):
            TorusGrid(n)

    def test_rejects_nonpositive_period(self):
        with pytest.raises(DomainError):
            TorusGrid(8, period=0.0)

    def test_shape_and_volume(self):
        g = TorusGrid(16, 3.0, 2)
        assert g.shape == (2, 16, 16)
        assert g.volume == 9.0


class TestNormTheta:
    @pytest.mark.parametrize("theta", [0.0, 0.25, 0.5, 0.8, 1.0])
    def test_single_mode(self, theta):
        k = (2, -1)
        c = 1.7
        f = SpectralField.single_mode(G8, k, c)
        # c cos(k.x) carries |c/2| on k and -k
        expected = abs(c) / math.sqrt(2) * (1 + 5) ** ((2 * theta - 1) / 2) * math.sqrt(G8.volume)
        assert norm_theta(f, theta) == pytest.approx(expected, rel=1e-13)

    @pytest.mark.parametrize("theta", [0.5, 1.0])
    def test_constant(self, theta):
        f = SpectralField.single_mode(G8, (0, 0), -2.5)
        assert norm_theta(f, theta) == pytest.approx(2.5 * math.sqrt(G8.volume), rel=1e-14)

    def test_matches_quadrature(self):
        f = field_from_seed(G8, 1, kmax=3)
        assert norm_theta(f, 0.5) == pytest.approx(physical_l2_norm(f), rel=1e-10)

    @pytest.mark.parametrize("theta", [-0.1, 1.01])
    def test_theta_range(self, theta):
        with pytest.raises(DomainError):
            norm_theta(SpectralField.zeros(G8), theta)

    @given(seeds, st.floats(0, 1), st.floats(0, 1))
    def test_monotone_in_theta(self, seed, a, b):
        f = field_from_seed(G32, seed)
        lo, hi = sorted((a, b))
        assert norm_theta(f, lo) <= norm_theta(f, hi) * (1 + 1e-14)

    @given(seeds)
    def test_parseval(self, seed):
        f = field_from_seed(G32, seed, kmax=15)
        coeff = h_norm(f)
        assert abs(physical_l2_norm(f) - coeff) <= 1e-10 * coeff

    def test_h_norm_is_half(self):
        f = field_from_seed(G8, 2)
        assert h_norm(f) == norm_theta(f, 0.5)
        assert v_norm(f) == norm_theta(f, 1.0)


class TestTransforms:
    @given(seeds)
    def test_round_trip(self, seed):
        vals = np.random.default_rng(seed).standard_normal((2, 8, 8))
        c = to_spectral(vals)
        assert hermitian_defect(c) < 1e-15
        np.testing.assert_allclose(to_physical(c), vals, atol=1e-13)

    def test_non_hermitian_rejected(self):
        c = np.zeros(G8.shape, complex)
        c[0, 1, 0] = 1.0
        with pytest.raises(DomainError):
            SpectralField(G8, c)

    def test_immutable(self):
        f = SpectralField.zeros(G8)
        with pytest.raises(AttributeError):
            f.grid = G32
        with pytest.raises(ValueError):
            f.coeffs[0, 0, 0] = 1.0


class TestInterpolation:
    @pytest.mark.parametrize("theta", [0.0, 0.3, 0.5, 0.9, 1.0])
    def test_single_mode_equality(self, theta):
        f = SpectralField.single_mode(G32, (3, 1), 0.4)
        assert abs(verify_interpolation(f, theta)) <= 1e-12 * v_norm(f)

    def test_constant_equality(self):
        f = SpectralField.single_mode(G8, (0, 0), 2.0)
        assert abs(verify_interpolation(f, 0.4)) <= 1e-12 * v_norm(f)

    def test_two_modes_strict(self):
        f = SpectralField.single_mode(G32, (1, 0)) + SpectralField.single_mode(G32, (3, 2))
        assert verify_interpolation(f, 0.7) < -1e-6

    def test_zero_field(self):
        with pytest.raises(DegenerateInputError):
            verify_interpolation(SpectralField.zeros(G8), 0.5)

    @given(seeds, st.floats(0, 1))
    def test_holds_on_random_fields(self, seed, theta):
        f = field_from_seed(G32, seed, kmax=15, decay=seed % 3)
        assert verify_interpolation(f, theta) <= 1e-10 * v_norm(f)


def random_trajectory(grid, seed, steps=20, T=1.0):
    rng = np.random.default_rng(seed)
    data = np.stack([random_field(grid, rng).coeffs * rng.uniform(0.1, 2) for _ in range(steps + 1)])
    return Trajectory(grid, np.linspace(0, T, steps + 1), data)


class TestTrajectory:
    def test_times_start_at_zero(self):
        with pytest.raises(DomainError):
            Trajectory(G8, [0.1, 0.2], np.zeros((2,) + G8.shape))

    def test_uniform_spacing(self):
        with pytest.raises(DomainError):
            Trajectory(G8, [0.0, 0.1, 0.3], np.zeros((3,) + G8.shape))

    def test_constant_mr(self):
        f = field_from_seed(G8, 3)
        T = 2.0
        tr = Trajectory.constant(f, T, 10)
        assert mr_norm(tr) == pytest.approx(h_norm(f) + math.sqrt(T) * v_norm(f), rel=1e-13)

    def test_zero_mr(self):
        assert mr_norm(Trajectory.constant(SpectralField.zeros(G8), 1.0, 5)) == 0.0

    def test_decaying_sine(self):
        # u = exp(-t) sin(x1): sup |u|_H = |sin|_H, int exp(-2t) = (1 - exp(-2)) / 2
        steps = 4000
        t = np.linspace(0, 1, steps + 1)
        base = SpectralField.from_physical(G8, np.sin(G8.coordinates[0]))
        tr = Trajectory(G8, t, np.exp(-t)[:, None, None, None] * base.coeffs)
        expected = h_norm(base) + v_norm(base) * math.sqrt((1 - math.exp(-2)) / 2)
        # trapezoid error is O(dt^2)
        assert mr_norm(tr) == pytest.approx(expected, rel=1e-7)

    def test_empty(self):
        with pytest.raises(DomainError):
            mr_norm(None)

    def test_distance_to_self(self):
        tr = random_trajectory(G8, 4)
        assert mr_distance(tr, tr) == 0.0


class TestCriticalInterpolation:
    def test_beta_one_collapses(self):
        tr = random_trajectory(G8, 5)
        res = check_critical_interpolation(tr, 1.0)
        assert res.lhs == pytest.approx(res.rhs, rel=1e-12)

    def test_constant_single_mode(self):
        f = SpectralField.single_mode(G8, (1, 1), 2.0)
        T = 1.5
        b = 5 / 6
        tr = Trajectory.constant(f, T, 8)
        p = 2 / (2 * b - 1)
        lhs = norm_theta(f, b) * T ** (1 / p)
        rhs = h_norm(f) ** (2 - 2 * b) * (math.sqrt(T) * v_norm(f)) ** (2 * b - 1)
        assert critical_space_norm(tr, b) == pytest.approx(lhs, rel=1e-12)
        res = check_critical_interpolation(tr, b)
        assert res.holds and res.rhs == pytest.approx(rhs, rel=1e-12)

    def test_random_with_slack(self):
        res = check_critical_interpolation(random_trajectory(G8, 6), 5 / 6)
        assert res.holds and res.slack > 0

    @pytest.mark.parametrize("b", [0.5, 0.3, 1.2])
    def test_beta_range(self, b):
        with pytest.raises(DomainError):
            critical_space_norm(random_trajectory(G8, 7, steps=2), b)

    @given(seeds, st.sampled_from([0.6, 0.75, 5 / 6, 1.0]))
    def test_holds(self, seed, b):
        assert check_critical_interpolation(random_trajectory(G8, seed, steps=10), b).holds


class TestSerialization:
    def test_binary_round_trip(self):
        f = field_from_seed(TorusGrid(8, 3.0, 2), 8)
        buf = io.BytesIO()
        write_field(buf, f, time=0.25)
        raw = buf.getvalue()
        assert len(raw) == 32 + 8 * 2 * 64
        g, t = read_field(io.BytesIO(raw))
        assert t == 0.25 and g.grid == f.grid
        np.testing.assert_allclose(g.coeffs, f.coeffs, atol=1e-15)

    def test_trajectory_round_trip(self, tmp_path):
        tr = random_trajectory(G8, 9, steps=3)
        write_trajectory(tmp_path / "t.bin", tr)
        back = read_trajectory(tmp_path / "t.bin")
        np.testing.assert_allclose(back.data, tr.data, atol=1e-14)
        np.testing.assert_array_equal(back.times, tr.times)

    def test_csv_round_trip(self):
        f = field_from_seed(G8, 10)
        g, t = field_from_csv(field_to_csv(f, 1.0))
        assert t == 1.0
        np.testing.assert_allclose(g.coeffs, f.coeffs, atol=1e-15)

    def test_empty_file(self):
        with pytest.raises(DomainError):
            read_field(io.BytesIO(b""))

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ridedispatch.model import (
    DeviationPolicy,
    PenaltyParams,
    Request,
    TravelTimeMatrix,
    VehicleState,
    build_grid,
    deviation_bound,
    load_matrix,
    load_stops,
    penalty,
    save_matrix,
    save_stops,
)


class TestGrid:
    def test_snap_floor_division(self):
        g = build_grid(1000, 1000, 200)
        assert g.snap(350, 120).cell == (0, 1)

    def test_snap_origin(self):
        g = build_grid(1000, 1000, 200)
        assert g.snap(0, 0).cell == (0, 0)

    def test_snap_strict_upper_edge(self):
        g = build_grid(1000, 1000, 200)
        assert g.snap(199.99, 199.99).cell == (0, 0)
        assert g.snap(200.0, 200.0).cell == (1, 1)

    def test_snap_outside_clamps_to_boundary(self):
        g = build_grid(1000, 1000, 200)
        assert g.snap(-50, 2500).cell == (4, 0)

    def test_snap_idempotent(self):
        g = build_grid(1000, 800, 200)
        for x, y in [(0, 0), (733, 512), (999, 799), (-10, 4000)]:
            s = g.snap(x, y)
            again = g.snap(*s.position)
            assert again.id == s.id

    def test_stop_ids_index_rows(self):
        g = build_grid(600, 400, 200)
        assert [s.id for s in g.stops] == list(range(6))
        assert g.stops[4].cell == (1, 1)


class TestDeviationBound:
    def test_multiplicative_side(self):
        assert deviation_bound(DeviationPolicy(1.5, 240), 600) == 900

    def test_additive_side(self):
        assert deviation_bound(DeviationPolicy(1.5, 240), 240) == 480

    def test_zero_length_trip(self):
        assert deviation_bound(DeviationPolicy(1.5, 240), 0) == 240

    @given(st.integers(0, 10**6), st.floats(1.0, 5.0), st.integers(0, 3600))
    def test_never_below_direct_time(self, t, alpha, beta):
        assert deviation_bound(DeviationPolicy(alpha, beta), t) >= t


class TestPenalty:
    def test_first_period_is_delta(self):
        assert penalty(PenaltyParams(420, 30), 100, 100) == 420.0

    def test_doubles_after_ten_periods(self):
        # ten 30s periods = five minutes
        assert penalty(PenaltyParams(420, 30), 300, 0) == pytest.approx(840.0)

    def test_two_doublings(self):
        assert penalty(PenaltyParams(420, 30), 600, 0) == pytest.approx(1680.0)

    def test_exponent_clamped_for_fresh_requests(self):
        assert penalty(PenaltyParams(420, 30), 90, 100) == 420.0

    @given(st.integers(0, 10**5), st.integers(0, 10**5))
    def test_non_decreasing_in_age(self, a, b):
        p = PenaltyParams(420, 30)
        lo, hi = sorted((a, b))
        assert penalty(p, lo, 0) <= penalty(p, hi, 0)

    @given(
        st.floats(1.0, 10000.0),
        st.integers(1, 600),
        st.integers(0, 40),
        st.integers(0, 599),
    )
    @settings(max_examples=200)
    def test_exact_doubling_law(self, delta, ell, doublings, extra):
        p = PenaltyParams(delta, ell)
        age = doublings * 10 * ell + min(extra, 10 * ell)  # cap the exponent well under overflow
        a = penalty(p, age, 0)
        b = penalty(p, age + 10 * ell, 0)
        assert abs(b - 2.0 * a) <= 1e-12 * abs(b)


class TestTravelTimeMatrix:
    def test_rejects_triangle_violation(self):
        bad = [[0, 1, 10], [1, 0, 1], [10, 1, 0]]  # 10 > 1 + 1
        with pytest.raises(ValueError, match="triangle"):
            TravelTimeMatrix(bad)

    def test_rejects_nonzero_diagonal(self):
        with pytest.raises(ValueError, match="diagonal"):
            TravelTimeMatrix([[1]])

    def test_rejects_negative(self):
        with pytest.raises(ValueError, match="nonnegative"):
            TravelTimeMatrix([[0, -3], [3, 0]])

    def test_accepts_metric(self):
        m = TravelTimeMatrix([[0, 2, 3], [2, 0, 1], [3, 1, 0]])
        assert m.travel(0, 2) == 3

    def test_sampled_check_large_matrix(self):
        n = 250  # above the exhaustive cutoff
        xs = np.random.default_rng(3).integers(0, 1000, (n, 2))
        d = np.abs(xs[:, None, :] - xs[None, :, :]).sum(axis=2)
        TravelTimeMatrix(d)  # metric, should pass
        d2 = d.copy()
        d2[:60, 7] = 10**6  # gross corruption across many rows
        np.fill_diagonal(d2, 0)
        with pytest.raises(ValueError, match="triangle"):
            TravelTimeMatrix(d2, sample_seed=0)


class TestVehicleState:
    def test_load_over_capacity_rejected(self):
        from ridedispatch.model import OnboardRider

        riders = (OnboardRider(1, 0, 2, 4, 100), OnboardRider(2, 0, 3, 3, 100))
        with pytest.raises(ValueError, match="load"):
            VehicleState(0, 0, 0, onboard=riders, capacity=5)

    def test_depart_before_shift_rejected(self):
        with pytest.raises(ValueError, match="shift"):
            VehicleState(0, 0, depart_time=10, shift_start=50)


class TestFileFormats:
    def test_matrix_round_trip(self, tmp_path):
        m = TravelTimeMatrix([[0, 2, 3], [2, 0, 1], [3, 1, 0]])
        p = tmp_path / "m.csv"
        save_matrix(m, p)
        again = load_matrix(p)
        assert (again.t == m.t).all()

    def test_matrix_file_starts_with_count(self, tmp_path):
        p = tmp_path / "m.csv"
        p.write_text("0,1\n1,0\n")
        with pytest.raises(ValueError, match="stop count"):
            load_matrix(p)

    def test_stops_round_trip(self, tmp_path):
        g = build_grid(600, 400, 200)
        p = tmp_path / "stops.csv"
        save_stops(g.stops, p)
        stops = load_stops(p)
        assert [s.id for s in stops] == [s.id for s in g.stops]
        assert stops[4].position == pytest.approx(g.stops[4].position, abs=0.1)

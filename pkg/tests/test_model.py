"""Domain type invariants and the state diagnostics report."""

import numpy as np
import pytest

from motionmix import (
    Frame,
    KernelParams,
    MixtureState,
    MotionPattern,
    PriorConfig,
    RegionOfInterest,
    validate_state,
)


def make_params(**overrides):
    base = dict(sigma_sq_x=1.0, sigma_sq_y=1.0, w_x=5.0, w_y=5.0, sigma_n_sq=1.0)
    base.update(overrides)
    return KernelParams(**base)


def fresh_state(n=4):
    pattern = MotionPattern(
        pattern_id=1,
        member_frames=set(range(n)),
        params=make_params(),
        prior_mean_x=0.0,
        prior_mean_y=0.0,
    )
    return MixtureState(
        assignments=np.ones(n, dtype=int),
        patterns={1: pattern},
        alpha=1.0,
        next_pattern_id=2,
    )


class TestRegionOfInterest:
    def test_rejects_degenerate_rectangle(self):
        with pytest.raises(ValueError):
            RegionOfInterest(1.0, 1.0, 0.0, 2.0)

    def test_bins_partition_exhaustively(self):
        roi = RegionOfInterest(0.0, 10.0, 0.0, 4.0, n_bins_x=5, n_bins_y=2)
        rng = np.random.default_rng(7)
        xs = rng.uniform(0, 10, 500)
        ys = rng.uniform(0, 4, 500)
        idx = roi.bin_index(xs, ys)
        assert np.all((0 <= idx) & (idx < roi.n_bins))
        # every point falls inside the rectangle of its bin
        for x, y, i in zip(xs, ys, np.atleast_1d(idx)):
            x_lo, x_hi, y_lo, y_hi = roi.bin_rect(int(i))
            assert x_lo <= x <= x_hi and y_lo <= y <= y_hi

    def test_boundary_point_goes_to_lower_bin(self):
        roi = RegionOfInterest(0.0, 10.0, 0.0, 10.0, n_bins_x=2, n_bins_y=2)
        # interior shared edge at x = 5 belongs to the left bin
        assert roi.bin_index(5.0, 1.0) == 0
        # outer corners stay in range
        assert roi.bin_index(0.0, 0.0) == 0
        assert roi.bin_index(10.0, 10.0) == roi.n_bins - 1

    def test_bin_areas_sum_to_region(self):
        roi = RegionOfInterest(-3.0, 7.0, 2.0, 22.0, n_bins_x=4, n_bins_y=5)
        assert roi.bin_area * roi.n_bins == pytest.approx(roi.width * roi.height)


class TestFrame:
    def test_rejects_empty_frame(self):
        with pytest.raises(ValueError):
            Frame(frame_id=0, timestamp=0.0, vehicles=())

    def test_stacking_round_trips(self):
        frame = Frame(
            frame_id=3,
            timestamp=1.5,
            vehicles=((1.0, 2.0, 3.0, 4.0), (5.0, 6.0, 7.0, 8.0)),
        )
        v_x, v_y, x, y = frame.stacked()
        rebuilt = Frame.from_stacked(3, 1.5, v_x, v_y, x, y)
        assert rebuilt.vehicles == frame.vehicles

    def test_stacked_views_are_index_aligned(self):
        vehicles = tuple(
            (float(i), float(10 + i), float(20 + i), float(30 + i)) for i in range(5)
        )
        frame = Frame(frame_id=0, timestamp=0.0, vehicles=vehicles)
        v_x, v_y, x, y = frame.stacked()
        for j, veh in enumerate(vehicles):
            assert (x[j], y[j], v_x[j], v_y[j]) == veh


class TestKernelParams:
    @pytest.mark.parametrize(
        "field", ["sigma_sq_x", "sigma_sq_y", "w_x", "w_y", "sigma_n_sq"]
    )
    def test_rejects_non_positive(self, field):
        with pytest.raises(ValueError):
            make_params(**{field: 0.0})


class TestPriorConfig:
    def test_resolves_data_moments(self):
        frames = [
            Frame(0, 0.0, ((0.0, 0.0, 2.0, -1.0), (1.0, 1.0, 4.0, 3.0))),
            Frame(1, 0.5, ((2.0, 2.0, 6.0, 1.0),)),
        ]
        prior = PriorConfig().resolved(frames)
        vels = np.array([[2.0, -1.0], [4.0, 3.0], [6.0, 1.0]])
        assert prior.mu0_x == pytest.approx(vels[:, 0].mean())
        assert prior.mu0_y == pytest.approx(vels[:, 1].mean())
        assert prior.sigma0_sq_x == pytest.approx(vels[:, 0].var())
        assert prior.sigma0_sq_y == pytest.approx(vels[:, 1].var())

    def test_rejects_bad_settings(self):
        with pytest.raises(ValueError):
            PriorConfig(a=0.0)
        with pytest.raises(ValueError):
            PriorConfig(n_mc=0)


class TestValidateState:
    def test_fresh_state_is_clean(self):
        assert validate_state(fresh_state()) == []

    def test_detects_count_mismatch(self):
        state = fresh_state(4)
        state.patterns[1].member_frames.discard(2)
        report = validate_state(state)
        assert any("sum" in line for line in report)

    def test_detects_dangling_assignment(self):
        state = fresh_state(4)
        state.assignments[1] = 99
        report = validate_state(state)
        assert any("pruned pattern 99" in line for line in report)

    def test_detects_empty_live_pattern(self):
        state = fresh_state(4)
        state.patterns[7] = MotionPattern(
            pattern_id=7,
            member_frames=set(),
            params=make_params(),
            prior_mean_x=0.0,
            prior_mean_y=0.0,
        )
        state.next_pattern_id = 8
        report = validate_state(state)
        assert any("live but empty" in line for line in report)

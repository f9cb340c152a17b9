import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from reference_values import (
    ALPHA_BETA_ROWS, ATTACK_RECALL, EXTREME_RECALL, MODELS, RECALL_REDUCTION, SELECTED_ALPHA_BETA,
)
from timingsim.evaluation import (
    DRIFT_TIERS, DriftSpec, MetricsReport, SweepRow, apply_drift, bootstrap_ci, fit_adaptation_rate, impact_deltas,
    plant_metrics, pareto_sweep, recall_reduction, remap_features, stealth, stealth_from_recalls,
)
from timingsim.loop import FEATURE_NAMES, ClosedLoop
from timingsim.plant import PlantConfig, initial_state


def brute_stealth(tp, fn, w):
    """Loop oracle: per detector, average the window recalls that are defined."""
    num, den = 0.0, 0.0
    for d in range(len(tp)):
        rs = [tp[d][t] / (tp[d][t] + fn[d][t]) for t in range(len(tp[d])) if tp[d][t] + fn[d][t] > 0]
        if rs:
            num += w[d] * sum(rs) / len(rs)
            den += w[d]
    return 1.0 if den == 0 else 1.0 - num / den


class TestStealth:
    def test_zero_recall(self):
        assert stealth(np.zeros((2, 5)), np.ones((2, 5)), [0.5, 0.5]) == 1.0

    def test_single_detector(self):
        tp = np.array([[3, 0, 1, 2]])
        fn = np.array([[1, 2, 1, 0]])
        rbar = np.mean([0.75, 0.0, 0.5, 1.0])
        assert stealth(tp, fn, [1.0]) == pytest.approx(1 - rbar, abs=1e-15)

    def test_random_tensors_match_oracle(self):
        rng = np.random.default_rng(0)
        for _ in range(1000):
            d, t = rng.integers(1, 6), rng.integers(1, 12)
            tp = rng.integers(0, 4, size=(d, t))
            fn = rng.integers(0, 4, size=(d, t))
            w = rng.random(d)
            w /= w.sum()
            assert stealth(tp, fn, w) == pytest.approx(brute_stealth(tp.tolist(), fn.tolist(), w), abs=1e-12)

    def test_weights_must_sum_to_one(self):
        with pytest.raises(ValueError):
            stealth(np.ones((2, 1)), np.ones((2, 1)), [0.5, 0.6])

    def test_no_attack_windows(self):
        assert stealth(np.zeros((2, 3)), np.zeros((2, 3)), [0.5, 0.5]) == 1.0

    @settings(max_examples=100, deadline=None)
    @given(r=st.lists(st.floats(0, 1), min_size=1, max_size=5), bump=st.floats(1e-3, 1.0), which=st.integers(0, 4))
    def test_bounded_and_monotone(self, r, bump, which):
        w = np.full(len(r), 1 / len(r))
        s = stealth_from_recalls(r, w)
        assert 0.0 <= s <= 1.0
        i = which % len(r)
        if r[i] + bump <= 1.0:
            r2 = list(r)
            r2[i] += bump
            assert stealth_from_recalls(r2, w) < s


class TestBootstrap:
    def test_constant_values(self):
        assert bootstrap_ci([0.4] * 5) == (0.4, 0.4, 0.4)

    def test_interval_brackets_mean(self):
        m, lo, hi = bootstrap_ci([0.1, 0.5, 0.3, 0.9, 0.2], seed=3)
        assert lo <= m <= hi

    def test_empty(self):
        with pytest.raises(ValueError):
            bootstrap_ci([])


class TestImpact:
    def test_identity(self):
        r = MetricsReport(50.0, 0.4, 12.0)
        assert impact_deltas(r, r) == (0.0, 0.0, 0.0)

    def test_throughput_example(self):
        d_thru, _, _ = impact_deltas(MetricsReport(48.0, 0.0, 1.0), MetricsReport(50.0, 0.0, 1.0))
        assert d_thru == pytest.approx(-4.0)

    def test_zero_benign_throughput(self):
        with pytest.raises(ZeroDivisionError):
            impact_deltas(MetricsReport(1.0, 0.0, 1.0), MetricsReport(0.0, 0.0, 1.0))

    def test_plant_metrics_units(self):
        m = plant_metrics([0.0, 2.0], 30, [1.0, 3.0], 60_000.0)
        assert m == {"throughput": 120.0, "quality_inaccuracy": 2.0, "cycles_per_min": 30.0}


class TestRecallReduction:
    def test_unchanged(self):
        assert recall_reduction(0.8, 0.8) == 0.0

    def test_resnet_example(self):
        assert recall_reduction(0.994, 0.6984) == pytest.approx(29.738, abs=1e-3)

    def test_undefined(self):
        assert recall_reduction(0.0, 0.1) is None

    def test_published_cells(self):
        # every published cell but one recomputes within 0.5 pp
        off = {}
        for key, row in RECALL_REDUCTION.items():
            for m in MODELS:
                diff = abs(recall_reduction(EXTREME_RECALL[m], ATTACK_RECALL[key][m]) - row[m])
                if diff > 0.5:
                    off[(key, m)] = round(diff, 2)
        assert off == {(("smashgrab", "black"), "DenseNet"): 0.51}


class TestParetoSweep:
    def test_single_candidate(self):
        r = SweepRow(0.5, 0.5, 0.8, -3.0, 5.0)
        assert pareto_sweep([r]) == [r]

    def test_cycle_cap_excludes(self):
        rows = [SweepRow(0.5, 0.5, 0.99, -1.0, 19.0), SweepRow(0.6, 0.4, 0.5, -1.0, 10.0)]
        assert [r.alpha for r in pareto_sweep(rows)] == [0.6]

    def test_empty_feasible(self):
        with pytest.raises(ValueError):
            pareto_sweep([SweepRow(0.5, 0.5, 0.9, 0.0, 30.0)])

    def test_published_rows_select_bold(self):
        best = pareto_sweep([SweepRow(*r) for r in ALPHA_BETA_ROWS])[0]
        assert (best.alpha, best.beta) == SELECTED_ALPHA_BETA


class TestDrift:
    def test_identity(self):
        cfg = PlantConfig()
        assert apply_drift(cfg, DriftSpec()) is cfg

    def test_medium_tier(self):
        assert DRIFT_TIERS["medium"] == DriftSpec(1.20, 6.0, 1.10, 1.12, 1, True, 0.10)

    def test_medium_applied(self):
        cfg = PlantConfig()
        d = apply_drift(cfg, DRIFT_TIERS["medium"])
        assert d.sensor_noise_sigma == pytest.approx(cfg.sensor_noise_sigma * 1.2)
        assert d.fill_gain == pytest.approx(cfg.fill_gain * 1.1)
        assert d.scan_jitter == 6.0
        assert d.io_skip_prob == pytest.approx(cfg.io_skip_prob / 1.12)

    def test_gain_knobs_compose(self):
        a = DriftSpec(gain_multiplier=1.1, sensor_noise_multiplier=1.2)
        b = DriftSpec(gain_multiplier=1.05, sensor_noise_multiplier=0.9)
        ab = DriftSpec(gain_multiplier=1.1 * 1.05, sensor_noise_multiplier=1.2 * 0.9)
        two = apply_drift(apply_drift(PlantConfig(), a), b)
        one = apply_drift(PlantConfig(), ab)
        assert two.fill_gain == pytest.approx(one.fill_gain)
        assert two.sensor_noise_sigma == pytest.approx(one.sensor_noise_sigma)

    @pytest.mark.parametrize("tier", ["small", "medium", "large"])
    def test_drifted_plant_keeps_invariants(self, tier):
        cfg = apply_drift(PlantConfig(), DRIFT_TIERS[tier])
        loop = ClosedLoop(cfg, seed=1).run(1500)
        s, s0 = loop.state, initial_state(cfg)
        inv = s.total_volume + s.cumulative_outflow - s.cumulative_inflow
        assert abs(inv - (s0.total_volume + s0.cumulative_outflow - s0.cumulative_inflow)) <= 1e-9
        assert 0 <= s.level_ve3 <= cfg.tank_capacity_ve3
        assert loop.qualities

    def test_remap_swaps_columns(self):
        rows = np.arange(2 * len(FEATURE_NAMES), dtype=float).reshape(2, -1)
        out = remap_features(rows, 1)
        i, j = FEATURE_NAMES.index("since_fill"), FEATURE_NAMES.index("since_level")
        np.testing.assert_array_equal(out[:, i], rows[:, j])
        np.testing.assert_array_equal(remap_features(rows, 0), rows)


class TestAdaptation:
    def test_recovers_kappa(self):
        t = np.linspace(0, 30, 40)
        y = 1 - np.exp(-0.2 * t) + np.random.default_rng(0).normal(0, 0.01, t.size)
        assert fit_adaptation_rate(t, y).kappa == pytest.approx(0.2, abs=0.02)

    def test_saturated(self):
        f = fit_adaptation_rate(np.arange(10.0), np.ones(10))
        assert f.status == "saturated" and math.isinf(f.kappa)

    def test_never_adapts(self):
        f = fit_adaptation_rate(np.arange(10.0), np.zeros(10))
        assert f.kappa == 0.0 and f.status == "undefined"

    def test_too_few_points(self):
        with pytest.raises(ValueError):
            fit_adaptation_rate([1.0, 2.0], [0.1, 0.2])

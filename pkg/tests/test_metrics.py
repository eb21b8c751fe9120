import numpy as np
import pytest

from routelab.env import ChannelConfig
from routelab.errors import ContractError
from routelab.metrics import (MetricsReport, TraceRecord,
                              bottleneck_congestion_series, compute_metrics,
                              normalize_rewards, read_trace_csv,
                              write_trace_csv)

CFG = ChannelConfig(n=3, initial_capacity=(10, 10, 5), bottleneck_index=2,
                    self_service_index=0, drainage_index=1)


def rec(step, caps, suggested=0, final=0, accepted=True, reward=1.0,
        terminal=False):
    return TraceRecord(step=step, time=float(step), suggested_channel=suggested,
                       final_channel=final, accepted=accepted,
                       g=1.0 if accepted else -1.0, reward=reward,
                       capacities=tuple(caps), terminal=terminal)


def brute_force(trace, cfg):
    n = len(trace)
    ccr = sum(1 for r in trace if min(r.capacities) < 0) / n
    ac = sum(-sum(max(0, -c) for c in r.capacities) for r in trace) / n
    pc = min(min(r.capacities) for r in trace)
    afr = sum(sum(max(0, c) for c in r.capacities) for r in trace) / n
    sp = sum(1 for r in trace
             if r.accepted and r.suggested_channel == cfg.self_service_index) / n
    dp = sum(1 for r in trace
             if r.accepted and r.suggested_channel == cfg.drainage_index) / n
    rn = sum(1 for r in trace
             if r.accepted and r.final_channel != cfg.bottleneck_index)
    mean_reward = sum(r.reward for r in trace) / n
    return ccr, ac, pc, afr, sp, dp, rn / n, rn, mean_reward


class TestComputeMetrics:
    def test_hand_example(self):
        trace = [
            rec(0, (5, 5, 2), suggested=0, final=0, accepted=True, reward=1.0),
            rec(1, (5, 5, -1), suggested=1, final=2, accepted=False, reward=-2.0),
            rec(2, (5, -2, -1), suggested=1, final=1, accepted=True, reward=0.5),
            rec(3, (5, 5, 5), suggested=2, final=2, accepted=True, reward=1.0),
        ]
        m = compute_metrics(trace, CFG)
        assert m.ccr == pytest.approx(0.5)
        assert m.ac == pytest.approx((0 - 1 - 3 + 0) / 4)
        assert m.pc == -2
        assert m.afr == pytest.approx((12 + 10 + 5 + 15) / 4)
        assert m.sp == pytest.approx(1 / 4)
        assert m.dp == pytest.approx(1 / 4)
        assert m.rn == 2
        assert m.rr == pytest.approx(2 / 4)
        assert m.mean_reward == pytest.approx(0.125)
        assert m.n_records == 4

    def test_matches_brute_force_random(self):
        rng = np.random.default_rng(0)
        for _ in range(100):
            n = int(rng.integers(1, 40))
            trace = [rec(i,
                         tuple(int(c) for c in rng.integers(-5, 15, size=3)),
                         suggested=int(rng.integers(3)),
                         final=int(rng.integers(3)),
                         accepted=bool(rng.integers(2)),
                         reward=float(rng.normal()))
                     for i in range(n)]
            m = compute_metrics(trace, CFG)
            ccr, ac, pc, afr, sp, dp, rr, rn, mr = brute_force(trace, CFG)
            assert m.ccr == pytest.approx(ccr)
            assert m.ac == pytest.approx(ac)
            assert m.pc == pc
            assert m.afr == pytest.approx(afr)
            assert m.sp == pytest.approx(sp)
            assert m.dp == pytest.approx(dp)
            assert m.rr == pytest.approx(rr)
            assert m.rn == rn
            assert m.mean_reward == pytest.approx(mr)
            assert m.rn == pytest.approx(m.rr * m.n_records)

    def test_empty_trace_rejected(self):
        with pytest.raises(ContractError):
            compute_metrics([], CFG)

    def test_declined_suggestion_not_counted(self):
        trace = [rec(0, (5, 5, 5), suggested=0, final=2, accepted=False)]
        m = compute_metrics(trace, CFG)
        assert m.sp == 0.0
        assert m.rn == 0


class TestNormalizeRewards:
    def test_zscore(self):
        out = normalize_rewards({"a": 1.0, "b": 3.0})
        assert out["a"] == pytest.approx(-1.0)
        assert out["b"] == pytest.approx(1.0)

    def test_identical_values(self):
        out = normalize_rewards({"a": 2.0, "b": 2.0, "c": 2.0})
        assert all(v == 0.0 for v in out.values())

    def test_needs_two(self):
        with pytest.raises(ContractError):
            normalize_rewards({"a": 1.0})

    def test_mean_zero_unit_std(self):
        out = normalize_rewards({"a": 0.0, "b": 5.0, "c": -2.0, "d": 7.0})
        vals = np.asarray(list(out.values()))
        assert vals.mean() == pytest.approx(0.0, abs=1e-12)
        assert vals.std() == pytest.approx(1.0)


class TestCongestionSeries:
    def test_windowed_fractions(self):
        trace = [rec(i, (5, 5, -1 if i < 3 else 2)) for i in range(6)]
        series = bottleneck_congestion_series(trace, CFG, window=3)
        assert series == [1.0, 0.0]

    def test_ragged_tail(self):
        trace = [rec(i, (5, 5, -1)) for i in range(5)]
        series = bottleneck_congestion_series(trace, CFG, window=3)
        assert series == [1.0, 1.0]


class TestTraceIO:
    def test_roundtrip(self, tmp_path):
        trace = [
            rec(0, (5, 5, 2), suggested=1, final=1, accepted=True, reward=0.25),
            rec(1, (5, 4, -3), suggested=0, final=2, accepted=False,
                reward=-1.5, terminal=True),
        ]
        path = tmp_path / "trace.csv"
        write_trace_csv(path, trace, n_channels=3)
        back = read_trace_csv(path)
        assert len(back) == 2
        assert back[0].capacities == (5, 5, 2)
        assert back[1].g == -1.0
        assert back[1].terminal
        assert back[0].reward == pytest.approx(0.25)
        assert compute_metrics(back, CFG) == compute_metrics(trace, CFG)

"""Evaluation battery computed from simulation traces.

Sign conventions match the comparison tables the numbers are meant to be
read against: congestion level (AC) and peak congestion (PC) are reported
as non-positive numbers, free capacity (AFR) as non-negative.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass

import numpy as np

from .env import ChannelConfig
from .errors import ContractError


@dataclass(frozen=True)
class TraceRecord:
    step: int
    time: float
    suggested_channel: int
    final_channel: int
    accepted: bool
    g: float
    reward: float
    capacities: tuple[int, ...]  # post-assignment snapshot
    terminal: bool


@dataclass(frozen=True)
class MetricsReport:
    ccr: float          # fraction of records with any congested channel
    ac: float           # mean of -sum_i max(0, -cap_i); <= 0
    pc: int             # min over records of min_i cap_i
    afr: float          # mean of sum_i max(0, cap_i); >= 0
    sp: float           # accepted switch-to-self-service fraction
    dp: float           # accepted switch-to-drainage fraction
    rr: float           # accepted non-bottleneck routing fraction
    rn: int             # accepted non-bottleneck routing count
    mean_reward: float
    n_records: int

    def to_json_dict(self) -> dict:
        return {"ccr": self.ccr, "ac": self.ac, "pc": self.pc, "afr": self.afr,
                "sp": self.sp, "dp": self.dp, "rr": self.rr, "rn": self.rn,
                "mean_reward": self.mean_reward, "n_records": self.n_records}


def compute_metrics(trace, config: ChannelConfig) -> MetricsReport:
    if len(trace) == 0:
        raise ContractError("trace must be non-empty")
    caps = np.asarray([rec.capacities for rec in trace], dtype=np.float64)
    queues = np.maximum(0.0, -caps)
    free = np.maximum(0.0, caps)
    n = len(trace)

    ccr = float(np.mean(caps.min(axis=1) < 0))
    ac = float(-np.mean(queues.sum(axis=1)))
    pc = int(caps.min())
    afr = float(np.mean(free.sum(axis=1)))

    sp_count = sum(1 for r in trace
                   if r.accepted and r.suggested_channel == config.self_service_index)
    dp_count = sum(1 for r in trace
                   if r.accepted and r.suggested_channel == config.drainage_index)
    rn = sum(1 for r in trace
             if r.accepted and r.final_channel != config.bottleneck_index)
    mean_reward = float(np.mean([r.reward for r in trace]))
    return MetricsReport(ccr=ccr, ac=ac, pc=pc, afr=afr,
                         sp=sp_count / n, dp=dp_count / n,
                         rr=rn / n, rn=rn,
                         mean_reward=mean_reward, n_records=n)


def normalize_rewards(mean_rewards: dict) -> dict:
    """Z-score mean rewards across agents; all zeros when they coincide."""
    if len(mean_rewards) < 2:
        raise ContractError("normalization needs at least two agents")
    names = list(mean_rewards)
    values = np.asarray([mean_rewards[k] for k in names], dtype=np.float64)
    std = float(values.std())  # population std
    if std == 0.0:
        return {k: 0.0 for k in names}
    centered = (values - values.mean()) / std
    return dict(zip(names, centered.tolist()))


# -- trace files ---------------------------------------------------------------

def write_trace_csv(path, trace, n_channels: int) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "time", "action", "final_channel", "accepted",
                         "reward"]
                        + [f"capacity_{i}" for i in range(n_channels)]
                        + ["terminal"])
        for r in trace:
            writer.writerow([r.step, f"{r.time:.6f}", r.suggested_channel,
                             r.final_channel, int(r.accepted), f"{r.reward:.10g}"]
                            + list(r.capacities) + [int(r.terminal)])


def read_trace_csv(path) -> list[TraceRecord]:
    trace = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        cap_cols = [c for c in reader.fieldnames if c.startswith("capacity_")]
        for row in reader:
            accepted = bool(int(row["accepted"]))
            trace.append(TraceRecord(
                step=int(row["step"]),
                time=float(row["time"]),
                suggested_channel=int(row["action"]),
                final_channel=int(row["final_channel"]),
                accepted=accepted,
                g=1.0 if accepted else -1.0,
                reward=float(row["reward"]),
                capacities=tuple(int(row[c]) for c in cap_cols),
                terminal=bool(int(row["terminal"])),
            ))
    return trace


def bottleneck_congestion_series(trace, config: ChannelConfig,
                                 window: int = 500) -> list[float]:
    """Per-window fraction of records with a congested bottleneck channel."""
    flags = [1.0 if r.capacities[config.bottleneck_index] < 0 else 0.0 for r in trace]
    series = []
    for start in range(0, len(flags), window):
        chunk = flags[start:start + window]
        series.append(sum(chunk) / len(chunk))
    return series


def write_metrics_json(path, report: MetricsReport) -> None:
    with open(path, "w") as fh:
        json.dump(report.to_json_dict(), fh, sort_keys=True, indent=2)

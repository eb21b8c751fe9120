"""Synthetic dataset generation: seasonal arrival streams, dependent customer
profiles, a seeded ground-truth acceptance model, and noisy flow-prediction
series. Every artifact is a pure function of the config seed.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import forecast, user_model
from .env import ChannelConfig, CustomerProfile, RequestEvent, write_events
from .errors import ConfigError
from .seeding import substream

# late-morning and evening peaks; the real arrival pattern is unavailable
TWO_PEAK_PROFILE = (
    0.2, 0.15, 0.1, 0.1, 0.1, 0.2,
    0.4, 0.7, 1.0, 1.4, 1.7, 1.5,
    1.2, 1.0, 1.0, 1.1, 1.2, 1.3,
    1.6, 1.9, 1.7, 1.2, 0.7, 0.4,
)

DEFAULT_CARDINALITIES = (2, 8, 34, 5, 3, 6, 10)


@dataclass
class GenConfig:
    days: int = 10
    base_rate: float = 200.0  # arrivals/hour before the hourly multiplier
    peak_profile: tuple[float, ...] = TWO_PEAK_PROFILE
    n_customers: int | None = None  # optional cap on the stream length
    attribute_cardinalities: tuple[int, ...] = DEFAULT_CARDINALITIES
    duration_range: tuple[float, float] = (60.0, 360.0)
    noise_sigma: float = 2.0
    start_time: float = 0.0
    channel_weights: tuple[float, ...] | None = None  # natural per-channel flow split
    seed: int = 0

    def __post_init__(self):
        if len(self.peak_profile) != 24 or any(m <= 0 for m in self.peak_profile):
            raise ConfigError("peak_profile needs 24 positive multipliers")
        lo, hi = self.duration_range
        if lo <= 0 or lo >= hi:
            raise ConfigError("duration_range must be positive with min < max")
        if len(self.attribute_cardinalities) != 7:
            raise ConfigError("exactly 7 attribute cardinalities required")
        if self.days < 1:
            raise ConfigError("days must be positive")


class ProfileSampler:
    """Dependent categorical sampler over the 7 customer attributes.

    Attribute 0 is drawn from a seeded marginal; attribute j from a seeded
    conditional table given attribute j-1, preserving pairwise correlation
    in the generated population. Marginals are available analytically via
    the chain rule for verification.
    """

    def __init__(self, cardinalities, seed: int):
        self.cardinalities = tuple(int(c) for c in cardinalities)
        rng = np.random.default_rng(np.random.SeedSequence([seed, 0x70726f66]))
        first = rng.uniform(0.2, 1.0, size=self.cardinalities[0])
        self.first = first / first.sum()
        self.tables: list[np.ndarray] = []
        for j in range(1, len(self.cardinalities)):
            t = rng.uniform(0.2, 1.0,
                            size=(self.cardinalities[j - 1], self.cardinalities[j]))
            self.tables.append(t / t.sum(axis=1, keepdims=True))

    def marginals(self) -> list[np.ndarray]:
        out = [self.first]
        for t in self.tables:
            out.append(out[-1] @ t)
        return out

    def sample(self, count: int, rng: np.random.Generator) -> list[CustomerProfile]:
        cols = [self._draw(self.first[None, :].repeat(count, axis=0), rng)]
        for t in self.tables:
            cols.append(self._draw(t[cols[-1]], rng))
        matrix = np.stack(cols, axis=1)
        return [CustomerProfile(tuple(row)) for row in matrix]

    @staticmethod
    def _draw(row_probs: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        cum = np.cumsum(row_probs, axis=1)
        u = rng.random(len(row_probs))[:, None]
        return (u >= cum).sum(axis=1)


def gen_profiles(count: int, cardinalities, rng: np.random.Generator,
                 sampler: ProfileSampler | None = None) -> list[CustomerProfile]:
    sampler = sampler or ProfileSampler(cardinalities, seed=0)
    return sampler.sample(count, rng)


def gen_arrivals(config: GenConfig, rng: np.random.Generator) -> list[RequestEvent]:
    """Nonhomogeneous Poisson arrivals with hourly rate base_rate * profile[hour]."""
    times: list[np.ndarray] = []
    for hour in range(config.days * 24):
        rate = config.base_rate * config.peak_profile[hour % 24]
        k = rng.poisson(rate)
        start = config.start_time + hour * 3600.0
        times.append(np.sort(start + rng.uniform(0.0, 3600.0, size=k)))
    arrival = np.concatenate(times) if times else np.zeros(0)
    if config.n_customers is not None:
        arrival = arrival[:config.n_customers]

    count = len(arrival)
    sampler = ProfileSampler(config.attribute_cardinalities, seed=config.seed)
    profiles = sampler.sample(count, rng)
    lo, hi = config.duration_range
    durations = rng.integers(int(lo), int(hi) + 1, size=count)
    return [RequestEvent(arrival_time=float(arrival[i]),
                         customer_id=f"c{i:08d}",
                         profile=profiles[i],
                         service_duration=float(durations[i]))
            for i in range(count)]


def _natural_channels(events, weights, rng: np.random.Generator) -> np.ndarray:
    weights = np.asarray(weights, dtype=np.float64)
    weights = weights / weights.sum()
    return rng.choice(len(weights), size=len(events), p=weights)


def per_channel_flow(events, channels: ChannelConfig, weights,
                     rng: np.random.Generator,
                     bin_width: float = forecast.DEFAULT_BIN_WIDTH,
                     start_time: float | None = None) -> list[forecast.BinnedSeries]:
    """True per-channel 10-minute counts under a fixed natural flow split."""
    natural = _natural_channels(events, weights, rng)
    start = events[0].arrival_time if start_time is None else start_time
    total = forecast.binize(events, bin_width, start)
    series = []
    for ch in range(channels.n):
        sub = [ev for ev, c in zip(events, natural) if c == ch]
        if sub:
            s = forecast.binize(sub, bin_width, start)
            counts = np.zeros(len(total))
            counts[:len(s)] = s.counts
        else:
            counts = np.zeros(len(total))
        series.append(forecast.BinnedSeries(start, bin_width, counts))
    return series


def _sha256(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            digest.update(chunk)
    return digest.hexdigest()


def gen_dataset(config: GenConfig, channels: ChannelConfig, out_dir) -> dict:
    """Write events, ground-truth acceptance model, and flow series.

    Returns the manifest (also written as manifest.json) listing every
    artifact with its seed and checksum.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    events = gen_arrivals(config, substream(config.seed, "datagen.arrivals"))
    events_path = out / "events.jsonl"
    write_events(events_path, events)

    truth = user_model.synthetic_truth_model(
        channels.n, channels.bottleneck_index, config.attribute_cardinalities,
        seed=int(substream(config.seed, "datagen.user_model").integers(2**31)))
    model_path = out / "user_model.json"
    truth.save(model_path)

    weights = config.channel_weights
    if weights is None:
        # most natural traffic heads for the bottleneck (hotline) channel
        weights = tuple(3.0 if i == channels.bottleneck_index else 1.0
                        for i in range(channels.n))
    true_series = per_channel_flow(events, channels, weights,
                                   substream(config.seed, "datagen.split"),
                                   start_time=config.start_time)
    noise_rng = substream(config.seed, "datagen.noise")
    flow_paths = []
    for ch, series in enumerate(true_series):
        true_path = out / f"flow_true_ch{ch}.csv"
        forecast.write_series_csv(true_path, series)
        noisy = forecast.noisy_oracle_forecast(series.counts, config.noise_sigma,
                                               noise_rng)
        fc_path = out / f"flow_forecast_ch{ch}.csv"
        forecast.write_series_csv(
            fc_path, forecast.BinnedSeries(series.start_time, series.bin_width, noisy))
        flow_paths.extend([true_path, fc_path])

    manifest = {
        "seed": config.seed,
        "n_events": len(events),
        "channels": channels.to_json_dict(),
        "files": {p.name: _sha256(p) for p in [events_path, model_path, *flow_paths]},
    }
    with open(out / "manifest.json", "w") as fh:
        json.dump(manifest, fh, sort_keys=True, indent=2)
    return manifest

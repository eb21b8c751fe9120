"""Flow forecasting: 10-minute binning, 144-lag features, a from-scratch
gradient-boosted regression-tree model, and the evaluation pair (RMSE +
asymmetric band accuracy). Also the synthetic-mode noisy oracle that stands
in for a trained forecaster during simulation.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, InsufficientHistoryError

DEFAULT_BIN_WIDTH = 600.0   # seconds; 10-minute flow windows
DEFAULT_WINDOW = 144        # 24 hours of 10-minute bins


@dataclass
class BinnedSeries:
    start_time: float
    bin_width: float
    counts: np.ndarray

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=np.float64)
        if self.bin_width <= 0:
            raise ContractError("bin_width must be positive")

    def __len__(self) -> int:
        return len(self.counts)

    def bin_index(self, time: float) -> int:
        return int(math.floor((time - self.start_time) / self.bin_width))


def binize(events, bin_width: float = DEFAULT_BIN_WIDTH,
           start_time: float | None = None) -> BinnedSeries:
    """Count arrivals per half-open bin [start + k*w, start + (k+1)*w)."""
    times = np.asarray([ev.arrival_time for ev in events], dtype=np.float64)
    if len(times) == 0:
        return BinnedSeries(start_time if start_time is not None else 0.0,
                            bin_width, np.zeros(0))
    start = float(times[0]) if start_time is None else float(start_time)
    idx = np.floor((times - start) / bin_width).astype(np.int64)
    if idx.min() < 0:
        raise ContractError("events precede the series start time")
    counts = np.bincount(idx)
    return BinnedSeries(start, bin_width, counts.astype(np.float64))


def featurize(series: BinnedSeries, t: int, window: int = DEFAULT_WINDOW) -> np.ndarray:
    """Lag features: the ``window`` counts immediately before bin ``t``."""
    if t < window:
        raise InsufficientHistoryError(f"bin {t} has fewer than {window} predecessors")
    if t > len(series):
        raise ContractError(f"bin {t} beyond series length {len(series)}")
    return series.counts[t - window:t].copy()


def build_dataset(series: BinnedSeries, window: int = DEFAULT_WINDOW):
    """(X, y) with one row per predictable bin; label is that bin's count."""
    n = len(series)
    if n <= window:
        raise InsufficientHistoryError("series shorter than the lag window")
    X = np.stack([series.counts[t - window:t] for t in range(window, n)])
    y = series.counts[window:].copy()
    return X, y


# -- gradient-boosted regression trees ----------------------------------------

@dataclass
class GbrtParams:
    rounds: int = 40
    shrinkage: float = 0.1
    max_depth: int = 6
    colsample: float = 0.7
    l1: float = 0.1
    l2: float = 0.1
    min_leaf: int = 1
    seed: int = 0

    def to_json_dict(self) -> dict:
        return {"rounds": self.rounds, "shrinkage": self.shrinkage,
                "max_depth": self.max_depth, "colsample": self.colsample,
                "l1": self.l1, "l2": self.l2, "min_leaf": self.min_leaf,
                "seed": self.seed}


def _soft_threshold(G: float, l1: float) -> float:
    return max(0.0, abs(G) - l1)


def leaf_weight(G: float, H: float, l1: float, l2: float) -> float:
    """Regularized Newton leaf weight: -sign(G) * max(0, |G|-l1) / (H+l2)."""
    return -math.copysign(1.0, G) * _soft_threshold(G, l1) / (H + l2)


def _leaf_score(G, H, l1: float, l2: float):
    s = np.maximum(0.0, np.abs(G) - l1)
    return s * s / (H + l2)


def _build_tree(X, g, h, rows, features, depth, params: GbrtParams):
    G = float(g[rows].sum())
    H = float(h[rows].sum())
    if depth >= params.max_depth or len(rows) < 2 * params.min_leaf:
        return {"leaf": leaf_weight(G, H, params.l1, params.l2)}

    best = None  # (gain, feature, threshold, left_rows, right_rows)
    parent_score = _leaf_score(G, H, params.l1, params.l2)
    for f in features:
        col = X[rows, f]
        order = np.argsort(col, kind="stable")
        xs = col[order]
        gs = np.cumsum(g[rows][order])
        hs = np.cumsum(h[rows][order])
        # candidate split after position i (left = first i+1 rows)
        boundary = xs[:-1] != xs[1:]
        if not boundary.any():
            continue
        pos = np.nonzero(boundary)[0]
        pos = pos[(pos + 1 >= params.min_leaf)
                  & (len(rows) - pos - 1 >= params.min_leaf)]
        if len(pos) == 0:
            continue
        GL, HL = gs[pos], hs[pos]
        GR, HR = G - GL, H - HL
        gains = (_leaf_score(GL, HL, params.l1, params.l2)
                 + _leaf_score(GR, HR, params.l1, params.l2) - parent_score)
        k = int(np.argmax(gains))
        if gains[k] > 0 and (best is None or gains[k] > best[0]):
            thr = 0.5 * (xs[pos[k]] + xs[pos[k] + 1])
            mask = col <= thr
            best = (float(gains[k]), int(f), float(thr),
                    rows[mask], rows[~mask])

    if best is None:
        return {"leaf": leaf_weight(G, H, params.l1, params.l2)}
    _, f, thr, left_rows, right_rows = best
    return {"feature": f, "threshold": thr,
            "left": _build_tree(X, g, h, left_rows, features, depth + 1, params),
            "right": _build_tree(X, g, h, right_rows, features, depth + 1, params)}


def _predict_tree(node, X: np.ndarray) -> np.ndarray:
    out = np.empty(len(X))
    stack = [(node, np.arange(len(X)))]
    while stack:
        nd, rows = stack.pop()
        if "leaf" in nd:
            out[rows] = nd["leaf"]
            continue
        mask = X[rows, nd["feature"]] <= nd["threshold"]
        stack.append((nd["left"], rows[mask]))
        stack.append((nd["right"], rows[~mask]))
    return out


@dataclass
class GbrtModel:
    params: GbrtParams
    base_score: float
    trees: list = field(default_factory=list)
    train_rmse: list = field(default_factory=list)  # after each round

    def predict(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        pred = np.full(len(X), self.base_score)
        for tree in self.trees:
            pred += self.params.shrinkage * _predict_tree(tree, X)
        return pred

    def to_json_dict(self) -> dict:
        return {"version": 1, "params": self.params.to_json_dict(),
                "base_score": self.base_score, "trees": self.trees,
                "train_rmse": self.train_rmse}

    @classmethod
    def from_json_dict(cls, doc: dict) -> "GbrtModel":
        return cls(params=GbrtParams(**doc["params"]),
                   base_score=doc["base_score"], trees=doc["trees"],
                   train_rmse=doc.get("train_rmse", []))

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_json_dict(), fh, sort_keys=True)

    @classmethod
    def load(cls, path) -> "GbrtModel":
        with open(path) as fh:
            return cls.from_json_dict(json.load(fh))


def fit_gbrt(X, y, params: GbrtParams | None = None) -> GbrtModel:
    """Boost depth-limited regression trees on squared-error gradients.

    Per round: g_i = 2*(pred_i - y_i), h_i = 2; one tree fitted with exact
    greedy splits over a per-tree column subsample; predictions accumulate
    shrinkage * leaf weight.
    """
    params = params if params is not None else GbrtParams()
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if X.ndim != 2 or len(X) != len(y) or len(y) == 0:
        raise ContractError("X must be 2-D and aligned with a non-empty y")

    rng = np.random.default_rng(params.seed)
    n_features = X.shape[1]
    n_cols = max(1, int(round(params.colsample * n_features)))
    model = GbrtModel(params=params, base_score=float(y.mean()))
    pred = np.full(len(y), model.base_score)
    all_rows = np.arange(len(y))
    for _ in range(params.rounds):
        g = 2.0 * (pred - y)
        h = np.full(len(y), 2.0)
        features = np.sort(rng.choice(n_features, size=n_cols, replace=False))
        tree = _build_tree(X, g, h, all_rows, features, 0, params)
        model.trees.append(tree)
        pred += params.shrinkage * _predict_tree(tree, X)
        model.train_rmse.append(rmse(y, pred))
    return model


# -- evaluation ----------------------------------------------------------------

def rmse(y, y_hat) -> float:
    y = np.asarray(y, dtype=np.float64)
    y_hat = np.asarray(y_hat, dtype=np.float64)
    if y.shape != y_hat.shape or len(y) == 0:
        raise ContractError("rmse needs equal-length non-empty sequences")
    return float(np.sqrt(np.mean((y - y_hat) ** 2)))


def band_accuracy(y, y_hat, low: float = -0.08, high: float = 0.15) -> float:
    """Fraction of predictions within [y*(1+low), y*(1+high)].

    Bins with a zero actual count are excluded: the relative band is
    undefined there.
    """
    y = np.asarray(y, dtype=np.float64)
    y_hat = np.asarray(y_hat, dtype=np.float64)
    mask = y > 0
    if not mask.any():
        return 0.0
    yv, pv = y[mask], y_hat[mask]
    ok = (pv >= yv * (1.0 + low)) & (pv <= yv * (1.0 + high))
    return float(np.mean(ok))


def persistence_forecast(y: np.ndarray) -> np.ndarray:
    """Baseline y_hat_t = y_{t-1}; the first point predicts itself."""
    y = np.asarray(y, dtype=np.float64)
    out = np.empty_like(y)
    out[0] = y[0]
    out[1:] = y[:-1]
    return out


def noisy_oracle_forecast(true_next_counts, sigma: float,
                          rng: np.random.Generator) -> np.ndarray:
    """True next-window counts plus N(0, sigma^2) noise, clamped at zero."""
    if sigma < 0:
        raise ContractError("sigma must be non-negative")
    true_next_counts = np.asarray(true_next_counts, dtype=np.float64)
    noisy = true_next_counts + rng.normal(0.0, sigma, size=true_next_counts.shape)
    return np.maximum(noisy, 0.0)


class BinnedForecast:
    """Per-channel flow prediction source backed by binned series.

    ``next_window(t)`` returns each channel's predicted flow for the window
    after the one containing ``t`` (clamped to the last bin at the series
    edge).
    """

    def __init__(self, per_channel: list[BinnedSeries]):
        if not per_channel:
            raise ContractError("need at least one channel series")
        self.per_channel = per_channel

    @property
    def n(self) -> int:
        return len(self.per_channel)

    def next_window(self, time: float) -> np.ndarray:
        out = np.zeros(self.n)
        for i, series in enumerate(self.per_channel):
            if len(series) == 0:
                continue
            k = min(max(series.bin_index(time) + 1, 0), len(series) - 1)
            out[i] = series.counts[k]
        return out


class ZeroForecast:
    """Forecast source that always predicts no flow (ablations, toy tests)."""

    def __init__(self, n: int):
        self.n = n

    def next_window(self, time: float) -> np.ndarray:
        return np.zeros(self.n)


# -- series files ----------------------------------------------------------------

def write_series_csv(path, series: BinnedSeries) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["bin_start", "count"])
        for k, c in enumerate(series.counts):
            writer.writerow([f"{series.start_time + k * series.bin_width:.6f}",
                             f"{c:.10g}"])


def read_series_csv(path) -> BinnedSeries:
    starts, counts = [], []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            starts.append(float(row["bin_start"]))
            counts.append(float(row["count"]))
    if not starts:
        return BinnedSeries(0.0, DEFAULT_BIN_WIDTH, np.zeros(0))
    width = starts[1] - starts[0] if len(starts) > 1 else DEFAULT_BIN_WIDTH
    return BinnedSeries(starts[0], width, np.asarray(counts))

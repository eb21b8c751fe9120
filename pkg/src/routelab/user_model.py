"""Customer preference model: attributes -> per-channel acceptance probability.

The same model class plays two roles. In synthetic mode a seeded random
network acts as environment ground truth; in logged-data mode it is trained
with binary cross-entropy on observed (channel, accepted) pairs. Either way
the bottleneck channel's probability is forced to 1 after the network: a
customer reassigned to the bottleneck never refuses it.
"""

from __future__ import annotations

import json

import numpy as np

from .env import N_ATTRIBUTES, CustomerProfile
from .errors import ContractError
from .nn import Adam, QNetwork

DEFAULT_HIDDEN = (128, 256, 128)
CHECKPOINT_VERSION = 1


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


class AcceptanceModel:
    def __init__(self, network: QNetwork, bottleneck_index: int,
                 cardinalities: tuple[int, ...]):
        if network.input_dim != N_ATTRIBUTES:
            raise ContractError(f"acceptance network needs {N_ATTRIBUTES} inputs")
        if not 0 <= bottleneck_index < network.output_dim:
            raise ContractError("bottleneck index out of range")
        if len(cardinalities) != N_ATTRIBUTES or any(c < 1 for c in cardinalities):
            raise ContractError("need one positive cardinality per attribute")
        self.network = network
        self.bottleneck_index = bottleneck_index
        self.cardinalities = tuple(int(c) for c in cardinalities)
        self.loss_history: list[float] = []

    @property
    def n_channels(self) -> int:
        return self.network.output_dim

    def scale(self, profiles: np.ndarray) -> np.ndarray:
        return np.asarray(profiles, dtype=np.float64) / np.asarray(self.cardinalities)

    def probs_batch(self, profiles: np.ndarray) -> np.ndarray:
        z = self.network.forward(self.scale(np.atleast_2d(profiles)))
        p = _sigmoid(z)
        p[:, self.bottleneck_index] = 1.0
        return p

    def to_json_dict(self) -> dict:
        return {"version": CHECKPOINT_VERSION,
                "bottleneck_index": self.bottleneck_index,
                "cardinalities": list(self.cardinalities),
                "network": self.network.to_json_dict()}

    @classmethod
    def from_json_dict(cls, doc: dict) -> "AcceptanceModel":
        if doc.get("version") != CHECKPOINT_VERSION:
            raise ContractError(f"unsupported acceptance-model version: {doc.get('version')!r}")
        return cls(QNetwork.from_json_dict(doc["network"]),
                   doc["bottleneck_index"], tuple(doc["cardinalities"]))

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_json_dict(), fh, sort_keys=True)

    @classmethod
    def load(cls, path) -> "AcceptanceModel":
        with open(path) as fh:
            return cls.from_json_dict(json.load(fh))


def acceptance_probs(model: AcceptanceModel, profile: CustomerProfile) -> np.ndarray:
    """Length-n vector in [0,1]^n with the bottleneck entry pinned to 1."""
    return model.probs_batch(np.asarray([profile.attributes]))[0]


def sample_acceptance(probs, action: int, rng: np.random.Generator) -> bool:
    p = float(probs[action])
    if not 0.0 <= p <= 1.0:
        raise ContractError(f"acceptance probability {p} outside [0, 1]")
    return bool(rng.random() < p)


def synthetic_truth_model(n_channels: int, bottleneck_index: int,
                          cardinalities, seed: int,
                          hidden: tuple[int, ...] = (16, 32, 16),
                          gain: float = 6.0) -> AcceptanceModel:
    """Seeded random network used as ground truth for generated logs.

    The amplified initialization spreads acceptance probabilities over (0, 1)
    instead of clustering near the sigmoid midpoint, so synthetic customers
    have genuinely different channel preferences.
    """
    rng = np.random.default_rng(seed)
    net = QNetwork(N_ATTRIBUTES, hidden, n_channels, dueling=False, rng=rng,
                   init_gain=gain)
    return AcceptanceModel(net, bottleneck_index, tuple(cardinalities))


def fit_user_model(log, n_channels: int, bottleneck_index: int, cardinalities,
                   epochs: int = 30, lr: float = 1e-3,
                   hidden: tuple[int, ...] = DEFAULT_HIDDEN,
                   batch_size: int = 64, seed: int = 0) -> AcceptanceModel:
    """Train an acceptance model on (profile, channel, accepted) observations.

    Binary cross-entropy on the observed channel's output only; other
    channels receive no gradient from that example.
    """
    if len(log) == 0:
        raise ContractError("training log must be non-empty")
    rng = np.random.default_rng(seed)
    net = QNetwork(N_ATTRIBUTES, hidden, n_channels, dueling=False, rng=rng)
    model = AcceptanceModel(net, bottleneck_index, tuple(cardinalities))
    opt = Adam(lr=lr)

    X = model.scale(np.asarray([entry[0].attributes for entry in log]))
    channels = np.asarray([entry[1] for entry in log], dtype=np.intp)
    labels = np.asarray([float(entry[2]) for entry in log])

    n = len(log)
    history = []
    for _ in range(epochs):
        order = rng.permutation(n)
        for start in range(0, n, batch_size):
            sel = order[start:start + batch_size]
            z, cache = net._forward_cached(X[sel])
            p = _sigmoid(z[np.arange(len(sel)), channels[sel]])
            dZ = np.zeros_like(z)
            dZ[np.arange(len(sel)), channels[sel]] = (p - labels[sel]) / len(sel)
            grads = net.backward(cache, dZ)
            opt.step(net.parameters(), grads)
        history.append(bce_loss(model, log))
    model.loss_history = history
    return model


def bce_loss(model: AcceptanceModel, log) -> float:
    """Mean binary cross-entropy of the model on a (profile, channel, accepted) log."""
    X = model.scale(np.asarray([entry[0].attributes for entry in log]))
    channels = np.asarray([entry[1] for entry in log], dtype=np.intp)
    labels = np.asarray([float(entry[2]) for entry in log])
    z = model.network.forward(X)[np.arange(len(log)), channels]
    p = np.clip(_sigmoid(z), 1e-12, 1.0 - 1e-12)
    return float(-np.mean(labels * np.log(p) + (1.0 - labels) * np.log(1.0 - p)))

"""Minimal feed-forward network machinery in float64 numpy.

Covers exactly what the routing agents need: dense ReLU trunks, an optional
dueling head (state value + action advantages combined with mean
subtraction), explicit backprop, an Adam optimizer, and target-network
syncing. No autograd, no GPU.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, NumericError

CHECKPOINT_VERSION = 1


@dataclass
class Dense:
    W: np.ndarray  # (fan_in, fan_out)
    b: np.ndarray  # (fan_out,)
    activation: str = "relu"  # "relu" or "linear"


def _init_dense(rng: np.random.Generator, fan_in: int, fan_out: int,
                activation: str, gain: float = 1.0) -> Dense:
    bound = gain / np.sqrt(fan_in)
    W = rng.uniform(-bound, bound, size=(fan_in, fan_out))
    b = np.zeros(fan_out)
    return Dense(W, b, activation)


class QNetwork:
    """Dense network mapping a flattened state to one Q value per action.

    ``hidden`` layers use ReLU. With ``dueling=True`` the trunk feeds two
    linear heads (value: 1 output, advantage: ``output_dim`` outputs) that
    are combined as Q_a = V + A_a - mean(A).
    """

    def __init__(self, input_dim: int, hidden: tuple[int, ...], output_dim: int,
                 dueling: bool = False, rng: np.random.Generator | None = None,
                 init_gain: float = 1.0):
        if input_dim < 1 or output_dim < 1:
            raise ContractError("input_dim and output_dim must be positive")
        rng = rng if rng is not None else np.random.default_rng(0)
        self.input_dim = input_dim
        self.hidden = tuple(hidden)
        self.output_dim = output_dim
        self.dueling = dueling

        self.trunk: list[Dense] = []
        prev = input_dim
        for width in self.hidden:
            self.trunk.append(_init_dense(rng, prev, width, "relu", init_gain))
            prev = width
        if dueling:
            self.value_head = _init_dense(rng, prev, 1, "linear", init_gain)
            self.adv_head = _init_dense(rng, prev, output_dim, "linear", init_gain)
        else:
            self.out_layer = _init_dense(rng, prev, output_dim, "linear", init_gain)

    # -- parameters ---------------------------------------------------------

    def parameters(self) -> list[np.ndarray]:
        params: list[np.ndarray] = []
        for layer in self.trunk:
            params.extend((layer.W, layer.b))
        if self.dueling:
            params.extend((self.value_head.W, self.value_head.b))
            params.extend((self.adv_head.W, self.adv_head.b))
        else:
            params.extend((self.out_layer.W, self.out_layer.b))
        return params

    def same_architecture(self, other: "QNetwork") -> bool:
        return (self.input_dim == other.input_dim
                and self.hidden == other.hidden
                and self.output_dim == other.output_dim
                and self.dueling == other.dueling)

    # -- forward ------------------------------------------------------------

    def forward(self, x: np.ndarray) -> np.ndarray:
        """Q values for a single state (1-D input) or a batch (2-D input)."""
        x = np.asarray(x, dtype=np.float64)
        single = x.ndim == 1
        q, _ = self._forward_cached(np.atleast_2d(x))
        return q[0] if single else q

    def _forward_cached(self, X: np.ndarray):
        if X.shape[1] != self.input_dim:
            raise ContractError(
                f"input has {X.shape[1]} features, network expects {self.input_dim}")
        pre: list[np.ndarray] = []   # pre-activation per trunk layer
        acts: list[np.ndarray] = [X]  # post-activation, acts[i] feeds layer i
        h = X
        for layer in self.trunk:
            z = h @ layer.W + layer.b
            pre.append(z)
            h = np.maximum(z, 0.0)
            acts.append(h)
        if self.dueling:
            V = h @ self.value_head.W + self.value_head.b  # (B, 1)
            A = h @ self.adv_head.W + self.adv_head.b      # (B, n)
            q = V + A - A.mean(axis=1, keepdims=True)
        else:
            q = h @ self.out_layer.W + self.out_layer.b
        return q, (pre, acts)

    # -- backward -----------------------------------------------------------

    def backward(self, cache, dQ: np.ndarray) -> list[np.ndarray]:
        """Gradients for all parameters given dLoss/dQ, in parameters() order."""
        pre, acts = cache
        h = acts[-1]
        head_grads: list[np.ndarray] = []
        if self.dueling:
            dV = dQ.sum(axis=1, keepdims=True)
            dA = dQ - dQ.sum(axis=1, keepdims=True) / self.output_dim
            gWv = h.T @ dV
            gbv = dV.sum(axis=0)
            gWa = h.T @ dA
            gba = dA.sum(axis=0)
            dh = dV @ self.value_head.W.T + dA @ self.adv_head.W.T
            head_grads = [gWv, gbv, gWa, gba]
        else:
            gWo = h.T @ dQ
            gbo = dQ.sum(axis=0)
            dh = dQ @ self.out_layer.W.T
            head_grads = [gWo, gbo]

        trunk_grads: list[np.ndarray] = []
        for i in range(len(self.trunk) - 1, -1, -1):
            dz = dh * (pre[i] > 0)
            trunk_grads.append(dz.sum(axis=0))          # bias
            trunk_grads.append(acts[i].T @ dz)          # weights
            dh = dz @ self.trunk[i].W.T
        trunk_grads.reverse()
        return trunk_grads + head_grads

    # -- copy / checkpoint ----------------------------------------------------

    def copy(self) -> "QNetwork":
        clone = QNetwork(self.input_dim, self.hidden, self.output_dim, self.dueling)
        for dst, src in zip(clone.parameters(), self.parameters()):
            dst[...] = src
        return clone

    def to_json_dict(self) -> dict:
        return {
            "version": CHECKPOINT_VERSION,
            "input_dim": self.input_dim,
            "hidden": list(self.hidden),
            "output_dim": self.output_dim,
            "dueling": self.dueling,
            "weights": [p.tolist() for p in self.parameters()],
        }

    @classmethod
    def from_json_dict(cls, doc: dict) -> "QNetwork":
        if doc.get("version") != CHECKPOINT_VERSION:
            raise ContractError(f"unsupported checkpoint version: {doc.get('version')!r}")
        net = cls(doc["input_dim"], tuple(doc["hidden"]), doc["output_dim"],
                  doc["dueling"])
        params = net.parameters()
        if len(params) != len(doc["weights"]):
            raise ContractError("checkpoint weight count does not match architecture")
        for dst, src in zip(params, doc["weights"]):
            arr = np.asarray(src, dtype=np.float64)
            if arr.shape != dst.shape:
                raise ContractError("checkpoint weight shape mismatch")
            dst[...] = arr
        return net

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_json_dict(), fh, sort_keys=True)

    @classmethod
    def load(cls, path) -> "QNetwork":
        with open(path) as fh:
            return cls.from_json_dict(json.load(fh))


def dueling_combine(V: float, A) -> np.ndarray:
    """Q_a = V + A_a - mean(A); the mean subtraction makes V identifiable."""
    A = np.asarray(A, dtype=np.float64)
    if A.size == 0:
        raise ContractError("advantage vector must be non-empty")
    return V + A - A.mean()


@dataclass
class Adam:
    """Adaptive-moment gradient descent over a fixed parameter list."""

    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    def _ensure_state(self, params: list[np.ndarray]) -> None:
        if not self.m:
            self.m = [np.zeros_like(p) for p in params]
            self.v = [np.zeros_like(p) for p in params]

    def step(self, params: list[np.ndarray], grads: list[np.ndarray]) -> None:
        self._ensure_state(params)
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def batch_loss_and_grads(net: QNetwork, X: np.ndarray, actions: np.ndarray,
                         targets: np.ndarray, weights: np.ndarray):
    """Weighted TD loss mean(w * (target - Q(x, a))^2) and its gradients."""
    B = X.shape[0]
    q, cache = net._forward_cached(X)
    picked = q[np.arange(B), actions]
    err = targets - picked
    loss = float(np.mean(weights * err * err))
    dQ = np.zeros_like(q)
    dQ[np.arange(B), actions] = -2.0 * weights * err / B
    grads = net.backward(cache, dQ)
    return loss, grads


def backward_and_step(net: QNetwork, batch, opt: Adam) -> float:
    """One weighted squared-TD-error gradient step; returns the pre-step loss.

    ``batch`` is a sequence of (state_vector, action, target, weight) tuples
    or a (X, actions, targets, weights) array quadruple.
    """
    if isinstance(batch, tuple) and len(batch) == 4:
        X, actions, targets, weights = batch
    else:
        if len(batch) == 0:
            raise ContractError("batch must be non-empty")
        X = np.stack([np.asarray(b[0], dtype=np.float64) for b in batch])
        actions = np.asarray([b[1] for b in batch], dtype=np.intp)
        targets = np.asarray([b[2] for b in batch], dtype=np.float64)
        weights = np.asarray([b[3] for b in batch], dtype=np.float64)
    X = np.asarray(X, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    weights = np.asarray(weights, dtype=np.float64)
    if X.shape[0] == 0:
        raise ContractError("batch must be non-empty")
    if np.any(weights < 0):
        raise ContractError("batch weights must be non-negative")
    if not (np.isfinite(X).all() and np.isfinite(targets).all()
            and np.isfinite(weights).all()):
        raise NumericError("non-finite values in training batch; step skipped")
    loss, grads = batch_loss_and_grads(net, X, actions, targets, weights)
    opt.step(net.parameters(), grads)
    return loss


def sync_target(online: QNetwork, target: QNetwork) -> None:
    """Copy online parameters into the target network, bit-exactly."""
    if not online.same_architecture(target):
        raise ContractError("online/target architecture mismatch")
    for dst, src in zip(target.parameters(), online.parameters()):
        dst[...] = src

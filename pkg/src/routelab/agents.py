"""Q-learning agent variants, the streaming training loop, the rule-based
production baseline, and myopic machine-learning baselines.

Variants: dqn (vanilla), double (double target), dueling (dueling head),
double_dueling (both), per_double_dueling (both + prioritized replay).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import env as envmod
from .env import (ChannelConfig, EnvState, RewardParams, StateVector,
                  compute_reward, env_assign, env_reset, is_terminal, observe,
                  process_completions, reset_capacities)
from .errors import ConfigError, ContractError, NotReadyError
from .metrics import TraceRecord
from .nn import Adam, QNetwork, backward_and_step, sync_target
from .replay import PrioritizedBuffer, UniformBuffer
from .user_model import AcceptanceModel, acceptance_probs, sample_acceptance

VARIANTS = ("dqn", "double", "dueling", "double_dueling", "per_double_dueling")
ABLATIONS = ("full", "no_forecast", "no_user", "no_terminal")

# reward/discount defaults tuned per variant on the training set
_VARIANT_PARAMS = {
    "dqn":                {"lambda1": 0.8, "lambda2": 0.015, "gamma": 0.7},
    "double":             {"lambda1": 0.9, "lambda2": 0.020, "gamma": 0.5},
    "dueling":            {"lambda1": 0.9, "lambda2": 0.015, "gamma": 0.5},
    "double_dueling":     {"lambda1": 0.9, "lambda2": 0.015, "gamma": 0.5},
    "per_double_dueling": {"lambda1": 0.9, "lambda2": 0.015, "gamma": 0.5},
}
_ABLATION_PARAMS = {
    "no_forecast": {"lambda1": 0.8, "lambda2": 0.020, "gamma": 0.3},
    "no_user":     {"lambda1": 0.5, "lambda2": 0.015, "gamma": 0.7},
}


@dataclass(frozen=True)
class Transition:
    state: StateVector
    action: int
    reward: float
    next_state: StateVector
    terminal: bool

    def to_json_dict(self) -> dict:
        return {"state": self.state.to_json_dict(), "action": self.action,
                "reward": self.reward, "next_state": self.next_state.to_json_dict(),
                "terminal": self.terminal}


@dataclass
class AgentConfig:
    variant: str = "per_double_dueling"
    gamma: float = 0.5
    epsilon_start: float = 1.0
    epsilon_end: float = 0.05
    epsilon_decay_steps: int = 5000
    batch_size: int = 320
    buffer_size: int = 2000
    sync_period: int = 200
    done_num: int = envmod.DEFAULT_DONE_NUM
    reward_params: RewardParams = field(default_factory=RewardParams)
    state_ablation: str = "full"
    hidden: tuple[int, ...] = (128, 256, 128)
    lr: float = 1e-3
    per_alpha: float = 0.6
    per_epsilon: float = 1e-5
    per_use_is: bool = False
    flow_scale: float = 100.0

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown variant {self.variant!r}")
        if self.state_ablation not in ABLATIONS:
            raise ConfigError(f"unknown ablation {self.state_ablation!r}")
        if not 0.0 <= self.gamma < 1.0:
            raise ConfigError("gamma must lie in [0, 1)")
        if self.batch_size > self.buffer_size:
            raise ConfigError("batch_size cannot exceed buffer_size")

    @property
    def dueling(self) -> bool:
        return self.variant in ("dueling", "double_dueling", "per_double_dueling")

    @property
    def double(self) -> bool:
        return self.variant in ("double", "double_dueling", "per_double_dueling")

    @property
    def prioritized(self) -> bool:
        return self.variant == "per_double_dueling"

    def to_json_dict(self) -> dict:
        return {"variant": self.variant, "gamma": self.gamma,
                "epsilon_start": self.epsilon_start, "epsilon_end": self.epsilon_end,
                "epsilon_decay_steps": self.epsilon_decay_steps,
                "batch_size": self.batch_size, "buffer_size": self.buffer_size,
                "sync_period": self.sync_period, "done_num": self.done_num,
                "reward_params": self.reward_params.to_json_dict(),
                "state_ablation": self.state_ablation, "hidden": list(self.hidden),
                "lr": self.lr, "per_alpha": self.per_alpha,
                "per_epsilon": self.per_epsilon, "per_use_is": self.per_use_is,
                "flow_scale": self.flow_scale}


def default_config(variant: str, ablation: str = "full", **overrides) -> AgentConfig:
    """Per-variant tuned defaults; ablations override reward/discount settings."""
    if variant not in VARIANTS:
        raise ConfigError(f"unknown variant {variant!r}")
    tuned = dict(_VARIANT_PARAMS[variant])
    if ablation in _ABLATION_PARAMS:
        tuned.update(_ABLATION_PARAMS[ablation])
    params = RewardParams(lambda1=tuned["lambda1"], lambda2=tuned["lambda2"])
    cfg = AgentConfig(variant=variant, gamma=tuned["gamma"],
                      reward_params=params, state_ablation=ablation)
    return replace(cfg, **overrides) if overrides else cfg


def select_action(q, epsilon: float, rng: np.random.Generator) -> int:
    """Epsilon-greedy with lowest-index tie-breaking on the greedy branch."""
    q = np.asarray(q, dtype=np.float64)
    if q.size == 0:
        raise ContractError("empty Q vector")
    if not 0.0 <= epsilon <= 1.0:
        raise ContractError("epsilon must lie in [0, 1]")
    if epsilon > 0.0 and rng.random() < epsilon:
        return int(rng.integers(q.size))
    return int(np.argmax(q))


def td_target(variant: str, transition: Transition, online: QNetwork,
              target: QNetwork, gamma: float) -> float:
    """Bootstrapped target; double variants select with the online network
    and evaluate with the target network."""
    if not online.same_architecture(target):
        raise ContractError("online/target architecture mismatch")
    if transition.terminal:
        return transition.reward
    x = transition.next_state.flatten()
    q_target = target.forward(x)
    if variant in ("double", "double_dueling", "per_double_dueling"):
        a_star = int(np.argmax(online.forward(x)))
        return transition.reward + gamma * float(q_target[a_star])
    return transition.reward + gamma * float(np.max(q_target))


class QAgent:
    """Online/target networks, replay buffer, and optimizer for one variant."""

    def __init__(self, config: AgentConfig, n_channels: int,
                 rng: np.random.Generator | None = None):
        self.config = config
        self.n = n_channels
        input_dim = 3 * n_channels
        rng = rng if rng is not None else np.random.default_rng(0)
        self.online = QNetwork(input_dim, config.hidden, n_channels,
                               dueling=config.dueling, rng=rng)
        self.target = self.online.copy()
        self.opt = Adam(lr=config.lr)
        if config.prioritized:
            self.buffer = PrioritizedBuffer(config.buffer_size,
                                            alpha=config.per_alpha,
                                            epsilon_p=config.per_epsilon,
                                            use_is=config.per_use_is)
        else:
            self.buffer = UniformBuffer(config.buffer_size)
        self.global_step = 0

    def epsilon(self) -> float:
        c = self.config
        if c.epsilon_decay_steps <= 0:
            return c.epsilon_end
        frac = min(1.0, self.global_step / c.epsilon_decay_steps)
        return c.epsilon_start + frac * (c.epsilon_end - c.epsilon_start)

    def act(self, state: StateVector, epsilon: float, rng: np.random.Generator) -> int:
        return select_action(self.online.forward(state.flatten()), epsilon, rng)

    def learn_step(self, rng: np.random.Generator) -> float | None:
        """One minibatch update if the buffer is ready; returns the loss."""
        c = self.config
        if len(self.buffer) < c.batch_size:
            return None
        sampled = self.buffer.sample(c.batch_size, rng)
        indices = [s[0] for s in sampled]
        transitions = [s[1] for s in sampled]
        probs = np.asarray([s[2] for s in sampled])

        X = np.stack([t.state.flatten() for t in transitions])
        actions = np.asarray([t.action for t in transitions], dtype=np.intp)
        targets = self._targets(transitions)
        q_now = self.online.forward(X)[np.arange(len(transitions)), actions]
        td_errors = targets - q_now
        weights = self.buffer.importance_weights(probs)
        loss = backward_and_step(self.online, (X, actions, targets, weights), self.opt)
        self.buffer.update_priorities(indices, td_errors)
        return loss

    def _targets(self, transitions) -> np.ndarray:
        c = self.config
        X_next = np.stack([t.next_state.flatten() for t in transitions])
        rewards = np.asarray([t.reward for t in transitions])
        terminal = np.asarray([t.terminal for t in transitions])
        q_target = self.target.forward(X_next)
        if c.double:
            a_star = np.argmax(self.online.forward(X_next), axis=1)
            boot = q_target[np.arange(len(transitions)), a_star]
        else:
            boot = q_target.max(axis=1)
        return np.where(terminal, rewards, rewards + c.gamma * boot)

    def maybe_sync(self) -> None:
        if self.global_step % self.config.sync_period == 0:
            sync_target(self.online, self.target)


def _ablated_view(u: np.ndarray, e_hat: np.ndarray, ablation: str,
                  bottleneck: int) -> tuple[np.ndarray, np.ndarray]:
    u = u.copy()
    e_hat = e_hat.copy()
    if ablation == "no_forecast":
        e_hat[:] = 0.0
    elif ablation == "no_user":
        keep = u[bottleneck]
        u[:] = 0.0
        u[bottleneck] = keep
    return u, e_hat


def train_episode_stream(channels: ChannelConfig, agent: QAgent,
                         user_model: AcceptanceModel, forecaster, events,
                         rng: np.random.Generator, learn: bool = True,
                         epsilon_override: float | None = None,
                         log: list | None = None) -> list[TraceRecord]:
    """Run the online routing loop over a time-ordered event stream.

    One-step-delayed transition storage: the transition for event t-1 is
    pushed when event t is observed, carrying the reward computed after
    event t-1's capacity update. Rejections are reassigned to the bottleneck
    channel. Returns one TraceRecord per event.
    """
    if user_model.n_channels != channels.n:
        raise ConfigError("user model channel count mismatch")
    if forecaster.n != channels.n:
        raise ConfigError("forecaster channel count mismatch")
    cfg = agent.config
    state = env_reset(channels, events[0].arrival_time if events else 0.0)
    trace: list[TraceRecord] = []
    prev: tuple[StateVector, int, float, bool] | None = None

    for step, ev in enumerate(events):
        process_completions(state, ev.arrival_time)
        u_true = acceptance_probs(user_model, ev.profile)
        e_hat = np.asarray(forecaster.next_window(ev.arrival_time), dtype=np.float64)
        u_obs, e_obs = _ablated_view(u_true, e_hat, cfg.state_ablation,
                                     channels.bottleneck_index)
        s_t = observe(state, u_obs, e_obs / cfg.flow_scale, channels)

        if prev is not None and learn:
            agent.buffer.push(Transition(prev[0], prev[1], prev[2], s_t, prev[3]))

        eps = epsilon_override if epsilon_override is not None else (
            agent.epsilon() if learn else 0.0)
        action = agent.act(s_t, eps, rng)
        accepted = sample_acceptance(u_true, action, rng)
        if accepted:
            g = cfg.reward_params.accept_reward
            final = action
        else:
            g = cfg.reward_params.reject_reward
            final = channels.bottleneck_index
        env_assign(state, ev, final)
        reward = compute_reward(g, state.capacity, e_obs, cfg.reward_params)

        terminal = False
        if cfg.state_ablation != "no_terminal" and is_terminal(state.capacity,
                                                               cfg.done_num):
            terminal = True
        trace.append(TraceRecord(step=step, time=ev.arrival_time,
                                 suggested_channel=action, final_channel=final,
                                 accepted=accepted, g=g, reward=reward,
                                 capacities=tuple(state.capacity),
                                 terminal=terminal))
        if terminal:
            reset_capacities(state)
        prev = (s_t, action, reward, terminal)

        loss = None
        if learn:
            loss = agent.learn_step(rng)
            agent.global_step += 1
            agent.maybe_sync()
        if log is not None:
            log.append({"step": step, "epsilon": eps, "reward": reward,
                        "loss": loss, "terminal": terminal})
    return trace


# -- rule-based production baseline --------------------------------------------

@dataclass
class RuleBasedParams:
    q_sat: int = 50  # queue length at which the drainage offer saturates


def rule_based_route(hotline_queue_len: int, rng: np.random.Generator,
                     params: RuleBasedParams,
                     self_service_accepted: bool) -> str:
    """Second stage of the production rules, after the mandatory self-service ask.

    Returns "self_service", "hotline", or "drainage_offer". Customers who
    declined self-service go to the hotline when nobody is queueing;
    otherwise they are offered the drainage channel with probability
    min(1, queue/q_sat).
    """
    if hotline_queue_len < 0:
        raise ContractError("queue length cannot be negative")
    if self_service_accepted:
        return "self_service"
    if hotline_queue_len == 0:
        return "hotline"
    p_offer = min(1.0, hotline_queue_len / params.q_sat)
    return "drainage_offer" if rng.random() < p_offer else "hotline"


def run_rule_based(channels: ChannelConfig, user_model: AcceptanceModel,
                   events, rng: np.random.Generator,
                   reward_params: RewardParams | None = None,
                   params: RuleBasedParams | None = None,
                   forecaster=None,
                   done_num: int = envmod.DEFAULT_DONE_NUM) -> list[TraceRecord]:
    """Simulate the rule-based system over an event stream, emitting a trace."""
    reward_params = reward_params or RewardParams()
    params = params or RuleBasedParams()
    state = env_reset(channels, events[0].arrival_time if events else 0.0)
    trace: list[TraceRecord] = []
    for step, ev in enumerate(events):
        process_completions(state, ev.arrival_time)
        u = acceptance_probs(user_model, ev.profile)
        self_ok = sample_acceptance(u, channels.self_service_index, rng)
        decision = rule_based_route(state.queue_length(channels.bottleneck_index),
                                    rng, params, self_ok)
        if decision == "self_service":
            suggested, accepted = channels.self_service_index, True
        elif decision == "drainage_offer":
            suggested = channels.drainage_index
            accepted = sample_acceptance(u, channels.drainage_index, rng)
        else:
            suggested, accepted = channels.self_service_index, False
        final = suggested if accepted else channels.bottleneck_index
        g = reward_params.accept_reward if accepted else reward_params.reject_reward
        env_assign(state, ev, final)
        e_hat = (np.asarray(forecaster.next_window(ev.arrival_time))
                 if forecaster is not None else np.zeros(channels.n))
        reward = compute_reward(g, state.capacity, e_hat, reward_params)
        terminal = is_terminal(state.capacity, done_num)
        trace.append(TraceRecord(step=step, time=ev.arrival_time,
                                 suggested_channel=suggested, final_channel=final,
                                 accepted=accepted, g=g, reward=reward,
                                 capacities=tuple(state.capacity),
                                 terminal=terminal))
        if terminal:
            reset_capacities(state)
    return trace


# -- myopic baselines ------------------------------------------------------------

def expected_immediate_reward(action: int, u, capacity, forecast_next,
                              params: RewardParams, bottleneck: int) -> float:
    """Acceptance-weighted one-step reward of suggesting ``action``."""
    capacity = np.asarray(capacity, dtype=np.float64)
    accept_cap = capacity.copy()
    accept_cap[action] -= 1
    reject_cap = capacity.copy()
    reject_cap[bottleneck] -= 1
    p = float(u[action])
    return (p * compute_reward(params.accept_reward, accept_cap, forecast_next, params)
            + (1.0 - p) * compute_reward(params.reject_reward, reject_cap,
                                         forecast_next, params))


def greedy_route(u, capacity, forecast_next, params: RewardParams,
                 bottleneck: int) -> int:
    """Argmax over actions of the expected immediate reward."""
    scores = [expected_immediate_reward(a, u, capacity, forecast_next, params,
                                        bottleneck)
              for a in range(len(u))]
    return int(np.argmax(scores))


class KnnRouter:
    """Majority accepted-channel among the k nearest profiles in a labeled log."""

    def __init__(self, k: int = 15, cardinalities=None):
        self.k = k
        self.cardinalities = cardinalities
        self._X: np.ndarray | None = None
        self._channels: np.ndarray | None = None

    def fit(self, log) -> "KnnRouter":
        """``log``: (profile, channel, accepted) triples; accepted ones are kept."""
        kept = [(p, ch) for p, ch, ok in log if ok]
        if not kept:
            raise ContractError("log holds no accepted routings")
        card = np.asarray(self.cardinalities
                          if self.cardinalities is not None
                          else [1] * len(kept[0][0].attributes), dtype=np.float64)
        self._X = np.asarray([p.attributes for p, _ in kept], dtype=np.float64) / card
        self._card = card
        self._channels = np.asarray([ch for _, ch in kept], dtype=np.intp)
        return self

    def route(self, profile) -> int:
        if self._X is None:
            raise NotReadyError("knn router has not been fitted")
        q = np.asarray(profile.attributes, dtype=np.float64) / self._card
        d2 = ((self._X - q) ** 2).sum(axis=1)
        nearest = np.argsort(d2, kind="stable")[:self.k]
        votes = np.bincount(self._channels[nearest])
        return int(np.argmax(votes))


def simulated_annealing_route(u, capacity, forecast_next, params: RewardParams,
                              bottleneck: int, rng: np.random.Generator,
                              t0: float = 1.0, ratio: float = 0.95,
                              steps: int = 50) -> int:
    """Hill climb over the n actions on the greedy objective with geometric
    temperature; at temperature zero this reduces to greedy_route."""
    n = len(u)
    scores = [expected_immediate_reward(a, u, capacity, forecast_next, params,
                                        bottleneck) for a in range(n)]
    current = int(rng.integers(n))
    best = current
    temp = t0
    for _ in range(steps):
        cand = int(rng.integers(n))
        delta = scores[cand] - scores[current]
        if delta >= 0 or (temp > 0 and rng.random() < math.exp(delta / temp)):
            current = cand
            if scores[current] > scores[best]:
                best = current
        temp *= ratio
    return best if temp > 0 else int(np.argmax(scores))


def run_myopic(channels: ChannelConfig, user_model_: AcceptanceModel, events,
               rng: np.random.Generator, router: str = "greedy",
               reward_params: RewardParams | None = None, forecaster=None,
               knn: KnnRouter | None = None,
               done_num: int = envmod.DEFAULT_DONE_NUM) -> list[TraceRecord]:
    """Event loop for the non-learning baselines (greedy, knn, sa)."""
    reward_params = reward_params or RewardParams()
    state = env_reset(channels, events[0].arrival_time if events else 0.0)
    trace: list[TraceRecord] = []
    for step, ev in enumerate(events):
        process_completions(state, ev.arrival_time)
        u = acceptance_probs(user_model_, ev.profile)
        e_hat = (np.asarray(forecaster.next_window(ev.arrival_time))
                 if forecaster is not None else np.zeros(channels.n))
        if router == "greedy":
            action = greedy_route(u, state.capacity, e_hat, reward_params,
                                  channels.bottleneck_index)
        elif router == "knn":
            if knn is None:
                raise NotReadyError("knn router required")
            action = knn.route(ev.profile)
        elif router == "sa":
            action = simulated_annealing_route(u, state.capacity, e_hat,
                                               reward_params,
                                               channels.bottleneck_index, rng)
        else:
            raise ConfigError(f"unknown myopic router {router!r}")
        accepted = sample_acceptance(u, action, rng)
        g = reward_params.accept_reward if accepted else reward_params.reject_reward
        final = action if accepted else channels.bottleneck_index
        env_assign(state, ev, final)
        reward = compute_reward(g, state.capacity, e_hat, reward_params)
        terminal = is_terminal(state.capacity, done_num)
        trace.append(TraceRecord(step=step, time=ev.arrival_time,
                                 suggested_channel=action, final_channel=final,
                                 accepted=accepted, g=g, reward=reward,
                                 capacities=tuple(state.capacity),
                                 terminal=terminal))
        if terminal:
            reset_capacities(state)
    return trace

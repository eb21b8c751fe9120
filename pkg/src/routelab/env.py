"""Routing environment: channel capacities, arrival/completion dynamics,
state construction, reward computation, and terminal/reset semantics.

Capacity is a signed counter per channel: positive values are free slots,
negative values are queue lengths. Assignments always decrement the chosen
channel; completions increment it when the scheduled finish time passes.
"""

from __future__ import annotations

import csv
import heapq
import json
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ContractError

DEFAULT_DONE_NUM = -100  # episode ends once any channel queues 100 deep


@dataclass(frozen=True)
class ChannelConfig:
    n: int
    initial_capacity: tuple[int, ...]
    bottleneck_index: int
    self_service_index: int
    drainage_index: int

    def __post_init__(self):
        object.__setattr__(self, "initial_capacity", tuple(int(c) for c in self.initial_capacity))
        if self.n < 2:
            raise ConfigError("at least two channels required")
        if len(self.initial_capacity) != self.n:
            raise ConfigError("initial_capacity length must equal n")
        if any(c < 0 for c in self.initial_capacity):
            raise ConfigError("initial capacities must be non-negative")
        roles = (self.bottleneck_index, self.self_service_index, self.drainage_index)
        if len(set(roles)) != 3 or any(not 0 <= i < self.n for i in roles):
            raise ConfigError("role indices must be distinct and within range")
        if self.initial_capacity[self.bottleneck_index] <= 0:
            raise ConfigError("bottleneck channel needs positive initial capacity")

    def to_json_dict(self) -> dict:
        return {"n": self.n,
                "initial_capacity": list(self.initial_capacity),
                "bottleneck_index": self.bottleneck_index,
                "self_service_index": self.self_service_index,
                "drainage_index": self.drainage_index}

    @classmethod
    def from_json_dict(cls, doc: dict) -> "ChannelConfig":
        return cls(doc["n"], tuple(doc["initial_capacity"]), doc["bottleneck_index"],
                   doc["self_service_index"], doc["drainage_index"])


N_ATTRIBUTES = 7  # gender, age, province, household, car, assets, credit limit


@dataclass(frozen=True)
class CustomerProfile:
    attributes: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "attributes", tuple(int(a) for a in self.attributes))
        if len(self.attributes) != N_ATTRIBUTES:
            raise ContractError(f"profiles carry exactly {N_ATTRIBUTES} attributes")


@dataclass(frozen=True)
class RequestEvent:
    arrival_time: float  # seconds since epoch
    customer_id: str
    profile: CustomerProfile
    service_duration: float  # seconds

    def __post_init__(self):
        if self.service_duration <= 0:
            raise ContractError("service_duration must be positive")


@dataclass
class RewardParams:
    lambda1: float = 0.9
    lambda2: float = 0.015
    lambda3: float = 0.3
    accept_reward: float = 1.0
    reject_reward: float = -1.0

    def __post_init__(self):
        if self.lambda1 < 0 or self.lambda2 < 0 or self.lambda3 < 0:
            raise ConfigError("lambdas must be non-negative")
        if self.lambda1 < self.lambda2:
            raise ConfigError("lambda1 must dominate lambda2")
        if not 0.0 < self.lambda3 <= 1.0:
            raise ConfigError("lambda3 must lie in (0, 1]")

    def to_json_dict(self) -> dict:
        return {"lambda1": self.lambda1, "lambda2": self.lambda2,
                "lambda3": self.lambda3, "accept_reward": self.accept_reward,
                "reject_reward": self.reject_reward}


@dataclass
class EnvState:
    config: ChannelConfig
    capacity: list[int]
    clock: float
    in_flight: list[tuple[float, int]] = field(default_factory=list)  # heap of (finish, channel)
    episode_step: int = 0
    in_flight_counts: list[int] = field(default_factory=list)

    def queue_length(self, channel: int) -> int:
        return max(0, -self.capacity[channel])


@dataclass(frozen=True)
class StateVector:
    acceptance: tuple[float, ...]
    forecast: tuple[float, ...]
    capacity_scaled: tuple[float, ...]

    def flatten(self) -> np.ndarray:
        return np.concatenate([self.acceptance, self.forecast, self.capacity_scaled])

    def to_json_dict(self) -> dict:
        return {"acceptance": list(self.acceptance), "forecast": list(self.forecast),
                "capacity_scaled": list(self.capacity_scaled)}


def penalized_reward(g: float, x: float, params: RewardParams) -> float:
    """Acceptance reward minus linear and quadratic congestion penalties on x."""
    return g - params.lambda1 * x - params.lambda2 * x * x


def compute_reward(g: float, capacity, forecast_next, params: RewardParams) -> float:
    """Reward for one routing decision given post-assignment capacities.

    x = ReLU(-min_i(capacity_i - lambda3 * forecast_i)) is the anticipated
    congestion magnitude; both penalty terms are evaluated on it.
    """
    capacity = np.asarray(capacity, dtype=np.float64)
    forecast_next = np.asarray(forecast_next, dtype=np.float64)
    if capacity.shape != forecast_next.shape:
        raise ContractError("capacity and forecast must have equal length")
    m = float(np.min(capacity - params.lambda3 * forecast_next))
    x = max(0.0, -m)
    return penalized_reward(g, x, params)


def env_reset(config: ChannelConfig, clock: float) -> EnvState:
    return EnvState(config=config,
                    capacity=list(config.initial_capacity),
                    clock=clock,
                    in_flight=[],
                    episode_step=0,
                    in_flight_counts=[0] * config.n)


def reset_capacities(state: EnvState) -> None:
    """Terminal handling: capacities back to C0, in-flight work dropped."""
    state.capacity = list(state.config.initial_capacity)
    state.in_flight.clear()
    state.in_flight_counts = [0] * state.config.n
    state.episode_step = 0


def process_completions(state: EnvState, now: float) -> EnvState:
    """Release every in-flight entry with finish_time <= now and advance the clock."""
    if now < state.clock:
        raise ContractError("time cannot run backwards")
    while state.in_flight and state.in_flight[0][0] <= now:
        _, ch = heapq.heappop(state.in_flight)
        state.capacity[ch] += 1
        state.in_flight_counts[ch] -= 1
    state.clock = now
    return state


def env_assign(state: EnvState, event: RequestEvent, final_channel: int) -> EnvState:
    """Commit the customer to a channel; capacity may go negative (queueing)."""
    if not 0 <= final_channel < state.config.n:
        raise ContractError(f"channel {final_channel} out of range")
    state.capacity[final_channel] -= 1
    heapq.heappush(state.in_flight,
                   (event.arrival_time + event.service_duration, final_channel))
    state.in_flight_counts[final_channel] += 1
    state.episode_step += 1
    return state


def is_terminal(capacity, done_num: int = DEFAULT_DONE_NUM) -> bool:
    return min(capacity) < done_num


def observe(state: EnvState, acceptance, forecast, config: ChannelConfig) -> StateVector:
    """Pure state-vector construction: <u, e_hat, c / C0>."""
    acceptance = tuple(float(a) for a in acceptance)
    forecast = tuple(float(f) for f in forecast)
    if len(acceptance) != config.n or len(forecast) != config.n:
        raise ContractError("acceptance and forecast must have one entry per channel")
    if any(c0 == 0 for c0 in config.initial_capacity):
        raise ConfigError("cannot scale capacities with a zero initial capacity")
    scaled = tuple(state.capacity[i] / config.initial_capacity[i] for i in range(config.n))
    return StateVector(acceptance=acceptance, forecast=forecast, capacity_scaled=scaled)


# -- event stream files (JSON lines) -----------------------------------------

def write_events(path, events) -> None:
    with open(path, "w") as fh:
        for ev in events:
            fh.write(json.dumps({
                "arrival_time": int(round(ev.arrival_time)),
                "customer_id": ev.customer_id,
                "attributes": list(ev.profile.attributes),
                "service_duration": int(round(ev.service_duration)),
            }, sort_keys=True) + "\n")


def read_events(path) -> list[RequestEvent]:
    events = []
    with open(path) as fh:
        for line in fh:
            if not line.strip():
                continue
            doc = json.loads(line)
            events.append(RequestEvent(
                arrival_time=float(doc["arrival_time"]),
                customer_id=str(doc["customer_id"]),
                profile=CustomerProfile(tuple(doc["attributes"])),
                service_duration=float(doc["service_duration"]),
            ))
    return events

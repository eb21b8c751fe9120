import numpy as np
import pytest

from routelab.agents import (ABLATIONS, VARIANTS, AgentConfig, KnnRouter,
                             QAgent, RuleBasedParams, Transition,
                             _ablated_view, default_config,
                             expected_immediate_reward, greedy_route,
                             rule_based_route, run_myopic, run_rule_based,
                             select_action, simulated_annealing_route,
                             td_target, train_episode_stream)
from routelab.env import (ChannelConfig, CustomerProfile, RequestEvent,
                          RewardParams, StateVector)
from routelab.errors import ConfigError, ContractError, NotReadyError
from routelab.forecast import ZeroForecast
from routelab.nn import QNetwork
from routelab.user_model import synthetic_truth_model

CARDS = (2, 8, 34, 5, 3, 6, 10)
CHANNELS = ChannelConfig(n=3, initial_capacity=(50, 40, 10),
                         bottleneck_index=2, self_service_index=0,
                         drainage_index=1)


def sv(vals):
    n = len(vals) // 3
    return StateVector(tuple(vals[:n]), tuple(vals[n:2 * n]),
                       tuple(vals[2 * n:]))


def make_events(n, rate=10.0, seed=0):
    rng = np.random.default_rng(seed)
    t = 0.0
    events = []
    for i in range(n):
        t += float(rng.exponential(rate))
        attrs = tuple(int(rng.integers(c)) for c in CARDS)
        events.append(RequestEvent(arrival_time=t, customer_id=f"c{i}",
                                   profile=CustomerProfile(attrs),
                                   service_duration=float(rng.integers(60, 361))))
    return events


class TestDefaults:
    def test_variant_table(self):
        expected = {
            "dqn": (0.8, 0.015, 0.7),
            "double": (0.9, 0.020, 0.5),
            "dueling": (0.9, 0.015, 0.5),
            "double_dueling": (0.9, 0.015, 0.5),
            "per_double_dueling": (0.9, 0.015, 0.5),
        }
        for variant, (l1, l2, gamma) in expected.items():
            cfg = default_config(variant)
            assert cfg.reward_params.lambda1 == l1
            assert cfg.reward_params.lambda2 == l2
            assert cfg.gamma == gamma
            assert cfg.reward_params.lambda3 == 0.3

    def test_ablation_table(self):
        cfg = default_config("per_double_dueling", "no_forecast")
        assert (cfg.reward_params.lambda1, cfg.reward_params.lambda2,
                cfg.gamma) == (0.8, 0.020, 0.3)
        cfg = default_config("per_double_dueling", "no_user")
        assert (cfg.reward_params.lambda1, cfg.reward_params.lambda2,
                cfg.gamma) == (0.5, 0.015, 0.7)

    def test_replay_defaults(self):
        cfg = default_config("per_double_dueling")
        assert cfg.buffer_size == 2000
        assert cfg.batch_size == 320
        assert cfg.per_alpha == 0.6
        assert not cfg.per_use_is

    def test_flags(self):
        assert not default_config("dqn").dueling
        assert not default_config("dqn").double
        assert default_config("double").double
        assert default_config("dueling").dueling
        cfg = default_config("per_double_dueling")
        assert cfg.dueling and cfg.double and cfg.prioritized
        assert not default_config("double_dueling").prioritized

    def test_unknown_variant(self):
        with pytest.raises(ConfigError):
            default_config("rainbow")

    def test_batch_cannot_exceed_buffer(self):
        with pytest.raises(ConfigError):
            AgentConfig(batch_size=100, buffer_size=50)


class TestSelectAction:
    def test_greedy_tie_break_lowest_index(self):
        rng = np.random.default_rng(0)
        assert select_action([1.0, 1.0, 0.5], 0.0, rng) == 0
        assert select_action([0.5, 2.0, 2.0], 0.0, rng) == 1

    def test_epsilon_one_is_uniform(self):
        rng = np.random.default_rng(1)
        counts = np.bincount([select_action([9.0, 0.0, 0.0], 1.0, rng)
                              for _ in range(6000)], minlength=3)
        assert counts.min() > 1800

    def test_epsilon_bounds(self):
        with pytest.raises(ContractError):
            select_action([1.0], 1.5, np.random.default_rng(0))

    def test_empty_q(self):
        with pytest.raises(ContractError):
            select_action([], 0.0, np.random.default_rng(0))


class TestTdTarget:
    def _nets(self):
        # two hand-set linear networks over a 3-dim state, 2 actions
        online = QNetwork(3, (), 2, rng=np.random.default_rng(0))
        target = QNetwork(3, (), 2, rng=np.random.default_rng(1))
        online.out_layer.W[...] = [[1.0, 0.0], [0.0, 1.0], [0.0, 0.0]]
        online.out_layer.b[...] = [0.0, 0.0]
        target.out_layer.W[...] = [[0.0, 2.0], [3.0, 0.0], [0.0, 0.0]]
        target.out_layer.b[...] = [0.0, 0.0]
        return online, target

    def test_terminal_returns_reward(self):
        online, target = self._nets()
        tr = Transition(sv([0.0] * 3), 0, -4.5, sv([1.0, 2.0, 0.0]), True)
        for variant in VARIANTS:
            assert td_target(variant, tr, online, target, 0.9) == -4.5

    def test_vanilla_max_target(self):
        online, target = self._nets()
        # next state (1,2,0): target q = (6, 2); max = 6
        tr = Transition(sv([0.0] * 3), 0, 1.0, sv([1.0, 2.0, 0.0]), False)
        assert td_target("dqn", tr, online, target, 0.5) == pytest.approx(4.0)

    def test_double_selects_online_evaluates_target(self):
        online, target = self._nets()
        # online q = (1, 2) -> a* = 1; target q = (6, 2) -> boot = 2
        tr = Transition(sv([0.0] * 3), 0, 1.0, sv([1.0, 2.0, 0.0]), False)
        assert td_target("double", tr, online, target, 0.5) == pytest.approx(2.0)
        assert td_target("per_double_dueling", tr, online, target,
                         0.5) == pytest.approx(2.0)

    def test_architecture_mismatch(self):
        online, _ = self._nets()
        with pytest.raises(ContractError):
            td_target("dqn", Transition(sv([0.0] * 3), 0, 0.0, sv([0.0] * 3),
                                        False),
                      online, QNetwork(3, (4,), 2), 0.5)


class TestAblatedView:
    def test_full_untouched(self):
        u = np.array([0.2, 0.7, 1.0])
        e = np.array([5.0, 1.0, 9.0])
        u2, e2 = _ablated_view(u, e, "full", 2)
        np.testing.assert_array_equal(u2, u)
        np.testing.assert_array_equal(e2, e)

    def test_no_forecast_zeroes_flow(self):
        u2, e2 = _ablated_view(np.array([0.2, 0.7, 1.0]),
                               np.array([5.0, 1.0, 9.0]), "no_forecast", 2)
        np.testing.assert_array_equal(e2, [0.0, 0.0, 0.0])
        np.testing.assert_array_equal(u2, [0.2, 0.7, 1.0])

    def test_no_user_keeps_bottleneck_entry(self):
        u2, e2 = _ablated_view(np.array([0.2, 0.7, 1.0]),
                               np.array([5.0, 1.0, 9.0]), "no_user", 2)
        np.testing.assert_array_equal(u2, [0.0, 0.0, 1.0])
        np.testing.assert_array_equal(e2, [5.0, 1.0, 9.0])

    def test_inputs_not_mutated(self):
        u = np.array([0.2, 0.7, 1.0])
        e = np.array([5.0, 1.0, 9.0])
        _ablated_view(u, e, "no_user", 2)
        np.testing.assert_array_equal(u, [0.2, 0.7, 1.0])


def small_agent(variant="per_double_dueling", **overrides):
    overrides.setdefault("hidden", (8, 8))
    overrides.setdefault("batch_size", 16)
    overrides.setdefault("buffer_size", 200)
    overrides.setdefault("epsilon_decay_steps", 100)
    cfg = default_config(variant, **overrides)
    return QAgent(cfg, CHANNELS.n, rng=np.random.default_rng(0))


class TestTrainingLoop:
    def test_trace_one_record_per_event(self):
        agent = small_agent()
        um = synthetic_truth_model(3, 2, CARDS, seed=0)
        events = make_events(100)
        trace = train_episode_stream(CHANNELS, agent, um, ZeroForecast(3),
                                     events, np.random.default_rng(1))
        assert len(trace) == 100
        assert [r.step for r in trace] == list(range(100))

    def test_delayed_storage_count(self):
        agent = small_agent()
        um = synthetic_truth_model(3, 2, CARDS, seed=0)
        events = make_events(50)
        train_episode_stream(CHANNELS, agent, um, ZeroForecast(3), events,
                             np.random.default_rng(1))
        # event t pushes the transition for event t-1
        assert len(agent.buffer) == 49

    def test_rejection_reassigned_to_bottleneck(self):
        agent = small_agent()
        um = synthetic_truth_model(3, 2, CARDS, seed=1)
        events = make_events(300, seed=2)
        trace = train_episode_stream(CHANNELS, agent, um, ZeroForecast(3),
                                     events, np.random.default_rng(3))
        rejected = [r for r in trace if not r.accepted]
        assert rejected  # epsilon-greedy exploration must hit refusals
        assert all(r.final_channel == CHANNELS.bottleneck_index
                   for r in rejected)
        assert all(r.g == -1.0 for r in rejected)
        assert all(r.g == 1.0 for r in trace if r.accepted)

    def test_bottleneck_suggestion_always_accepted(self):
        agent = small_agent()
        um = synthetic_truth_model(3, 2, CARDS, seed=1)
        events = make_events(300, seed=4)
        trace = train_episode_stream(CHANNELS, agent, um, ZeroForecast(3),
                                     events, np.random.default_rng(5))
        hot = [r for r in trace if r.suggested_channel == 2]
        assert hot and all(r.accepted for r in hot)

    def test_terminal_resets_capacities(self):
        tight = ChannelConfig(n=3, initial_capacity=(2, 2, 2),
                              bottleneck_index=2, self_service_index=0,
                              drainage_index=1)
        agent = small_agent(done_num=-3)
        um = synthetic_truth_model(3, 2, CARDS, seed=2)
        events = make_events(400, rate=0.5, seed=6)  # overload on purpose
        trace = train_episode_stream(tight, agent, um, ZeroForecast(3),
                                     events, np.random.default_rng(7))
        terminals = [i for i, r in enumerate(trace) if r.terminal]
        assert terminals
        i = terminals[0]
        assert min(trace[i].capacities) < -3
        # next record starts from restored capacities minus one assignment
        assert min(trace[i + 1].capacities) >= 1

    def test_no_terminal_ablation_never_resets(self):
        tight = ChannelConfig(n=3, initial_capacity=(2, 2, 2),
                              bottleneck_index=2, self_service_index=0,
                              drainage_index=1)
        agent = small_agent(ablation="no_terminal", done_num=-3)
        um = synthetic_truth_model(3, 2, CARDS, seed=2)
        events = make_events(400, rate=0.5, seed=6)
        trace = train_episode_stream(tight, agent, um, ZeroForecast(3),
                                     events, np.random.default_rng(7))
        assert not any(r.terminal for r in trace)

    def test_eval_mode_stores_nothing(self):
        agent = small_agent()
        um = synthetic_truth_model(3, 2, CARDS, seed=0)
        events = make_events(60)
        train_episode_stream(CHANNELS, agent, um, ZeroForecast(3), events,
                             np.random.default_rng(1), learn=False)
        assert len(agent.buffer) == 0
        assert agent.global_step == 0

    def test_eval_mode_deterministic(self):
        um = synthetic_truth_model(3, 2, CARDS, seed=0)
        events = make_events(80)
        traces = []
        for _ in range(2):
            agent = small_agent()
            traces.append(train_episode_stream(CHANNELS, agent, um,
                                               ZeroForecast(3), events,
                                               np.random.default_rng(9),
                                               learn=False))
        assert traces[0] == traces[1]

    def test_learning_updates_weights(self):
        agent = small_agent(batch_size=8)
        um = synthetic_truth_model(3, 2, CARDS, seed=0)
        events = make_events(120)
        before = [p.copy() for p in agent.online.parameters()]
        log = []
        train_episode_stream(CHANNELS, agent, um, ZeroForecast(3), events,
                             np.random.default_rng(1), log=log)
        assert any(not np.array_equal(p, b)
                   for p, b in zip(agent.online.parameters(), before))
        assert any(entry["loss"] is not None for entry in log)

    def test_epsilon_schedule_decays(self):
        agent = small_agent()
        assert agent.epsilon() == 1.0
        agent.global_step = 50
        assert agent.epsilon() == pytest.approx(1.0 + 0.5 * (0.05 - 1.0))
        agent.global_step = 1000
        assert agent.epsilon() == pytest.approx(0.05)

    def test_channel_count_mismatch(self):
        agent = small_agent()
        um = synthetic_truth_model(4, 2, CARDS, seed=0)
        with pytest.raises(ConfigError):
            train_episode_stream(CHANNELS, agent, um, ZeroForecast(3),
                                 make_events(5), np.random.default_rng(0))


class TestRuleBased:
    def test_accepted_self_service(self):
        out = rule_based_route(10, np.random.default_rng(0), RuleBasedParams(),
                               self_service_accepted=True)
        assert out == "self_service"

    def test_empty_queue_goes_hotline(self):
        out = rule_based_route(0, np.random.default_rng(0), RuleBasedParams(),
                               self_service_accepted=False)
        assert out == "hotline"

    def test_saturated_queue_always_offers(self):
        params = RuleBasedParams(q_sat=50)
        rng = np.random.default_rng(0)
        assert all(rule_based_route(50, rng, params, False) == "drainage_offer"
                   for _ in range(20))

    def test_offer_rate_tracks_queue(self):
        params = RuleBasedParams(q_sat=50)
        rng = np.random.default_rng(1)
        offers = sum(rule_based_route(25, rng, params, False) == "drainage_offer"
                     for _ in range(4000))
        assert abs(offers / 4000 - 0.5) < 0.05

    def test_negative_queue_rejected(self):
        with pytest.raises(ContractError):
            rule_based_route(-1, np.random.default_rng(0), RuleBasedParams(),
                             False)

    def test_run_trace_semantics(self):
        um = synthetic_truth_model(3, 2, CARDS, seed=3)
        events = make_events(400, rate=1.0, seed=8)
        trace = run_rule_based(CHANNELS, um, events, np.random.default_rng(9))
        assert len(trace) == 400
        for r in trace:
            if not r.accepted:
                assert r.final_channel == CHANNELS.bottleneck_index
            else:
                assert r.final_channel == r.suggested_channel
            assert r.suggested_channel != CHANNELS.bottleneck_index


class TestMyopic:
    def test_expected_reward_weights_acceptance(self):
        params = RewardParams(lambda1=0.5, lambda2=0.015, lambda3=0.3)
        # certain acceptance with slack capacity scores the accept reward
        v = expected_immediate_reward(0, [1.0, 0.0, 1.0], [10, 10, 10],
                                      [0, 0, 0], params, 2)
        assert v == pytest.approx(params.accept_reward)

    def test_greedy_prefers_likely_acceptance(self):
        params = RewardParams(lambda1=0.5, lambda2=0.015, lambda3=0.3)
        action = greedy_route([0.9, 0.1, 1.0], [50, 50, 50], [0, 0, 0],
                              params, 2)
        assert action in (0, 2)  # both are certain or near-certain accepts
        assert action != 1

    def test_sa_temperature_zero_equals_greedy(self):
        params = RewardParams(lambda1=0.5, lambda2=0.015, lambda3=0.3)
        rng = np.random.default_rng(0)
        for _ in range(10):
            u = rng.uniform(size=3)
            cap = rng.integers(1, 60, size=3).tolist()
            g = greedy_route(u, cap, [0, 0, 0], params, 2)
            s = simulated_annealing_route(u, cap, [0, 0, 0], params, 2, rng,
                                          t0=0.0)
            assert s == g

    def test_knn_majority_vote(self):
        log = []
        for _ in range(20):
            log.append((CustomerProfile((0, 0, 0, 0, 0, 0, 0)), 1, True))
        for _ in range(20):
            log.append((CustomerProfile((1, 7, 33, 4, 2, 5, 9)), 0, True))
        router = KnnRouter(k=5, cardinalities=CARDS).fit(log)
        assert router.route(CustomerProfile((0, 0, 1, 0, 0, 0, 0))) == 1
        assert router.route(CustomerProfile((1, 7, 30, 4, 2, 5, 9))) == 0

    def test_knn_requires_fit(self):
        with pytest.raises(NotReadyError):
            KnnRouter().route(CustomerProfile((0,) * 7))

    def test_knn_rejects_empty_accepts(self):
        with pytest.raises(ContractError):
            KnnRouter().fit([(CustomerProfile((0,) * 7), 0, False)])

    def test_run_myopic_unknown_router(self):
        um = synthetic_truth_model(3, 2, CARDS, seed=0)
        with pytest.raises(ConfigError):
            run_myopic(CHANNELS, um, make_events(3), np.random.default_rng(0),
                       router="oracle")

    def test_run_myopic_greedy_trace(self):
        um = synthetic_truth_model(3, 2, CARDS, seed=0)
        trace = run_myopic(CHANNELS, um, make_events(150, seed=5),
                           np.random.default_rng(6), router="greedy")
        assert len(trace) == 150

"""Batch command-line surface: gen, train, eval, compare, forecast.

All commands read a JSON config document (schema-validated, unknown keys
rejected), write their outputs under --out, and are deterministic under an
identical config + seed.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import jsonschema
import numpy as np

from . import agents, datagen, forecast, metrics, user_model
from .env import ChannelConfig, RewardParams, read_events
from .errors import ConfigError, ContractError, InsufficientHistoryError
from .nn import QNetwork
from .seeding import substream

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_RUNTIME = 2

CHECKPOINT_VERSION = 1


class UsageError(Exception):
    pass


CONFIG_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["seed", "channels"],
    "properties": {
        "seed": {"type": "integer"},
        "channels": {
            "type": "object",
            "additionalProperties": False,
            "required": ["n", "initial_capacity", "bottleneck_index",
                         "self_service_index", "drainage_index"],
            "properties": {
                "n": {"type": "integer", "minimum": 2},
                "initial_capacity": {"type": "array",
                                     "items": {"type": "integer", "minimum": 0}},
                "bottleneck_index": {"type": "integer", "minimum": 0},
                "self_service_index": {"type": "integer", "minimum": 0},
                "drainage_index": {"type": "integer", "minimum": 0},
            },
        },
        "reward": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "lambda1": {"type": "number", "minimum": 0},
                "lambda2": {"type": "number", "minimum": 0},
                "lambda3": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
                "accept_reward": {"type": "number"},
                "reject_reward": {"type": "number"},
            },
        },
        "agent": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "variant": {"enum": list(agents.VARIANTS)},
                "gamma": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
                "epsilon_start": {"type": "number"},
                "epsilon_end": {"type": "number"},
                "epsilon_decay_steps": {"type": "integer", "minimum": 0},
                "batch_size": {"type": "integer", "minimum": 1},
                "sync_period": {"type": "integer", "minimum": 1},
                "done_num": {"type": "integer"},
                "state_ablation": {"enum": list(agents.ABLATIONS)},
                "hidden": {"type": "array", "items": {"type": "integer", "minimum": 1}},
                "lr": {"type": "number", "exclusiveMinimum": 0},
                "flow_scale": {"type": "number", "exclusiveMinimum": 0},
                "train_events": {"type": "integer", "minimum": 1},
            },
        },
        "replay": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "size": {"type": "integer", "minimum": 1},
                "alpha": {"type": "number", "minimum": 0},
                "epsilon_p": {"type": "number", "exclusiveMinimum": 0},
                "use_is": {"type": "boolean"},
            },
        },
        "forecast": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "bin_width": {"type": "number", "exclusiveMinimum": 0},
                "window": {"type": "integer", "minimum": 1},
                "rounds": {"type": "integer", "minimum": 1},
                "shrinkage": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
                "max_depth": {"type": "integer", "minimum": 1},
                "colsample": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
                "l1": {"type": "number", "minimum": 0},
                "l2": {"type": "number", "minimum": 0},
                "train_fraction": {"type": "number", "exclusiveMinimum": 0,
                                   "exclusiveMaximum": 1},
            },
        },
        "datagen": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "days": {"type": "integer", "minimum": 1},
                "base_rate": {"type": "number", "exclusiveMinimum": 0},
                "peak_profile": {"type": "array", "items": {"type": "number"},
                                 "minItems": 24, "maxItems": 24},
                "n_customers": {"type": "integer", "minimum": 1},
                "attribute_cardinalities": {"type": "array",
                                            "items": {"type": "integer", "minimum": 1},
                                            "minItems": 7, "maxItems": 7},
                "duration_range": {"type": "array", "items": {"type": "number"},
                                   "minItems": 2, "maxItems": 2},
                "noise_sigma": {"type": "number", "minimum": 0},
                "start_time": {"type": "number"},
                "channel_weights": {"type": "array",
                                    "items": {"type": "number", "exclusiveMinimum": 0}},
            },
        },
        "eval": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "test_events": {"type": "integer", "minimum": 1},
                "congestion_window": {"type": "integer", "minimum": 1},
            },
        },
        "paths": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "dataset_dir": {"type": "string"},
                "series_file": {"type": "string"},
            },
        },
    },
}


def load_config(path, seed_override: int | None = None) -> dict:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise UsageError(f"cannot read config: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise UsageError(f"config is not valid JSON: {exc}") from exc
    try:
        jsonschema.validate(doc, CONFIG_SCHEMA)
    except jsonschema.ValidationError as exc:
        raise UsageError(f"config schema error: {exc.message}") from exc
    if seed_override is not None:
        doc["seed"] = seed_override
    return doc


def _channels(doc: dict) -> ChannelConfig:
    return ChannelConfig.from_json_dict(doc["channels"])


def _reward_params(doc: dict, base: RewardParams | None = None) -> RewardParams:
    base = base or RewardParams()
    overrides = doc.get("reward", {})
    kwargs = base.to_json_dict()
    kwargs.update(overrides)
    return RewardParams(**kwargs)


def _agent_config(doc: dict, variant: str, ablation: str) -> agents.AgentConfig:
    cfg = agents.default_config(variant, ablation)
    overrides = dict(doc.get("agent", {}))
    overrides.pop("variant", None)
    overrides.pop("state_ablation", None)
    overrides.pop("train_events", None)
    if "hidden" in overrides:
        overrides["hidden"] = tuple(overrides["hidden"])
    replay_doc = doc.get("replay", {})
    if "size" in replay_doc:
        overrides["buffer_size"] = replay_doc["size"]
    if "alpha" in replay_doc:
        overrides["per_alpha"] = replay_doc["alpha"]
    if "epsilon_p" in replay_doc:
        overrides["per_epsilon"] = replay_doc["epsilon_p"]
    if "use_is" in replay_doc:
        overrides["per_use_is"] = replay_doc["use_is"]
    cfg = agents.default_config(variant, ablation, **overrides)
    if "reward" in doc:
        cfg.reward_params = _reward_params(doc, cfg.reward_params)
    return cfg


def _gen_config(doc: dict) -> datagen.GenConfig:
    sec = dict(doc.get("datagen", {}))
    if "peak_profile" in sec:
        sec["peak_profile"] = tuple(sec["peak_profile"])
    if "attribute_cardinalities" in sec:
        sec["attribute_cardinalities"] = tuple(sec["attribute_cardinalities"])
    if "duration_range" in sec:
        sec["duration_range"] = tuple(sec["duration_range"])
    if "channel_weights" in sec:
        sec["channel_weights"] = tuple(sec["channel_weights"])
    return datagen.GenConfig(seed=doc["seed"], **sec)


def _dataset_dir(doc: dict, out: Path) -> Path:
    paths = doc.get("paths", {})
    if "dataset_dir" in paths:
        return Path(paths["dataset_dir"])
    return out


def _load_dataset(doc: dict, dataset_dir: Path):
    channels = _channels(doc)
    events = read_events(dataset_dir / "events.jsonl")
    truth = user_model.AcceptanceModel.load(dataset_dir / "user_model.json")
    series = [forecast.read_series_csv(dataset_dir / f"flow_forecast_ch{i}.csv")
              for i in range(channels.n)]
    return channels, events, truth, forecast.BinnedForecast(series)


def _split_events(events, doc: dict):
    """Chronological split; the tail is reserved for evaluation."""
    reserve = doc.get("eval", {}).get("test_events", 50_000)
    reserve = min(reserve, len(events) // 2)
    if reserve == 0:
        return events, events
    return events[:-reserve], events[-reserve:]


# -- commands -------------------------------------------------------------------


def cmd_gen(doc: dict, out: Path, args) -> int:
    channels = _channels(doc)
    manifest = datagen.gen_dataset(_gen_config(doc), channels, out)
    print(f"generated {manifest['n_events']} events in {out}")
    return EXIT_OK


def _checkpoint_name(variant: str, ablation: str) -> str:
    return f"checkpoint_{variant}" + ("" if ablation == "full" else f"_{ablation}") + ".json"


def cmd_train(doc: dict, out: Path, args) -> int:
    variant = args.agent
    ablation = args.ablation
    channels = _channels(doc)
    dataset_dir = _dataset_dir(doc, out)
    channels, events, truth, forecaster = _load_dataset(doc, dataset_dir)
    train_events, _ = _split_events(events, doc)
    limit = doc.get("agent", {}).get("train_events")
    if limit is not None:
        train_events = train_events[:limit]

    cfg = _agent_config(doc, variant, ablation)
    seed = doc["seed"]
    agent = agents.QAgent(cfg, channels.n, rng=substream(seed, "agent.init"))
    log: list[dict] = []
    agents.train_episode_stream(channels, agent, truth, forecaster, train_events,
                                rng=substream(seed, "agent.train"), learn=True,
                                log=log)

    out.mkdir(parents=True, exist_ok=True)
    ckpt_path = out / _checkpoint_name(variant, ablation)
    with open(ckpt_path, "w") as fh:
        json.dump({"version": CHECKPOINT_VERSION,
                   "agent_config": cfg.to_json_dict(),
                   "network": agent.online.to_json_dict()}, fh, sort_keys=True)
    log_path = out / f"training_log_{variant}_{ablation}.csv"
    with open(log_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "epsilon", "reward", "loss", "terminal"])
        for row in log:
            writer.writerow([row["step"], f"{row['epsilon']:.6f}",
                             f"{row['reward']:.10g}",
                             "" if row["loss"] is None else f"{row['loss']:.10g}",
                             int(row["terminal"])])
    manifest = {"command": "train", "seed": seed, "variant": variant,
                "ablation": ablation, "dataset_dir": str(dataset_dir),
                "checkpoint": ckpt_path.name, "training_log": log_path.name,
                "train_events": len(train_events),
                "config": cfg.to_json_dict()}
    with open(out / f"run_manifest_{variant}_{ablation}.json", "w") as fh:
        json.dump(manifest, fh, sort_keys=True, indent=2)
    print(f"trained {variant} ({ablation}) on {len(train_events)} events -> {ckpt_path}")
    return EXIT_OK


def load_checkpoint(path) -> tuple[agents.AgentConfig, QNetwork]:
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("version") != CHECKPOINT_VERSION:
        raise ConfigError(f"unsupported checkpoint version in {path}")
    cfg_doc = doc["agent_config"]
    cfg_doc["hidden"] = tuple(cfg_doc["hidden"])
    cfg_doc["reward_params"] = RewardParams(**cfg_doc["reward_params"])
    cfg = agents.AgentConfig(**cfg_doc)
    net = QNetwork.from_json_dict(doc["network"])
    if net.output_dim * 3 != net.input_dim:
        raise ConfigError("checkpoint network is not a routing network")
    return cfg, net


def _evaluate_checkpoint(path, channels, events, truth, forecaster, seed):
    cfg, net = load_checkpoint(path)
    if net.output_dim != channels.n:
        raise ConfigError(f"checkpoint {path} was trained for {net.output_dim} "
                          f"channels, config has {channels.n}")
    agent = agents.QAgent(cfg, channels.n)
    agent.online = net
    agent.target = net.copy()
    name = Path(path).stem.removeprefix("checkpoint_")
    trace = agents.train_episode_stream(
        channels, agent, truth, forecaster, events,
        rng=substream(seed, f"eval.{name}"), learn=False)
    return name, trace


def _evaluate_baseline(doc, channels, events, truth, forecaster, seed):
    trace = agents.run_rule_based(channels, truth, events,
                                  rng=substream(seed, "eval.baseline"),
                                  reward_params=_reward_params(doc),
                                  forecaster=forecaster)
    return "baseline", trace


def _eval_many(doc: dict, out: Path, checkpoints, include_baseline: bool, seed: int):
    dataset_dir = _dataset_dir(doc, out)
    channels, events, truth, forecaster = _load_dataset(doc, dataset_dir)
    _, test_events = _split_events(events, doc)
    window = doc.get("eval", {}).get("congestion_window", 500)

    out.mkdir(parents=True, exist_ok=True)
    results = []
    for path in checkpoints:
        results.append(_evaluate_checkpoint(path, channels, test_events, truth,
                                            forecaster, seed))
    if include_baseline:
        results.append(_evaluate_baseline(doc, channels, test_events, truth,
                                          forecaster, seed))

    reports = {}
    for name, trace in results:
        report = metrics.compute_metrics(trace, channels)
        reports[name] = report
        metrics.write_metrics_json(out / f"metrics_{name}.json", report)
        metrics.write_trace_csv(out / f"trace_{name}.csv", trace, channels.n)
        series = metrics.bottleneck_congestion_series(trace, channels, window)
        with open(out / f"congestion_{name}.csv", "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["window", "congestion_fraction"])
            for k, frac in enumerate(series):
                writer.writerow([k, f"{frac:.6f}"])
    return reports


def cmd_eval(doc: dict, out: Path, args) -> int:
    if not args.checkpoints:
        raise UsageError("eval needs at least one checkpoint")
    reports = _eval_many(doc, out, args.checkpoints, args.baseline, doc["seed"])
    for name, report in reports.items():
        print(f"{name}: ccr={report.ccr:.3f} rr={report.rr:.3f} "
              f"mean_reward={report.mean_reward:.3f}")
    return EXIT_OK


def cmd_compare(doc: dict, out: Path, args) -> int:
    if len(args.checkpoints) + int(args.baseline) < 2:
        raise UsageError("compare needs at least two agents (checkpoints/baseline)")
    reports = _eval_many(doc, out, args.checkpoints, args.baseline, doc["seed"])
    names = list(reports)
    normalized = metrics.normalize_rewards(
        {k: v.mean_reward for k, v in reports.items()})
    rows = [
        ("CCR", {k: reports[k].ccr for k in names}),
        ("AC", {k: reports[k].ac for k in names}),
        ("PC", {k: reports[k].pc for k in names}),
        ("AFR", {k: reports[k].afr for k in names}),
        ("DP", {k: reports[k].dp for k in names}),
        ("SP", {k: reports[k].sp for k in names}),
        ("RR", {k: reports[k].rr for k in names}),
        ("RN", {k: reports[k].rn for k in names}),
        ("Rewards", normalized),
    ]
    with open(out / "comparison.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["metric"] + names)
        for label, values in rows:
            writer.writerow([label] + [f"{values[k]:.6g}" for k in names])
    print(f"compared {len(names)} agents -> {out / 'comparison.csv'}")
    return EXIT_OK


def cmd_forecast(doc: dict, out: Path, args) -> int:
    paths = doc.get("paths", {})
    if "series_file" in paths:
        series_path = Path(paths["series_file"])
    else:
        channels = _channels(doc)
        series_path = (_dataset_dir(doc, out)
                       / f"flow_true_ch{channels.bottleneck_index}.csv")
    series = forecast.read_series_csv(series_path)

    sec = doc.get("forecast", {})
    window = sec.get("window", forecast.DEFAULT_WINDOW)
    train_fraction = sec.get("train_fraction", 0.8)
    if len(series) < window + 2:
        raise ContractError(f"series has {len(series)} bins; need > {window + 1}")
    X, y = forecast.build_dataset(series, window)
    cut = int(len(y) * train_fraction)
    if cut == 0 or cut == len(y):
        raise ContractError("chronological split leaves an empty side")

    out.mkdir(parents=True, exist_ok=True)
    model_path = out / "gbrt_model.json"
    if args.mode == "train":
        params = forecast.GbrtParams(
            rounds=sec.get("rounds", 40), shrinkage=sec.get("shrinkage", 0.1),
            max_depth=sec.get("max_depth", 6), colsample=sec.get("colsample", 0.7),
            l1=sec.get("l1", 0.1), l2=sec.get("l2", 0.1), seed=doc["seed"])
        model = forecast.fit_gbrt(X[:cut], y[:cut], params)
        model.save(model_path)
    else:
        if not model_path.exists():
            raise ContractError(f"no trained model at {model_path}; run train first")
        model = forecast.GbrtModel.load(model_path)

    pred = model.predict(X[cut:])
    persist = forecast.persistence_forecast(y)[cut:]
    report = {
        "series_file": str(series_path),
        "n_train": cut, "n_test": len(y) - cut,
        "rmse": forecast.rmse(y[cut:], pred),
        "band_accuracy": forecast.band_accuracy(y[cut:], pred),
        "persistence_rmse": forecast.rmse(y[cut:], persist),
        "persistence_band_accuracy": forecast.band_accuracy(y[cut:], persist),
    }
    with open(out / "forecast_report.json", "w") as fh:
        json.dump(report, fh, sort_keys=True, indent=2)
    print(f"forecast rmse={report['rmse']:.3f} "
          f"band_accuracy={report['band_accuracy']:.3f} "
          f"(persistence rmse={report['persistence_rmse']:.3f})")
    return EXIT_OK


# -- entry point ------------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="routelab",
                     description="Multi-channel request-routing laboratory")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", required=True, help="JSON config document")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--seed", type=int, default=None,
                       help="override the config seed")

    p_gen = sub.add_parser("gen", help="generate a synthetic dataset")
    common(p_gen)
    p_gen.set_defaults(func=cmd_gen)

    p_train = sub.add_parser("train", help="train a routing agent")
    common(p_train)
    p_train.add_argument("--agent", default="per_double_dueling",
                         choices=agents.VARIANTS)
    p_train.add_argument("--ablation", default="full", choices=agents.ABLATIONS)
    p_train.set_defaults(func=cmd_train)

    p_eval = sub.add_parser("eval", help="evaluate checkpoints on the test split")
    common(p_eval)
    p_eval.add_argument("checkpoints", nargs="*", help="checkpoint JSON files")
    p_eval.add_argument("--baseline", action="store_true",
                        help="also evaluate the rule-based baseline")
    p_eval.set_defaults(func=cmd_eval)

    p_cmp = sub.add_parser("compare", help="compare agents in one table")
    common(p_cmp)
    p_cmp.add_argument("checkpoints", nargs="*", help="checkpoint JSON files")
    p_cmp.add_argument("--baseline", action="store_true",
                       help="include the rule-based baseline")
    p_cmp.set_defaults(func=cmd_compare)

    p_fc = sub.add_parser("forecast", help="train/evaluate the flow forecaster")
    common(p_fc)
    p_fc.add_argument("mode", choices=["train", "eval"])
    p_fc.set_defaults(func=cmd_forecast)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        doc = load_config(args.config, args.seed)
        out = Path(args.out)
        return args.func(doc, out, args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ConfigError, ContractError, InsufficientHistoryError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())

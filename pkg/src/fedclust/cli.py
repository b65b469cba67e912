"""Experiment runner CLI.

Subcommands drive the full pipeline from a JSON config file:

- ``synth``  / ``ingest``: produce a standardized per-device dataset directory
- ``cluster``: search device partitions and write the best/worst realizations
- ``train``: run one training topology (flat FL, clustered FL, centralized)
- ``report``: tabulate one or more runs for side-by-side comparison

Every command is deterministic for a given config and seed; rerunning
reproduces outputs byte for byte.

Exit codes: 0 success, 1 usage or configuration error, 2 data error,
3 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import math
import shutil
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .dataset import (
    CsvSchema,
    DataError,
    DeviceDataset,
    SynthSpec,
    ingest_flows,
    load_devices,
    save_devices,
    standardize,
    synthesize_noniid,
)
from .fedsim import (
    FLConfig,
    evaluate_generalization,
    evaluate_on_clients,
    history_to_csv,
    run_centralized,
    run_federated,
    run_three_tier,
)
from .model import TrainConfig, save_params
from .partition import Partition, SearchConfig, exhaustive_best, score_partition, select_clusters
from .statcore import distribution_from_counts, normalized_entropy

FLAT_ROUNDS_DEFAULT = 200
CLUSTERED_ROUNDS_DEFAULT = 90


class UsageError(Exception):
    pass


class ConfigError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


@dataclass
class ExperimentConfig:
    """Validated view of the JSON config file."""

    seed: int = 0
    groups: int = 2
    averaging: str = "macro"
    synthetic: SynthSpec | None = None
    csv_path: str | None = None
    csv_top_devices: int = 16
    csv_schema: CsvSchema = field(default_factory=CsvSchema)
    holdout_count: int = 0
    realizations: int = 1000
    dedup: bool = False
    rounds: int | None = None
    local_epochs: int = 1
    early_stop: bool = False
    patience: int = 10
    min_delta: float = 1e-3
    train: TrainConfig = field(default_factory=TrainConfig)

    def fl_config(self, default_rounds: int) -> FLConfig:
        return FLConfig(
            rounds=self.rounds if self.rounds is not None else default_rounds,
            local_epochs=self.local_epochs,
            train=self.train,
            seed=self.seed,
            early_stop=self.early_stop,
            patience=self.patience,
            min_delta=self.min_delta,
        )


def _build_synth_spec(section: dict, seed: int) -> SynthSpec:
    if "proportions" in section or "class_means" in section:
        try:
            return SynthSpec(
                device_count=section["device_count"],
                class_count=section["class_count"],
                feature_dim=section["feature_dim"],
                proportions=tuple(tuple(row) for row in section["proportions"]),
                samples_per_device=section["samples_per_device"],
                class_means=tuple(tuple(row) for row in section["class_means"]),
                class_spread=section.get("class_spread", 1.0),
                seed=seed,
            )
        except (KeyError, ValueError) as exc:
            raise ConfigError(f"invalid synthetic spec: {exc}") from exc
    try:
        return SynthSpec.skewed(
            device_count=section.get("device_count", 8),
            class_count=section.get("class_count", 4),
            feature_dim=section.get("feature_dim", 8),
            samples_per_device=section.get("samples_per_device", 2000),
            dominant_share=section.get("dominant_share", 0.85),
            separation=section.get("separation", 2.0),
            class_spread=section.get("class_spread", 1.0),
            seed=seed,
        )
    except ValueError as exc:
        raise ConfigError(f"invalid synthetic spec: {exc}") from exc


def load_config(path: str | Path, seed_override: int | None = None) -> ExperimentConfig:
    try:
        raw = json.loads(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: not valid JSON: {exc}") from exc

    dataset = raw.get("dataset", {})
    sources = [k for k in ("synthetic", "csv") if k in dataset]
    if len(sources) != 1:
        raise ConfigError("config needs exactly one dataset source: synthetic or csv")

    seed = int(raw.get("seed", 0)) if seed_override is None else seed_override
    cfg = ExperimentConfig(seed=seed)
    cfg.groups = int(raw.get("groups", 2))
    cfg.averaging = raw.get("averaging", "macro")
    if cfg.averaging not in ("macro", "weighted"):
        raise ConfigError(f"averaging must be macro or weighted, got {cfg.averaging!r}")

    if "synthetic" in dataset:
        section = dataset["synthetic"]
        cfg.synthetic = _build_synth_spec(section, seed)
        cfg.holdout_count = int(section.get("holdout_count", 0))
    else:
        section = dataset["csv"]
        if "path" not in section:
            raise ConfigError("csv dataset source needs a 'path'")
        cfg.csv_path = section["path"]
        cfg.csv_top_devices = int(section.get("top_devices", 16))
        schema = section.get("schema", {})
        try:
            cfg.csv_schema = CsvSchema(
                destination=schema.get("destination", CsvSchema.destination),
                source=schema.get("source", CsvSchema.source),
                label=schema.get("label", CsvSchema.label),
                drop=tuple(schema.get("drop", CsvSchema.drop)),
                on_error=schema.get("on_error", CsvSchema.on_error),
            )
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    search = raw.get("search", {})
    cfg.realizations = int(search.get("realizations", 1000))
    cfg.dedup = bool(search.get("dedup", False))

    fl = raw.get("fl", {})
    cfg.rounds = int(fl["rounds"]) if "rounds" in fl else None
    cfg.local_epochs = int(fl.get("local_epochs", 1))
    cfg.early_stop = bool(fl.get("early_stop", False))
    cfg.patience = int(fl.get("patience", 10))
    cfg.min_delta = float(fl.get("min_delta", 1e-3))

    train = raw.get("train", {})
    try:
        cfg.train = TrainConfig(
            learning_rate=float(train.get("learning_rate", 0.001)),
            batch_size=int(train.get("batch_size", 512)),
            max_epochs=int(train.get("max_epochs", 15)),
            beta1=float(train.get("beta1", 0.9)),
            beta2=float(train.get("beta2", 0.999)),
            epsilon=float(train.get("epsilon", 1e-7)),
            seed=seed,
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    return cfg


def _score_json(score: float | None):
    if score is None:
        return None
    return "inf" if math.isinf(score) else score


def _score_from_json(value) -> float | None:
    if value is None:
        return None
    return math.inf if value == "inf" else float(value)


def _write_summary(devices: Sequence[DeviceDataset], path: Path) -> None:
    alphabet = devices[0].alphabet
    header = ["device_id", "n_train", "n_val", "n_test"] + [
        f"count_{c}" for c in alphabet.labels
    ] + ["entropy"]
    rows = []
    for d in devices:
        counts = d.label_counts
        entropy = normalized_entropy(distribution_from_counts(counts), alphabet.size)
        rows.append(
            [d.device_id, d.n_train, d.n_val, d.n_test]
            + [int(c) for c in counts]
            + [f"{entropy:.6f}"]
        )
    with path.open("w", newline="") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(str(v) for v in row) + "\n")
    widths = [max(len(str(v)) for v in col) for col in zip(header, *rows)]
    for row in [header] + rows:
        print("  ".join(str(v).ljust(w) for v, w in zip(row, widths)))


def _prepare_devices(cfg: ExperimentConfig) -> tuple[list[DeviceDataset], list[DeviceDataset]]:
    """Build and standardize (training devices, holdout devices)."""
    if cfg.synthetic is not None:
        spec = cfg.synthetic
        if cfg.holdout_count > 0:
            spec_all = SynthSpec(
                device_count=spec.device_count + cfg.holdout_count,
                class_count=spec.class_count,
                feature_dim=spec.feature_dim,
                proportions=spec.proportions
                + tuple(
                    spec.proportions[d % len(spec.proportions)]
                    for d in range(spec.device_count, spec.device_count + cfg.holdout_count)
                ),
                samples_per_device=spec.samples_per_device,
                class_means=spec.class_means,
                class_spread=spec.class_spread,
                seed=spec.seed,
                ratios=spec.ratios,
            )
        else:
            spec_all = spec
        generated = [standardize(d) for d in synthesize_noniid(spec_all)]
        return generated[: spec.device_count], generated[spec.device_count :]
    devices = ingest_flows(
        cfg.csv_path, cfg.csv_top_devices, cfg.csv_schema, seed=cfg.seed
    )
    return [standardize(d) for d in devices], []


def cmd_ingest(args) -> int:
    cfg = load_config(args.config, args.seed)
    if cfg.csv_path is None:
        raise ConfigError("ingest requires a csv dataset source in the config")
    devices, _ = _prepare_devices(cfg)
    out = Path(args.out)
    save_devices(devices, out / "devices")
    _write_summary(devices, out / "summary.csv")
    total = sum(d.n_train + d.n_val + d.n_test for d in devices)
    print(f"ingested {len(devices)} devices, {total} records -> {out / 'devices'}")
    return 0


def cmd_synth(args) -> int:
    cfg = load_config(args.config, args.seed)
    if cfg.synthetic is None:
        raise ConfigError("synth requires a synthetic dataset source in the config")
    devices, holdout = _prepare_devices(cfg)
    out = Path(args.out)
    save_devices(devices, out / "devices")
    if holdout:
        save_devices(holdout, out / "holdout")
    _write_summary(devices, out / "summary.csv")
    print(f"synthesized {len(devices)} devices -> {out / 'devices'}"
          + (f" (+{len(holdout)} holdout)" if holdout else ""))
    return 0


def _realization_json(scored, device_ids: list[str], device_counts) -> dict:
    pooled = [
        distribution_from_counts(np.sum([device_counts[i] for i in group], axis=0))
        for group in scored.partition.groups
    ]
    return {
        "indices": [list(group) for group in scored.partition.groups],
        "device_groups": [[device_ids[i] for i in group] for group in scored.partition.groups],
        "score": _score_json(scored.score),
        "realization_index": scored.realization_index,
        "pooled_distributions": [[float(p) for p in dist] for dist in pooled],
    }


def cmd_cluster(args) -> int:
    cfg = load_config(args.config, args.seed)
    devices = load_devices(args.devices)
    device_counts = [d.label_counts for d in devices]
    group_count = args.groups if args.groups is not None else cfg.groups
    search = SearchConfig(
        realizations=cfg.realizations,
        group_count=group_count,
        seed=cfg.seed,
        dedup=cfg.dedup,
    )
    best, worst = select_clusters(device_counts, search)
    device_ids = [d.device_id for d in devices]
    report = {
        "device_ids": device_ids,
        "group_count": group_count,
        "realizations": cfg.realizations,
        "dedup": cfg.dedup,
        "seed": cfg.seed,
        "best": _realization_json(best, device_ids, device_counts),
        "worst": _realization_json(worst, device_ids, device_counts),
    }
    if args.exhaustive:
        oracle = exhaustive_best(device_counts, group_count)
        report["exhaustive_best"] = _realization_json(oracle, device_ids, device_counts)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(report, indent=2))
    print(f"best  score {report['best']['score']}: {report['best']['device_groups']}")
    print(f"worst score {report['worst']['score']}: {report['worst']['device_groups']}")
    if args.exhaustive:
        print(
            f"exhaustive best score {report['exhaustive_best']['score']}: "
            f"{report['exhaustive_best']['device_groups']}"
        )
    print(f"wrote {out}")
    return 0


def _load_partition(path: str, which: str, device_count: int) -> Partition:
    report = json.loads(Path(path).read_text())
    if which not in report:
        raise ConfigError(f"{path} has no {which!r} realization")
    indices = report[which]["indices"]
    return Partition(tuple(tuple(g) for g in indices), device_count)


def cmd_train(args) -> int:
    cfg = load_config(args.config, args.seed)
    devices = load_devices(args.devices)
    device_counts = [d.label_counts for d in devices]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    history = None
    partition_groups = None
    if args.topology == "flat":
        fl = cfg.fl_config(FLAT_ROUNDS_DEFAULT)
        params, history = run_federated(devices, fl)
        singletons = Partition(tuple((i,) for i in range(len(devices))), len(devices))
        score = score_partition(singletons, device_counts).score
        configuration = "no-groups"
        rounds = fl.rounds
    elif args.topology == "clustered":
        if args.partition is None:
            raise UsageError("clustered topology requires --partition")
        partition = _load_partition(args.partition, args.which, len(devices))
        fl = cfg.fl_config(CLUSTERED_ROUNDS_DEFAULT)
        params, history = run_three_tier(devices, partition, fl)
        score = score_partition(partition, device_counts).score
        configuration = f"{partition.group_count}-groups-{args.which}"
        partition_groups = [list(g) for g in partition.groups]
        rounds = fl.rounds
    elif args.topology == "centralized":
        params = run_centralized(devices, cfg.train)
        score = None
        configuration = "centralized"
        rounds = None
    else:
        raise UsageError(f"unknown topology {args.topology!r}")

    report = evaluate_on_clients(params, devices, cfg.averaging).to_dict()
    generalization = None
    if args.holdout is not None:
        unseen = load_devices(args.holdout)
        generalization = evaluate_generalization(params, unseen, cfg.averaging).to_dict()

    shutil.copy(args.config, out / "config.json")
    save_params(params, out / "params.json")
    if history is not None:
        history_to_csv(history, out / "history.csv")
    (out / "run.json").write_text(
        json.dumps(
            {
                "configuration": configuration,
                "topology": args.topology,
                "score": _score_json(score),
                "groups": partition_groups,
                "seed": cfg.seed,
                "rounds": rounds,
                "averaging": cfg.averaging,
            },
            indent=2,
        )
    )
    (out / "eval.json").write_text(
        json.dumps({"test": report, "generalization": generalization}, indent=2)
    )
    print(
        f"{configuration}: mean F1 {report['mean_f1']:.4f} "
        f"(std {report['std_f1']:.4f}) -> {out}"
    )
    return 0


def cmd_report(args) -> int:
    rows = []
    client_rows = []
    for run_dir in args.runs:
        run_dir = Path(run_dir)
        try:
            run = json.loads((run_dir / "run.json").read_text())
            evaluation = json.loads((run_dir / "eval.json").read_text())
        except OSError as exc:
            raise DataError(f"{run_dir}: missing run outputs: {exc}") from exc
        score = _score_from_json(run["score"])
        test = evaluation["test"]
        rows.append(
            {
                "configuration": run["configuration"],
                "similarity_score": score,
                "f1_mean": test["mean_f1"],
                "f1_std": test["std_f1"],
            }
        )
        for device_id, f1 in test["per_client_f1"].items():
            client_rows.append((run["configuration"], device_id, f1))

    rows.sort(key=lambda r: -math.inf if r["similarity_score"] is None else r["similarity_score"])
    header = ["configuration", "similarity_score", "f1_mean", "f1_std"]
    lines = [header] + [
        [
            r["configuration"],
            "-" if r["similarity_score"] is None
            else ("inf" if math.isinf(r["similarity_score"]) else f"{r['similarity_score']:.4f}"),
            f"{r['f1_mean']:.4f}",
            f"{r['f1_std']:.4f}",
        ]
        for r in rows
    ]
    widths = [max(len(str(v)) for v in col) for col in zip(*lines)]
    for line in lines:
        print("  ".join(str(v).ljust(w) for v, w in zip(line, widths)))
    print()
    print("per-client F1:")
    for configuration, device_id, f1 in client_rows:
        print(f"  {configuration}  {device_id}  {f1:.4f}")

    if args.out is not None:
        out = Path(args.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        with out.open("w", newline="") as fh:
            fh.write(",".join(header) + "\n")
            for line in lines[1:]:
                fh.write(",".join(str(v) for v in line) + "\n")
        clients_path = out.with_name(out.stem + "_clients" + out.suffix)
        with clients_path.open("w", newline="") as fh:
            fh.write("configuration,device_id,f1\n")
            for configuration, device_id, f1 in client_rows:
                fh.write(f"{configuration},{device_id},{f1!r}\n")
        print(f"wrote {out} and {clients_path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="fedclust", description=__doc__,
                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--config", required=True, help="JSON experiment config")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")

    p_ingest = sub.add_parser("ingest", help="build device datasets from a flow CSV")
    add_common(p_ingest)
    p_ingest.add_argument("--out", required=True, help="output directory")
    p_ingest.set_defaults(func=cmd_ingest)

    p_synth = sub.add_parser("synth", help="generate a synthetic non-iid dataset")
    add_common(p_synth)
    p_synth.add_argument("--out", required=True, help="output directory")
    p_synth.set_defaults(func=cmd_synth)

    p_cluster = sub.add_parser("cluster", help="search device partitions by balance score")
    add_common(p_cluster)
    p_cluster.add_argument("--devices", required=True, help="device dataset directory")
    p_cluster.add_argument("--groups", type=int, default=None, help="group count (overrides config)")
    p_cluster.add_argument("--exhaustive", action="store_true",
                           help="also run the exhaustive enumeration oracle")
    p_cluster.add_argument("--out", required=True, help="output JSON file")
    p_cluster.set_defaults(func=cmd_cluster)

    p_train = sub.add_parser("train", help="train one topology and evaluate per device")
    add_common(p_train)
    p_train.add_argument("--devices", required=True, help="device dataset directory")
    p_train.add_argument("--topology", required=True, choices=["flat", "clustered", "centralized"])
    p_train.add_argument("--partition", default=None, help="cluster report JSON (clustered only)")
    p_train.add_argument("--which", choices=["best", "worst"], default="best",
                         help="which realization of the cluster report to train")
    p_train.add_argument("--holdout", default=None,
                         help="device directory of unseen devices for generalization")
    p_train.add_argument("--out", required=True, help="run output directory")
    p_train.set_defaults(func=cmd_train)

    p_report = sub.add_parser("report", help="tabulate one or more runs")
    p_report.add_argument("runs", nargs="+", help="run directories from `train`")
    p_report.add_argument("--out", default=None, help="also write CSV here")
    p_report.set_defaults(func=cmd_report)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())

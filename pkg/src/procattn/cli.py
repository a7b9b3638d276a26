"""Command-line entry point: prepare, train, evaluate, explain, compare, anova.

Settings come from an optional JSON config file (``--config``); command-line
flags override it.  Every output file carries a ``_meta`` record with the tool
version, the seed and the effective configuration.  Exit codes: 0 success,
1 usage or configuration error, 2 data error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, fields

import numpy as np

from . import __version__
from .encode import PrefixEncoder, split_indices
from .errors import ConfigError, DataError, NumericError, ProcAttnError
from .evalstats import (
    STATISTICS,
    anova_from_summary,
    anova_one_way,
    confusion,
    metrics,
    true_label_rank,
)
from .eventlog import (
    LogProfile,
    PrefixTrace,
    all_prefixes,
    build_traces,
    dump_prefixes,
    load_prefixes,
    log_summary,
    read_log,
)
from .interpret import aggregate, explain_rows
from .models import ARCHITECTURES, SPECIALISED, TrainConfig, load_artifact, predict, save_artifact, train

logger = logging.getLogger("procattn")

MODEL_FILE = "model.pattn"


@dataclass
class RunConfig:
    log: str = None
    profile: dict = None
    min_length: int = 1
    max_length: int = 50
    include_end_label: bool = False
    completed_only: bool = False
    activity_prefix: str = None
    time_unit: str = "days"
    time_scaling: str = "maxabs"
    architecture: str = SPECIALISED
    hidden_size: int = 50
    activity_dim: int = None
    resource_dim: int = None
    seed: int = 0
    epochs: int = 50
    batch_size: int = 64
    lr: float = 0.001
    patience: int = 5
    train_fraction: float = 0.7
    validation_fraction: float = 0.1
    repeat: int = 1
    workers: int = 1
    out_dir: str = "out"

    @classmethod
    def from_sources(cls, path=None, overrides=None):
        data = {}
        if path:
            if not os.path.isfile(path):
                raise ConfigError(f"config file not found: {path}")
            try:
                with open(path, encoding="utf-8") as fh:
                    data = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"{path}: invalid JSON ({exc})") from None
            if not isinstance(data, dict):
                raise ConfigError(f"{path}: top level must be an object")
            unknown = set(data) - {f.name for f in fields(cls)}
            if unknown:
                raise ConfigError(f"{path}: unknown config keys {sorted(unknown)}")
        data.update({k: v for k, v in (overrides or {}).items() if v is not None})
        cfg = cls(**data)
        cfg.validate()
        return cfg

    def validate(self):
        for f in fields(self):
            value, default = getattr(self, f.name), f.default
            if value is None or default is None:
                continue
            ok = isinstance(value, type(default))
            if isinstance(default, bool) or isinstance(value, bool):
                ok = isinstance(value, bool) and isinstance(default, bool)
            elif isinstance(default, float):
                ok = isinstance(value, (int, float))
            if not ok:
                raise ConfigError(
                    f"config key {f.name!r} must be {type(default).__name__}, got {value!r}"
                )
        for name in ("activity_dim", "resource_dim"):
            value = getattr(self, name)
            if value is not None and (not isinstance(value, int) or value < 1):
                raise ConfigError(f"{name} must be a positive integer, got {value!r}")
        if self.activity_prefix is not None and not isinstance(self.activity_prefix, str):
            raise ConfigError(f"activity_prefix must be a string, got {self.activity_prefix!r}")
        if self.profile is not None and not isinstance(self.profile, (dict, str)):
            raise ConfigError("profile must be an object or a path to a JSON profile")
        if self.architecture not in ARCHITECTURES:
            raise ConfigError(f"architecture must be one of {ARCHITECTURES}, got {self.architecture!r}")
        if self.repeat < 1 or self.workers < 1:
            raise ConfigError("repeat and workers must be at least 1")
        if not 0.0 < self.train_fraction < 1.0:
            raise ConfigError(f"train_fraction must lie in (0, 1), got {self.train_fraction}")
        if not 0.0 <= self.validation_fraction < 1.0:
            raise ConfigError(f"validation_fraction must lie in [0, 1), got {self.validation_fraction}")
        if not isinstance(self.seed, int) or self.seed < 0:
            raise ConfigError(f"seed must be a non-negative integer, got {self.seed!r}")

    def train_config(self, seed):
        return TrainConfig(
            epochs=self.epochs, batch_size=self.batch_size, lr=self.lr, seed=seed,
            patience=self.patience, hidden_size=self.hidden_size,
            activity_dim=self.activity_dim, resource_dim=self.resource_dim,
        )


# -- output helpers ------------------------------------------------------------------


def _meta(cfg, command, seed=None, **extra):
    return {
        "tool": "procattn",
        "tool_version": __version__,
        "command": command,
        "seed": cfg.seed if seed is None else seed,
        "config": asdict(cfg),
        **extra,
    }


def _dumps(obj):
    return json.dumps(obj, sort_keys=True, indent=2, allow_nan=False) + "\n"


def _write_text(path, text):
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)
    logger.info("wrote %s", path)


def _write_json(path, meta, body):
    _write_text(path, _dumps({"_meta": meta, **body}))


def _ndjson(meta, records):
    lines = [json.dumps({"_meta": meta}, sort_keys=True)]
    lines += [json.dumps(r, sort_keys=True, allow_nan=False) for r in records]
    return "\n".join(lines) + "\n"


def _csv(meta, header, rows):
    buf = io.StringIO()
    buf.write("# " + json.dumps(meta, sort_keys=True) + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _require_file(path, what):
    if not path:
        raise ConfigError(f"{what} is required")
    if not os.path.isfile(path):
        raise ConfigError(f"{what} not found: {path}")
    return path


def _load_prefix_file(path, what="prefix file"):
    return load_prefixes(_require_file(path, what))


def _read_ndjson(path, what):
    _require_file(path, what)
    records = []
    with open(path, encoding="utf-8") as fh:
        for n, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}: line {n}: invalid JSON ({exc.msg})") from None
            if "_meta" not in rec:
                records.append(rec)
    return records


# -- prepare ---------------------------------------------------------------------------


def _prefixes_from_log(cfg):
    path = _require_file(cfg.log, "log path (--log)")
    profile = LogProfile.from_dict(cfg.profile or {})
    events = read_log(path, profile)
    if cfg.activity_prefix:
        # e.g. "A_" keeps only the application sub-process of a loan log
        events = [e for e in events if e.activity.startswith(cfg.activity_prefix)]
        if not events:
            raise DataError(f"no activity starts with {cfg.activity_prefix!r}")
    traces, dropped = build_traces(events, cfg.completed_only)
    prefixes = all_prefixes(
        traces, min_length=cfg.min_length, max_length=cfg.max_length,
        include_end_label=cfg.include_end_label,
    )
    return traces, prefixes, dropped


def cmd_prepare(cfg, args):
    traces, prefixes, dropped = _prefixes_from_log(cfg)
    if not prefixes:
        raise DataError("log yields no prefixes (are all cases shorter than two events?)")
    meta = _meta(cfg, "prepare")
    out = cfg.out_dir
    buf = io.StringIO()
    buf.write(json.dumps({"_meta": meta}, sort_keys=True) + "\n")
    dump_prefixes(prefixes, buf)
    _write_text(os.path.join(out, "prefixes.ndjson"), buf.getvalue())
    summary = log_summary(traces)
    summary.update(prefixes=len(prefixes), dropped_cases=dropped)
    _write_json(os.path.join(out, "summary.json"), meta, {"summary": summary})
    return summary


# -- train --------------------------------------------------------------------------------


def _prediction_records(artifact, dataset, prefixes, prediction):
    labels = artifact.class_labels
    records = []
    for i, p in enumerate(prefixes):
        probs = prediction.probabilities[i]
        cls = int(prediction.classes[i])
        target = int(dataset.targets[i])
        records.append({
            "prefix_id": p.prefix_id,
            "prefix": p.to_dict(),
            "actual": p.target,
            "predicted": labels[cls],
            "known_target": target >= 0,
            "true_rank": true_label_rank(probs, target) if target >= 0 else None,
            "correct": bool(target == cls),
            "probabilities": {labels[k]: float(v) for k, v in enumerate(probs)},
        })
    return records


def _evaluate(artifact, prefixes):
    """Metrics over prefixes whose target the model knows; returns (report, cm, records, dropped)."""
    if not prefixes:
        raise DataError("test split is empty")
    dataset = artifact.encode(prefixes)
    prediction = predict(artifact, dataset)
    records = _prediction_records(artifact, dataset, prefixes, prediction)
    known = [r for r in records if r["known_target"]]
    if not known:
        raise DataError("no test prefix has a target known to the model")
    cm = confusion([r["actual"] for r in known], [r["predicted"] for r in known],
                   artifact.class_labels)
    return metrics(cm), cm, records, len(records) - len(known)


def _train_one(cfg, arch, seed, prefixes):
    train_idx, test_idx = split_indices([p.prefix_id for p in prefixes], cfg.train_fraction, seed)
    train_p = [prefixes[i] for i in train_idx]
    test_p = [prefixes[i] for i in test_idx]
    longest = max(p.length for p in prefixes)
    encoder = PrefixEncoder(
        pad_length=longest, time_unit=cfg.time_unit, time_scaling=cfg.time_scaling,
        include_end_label=cfg.include_end_label,
    ).fit(train_p)
    data = encoder.transform(train_p)
    val = None
    if cfg.validation_fraction > 0:
        fit_idx, val_idx = split_indices(data.prefix_ids, 1.0 - cfg.validation_fraction, seed)
        data, val = data.subset(fit_idx), data.subset(val_idx)
    artifact, history = train(arch, data, val, cfg.train_config(seed))
    artifact.config = {**artifact.config, "run": asdict(cfg)}

    run_dir = os.path.join(cfg.out_dir, f"{arch}-seed{seed}")
    meta = _meta(cfg, "train", seed, architecture=arch)
    os.makedirs(run_dir, exist_ok=True)
    save_artifact(artifact, os.path.join(run_dir, MODEL_FILE))
    _write_json(os.path.join(run_dir, "training_log.json"), meta, {"history": history})
    buf = io.StringIO()
    buf.write(json.dumps({"_meta": meta}, sort_keys=True) + "\n")
    dump_prefixes(test_p, buf)
    _write_text(os.path.join(run_dir, "test_prefixes.ndjson"), buf.getvalue())

    report, _, _, dropped = _evaluate(artifact, test_p)
    return {
        "architecture": arch,
        "seed": seed,
        "run_dir": run_dir,
        "epochs_run": len(history),
        "train_prefixes": len(train_p),
        "test_prefixes": len(test_p),
        "test_unknown_targets": dropped,
        **{k: report.headline()[k] for k in ("accuracy", "precision", "recall", "f1")},
    }


def _train_job(job):
    cfg, arch, seed, prefixes = job
    return _train_one(cfg, arch, seed, prefixes)


def cmd_train(cfg, args):
    if args.prefixes:
        prefixes = _load_prefix_file(args.prefixes)
    elif cfg.log:
        _, prefixes, _ = _prefixes_from_log(cfg)
    else:
        prefixes = _load_prefix_file(os.path.join(cfg.out_dir, "prefixes.ndjson"))
    if len(prefixes) < 2:
        raise DataError(f"need at least two prefixes to split, got {len(prefixes)}")
    seeds = [cfg.seed + r for r in range(cfg.repeat)]
    jobs = [(cfg, cfg.architecture, s, prefixes) for s in seeds]
    if cfg.workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=min(cfg.workers, len(jobs))) as pool:
            rows = list(pool.map(_train_job, jobs))
    else:
        rows = [_train_job(j) for j in jobs]
    header = list(rows[0])
    _write_text(
        os.path.join(cfg.out_dir, f"runs-{cfg.architecture}.csv"),
        _csv(_meta(cfg, "train"), header, [[r[k] for k in header] for r in rows]),
    )
    return rows


# -- evaluate ------------------------------------------------------------------------------


def cmd_evaluate(cfg, args):
    artifact = load_artifact(_require_file(args.model, "model artifact (--model)"))
    prefixes = _load_prefix_file(args.prefixes, "test prefixes (--prefixes)")
    report, cm, records, dropped = _evaluate(artifact, prefixes)
    meta = _meta(cfg, "evaluate", artifact.config.get("seed"), architecture=artifact.architecture,
                 model=args.model, prefixes=args.prefixes)
    out = cfg.out_dir
    body = report.to_dict()
    body["unknown_targets_excluded"] = dropped
    _write_json(os.path.join(out, "metrics.json"), meta, {"metrics": body})
    head = report.headline()
    dataset_name = args.dataset or os.path.basename(args.prefixes)
    _write_text(
        os.path.join(out, "metrics.csv"),
        _csv(meta, ["dataset", "model", "metric", "value"],
             [[dataset_name, artifact.architecture, k, repr(head[k])]
              for k in ("accuracy", "precision", "recall", "f1")]),
    )
    _write_text(os.path.join(out, "confusion.csv"),
                "# " + json.dumps(meta, sort_keys=True) + "\n" + cm.to_csv())
    _write_text(os.path.join(out, "predictions.ndjson"), _ndjson(meta, records))
    return body


# -- explain -------------------------------------------------------------------------------


def cmd_explain(cfg, args):
    artifact = load_artifact(_require_file(args.model, "model artifact (--model)"))
    records = _read_ndjson(args.predictions, "predictions dump (--predictions)")
    if not records:
        raise DataError("predictions dump holds no records")
    labels = artifact.activity_vocab.labels
    if args.decision_point is not None and args.decision_point not in labels:
        raise DataError(
            f"unknown decision point {args.decision_point!r}; known activities: {sorted(labels)}"
        )
    prefixes = [PrefixTrace.from_dict(r["prefix"]) for r in records]
    dataset = artifact.encode(prefixes)
    explanations = explain_rows(artifact, dataset, predict(artifact, dataset), args.k)
    for e, p in zip(explanations, prefixes):
        e.actual = p.target
    meta = _meta(cfg, "explain", artifact.config.get("seed"), architecture=artifact.architecture,
                 model=args.model, predictions=args.predictions, k=args.k,
                 decision_point=args.decision_point, target=args.target,
                 selector=args.selector, window=args.window)
    out = cfg.out_dir
    _write_text(os.path.join(out, "local.ndjson"), _ndjson(meta, [e.to_dict() for e in explanations]))
    result = {"local": len(explanations)}
    if args.decision_point is not None:
        if args.target is None:
            raise ConfigError("--target is required with --decision-point")
        glob = aggregate(explanations, args.decision_point, args.target, args.selector, args.window)
        _write_json(os.path.join(out, "global.json"), meta, {"global": glob.to_dict()})
        _write_text(os.path.join(out, "plot.csv"), "# " + json.dumps(meta, sort_keys=True) + "\n" + glob.to_csv())
        result["cohort_size"] = glob.cohort_size
    return result


# -- compare and anova -----------------------------------------------------------------------


def _metrics_file(path):
    _require_file(path, "metrics file")
    with open(path, encoding="utf-8") as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise DataError(f"{path}: invalid JSON ({exc})") from None
    if "metrics" not in data:
        raise DataError(f"{path}: not a metrics report")
    return data


def cmd_compare(cfg, args):
    """Side-by-side headline metrics of several evaluate runs."""
    rows = []
    for path in args.metrics:
        data = _metrics_file(path)
        m = data["metrics"]
        rows.append([path, data["_meta"].get("architecture", ""), repr(m["accuracy"]),
                     repr(m["weighted"]["precision"]), repr(m["weighted"]["recall"]),
                     repr(m["weighted"]["f1"])])
    _write_text(os.path.join(cfg.out_dir, "comparison.csv"),
                _csv(_meta(cfg, "compare"), ["source", "architecture", "accuracy", "precision",
                                             "recall", "f1"], rows))
    return rows


def _statistic_values(path, statistic):
    records = [r for r in _read_ndjson(path, "predictions dump") if r.get("known_target", True)]
    if not records:
        raise DataError(f"{path}: no usable prediction records")
    try:
        return np.array([STATISTICS[statistic](r) for r in records])
    except (KeyError, TypeError) as exc:
        raise DataError(f"{path}: records lack the fields for statistic {statistic!r} ({exc})") from None


def cmd_anova(cfg, args):
    if args.summary:
        _require_file(args.summary, "summary file (--summary)")
        with open(args.summary, encoding="utf-8") as fh:
            try:
                groups = json.load(fh)
            except json.JSONDecodeError as exc:
                raise DataError(f"{args.summary}: invalid JSON ({exc})") from None
        if isinstance(groups, dict):
            groups = groups.get("groups", [])
        result = anova_from_summary(groups)
        source = {"summary": args.summary}
    else:
        if not args.dumps or len(args.dumps) < 2:
            raise ConfigError("anova needs two or more prediction dumps, or --summary")
        if args.statistic not in STATISTICS:
            raise ConfigError(f"unknown statistic {args.statistic!r}; choose from {sorted(STATISTICS)}")
        groups = [_statistic_values(p, args.statistic) for p in args.dumps]
        result = anova_one_way(groups, names=list(args.dumps))
        source = {"dumps": list(args.dumps), "statistic": args.statistic}
    if not np.isfinite(result.p_value):
        raise NumericError("ANOVA produced a non-finite p-value")
    body = result.to_dict()
    if not np.isfinite(body["f"]):
        body["f"] = None
    _write_json(os.path.join(cfg.out_dir, "anova.json"), _meta(cfg, "anova", **source), {"anova": body})
    return body


# -- argument parsing -------------------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _add_global(p, suppress):
    default = argparse.SUPPRESS if suppress else None
    p.add_argument("--config", default=default, help="JSON run configuration")
    p.add_argument("--seed", type=int, default=default)
    p.add_argument("--out-dir", dest="out_dir", default=default)
    p.add_argument("--quiet", action="store_true", default=argparse.SUPPRESS if suppress else False)


def build_parser():
    parser = _Parser(prog="procattn", description="Attention-based next-activity prediction.")
    parser.add_argument("--version", action="version", version=f"procattn {__version__}")
    _add_global(parser, suppress=False)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def command(name, help_text):
        p = sub.add_parser(name, help=help_text)
        _add_global(p, suppress=True)
        return p

    def log_options(p):
        p.add_argument("--log", help="CSV or XES event log")
        p.add_argument("--profile", help="JSON column profile for CSV logs")
        p.add_argument("--min-length", dest="min_length", type=int)
        p.add_argument("--max-length", dest="max_length", type=int)
        p.add_argument("--end-label", dest="include_end_label", action="store_true", default=None)
        p.add_argument("--completed-only", dest="completed_only", action="store_true", default=None)
        p.add_argument("--activity-prefix", dest="activity_prefix",
                       help="keep only events whose activity starts with this string")

    p = command("prepare", "parse a log and dump labelled prefixes")
    log_options(p)

    p = command("train", "train one or more models on a prefix dump")
    log_options(p)
    p.add_argument("--prefixes", help="prefix dump from prepare (default: OUT_DIR/prefixes.ndjson)")
    p.add_argument("--architecture", choices=ARCHITECTURES)
    p.add_argument("--hidden-size", dest="hidden_size", type=int)
    p.add_argument("--activity-dim", dest="activity_dim", type=int)
    p.add_argument("--resource-dim", dest="resource_dim", type=int)
    p.add_argument("--time-unit", dest="time_unit")
    p.add_argument("--time-scaling", dest="time_scaling", choices=("maxabs", "identity"))
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--patience", type=int)
    p.add_argument("--train-fraction", dest="train_fraction", type=float)
    p.add_argument("--validation-fraction", dest="validation_fraction", type=float)
    p.add_argument("--repeat", type=int)
    p.add_argument("--workers", type=int)

    p = command("evaluate", "score a model on held-out prefixes")
    p.add_argument("--model", required=True)
    p.add_argument("--prefixes", required=True)
    p.add_argument("--dataset", help="dataset name for the metrics grid (default: prefix file name)")

    p = command("explain", "local and global explanations")
    p.add_argument("--model", required=True)
    p.add_argument("--predictions", required=True, help="predictions.ndjson from evaluate")
    p.add_argument("--decision-point", dest="decision_point")
    p.add_argument("--target")
    p.add_argument("--selector", choices=("predicted", "actual"), default="predicted")
    p.add_argument("--window", type=int, default=10)
    p.add_argument("-k", type=int, default=3)

    p = command("compare", "tabulate headline metrics of several evaluate runs")
    p.add_argument("metrics", nargs="+", help="metrics.json files")

    p = command("anova", "one-way ANOVA between prediction dumps")
    p.add_argument("dumps", nargs="*", help="predictions.ndjson files, one per group")
    p.add_argument("--statistic", default="rank", help=f"one of {sorted(STATISTICS)}")
    p.add_argument("--summary", help="JSON list of group summaries (count, sum, mean, variance)")
    return parser


COMMANDS = {
    "prepare": cmd_prepare,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "explain": cmd_explain,
    "compare": cmd_compare,
    "anova": cmd_anova,
}

_CONFIG_FLAGS = {f.name for f in fields(RunConfig)}


def _load_profile(value):
    if value is None or isinstance(value, dict):
        return value
    _require_file(value, "profile")
    return LogProfile.from_json(value).to_dict()


def main(argv=None):
    args = build_parser().parse_args(argv)
    quiet = getattr(args, "quiet", False)
    logging.basicConfig(level=logging.WARNING if quiet else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s", force=True)
    try:
        overrides = {k: v for k, v in vars(args).items() if k in _CONFIG_FLAGS}
        if overrides.get("profile") is not None:
            overrides["profile"] = _load_profile(overrides["profile"])
        cfg = RunConfig.from_sources(args.config, overrides)
        if isinstance(cfg.profile, str):
            cfg.profile = _load_profile(cfg.profile)
        result = COMMANDS[args.command](cfg, args)
    except ProcAttnError as exc:
        print(f"procattn {args.command}: {exc}", file=sys.stderr)
        return exc.exit_code
    except (FloatingPointError, OverflowError) as exc:
        print(f"procattn {args.command}: numeric failure: {exc}", file=sys.stderr)
        return 3
    if not quiet:
        print(json.dumps(result, sort_keys=True, indent=2, default=str))
    return 0


if __name__ == "__main__":
    sys.exit(main())

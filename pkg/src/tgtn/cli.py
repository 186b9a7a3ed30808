"""Command-line pipeline: ``tgtn {gen,train,eval,ablate,stream,report}``.

Configuration comes from JSON files with sections ``gen``, ``model``,
``train``, ``edge_rule``, ``encoder``, ``window``, ``rules`` and ``protocol``,
plus ``--set section.key=value`` overrides. Every run writes into a fresh
directory ``<out>/<command>-<UTC time>-seed<seed>`` holding its outputs and
one ``manifest.json``.
"""

import argparse
import json
import os
import sys
import time
from dataclasses import asdict, fields
from datetime import datetime, timezone

import numpy as np

from . import __version__, metrics
from .ablation import VARIANTS, default_boundary, fit_windowed, run_ablation, score_period
from .graph import EdgeRule, EncoderConfig
from .model import TgtnConfig, load_checkpoint, save_checkpoint
from .stream import RuleEngine, WindowConfig, consistency_check, replay
from .train import DAY, TrainConfig, history_csv, kfold_cv
from .txgen import FRAUD, GenConfig, generate, load_dataset, save_dataset

SECTIONS = {"gen": GenConfig, "model": TgtnConfig, "train": TrainConfig,
            "edge_rule": EdgeRule, "encoder": EncoderConfig, "window": WindowConfig}
# knobs of the windowed protocol shared by train, eval and ablate
PROTOCOL = {"keep_ratio": 3.0, "span_seconds": 14 * DAY, "n_views": 8, "block_seconds": None,
            "boundary_fraction": 0.75, "threshold": 0.5}


class UsageError(Exception):
    pass


def _parse_value(text):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def resolve_config(files=(), overrides=(), seed=None) -> dict:
    """Defaults, then each JSON file in order, then ``--set`` pairs, then ``--seed``."""
    cfg = {name: asdict(cls()) for name, cls in SECTIONS.items()}
    cfg["protocol"] = dict(PROTOCOL)
    cfg["rules"] = RuleEngine().to_dict()
    for path in files:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
        if not isinstance(doc, dict):
            raise UsageError(f"{path}: config must be a JSON object")
        for section, values in doc.items():
            if section not in cfg:
                raise UsageError(f"{path}: unknown config section {section!r}")
            for key, value in values.items():
                _assign(cfg, section, key, value)
    for item in overrides:
        if "=" not in item or "." not in item.split("=", 1)[0]:
            raise UsageError(f"--set expects section.key=value, got {item!r}")
        path, value = item.split("=", 1)
        section, key = path.split(".", 1)
        if section not in cfg:
            raise UsageError(f"--set: unknown section {section!r}")
        _assign(cfg, section, key, _parse_value(value))
    if seed is not None:
        cfg["gen"]["seed"] = seed
        cfg["train"]["seed"] = seed
    return cfg


def _assign(cfg, section, key, value):
    if key not in cfg[section]:
        raise UsageError(f"unknown key {section}.{key} (known: {', '.join(sorted(cfg[section]))})")
    cfg[section][key] = value


def _build(cfg, section):
    cls = SECTIONS[section]
    names = {f.name for f in fields(cls)}
    obj = cls(**{k: v for k, v in cfg[section].items() if k in names})
    if section == "gen":
        obj.validate()
    return obj


class Run:
    """Output directory plus manifest bookkeeping for one command."""

    def __init__(self, command, out_root, cfg, seed):
        self.command = command
        self.cfg = cfg
        self.seed = seed
        self.started = time.time()
        stamp = datetime.fromtimestamp(self.started, tz=timezone.utc).strftime("%Y%m%dT%H%M%SZ")
        self.base = os.path.join(out_root, f"{command}-{stamp}-seed{seed}")
        self.dir = None
        self.inputs = {}
        self.outputs = {}

    def _ensure_dir(self):
        # created on first write so a run that fails validation leaves nothing behind
        if self.dir is None:
            path, n = self.base, 1
            while os.path.exists(path):
                path = f"{self.base}-{n}"
                n += 1
            os.makedirs(path)
            self.dir = path
        return self.dir

    def path(self, name):
        p = os.path.join(self._ensure_dir(), name)
        self.outputs[name] = p
        return p

    def write_text(self, name, text):
        with open(self.path(name), "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)

    def write_json(self, name, doc):
        self.write_text(name, json.dumps(doc, indent=2, sort_keys=True) + "\n")

    def finish(self):
        ended = time.time()
        manifest = {"command": self.command, "config": self.cfg, "seed": self.seed,
                    "inputs": self.inputs, "outputs": self.outputs, "tool_version": __version__,
                    "started_at": _iso(self.started), "ended_at": _iso(ended)}
        with open(os.path.join(self._ensure_dir(), "manifest.json"), "w", encoding="utf-8",
                  newline="\n") as fh:
            json.dump(manifest, fh, indent=2, sort_keys=True)
            fh.write("\n")


def _iso(t):
    return datetime.fromtimestamp(t, tz=timezone.utc).isoformat()


# --- commands ---------------------------------------------------------------

def cmd_gen(args, cfg, run):
    ds = generate(_build(cfg, "gen"))
    save_dataset(ds, run.path("dataset.jsonl"))
    print(f"{len(ds)} transactions ({ds.n_fraud} fraud) -> {run.outputs['dataset.jsonl']}")


def _load(args, run):
    if not args.data:
        raise UsageError("--data is required")
    run.inputs["data"] = args.data
    return load_dataset(args.data)


def cmd_train(args, cfg, run):
    ds = _load(args, run)
    model_cfg, train_cfg = _build(cfg, "model"), _build(cfg, "train")
    rule, enc, proto = _build(cfg, "edge_rule"), _build(cfg, "encoder"), cfg["protocol"]
    if args.grid:
        run.inputs["grid"] = args.grid
        with open(args.grid, encoding="utf-8") as fh:
            entries = json.load(fh)
        grid = [(TgtnConfig(**{**cfg["model"], **e.get("model", {})}),
                 TrainConfig(**{**cfg["train"], **e.get("train", {})})) for e in entries]
        report = kfold_cv(ds, args.k, grid, rule, enc)
        run.write_json("cv_report.json", report.to_dict())
        model_cfg, train_cfg = report.selected_config
        model_cfg, train_cfg = TgtnConfig(**model_cfg), TrainConfig(**train_cfg)
        cfg["model"], cfg["train"] = asdict(model_cfg), asdict(train_cfg)
        print(f"cross-validation picked grid entry {report.selected}")
    fit, _ = fit_windowed(ds, model_cfg, train_cfg, rule, enc, proto["keep_ratio"],
                          proto["span_seconds"], proto["n_views"])
    provenance = {"seed": train_cfg.seed, "data": os.path.abspath(args.data),
                  "best_epoch": fit.best_epoch, "pos_weight": fit.pos_weight,
                  "edge_rule": cfg["edge_rule"], "encoder": cfg["encoder"],
                  "protocol": cfg["protocol"]}
    save_checkpoint(run.path("checkpoint.json"), fit.params, model_cfg, enc.d_in, provenance)
    run.write_text("history.csv", history_csv(fit.history))
    print(f"best epoch {fit.best_epoch} of {len(fit.history)}; "
          f"val AP {fit.history[fit.best_epoch - 1]['val_ap']:.4f}")


def _load_model(args, cfg, run):
    if not args.checkpoint:
        raise UsageError("--checkpoint is required")
    run.inputs["checkpoint"] = args.checkpoint
    params, model_cfg, d_in, prov = load_checkpoint(args.checkpoint)
    # the checkpoint fixes how graphs were built
    for section in ("edge_rule", "encoder"):
        if section in prov:
            cfg[section] = {**prov[section]}
    enc = _build(cfg, "encoder")
    if enc.d_in != d_in:
        raise ValueError(f"encoder gives d_in {enc.d_in}, checkpoint expects {d_in}")
    cfg["model"] = asdict(model_cfg)
    return params, model_cfg, _build(cfg, "edge_rule"), enc


def cmd_eval(args, cfg, run):
    params, model_cfg, rule, enc = _load_model(args, cfg, run)
    ds = _load(args, run)
    if not ds.transactions:
        raise ValueError("dataset is empty")
    proto = cfg["protocol"]
    start = args.from_ts if args.from_ts is not None else ds.transactions[0].timestamp
    scores = score_period(ds, start, params, model_cfg, rule, enc, proto["span_seconds"],
                          proto["block_seconds"])
    txs = [tx for tx in ds.transactions if tx.timestamp >= start]
    y = np.array([1 if tx.label == FRAUD else 0 for tx in txs])
    if len(set(y.tolist())) < 2:
        # the whole-period numbers are the headline; a single class makes them undefined
        metrics.metrics_report(scores, y, proto["threshold"], strict=True)
    report = metrics.monthly_report(scores, y, [tx.timestamp for tx in txs], proto["threshold"])
    run.write_json("metrics.json", report.to_dict())
    table = metrics.render_table({"TGTN": report})
    run.write_text("metrics.txt", table)
    print(table, end="")


def cmd_ablate(args, cfg, run):
    if args.data:
        ds = _load(args, run)
    else:
        ds = generate(_build(cfg, "gen"))
    proto = cfg["protocol"]
    boundary = args.boundary if args.boundary is not None else default_boundary(
        ds, proto["boundary_fraction"])
    result = run_ablation(ds, boundary, _build(cfg, "edge_rule"), _build(cfg, "encoder"),
                          _build(cfg, "model"), _build(cfg, "train"), proto["keep_ratio"],
                          VARIANTS, proto["threshold"], proto["span_seconds"], proto["n_views"],
                          proto["block_seconds"])
    run.write_json("reports.json", {"boundary_ts": boundary,
                                    "reports": {k: v.to_dict() for k, v in result.reports.items()}})
    table = metrics.render_table(result.reports)
    run.write_text("table.txt", table)
    print(table, end="")


def cmd_stream(args, cfg, run):
    params, model_cfg, rule, enc = _load_model(args, cfg, run)
    ds = _load(args, run)
    if args.rules:
        run.inputs["rules"] = args.rules
        with open(args.rules, encoding="utf-8") as fh:
            cfg["rules"] = RuleEngine.from_json(fh.read()).to_dict()
    engine = RuleEngine.from_dict(cfg["rules"])
    window = _build(cfg, "window")
    records, stats = replay(ds, params, model_cfg, rule, enc, window, engine)
    run.write_text("scores.jsonl", "".join(r.to_json() + "\n" for r in records))
    run.write_json("stats.json", stats.to_dict())
    summary = {"processed": stats.processed, "flagged": stats.flagged, "late": stats.late,
               "max_window_nodes": stats.max_window_nodes}
    if not args.no_check:
        diff = consistency_check(ds, params, model_cfg, rule, enc, window, engine)
        run.write_json("consistency.json", {"max_abs_diff": diff, "bound": 1e-9,
                                            "ok": diff < 1e-9})
        summary["consistency_max_abs_diff"] = diff
    print(json.dumps(summary, sort_keys=True))


def cmd_report(args, cfg, run):
    if not args.inputs:
        raise UsageError("report needs at least one JSON file")
    reports = {}
    for path in args.inputs:
        run.inputs[path] = path
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
        if "reports" in doc:  # ablation output
            for name, r in doc["reports"].items():
                reports[name] = metrics.MetricsReport.from_dict(r)
        else:
            name = os.path.basename(os.path.dirname(os.path.abspath(path))) or path
            reports[name] = metrics.MetricsReport.from_dict(doc)
    table = metrics.render_table(reports)
    run.write_text("report.txt", table)
    print(table, end="")


COMMANDS = {"gen": cmd_gen, "train": cmd_train, "eval": cmd_eval, "ablate": cmd_ablate,
            "stream": cmd_stream, "report": cmd_report}


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", action="append", default=[], metavar="FILE",
                        help="JSON config file (repeatable, later files win)")
    common.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                        dest="overrides", help="override one config value")
    common.add_argument("--seed", type=int, help="seed for generation and training")
    common.add_argument("--out", default="runs", help="root directory for run outputs")

    parser = argparse.ArgumentParser(prog="tgtn", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", metavar="command")
    sub.required = True
    sub.add_parser("gen", parents=[common], help="generate a synthetic dataset")
    p = sub.add_parser("train", parents=[common], help="train a checkpoint")
    p.add_argument("--data")
    p.add_argument("--grid", help="JSON list of {model: {...}, train: {...}} entries for k-fold CV")
    p.add_argument("--k", type=int, default=5)
    p = sub.add_parser("eval", parents=[common], help="month-wise metrics for a checkpoint")
    p.add_argument("--checkpoint")
    p.add_argument("--data")
    p.add_argument("--from-ts", type=int, help="score only transactions at or after this time")
    p = sub.add_parser("ablate", parents=[common], help="compare TGTN, its ablations and RFM")
    p.add_argument("--data", help="dataset JSONL (default: generate from the gen section)")
    p.add_argument("--boundary", type=int, help="train/test boundary timestamp")
    p = sub.add_parser("stream", parents=[common], help="replay a dataset through the window")
    p.add_argument("--checkpoint")
    p.add_argument("--data")
    p.add_argument("--rules", help="rule engine JSON")
    p.add_argument("--no-check", action="store_true", help="skip the batch consistency check")
    p = sub.add_parser("report", parents=[common], help="render stored JSON reports as tables")
    p.add_argument("inputs", nargs="*")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        cfg = resolve_config(args.config, args.overrides, args.seed)
        seed = cfg["train"]["seed"] if args.command == "train" else cfg["gen"]["seed"]
        run = Run(args.command, args.out, cfg, seed)
        COMMANDS[args.command](args, cfg, run)
        run.finish()
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"tgtn {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, KeyError, TypeError, OSError, FloatingPointError) as exc:
        print(f"tgtn {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())

"""Command-line entry point: train, evaluate, ablate, synth, export-graph.

Settings resolve as built-in defaults < ``--config`` file (key=value lines)
< explicit flags. Every command writes ``manifest.json`` into ``--out``.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import datetime as _dt
import json
import logging
import statistics
import sys
import threading
import time
from pathlib import Path

from .config import ABLATIONS, ModelConfig
from .data import default_coupling, load_csv, synth_multiscale, write_csv
from .errors import MagnnError
from .model import MAGNN, load_checkpoint, save_checkpoint
from .train import TrainConfig, fit, predict_split

METRICS_SCHEMA = "magnn-metrics/1"
MANIFEST_SCHEMA = "magnn-manifest/1"

# flag name -> (type, default, help); None defaults are derived from other settings
SETTINGS = {
    "data": (str, None, "dataset CSV (rows = timesteps, columns = variables)"),
    "delimiter": (str, ",", "CSV field delimiter"),
    "header": (bool, False, "first CSV row holds variable names"),
    "horizon": (int, 3, "forecast offset h"),
    "window": (int, 168, "input window length T"),
    "scales": (int, 4, "number of scales K"),
    "channels": (int, 16, "pyramid / GNN channel width c"),
    "embed-dim": (int, 8, "node and scale embedding width"),
    "tau": (int, None, "neighbours kept per node (default: 40 if N > 50 else min(N, 8))"),
    "gnn-depth": (int, 2, "graph convolution layers per direction"),
    "ds": (int, None, "scale representation width (default: channels)"),
    "d1": (int, None, "fusion hidden width (default: 2 * scales)"),
    "dropout": (float, 0.1, "dropout after each graph convolution stack"),
    "lr": (float, 0.001, "Adam learning rate"),
    "batch": (int, 32, "mini-batch size"),
    "epochs": (int, 30, "maximum training epochs"),
    "patience": (int, 5, "epochs without validation improvement before stopping"),
    "seed": (int, 0, "seed for initialization, shuffling and dropout"),
    "variant": (str, "standard", "model variant: " + ", ".join(sorted(ABLATIONS))),
    "out": (str, "runs", "output directory"),
}

MODEL_KEYS = ("horizon", "window", "scales", "channels", "embed-dim", "tau", "gnn-depth", "ds", "d1",
              "dropout", "seed", "variant")
TRAIN_KEYS = ("lr", "batch", "epochs", "patience", "seed")

log = logging.getLogger("magnn")


class UsageError(Exception):
    pass


class StageError(Exception):
    def __init__(self, stage, err):
        super().__init__(f"{stage}: {err}")
        self.stage = stage


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _help(name):
    typ, default, text = SETTINGS[name]
    if typ is bool:
        return f"{text} (default: off)"
    if default is None:
        # derived settings spell out their rule in the text itself
        return text if "(default:" in text else f"{text} (required)"
    return f"{text} (default: {default})"


def _add(p, *names):
    for name in names:
        typ, _, _ = SETTINGS[name]
        flag = "--" + name
        if typ is bool:
            p.add_argument(flag, action="store_true", default=argparse.SUPPRESS, help=_help(name))
        else:
            p.add_argument(flag, type=str, default=argparse.SUPPRESS, metavar=name.upper().replace("-", "_"),
                           help=_help(name))


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="magnn", description="Multi-scale adaptive graph forecaster.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log per-epoch progress")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    sub.required = True
    data_flags = ("data", "delimiter", "header")
    model_flags = MODEL_KEYS
    train_flags = ("lr", "batch", "epochs", "patience")

    p = sub.add_parser("train", help="train one model and score the test split")
    _add(p, *data_flags, *model_flags, *train_flags, "out")
    p.add_argument("--config", metavar="FILE", help="key=value settings file (flags override it)")

    p = sub.add_parser("evaluate", help="score a checkpoint on the test split")
    _add(p, *data_flags, *model_flags, "out")
    p.add_argument("--config", metavar="FILE", help="key=value settings file (flags override it)")
    p.add_argument("--checkpoint", metavar="PATH", help="checkpoint to load (default: OUT/checkpoint.npz)")
    p.add_argument("--export-graph", metavar="DIR", help="write each learned adjacency as CSV")
    p.add_argument("--dump-alpha", metavar="FILE", help="write mean fusion weight per scale as CSV")
    p.add_argument("--predictions", metavar="FILE", help="write timestep,variable,truth,prediction CSV")

    p = sub.add_parser("ablate", help="train several variants under one config and tabulate them")
    _add(p, *data_flags, *model_flags, *train_flags, "out")
    p.add_argument("--config", metavar="FILE", help="key=value settings file (flags override it)")
    p.add_argument("--variants", metavar="LIST", default=argparse.SUPPRESS,
                   help="comma-separated variants from: " + ", ".join(sorted(ABLATIONS)))
    p.add_argument("--seeds", metavar="LIST", default=argparse.SUPPRESS,
                   help="comma-separated seeds; the table reports medians (default: --seed)")
    p.add_argument("--parallel", action="store_true", help="run variants on separate threads")

    p = sub.add_parser("synth", help="write the coupled multi-period synthetic dataset")
    p.add_argument("--vars", type=int, default=8, help="number of variables (default: 8)")
    p.add_argument("--rows", type=int, default=5000, help="number of timesteps (default: 5000)")
    p.add_argument("--periods", default="24,168", help="comma-separated periods (default: 24,168)")
    p.add_argument("--noise", type=float, default=0.1, help="Gaussian noise sd (default: 0.1)")
    p.add_argument("--coupling", type=float, default=0.3, help="off-diagonal mixing strength (default: 0.3)")
    p.add_argument("--seed", type=int, default=0, help="generator seed (default: 0)")
    p.add_argument("--out", default="runs", help="output directory (default: runs)")

    p = sub.add_parser("export-graph", help="write the learned adjacencies of a checkpoint as CSV")
    p.add_argument("--checkpoint", required=True, metavar="PATH", help="checkpoint to load")
    p.add_argument("--out", default="runs", help="output directory (default: runs)")
    return parser


def read_config_file(path) -> dict:
    """Parse ``key=value`` lines; ``#`` starts a comment, keys use flag spelling."""
    out = {}
    for n, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{n}: expected key=value, got {raw.strip()!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.lstrip("-").replace("_", "-")
        if key not in SETTINGS:
            raise UsageError(f"{path}:{n}: unknown setting {key!r}")
        out[key] = value
    return out


def _convert(name, value):
    typ = SETTINGS[name][0]
    if typ is bool:
        if isinstance(value, bool):
            return value
        if str(value).lower() in ("1", "true", "yes", "on"):
            return True
        if str(value).lower() in ("0", "false", "no", "off"):
            return False
        raise UsageError(f"--{name}: expected a boolean, got {value!r}")
    try:
        return typ(value)
    except (TypeError, ValueError):
        raise UsageError(f"--{name}: expected {typ.__name__}, got {value!r}") from None


def resolve_settings(args, allowed) -> dict:
    """Merge defaults, the config file and explicit flags for the ``allowed`` names."""
    merged = {name: SETTINGS[name][1] for name in allowed}
    explicit = set()
    if getattr(args, "config", None):
        try:
            from_file = read_config_file(args.config)
        except OSError as e:
            raise UsageError(f"--config: cannot read {args.config} ({e.strerror})") from None
        for k, v in from_file.items():
            if k in merged:
                merged[k] = _convert(k, v)
                explicit.add(k)
    for name in allowed:
        attr = name.replace("-", "_")
        if hasattr(args, attr):
            merged[name] = _convert(name, getattr(args, attr))
            explicit.add(name)
    _validate(merged)
    merged["_explicit"] = sorted(explicit)
    return merged


def _validate(s):
    positive = ("horizon", "window", "scales", "channels", "embed-dim", "gnn-depth", "batch", "tau", "ds", "d1")
    for name in positive:
        if name in s and s[name] is not None and s[name] < 1:
            raise UsageError(f"--{name} must be >= 1, got {s[name]}")
    for name in ("epochs",):
        if name in s and s[name] < 0:
            raise UsageError(f"--{name} must be >= 0, got {s[name]}")
    if "patience" in s and s["patience"] < 1:
        raise UsageError(f"--patience must be >= 1, got {s['patience']}")
    if "dropout" in s and not 0.0 <= s["dropout"] < 1.0:
        raise UsageError(f"--dropout must lie in [0, 1), got {s['dropout']}")
    if "lr" in s and not s["lr"] >= 0.0:
        raise UsageError(f"--lr must be >= 0, got {s['lr']}")
    if "variant" in s and s["variant"] not in ABLATIONS:
        raise UsageError(f"--variant: unknown {s['variant']!r}; valid: {', '.join(sorted(ABLATIONS))}")
    if "delimiter" in s and len(s["delimiter"]) != 1:
        raise UsageError("--delimiter must be a single character")


def model_config(s, n_vars) -> ModelConfig:
    cfg = ModelConfig(N=n_vars, T=s["window"], K=s["scales"], channels=s["channels"], embed_dim=s["embed-dim"],
                      tau=s["tau"], gnn_depth=s["gnn-depth"], d_s=s["ds"], d_1=s["d1"], horizon=s["horizon"],
                      dropout=s["dropout"], seed=s["seed"])
    return cfg.with_variant(s["variant"])


def train_config(s) -> TrainConfig:
    return TrainConfig(lr=s["lr"], batch_size=s["batch"], max_epochs=s["epochs"],
                       patience=min(s["patience"], max(s["epochs"], 1)), seed=s["seed"])


def _stage(name, fn, *args, **kw):
    try:
        return fn(*args, **kw)
    except (MagnnError, OSError, ValueError) as e:
        raise StageError(name, e) from e


def _load_data(s):
    if not s.get("data"):
        raise UsageError("--data is required")
    return _stage("load", load_csv, s["data"], delimiter=s["delimiter"], header=s["header"])


def _write_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _version():
    from . import __version__
    return __version__


def write_manifest(out_dir, command, settings, artifacts, t0, dataset=None, extra=None):
    out_dir = Path(out_dir)
    paths = {k: str(v) for k, v in artifacts.items()}
    missing = [p for p in paths.values() if not Path(p).exists()]
    if missing:
        raise StageError("write", f"declared artifact missing: {missing[0]}")
    manifest = {
        "schema": MANIFEST_SCHEMA,
        "command": command,
        "argv": sys.argv[1:],
        "settings": {k: v for k, v in settings.items() if not k.startswith("_")},
        "explicit_settings": settings.get("_explicit", []),
        "seed": settings.get("seed"),
        "dataset": None if dataset is None else {"path": settings.get("data"), "sha256": dataset.digest(),
                                                 "rows": dataset.t_total, "variables": dataset.n_vars},
        "artifacts": paths,
        "wall_time": time.perf_counter() - t0,
        "created": _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"),
        "code_version": _version(),
    }
    if extra:
        manifest.update(extra)
    path = out_dir / "manifest.json"
    _write_json(path, manifest)
    return path


def _metrics_doc(command, cfg, tcfg, report=None, test=None):
    doc = {
        "schema": METRICS_SCHEMA,
        "command": command,
        "metric_space": "original units (inverse-scaled)",
        "model_config": cfg.to_dict(),
        "artifact_choices": {"batch_size": "not given by the method description", "epochs": "not given either"},
    }
    if tcfg is not None:
        doc["train_config"] = tcfg.to_dict()
    if report is not None:
        doc["report"] = report.to_dict()
        test = report.test
    doc["test"] = None if test is None else test.to_dict()
    return doc


def cmd_train(args) -> int:
    t0 = time.perf_counter()
    s = resolve_settings(args, ("data", "delimiter", "header", *MODEL_KEYS, *TRAIN_KEYS, "out"))
    ds = _load_data(s)
    cfg = _stage("config", lambda: model_config(s, ds.n_vars).resolve())
    tcfg = _stage("config", train_config, s)
    out = Path(s["out"])
    out.mkdir(parents=True, exist_ok=True)
    model = MAGNN(cfg)
    report = _stage("train", fit, model, ds, tcfg)
    ckpt, metrics = out / "checkpoint.npz", out / "metrics.json"
    _stage("write", save_checkpoint, model.state, cfg, ckpt,
           {"best_epoch": report.best_epoch, "param_sha256": model.digest()})
    _stage("write", _write_json, metrics, _metrics_doc("train", cfg, tcfg, report))
    write_manifest(out, "train", s, {"checkpoint": ckpt, "metrics": metrics}, t0, ds,
                   {"model_config": cfg.to_dict(), "train_config": tcfg.to_dict(), "param_sha256": model.digest()})
    print(f"RSE={report.test.rse:.6f} CORR={report.test.corr:.6f}")
    return 0


def _expected_config(s, stored: ModelConfig) -> ModelConfig:
    """The stored config with any explicitly requested model settings applied."""
    explicit = set(s["_explicit"])
    mapping = {"horizon": "horizon", "window": "T", "scales": "K", "channels": "channels",
               "embed-dim": "embed_dim", "tau": "tau", "gnn-depth": "gnn_depth", "ds": "d_s", "d1": "d_1",
               "dropout": "dropout", "seed": "seed"}
    changes = {mapping[k]: s[k] for k in explicit if k in mapping}
    cfg = dataclasses.replace(stored, **changes)
    if "variant" in explicit:
        cfg = cfg.with_variant(s["variant"])
    return cfg


def cmd_evaluate(args) -> int:
    t0 = time.perf_counter()
    s = resolve_settings(args, ("data", "delimiter", "header", *MODEL_KEYS, "out"))
    out = Path(s["out"])
    ckpt = Path(args.checkpoint) if args.checkpoint else out / "checkpoint.npz"
    _, stored = _stage("load", load_checkpoint, ckpt)
    state, cfg = _stage("load", load_checkpoint, ckpt, _expected_config(s, stored))
    ds = _load_data(s)
    if ds.n_vars != cfg.N:
        raise StageError("load", f"dataset has {ds.n_vars} variables, checkpoint expects {cfg.N}")
    model = MAGNN(cfg, state)
    out.mkdir(parents=True, exist_ok=True)
    pred = _stage("evaluate", predict_split, model, ds, "test", with_alpha=bool(args.dump_alpha))
    from .metrics import evaluate
    test = _stage("evaluate", evaluate, pred.pred, pred.truth)
    artifacts = {}
    metrics = out / "eval_metrics.json"
    _stage("write", _write_json, metrics, _metrics_doc("evaluate", cfg, None, test=test))
    artifacts["metrics"] = metrics
    if args.export_graph:
        for i, path in enumerate(_stage("export", export_graphs, model, args.export_graph)):
            artifacts[f"graph_{i + 1}"] = path
    if args.dump_alpha:
        if pred.alpha is None:
            raise StageError("export", f"--dump-alpha needs gated fusion, model uses {cfg.fusion!r}")
        path = Path(args.dump_alpha)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["scale", "weight"])
            for k, a in enumerate(pred.alpha.mean(axis=0), start=1):
                w.writerow([k, repr(float(a))])
        artifacts["alpha"] = path
    if args.predictions:
        path = Path(args.predictions)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["timestep", "variable", "truth", "prediction"])
            for row, t_row, p_row in zip(pred.target_rows, pred.truth, pred.pred):
                for j in range(cfg.N):
                    w.writerow([int(row), ds.variable_names[j], repr(float(t_row[j])), repr(float(p_row[j]))])
        artifacts["predictions"] = path
    write_manifest(out, "evaluate", s, {"checkpoint": ckpt, **artifacts}, t0, ds, {"model_config": cfg.to_dict()})
    print(f"RSE={test.rse:.6f} CORR={test.corr:.6f}")
    return 0


def export_graphs(model: MAGNN, out_dir) -> list:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for g in model.graphs():
        path = out_dir / f"graph_scale{g.scale_index}.csv"
        g.to_csv(path)
        paths.append(path)
    return paths


def cmd_export_graph(args) -> int:
    t0 = time.perf_counter()
    state, cfg = _stage("load", load_checkpoint, args.checkpoint)
    out = Path(args.out)
    paths = _stage("export", export_graphs, MAGNN(cfg, state), out)
    write_manifest(out, "export-graph", {"checkpoint": args.checkpoint, "out": str(out)},
                   {f"graph_{i + 1}": p for i, p in enumerate(paths)}, t0, extra={"model_config": cfg.to_dict()})
    for p in paths:
        print(p)
    return 0


def cmd_synth(args) -> int:
    t0 = time.perf_counter()
    try:
        periods = tuple(int(p) for p in args.periods.split(",") if p.strip())
    except ValueError:
        raise UsageError(f"--periods: expected comma-separated integers, got {args.periods!r}") from None
    if not periods or min(periods) < 2:
        raise UsageError("--periods needs at least one period >= 2")
    if args.vars < 1 or args.rows < 1:
        raise UsageError("--vars and --rows must be >= 1")
    if args.noise < 0:
        raise UsageError("--noise must be >= 0")
    ds = _stage("synth", synth_multiscale, args.vars, args.rows, periods,
                default_coupling(args.vars, args.seed, args.coupling), args.noise, args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "synth.csv"
    _stage("write", write_csv, ds.values, path)
    settings = {"vars": args.vars, "rows": args.rows, "periods": list(periods), "noise": args.noise,
                "coupling": args.coupling, "seed": args.seed, "out": str(out), "data": str(path)}
    write_manifest(out, "synth", settings, {"data": path}, t0, ds)
    print(path)
    return 0


def _parse_list(text, flag, cast=str):
    items = [t.strip() for t in str(text).split(",") if t.strip()]
    if not items:
        raise UsageError(f"{flag} must list at least one entry")
    try:
        return [cast(t) for t in items]
    except ValueError:
        raise UsageError(f"{flag}: cannot parse {text!r}") from None


def _run_variant(name, seed, s, ds):
    cfg = model_config({**s, "seed": seed, "variant": "standard"}, ds.n_vars).with_variant(name).resolve()
    tcfg = train_config({**s, "seed": seed})
    report = fit(MAGNN(cfg), ds, tcfg)
    return {"variant": name, "seed": seed, "val_rse": report.best_val.rse if report.best_val else float("nan"),
            "val_corr": report.best_val.corr if report.best_val else float("nan"),
            "test_rse": report.test.rse, "test_corr": report.test.corr, "epochs": report.epochs_run}


def ablation_table(runs) -> list:
    """One row per variant with medians over seeds, sorted by variant name."""
    rows = []
    for name in sorted({r["variant"] for r in runs}):
        mine = [r for r in runs if r["variant"] == name]
        row = {"variant": name, "seeds": ";".join(str(r["seed"]) for r in sorted(mine, key=lambda r: r["seed"]))}
        for key in ("val_rse", "val_corr", "test_rse", "test_corr"):
            row[key] = statistics.median(r[key] for r in mine)
        row["epochs"] = statistics.median(r["epochs"] for r in mine)
        rows.append(row)
    return rows


def format_table(rows) -> str:
    cols = ["variant", "seeds", "val_rse", "val_corr", "test_rse", "test_corr", "epochs"]
    cells = [[str(r[c]) if not isinstance(r[c], float) else f"{r[c]:.6f}" for c in cols] for r in rows]
    widths = [max(len(c), *(len(row[i]) for row in cells)) for i, c in enumerate(cols)]
    lines = ["  ".join(c.ljust(w) for c, w in zip(cols, widths))]
    lines.append("  ".join("-" * w for w in widths))
    lines += ["  ".join(v.ljust(w) for v, w in zip(row, widths)) for row in cells]
    return "\n".join(lines)


def cmd_ablate(args) -> int:
    t0 = time.perf_counter()
    if not hasattr(args, "variants"):
        raise UsageError("--variants is required")
    variants = _parse_list(args.variants, "--variants")
    unknown = [v for v in variants if v not in ABLATIONS]
    if unknown:
        raise UsageError(f"--variants: unknown {unknown[0]!r}; valid: {', '.join(sorted(ABLATIONS))}")
    s = resolve_settings(args, ("data", "delimiter", "header", *MODEL_KEYS, *TRAIN_KEYS, "out"))
    seeds = _parse_list(args.seeds, "--seeds", int) if hasattr(args, "seeds") else [s["seed"]]
    ds = _load_data(s)
    jobs = [(v, seed) for v in dict.fromkeys(variants) for seed in dict.fromkeys(seeds)]
    for v, _ in jobs:
        _stage("config", lambda: model_config({**s, "variant": "standard"}, ds.n_vars).with_variant(v).resolve())
    runs = [None] * len(jobs)
    if args.parallel:
        errors = []

        def work(i, v, seed):
            try:
                runs[i] = _run_variant(v, seed, s, ds)
            except Exception as e:  # re-raised on the main thread
                errors.append(e)
        threads = [threading.Thread(target=work, args=(i, v, seed)) for i, (v, seed) in enumerate(jobs)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        if errors:
            raise StageError("train", errors[0])
    else:
        for i, (v, seed) in enumerate(jobs):
            runs[i] = _stage("train", _run_variant, v, seed, s, ds)
    rows = ablation_table(runs)
    out = Path(s["out"])
    out.mkdir(parents=True, exist_ok=True)
    table, raw = out / "ablation.csv", out / "ablation_runs.json"
    with table.open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        w.writerows(rows)
    _write_json(raw, {"schema": METRICS_SCHEMA, "command": "ablate", "runs": runs})
    write_manifest(out, "ablate", {**s, "variants": variants, "seeds": seeds}, {"table": table, "runs": raw}, t0, ds)
    print(format_table(rows))
    return 0


COMMANDS = {"train": cmd_train, "evaluate": cmd_evaluate, "ablate": cmd_ablate, "synth": cmd_synth,
            "export-graph": cmd_export_graph}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        return COMMANDS[args.command](args)
    except UsageError as e:
        parser.print_usage(sys.stderr)
        print(f"magnn: error: {e}", file=sys.stderr)
        return 2
    except StageError as e:
        print(f"magnn: error in stage {e}", file=sys.stderr)
        return 1
    except MagnnError as e:
        print(f"magnn: error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

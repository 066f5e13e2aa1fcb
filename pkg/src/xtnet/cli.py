"""Command-line driver: generate | train | evaluate | theorems | sweep.

Every command reads one JSON config (``--config``), materialises all
defaults into ``manifest.json`` next to its outputs and records sha256
hashes of inputs and outputs.  A manifest is itself a valid ``--config``:
its resolved config is reused, which replays the run.

Exit codes: 0 ok, 1 usage or config error, 2 numerical failure,
3 acceptance threshold missed.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .baselines import BASELINE_KINDS, BaselineConfig, build_baseline
from .datagen import ConfigError, SynthConfig, all_combos, gen_synthetic, load_dataset, write_dataset
from .metrics.allocation import POLICIES
from .metrics.evaluate import evaluate_tables, write_curves, write_summary_csv
from .metrics.theorems import InfeasibleConfigError, TheoremConfig, theorem_harness
from .model import ModelError, XTNet, XTNetConfig, estimate_dominance, load_checkpoint, save_checkpoint
from .trainer import NumericalError, TrainConfig, train

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_THRESHOLD = 0, 1, 2, 3
MODEL_KINDS = ("xtnet",) + BASELINE_KINDS
REFERENCE_PREDICTORS = ("oracle", "random")


class UsageError(Exception):
    pass


class ThresholdError(Exception):
    pass


# ---------------------------------------------------------------- helpers


def sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def dump_json(obj, path):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True, default=_jsonable) + "\n")


def _jsonable(v):
    if isinstance(v, np.generic):
        return v.item()
    if isinstance(v, np.ndarray):
        return v.tolist()
    if isinstance(v, tuple):
        return list(v)
    raise TypeError(f"not JSON serialisable: {type(v).__name__}")


def read_config(path):
    """Load a JSON config; a run manifest yields its resolved config."""
    if path is None:
        return {}
    try:
        data = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise UsageError(f"config file not found: {path}") from None
    except json.JSONDecodeError as e:
        raise UsageError(f"config {path} is not valid JSON: {e}") from None
    if not isinstance(data, dict):
        raise UsageError(f"config {path} must hold a JSON object")
    if "tool_version" in data and "config" in data and "command" in data:
        return data["config"]
    return data


def write_manifest(out_dir, command, config, seed, inputs, outputs, started):
    manifest = {
        "command": command,
        "config": config,
        "seed": seed,
        "inputs": {str(p): sha256(p) for p in inputs},
        "outputs": {str(Path(p).name): sha256(p) for p in outputs},
        "tool_version": __version__,
        "wall_clock": {"started": started, "seconds": round(time.time() - started, 3)},
    }
    dump_json(manifest, Path(out_dir) / "manifest.json")
    return manifest


def _known(cfg, allowed, what):
    unknown = set(cfg) - set(allowed)
    if unknown:
        raise UsageError(f"unknown {what} keys: {sorted(unknown)}")


def _say(args, msg):
    if not args.quiet:
        print(msg)


def _out_dir(args, default):
    out = Path(args.out_dir or default)
    out.mkdir(parents=True, exist_ok=True)
    return out


# ---------------------------------------------------------------- model plumbing


def build_model(kind, overrides, dataset, seed):
    """Instantiate ``kind`` with shapes taken from ``dataset``."""
    shape = {"input_dim": dataset.features.shape[1], "levels": list(dataset.levels), "s": dataset.s, "seed": seed}
    if kind == "xtnet":
        cfg = XTNetConfig.from_dict({**overrides, **shape})
        dominance = None if cfg.dominant is not None or not cfg.use_basicnet else estimate_dominance(dataset)
        return XTNet(cfg, dominance)
    if kind in BASELINE_KINDS:
        return build_baseline(BaselineConfig.from_dict({**overrides, **shape, "kind": kind}))
    raise UsageError(f"--model must be one of {MODEL_KINDS}, got {kind!r}")


def true_cate_table(oracle, X):
    table = oracle.outcome_table(X)
    return table - table[:, :1]


def predictor_table(name, X, oracle, levels, seed=0):
    """CATE table of a reference predictor: the oracle itself or random scores."""
    true = true_cate_table(oracle, X)
    if name == "oracle":
        return true
    if name == "random":
        rnd = np.random.default_rng(seed).uniform(-1.0, 1.0, size=true.shape)
        rnd[:, 0] = 0.0
        return rnd
    raise UsageError(f"unknown reference predictor {name!r}")


def check_compatible(model, dataset):
    cfg = model.cfg
    if list(cfg.levels) != list(dataset.levels) or cfg.s != dataset.s or cfg.input_dim != dataset.features.shape[1]:
        raise UsageError(
            f"checkpoint (levels={list(cfg.levels)}, s={cfg.s}, input_dim={cfg.input_dim}) does not match "
            f"dataset (levels={list(dataset.levels)}, s={dataset.s}, input_dim={dataset.features.shape[1]})")


# ---------------------------------------------------------------- commands


def cmd_generate(args):
    started = time.time()
    cfg = read_config(args.config)
    if args.seed is not None:
        cfg["seed"] = args.seed
    synth = SynthConfig.from_dict(cfg)
    out = _out_dir(args, "data")
    train_ds, test_ds, oracle = gen_synthetic(synth)
    paths = write_dataset(out, synth, train_ds, test_ds, oracle)
    inputs = [args.config] if args.config else []
    write_manifest(out, "generate", synth.to_dict(), synth.seed, inputs, list(paths.values()), started)
    _say(args, f"wrote {train_ds.n} train and {test_ds.n} test rows to {out}")
    return EXIT_OK


TRAIN_KEYS = ("data", "model", "model_config", "train")


def resolve_train_config(cfg, args):
    _known(cfg, TRAIN_KEYS, "train config")
    if "data" not in cfg:
        raise UsageError("train config needs 'data' (a directory written by generate)")
    kind = args.model or cfg.get("model", "xtnet")
    tcfg = TrainConfig.from_dict(cfg.get("train", {}))
    if args.seed is not None:
        tcfg.seed = args.seed
    return {"data": str(cfg["data"]), "model": kind, "model_config": dict(cfg.get("model_config", {})),
            "train": tcfg.to_dict()}


def cmd_train(args):
    started = time.time()
    resolved = resolve_train_config(read_config(args.config), args)
    data = Path(resolved["data"])
    if not (data / "train.csv").exists():
        raise UsageError(f"no train.csv under {data}; run generate first")
    train_ds, _, _ = load_dataset(data)
    tcfg = TrainConfig.from_dict(resolved["train"])
    model = build_model(resolved["model"], resolved["model_config"], train_ds, tcfg.seed)
    resolved["model_config"] = model.cfg.to_dict()
    out = _out_dir(args, "run")
    result = train(model, train_ds, tcfg, log=None if args.quiet else print)
    ckpt = save_checkpoint(model, out / "model", extra={"train_config": resolved["train"]})
    trace = out / "trace.csv"
    result.write_csv(trace)
    inputs = [data / "train.csv", data / "dataset.json"] + ([args.config] if args.config else [])
    write_manifest(out, "train", resolved, tcfg.seed, inputs, list(ckpt) + [trace], started)
    return EXIT_OK


EVAL_KEYS = ("data", "checkpoint", "predictor", "split", "policies", "grid_points", "realize", "shuffles", "seed")


def resolve_eval_config(cfg, args):
    _known(cfg, EVAL_KEYS, "evaluate config")
    if "data" not in cfg:
        raise UsageError("evaluate config needs 'data'")
    resolved = {
        "data": str(cfg["data"]),
        "checkpoint": cfg.get("checkpoint"),
        "predictor": cfg.get("predictor"),
        "split": cfg.get("split", "test"),
        "policies": list(args.policy or cfg.get("policies", POLICIES)),
        "grid_points": int(cfg.get("grid_points", 101)),
        "realize": cfg.get("realize", "best"),
        "shuffles": int(cfg.get("shuffles", 32)),
        "seed": int(args.seed if args.seed is not None else cfg.get("seed", 0)),
    }
    if args.model in REFERENCE_PREDICTORS:
        resolved["predictor"], resolved["checkpoint"] = args.model, None
    if (resolved["checkpoint"] is None) == (resolved["predictor"] is None):
        raise UsageError("evaluate needs exactly one of 'checkpoint' or 'predictor' (oracle | random)")
    if resolved["split"] not in ("train", "test"):
        raise UsageError("split must be 'train' or 'test'")
    bad = set(resolved["policies"]) - set(POLICIES)
    if bad:
        raise UsageError(f"unknown --policy {sorted(bad)}; choose from {POLICIES}")
    return resolved


def cmd_evaluate(args):
    started = time.time()
    r = resolve_eval_config(read_config(args.config), args)
    data = Path(r["data"])
    train_ds, test_ds, oracle = load_dataset(data)
    ds = test_ds if r["split"] == "test" else train_ds
    combos = all_combos(ds.levels)
    inputs = [data / f"{r['split']}.csv", data / "dataset.json"]
    if r["checkpoint"]:
        model, _ = load_checkpoint(r["checkpoint"])
        check_compatible(model, ds)
        pred = model.cate_table(ds.features, combos)
        prefix = Path(r["checkpoint"]).with_suffix("")
        inputs += [prefix.with_suffix(".npz"), prefix.with_suffix(".json")]
        label = model.kind
    else:
        pred = predictor_table(r["predictor"], ds.features, oracle, ds.levels, r["seed"])
        label = r["predictor"]
    true = true_cate_table(oracle, ds.features)
    if not np.all(np.isfinite(pred)):
        raise NumericalError(-1, -1, {"prediction": float("nan")})
    report, curves = evaluate_tables(pred, true, ds.levels, r["policies"], r["grid_points"],
                                     r["realize"], shuffles=r["shuffles"], seed=r["seed"])
    report["model"] = label
    out = _out_dir(args, "eval")
    dump_json(report, out / "report.json")
    write_summary_csv(report, out / "summary.csv")
    outputs = [out / "report.json", out / "summary.csv"] + write_curves(curves, out)
    write_manifest(out, "evaluate", r, r["seed"], inputs, outputs, started)
    for e in report["outcomes"]:
        areas = ", ".join(f"{k}={v:.4f}" for k, v in e["curve_area"].items())
        _say(args, f"outcome {e['outcome']}: ranking error {e['ranking_error']['mean']:.4f} "
                   f"+/- {e['ranking_error']['std']:.4f}; {areas}")
    return EXIT_OK


def cmd_theorems(args):
    started = time.time()
    cfg = read_config(args.config)
    if args.seed is not None:
        cfg["seed"] = args.seed
    tcfg = TheoremConfig.from_dict(cfg)
    report = theorem_harness(tcfg)
    out = _out_dir(args, "theorems")
    dump_json(report, out / "report.json")
    inputs = [args.config] if args.config else []
    write_manifest(out, "theorems", tcfg.to_dict(), tcfg.seed, inputs, [out / "report.json"], started)
    rates = report["rates"]
    _say(args, f"evaluated {report['evaluated']} (skipped {len(report['skipped'])}); chain {rates['chain']:.3f}, "
               f"mcmv<mv {rates['mcmv_lt_mv']:.3f}, roi ordering {rates['roi_ordering']:.3f}, "
               f"exchange violations {report['exchange_violations']}")
    if not report["passed"]:
        raise ThresholdError("theorem harness thresholds not met")
    return EXIT_OK


SWEEP_KEYS = ("data", "seeds", "models", "model_configs", "train", "policies", "grid_points", "realize",
              "shuffles", "workers", "require")


def resolve_sweep_config(cfg, args):
    _known(cfg, SWEEP_KEYS, "sweep config")
    data = SynthConfig.from_dict(cfg.get("data", {})).to_dict()
    data.pop("seed")
    seeds = [args.seed] if args.seed is not None else [int(s) for s in cfg.get("seeds", range(5))]
    models = list(args.model_list or cfg.get("models", ["xtnet", "multi_head"]))
    bad = set(models) - set(MODEL_KINDS)
    if bad:
        raise UsageError(f"unknown models {sorted(bad)}; choose from {MODEL_KINDS}")
    policies = list(args.policy or cfg.get("policies", ["mcmv_aucc"]))
    if set(policies) - set(POLICIES):
        raise UsageError(f"unknown policies {sorted(set(policies) - set(POLICIES))}")
    resolved = {
        "data": data, "seeds": seeds, "models": models,
        "model_configs": dict(cfg.get("model_configs", {})),
        "train": TrainConfig.from_dict(cfg.get("train", {})).to_dict(),
        "policies": policies, "grid_points": int(cfg.get("grid_points", 101)),
        "realize": cfg.get("realize", "best"), "shuffles": int(cfg.get("shuffles", 32)),
        "workers": int(cfg.get("workers", 1)), "require": cfg.get("require"),
    }
    return resolved


def run_seed(seed, r, log=None):
    """Generate, train every model, and score models plus oracle and random."""
    synth = SynthConfig.from_dict({**r["data"], "seed": seed})
    train_ds, test_ds, oracle = gen_synthetic(synth)
    combos = all_combos(train_ds.levels)
    true = true_cate_table(oracle, test_ds.features)
    tables = {}
    for kind in r["models"]:
        tcfg = TrainConfig.from_dict({**r["train"], "seed": seed})
        model = build_model(kind, r["model_configs"].get(kind, {}), train_ds, seed)
        train(model, train_ds, tcfg)
        tables[kind] = model.cate_table(test_ds.features, combos)
        if log:
            log(f"seed {seed}: trained {kind}")
    for name in REFERENCE_PREDICTORS:
        tables[name] = predictor_table(name, test_ds.features, oracle, train_ds.levels, seed)
    scores = {}
    for name, pred in tables.items():
        rep, _ = evaluate_tables(pred, true, train_ds.levels, r["policies"], r["grid_points"], r["realize"],
                                 shuffles=r["shuffles"], seed=seed)
        scores[name] = rep["outcomes"]
    return {"seed": seed, "scores": scores}


def summarise_sweep(rows, policies):
    """Per-policy win counts of every model pair plus mean scores."""
    names = list(rows[0]["scores"])
    summary = {"mean_ranking_error": {}, "mean_curve_area": {}, "wins": {}}
    for n in names:
        summary["mean_ranking_error"][n] = float(np.mean(
            [e["ranking_error"]["mean"] for row in rows for e in row["scores"][n]]))
        summary["mean_curve_area"][n] = {p: float(np.mean(
            [e["curve_area"][p] for row in rows for e in row["scores"][n]])) for p in policies}
    for p in policies:
        for a in names:
            for b in names:
                if a != b:
                    summary["wins"][f"{p}:{a}>{b}"] = int(sum(
                        all(ea["curve_area"][p] > eb["curve_area"][p]
                            for ea, eb in zip(row["scores"][a], row["scores"][b])) for row in rows))
    return summary


def check_requirements(summary, require):
    """``require`` maps "policy:a>b" to a minimum win count."""
    failed = {}
    for key, need in (require or {}).items():
        if key not in summary["wins"]:
            raise UsageError(f"require names an unknown comparison {key!r}")
        if summary["wins"][key] < need:
            failed[key] = {"wins": summary["wins"][key], "needed": need}
    return failed


def cmd_sweep(args):
    started = time.time()
    r = resolve_sweep_config(read_config(args.config), args)
    log = None if args.quiet else print
    with ThreadPoolExecutor(max_workers=max(1, r["workers"])) as pool:
        rows = list(pool.map(lambda s: run_seed(s, r, log), r["seeds"]))
    summary = summarise_sweep(rows, r["policies"])
    failed = check_requirements(summary, r["require"])
    report = {"config": r, "runs": rows, "summary": summary, "failed_requirements": failed}
    out = _out_dir(args, "sweep")
    dump_json(report, out / "sweep.json")
    inputs = [args.config] if args.config else []
    write_manifest(out, "sweep", r, r["seeds"], inputs, [out / "sweep.json"], started)
    shown = r["models"] + ["oracle"]
    for key, wins in summary["wins"].items():
        a = key.split(":")[1].split(">")[0]
        if a in shown:
            _say(args, f"{key}: {wins}/{len(rows)}")
    if failed:
        raise ThresholdError(f"sweep requirements missed: {failed}")
    return EXIT_OK


# ---------------------------------------------------------------- entry point


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def build_parser():
    p = _Parser(prog="xtnet", description="Multi-category treatment-effect workbench.")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", parser_class=_Parser)
    helps = {
        "generate": "write a synthetic dataset (train.csv, test.csv, dataset.json)",
        "train": "train xtnet or a baseline on a generated dataset",
        "evaluate": "score a checkpoint or reference predictor against the oracle",
        "theorems": "run the metric-dominance harness",
        "sweep": "generate, train and evaluate across seeds",
    }
    for name, text in helps.items():
        s = sub.add_parser(name, help=text)
        s.add_argument("--config", help="JSON config or a previous run manifest")
        s.add_argument("--seed", type=int)
        s.add_argument("--out-dir")
        s.add_argument("--quiet", action="store_true")
        if name in ("evaluate", "sweep"):
            s.add_argument("--policy", action="append", choices=POLICIES)
        if name in ("train", "evaluate"):
            s.add_argument("--model", choices=MODEL_KINDS + (REFERENCE_PREDICTORS if name == "evaluate" else ()))
        if name == "sweep":
            s.add_argument("--model", dest="model_list", action="append", choices=MODEL_KINDS)
    return p


COMMANDS = {"generate": cmd_generate, "train": cmd_train, "evaluate": cmd_evaluate,
            "theorems": cmd_theorems, "sweep": cmd_sweep}


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            parser.print_help(sys.stderr)
            return EXIT_CONFIG
        return COMMANDS[args.command](args)
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (ConfigError, ModelError, InfeasibleConfigError, TypeError, ValueError, KeyError,
            FileNotFoundError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except FloatingPointError as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except ThresholdError as e:
        print(f"threshold: {e}", file=sys.stderr)
        return EXIT_THRESHOLD


if __name__ == "__main__":
    sys.exit(main())

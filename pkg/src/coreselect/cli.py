"""Command-line pipeline: synth, adapt, score, select, pipeline, inspect.

Exit codes: 0 success, 1 pipeline failure, 2 invalid input or config.
Every subcommand is deterministic under a fixed seed; outputs are plain
JSON/CSV/binary files so reruns can be diffed byte for byte (timing fields
excepted, since wall-clock is recorded in logs and reports).
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time

from . import adapter, scoring, selector, store, synth
from .errors import (
    ConfigInvalid,
    CoreselectError,
    DimensionMismatch,
    LabelOutOfRange,
    LengthMismatch,
    MagicMismatch,
    NonFiniteValue,
    RatioOutOfRange,
    SpecInvalid,
    TrailingBytes,
    TruncatedFile,
    VersionUnsupported,
    ZeroNormRow,
)

INPUT_ERRORS = (
    ConfigInvalid,
    SpecInvalid,
    RatioOutOfRange,
    MagicMismatch,
    VersionUnsupported,
    TruncatedFile,
    TrailingBytes,
    LabelOutOfRange,
    NonFiniteValue,
    ZeroNormRow,
    DimensionMismatch,
    LengthMismatch,
)

DEFAULTS = {
    "ratio": None,
    "alpha": None,  # falls back to ratio
    "beta": 2.0,
    "theta": 5e-4,
    "k_fraction": 0.10,
    "epochs": 25,
    "batch_size": 256,
    "adapt_lr": 1e-3,
    "temperature": 0.07,
    "blend": 0.2,
    "select_lr": 0.05,
    "max_iters": 2000,
    "seed": 0,
    "normalize_diversity": False,
}


def _log(msg: str) -> None:
    print(msg, file=sys.stderr)


def _write_json(doc: dict, path) -> None:
    with open(path, "w") as f:
        json.dump(doc, f, sort_keys=True, indent=2)
        f.write("\n")


def _write_train_log(log: list[adapter.EpochStats], path) -> None:
    with open(path, "w") as f:
        for row in log:
            f.write(
                json.dumps(
                    {"epoch": row.epoch, "mean_loss": row.mean_loss, "wall_ms": row.wall_ms}
                )
                + "\n"
            )


def cmd_synth(args) -> int:
    if args.spec:
        spec = synth.SynthSpec.from_json(args.spec)
    else:
        spec = synth.SynthSpec(
            n_classes=args.classes,
            per_class=args.per_class,
            dim=args.dim,
            intra_spread=args.intra_spread,
            inter_separation=args.separation,
            label_noise_rate=args.label_noise,
            corruption_rate=args.corruption_rate,
            corruption_sigma=args.corruption_sigma,
            seed=args.seed,
        )
        spec.validate()
    table, bank, truth = synth.generate(spec)
    store.save_store(table, bank, args.out)
    truth_path = args.truth or (os.path.splitext(str(args.out))[0] + ".truth.csv")
    synth.save_truth(truth, table, truth_path)
    _log(f"wrote {args.out} (n={table.n}, k={bank.k}, dim={table.dim}) and {truth_path}")
    return 0


def cmd_adapt(args) -> int:
    cfg = adapter.AdaptConfig(
        epochs=args.epochs,
        batch_size=args.batch_size,
        learning_rate=args.lr,
        temperature=args.temperature,
        seed=args.seed,
        blend=args.blend,
    )
    cfg.validate()
    table, bank = store.load_store(args.store)
    params_i, params_t, log = adapter.fit_adapters(table, bank, cfg)
    adapter.save_adapters(params_i, params_t, args.out)
    log_path = args.log or (os.path.splitext(str(args.out))[0] + ".log.jsonl")
    _write_train_log(log, log_path)
    _log(
        f"adapted in {cfg.epochs} epochs: loss {log[0].mean_loss:.6f} -> "
        f"{log[-1].mean_loss:.6f}; wrote {args.out}"
    )
    return 0


def cmd_score(args) -> int:
    table, bank = store.load_store(args.store)
    params_i, params_t = adapter.load_adapters(args.adapters)
    scores = scoring.compute_scores(
        table,
        bank,
        params_i,
        params_t,
        k_fraction=args.k_fraction,
        normalize_diversity=args.normalize_diversity,
    )
    scoring.save_scores(scores, args.out)
    csv_path = args.csv or (os.path.splitext(str(args.out))[0] + ".csv")
    scoring.scores_to_csv(scores, table, csv_path)
    if args.report:
        with open(args.report, "w") as f:
            f.write(scoring.report_json(scoring.score_report(scores, table)))
    _log(f"scored {table.n} samples; wrote {args.out}")
    return 0


def cmd_select(args) -> int:
    scores = scoring.load_scores(args.scores)
    table, _ = store.load_store(args.store)
    cfg = selector.SelectConfig(
        learning_rate=args.lr,
        max_iterations=args.max_iters,
        seed=args.seed,
        theta=args.theta,
    )
    state = selector.optimize_selection(
        scores, args.ratio, cfg, alpha=args.alpha, beta=args.beta
    )
    selector.emit_manifest(state, table, args.out)
    _log(
        f"selected {state.selected_count}/{state.n} "
        f"(target {args.ratio}, fallback={state.fallback_used}); wrote {args.out}"
    )
    return 0


def cmd_inspect(args) -> int:
    header = store.read_header(args.store)
    header["file_bytes"] = os.path.getsize(args.store)
    print(json.dumps(header, sort_keys=True, indent=2))
    return 0


def _effective(args, config_file: dict, key: str, flag_value):
    if flag_value is not None:
        return flag_value
    if key in config_file:
        return config_file[key]
    return DEFAULTS[key]


def cmd_pipeline(args) -> int:
    config_file = {}
    if args.config:
        with open(args.config) as f:
            config_file = json.load(f)

    eff = {
        key: _effective(args, config_file, key, getattr(args, attr))
        for key, attr in [
            ("ratio", "ratio"),
            ("alpha", "alpha"),
            ("beta", "beta"),
            ("theta", "theta"),
            ("k_fraction", "k_fraction"),
            ("epochs", "epochs"),
            ("batch_size", "batch_size"),
            ("adapt_lr", "adapt_lr"),
            ("temperature", "temperature"),
            ("blend", "blend"),
            ("select_lr", "select_lr"),
            ("max_iters", "max_iters"),
            ("seed", "seed"),
        ]
    }
    eff["normalize_diversity"] = (
        args.normalize_diversity
        or config_file.get("normalize_diversity", DEFAULTS["normalize_diversity"])
    )
    if eff["ratio"] is None:
        raise ConfigInvalid("pipeline needs a selection ratio (--ratio or config file)")
    if not (0.0 < eff["ratio"] < 1.0):
        raise RatioOutOfRange(eff["ratio"])

    os.makedirs(args.out_dir, exist_ok=True)
    paths = {
        "adapters": os.path.join(args.out_dir, "adapters.adp"),
        "train_log": os.path.join(args.out_dir, "train_log.jsonl"),
        "scores": os.path.join(args.out_dir, "scores.scr"),
        "scores_csv": os.path.join(args.out_dir, "scores.csv"),
        "score_report": os.path.join(args.out_dir, "score_report.json"),
        "manifest": os.path.join(args.out_dir, "manifest.json"),
        "report": os.path.join(args.out_dir, "report.json"),
    }

    table, bank = store.load_store(args.store)
    stages = {}

    t0 = time.perf_counter()
    adapt_cfg = adapter.AdaptConfig(
        epochs=eff["epochs"],
        batch_size=eff["batch_size"],
        learning_rate=eff["adapt_lr"],
        temperature=eff["temperature"],
        seed=eff["seed"],
        blend=eff["blend"],
    )
    adapt_cfg.validate()
    params_i, params_t, train_log = adapter.fit_adapters(table, bank, adapt_cfg)
    adapter.save_adapters(params_i, params_t, paths["adapters"])
    _write_train_log(train_log, paths["train_log"])
    stages["adapt"] = {"wall_ms": (time.perf_counter() - t0) * 1000.0}

    t0 = time.perf_counter()
    scores = scoring.compute_scores(
        table,
        bank,
        params_i,
        params_t,
        k_fraction=eff["k_fraction"],
        normalize_diversity=eff["normalize_diversity"],
    )
    scoring.save_scores(scores, paths["scores"])
    scoring.scores_to_csv(scores, table, paths["scores_csv"])
    with open(paths["score_report"], "w") as f:
        f.write(scoring.report_json(scoring.score_report(scores, table)))
    stages["score"] = {"wall_ms": (time.perf_counter() - t0) * 1000.0}

    t0 = time.perf_counter()
    select_cfg = selector.SelectConfig(
        learning_rate=eff["select_lr"],
        max_iterations=eff["max_iters"],
        seed=eff["seed"],
        theta=eff["theta"],
    )
    state = selector.optimize_selection(
        scores, eff["ratio"], select_cfg, alpha=eff["alpha"], beta=eff["beta"]
    )
    selector.emit_manifest(state, table, paths["manifest"])
    stages["select"] = {"wall_ms": (time.perf_counter() - t0) * 1000.0}

    selection_block = {
        "target_ratio": state.target_ratio,
        "achieved_ratio": state.achieved_ratio,
        "selected_count": state.selected_count,
        "alpha": state.alpha,
        "beta": state.beta,
        "fallback_used": state.fallback_used,
        "iterations_run": state.iterations_run,
        "mean_sas_selected": float(scores.sas[state.mask].mean()),
        "mean_sds_selected": float(scores.sds[state.mask].mean()),
    }
    if args.truth:
        truth = synth.load_truth(args.truth)
        selection_block["noise_metrics"] = synth.selection_metrics(
            state, truth, scores, table.labels
        )

    report = {
        "store": str(args.store),
        "n": table.n,
        "k": bank.k,
        "dim": table.dim,
        "config": eff,
        "stages": stages,
        "selection": selection_block,
        "outputs": {key: os.path.basename(v) for key, v in paths.items()},
    }
    _write_json(report, paths["report"])
    _log(
        f"pipeline done: {state.selected_count}/{table.n} selected; "
        f"report at {paths['report']}"
    )
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="coreselect",
        description="Coreset selection over image/text embedding stores",
    )
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("synth", help="generate a synthetic embedding store")
    sp.add_argument("--spec", help="SynthSpec JSON file (flags ignored if set)")
    sp.add_argument("--classes", type=int, default=10)
    sp.add_argument("--per-class", type=int, default=100)
    sp.add_argument("--dim", type=int, default=32)
    sp.add_argument("--intra-spread", type=float, default=0.1)
    sp.add_argument("--separation", type=float, default=60.0)
    sp.add_argument("--label-noise", type=float, default=0.0)
    sp.add_argument("--corruption-rate", type=float, default=0.0)
    sp.add_argument("--corruption-sigma", type=float, default=0.0)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", required=True)
    sp.add_argument("--truth", help="ground-truth CSV path (default: <out>.truth.csv)")
    sp.set_defaults(func=cmd_synth)

    ap = sub.add_parser("adapt", help="fine-tune the adapters on a store")
    ap.add_argument("--store", required=True)
    ap.add_argument("--out", required=True, help="ADP1 checkpoint path")
    ap.add_argument("--log", help="JSONL training log path (default: <out>.log.jsonl)")
    ap.add_argument("--epochs", type=int, default=DEFAULTS["epochs"])
    ap.add_argument("--batch-size", type=int, default=DEFAULTS["batch_size"])
    ap.add_argument("--lr", type=float, default=DEFAULTS["adapt_lr"])
    ap.add_argument("--temperature", type=float, default=DEFAULTS["temperature"])
    ap.add_argument("--blend", type=float, default=DEFAULTS["blend"])
    ap.add_argument("--seed", type=int, default=DEFAULTS["seed"])
    ap.set_defaults(func=cmd_adapt)

    scp = sub.add_parser("score", help="compute alignment/diversity scores")
    scp.add_argument("--store", required=True)
    scp.add_argument("--adapters", required=True)
    scp.add_argument("--out", required=True, help="SCR1 output path")
    scp.add_argument("--csv", help="per-sample CSV output path (default: <out>.csv)")
    scp.add_argument("--report", help="score report JSON path")
    scp.add_argument("--k-fraction", type=float, default=DEFAULTS["k_fraction"])
    scp.add_argument("--normalize-diversity", action="store_true")
    scp.set_defaults(func=cmd_score)

    sep = sub.add_parser("select", help="optimize the ratio-constrained selection")
    sep.add_argument("--scores", required=True)
    sep.add_argument("--store", required=True)
    sep.add_argument("--ratio", type=float, required=True)
    sep.add_argument("--alpha", type=float, default=None)
    sep.add_argument("--beta", type=float, default=DEFAULTS["beta"])
    sep.add_argument("--theta", type=float, default=DEFAULTS["theta"])
    sep.add_argument("--lr", type=float, default=DEFAULTS["select_lr"])
    sep.add_argument("--max-iters", type=int, default=DEFAULTS["max_iters"])
    sep.add_argument("--seed", type=int, default=DEFAULTS["seed"])
    sep.add_argument("--out", required=True, help="manifest JSON path")
    sep.set_defaults(func=cmd_select)

    pp = sub.add_parser("pipeline", help="adapt, score and select in one run")
    pp.add_argument("--store", required=True)
    pp.add_argument("--out-dir", required=True)
    pp.add_argument("--config", help="JSON config file (flags override it)")
    pp.add_argument("--truth", help="ground-truth CSV for noise metrics")
    pp.add_argument("--ratio", type=float, default=None)
    pp.add_argument("--alpha", type=float, default=None)
    pp.add_argument("--beta", type=float, default=None)
    pp.add_argument("--theta", type=float, default=None)
    pp.add_argument("--k-fraction", type=float, default=None)
    pp.add_argument("--epochs", type=int, default=None)
    pp.add_argument("--batch-size", type=int, default=None)
    pp.add_argument("--adapt-lr", type=float, default=None)
    pp.add_argument("--temperature", type=float, default=None)
    pp.add_argument("--blend", type=float, default=None)
    pp.add_argument("--select-lr", type=float, default=None)
    pp.add_argument("--max-iters", type=int, default=None)
    pp.add_argument("--seed", type=int, default=None)
    pp.add_argument("--normalize-diversity", action="store_true")
    pp.set_defaults(func=cmd_pipeline)

    ip = sub.add_parser("inspect", help="pretty-print an ESB1 header")
    ip.add_argument("--store", required=True)
    ip.set_defaults(func=cmd_inspect)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except INPUT_ERRORS as e:
        print(f"{type(e).__name__}: {e}", file=sys.stderr)
        return 2
    except FileNotFoundError as e:
        print(f"IoError: {e}", file=sys.stderr)
        return 2
    except OSError as e:
        print(f"IoError: {e}", file=sys.stderr)
        return 2
    except CoreselectError as e:
        print(f"{type(e).__name__}: {e}", file=sys.stderr)
        return 1
    except ValueError as e:
        print(f"ValueError: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

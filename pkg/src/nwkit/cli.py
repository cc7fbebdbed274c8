"""Command-line surface: gen, train, eval, sweep-k, influence, calibrate, serve.

Every command takes an explicit ``--out`` directory and writes a manifest.json
(command, full config echo, seed, artifact paths, wall clock, version) next to
its outputs, making reruns reproducible. Randomized commands require an
explicit ``--seed``; nothing is ever seeded from the wall clock.

Exit codes: 0 success, 2 usage error, 3 data error, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .calibration import expected_calibration_error, nll, temperature_sweep
from .core import LabeledExample, batch_predict, nw_predict, top_label_match_rate
from .data import load_csv, save_csv, save_support_csv, generate_blobs, generate_rings, split
from .errors import MissingSplitError, NWError, UnknownIdError
from .influence import rank_influence
from .support import InferenceMode, build_support
from .trainer import (
    TrainConfig,
    embed_examples,
    fc_predict_probs,
    load_checkpoint,
    save_checkpoint,
    train,
)

SPLIT_FILES = {"train": "train.csv", "val": "val.csv", "test": "test.csv"}


def _write_json(path: Path, obj) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def _config_echo(args) -> dict:
    """Flags as a JSON-safe dict (drops the subcommand dispatch entry)."""
    echo = {}
    for key, value in vars(args).items():
        if key in ("func", "needs_mode_seed"):
            continue
        echo[key] = value if isinstance(value, (int, float, str, bool, type(None))) else str(value)
    return echo


def _write_manifest(out: Path, command: str, args, artifacts, started: float):
    return _write_json(
        out / "manifest.json",
        {
            "command": command,
            "config": _config_echo(args) if not isinstance(args, dict) else args,
            "seed": getattr(args, "seed", None) if not isinstance(args, dict) else args.get("seed"),
            "artifacts": sorted(str(p) for p in artifacts),
            "wall_clock_sec": time.perf_counter() - started,
            "version": __version__,
        },
    )


def _load_splits(data_dir: str) -> dict:
    root = Path(data_dir)
    if not root.is_dir():
        raise MissingSplitError(f"data directory {data_dir!r} does not exist")
    splits = {}
    for tag, name in SPLIT_FILES.items():
        path = root / name
        if path.exists():
            splits[tag] = load_csv(path)
    if "train" not in splits:
        raise MissingSplitError(f"no train.csv found under {data_dir!r}")
    return splits


def _require_split(splits: dict, tag: str):
    if tag not in splits:
        raise MissingSplitError(f"missing {SPLIT_FILES[tag]} in the data directory")
    return splits[tag]


def _mode_from_flags(args) -> InferenceMode:
    if args.mode == "full":
        return InferenceMode.full()
    builders = {
        "random": InferenceMode.random,
        "cluster": InferenceMode.cluster,
        "cc": InferenceMode.closest_cluster,
    }
    return builders[args.mode](args.k, args.seed)


def _inf_safe(value: float):
    return "inf" if value == float("inf") else value


def _evaluate(model, manifest, splits, split_tag, mode, tau, bins):
    """Shared metric computation behind eval and sweep-k."""
    queries = _require_split(splits, split_tag)
    train_split = _require_split(splits, "train")
    emb_support = embed_examples(model, train_split.examples)
    support = build_support(emb_support, mode, train_split.class_count)
    emb_queries = embed_examples(model, queries.examples)
    feats = np.stack([e.features for e in emb_queries])
    labels = queries.labels_array()

    if manifest["head"] == "fc":
        probs = fc_predict_probs(model, queries.features_matrix())
    else:
        probs, _ = batch_predict(feats, support, tau)
    predicted = probs.argmax(axis=1)
    error_rate = float(np.mean(predicted != labels))
    report = expected_calibration_error(probs, labels, bins)

    # top-label match always ranks by embedding distance over the Full support
    full = (
        support
        if mode.kind == "full"
        else build_support(emb_support, InferenceMode.full(), train_split.class_count)
    )
    top_n = min(10, len(full))
    rates = [
        top_label_match_rate(q, full, tau if manifest["head"] != "fc" else 1.0, top_n)
        for q in emb_queries
    ]
    return {
        "head": manifest["head"],
        "split": split_tag,
        "mode": {"kind": mode.kind, "k": mode.k, "seed": mode.seed},
        "tau": tau,
        "n_queries": len(queries),
        "support_size": len(support),
        "error_rate": error_rate,
        "ece": report.ece,
        "nll": _inf_safe(nll(probs, labels)),
        "reliability": report.to_dict(),
        "top_label_match": {"top_n": top_n, "rate": float(np.mean(rates))},
    }


def cmd_gen(args):
    started = time.perf_counter()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.kind == "blobs":
        data = generate_blobs(
            args.classes, args.per_class, args.dim, args.separation, args.noise_sd, args.seed
        )
    else:
        data = generate_rings(args.per_class, args.noise_sd, args.seed)
    fractions = [float(f) for f in args.fractions.split(",")]
    tagged = split(data, fractions, args.split_seed)
    artifacts = []
    for tag, name in SPLIT_FILES.items():
        part = tagged.subset(tag)
        if len(part):
            save_csv(part, out / name)
            artifacts.append(out / name)
    artifacts.append(
        _write_manifest(out, "gen", args, artifacts, started)
    )
    print(json.dumps({"out": str(out), "sizes": {t: len(tagged.subset(t)) for t in SPLIT_FILES}}))
    return 0


def cmd_train(args):
    started = time.perf_counter()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    splits = _load_splits(args.data)
    config = TrainConfig(
        batch_size=args.nb,
        support_size=args.ns,
        temperature=args.tau,
        lr=args.lr,
        momentum=args.momentum,
        weight_decay=args.wd,
        steps=args.steps,
        lr_decay_steps=tuple(int(s) for s in args.decay.split(",")) if args.decay else (),
        seed=args.seed,
        head=args.head,
        label_smoothing=args.eps,
        hidden=tuple(int(h) for h in args.hidden.split(",")) if args.hidden else (),
        embed_dim=args.embed_dim,
        eval_every=args.eval_every,
        shared_support=args.shared_support,
    )
    model, log = train(splits["train"], splits.get("val", []), config)
    ckpt = out / "checkpoint.json"
    save_checkpoint(model, ckpt, config, extra={"class_count": splits["train"].class_count})
    log_path = out / "train_log.jsonl"
    with open(log_path, "w", encoding="utf-8") as fh:
        for entry in log:
            fh.write(json.dumps(entry, sort_keys=True) + "\n")
    _write_manifest(out, "train", config.to_dict(), [ckpt, log_path], started)
    print(json.dumps(log[-1] if log else {"step": 0}, sort_keys=True))
    return 0


def cmd_eval(args):
    started = time.perf_counter()
    out = Path(args.out)
    model, manifest = load_checkpoint(args.checkpoint)
    splits = _load_splits(args.data)
    mode = _mode_from_flags(args)
    report = _evaluate(model, manifest, splits, args.split, mode, args.tau, args.bins)
    path = _write_json(out / "eval_report.json", report)
    _write_manifest(out, "eval", args, [path], started)
    print(json.dumps(report, sort_keys=True))
    return 0


def cmd_sweep_k(args):
    started = time.perf_counter()
    out = Path(args.out)
    model, manifest = load_checkpoint(args.checkpoint)
    splits = _load_splits(args.data)
    ks = [int(k) for k in args.ks.split(",")]
    seeds = [int(s) for s in args.seeds.split(",")]
    builders = {
        "random": InferenceMode.random,
        "cluster": InferenceMode.cluster,
        "cc": InferenceMode.closest_cluster,
    }
    rows = []
    for k in ks:
        per_seed = []
        for seed in seeds:
            r = _evaluate(
                model, manifest, splits, args.split, builders[args.mode](k, seed),
                args.tau, args.bins,
            )
            per_seed.append(
                {"seed": seed, "error_rate": r["error_rate"], "ece": r["ece"], "nll": r["nll"]}
            )
        rows.append(
            {
                "k": k,
                "per_seed": per_seed,
                "mean_error_rate": float(np.mean([p["error_rate"] for p in per_seed])),
                "mean_ece": float(np.mean([p["ece"] for p in per_seed])),
            }
        )
    full = _evaluate(model, manifest, splits, args.split, InferenceMode.full(), args.tau, args.bins)
    report = {
        "mode": args.mode,
        "split": args.split,
        "tau": args.tau,
        "ks": ks,
        "seeds": seeds,
        "rows": rows,
        "full": {"error_rate": full["error_rate"], "ece": full["ece"], "nll": full["nll"]},
    }
    path = _write_json(out / "sweep_report.json", report)
    _write_manifest(out, "sweep-k", args, [path], started)
    print(json.dumps(report, sort_keys=True))
    return 0


def cmd_influence(args):
    started = time.perf_counter()
    out = Path(args.out)
    model, manifest = load_checkpoint(args.checkpoint)
    if manifest["head"] == "fc":
        raise NWError("influence is defined for NW-head checkpoints only")
    splits = _load_splits(args.data)
    queries = _require_split(splits, args.split)
    query = queries.by_id(args.query_id)  # raises UnknownIdError
    train_split = _require_split(splits, "train")
    support = build_support(
        embed_examples(model, train_split.examples), _mode_from_flags(args),
        train_split.class_count,
    )
    # embed the whole split at once: batched BLAS rounding must match the
    # inspector service, which caches split-level embeddings
    emb_split = embed_examples(model, queries.examples)
    emb_query = next(e for e in emb_split if e.id == query.id)
    records = rank_influence(emb_query, support, args.tau)
    pred = nw_predict(emb_query, support, args.tau)

    top = args.top
    clamped = top > len(records)
    if clamped:
        print(
            f"warning: --top {top} exceeds support size {len(records)}; clamping",
            file=sys.stderr,
        )
        top = len(records)
    weight_of = dict(zip(support.ids, pred.weights.weights))
    label_of = dict(zip(support.ids, (int(l) for l in support.labels)))
    source_of = dict(zip(support.ids, support.sources))

    def row(record):
        return {
            "support_id": record.support_id,
            "influence": _inf_safe(record.influence),
            "same_class": record.same_class,
            "weight": float(weight_of[record.support_id]),
            "label": label_of[record.support_id],
            "source": source_of[record.support_id],
        }

    report = {
        "query_id": query.id,
        "true_label": query.label,
        "predicted_class": pred.predicted_class,
        "confidence": pred.confidence,
        "probs": pred.probs.tolist(),
        "tau": args.tau,
        "mode": {"kind": args.mode, "k": args.k, "seed": args.seed},
        "top": top,
        "clamped": clamped,
        "helpful": [row(r) for r in records[:top]],
        "harmful": [row(r) for r in records[::-1][:top]],
    }
    path = _write_json(out / "influence_report.json", report)
    _write_manifest(out, "influence", args, [path], started)
    print(json.dumps(report, sort_keys=True))
    return 0


def cmd_calibrate(args):
    started = time.perf_counter()
    out = Path(args.out)
    model, manifest = load_checkpoint(args.checkpoint)
    if manifest["head"] == "fc":
        raise NWError("temperature scaling here drives the NW head; use an NW checkpoint")
    splits = _load_splits(args.data)
    val = _require_split(splits, "val")
    test = _require_split(splits, "test")
    train_split = _require_split(splits, "train")
    support = build_support(
        embed_examples(model, train_split.examples), _mode_from_flags(args),
        train_split.class_count,
    )

    emb_val = embed_examples(model, val.examples)
    grid = (args.grid_lo, args.grid_hi, args.grid_steps)
    taus, nlls = temperature_sweep(emb_val, support, grid)
    tau_star = float(taus[int(np.argmin(nlls))])
    val_feats = np.stack([e.features for e in emb_val])
    val_labels = val.labels_array()
    val_nll_at_one = nll(batch_predict(val_feats, support, 1.0)[0], val_labels)

    emb_test = embed_examples(model, test.examples)
    test_feats = np.stack([e.features for e in emb_test])
    test_labels = test.labels_array()

    def test_metrics(tau):
        probs, _ = batch_predict(test_feats, support, tau)
        report = expected_calibration_error(probs, test_labels, args.bins)
        return {
            "tau": tau,
            "error_rate": float(np.mean(probs.argmax(axis=1) != test_labels)),
            "ece": report.ece,
            "nll": _inf_safe(nll(probs, test_labels)),
            "reliability": report.to_dict(),
        }

    report = {
        "grid": {
            "lo": args.grid_lo,
            "hi": args.grid_hi,
            "steps": args.grid_steps,
            "values": taus.tolist(),
        },
        "tau_star": tau_star,
        "val_nll_at_1": _inf_safe(val_nll_at_one),
        "val_nll_at_tau_star": _inf_safe(float(nlls[int(np.argmin(nlls))])),
        "mode": {"kind": args.mode, "k": args.k, "seed": args.seed},
        "test_before": test_metrics(1.0),
        "test_after": test_metrics(tau_star),
    }
    path = _write_json(out / "calibrate_report.json", report)
    _write_manifest(out, "calibrate", args, [path], started)
    print(json.dumps(report, sort_keys=True))
    return 0


def cmd_support(args):
    """Materialize a support set to CSV (handy for inspection and demos)."""
    started = time.perf_counter()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    model, manifest = load_checkpoint(args.checkpoint)
    splits = _load_splits(args.data)
    train_split = _require_split(splits, "train")
    support = build_support(
        embed_examples(model, train_split.examples), _mode_from_flags(args),
        train_split.class_count,
    )
    path = out / "support.csv"
    save_support_csv(support, path)
    _write_manifest(out, "support", args, [path], started)
    print(json.dumps({"out": str(path), "size": len(support)}))
    return 0


def cmd_serve(args):
    from . import server  # deferred: uvicorn import is heavy

    session = server.InspectorSession.from_paths(
        args.checkpoint, args.data, tau=args.tau
    )
    app = server.create_app(session, ui_dir=args.ui)
    import uvicorn

    uvicorn.run(app, host=args.host, port=args.port, log_level="info")
    return 0


def _add_mode_flags(p, seed_required=True):
    p.add_argument("--mode", choices=["full", "random", "cluster", "cc"], default="full")
    p.add_argument("--k", type=int, default=1, help="entries per class for non-full modes")
    p.add_argument(
        "--seed", type=int, required=seed_required,
        help="seed for randomized support construction",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="nw",
        description="Nadaraya-Watson head: train, evaluate, attribute, calibrate, inspect.",
    )
    parser.add_argument("--version", action="version", version=f"nw {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a synthetic dataset with splits")
    p.add_argument("--kind", choices=["blobs", "rings"], default="blobs")
    p.add_argument("--classes", type=int, default=3)
    p.add_argument("--per-class", type=int, default=240)
    p.add_argument("--dim", type=int, default=2)
    p.add_argument("--separation", type=float, default=6.0)
    p.add_argument("--noise-sd", type=float, default=1.0)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--split-seed", type=int, default=None)
    p.add_argument("--fractions", default="0.8,0.1,0.1")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("train", help="train the feature extractor")
    p.add_argument("--data", required=True, help="directory with train.csv[, val.csv, test.csv]")
    p.add_argument("--head", choices=["nw", "fc"], default="nw")
    p.add_argument("--ns", type=int, default=10, help="support size per episode")
    p.add_argument("--nb", type=int, default=32, help="mini-batch size")
    p.add_argument("--tau", type=float, default=1.0)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--momentum", type=float, default=0.9)
    p.add_argument("--wd", type=float, default=1e-4)
    p.add_argument("--steps", type=int, default=2000)
    p.add_argument("--decay", default="1000,1500", help="comma list of lr/10 milestones")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--hidden", default="64,64")
    p.add_argument("--embed-dim", type=int, default=16)
    p.add_argument("--eps", type=float, default=0.0, help="label smoothing weight")
    p.add_argument("--eval-every", type=int, default=500)
    p.add_argument("--shared-support", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="error rate, ECE, reliability, top-label match")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", choices=["train", "val", "test"], default="test")
    p.add_argument("--tau", type=float, default=1.0)
    p.add_argument("--bins", type=int, default=15)
    _add_mode_flags(p, seed_required=False)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep-k", help="metrics across support sizes k")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", choices=["train", "val", "test"], default="test")
    p.add_argument("--mode", choices=["random", "cluster", "cc"], default="random")
    p.add_argument("--ks", default="1,2,4,8")
    p.add_argument("--seeds", required=True, help="comma list of support seeds")
    p.add_argument("--tau", type=float, default=1.0)
    p.add_argument("--bins", type=int, default=15)
    p.add_argument("--seed", type=int, default=None, help="echoed into the manifest")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sweep_k, needs_mode_seed=False)

    p = sub.add_parser("influence", help="helpful/harmful support attribution for one query")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--query-id", required=True)
    p.add_argument("--split", choices=["train", "val", "test"], default="test")
    p.add_argument("--tau", type=float, default=1.0)
    p.add_argument("--top", type=int, default=5)
    _add_mode_flags(p, seed_required=False)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_influence)

    p = sub.add_parser("calibrate", help="temperature scaling on the val split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--grid-lo", type=float, default=0.5)
    p.add_argument("--grid-hi", type=float, default=3.0)
    p.add_argument("--grid-steps", type=int, default=100)
    p.add_argument("--bins", type=int, default=15)
    _add_mode_flags(p, seed_required=False)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("support", help="materialize a support set to CSV")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    _add_mode_flags(p, seed_required=False)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_support)

    p = sub.add_parser("serve", help="run the support-set inspector service")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8151)
    p.add_argument("--tau", type=float, default=1.0)
    p.add_argument("--ui", default=None, help="directory of built UI assets to serve at /")
    p.set_defaults(func=cmd_serve)

    return parser


def _needs_seed(args) -> bool:
    if not getattr(args, "needs_mode_seed", True):
        return False
    return getattr(args, "mode", "full") != "full" and getattr(args, "seed", None) is None


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if _needs_seed(args):
        parser.error(f"--seed is required for --mode {args.mode}")
    try:
        return args.func(args)
    except NWError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())

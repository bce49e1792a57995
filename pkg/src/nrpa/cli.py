"""Command-line surface: prepare, train, eval, ablate, sweep, inspect.

Exit codes are a stable scripting contract: 0 success, 2 usage/input error,
3 runtime or numeric failure. All randomness flows from the seed in the
config or the --seed flag; no command reads ambient entropy.
"""

import argparse
import dataclasses
import hashlib
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import checkpoint, evaluation, training
from .data import build_profiles, load_prepared, parse_reviews, prepare_dataset, save_prepared
from .model import AblationSpec, forward
from .training import TrainConfig, TrainingDiverged


class UsageError(Exception):
    """Input/config problems; reported on stderr with exit code 2."""


def load_config(path) -> TrainConfig:
    """Flat `key = value` config file; unknown keys are hard errors."""
    cfg = TrainConfig()
    known = {f.name: f for f in dataclasses.fields(TrainConfig)}
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from exc
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected `key = value`, got {line!r}")
        key, _, raw = line.partition("=")
        key = key.strip()
        raw = raw.strip()
        if key not in known:
            raise UsageError(f"{path}:{lineno}: unknown config key {key!r}")
        ftype = known[key].type
        try:
            if ftype in (bool, "bool"):
                if raw.lower() in ("true", "yes", "1"):
                    value = True
                elif raw.lower() in ("false", "no", "0"):
                    value = False
                else:
                    raise ValueError(f"not a boolean: {raw!r}")
            elif ftype in (int, "int"):
                value = int(raw)
            elif ftype in (float, "float"):
                value = float(raw)
            else:
                value = raw
        except ValueError as exc:
            raise UsageError(f"{path}:{lineno}: bad value for {key}: {exc}") from exc
        setattr(cfg, key, value)
    try:
        cfg.validate()
    except ValueError as exc:
        raise UsageError(f"{path}: {exc}") from exc
    return cfg


def _fingerprint(data_dir) -> str:
    h = hashlib.sha256()
    for p in sorted(Path(data_dir).iterdir()):
        if p.is_file():
            h.update(p.name.encode("utf-8"))
            h.update(p.read_bytes())
    return h.hexdigest()


def _load_dataset(data_dir):
    try:
        return load_prepared(data_dir)
    except (OSError, ValueError) as exc:
        raise UsageError(f"cannot load prepared dataset at {data_dir}: {exc}") from exc


def parse_ablation(spec: str) -> AblationSpec:
    """Comma list of user|item|word|review=uniform (or =personalized)."""
    sites = {"user": "user_attention", "item": "item_attention",
             "word": "word_level", "review": "review_level"}
    kwargs = {}
    for part in spec.split(","):
        part = part.strip()
        if not part:
            continue
        key, _, mode = part.partition("=")
        if key not in sites or mode not in ("uniform", "personalized"):
            raise UsageError(f"bad ablation term {part!r}; "
                             f"expected user|item|word|review=uniform")
        kwargs[sites[key]] = mode
    return AblationSpec(**kwargs)


def _write_history(path, history):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("epoch,train_loss,val_mse\n")
        for rec in history:
            fh.write(f"{rec.epoch},{rec.train_loss!r},{rec.val_mse!r}\n")


def cmd_prepare(args) -> int:
    try:
        with open(args.input, "rb") as fh:
            records, skipped = parse_reviews(fh, args.format)
    except OSError as exc:
        raise UsageError(f"cannot read input {args.input}: {exc}") from exc
    if len(records) < 10:
        raise UsageError(f"only {len(records)} usable records in {args.input}; need >= 10")
    ds = prepare_dataset(records, args.seed, args.min_count)
    save_prepared(ds, args.out)
    stats = ds.stats()
    print(f"skipped lines: {skipped}")
    print("users items ratings density")
    print(f"{stats['users']:,} {stats['items']:,} {stats['ratings']:,} "
          f"{stats['density']:.3f}")
    print(f"split sizes: {len(ds.split.train)}/{len(ds.split.validation)}/"
          f"{len(ds.split.test)} (seed {ds.split.seed})")
    print(f"vocabulary: {len(ds.vocab)} entries")
    return 0


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    ds = _load_dataset(args.data)
    stores = build_profiles(ds.split.train, cfg.review_len, cfg.num_reviews,
                            ds.n_users, ds.n_items)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    started = time.time()
    params, history = training.train(cfg, ds, stores)

    ckpt_path = out / "checkpoint.nrpa"
    checkpoint.save_params(params, ckpt_path, {"config": dataclasses.asdict(cfg)})
    _write_history(out / "history.csv", history)
    manifest = {
        "config": dataclasses.asdict(cfg),
        "dataset_fingerprint": _fingerprint(args.data),
        "seed": cfg.seed,
        "checkpoint": str(ckpt_path),
        "metrics": {"history": str(out / "history.csv")},
        "started_at": started,
        "finished_at": time.time(),
    }
    with open(out / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
    best = min(history, key=lambda r: r.val_mse)
    print(f"trained {len(history)} epochs; best val_mse={best.val_mse!r} "
          f"at epoch {best.epoch}")
    return 0


def _load_checkpoint_for(ds, path):
    try:
        params, meta = checkpoint.load_params(path)
    except (OSError, checkpoint.CheckpointError) as exc:
        raise UsageError(f"cannot load checkpoint {path}: {exc}") from exc
    got = (params.dims.vocab_size, params.dims.n_users, params.dims.n_items)
    want = (len(ds.vocab), ds.n_users, ds.n_items)
    if got != want:
        raise UsageError(f"checkpoint dims {got} do not match dataset dims {want} "
                         f"(vocab, users, items)")
    return params, meta


def cmd_eval(args) -> int:
    ds = _load_dataset(args.data)
    params, meta = _load_checkpoint_for(ds, args.checkpoint)
    cfg_meta = meta.get("config", {})
    stores = build_profiles(ds.split.train, params.dims.review_len,
                            params.dims.num_reviews, ds.n_users, ds.n_items)
    ablation = parse_ablation(args.ablation) if args.ablation else AblationSpec()
    split = ds.split.validation if args.split == "val" else ds.split.test
    exclude = bool(cfg_meta.get("exclude_target", True))

    sink = None
    try:
        if args.trace:
            sink = open(args.trace, "w", encoding="utf-8")
        score = evaluation.evaluate(params, split, stores, ablation,
                                    exclude_target=exclude, clip=args.clip,
                                    threads=args.threads, trace_sink=sink)
    finally:
        if sink:
            sink.close()
    print(f"mse={score!r}")

    out_csv = args.out or str(Path(args.checkpoint).parent / f"eval_{args.split}.csv")
    ab_text = args.ablation or "none"
    with open(out_csv, "w", encoding="utf-8") as fh:
        fh.write("split,ablation,mse\n")
        fh.write(f"{args.split},{ab_text},{score!r}\n")
    return 0


def cmd_ablate(args) -> int:
    cfg = load_config(args.config)
    ds = _load_dataset(args.data)
    rows = evaluation.run_ablation_suite(cfg, ds, csv_path=args.out)
    for name, score in rows:
        print(f"{name}: mse={score!r}")
    return 0


def cmd_sweep(args) -> int:
    cfg = load_config(args.config)
    ds = _load_dataset(args.data)
    try:
        dims = [int(x) for x in args.dims.split(",") if x.strip()]
    except ValueError as exc:
        raise UsageError(f"bad --dims list {args.dims!r}: {exc}") from exc
    if not dims:
        raise UsageError("--dims list is empty")
    rows = evaluation.sweep_id_dim(cfg, ds, dims, csv_path=args.out)
    for d, score in rows:
        print(f"d_id={d}: val_mse={score!r}")
    return 0


def cmd_inspect(args) -> int:
    ds = _load_dataset(args.data)
    params, meta = _load_checkpoint_for(ds, args.checkpoint)
    user = ds.user_index(args.user)
    item = ds.item_index(args.item)
    if user == 0:
        raise UsageError(f"unknown user {args.user!r}")
    if item == 0:
        raise UsageError(f"unknown item {args.item!r}")
    stores = build_profiles(ds.split.train, params.dims.review_len,
                            params.dims.num_reviews, ds.n_users, ds.n_items)
    exclude = bool(meta.get("config", {}).get("exclude_target", True))
    rating, trace = forward(user, item, stores[0], stores[1], params,
                            exclude_target=exclude)
    print(f"prediction: {rating!r}")

    for side, store, owner, alpha, beta in (
            ("user", stores[0], user, trace.user_alpha, trace.user_beta),
            ("item", stores[1], item, trace.item_alpha, trace.item_beta)):
        keys = ds.item_keys if side == "user" else ds.user_keys
        print(f"{side} reviews by weight:")
        order = np.argsort(-beta)
        for j in order:
            if beta[j] == 0.0:
                continue
            partner = keys[store.partner[owner, j]]
            toks = store.tokens[owner, j]
            weights = alpha[j]
            top = np.argsort(-weights)[:args.top]
            words = " ".join(
                f"{ds.vocab.id_to_token[toks[w]]}:{weights[w]:.3f}"
                for w in top if weights[w] > 0)
            print(f"  review[{j}] beta={beta[j]:.4f} about={partner}: {words}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="nrpa",
                                description="review-based rating prediction with "
                                            "personalized hierarchical attention")
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("prepare", help="tokenize, split and index a raw corpus")
    sp.add_argument("--input", required=True)
    sp.add_argument("--format", required=True, choices=["amazon-json", "csv"])
    sp.add_argument("--out", required=True)
    sp.add_argument("--seed", type=int, required=True)
    sp.add_argument("--min-count", type=int, default=1, dest="min_count")
    sp.set_defaults(func=cmd_prepare)

    sp = sub.add_parser("train", help="train on a prepared dataset")
    sp.add_argument("--data", required=True)
    sp.add_argument("--config", required=True)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("eval", help="score a checkpoint on a split")
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--data", required=True)
    sp.add_argument("--split", required=True, choices=["val", "test"])
    sp.add_argument("--ablation", default=None)
    sp.add_argument("--clip", action="store_true")
    sp.add_argument("--threads", type=int, default=1)
    sp.add_argument("--out", default=None)
    sp.add_argument("--trace", default=None)
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("ablate", help="train and score every attention variant")
    sp.add_argument("--data", required=True)
    sp.add_argument("--config", required=True)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_ablate)

    sp = sub.add_parser("sweep", help="id-embedding dimension sweep")
    sp.add_argument("--data", required=True)
    sp.add_argument("--config", required=True)
    sp.add_argument("--dims", default="8,16,32,64,128")
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_sweep)

    sp = sub.add_parser("inspect", help="show attention weights for one pair")
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--data", required=True)
    sp.add_argument("--user", required=True)
    sp.add_argument("--item", required=True)
    sp.add_argument("--top", type=int, default=5)
    sp.set_defaults(func=cmd_inspect)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (TrainingDiverged, FloatingPointError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())

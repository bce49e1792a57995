"""Scoring, ablation variants and the id-dimension sweep.

Predictions always go through the single-pair forward path in fixed index
order, so scores are bit-reproducible and independent of evaluation batching
or thread count.
"""

import json
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import model as M
from .data import RawRecord, build_profiles
from .rng import SplitMix64

_EVAL_CHUNK = 64

ABLATION_VARIANTS = (
    ("full", M.AblationSpec()),
    ("no-attention", M.AblationSpec(word_level="uniform", review_level="uniform")),
    ("user-only", M.AblationSpec(item_attention="uniform")),
    ("item-only", M.AblationSpec(user_attention="uniform")),
    ("word-only", M.AblationSpec(review_level="uniform")),
    ("review-only", M.AblationSpec(word_level="uniform")),
)


def mse(predictions, truths) -> float:
    predictions = np.asarray(predictions, dtype=np.float64)
    truths = np.asarray(truths, dtype=np.float64)
    if predictions.shape != truths.shape:
        raise ValueError(f"length mismatch: {predictions.shape} vs {truths.shape}")
    if predictions.size == 0:
        raise ValueError("mse of empty inputs")
    diff = predictions - truths
    return float(np.mean(diff * diff))


def predict_split(params: M.ModelParams, interactions, stores,
                  ablation: M.AblationSpec = M.FULL_ATTENTION,
                  exclude_target: bool = True, threads: int = 1,
                  want_traces: bool = False):
    """Predictions (and optionally attention traces) for a list of interactions."""
    user_store, item_store = stores
    preds = np.zeros(len(interactions))
    traces = [None] * len(interactions) if want_traces else None

    def run_chunk(lo):
        hi = min(lo + _EVAL_CHUNK, len(interactions))
        out = []
        for idx in range(lo, hi):
            inter = interactions[idx]
            rating, trace = M.forward(inter.user, inter.item, user_store, item_store,
                                      params, exclude_target, ablation)
            out.append((idx, rating, trace))
        return out

    starts = range(0, len(interactions), _EVAL_CHUNK)
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            chunks = pool.map(run_chunk, starts)
    else:
        chunks = map(run_chunk, starts)
    for chunk in chunks:
        for idx, rating, trace in chunk:
            preds[idx] = rating
            if want_traces:
                traces[idx] = trace
    return preds, traces


def evaluate(params: M.ModelParams, interactions, stores,
             ablation: M.AblationSpec = M.FULL_ATTENTION,
             exclude_target: bool = True, clip: bool = False,
             threads: int = 1, trace_sink=None) -> float:
    """MSE of the model over a split, summed in fixed index order."""
    if len(interactions) == 0:
        raise ValueError("cannot evaluate an empty split")
    want_traces = trace_sink is not None
    preds, traces = predict_split(params, interactions, stores, ablation,
                                  exclude_target, threads, want_traces)
    if clip:
        preds = np.clip(preds, 1.0, 5.0)
    if want_traces:
        for inter, pred, trace in zip(interactions, preds, traces):
            trace_sink.write(json.dumps({
                "user": int(inter.user),
                "item": int(inter.item),
                "prediction": float(pred),
                "user_alpha": trace.user_alpha.tolist(),
                "user_beta": trace.user_beta.tolist(),
                "item_alpha": trace.item_alpha.tolist(),
                "item_beta": trace.item_beta.tolist(),
            }, sort_keys=True) + "\n")
    return mse(preds, [i.rating for i in interactions])


def _write_csv(path, header, rows):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(header + "\n")
        for row in rows:
            fh.write(",".join(str(x) for x in row) + "\n")


def run_ablation_suite(config, dataset, csv_path=None, threads: int = 1):
    """Train and score every attention variant under identical seeds/config.

    Returns [(variant, test_mse)] in the fixed variant order; optionally
    written as `variant,mse` CSV.
    """
    from .training import train  # evaluation sits above training here

    stores = build_profiles(dataset.split.train, config.review_len,
                            config.num_reviews, dataset.n_users, dataset.n_items)
    rows = []
    for name, ablation in ABLATION_VARIANTS:
        params, _ = train(config, dataset, stores, ablation)
        score = evaluate(params, dataset.split.test, stores, ablation,
                         exclude_target=config.exclude_target, threads=threads)
        rows.append((name, score))
    if csv_path:
        _write_csv(csv_path, "variant,mse", rows)
    return rows


def sweep_id_dim(config, dataset, dims, csv_path=None):
    """Retrain per id-embedding dimension with a fixed seed; returns
    [(id_dim, val_mse)] rows, optionally written as `d_id,val_mse` CSV."""
    from dataclasses import replace

    from .training import train

    if not dims:
        raise ValueError("dims list must be non-empty")
    stores = build_profiles(dataset.split.train, config.review_len,
                            config.num_reviews, dataset.n_users, dataset.n_items)
    rows = []
    for d in dims:
        cfg = replace(config, id_dim=int(d))
        params, history = train(cfg, dataset, stores)
        rows.append((int(d), min(rec.val_mse for rec in history)))
    if csv_path:
        _write_csv(csv_path, "d_id,val_mse", rows)
    return rows


# ---------------------------------------------------------------------------
# synthetic personalization corpus
# ---------------------------------------------------------------------------

_FILLER = ("the", "this", "item", "works", "came", "in", "box", "color",
           "size", "feels", "fine", "okay")


def _aspect_phrase(name: str, score: float) -> list:
    # favorability -> wording: a favorable price is a low price
    if name == "price":
        direction = "low" if score >= 0.5 else "high"
    else:
        direction = "high" if score >= 0.5 else "low"
    words = [name, direction]
    if score >= 0.75 or score < 0.25:
        words.insert(1, "very")
    return words


def make_synthetic_corpus(seed: int, n_users: int, n_items: int,
                          reviews_per_user: int = 25):
    """Two-aspect corpus where rating personalization is decided by text.

    Most users are pure-price or pure-quality (the rest weigh both equally,
    weights sum to 1); each item has a favorability score per aspect, spelled
    out in every review of it with the aspect keywords plus filler words.
    Quality skews favorable while price is uniform, so users differ in mean
    rating as well as in which words matter. Ratings are the user-weighted
    item score mapped to [1, 5] with sigma=0.1 noise, clipped. Review text
    depends only on the item, so a reader without personalized attention has
    no channel from user identity to predicted rating.
    """
    if n_users < 4 or n_items < 4:
        raise ValueError("need at least 4 users and 4 items")
    rng = SplitMix64(seed)
    price_weight = [(0.0, 0.0, 0.5, 1.0, 1.0)[rng.next_below(5)] for _ in range(n_users)]
    price = [rng.next_float() for _ in range(n_items)]
    quality = [0.6 + 0.4 * rng.next_float() for _ in range(n_items)]

    records = []
    k = min(reviews_per_user, n_items)
    for u in range(n_users):
        picks = list(range(n_items))
        rng.shuffle(picks)
        for i in sorted(picks[:k]):
            score = price_weight[u] * price[i] + (1.0 - price_weight[u]) * quality[i]
            # Box-Muller normal from two uniform draws
            u1 = 1.0 - rng.next_float()
            u2 = rng.next_float()
            noise = 0.1 * np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * np.pi * u2)
            rating = float(np.clip(1.0 + 4.0 * score + noise, 1.0, 5.0))

            words = _aspect_phrase("price", price[i])
            words += [_FILLER[rng.next_below(len(_FILLER))] for _ in range(3)]
            words += _aspect_phrase("quality", quality[i])
            words += [_FILLER[rng.next_below(len(_FILLER))] for _ in range(3)]
            records.append(RawRecord(f"u{u}", f"i{i}", rating, " ".join(words)))
    return records

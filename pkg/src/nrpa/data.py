"""Corpus ingestion: parsing, tokenization, vocabulary, splits and review profiles.

A prepared dataset is corpus-order list of interactions plus an 80/10/10
split, a train-only vocabulary, and per-owner fixed-shape review profiles
(num_reviews x review_len token grids) for the user and item sides.
"""

import csv
import io
import json
import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .rng import SplitMix64

PAD_ID = 0
UNK_ID = 1
PAD_TOKEN = "<pad>"
UNK_TOKEN = "<unk>"

# index 0 of each id-embedding table is reserved for owners never seen at
# prepare time (cold start); real users/items are indexed from 1
UNK_OWNER = 0

_TOKEN_RE = re.compile(r"[a-z0-9]+")


@dataclass
class RawRecord:
    user_key: str
    item_key: str
    rating: float
    text: str


@dataclass
class Interaction:
    user: int
    item: int
    rating: float
    tokens: np.ndarray  # int32 token ids, length <= review_len


@dataclass
class DatasetSplit:
    train: list
    validation: list
    test: list
    seed: int
    train_idx: list = field(default_factory=list)
    val_idx: list = field(default_factory=list)
    test_idx: list = field(default_factory=list)


def parse_reviews(stream, format: str):
    """Parse a review corpus into (records, skipped_count).

    amazon-json: one JSON object per line with reviewerID/asin/overall/reviewText.
    csv: headerless rows user,item,rating,text (quoting per the csv module).
    Malformed lines and ratings outside [1, 5] are skipped and counted.
    """
    if format not in ("amazon-json", "csv"):
        raise ValueError(f"unknown format {format!r}")
    if not isinstance(stream, io.TextIOBase) and hasattr(stream, "read"):
        stream = io.TextIOWrapper(stream, encoding="utf-8")

    records = []
    skipped = 0
    if format == "amazon-json":
        for line in stream:
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                rating = float(obj["overall"])
                rec = RawRecord(str(obj["reviewerID"]), str(obj["asin"]), rating,
                                str(obj["reviewText"]))
            except (json.JSONDecodeError, KeyError, TypeError, ValueError):
                skipped += 1
                continue
            if not 1.0 <= rating <= 5.0:
                skipped += 1
                continue
            records.append(rec)
    else:
        for row in csv.reader(stream):
            if not row:
                continue
            if len(row) != 4:
                skipped += 1
                continue
            try:
                rating = float(row[2])
            except ValueError:
                skipped += 1
                continue
            if not 1.0 <= rating <= 5.0:
                skipped += 1
                continue
            records.append(RawRecord(row[0], row[1], rating, row[3]))
    return records, skipped


def tokenize(text: str) -> list:
    """Lowercase and split on non-alphanumeric runs; drops empty tokens."""
    return _TOKEN_RE.findall(text.lower())


class Vocabulary:
    """token<->id map with PAD=0 and UNK=1 always present."""

    def __init__(self, tokens_by_rank=()):
        self.id_to_token = [PAD_TOKEN, UNK_TOKEN] + list(tokens_by_rank)
        self.token_to_id = {t: i for i, t in enumerate(self.id_to_token)}

    def __len__(self):
        return len(self.id_to_token)

    def id(self, token: str) -> int:
        return self.token_to_id.get(token, UNK_ID)

    def encode(self, tokens, limit: int) -> np.ndarray:
        ids = [self.id(t) for t in tokens[:limit]]
        return np.asarray(ids, dtype=np.int32)

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            for i, tok in enumerate(self.id_to_token):
                fh.write(f"{tok}\t{i}\n")

    @classmethod
    def load(cls, path):
        toks = []
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                tok, idx = line.rstrip("\n").split("\t")
                toks.append((int(idx), tok))
        toks.sort()
        ordered = [t for _, t in toks]
        if ordered[:2] != [PAD_TOKEN, UNK_TOKEN]:
            raise ValueError(f"vocabulary at {path} is missing PAD/UNK header entries")
        return cls(ordered[2:])


def build_vocabulary(texts, min_count: int = 1) -> Vocabulary:
    """Vocabulary over tokenized texts; built from the train split only.

    Tokens with frequency >= min_count get ids from 2 in descending-frequency
    order, ties broken lexicographically; everything else maps to UNK.
    """
    counts = Counter()
    for text in texts:
        counts.update(tokenize(text))
    kept = [t for t, c in counts.items() if c >= min_count]
    kept.sort(key=lambda t: (-counts[t], t))
    return Vocabulary(kept)


def split_dataset(interactions: list, seed: int) -> DatasetSplit:
    """Deterministic 80/10/10 split; members stay in corpus order inside splits."""
    n = len(interactions)
    if n < 10:
        raise ValueError(f"need at least 10 interactions to split, got {n}")
    order = list(range(n))
    SplitMix64(seed).shuffle(order)
    n_train = int(0.8 * n)
    n_val = int(0.1 * n)
    train_idx = sorted(order[:n_train])
    val_idx = sorted(order[n_train:n_train + n_val])
    test_idx = sorted(order[n_train + n_val:])
    return DatasetSplit(
        train=[interactions[i] for i in train_idx],
        validation=[interactions[i] for i in val_idx],
        test=[interactions[i] for i in test_idx],
        seed=seed,
        train_idx=train_idx,
        val_idx=val_idx,
        test_idx=test_idx,
    )


class ProfileStore:
    """Fixed-shape review profiles for one side (users or items).

    tokens[o, n] is the n-th kept training review of owner o, PAD-padded to
    review_len; partner[o, n] identifies the other side of that review so the
    target review can be masked out when scoring the pair it belongs to.
    """

    def __init__(self, n_owners: int, num_reviews: int, review_len: int):
        self.tokens = np.zeros((n_owners, num_reviews, review_len), dtype=np.int32)
        self.token_mask = np.zeros((n_owners, num_reviews, review_len), dtype=bool)
        self.review_mask = np.zeros((n_owners, num_reviews), dtype=bool)
        self.partner = np.full((n_owners, num_reviews), -1, dtype=np.int32)
        self._fill = np.zeros(n_owners, dtype=np.int32)

    def add_review(self, owner: int, partner: int, tokens: np.ndarray):
        slot = self._fill[owner]
        if slot >= self.tokens.shape[1]:
            return  # keep the first num_reviews reviews in corpus order
        k = min(len(tokens), self.tokens.shape[2])
        self.tokens[owner, slot, :k] = tokens[:k]
        self.token_mask[owner, slot, :k] = True
        self.review_mask[owner, slot] = True
        self.partner[owner, slot] = partner
        self._fill[owner] = slot + 1

    def gather(self, owners: np.ndarray, exclude_partner=None):
        """Profiles for a batch of owners: (tokens, token_mask, review_mask).

        With exclude_partner set (one id per owner), rows whose partner matches
        are masked off, which removes the target review from the encoding
        without reshaping the grid.
        """
        owners = np.asarray(owners)
        toks = self.tokens[owners]
        tmask = self.token_mask[owners]
        rmask = self.review_mask[owners]
        if exclude_partner is not None:
            drop = self.partner[owners] == np.asarray(exclude_partner).reshape(-1, 1)
            rmask = rmask & ~drop
            tmask = tmask & ~drop[:, :, None]
        return toks, tmask, rmask


def build_profiles(train_interactions, review_len: int, num_reviews: int,
                   n_users: int, n_items: int):
    """(user_store, item_store) over the train split.

    Owners with no training review (including the reserved unknown owner 0)
    keep an all-PAD grid with an all-false review mask.
    """
    if review_len < 1 or num_reviews < 1:
        raise ValueError("review_len and num_reviews must be >= 1")
    users = ProfileStore(n_users, num_reviews, review_len)
    items = ProfileStore(n_items, num_reviews, review_len)
    for inter in train_interactions:
        users.add_review(inter.user, inter.item, inter.tokens)
        items.add_review(inter.item, inter.user, inter.tokens)
    return users, items


@dataclass
class PreparedDataset:
    vocab: Vocabulary
    interactions: list          # corpus order
    split: DatasetSplit
    user_keys: list             # index -> key, index 0 reserved
    item_keys: list
    review_len: int

    @property
    def n_users(self):
        return len(self.user_keys)

    @property
    def n_items(self):
        return len(self.item_keys)

    def user_index(self, key: str) -> int:
        try:
            return self.user_keys.index(key, 1)
        except ValueError:
            return UNK_OWNER

    def item_index(self, key: str) -> int:
        try:
            return self.item_keys.index(key, 1)
        except ValueError:
            return UNK_OWNER

    def stats(self) -> dict:
        ratings = len(self.interactions)
        users = len(self.user_keys) - 1
        items = len(self.item_keys) - 1
        density = 100.0 * ratings / (users * items) if users and items else 0.0
        return {"users": users, "items": items, "ratings": ratings, "density": density}


def prepare_dataset(records, seed: int, min_count: int = 1,
                    review_len: int = 100) -> PreparedDataset:
    """Full in-memory pipeline: split raw records, build vocab on train, encode.

    The split is decided on raw records so no validation/test text can leak
    into the vocabulary.
    """
    raw_split = split_dataset(records, seed)

    user_keys = [UNK_TOKEN]
    item_keys = [UNK_TOKEN]
    user_index = {}
    item_index = {}
    for rec in records:
        if rec.user_key not in user_index:
            user_index[rec.user_key] = len(user_keys)
            user_keys.append(rec.user_key)
        if rec.item_key not in item_index:
            item_index[rec.item_key] = len(item_keys)
            item_keys.append(rec.item_key)

    vocab = build_vocabulary((r.text for r in raw_split.train), min_count)

    interactions = [
        Interaction(user_index[r.user_key], item_index[r.item_key], r.rating,
                    vocab.encode(tokenize(r.text), review_len))
        for r in records
    ]
    split = DatasetSplit(
        train=[interactions[i] for i in raw_split.train_idx],
        validation=[interactions[i] for i in raw_split.val_idx],
        test=[interactions[i] for i in raw_split.test_idx],
        seed=seed,
        train_idx=raw_split.train_idx,
        val_idx=raw_split.val_idx,
        test_idx=raw_split.test_idx,
    )
    return PreparedDataset(vocab, interactions, split, user_keys, item_keys, review_len)


# ---------------------------------------------------------------------------
# on-disk prepared-dataset directory
# ---------------------------------------------------------------------------

_HEADER_DTYPE = np.dtype("<u4")


def _record_dtype(review_len: int) -> np.dtype:
    return np.dtype([
        ("user", "<u4"), ("item", "<u4"), ("ntok", "<u4"),
        ("rating", "<f8"), ("tokens", "<u4", (review_len,)),
    ])


def save_prepared(ds: PreparedDataset, out_dir) -> None:
    """vocab.tsv, users.tsv, items.tsv, interactions.bin, split.json."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ds.vocab.save(out / "vocab.tsv")
    for name, keys in (("users.tsv", ds.user_keys), ("items.tsv", ds.item_keys)):
        with open(out / name, "w", encoding="utf-8") as fh:
            for i, key in enumerate(keys):
                fh.write(f"{key}\t{i}\n")

    n = len(ds.interactions)
    recs = np.zeros(n, dtype=_record_dtype(ds.review_len))
    for i, inter in enumerate(ds.interactions):
        recs[i]["user"] = inter.user
        recs[i]["item"] = inter.item
        recs[i]["ntok"] = len(inter.tokens)
        recs[i]["rating"] = inter.rating
        recs[i]["tokens"][:len(inter.tokens)] = inter.tokens
    header = np.array([n, ds.n_users, ds.n_items, ds.review_len], dtype=_HEADER_DTYPE)
    with open(out / "interactions.bin", "wb") as fh:
        fh.write(header.tobytes())
        fh.write(recs.tobytes())

    manifest = {
        "seed": ds.split.seed,
        "train": ds.split.train_idx,
        "validation": ds.split.val_idx,
        "test": ds.split.test_idx,
    }
    with open(out / "split.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, sort_keys=True, separators=(",", ":"))


def _load_keys(path):
    keys = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            key, idx = line.rstrip("\n").split("\t")
            keys.append((int(idx), key))
    keys.sort()
    return [k for _, k in keys]


def load_prepared(in_dir) -> PreparedDataset:
    src = Path(in_dir)
    vocab = Vocabulary.load(src / "vocab.tsv")
    user_keys = _load_keys(src / "users.tsv")
    item_keys = _load_keys(src / "items.tsv")

    with open(src / "interactions.bin", "rb") as fh:
        header = np.frombuffer(fh.read(4 * _HEADER_DTYPE.itemsize), dtype=_HEADER_DTYPE)
        n, n_users, n_items, review_len = (int(x) for x in header)
        recs = np.frombuffer(fh.read(), dtype=_record_dtype(review_len))
    if len(recs) != n:
        raise ValueError(f"interactions.bin corrupt: header says {n} records, found {len(recs)}")
    if n_users != len(user_keys) or n_items != len(item_keys):
        raise ValueError("interactions.bin header disagrees with users.tsv/items.tsv")

    interactions = [
        Interaction(int(r["user"]), int(r["item"]), float(r["rating"]),
                    r["tokens"][:int(r["ntok"])].astype(np.int32))
        for r in recs
    ]
    with open(src / "split.json", encoding="utf-8") as fh:
        manifest = json.load(fh)
    split = DatasetSplit(
        train=[interactions[i] for i in manifest["train"]],
        validation=[interactions[i] for i in manifest["validation"]],
        test=[interactions[i] for i in manifest["test"]],
        seed=manifest["seed"],
        train_idx=manifest["train"],
        val_idx=manifest["validation"],
        test_idx=manifest["test"],
    )
    return PreparedDataset(vocab, interactions, split, user_keys, item_keys, review_len)

"""Forward model: embeddings, convolutional review encoding, personalized
word- and review-level attention pooling, and the factorization-machine head.

Two towers share one word-embedding table: the user side encodes the user's
review profile with queries derived from the user id embedding, the item side
does the same with item queries. Each side yields a pooled text feature; the
concatenation goes through the FM to produce the rating.

Conventions:
  review matrix M is (word_dim, review_len), column k = embedding of token k;
  conv filters are stored flattened as (num_filters, window*word_dim) where
  column block c holds the taps for relative offset c - (window-1)//2;
  the PAD embedding row (row 0) is pinned to zero.
"""

from dataclasses import dataclass, replace

import numpy as np

from .rng import SplitMix64
from .tensor import ShapeError, masked_softmax, relu

PAD_ID = 0

# reviews are pushed through the convolution in chunks sized so the position-
# stacked GEMM buffer stays near this many bytes; keeps memory flat at
# full-scale dims without fragmenting the work at toy dims
CONV_BUFFER_BYTES = 64 << 20


def _conv_chunk_rows(side: "SideParams", word_dim: int, t: int) -> int:
    k, taps = side.conv_w.shape
    window = taps // word_dim
    per_row = 8 * (t + window) * window * max(k, word_dim)
    return max(64, CONV_BUFFER_BYTES // per_row)


@dataclass(frozen=True)
class Dims:
    vocab_size: int
    n_users: int
    n_items: int
    word_dim: int
    id_dim: int
    num_filters: int
    attn_dim: int
    window: int
    fm_dim: int
    review_len: int
    num_reviews: int

    def validate(self):
        for name, val in self.__dict__.items():
            if val < 1:
                raise ValueError(f"dim {name} must be >= 1, got {val}")
        if self.window % 2 == 0:
            raise ValueError(f"window must be odd, got {self.window}")


@dataclass
class SideParams:
    conv_w: np.ndarray        # (K, window*word_dim)
    conv_b: np.ndarray        # (K,)
    word_query_w: np.ndarray  # (attn_dim, id_dim)
    word_query_b: np.ndarray  # (attn_dim,)
    word_attn: np.ndarray     # (attn_dim, K) bilinear pairing, word level
    review_query_w: np.ndarray
    review_query_b: np.ndarray
    review_attn: np.ndarray   # (attn_dim, K) bilinear pairing, review level


@dataclass
class FMParams:
    bias: np.ndarray     # shape ()
    linear: np.ndarray   # (2K,)
    factors: np.ndarray  # (2K, fm_dim)


@dataclass
class ModelParams:
    dims: Dims
    word_emb: np.ndarray      # (vocab_size, word_dim), row 0 pinned to zero
    user_id_emb: np.ndarray   # (n_users, id_dim)
    item_id_emb: np.ndarray   # (n_items, id_dim)
    user: SideParams
    item: SideParams
    fm: FMParams
    conv_activation: str = "relu"

    def side(self, which: str) -> SideParams:
        return self.user if which == "user" else self.item

    def tensors(self):
        """(name, array) pairs in the canonical checkpoint order."""
        yield "word_emb", self.word_emb
        yield "user_id_emb", self.user_id_emb
        yield "item_id_emb", self.item_id_emb
        for tag, side in (("user", self.user), ("item", self.item)):
            yield f"{tag}.conv_w", side.conv_w
            yield f"{tag}.conv_b", side.conv_b
            yield f"{tag}.word_query_w", side.word_query_w
            yield f"{tag}.word_query_b", side.word_query_b
            yield f"{tag}.word_attn", side.word_attn
            yield f"{tag}.review_query_w", side.review_query_w
            yield f"{tag}.review_query_b", side.review_query_b
            yield f"{tag}.review_attn", side.review_attn
        yield "fm.bias", self.fm.bias
        yield "fm.linear", self.fm.linear
        yield "fm.factors", self.fm.factors

    def copy(self) -> "ModelParams":
        return replace(
            self,
            word_emb=self.word_emb.copy(),
            user_id_emb=self.user_id_emb.copy(),
            item_id_emb=self.item_id_emb.copy(),
            user=SideParams(**{k: v.copy() for k, v in self.user.__dict__.items()}),
            item=SideParams(**{k: v.copy() for k, v in self.item.__dict__.items()}),
            fm=FMParams(self.fm.bias.copy(), self.fm.linear.copy(), self.fm.factors.copy()),
        )

    def zeros_like(self) -> "ModelParams":
        out = self.copy()
        for _, arr in out.tensors():
            arr[...] = 0.0
        return out

    def assert_finite(self):
        for name, arr in self.tensors():
            if not np.all(np.isfinite(arr)):
                raise FloatingPointError(f"non-finite values in tensor {name}")


@dataclass
class AblationSpec:
    """Which attention sites run personalized vs uniform (plain averaging).

    A site is uniform when its side is uniform or its level is uniform; the
    query MLP and pairing matrix of a uniform site are unused and untrained.
    """
    user_attention: str = "personalized"
    item_attention: str = "personalized"
    word_level: str = "personalized"
    review_level: str = "personalized"

    def __post_init__(self):
        for name, val in self.__dict__.items():
            if val not in ("personalized", "uniform"):
                raise ValueError(f"{name} must be personalized|uniform, got {val!r}")

    def word_uniform(self, side: str) -> bool:
        side_mode = self.user_attention if side == "user" else self.item_attention
        return side_mode == "uniform" or self.word_level == "uniform"

    def review_uniform(self, side: str) -> bool:
        side_mode = self.user_attention if side == "user" else self.item_attention
        return side_mode == "uniform" or self.review_level == "uniform"


FULL_ATTENTION = AblationSpec()


@dataclass
class EncodedReview:
    vector: np.ndarray        # (K,) attention-pooled word features
    word_weights: np.ndarray  # (T,) weights; masked positions exactly 0


@dataclass
class SideRepresentation:
    vector: np.ndarray          # (K,) pooled side feature
    review_weights: np.ndarray  # (N,) weights; padding reviews exactly 0


@dataclass
class AttentionTrace:
    user_alpha: np.ndarray  # (N, T)
    user_beta: np.ndarray   # (N,)
    item_alpha: np.ndarray
    item_beta: np.ndarray


def _glorot(rng: SplitMix64, fan_in: int, fan_out: int, shape) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, shape)


def init_params(dims: Dims, seed: int, conv_activation: str = "relu") -> ModelParams:
    """Seed-deterministic init: fan-scaled uniform weights, zero biases,
    [-0.1, 0.1) embeddings, PAD embedding row zeroed."""
    dims.validate()
    if conv_activation not in ("relu", "tanh"):
        raise ValueError(f"conv_activation must be relu|tanh, got {conv_activation!r}")
    rng = SplitMix64(seed)
    d = dims

    word_emb = rng.uniform(-0.1, 0.1, (d.vocab_size, d.word_dim))
    word_emb[PAD_ID] = 0.0
    user_id_emb = rng.uniform(-0.1, 0.1, (d.n_users, d.id_dim))
    item_id_emb = rng.uniform(-0.1, 0.1, (d.n_items, d.id_dim))

    def make_side():
        taps = d.window * d.word_dim
        return SideParams(
            conv_w=_glorot(rng, taps, d.num_filters, (d.num_filters, taps)),
            conv_b=np.zeros(d.num_filters),
            word_query_w=_glorot(rng, d.id_dim, d.attn_dim, (d.attn_dim, d.id_dim)),
            word_query_b=np.zeros(d.attn_dim),
            word_attn=_glorot(rng, d.num_filters, d.attn_dim, (d.attn_dim, d.num_filters)),
            review_query_w=_glorot(rng, d.id_dim, d.attn_dim, (d.attn_dim, d.id_dim)),
            review_query_b=np.zeros(d.attn_dim),
            review_attn=_glorot(rng, d.num_filters, d.attn_dim, (d.attn_dim, d.num_filters)),
        )

    user_side = make_side()
    item_side = make_side()
    two_k = 2 * d.num_filters
    fm = FMParams(
        bias=np.zeros(()),
        linear=_glorot(rng, two_k, 1, (two_k,)),
        factors=_glorot(rng, two_k, d.fm_dim, (two_k, d.fm_dim)),
    )
    return ModelParams(dims, word_emb, user_id_emb, item_id_emb, user_side, item_side,
                       fm, conv_activation)


# ---------------------------------------------------------------------------
# single-review / single-pair operations
# ---------------------------------------------------------------------------

def embed_review(tokens: np.ndarray, word_emb: np.ndarray) -> np.ndarray:
    """(word_dim, T) matrix whose column k embeds token k; PAD columns are zero."""
    tokens = np.asarray(tokens)
    if tokens.size and (tokens.min() < 0 or tokens.max() >= word_emb.shape[0]):
        raise IndexError(
            f"token id out of range [0, {word_emb.shape[0]}): "
            f"min={tokens.min()} max={tokens.max()}")
    return word_emb[tokens].T.copy()


def _activate(x: np.ndarray, kind: str) -> np.ndarray:
    if kind == "relu":
        return np.maximum(x, 0.0)
    if kind == "tanh":
        return np.tanh(x)
    raise ValueError(f"unknown activation {kind!r}")


def conv_encode(m: np.ndarray, filters: np.ndarray, biases: np.ndarray,
                activation: str = "relu") -> np.ndarray:
    """Same-length 1-d convolution over columns of m with zero padding.

    Output (K, T): entry (j, k) applies filter j to the window of m centered
    at column k, plus bias, through the activation.
    """
    word_dim, t = m.shape
    k_filters, taps = filters.shape
    if taps % word_dim != 0:
        raise ShapeError(f"filter width {taps} not a multiple of word_dim {word_dim}")
    window = taps // word_dim
    if window % 2 == 0:
        raise ShapeError(f"window must be odd, got {window}")
    if biases.shape != (k_filters,):
        raise ShapeError(f"biases {biases.shape} vs filters {filters.shape}")
    half = (window - 1) // 2
    padded = np.zeros((word_dim, t + 2 * half))
    padded[:, half:half + t] = m
    windows = np.concatenate([padded[:, c:c + t] for c in range(window)], axis=0)
    return _activate(filters @ windows + biases[:, None], activation)


def query_vector(id_emb: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Personalized attention query: ReLU(w @ id_emb + b)."""
    if w.shape[1] != id_emb.shape[0] or w.shape[0] != b.shape[0]:
        raise ShapeError(f"query shapes: w {w.shape}, id {id_emb.shape}, b {b.shape}")
    return relu(w @ id_emb + b)


def word_attention_pool(c: np.ndarray, q: np.ndarray, pairing: np.ndarray,
                        token_mask: np.ndarray) -> EncodedReview:
    """Pool word features (K, T) with bilinear logits q' pairing c_k.

    Masked positions carry weight exactly 0; an all-masked review comes back
    as the zero vector so empty/padding reviews stay representable.
    """
    if pairing.shape != (q.shape[0], c.shape[0]):
        raise ShapeError(f"pairing {pairing.shape} vs query {q.shape} and features {c.shape}")
    logits = (pairing.T @ q) @ c  # (T,)
    weights = masked_softmax(logits, token_mask)
    return EncodedReview(vector=c @ weights, word_weights=weights)


def review_attention_pool(d: np.ndarray, q: np.ndarray, pairing: np.ndarray,
                          review_mask: np.ndarray) -> SideRepresentation:
    """Pool review vectors (N, K) into one side representation."""
    if pairing.shape != (q.shape[0], d.shape[1]):
        raise ShapeError(f"pairing {pairing.shape} vs query {q.shape} and reviews {d.shape}")
    logits = d @ (pairing.T @ q)  # (N,)
    weights = masked_softmax(logits, review_mask)
    return SideRepresentation(vector=d.T @ weights, review_weights=weights)


def uniform_weights(mask: np.ndarray) -> np.ndarray:
    """1/(unmasked count) over unmasked positions, rows without any -> all zero."""
    mask = np.asarray(mask, dtype=bool)
    counts = mask.sum(axis=-1, keepdims=True).astype(np.float64)
    return np.divide(mask.astype(np.float64), counts,
                     out=np.zeros(mask.shape), where=counts > 0)


def fm_predict(p_user: np.ndarray, p_item: np.ndarray, fm: FMParams) -> float:
    """FM rating: bias + linear + pairwise terms via the O(n*fm_dim) identity."""
    o = np.concatenate([p_user, p_item])
    if o.shape[0] != fm.linear.shape[0]:
        raise ShapeError(f"features {o.shape} vs fm linear {fm.linear.shape}")
    s = fm.factors.T @ o                    # (fm_dim,)
    sq = (fm.factors ** 2).T @ (o ** 2)     # (fm_dim,)
    return float(fm.bias + fm.linear @ o + 0.5 * np.sum(s * s - sq))


def encode_profile(tokens: np.ndarray, token_mask: np.ndarray, review_mask: np.ndarray,
                   owner_id: int, side: SideParams, id_emb: np.ndarray,
                   word_emb: np.ndarray, activation: str,
                   word_uniform: bool = False, review_uniform: bool = False):
    """One owner's (N, T) profile -> (SideRepresentation, (N, T) word weights).

    Composes embed_review -> conv_encode -> word_attention_pool per review,
    then review_attention_pool across reviews.
    """
    n, t = tokens.shape
    q_w = query_vector(id_emb[owner_id], side.word_query_w, side.word_query_b)
    q_r = query_vector(id_emb[owner_id], side.review_query_w, side.review_query_b)

    review_vecs = np.zeros((n, side.conv_w.shape[0]))
    word_weights = np.zeros((n, t))
    for j in range(n):
        c = conv_encode(embed_review(tokens[j], word_emb), side.conv_w, side.conv_b,
                        activation)
        if word_uniform:
            weights = uniform_weights(token_mask[j])
            enc = EncodedReview(vector=c @ weights, word_weights=weights)
        else:
            enc = word_attention_pool(c, q_w, side.word_attn, token_mask[j])
        review_vecs[j] = enc.vector
        word_weights[j] = enc.word_weights

    if review_uniform:
        weights = uniform_weights(review_mask)
        rep = SideRepresentation(vector=review_vecs.T @ weights, review_weights=weights)
    else:
        rep = review_attention_pool(review_vecs, q_r, side.review_attn, review_mask)
    return rep, word_weights


def forward(user: int, item: int, user_store, item_store, params: ModelParams,
            exclude_target: bool = False, ablation: AblationSpec = FULL_ATTENTION):
    """Score one (user, item) pair; returns (rating, AttentionTrace)."""
    excl_u = np.array([item]) if exclude_target else None
    excl_i = np.array([user]) if exclude_target else None
    u_tok, u_tmask, u_rmask = user_store.gather(np.array([user]), excl_u)
    i_tok, i_tmask, i_rmask = item_store.gather(np.array([item]), excl_i)

    u_rep, u_alpha = encode_profile(
        u_tok[0], u_tmask[0], u_rmask[0], user, params.user, params.user_id_emb,
        params.word_emb, params.conv_activation,
        ablation.word_uniform("user"), ablation.review_uniform("user"))
    i_rep, i_alpha = encode_profile(
        i_tok[0], i_tmask[0], i_rmask[0], item, params.item, params.item_id_emb,
        params.word_emb, params.conv_activation,
        ablation.word_uniform("item"), ablation.review_uniform("item"))

    rating = fm_predict(u_rep.vector, i_rep.vector, params.fm)
    trace = AttentionTrace(u_alpha, u_rep.review_weights, i_alpha, i_rep.review_weights)
    return rating, trace


# ---------------------------------------------------------------------------
# batched forward used by the training loop
# ---------------------------------------------------------------------------

@dataclass
class SideCache:
    """Everything backward() needs for one side of one batch.

    The conv feature maps are deliberately not kept: backward recomputes them
    chunk by chunk from the tokens, which bounds peak memory at the cost of
    one extra convolution pass.
    """
    owners: np.ndarray       # (B,)
    tokens: np.ndarray       # (B, N, T)
    token_mask: np.ndarray   # (B, N, T)
    review_mask: np.ndarray  # (B, N)
    uid: np.ndarray          # (B, id_dim)
    pre_qw: np.ndarray       # (B, attn_dim) or None when word level is uniform
    a_q: np.ndarray          # (B, K) pairing-transformed word query, or None
    alpha: np.ndarray        # (B, N, T)
    d_vecs: np.ndarray       # (B, N, K)
    pre_qr: np.ndarray       # (B, attn_dim) or None when review level is uniform
    a_r: np.ndarray          # (B, K) or None
    beta: np.ndarray         # (B, N)
    pooled: np.ndarray       # (B, K)
    word_uniform: bool
    review_uniform: bool


def _stacked_filters(side: SideParams, word_dim: int) -> np.ndarray:
    """conv_w (K, window*word_dim) -> (word_dim, window*K) with offset-major
    column blocks, so one GEMM evaluates every filter at every offset."""
    k, taps = side.conv_w.shape
    window = taps // word_dim
    return np.ascontiguousarray(
        side.conv_w.reshape(k, window, word_dim).transpose(2, 1, 0).reshape(word_dim, window * k))


def _conv_chunk_forward(tokens_flat: np.ndarray, side: SideParams, word_emb: np.ndarray,
                        activation: str):
    """Convolution features for a chunk of flattened reviews, time-major.

    Returns (c, pre, emb_pad, stacked) where c and pre are (R, T, K); the
    padded embeddings and stacked filter matrix are reused by backward.
    """
    r, t = tokens_flat.shape
    word_dim = word_emb.shape[1]
    k, taps = side.conv_w.shape
    window = taps // word_dim
    half = (window - 1) // 2

    emb_pad = np.zeros((r, t + 2 * half, word_dim))
    emb_pad[:, half:half + t] = word_emb[tokens_flat]
    stacked = _stacked_filters(side, word_dim)
    full = (emb_pad.reshape(-1, word_dim) @ stacked).reshape(r, t + 2 * half, window, k)
    pre = side.conv_b + full[:, 0:t, 0]
    for c in range(1, window):
        pre += full[:, c:c + t, c]
    return _activate(pre, activation), pre, emb_pad, stacked


def encode_side_batch(params: ModelParams, side_name: str, store, owners: np.ndarray,
                      exclude_partner=None, ablation: AblationSpec = FULL_ATTENTION) -> SideCache:
    """Vectorized profile encoding for a batch of owners on one side."""
    side = params.side(side_name)
    id_emb = params.user_id_emb if side_name == "user" else params.item_id_emb
    word_uniform = ablation.word_uniform(side_name)
    review_uniform = ablation.review_uniform(side_name)

    tokens, token_mask, review_mask = store.gather(owners, exclude_partner)
    b, n, t = tokens.shape
    k = side.conv_w.shape[0]
    uid = id_emb[owners]  # (B, id_dim)

    pre_qw = a_q = None
    if not word_uniform:
        pre_qw = uid @ side.word_query_w.T + side.word_query_b  # (B, attn_dim)
        a_q = np.maximum(pre_qw, 0.0) @ side.word_attn          # (B, K)

    alpha = np.zeros((b, n, t))
    d_vecs = np.zeros((b, n, k))
    tokens_flat = tokens.reshape(b * n, t)
    tmask_flat = token_mask.reshape(b * n, t)
    chunk = _conv_chunk_rows(side, params.word_emb.shape[1], t)
    for lo in range(0, b * n, chunk):
        hi = min(lo + chunk, b * n)
        c, _, _, _ = _conv_chunk_forward(tokens_flat[lo:hi], side, params.word_emb,
                                         params.conv_activation)  # (r, T, K)
        if word_uniform:
            w = uniform_weights(tmask_flat[lo:hi])
        else:
            a_q_rep = np.repeat(a_q, n, axis=0)[lo:hi]            # (r, K)
            logits = np.matmul(c, a_q_rep[:, :, None])[:, :, 0]   # (r, T)
            w = masked_softmax(logits, tmask_flat[lo:hi])
        alpha.reshape(b * n, t)[lo:hi] = w
        d_vecs.reshape(b * n, k)[lo:hi] = np.matmul(w[:, None, :], c)[:, 0, :]

    pre_qr = a_r = None
    if review_uniform:
        beta = uniform_weights(review_mask)
    else:
        pre_qr = uid @ side.review_query_w.T + side.review_query_b
        a_r = np.maximum(pre_qr, 0.0) @ side.review_attn          # (B, K)
        logits = np.matmul(d_vecs, a_r[:, :, None])[:, :, 0]      # (B, N)
        beta = masked_softmax(logits, review_mask)
    pooled = np.matmul(beta[:, None, :], d_vecs)[:, 0, :]         # (B, K)

    return SideCache(owners, tokens, token_mask, review_mask, uid, pre_qw, a_q,
                     alpha, d_vecs, pre_qr, a_r, beta, pooled, word_uniform,
                     review_uniform)


def fm_predict_batch(fm: FMParams, features: np.ndarray) -> np.ndarray:
    """FM scores for (B, 2K) feature rows."""
    s = features @ fm.factors                       # (B, fm_dim)
    sq = (features ** 2) @ (fm.factors ** 2)        # (B, fm_dim)
    return fm.bias + features @ fm.linear + 0.5 * np.sum(s * s - sq, axis=1)


def predict_batch(params: ModelParams, user_store, item_store, users: np.ndarray,
                  items: np.ndarray, exclude_target: bool = False,
                  ablation: AblationSpec = FULL_ATTENTION):
    """Batched ratings; returns (predictions, user cache, item cache)."""
    users = np.asarray(users)
    items = np.asarray(items)
    u_cache = encode_side_batch(params, "user", user_store, users,
                                items if exclude_target else None, ablation)
    i_cache = encode_side_batch(params, "item", item_store, items,
                                users if exclude_target else None, ablation)
    features = np.concatenate([u_cache.pooled, i_cache.pooled], axis=1)
    return fm_predict_batch(params.fm, features), u_cache, i_cache

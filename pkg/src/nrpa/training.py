"""Squared-error objective, exact reverse-mode gradients through the whole
forward graph, Adam, and the early-stopping training loop.

Gradients are accumulated into a ModelParams-shaped container, derived by hand
for every stage: FM fast form, masked softmax at both attention levels, the
query MLPs (ReLU subgradient 0 at 0), the convolution (through the offset-
stacked filter layout) and the embedding lookups (scatter-add). The word-level
stage recomputes conv features chunk by chunk instead of caching them,
mirroring the forward pass.
"""

from dataclasses import dataclass

import numpy as np

from . import model as M
from .data import PAD_ID
from .rng import SplitMix64

Gradients = M.ModelParams  # same tensor structure, gradient values


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class TrainConfig:
    word_dim: int = 300
    id_dim: int = 32
    num_filters: int = 80
    attn_dim: int = 80
    window: int = 3
    fm_dim: int = 10
    review_len: int = 100
    num_reviews: int = 15
    learning_rate: float = 1e-3
    batch_size: int = 100
    max_epochs: int = 50
    patience: int = 5
    l2_weight: float = 1e-6
    seed: int = 1
    exclude_target: bool = True
    conv_activation: str = "relu"

    def validate(self):
        for name in ("word_dim", "id_dim", "num_filters", "attn_dim", "window",
                     "fm_dim", "review_len", "num_reviews", "batch_size",
                     "max_epochs", "patience"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.l2_weight < 0:
            raise ValueError("l2_weight must be non-negative")
        if self.window % 2 == 0:
            raise ValueError("window must be odd")
        if self.conv_activation not in ("relu", "tanh"):
            raise ValueError(f"conv_activation must be relu|tanh, got {self.conv_activation!r}")

    def dims(self, vocab_size: int, n_users: int, n_items: int) -> M.Dims:
        return M.Dims(vocab_size, n_users, n_items, self.word_dim, self.id_dim,
                      self.num_filters, self.attn_dim, self.window, self.fm_dim,
                      self.review_len, self.num_reviews)


def _regularized(params: M.ModelParams, ablation: M.AblationSpec):
    """Weight tensors under L2: everything except biases, the PAD embedding
    row, and the attention parameters of sites ablated to uniform."""
    yield params.word_emb[1:]
    yield params.user_id_emb
    yield params.item_id_emb
    for name in ("user", "item"):
        side = params.side(name)
        yield side.conv_w
        if not ablation.word_uniform(name):
            yield side.word_query_w
            yield side.word_attn
        if not ablation.review_uniform(name):
            yield side.review_query_w
            yield side.review_attn
    yield params.fm.linear
    yield params.fm.factors


def _l2_value(params, l2_weight, ablation) -> float:
    if l2_weight == 0.0:
        return 0.0
    return l2_weight * sum(float(np.sum(t * t)) for t in _regularized(params, ablation))


def _batch_arrays(batch):
    if len(batch) == 0:
        raise ValueError("empty batch")
    users = np.array([b.user for b in batch], dtype=np.int64)
    items = np.array([b.item for b in batch], dtype=np.int64)
    ratings = np.array([b.rating for b in batch], dtype=np.float64)
    return users, items, ratings


def loss(batch, params: M.ModelParams, stores, l2_weight: float = 0.0,
         ablation: M.AblationSpec = M.FULL_ATTENTION,
         exclude_target: bool = False) -> float:
    """Mean squared residual over the batch plus the L2 penalty."""
    users, items, ratings = _batch_arrays(batch)
    user_store, item_store = stores
    preds, _, _ = M.predict_batch(params, user_store, item_store, users, items,
                                  exclude_target, ablation)
    res = preds - ratings
    return float(np.mean(res * res)) + _l2_value(params, l2_weight, ablation)


def _backward_side(cache: M.SideCache, side: M.SideParams, grads_side: M.SideParams,
                   d_pooled: np.ndarray, word_emb: np.ndarray,
                   grad_word_emb: np.ndarray, grad_id_emb: np.ndarray,
                   activation: str):
    """Accumulate gradients for one side given d loss / d pooled (B, K)."""
    b, n, t = cache.tokens.shape
    k = side.conv_w.shape[0]
    word_dim = word_emb.shape[1]
    window = side.conv_w.shape[1] // word_dim
    half = (window - 1) // 2

    beta, d_vecs = cache.beta, cache.d_vecs
    d_d = beta[:, :, None] * d_pooled[:, None, :]                 # (B, N, K)
    duid = np.zeros_like(cache.uid)

    if not cache.review_uniform:
        dbeta = np.matmul(d_vecs, d_pooled[:, :, None])[:, :, 0]  # (B, N)
        inner = np.sum(beta * dbeta, axis=1, keepdims=True)
        de = beta * (dbeta - inner)                               # masked rows stay 0
        d_d += de[:, :, None] * cache.a_r[:, None, :]
        da_r = np.matmul(de[:, None, :], d_vecs)[:, 0, :]         # (B, K)
        q_r = np.maximum(cache.pre_qr, 0.0)
        grads_side.review_attn += q_r.T @ da_r
        dq_r = da_r @ side.review_attn.T
        dpre = dq_r * (cache.pre_qr > 0)
        grads_side.review_query_w += dpre.T @ cache.uid
        grads_side.review_query_b += dpre.sum(axis=0)
        duid += dpre @ side.review_query_w

    # word level, chunked exactly like the forward pass
    tokens_flat = cache.tokens.reshape(b * n, t)
    alpha_flat = cache.alpha.reshape(b * n, t)
    d_d_flat = d_d.reshape(b * n, k)
    da_q_flat = None if cache.word_uniform else np.zeros((b * n, k))
    a_q_rep = None if cache.word_uniform else np.repeat(cache.a_q, n, axis=0)

    chunk = M._conv_chunk_rows(side, word_dim, t)
    for lo in range(0, b * n, chunk):
        hi = min(lo + chunk, b * n)
        c, pre, emb_pad, stacked = M._conv_chunk_forward(tokens_flat[lo:hi], side,
                                                         word_emb, activation)
        dd = d_d_flat[lo:hi]
        al = alpha_flat[lo:hi]
        dc = al[:, :, None] * dd[:, None, :]                      # (r, T, K)
        if not cache.word_uniform:
            dalpha = np.matmul(c, dd[:, :, None])[:, :, 0]        # (r, T)
            inner = np.sum(al * dalpha, axis=1, keepdims=True)
            dg = al * (dalpha - inner)
            dc += dg[:, :, None] * a_q_rep[lo:hi][:, None, :]
            da_q_flat[lo:hi] = np.matmul(dg[:, None, :], c)[:, 0, :]
        if activation == "relu":
            dpre = dc * (pre > 0)
        else:
            dpre = dc * (1.0 - c * c)
        grads_side.conv_b += dpre.sum(axis=(0, 1))

        # undo the offset summation, then one GEMM pair for filter and
        # embedding gradients through the stacked-filter layout
        rows = hi - lo
        dfull = np.zeros((rows, t + 2 * half, window, k))
        for cpos in range(window):
            dfull[:, cpos:cpos + t, cpos] = dpre
        dfull2 = dfull.reshape(-1, window * k)
        emb2 = emb_pad.reshape(-1, word_dim)
        dstacked = emb2.T @ dfull2                                # (word_dim, window*K)
        grads_side.conv_w += dstacked.reshape(word_dim, window, k) \
            .transpose(2, 1, 0).reshape(k, window * word_dim)
        demb_pad = (dfull2 @ stacked.T).reshape(rows, t + 2 * half, word_dim)
        np.add.at(grad_word_emb, tokens_flat[lo:hi].ravel(),
                  demb_pad[:, half:half + t].reshape(-1, word_dim))

    if not cache.word_uniform:
        da_q = da_q_flat.reshape(b, n, k).sum(axis=1)             # (B, K)
        q_w = np.maximum(cache.pre_qw, 0.0)
        grads_side.word_attn += q_w.T @ da_q
        dq_w = da_q @ side.word_attn.T
        dpre = dq_w * (cache.pre_qw > 0)
        grads_side.word_query_w += dpre.T @ cache.uid
        grads_side.word_query_b += dpre.sum(axis=0)
        duid += dpre @ side.word_query_w

    np.add.at(grad_id_emb, cache.owners, duid)


def backward(batch, params: M.ModelParams, stores, l2_weight: float = 0.0,
             ablation: M.AblationSpec = M.FULL_ATTENTION,
             exclude_target: bool = False):
    """Loss and its exact gradients w.r.t. every parameter tensor."""
    users, items, ratings = _batch_arrays(batch)
    user_store, item_store = stores
    preds, u_cache, i_cache = M.predict_batch(params, user_store, item_store,
                                              users, items, exclude_target, ablation)
    if not np.all(np.isfinite(preds)):
        raise FloatingPointError("non-finite predictions in forward pass")
    res = preds - ratings
    nb = len(batch)
    value = float(np.mean(res * res)) + _l2_value(params, l2_weight, ablation)

    grads = params.zeros_like()
    d_r = 2.0 * res / nb                                          # (B,)

    # FM head
    fm = params.fm
    features = np.concatenate([u_cache.pooled, i_cache.pooled], axis=1)  # (B, 2K)
    s = features @ fm.factors                                     # (B, fm_dim)
    grads.fm.bias += d_r.sum()
    grads.fm.linear += d_r @ features
    r2 = np.sum(fm.factors ** 2, axis=1)                          # (2K,)
    d_feat = d_r[:, None] * (fm.linear[None, :] + s @ fm.factors.T - features * r2[None, :])
    grads.fm.factors += (features * d_r[:, None]).T @ s \
        - np.sum((features ** 2) * d_r[:, None], axis=0)[:, None] * fm.factors

    k = params.dims.num_filters
    _backward_side(u_cache, params.user, grads.user, d_feat[:, :k], params.word_emb,
                   grads.word_emb, grads.user_id_emb, params.conv_activation)
    _backward_side(i_cache, params.item, grads.item, d_feat[:, k:], params.word_emb,
                   grads.word_emb, grads.item_id_emb, params.conv_activation)

    if l2_weight:
        for g_t, p_t in zip(_regularized(grads, ablation), _regularized(params, ablation)):
            g_t += 2.0 * l2_weight * p_t

    grads.word_emb[PAD_ID] = 0.0
    grads.assert_finite()
    return value, grads


# ---------------------------------------------------------------------------
# optimizer
# ---------------------------------------------------------------------------

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


@dataclass
class AdamState:
    step: int
    m: M.ModelParams
    v: M.ModelParams

    @classmethod
    def for_params(cls, params: M.ModelParams) -> "AdamState":
        return cls(0, params.zeros_like(), params.zeros_like())


def adam_step(params: M.ModelParams, grads: Gradients, state: AdamState,
              lr: float) -> None:
    """One in-place Adam update with bias correction; re-pins the PAD row."""
    state.step += 1
    t = state.step
    correct1 = 1.0 - ADAM_BETA1 ** t
    correct2 = 1.0 - ADAM_BETA2 ** t
    for (name, p), (gname, g), (_, m), (_, v) in zip(
            params.tensors(), grads.tensors(), state.m.tensors(), state.v.tensors()):
        if p.shape != g.shape:
            raise ValueError(f"gradient shape mismatch for {name}: {p.shape} vs {g.shape}")
        m[...] = ADAM_BETA1 * m + (1.0 - ADAM_BETA1) * g
        v[...] = ADAM_BETA2 * v + (1.0 - ADAM_BETA2) * (g * g)
        p -= lr * (m / correct1) / (np.sqrt(v / correct2) + ADAM_EPS)
    params.word_emb[PAD_ID] = 0.0


# ---------------------------------------------------------------------------
# training loop
# ---------------------------------------------------------------------------

@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_mse: float


def train(config: TrainConfig, dataset, stores,
          ablation: M.AblationSpec = M.FULL_ATTENTION):
    """Mini-batch training with early stopping on validation MSE.

    Returns (best_params, history). Shuffling is seed-deterministic and the
    whole run is single-threaded, so identical config + dataset reproduce the
    identical history and parameters.
    """
    from .evaluation import evaluate  # local import, evaluation layers on top

    config.validate()
    dims = config.dims(len(dataset.vocab), dataset.n_users, dataset.n_items)
    params = M.init_params(dims, config.seed, config.conv_activation)
    state = AdamState.for_params(params)
    shuffle_rng = SplitMix64(config.seed).derive(1)

    train_set = list(dataset.split.train)
    history = []
    best_val = np.inf
    best_params = params.copy()
    epochs_since_best = 0

    for epoch in range(1, config.max_epochs + 1):
        shuffle_rng.shuffle(train_set)
        total = 0.0
        for lo in range(0, len(train_set), config.batch_size):
            batch = train_set[lo:lo + config.batch_size]
            value, grads = backward(batch, params, stores, config.l2_weight, ablation)
            if not np.isfinite(value):
                raise TrainingDiverged(f"non-finite loss at epoch {epoch}")
            adam_step(params, grads, state, config.learning_rate)
            total += value * len(batch)
        train_loss = total / len(train_set)

        val_mse = evaluate(params, dataset.split.validation, stores, ablation,
                           exclude_target=config.exclude_target)
        history.append(EpochRecord(epoch, train_loss, val_mse))

        if val_mse < best_val:
            best_val = val_mse
            best_params = params.copy()
            epochs_since_best = 0
        else:
            epochs_since_best += 1
            if epochs_since_best >= config.patience:
                break
    return best_params, history

import numpy as np
import pytest

from nrpa import model as M
from nrpa.data import Interaction, ProfileStore, build_profiles, prepare_dataset
from nrpa.evaluation import make_synthetic_corpus

# toy dimensions small enough for finite-difference sweeps over every tensor
TOY_DIMS = M.Dims(vocab_size=20, n_users=3, n_items=3, word_dim=5, id_dim=4,
                  num_filters=6, attn_dim=6, window=3, fm_dim=2, review_len=7,
                  num_reviews=3)


def toy_stores():
    """Deterministic 2-user/2-item profile pair with underfull and overlong
    reviews (owner 0 is the reserved cold-start slot, all padding)."""
    users = ProfileStore(3, 3, 7)
    items = ProfileStore(3, 3, 7)
    reviews = [
        (1, 1, [2, 3, 4, 5, 6]),
        (1, 2, [7, 8]),
        (2, 1, [9, 10, 11, 2, 3, 4, 5, 17, 18]),  # truncated to 7
        (2, 2, [12, 13, 14]),
        (2, 1, [15, 16, 2]),
    ]
    for u, i, toks in reviews:
        arr = np.array(toks, dtype=np.int32)
        users.add_review(u, i, arr)
        items.add_review(i, u, arr)
    return users, items


def toy_batch():
    return [Interaction(1, 1, 4.0, None), Interaction(1, 2, 3.0, None),
            Interaction(2, 1, 5.0, None), Interaction(2, 2, 2.0, None)]


@pytest.fixture
def toy_params():
    return M.init_params(TOY_DIMS, seed=7)


@pytest.fixture(scope="session")
def tiny_dataset():
    """60-interaction synthetic corpus through the full prepare pipeline."""
    records = make_synthetic_corpus(seed=3, n_users=12, n_items=8, reviews_per_user=5)
    return prepare_dataset(records, seed=9, min_count=1, review_len=14)


@pytest.fixture(scope="session")
def tiny_stores(tiny_dataset):
    ds = tiny_dataset
    return build_profiles(ds.split.train, 12, 4, ds.n_users, ds.n_items)

import os

# tiny GEMMs thrash on multiple BLAS threads; pin before numpy spins up
os.environ.setdefault("OMP_NUM_THREADS", "1")
os.environ.setdefault("OPENBLAS_NUM_THREADS", "1")

import pytest

from dedsi.corpus import make_splits, SplitSpec
from dedsi.synthetic import synthetic_corpus
from dedsi.vocab import build_vocab


@pytest.fixture(scope="session")
def tiny_corpus():
    return synthetic_corpus(8, 12, seed=101)


@pytest.fixture(scope="session")
def tiny_splits(tiny_corpus):
    return make_splits(tiny_corpus, SplitSpec(8, 2, 2))


@pytest.fixture(scope="session")
def tiny_vocab(tiny_corpus, tiny_splits):
    return build_vocab(tiny_corpus, train_pairs=tiny_splits[0])

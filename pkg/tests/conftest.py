import math

import numpy as np
import pytest

from cmasd.lm import BOS, EOS, TokenDistribution, Vocabulary, build_vocabulary, train_ngram

CORPUS = (
    "the cat sat on the mat. the dog sat on the log. "
    "a cat and a dog met on a mat and then the cat ran off.\n"
    "the end of the story is near, the cat said to the dog.\n"
)


class ConstantModel:
    """Returns the same distribution at every context."""

    def __init__(self, vocabulary, probs):
        self.vocabulary = vocabulary
        self.dist = TokenDistribution.from_probs(probs)

    def next_distribution(self, context):
        return self.dist


class TableModel:
    """Distribution picked by position: ``probs_at(len(context))``."""

    def __init__(self, vocabulary, probs_at):
        self.vocabulary = vocabulary
        self.probs_at = probs_at

    def next_distribution(self, context):
        return TokenDistribution.from_probs(self.probs_at(len(context)))


@pytest.fixture
def abc_vocab():
    # ids: BOS=0, EOS=1, a=2, b=3, c=4
    return Vocabulary((BOS, EOS, "a", "b", "c"), mode="char")


@pytest.fixture
def corpus_pair():
    vocab = build_vocabulary(CORPUS, "char")
    return train_ngram(CORPUS, vocab, 2), train_ngram(CORPUS, vocab, 4)


def random_distribution(rng, size, zero_frac=0.0):
    p = rng.dirichlet(np.full(size, rng.uniform(0.1, 2.0)))
    if zero_frac:
        mask = rng.random(size) < zero_frac
        mask[int(np.argmax(p))] = False
        p[mask] = 0.0
        p /= p.sum()
    return p


def shannon_nats(probs):
    return -sum(p * math.log(p) for p in probs if p > 0)

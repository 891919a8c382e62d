"""Per-token confidence scores over a drafter's next-token distribution.

All scores lie in [0, 1], higher meaning more confident. Logits are taken to
be log-probabilities; the top-2 margin is invariant to the per-position
log-softmax shift.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .lm import TokenDistribution

WEIGHT_TOL = 1e-9


class ConfigError(ValueError):
    """Invalid decoding or confidence configuration."""


@dataclass(frozen=True)
class ConfidenceWeights:
    lambda_ent: float = 1 / 3
    lambda_margin: float = 1 / 3
    lambda_soft: float = 1 / 3
    sigmoid_sharpness: float = 1.0

    def __post_init__(self):
        lams = (self.lambda_ent, self.lambda_margin, self.lambda_soft)
        if any(not 0.0 <= x <= 1.0 for x in lams):
            raise ConfigError(f"confidence weights must lie in [0, 1]: {lams}")
        if abs(sum(lams) - 1.0) > WEIGHT_TOL:
            raise ConfigError(f"confidence weights must sum to 1, got {sum(lams)!r}")
        if not self.sigmoid_sharpness > 0.0:
            raise ConfigError(f"sigmoid_sharpness must be > 0, got {self.sigmoid_sharpness}")

    @classmethod
    def only(cls, signal: str, sharpness: float = 1.0) -> ConfidenceWeights:
        """One-hot weighting on ``'entropy'``, ``'margin'`` or ``'softmax'``."""
        onehot = {"entropy": (1.0, 0.0, 0.0), "margin": (0.0, 1.0, 0.0), "softmax": (0.0, 0.0, 1.0)}
        if signal not in onehot:
            raise ConfigError(f"unknown confidence signal {signal!r}")
        return cls(*onehot[signal], sigmoid_sharpness=sharpness)


@dataclass(frozen=True)
class ConfidenceScore:
    value: float
    entropy: float
    margin: float
    softmax: float

    @property
    def components(self) -> tuple[float, float, float]:
        return (self.entropy, self.margin, self.softmax)


def _sigmoid(x: float) -> float:
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    e = math.exp(x)
    return e / (1.0 + e)


def _top2(lp: np.ndarray) -> tuple[float, float]:
    part = np.partition(lp, lp.shape[0] - 2)
    return float(part[-1]), float(part[-2])


def entropy_confidence(dist: TokenDistribution) -> float:
    """``1 - H / ln|V|`` with Shannon entropy ``H`` in nats; zero-probability terms contribute 0."""
    lp = dist.log_probs
    finite = np.isfinite(lp)
    h = -float(np.dot(np.exp(lp[finite]), lp[finite]))
    score = 1.0 - h / math.log(lp.shape[0])
    return min(1.0, max(0.0, score))


def _margin_score(first: float, second: float, sharpness: float) -> float:
    if second == -math.inf:
        return 1.0
    return _sigmoid(sharpness * (first - second))


def _softmax_score(first: float, second: float, vocab_size: int) -> float:
    gap = math.exp(first) - (math.exp(second) if second > -math.inf else 0.0)
    return min(1.0, max(0.0, gap / (1.0 - 1.0 / vocab_size)))


def logit_margin_confidence(dist: TokenDistribution, sharpness: float = 1.0) -> float:
    """Sigmoid of the scaled top-2 log-prob gap. A zero-probability runner-up saturates to 1."""
    if not sharpness > 0.0:
        raise ConfigError(f"sharpness must be > 0, got {sharpness}")
    return _margin_score(*_top2(dist.log_probs), sharpness)


def softmax_margin_confidence(dist: TokenDistribution) -> float:
    """Top-2 probability gap over ``1 - 1/|V|``, clamped to [0, 1]."""
    return _softmax_score(*_top2(dist.log_probs), dist.size)


def ensemble_confidence(dist: TokenDistribution, weights: ConfidenceWeights = ConfidenceWeights()) -> ConfidenceScore:
    first, second = _top2(dist.log_probs)
    return combine_components(
        entropy_confidence(dist),
        _margin_score(first, second, weights.sigmoid_sharpness),
        _softmax_score(first, second, dist.size),
        weights,
    )


def combine_components(ent: float, mar: float, soft: float, weights: ConfidenceWeights) -> ConfidenceScore:
    value = weights.lambda_ent * ent + weights.lambda_margin * mar + weights.lambda_soft * soft
    # weights may sum to 1 +- 1e-9
    return ConfidenceScore(min(1.0, max(0.0, value)), ent, mar, soft)

"""Confidence-driven control of the draft window and the verification margin."""

from __future__ import annotations

import math
from collections.abc import Sequence
from dataclasses import dataclass

from .confidence import ConfigError

TAU_DIRECTIONS = ("formula", "inverted")


@dataclass(frozen=True)
class DraftControllerConfig:
    k_min: int = 1
    k_max: int = 25
    alpha: float = 1.0

    def __post_init__(self):
        if not 1 <= self.k_min <= self.k_max:
            raise ConfigError(f"need 1 <= k_min <= k_max, got k_min={self.k_min}, k_max={self.k_max}")
        if not 0.0 < self.alpha <= 1.0:
            raise ConfigError(f"alpha must lie in (0, 1], got {self.alpha}")


@dataclass(frozen=True)
class VerificationConfig:
    """Acceptance rule parameters.

    ``strict=True`` pins ``beta_rank=1, tau_base=0, gamma=0`` and turns the
    rule into an exact argmax match. ``tau_direction='inverted'`` grows the
    margin with confidence instead of with uncertainty.
    """

    tau_base: float = 0.1
    gamma: float = 1.0
    beta_rank: int = 2
    strict: bool = False
    tau_direction: str = "formula"

    def __post_init__(self):
        if self.strict:
            object.__setattr__(self, "tau_base", 0.0)
            object.__setattr__(self, "gamma", 0.0)
            object.__setattr__(self, "beta_rank", 1)
        if self.tau_base < 0 or self.gamma < 0:
            raise ConfigError(f"tau_base and gamma must be >= 0, got {self.tau_base}, {self.gamma}")
        if self.beta_rank < 1:
            raise ConfigError(f"beta_rank must be >= 1, got {self.beta_rank}")
        if self.tau_direction not in TAU_DIRECTIONS:
            raise ConfigError(f"tau_direction must be one of {TAU_DIRECTIONS}, got {self.tau_direction!r}")


def average_confidence(scores: Sequence[float]) -> float:
    if len(scores) == 0:
        raise ValueError("cannot average an empty list of confidences")
    return math.fsum(scores) / len(scores)


def draft_length(c_bar: float, cfg: DraftControllerConfig) -> int:
    """``clip(floor(alpha * c_bar * k_max), k_min, k_max)``."""
    if not 0.0 <= c_bar <= 1.0:
        raise ValueError(f"average confidence must lie in [0, 1], got {c_bar}")
    return min(cfg.k_max, max(cfg.k_min, math.floor(cfg.alpha * c_bar * cfg.k_max)))


def verification_threshold(c_t: float, cfg: VerificationConfig) -> float:
    if cfg.strict:
        return 0.0
    if not 0.0 <= c_t <= 1.0:
        raise ValueError(f"confidence must lie in [0, 1], got {c_t}")
    uncertainty = 1.0 - c_t if cfg.tau_direction == "formula" else c_t
    return cfg.tau_base + cfg.gamma * uncertainty

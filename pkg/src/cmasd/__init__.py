"""Confidence-modulated adaptive speculative decoding over toy language models."""

from .bench import (
    ComparisonRow,
    StrategySpec,
    Suite,
    ablation_strategies,
    expected_accept_oracle,
    levenshtein,
    load_suite,
    parse_suite,
    relative_match,
    run_comparison,
)
from .confidence import (
    ConfidenceScore,
    ConfidenceWeights,
    ConfigError,
    ensemble_confidence,
    entropy_confidence,
    logit_margin_confidence,
    softmax_margin_confidence,
)
from .control import (
    DraftControllerConfig,
    VerificationConfig,
    average_confidence,
    draft_length,
    verification_threshold,
)
from .decode import (
    DecodeReport,
    DecodeSession,
    DraftBlock,
    VerificationOutcome,
    cmasd_decode,
    draft_probe,
    greedy_decode,
    specdec_fixed,
    verify_block,
)
from .lm import (
    IngestionError,
    NGramModel,
    SyntheticPairModel,
    TokenDistribution,
    Vocabulary,
    argmax_token,
    build_vocabulary,
    synthetic_vocabulary,
    top_k_logprobs,
    train_ngram,
)

__version__ = "0.1.0"

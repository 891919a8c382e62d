"""Toy language models: vocabulary, next-token distributions, n-gram and synthetic backends.

Every backend exposes ``next_distribution(context) -> TokenDistribution`` over a
shared :class:`Vocabulary`. Models are immutable after construction.
"""

from __future__ import annotations

import math
import unicodedata
from collections import Counter, defaultdict
from collections.abc import Iterable, Sequence
from dataclasses import dataclass, field
from pathlib import Path
from typing import Protocol

import numpy as np

BOS = "<BOS>"
EOS = "<EOS>"
MODES = ("char", "whitespace")

NORM_TOL = 1e-9


class IngestionError(ValueError):
    """Corpus text could not be turned into a vocabulary or model."""


class ModelFormatError(ValueError):
    """A persisted model file is malformed."""


# ---------------------------------------------------------------------------
# Vocabulary
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Vocabulary:
    tokens: tuple[str, ...]
    bos_id: int = 0
    eos_id: int = 1
    mode: str = "char"
    _index: dict[str, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if len(self.tokens) < 2:
            raise ValueError("vocabulary needs at least 2 tokens")
        if len(set(self.tokens)) != len(self.tokens):
            raise ValueError("vocabulary tokens must be unique")
        if self.bos_id == self.eos_id:
            raise ValueError("bos_id and eos_id must differ")
        for tid in (self.bos_id, self.eos_id):
            if not 0 <= tid < len(self.tokens):
                raise ValueError(f"reserved id {tid} out of range")
        if self.mode not in MODES:
            raise ValueError(f"unknown tokenization mode {self.mode!r}")
        object.__setattr__(self, "_index", {t: i for i, t in enumerate(self.tokens)})

    @property
    def size(self) -> int:
        return len(self.tokens)

    def __len__(self) -> int:
        return len(self.tokens)

    def id_of(self, token: str) -> int:
        try:
            return self._index[token]
        except KeyError:
            raise KeyError(f"token {token!r} not in vocabulary") from None

    def units(self, text: str) -> list[str]:
        return split_units(text, self.mode)

    def encode(self, text: str, *, add_bos: bool = True) -> list[int]:
        """Tokenize ``text`` with the vocabulary's mode; unknown units raise ``KeyError``."""
        ids = [self.id_of(u) for u in self.units(text)]
        return [self.bos_id, *ids] if add_bos else ids

    def decode(self, ids: Iterable[int]) -> str:
        parts = [self.tokens[i] for i in ids if i not in (self.bos_id, self.eos_id)]
        return ("" if self.mode == "char" else " ").join(parts)

    def check_ids(self, ids: Iterable[int]) -> None:
        n = len(self.tokens)
        for i in ids:
            if not 0 <= i < n:
                raise ValueError(f"token id {i} out of range for vocabulary of size {n}")


def normalize_text(text: str) -> str:
    return unicodedata.normalize("NFC", text)


def split_units(text: str, mode: str) -> list[str]:
    text = normalize_text(text)
    if mode == "char":
        return list(text)
    if mode == "whitespace":
        return text.split()
    raise ValueError(f"unknown tokenization mode {mode!r}")


def build_vocabulary(corpus_text: str, mode: str = "char") -> Vocabulary:
    """Reserved BOS/EOS first, then corpus units in first-appearance order."""
    units = split_units(corpus_text, mode)
    if not units:
        raise IngestionError("corpus is empty after normalization")
    seen = dict.fromkeys(units)
    for reserved in (BOS, EOS):
        if reserved in seen:
            raise IngestionError(f"corpus contains the reserved token {reserved!r}")
    return Vocabulary((BOS, EOS, *seen), bos_id=0, eos_id=1, mode=mode)


def synthetic_vocabulary(size: int) -> Vocabulary:
    if size < 4:
        raise ValueError("synthetic vocabulary needs at least 4 tokens (2 reserved + 2 content)")
    return Vocabulary((BOS, EOS, *(f"t{i}" for i in range(size - 2))), mode="whitespace")


# ---------------------------------------------------------------------------
# Distributions
# ---------------------------------------------------------------------------


class TokenDistribution:
    """Natural-log next-token probabilities over a vocabulary.

    Backends construct these with ``validate=False`` on the hot path; any
    externally supplied vector should go through :meth:`from_probs` or the
    validating constructor.
    """

    __slots__ = ("log_probs",)

    def __init__(self, log_probs, *, validate: bool = True):
        lp = np.asarray(log_probs, dtype=np.float64)
        if validate:
            _check_log_probs(lp)
        lp.setflags(write=False)
        self.log_probs = lp

    @classmethod
    def from_probs(cls, probs) -> TokenDistribution:
        p = np.asarray(probs, dtype=np.float64)
        if np.any(p < 0):
            raise ValueError("probabilities must be nonnegative")
        with np.errstate(divide="ignore"):
            return cls(np.log(p))

    @property
    def probs(self) -> np.ndarray:
        return np.exp(self.log_probs)

    @property
    def size(self) -> int:
        return self.log_probs.shape[0]

    def __len__(self) -> int:
        return self.log_probs.shape[0]

    def __repr__(self) -> str:
        return f"TokenDistribution({np.round(self.probs, 4).tolist()})"


def _check_log_probs(lp: np.ndarray) -> None:
    if lp.ndim != 1 or lp.shape[0] < 2:
        raise ValueError("log_probs must be a vector of length >= 2")
    if np.any(np.isnan(lp)) or np.any(lp == np.inf):
        raise ValueError("log_probs must be finite or -inf")
    if not np.any(np.isfinite(lp)):
        raise ValueError("at least one token needs positive probability")
    total = float(np.exp(lp).sum())
    if abs(total - 1.0) > NORM_TOL:
        raise ValueError(f"probabilities sum to {total!r}, not 1")


def argmax_token(dist: TokenDistribution) -> int:
    # np.argmax returns the first maximal index, i.e. the lowest id on ties
    return int(np.argmax(dist.log_probs))


def ranked_ids(dist: TokenDistribution) -> np.ndarray:
    """All token ids by descending log-prob, ties by lowest id."""
    return np.lexsort((np.arange(dist.size), -dist.log_probs))


def top_k_logprobs(dist: TokenDistribution, k: int) -> list[tuple[int, float]]:
    if not 1 <= k <= dist.size:
        raise ValueError(f"k must be in [1, {dist.size}], got {k}")
    order = ranked_ids(dist)[:k]
    return [(int(i), float(dist.log_probs[i])) for i in order]


def competition_rank(dist: TokenDistribution, token: int) -> int:
    """1 + number of tokens with strictly higher log-prob than ``token``."""
    lp = dist.log_probs
    return int(np.count_nonzero(lp > lp[token])) + 1


# ---------------------------------------------------------------------------
# Model interface
# ---------------------------------------------------------------------------


class LanguageModel(Protocol):
    vocabulary: Vocabulary

    def next_distribution(self, context: Sequence[int]) -> TokenDistribution: ...


# ---------------------------------------------------------------------------
# N-gram backend
# ---------------------------------------------------------------------------


def default_weights(order: int) -> tuple[float, ...]:
    """Weights proportional to the order index, so longer contexts dominate."""
    total = order * (order + 1) / 2
    return tuple(i / total for i in range(1, order + 1))


class NGramModel:
    """Interpolated maximum-likelihood n-gram model mixed with a uniform floor.

    ``counts[n]`` maps a context tuple of length ``n - 1`` to a ``Counter`` of
    next-token ids. When the order-``n`` context was never observed, its
    interpolation weight is handed down to order ``n - 1``; order 1 (empty
    context) always exists.
    """

    def __init__(
        self,
        vocabulary: Vocabulary,
        order: int,
        counts: dict[int, dict[tuple[int, ...], Counter]],
        interpolation_weights: Sequence[float] | None = None,
        uniform_floor: float = 0.01,
    ):
        if order < 1:
            raise ValueError(f"order must be >= 1, got {order}")
        weights = tuple(float(w) for w in (interpolation_weights or default_weights(order)))
        if len(weights) != order:
            raise ValueError(f"expected {order} interpolation weights, got {len(weights)}")
        if any(w < 0 for w in weights) or abs(sum(weights) - 1.0) > NORM_TOL:
            raise ValueError(f"interpolation weights must be nonnegative and sum to 1: {weights}")
        if not 0.0 < uniform_floor < 1.0:
            raise ValueError(f"uniform_floor must lie in (0, 1), got {uniform_floor}")
        if not counts.get(1, {}).get(()):
            raise ValueError("order-1 counts are empty")

        self.vocabulary = vocabulary
        self.order = order
        self.interpolation_weights = weights
        self.uniform_floor = float(uniform_floor)
        self.counts = {n: {ctx: Counter(c) for ctx, c in counts.get(n, {}).items()} for n in range(1, order + 1)}

        v = vocabulary.size
        self._tables: dict[int, dict[tuple[int, ...], np.ndarray]] = {}
        for n, table in self.counts.items():
            rows = {}
            for ctx, counter in table.items():
                row = np.zeros(v)
                for tok, cnt in counter.items():
                    row[tok] = cnt
                rows[ctx] = row / row.sum()
            self._tables[n] = rows

    def component_weights(self, context: Sequence[int]) -> list[float]:
        """Effective per-order weights for ``context`` after handing down unseen orders."""
        eff = [0.0] * self.order
        carry = 0.0
        for n in range(self.order, 0, -1):
            w = self.interpolation_weights[n - 1] + carry
            ctx = tuple(context[len(context) - (n - 1):]) if n > 1 else ()
            if (n == 1 or len(context) >= n - 1) and ctx in self._tables[n]:
                eff[n - 1] = w
                carry = 0.0
            else:
                carry = w
        return eff

    def mle(self, context: Sequence[int]) -> np.ndarray:
        """Interpolated estimate before the uniform floor is mixed in."""
        v = self.vocabulary.size
        out = np.zeros(v)
        for n, w in enumerate(self.component_weights(context), start=1):
            if w > 0.0:
                ctx = tuple(context[len(context) - (n - 1):]) if n > 1 else ()
                out += w * self._tables[n][ctx]
        return out

    def next_distribution(self, context: Sequence[int]) -> TokenDistribution:
        v = self.vocabulary.size
        tail = context[max(0, len(context) - (self.order - 1)):] if self.order > 1 else ()
        for i in tail:
            if not 0 <= i < v:
                raise ValueError(f"token id {i} out of range for vocabulary of size {v}")
        probs = (1.0 - self.uniform_floor) * self.mle(context) + self.uniform_floor / v
        return TokenDistribution(np.log(probs), validate=False)

    @property
    def total_counts(self) -> int:
        return sum(sum(c.values()) for table in self.counts.values() for c in table.values())

    def save(self, path: str | Path) -> None:
        Path(path).write_text(dumps_ngram(self), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> NGramModel:
        return loads_ngram(Path(path).read_text(encoding="utf-8"))


def count_ngrams(ids: Sequence[int], order: int) -> dict[int, dict[tuple[int, ...], Counter]]:
    counts: dict[int, dict[tuple[int, ...], Counter]] = {n: defaultdict(Counter) for n in range(1, order + 1)}
    for pos in range(1, len(ids)):
        nxt = ids[pos]
        for n in range(1, order + 1):
            if pos - (n - 1) < 0:
                break
            counts[n][tuple(ids[pos - (n - 1):pos])][nxt] += 1
    return {n: dict(t) for n, t in counts.items()}


def train_ngram(
    corpus_text: str,
    vocabulary: Vocabulary,
    order: int,
    interpolation_weights: Sequence[float] | None = None,
    uniform_floor: float = 0.01,
) -> NGramModel:
    """Fit on the corpus as a single ``BOS units... EOS`` sequence."""
    if order < 1:
        raise ValueError(f"order must be >= 1, got {order}")
    units = vocabulary.units(corpus_text)
    if not units:
        raise IngestionError("corpus is empty after normalization")
    try:
        ids = [vocabulary.bos_id, *(vocabulary.id_of(u) for u in units), vocabulary.eos_id]
    except KeyError as exc:
        raise IngestionError(str(exc)) from None
    return NGramModel(vocabulary, order, count_ngrams(ids, order), interpolation_weights, uniform_floor)


# ---------------------------------------------------------------------------
# NGRAM v1 persistence
# ---------------------------------------------------------------------------

_ESCAPES = {"\\": "\\\\", "\t": "\\t", "\n": "\\n"}
_UNESCAPES = {"\\": "\\", "t": "\t", "n": "\n"}


def escape_token(token: str) -> str:
    return "".join(_ESCAPES.get(ch, ch) for ch in token)


def unescape_token(text: str) -> str:
    out = []
    it = iter(text)
    for ch in it:
        if ch != "\\":
            out.append(ch)
            continue
        nxt = next(it, None)
        if nxt not in _UNESCAPES:
            raise ModelFormatError(f"bad escape sequence in token {text!r}")
        out.append(_UNESCAPES[nxt])
    return "".join(out)


def dumps_ngram(model: NGramModel) -> str:
    vocab = model.vocabulary
    weights = ",".join(repr(w) for w in model.interpolation_weights)
    lines = [
        f"NGRAM v1 order={model.order} vocab={vocab.size} floor={model.uniform_floor!r} "
        f"mode={vocab.mode} bos={vocab.bos_id} eos={vocab.eos_id} weights={weights}"
    ]
    lines += [f"{i}\t{escape_token(t)}" for i, t in enumerate(vocab.tokens)]
    for n in range(1, model.order + 1):
        for ctx in sorted(model.counts[n]):
            ctx_field = ",".join(map(str, ctx))
            for nxt, cnt in sorted(model.counts[n][ctx].items()):
                lines.append(f"{n}\t{ctx_field}\t{nxt}\t{cnt}")
    return "\n".join(lines) + "\n"


def loads_ngram(text: str) -> NGramModel:
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines or not lines[0].startswith("NGRAM v1 "):
        raise ModelFormatError("missing 'NGRAM v1' header")
    header = {}
    for item in lines[0].split()[2:]:
        key, sep, value = item.partition("=")
        if not sep:
            raise ModelFormatError(f"bad header field {item!r}")
        header[key] = value
    try:
        order = int(header["order"])
        size = int(header["vocab"])
        floor = float(header["floor"])
    except (KeyError, ValueError) as exc:
        raise ModelFormatError(f"bad header: {exc}") from None
    mode = header.get("mode", "char")
    weights = [float(w) for w in header["weights"].split(",")] if "weights" in header else None

    tokens: list[str] = []
    counts: dict[int, dict[tuple[int, ...], Counter]] = {n: {} for n in range(1, order + 1)}
    for lineno, line in enumerate(lines[1:], start=2):
        fields = line.split("\t")
        try:
            if len(fields) == 2:
                if int(fields[0]) != len(tokens):
                    raise ModelFormatError(f"line {lineno}: vocabulary ids must be dense and ordered")
                tokens.append(unescape_token(fields[1]))
            elif len(fields) == 4:
                n, nxt, cnt = int(fields[0]), int(fields[2]), int(fields[3])
                ctx = tuple(int(x) for x in fields[1].split(",")) if fields[1] else ()
                if n not in counts or len(ctx) != n - 1 or not 0 <= nxt < size or cnt <= 0:
                    raise ModelFormatError(f"line {lineno}: invalid count record")
                counts[n].setdefault(ctx, Counter())[nxt] = cnt
            else:
                raise ModelFormatError(f"line {lineno}: expected 2 or 4 tab-separated fields")
        except ValueError as exc:
            if isinstance(exc, ModelFormatError):
                raise
            raise ModelFormatError(f"line {lineno}: {exc}") from None
    if len(tokens) != size:
        raise ModelFormatError(f"header declares {size} tokens, found {len(tokens)}")
    vocab = Vocabulary(
        tuple(tokens), bos_id=int(header.get("bos", 0)), eos_id=int(header.get("eos", 1)), mode=mode
    )
    try:
        return NGramModel(vocab, order, counts, weights, floor)
    except ValueError as exc:
        raise ModelFormatError(str(exc)) from None


# ---------------------------------------------------------------------------
# Synthetic drafter/verifier pair
# ---------------------------------------------------------------------------

_MASK64 = (1 << 64) - 1
_FNV_PRIME = 0x100000001B3


def _splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK64
    return x ^ (x >> 31)


def _unit(h: int) -> float:
    return (h >> 11) * (1.0 / (1 << 53))


class SyntheticPairModel:
    """A drafter/verifier pair whose argmaxes agree with probability ``agreement_p``.

    At each context a seeded hash of ``(len(context), last context_window ids)``
    draws three independent uniforms: the verifier's peak token, the
    agreement coin, and the drafter's alternative peak. Both sides put
    ``peak_mass`` on their peak and spread the rest uniformly over the other
    tokens, so per-position argmax agreement is an independent Bernoulli
    event. Peaks are drawn from the content tokens only; with ``eos_rate > 0``
    the verifier's peak is EOS with that probability instead.

    Use :attr:`drafter` and :attr:`verifier` as the two model handles.
    """

    def __init__(
        self,
        agreement_p: float,
        peak_mass: float = 0.9,
        seed: int = 0,
        vocabulary: Vocabulary | None = None,
        *,
        eos_rate: float = 0.0,
        context_window: int = 8,
    ):
        vocabulary = vocabulary or synthetic_vocabulary(16)
        v = vocabulary.size
        if not 0.0 <= agreement_p <= 1.0:
            raise ValueError(f"agreement_p must lie in [0, 1], got {agreement_p}")
        if not 1.0 / v < peak_mass < 1.0:
            raise ValueError(f"peak_mass must lie in (1/|V|, 1), got {peak_mass}")
        if not 0.0 <= eos_rate < 1.0:
            raise ValueError(f"eos_rate must lie in [0, 1), got {eos_rate}")
        if context_window < 1:
            raise ValueError("context_window must be >= 1")
        self.vocabulary = vocabulary
        self.agreement_p = float(agreement_p)
        self.peak_mass = float(peak_mass)
        self.seed = int(seed)
        self.eos_rate = float(eos_rate)
        self.context_window = int(context_window)
        self._content = [i for i in range(v) if i not in (vocabulary.bos_id, vocabulary.eos_id)]
        if len(self._content) < 2:
            raise ValueError("synthetic pair needs at least 2 content tokens")
        self._seed_hash = _splitmix64(self.seed & _MASK64)
        log_rest = math.log((1.0 - self.peak_mass) / (v - 1))
        self._by_peak = []
        for peak in range(v):
            lp = np.full(v, log_rest)
            lp[peak] = math.log(self.peak_mass)
            self._by_peak.append(TokenDistribution(lp, validate=False))
        self.drafter = _PairSide(self, "drafter")
        self.verifier = _PairSide(self, "verifier")

    def _draws(self, context: Sequence[int]) -> tuple[float, float, float]:
        v = self.vocabulary.size
        h = self._seed_hash ^ len(context)
        for tok in context[max(0, len(context) - self.context_window):]:
            if not 0 <= tok < v:
                raise ValueError(f"token id {tok} out of range for vocabulary of size {v}")
            h = ((h ^ int(tok)) * _FNV_PRIME) & _MASK64
        h = _splitmix64(h)
        return _unit(_splitmix64(h ^ 1)), _unit(_splitmix64(h ^ 2)), _unit(_splitmix64(h ^ 3))

    def peaks(self, context: Sequence[int]) -> tuple[int, int]:
        """``(drafter_peak, verifier_peak)`` at ``context``."""
        u_peak, u_agree, u_alt = self._draws(context)
        content = self._content
        if self.eos_rate > 0.0 and u_peak < self.eos_rate:
            verifier_peak = self.vocabulary.eos_id
        else:
            u = (u_peak - self.eos_rate) / (1.0 - self.eos_rate) if self.eos_rate > 0.0 else u_peak
            verifier_peak = content[min(int(u * len(content)), len(content) - 1)]
        if u_agree < self.agreement_p:
            return verifier_peak, verifier_peak
        others = [t for t in content if t != verifier_peak]
        return others[min(int(u_alt * len(others)), len(others) - 1)], verifier_peak

    def distribution_with_peak(self, peak: int) -> TokenDistribution:
        return self._by_peak[peak]


class _PairSide:
    __slots__ = ("pair", "side", "vocabulary")

    def __init__(self, pair: SyntheticPairModel, side: str):
        self.pair = pair
        self.side = side
        self.vocabulary = pair.vocabulary

    def next_distribution(self, context: Sequence[int]) -> TokenDistribution:
        drafter_peak, verifier_peak = self.pair.peaks(context)
        return self.pair.distribution_with_peak(drafter_peak if self.side == "drafter" else verifier_peak)

    def __repr__(self) -> str:
        return f"<SyntheticPairModel {self.side} p={self.pair.agreement_p} seed={self.pair.seed}>"

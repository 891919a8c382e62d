"""Greedy, fixed-window speculative, and confidence-modulated speculative decoding.

Every strategy returns ``(output_ids, DecodeReport)`` where ``output_ids``
excludes the prompt and ends with EOS if one was emitted. Verification of a
block is charged as a single verifier pass; the verifier is still evaluated
position by position, since the toy models have no batch axis.
"""

from __future__ import annotations

import json
import time
from collections.abc import Callable, Sequence
from dataclasses import asdict, dataclass, field
from typing import IO

from .confidence import ConfidenceScore, ConfidenceWeights, ConfigError, ensemble_confidence
from .control import (
    DraftControllerConfig,
    VerificationConfig,
    average_confidence,
    draft_length,
    verification_threshold,
)
from .lm import LanguageModel, argmax_token, competition_rank


@dataclass
class DraftBlock:
    tokens: list[int]
    drafter_logprobs: list[float]
    confidences: list[ConfidenceScore]
    probe_len: int

    def __post_init__(self):
        if not len(self.tokens) == len(self.drafter_logprobs) == len(self.confidences):
            raise ValueError("draft block fields must have equal length")
        if len(self.tokens) > self.probe_len:
            raise ValueError("draft block longer than its probe")

    def __len__(self) -> int:
        return len(self.tokens)

    def truncated(self, m: int) -> DraftBlock:
        return DraftBlock(self.tokens[:m], self.drafter_logprobs[:m], self.confidences[:m], self.probe_len)


@dataclass(frozen=True)
class Decision:
    draft_id: int
    top1_id: int
    logp_draft: float
    logp_top1: float
    rank: int
    tau: float
    accepted: bool


@dataclass
class VerificationOutcome:
    accepted: int
    decisions: list[Decision]
    correction: int | None = None


@dataclass
class DecodeReport:
    strategy: str
    iterations: int = 0
    drafted_total: int = 0
    accepted_total: int = 0
    rollbacks: int = 0
    tokens_out: int = 0
    verifier_sequential_passes: int = 0
    drafter_sequential_passes: int = 0
    wall_clock_ns: int = 0
    mean_k_j: float = 0.0
    mean_c_bar: float = 0.0
    trace: list[dict] = field(default_factory=list, repr=False)

    @property
    def tok_per_iter(self) -> float:
        """Drafted tokens accepted per iteration; greedy counts its one token per step."""
        if self.iterations == 0:
            return 0.0
        if self.strategy == "greedy":
            return self.tokens_out / self.iterations
        return self.accepted_total / self.iterations

    def metrics(self) -> dict:
        d = asdict(self)
        d.pop("trace")
        d["tok_per_iter"] = self.tok_per_iter
        return d


@dataclass
class DecodeSession:
    drafter: LanguageModel
    verifier: LanguageModel
    controller: DraftControllerConfig = field(default_factory=DraftControllerConfig)
    vcfg: VerificationConfig = field(default_factory=VerificationConfig)
    weights: ConfidenceWeights = field(default_factory=ConfidenceWeights)
    max_len: int = 128

    def __post_init__(self):
        if self.drafter.vocabulary != self.verifier.vocabulary:
            raise ConfigError("drafter and verifier must share one vocabulary")
        if self.max_len < 1:
            raise ConfigError(f"max_len must be >= 1, got {self.max_len}")

    @property
    def vocabulary(self):
        return self.verifier.vocabulary


def _check_prompt(model: LanguageModel, prompt: Sequence[int]) -> None:
    model.vocabulary.check_ids(prompt)


def greedy_decode(verifier: LanguageModel, prompt: Sequence[int], max_len: int) -> tuple[list[int], DecodeReport]:
    if max_len < 1:
        raise ValueError(f"max_len must be >= 1, got {max_len}")
    _check_prompt(verifier, prompt)
    eos = verifier.vocabulary.eos_id
    start = time.perf_counter_ns()
    seq = list(prompt)
    out: list[int] = []
    while len(out) < max_len:
        tok = argmax_token(verifier.next_distribution(seq))
        seq.append(tok)
        out.append(tok)
        if tok == eos:
            break
    n = len(out)
    report = DecodeReport(
        "greedy",
        iterations=n,
        tokens_out=n,
        verifier_sequential_passes=n,
        wall_clock_ns=time.perf_counter_ns() - start,
    )
    return out, report


def draft_probe(
    drafter: LanguageModel,
    context: Sequence[int],
    k_max: int,
    weights: ConfidenceWeights = ConfidenceWeights(),
) -> DraftBlock:
    """Greedily draft up to ``k_max`` tokens, stopping after an EOS."""
    if k_max < 1:
        raise ValueError(f"k_max must be >= 1, got {k_max}")
    eos = drafter.vocabulary.eos_id
    ctx = list(context)
    tokens, logps, confs = [], [], []
    for _ in range(k_max):
        dist = drafter.next_distribution(ctx)
        tok = argmax_token(dist)
        tokens.append(tok)
        logps.append(float(dist.log_probs[tok]))
        confs.append(ensemble_confidence(dist, weights))
        if tok == eos:
            break
        ctx.append(tok)
    return DraftBlock(tokens, logps, confs, probe_len=len(tokens))


def verify_block(
    verifier: LanguageModel,
    context: Sequence[int],
    block: DraftBlock,
    vcfg: VerificationConfig,
    taus: Sequence[float],
) -> VerificationOutcome:
    """Accept the longest drafted prefix passing the rank and log-gap tests.

    A drafted token is accepted iff at most ``beta_rank - 1`` tokens have a
    strictly higher verifier log-prob and its gap to the verifier's top-1 is
    at most ``tau``. In strict mode the drafted token must equal the
    verifier's argmax. On rejection the verifier's argmax at that position is
    the correction token.
    """
    if len(block) == 0:
        raise ValueError("cannot verify an empty block")
    if len(taus) != len(block):
        raise ValueError(f"got {len(taus)} thresholds for a block of {len(block)} tokens")
    ctx = list(context)
    decisions: list[Decision] = []
    for tok, tau in zip(block.tokens, taus):
        dist = verifier.next_distribution(ctx)
        lp = dist.log_probs
        top1 = argmax_token(dist)
        rank = competition_rank(dist, tok)
        logp_draft, logp_top1 = float(lp[tok]), float(lp[top1])
        if vcfg.strict:
            ok = tok == top1
        else:
            ok = rank <= vcfg.beta_rank and logp_top1 - logp_draft <= tau
        decisions.append(Decision(tok, top1, logp_draft, logp_top1, rank, float(tau), ok))
        if not ok:
            return VerificationOutcome(len(decisions) - 1, decisions, correction=top1)
        ctx.append(tok)
    return VerificationOutcome(len(decisions), decisions)


# A plan maps the probe to (k_j, taus for the truncated block).
_Plan = Callable[[DraftBlock, float], tuple[int, list[float]]]


def _speculative_loop(
    session: DecodeSession,
    prompt: Sequence[int],
    strategy: str,
    probe_k: int,
    plan: _Plan,
) -> tuple[list[int], DecodeReport]:
    _check_prompt(session.verifier, prompt)
    eos = session.vocabulary.eos_id
    report = DecodeReport(strategy)
    start = time.perf_counter_ns()
    seq = list(prompt)
    out: list[int] = []
    k_sum = 0
    c_bar_sum = 0.0
    while len(out) < session.max_len:
        remaining = session.max_len - len(out)
        probe = draft_probe(session.drafter, seq, min(probe_k, remaining), session.weights)
        report.drafter_sequential_passes += probe.probe_len
        c_bar = average_confidence([c.value for c in probe.confidences])
        k_j, taus = plan(probe, c_bar)
        block = probe.truncated(min(k_j, len(probe)))
        taus = taus[: len(block)]
        outcome = verify_block(session.verifier, seq, block, session.vcfg, taus)

        for i, d in enumerate(outcome.decisions):
            report.trace.append(
                {
                    "iter": report.iterations,
                    "pos": len(out) + i,
                    "draft_id": d.draft_id,
                    "top1_id": d.top1_id,
                    "rank": d.rank,
                    "logp_draft": d.logp_draft,
                    "logp_top1": d.logp_top1,
                    "tau": d.tau,
                    "accepted": d.accepted,
                    "k_j": k_j,
                    "c_bar": c_bar,
                }
            )

        new = block.tokens[: outcome.accepted]
        if outcome.correction is not None:
            new = [*new, outcome.correction]
            report.rollbacks += 1
        if eos in new:
            new = new[: new.index(eos) + 1]
        new = new[:remaining]

        report.iterations += 1
        report.drafted_total += len(block)
        report.accepted_total += outcome.accepted
        report.verifier_sequential_passes += 1
        k_sum += k_j
        c_bar_sum += c_bar
        seq.extend(new)
        out.extend(new)
        if new and new[-1] == eos:
            break

    report.tokens_out = len(out)
    report.mean_k_j = k_sum / report.iterations
    report.mean_c_bar = c_bar_sum / report.iterations
    report.wall_clock_ns = time.perf_counter_ns() - start
    return out, report


def specdec_fixed(
    session: DecodeSession, prompt: Sequence[int], k: int, tau: float | None = None
) -> tuple[list[int], DecodeReport]:
    """Fixed window ``k`` and constant margin ``tau`` (defaults to the session's ``tau_base``)."""
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    vcfg = session.vcfg
    tau = 0.0 if vcfg.strict else (vcfg.tau_base if tau is None else float(tau))
    if tau < 0:
        raise ConfigError(f"tau must be >= 0, got {tau}")

    def plan(probe: DraftBlock, c_bar: float):
        return k, [tau] * len(probe)

    return _speculative_loop(session, prompt, "specdec", k, plan)


def cmasd_decode(
    session: DecodeSession,
    prompt: Sequence[int],
    *,
    adaptive_k: bool = True,
    adaptive_tau: bool = True,
    fixed_k: int | None = None,
) -> tuple[list[int], DecodeReport]:
    """Confidence-modulated adaptive speculative decoding.

    Each iteration probes ``k_max`` drafter tokens, averages their
    confidences into ``c_bar``, keeps the first ``draft_length(c_bar)`` and
    verifies each against its own confidence-scaled margin. The two
    adaptive pieces can be switched off for ablations: without
    ``adaptive_k`` the window is ``fixed_k`` (default ``k_max``) and the probe
    has that length; without ``adaptive_tau`` every margin is ``tau_base``.
    """
    ctrl, vcfg = session.controller, session.vcfg
    k_fixed = ctrl.k_max if fixed_k is None else fixed_k
    if k_fixed < 1:
        raise ConfigError(f"fixed_k must be >= 1, got {k_fixed}")
    probe_k = ctrl.k_max if adaptive_k else k_fixed

    def plan(probe: DraftBlock, c_bar: float):
        k_j = draft_length(c_bar, ctrl) if adaptive_k else k_fixed
        if adaptive_tau:
            taus = [verification_threshold(c.value, vcfg) for c in probe.confidences]
        else:
            taus = [0.0 if vcfg.strict else vcfg.tau_base] * len(probe)
        return k_j, taus

    name = "cmasd" if adaptive_k and adaptive_tau else "cmasd-ablation"
    return _speculative_loop(session, prompt, name, probe_k, plan)


def write_trace(trace: list[dict], fh: IO[str]) -> None:
    for rec in trace:
        fh.write(json.dumps(rec, sort_keys=False) + "\n")

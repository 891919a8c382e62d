"""Benchmark suites: run strategies over prompts and seeds, aggregate, and write reports.

The greedy baseline is always run. It supplies the reference output for
``relative_match`` and the verifier-pass count behind
``relative_sequential_speedup``.
"""

from __future__ import annotations

import csv
import io
import json
import statistics
from collections.abc import Sequence
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np

from .confidence import ConfidenceWeights, ConfigError
from .control import DraftControllerConfig, VerificationConfig
from .decode import DecodeReport, DecodeSession, cmasd_decode, greedy_decode, specdec_fixed
from .lm import NGramModel, SyntheticPairModel, synthetic_vocabulary

CSV_HEADER = (
    "strategy",
    "prompt_id",
    "seed",
    "tokens_out",
    "iterations",
    "tok_per_iter",
    "rollbacks",
    "verifier_passes",
    "drafter_passes",
    "speedup",
    "relative_match",
    "wall_clock_ns",
)

STRATEGY_KINDS = ("greedy", "specdec", "cmasd")


class SuiteError(ConfigError):
    """Malformed benchmark suite description."""


# ---------------------------------------------------------------------------
# Oracles and similarity
# ---------------------------------------------------------------------------


def expected_accept_oracle(p: float, k: int) -> float:
    """Expected unbroken accepted prefix when each position passes independently with prob ``p``."""
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"p must lie in [0, 1], got {p}")
    if p == 1.0:
        return float(k)
    return p * (1.0 - p**k) / (1.0 - p)


def levenshtein(a: Sequence, b: Sequence) -> int:
    """Unit-cost edit distance between two token sequences."""
    a, b = list(a), list(b)
    # common prefix/suffix never contributes edits
    lo = 0
    while lo < len(a) and lo < len(b) and a[lo] == b[lo]:
        lo += 1
    hi_a, hi_b = len(a), len(b)
    while hi_a > lo and hi_b > lo and a[hi_a - 1] == b[hi_b - 1]:
        hi_a -= 1
        hi_b -= 1
    a, b = a[lo:hi_a], b[lo:hi_b]
    if not a or not b:
        return max(len(a), len(b))

    # row-wise DP; the insertion chain cur[j] = min(cur[j], cur[j-1] + 1) is a
    # running minimum of (cur - j), shifted back by j
    lookup = {tok: i for i, tok in enumerate(dict.fromkeys(a + b))}
    bv = np.array([lookup[t] for t in b])
    cols = np.arange(len(b) + 1)
    prev = cols.copy()
    for i, tok in enumerate(a, start=1):
        sub = prev[:-1] + (bv != lookup[tok])
        cur = np.empty_like(prev)
        cur[0] = i
        cur[1:] = np.minimum(sub, prev[1:] + 1)
        prev = np.minimum.accumulate(cur - cols) + cols
    return int(prev[-1])


def relative_match(candidate: Sequence, reference: Sequence) -> float:
    """Normalized edit similarity in percent; two empty sequences match fully."""
    longest = max(len(candidate), len(reference))
    if longest == 0:
        return 100.0
    return 100.0 * (1.0 - levenshtein(candidate, reference) / longest)


# ---------------------------------------------------------------------------
# Suite description
# ---------------------------------------------------------------------------

_STRATEGY_KEYS = {
    "name", "type", "k", "k_min", "k_max", "alpha", "tau_base", "gamma", "beta", "strict",
    "tau_direction", "lambda_ent", "lambda_margin", "lambda_soft", "sharpness",
    "adaptive_k", "adaptive_tau",
}


@dataclass(frozen=True)
class StrategySpec:
    name: str
    kind: str
    k: int = 10
    controller: DraftControllerConfig = field(default_factory=DraftControllerConfig)
    vcfg: VerificationConfig = field(default_factory=VerificationConfig)
    weights: ConfidenceWeights = field(default_factory=ConfidenceWeights)
    adaptive_k: bool = True
    adaptive_tau: bool = True

    def __post_init__(self):
        if self.kind not in STRATEGY_KINDS:
            raise SuiteError(f"unknown strategy type {self.kind!r}")
        if self.k < 1:
            raise SuiteError(f"strategy {self.name!r}: k must be >= 1")

    @classmethod
    def from_dict(cls, d: dict, where: str = "strategy") -> StrategySpec:
        unknown = set(d) - _STRATEGY_KEYS
        if unknown:
            raise SuiteError(f"{where}: unknown field(s) {sorted(unknown)}")
        if "type" not in d:
            raise SuiteError(f"{where}: missing field 'type'")
        try:
            ctrl = DraftControllerConfig(
                k_min=int(d.get("k_min", 1)), k_max=int(d.get("k_max", 25)), alpha=float(d.get("alpha", 1.0))
            )
            vcfg = VerificationConfig(
                tau_base=float(d.get("tau_base", 0.1)),
                gamma=float(d.get("gamma", 1.0)),
                beta_rank=int(d.get("beta", 2)),
                strict=bool(d.get("strict", False)),
                tau_direction=str(d.get("tau_direction", "formula")),
            )
            weights = ConfidenceWeights(
                float(d.get("lambda_ent", 1 / 3)),
                float(d.get("lambda_margin", 1 / 3)),
                float(d.get("lambda_soft", 1 / 3)),
                float(d.get("sharpness", 1.0)),
            )
            return cls(
                name=str(d.get("name", d["type"])),
                kind=str(d["type"]),
                k=int(d.get("k", 10)),
                controller=ctrl,
                vcfg=vcfg,
                weights=weights,
                adaptive_k=bool(d.get("adaptive_k", True)),
                adaptive_tau=bool(d.get("adaptive_tau", True)),
            )
        except (TypeError, ValueError) as exc:
            raise SuiteError(f"{where}: {exc}") from None

    def snapshot(self) -> dict:
        snap: dict = {"name": self.name, "type": self.kind}
        if self.kind == "greedy":
            return snap
        v = self.vcfg
        snap.update(beta=v.beta_rank, strict=v.strict, tau_base=v.tau_base)
        if self.kind == "specdec":
            snap["k"] = self.k
            return snap
        c, w = self.controller, self.weights
        snap.update(
            adaptive_k=self.adaptive_k,
            adaptive_tau=self.adaptive_tau,
            k=self.k,
            k_min=c.k_min,
            k_max=c.k_max,
            alpha=c.alpha,
            gamma=v.gamma,
            tau_direction=v.tau_direction,
            lambda_ent=w.lambda_ent,
            lambda_margin=w.lambda_margin,
            lambda_soft=w.lambda_soft,
            sharpness=w.sigmoid_sharpness,
        )
        return snap

    def run(self, drafter, verifier, prompt: Sequence[int], max_len: int) -> tuple[list[int], DecodeReport]:
        if self.kind == "greedy":
            return greedy_decode(verifier, prompt, max_len)
        session = DecodeSession(drafter, verifier, self.controller, self.vcfg, self.weights, max_len)
        if self.kind == "specdec":
            return specdec_fixed(session, prompt, self.k)
        return cmasd_decode(
            session, prompt, adaptive_k=self.adaptive_k, adaptive_tau=self.adaptive_tau, fixed_k=self.k
        )


def ablation_strategies(base: dict | None = None) -> list[StrategySpec]:
    """The seven ablation variants around a CM-ASD configuration ``base``."""
    base = {k: v for k, v in (base or {}).items() if k not in ("name", "type")}
    variants = [
        ("fixed-k+adaptive-tau", {"adaptive_k": False, "adaptive_tau": True}),
        ("adaptive-k+fixed-tau", {"adaptive_k": True, "adaptive_tau": False}),
        ("fixed-k+fixed-tau", {"adaptive_k": False, "adaptive_tau": False}),
        ("entropy-only", {"lambda_ent": 1.0, "lambda_margin": 0.0, "lambda_soft": 0.0}),
        ("margin-only", {"lambda_ent": 0.0, "lambda_margin": 1.0, "lambda_soft": 0.0}),
        ("softmax-only", {"lambda_ent": 0.0, "lambda_margin": 0.0, "lambda_soft": 1.0}),
        ("cmasd-full", {}),
    ]
    return [
        StrategySpec.from_dict({**base, **override, "name": name, "type": "cmasd"}, where=f"ablation {name}")
        for name, override in variants
    ]


@dataclass
class Suite:
    prompts: list[str]
    strategies: list[StrategySpec]
    seeds: list[int] = field(default_factory=lambda: [0])
    max_len: int = 64
    models: tuple[Path, Path] | None = None
    synthetic: dict | None = None

    def __post_init__(self):
        if not self.prompts:
            raise SuiteError("suite needs at least one prompt")
        if not self.strategies:
            raise SuiteError("suite needs at least one strategy")
        if (self.models is None) == (self.synthetic is None):
            raise SuiteError("suite needs exactly one of 'models' or 'synthetic'")
        if self.max_len < 1:
            raise SuiteError("max_len must be >= 1")
        if not self.seeds:
            raise SuiteError("suite needs at least one seed")
        names = [s.name for s in self.strategies]
        if len(set(names)) != len(names):
            raise SuiteError(f"strategy names must be unique: {names}")

    def snapshot(self) -> dict:
        snap: dict = {
            "prompts": self.prompts,
            "seeds": self.seeds,
            "max_len": self.max_len,
            "strategies": [s.snapshot() for s in self.strategies],
        }
        if self.models is not None:
            snap["models"] = {"drafter": self.models[0].name, "verifier": self.models[1].name}
        else:
            snap["synthetic"] = self.synthetic
        return snap

    @cached_property
    def _ngram_pair(self) -> tuple[NGramModel, NGramModel]:
        return NGramModel.load(self.models[0]), NGramModel.load(self.models[1])

    def build_models(self, seed: int):
        """``(drafter, verifier)`` for one repetition; n-gram models ignore the seed."""
        if self.models is not None:
            return self._ngram_pair
        syn = self.synthetic
        pair = SyntheticPairModel(
            agreement_p=float(syn["p"]),
            peak_mass=float(syn.get("peak_mass", 0.9)),
            seed=seed,
            vocabulary=synthetic_vocabulary(int(syn.get("vocab_size", 16))),
            eos_rate=float(syn.get("eos_rate", 0.0)),
        )
        return pair.drafter, pair.verifier


_SUITE_KEYS = {"models", "synthetic", "prompts", "strategies", "seeds", "max_len", "ablation"}
_SYNTHETIC_KEYS = {"p", "peak_mass", "vocab_size", "eos_rate"}


def parse_suite(text: str, base_dir: Path | str = ".") -> Suite:
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SuiteError(f"line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    if not isinstance(raw, dict):
        raise SuiteError("suite must be a JSON object")
    unknown = set(raw) - _SUITE_KEYS
    if unknown:
        raise SuiteError(f"unknown suite field(s) {sorted(unknown)}")

    models = None
    if "models" in raw:
        m = raw["models"]
        if not isinstance(m, dict) or set(m) != {"drafter", "verifier"}:
            raise SuiteError("field 'models' must be an object with 'drafter' and 'verifier' paths")
        base = Path(base_dir)
        models = (base / m["drafter"], base / m["verifier"])
    synthetic = raw.get("synthetic")
    if synthetic is not None:
        if not isinstance(synthetic, dict) or "p" not in synthetic:
            raise SuiteError("field 'synthetic' must be an object with at least 'p'")
        if set(synthetic) - _SYNTHETIC_KEYS:
            raise SuiteError(f"field 'synthetic': unknown key(s) {sorted(set(synthetic) - _SYNTHETIC_KEYS)}")

    prompts = raw.get("prompts", [""])
    if not isinstance(prompts, list) or not all(isinstance(p, str) for p in prompts):
        raise SuiteError("field 'prompts' must be a list of strings")
    seeds = raw.get("seeds", [0])
    if not isinstance(seeds, list) or not all(isinstance(s, int) and not isinstance(s, bool) for s in seeds):
        raise SuiteError("field 'seeds' must be a list of integers")
    max_len = raw.get("max_len", 64)
    if not isinstance(max_len, int) or isinstance(max_len, bool):
        raise SuiteError("field 'max_len' must be an integer")

    entries = raw.get("strategies", [])
    if not isinstance(entries, list):
        raise SuiteError("field 'strategies' must be a list")
    strategies = []
    for i, entry in enumerate(entries):
        if not isinstance(entry, dict):
            raise SuiteError(f"strategies[{i}] must be an object")
        strategies.append(StrategySpec.from_dict(entry, where=f"strategies[{i}]"))
    ablation = raw.get("ablation")
    if ablation:
        strategies += ablation_strategies(ablation if isinstance(ablation, dict) else None)

    suite = Suite(prompts, strategies, seeds, max_len, models, synthetic)
    if synthetic is not None:
        try:
            suite.build_models(seeds[0])
        except (TypeError, ValueError) as exc:
            raise SuiteError(f"field 'synthetic': {exc}") from None
    return suite


def load_suite(path: str | Path) -> Suite:
    path = Path(path)
    return parse_suite(path.read_text(encoding="utf-8"), path.parent)


# ---------------------------------------------------------------------------
# Running and aggregation
# ---------------------------------------------------------------------------


@dataclass
class RunRecord:
    strategy: str
    prompt_id: int
    seed: int
    output: list[int]
    report: DecodeReport
    speedup: float
    relative_match: float


@dataclass
class ComparisonRow:
    strategy: str
    tok_per_iter: float
    tok_per_iter_std: float
    relative_sequential_speedup: float
    speedup_std: float
    relative_match_pct: float
    relative_match_std: float
    rollbacks: float
    mean_k_j: float
    config: dict

    def as_dict(self) -> dict:
        return dict(self.__dict__)


GREEDY = StrategySpec("greedy", "greedy")


def run_comparison(suite: Suite) -> tuple[list[ComparisonRow], list[RunRecord]]:
    strategies = list(suite.strategies)
    if not any(s.kind == "greedy" for s in strategies):
        strategies.insert(0, GREEDY)
    baseline = next(s for s in strategies if s.kind == "greedy")

    records: list[RunRecord] = []
    for seed in suite.seeds:
        drafter, verifier = suite.build_models(seed)
        if drafter.vocabulary != verifier.vocabulary:
            raise ConfigError("drafter and verifier vocabularies differ")
        vocab = verifier.vocabulary
        for pid, text in enumerate(suite.prompts):
            try:
                prompt = vocab.encode(text)
            except KeyError as exc:
                raise SuiteError(f"prompts[{pid}]: {exc.args[0]}") from None
            ref_out, ref_report = baseline.run(drafter, verifier, prompt, suite.max_len)
            for strat in strategies:
                if strat is baseline:
                    out, report = ref_out, ref_report
                else:
                    out, report = strat.run(drafter, verifier, prompt, suite.max_len)
                speedup = ref_report.verifier_sequential_passes / report.verifier_sequential_passes
                records.append(
                    RunRecord(strat.name, pid, seed, out, report, speedup, relative_match(out, ref_out))
                )

    rows = []
    for strat in strategies:
        runs = [r for r in records if r.strategy == strat.name]
        tok = [r.report.tok_per_iter for r in runs]
        spd = [r.speedup for r in runs]
        rm = [r.relative_match for r in runs]
        rows.append(
            ComparisonRow(
                strategy=strat.name,
                tok_per_iter=statistics.fmean(tok),
                tok_per_iter_std=statistics.pstdev(tok),
                relative_sequential_speedup=statistics.fmean(spd),
                speedup_std=statistics.pstdev(spd),
                relative_match_pct=statistics.fmean(rm),
                relative_match_std=statistics.pstdev(rm),
                rollbacks=statistics.fmean(r.report.rollbacks for r in runs),
                mean_k_j=statistics.fmean(r.report.mean_k_j for r in runs),
                config=strat.snapshot(),
            )
        )
    return rows, records


# ---------------------------------------------------------------------------
# Report rendering
# ---------------------------------------------------------------------------


def _fmt(x: float) -> str:
    return f"{x:.6f}"


def render_csv(records: list[RunRecord], *, wall_clock: bool = False) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    for r in records:
        rep = r.report
        writer.writerow(
            [
                r.strategy,
                r.prompt_id,
                r.seed,
                rep.tokens_out,
                rep.iterations,
                _fmt(rep.tok_per_iter),
                rep.rollbacks,
                rep.verifier_sequential_passes,
                rep.drafter_sequential_passes,
                _fmt(r.speedup),
                _fmt(r.relative_match),
                rep.wall_clock_ns if wall_clock else "",
            ]
        )
    return buf.getvalue()


def render_json(suite: Suite, rows: list[ComparisonRow], records: list[RunRecord], *, wall_clock: bool = False) -> str:
    runs = []
    for r in records:
        metrics = r.report.metrics()
        if not wall_clock:
            metrics["wall_clock_ns"] = None
        runs.append(
            {
                "strategy": r.strategy,
                "prompt_id": r.prompt_id,
                "seed": r.seed,
                "speedup": r.speedup,
                "relative_match": r.relative_match,
                "report": metrics,
                "output": r.output,
            }
        )
    payload = {"suite": suite.snapshot(), "rows": [row.as_dict() for row in rows], "runs": runs}
    return json.dumps(payload, indent=2, allow_nan=False) + "\n"


def render_table(rows: list[ComparisonRow]) -> str:
    width = max(len("strategy"), *(len(r.strategy) for r in rows))
    lines = [f"{'strategy':<{width}}  {'tok/iter':>9}  {'speedup':>8}  {'match%':>7}  {'rollbacks':>9}"]
    for r in rows:
        lines.append(
            f"{r.strategy:<{width}}  {r.tok_per_iter:>9.3f}  {r.relative_sequential_speedup:>7.2f}x"
            f"  {r.relative_match_pct:>7.2f}  {r.rollbacks:>9.1f}"
        )
    return "\n".join(lines)


def write_reports(
    suite: Suite, rows: list[ComparisonRow], records: list[RunRecord], out_dir: str | Path, *, wall_clock: bool = False
) -> tuple[Path, Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path = out_dir / "report.csv"
    json_path = out_dir / "report.json"
    csv_path.write_text(render_csv(records, wall_clock=wall_clock), encoding="utf-8")
    json_path.write_text(render_json(suite, rows, records, wall_clock=wall_clock), encoding="utf-8")
    return csv_path, json_path


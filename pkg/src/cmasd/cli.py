"""Command-line front end: ``cmasd train | decode | bench``.

Exit codes: 0 success, 1 internal error, 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

from .bench import load_suite, render_table, run_comparison, write_reports
from .confidence import ConfidenceWeights, ConfigError
from .control import TAU_DIRECTIONS, DraftControllerConfig, VerificationConfig
from .decode import DecodeSession, cmasd_decode, greedy_decode, specdec_fixed, write_trace
from .lm import (
    MODES,
    IngestionError,
    ModelFormatError,
    NGramModel,
    SyntheticPairModel,
    build_vocabulary,
    synthetic_vocabulary,
    train_ngram,
)

EXIT_OK, EXIT_INTERNAL, EXIT_USAGE = 0, 1, 2
SEED_ENV = "CMASD_SEED"


class UsageError(Exception):
    pass


def _positive_int(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if value < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {value}")
    return value


def _weights(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated floats, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    fmt = argparse.ArgumentDefaultsHelpFormatter
    parser = argparse.ArgumentParser(
        prog="cmasd", description="Confidence-modulated adaptive speculative decoding with toy models.",
        formatter_class=fmt,
    )
    sub = parser.add_subparsers(dest="command", required=True)

    tr = sub.add_parser("train", help="train an n-gram model from a text corpus", formatter_class=fmt)
    tr.add_argument("--corpus", required=True, type=Path, help="UTF-8 corpus file")
    tr.add_argument("--order", required=True, type=_positive_int, help="n-gram order")
    tr.add_argument("--mode", choices=MODES, default="char", help="tokenization mode")
    tr.add_argument("--floor", type=float, default=0.01, help="uniform-floor probability mass")
    tr.add_argument("--weights", type=_weights, default=None,
                    help="comma-separated interpolation weights for orders 1..n (default: proportional to order)")
    tr.add_argument("--out", required=True, type=Path, help="output model file")

    dc = sub.add_parser("decode", help="decode one prompt with a chosen strategy", formatter_class=fmt)
    dc.add_argument("--strategy", choices=("greedy", "specdec", "cmasd"), default="cmasd", help="decoding strategy")
    dc.add_argument("--drafter", type=Path, default=None, help="drafter model file")
    dc.add_argument("--verifier", type=Path, default=None, help="verifier model file")
    dc.add_argument("--synthetic-p", type=float, default=None,
                    help="use a synthetic drafter/verifier pair with this argmax-agreement probability")
    dc.add_argument("--peak-mass", type=float, default=0.9, help="synthetic pair peak probability")
    dc.add_argument("--vocab-size", type=_positive_int, default=16, help="synthetic pair vocabulary size")
    prompt = dc.add_mutually_exclusive_group()
    prompt.add_argument("--prompt", default="", help="prompt text (BOS is prepended)")
    prompt.add_argument("--prompt-file", type=Path, default=None, help="read the prompt from a file")
    dc.add_argument("--max-len", type=_positive_int, default=128, help="maximum generated tokens")
    dc.add_argument("--k", type=_positive_int, default=10, help="fixed draft window for specdec")
    dc.add_argument("--k-min", type=_positive_int, default=1, help="minimum adaptive draft length")
    dc.add_argument("--k-max", type=_positive_int, default=25, help="maximum adaptive draft length")
    dc.add_argument("--alpha", type=float, default=1.0, help="drafting aggressiveness in (0, 1]")
    dc.add_argument("--tau-base", type=float, default=0.1, help="baseline log-likelihood margin")
    dc.add_argument("--gamma", type=float, default=1.0, help="margin growth per unit of uncertainty")
    dc.add_argument("--beta", type=_positive_int, default=2, help="top-beta rank required for acceptance")
    dc.add_argument("--tau-direction", choices=TAU_DIRECTIONS, default="formula",
                    help="'formula': margin grows as confidence falls; 'inverted': grows with confidence")
    dc.add_argument("--lambda-ent", type=float, default=1 / 3, help="entropy confidence weight")
    dc.add_argument("--lambda-margin", type=float, default=1 / 3, help="logit-margin confidence weight")
    dc.add_argument("--lambda-soft", type=float, default=1 / 3, help="softmax-margin confidence weight")
    dc.add_argument("--sharpness", type=float, default=1.0, help="logit-margin sigmoid sharpness")
    dc.add_argument("--strict", action="store_true", help="exact argmax verification (beta=1, tau=0)")
    dc.add_argument("--seed", type=int, default=0, help=f"synthetic pair seed; {SEED_ENV} overrides")
    dc.add_argument("--trace-out", type=Path, default=None, help="write per-position decisions as JSON Lines")
    dc.add_argument("--out", type=Path, default=None, help="also write the output text to this file")

    bn = sub.add_parser("bench", help="run a benchmark suite and write CSV/JSON reports", formatter_class=fmt)
    bn.add_argument("suite", type=Path, help="suite JSON file")
    bn.add_argument("--out", type=Path, default=Path("bench-out"), help="report directory")
    bn.add_argument("--wall-clock", action="store_true",
                    help="record wall-clock times in the reports (makes them non-reproducible)")
    return parser


def cmd_train(args) -> int:
    text = args.corpus.read_text(encoding="utf-8")
    vocab = build_vocabulary(text, args.mode)
    try:
        model = train_ngram(text, vocab, args.order, args.weights, args.floor)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    model.save(args.out)
    print(f"vocab_size={vocab.size} total_counts={model.total_counts} order={model.order} -> {args.out}")
    return EXIT_OK


def _models(args):
    if args.synthetic_p is not None:
        if args.drafter or args.verifier:
            raise UsageError("--synthetic-p cannot be combined with --drafter/--verifier")
        seed = int(os.environ[SEED_ENV]) if os.environ.get(SEED_ENV) else args.seed
        try:
            pair = SyntheticPairModel(args.synthetic_p, args.peak_mass, seed, synthetic_vocabulary(args.vocab_size))
        except ValueError as exc:
            raise UsageError(str(exc)) from None
        return pair.drafter, pair.verifier
    if args.verifier is None:
        raise UsageError("need --verifier (and --drafter) model files, or --synthetic-p")
    verifier = NGramModel.load(args.verifier)
    if args.drafter is None:
        if args.strategy != "greedy":
            raise UsageError(f"strategy {args.strategy!r} needs --drafter")
        return None, verifier
    drafter = NGramModel.load(args.drafter)
    if drafter.vocabulary != verifier.vocabulary:
        raise UsageError("drafter and verifier vocabularies differ")
    return drafter, verifier


def cmd_decode(args) -> int:
    # build everything before producing any output
    controller = DraftControllerConfig(args.k_min, args.k_max, args.alpha)
    vcfg = VerificationConfig(args.tau_base, args.gamma, args.beta, args.strict, args.tau_direction)
    weights = ConfidenceWeights(args.lambda_ent, args.lambda_margin, args.lambda_soft, args.sharpness)
    drafter, verifier = _models(args)
    vocab = verifier.vocabulary
    text = args.prompt_file.read_text(encoding="utf-8") if args.prompt_file else args.prompt
    try:
        prompt = vocab.encode(text)
    except KeyError as exc:
        raise UsageError(f"prompt: {exc.args[0]}") from None

    if args.strategy == "greedy":
        out, report = greedy_decode(verifier, prompt, args.max_len)
    else:
        session = DecodeSession(drafter, verifier, controller, vcfg, weights, args.max_len)
        if args.strategy == "specdec":
            out, report = specdec_fixed(session, prompt, args.k)
        else:
            out, report = cmasd_decode(session, prompt)

    text_out = vocab.decode(out)
    if args.trace_out:
        with open(args.trace_out, "w", encoding="utf-8") as fh:
            write_trace(report.trace, fh)
    if args.out:
        args.out.write_text(text_out + "\n", encoding="utf-8")
    print(text_out)
    print(
        f"strategy={report.strategy} tokens_out={report.tokens_out} iterations={report.iterations} "
        f"tok/iter={report.tok_per_iter:.3f} rollbacks={report.rollbacks} "
        f"mean_k_j={report.mean_k_j:.2f} verifier_passes={report.verifier_sequential_passes}"
    )
    return EXIT_OK


def cmd_bench(args) -> int:
    suite = load_suite(args.suite)
    rows, records = run_comparison(suite)
    csv_path, json_path = write_reports(suite, rows, records, args.out, wall_clock=args.wall_clock)
    print(render_table(rows))
    print(f"wrote {csv_path} and {json_path}")
    return EXIT_OK


COMMANDS = {"train": cmd_train, "decode": cmd_decode, "bench": cmd_bench}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except (UsageError, ConfigError, IngestionError, ModelFormatError, OSError) as exc:
        print(f"cmasd {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:  # noqa: BLE001
        print(f"cmasd {args.command}: internal error: {exc!r}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())

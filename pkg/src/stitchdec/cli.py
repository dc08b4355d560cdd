"""Command-line front end.

``stitchdec generate`` writes a synthetic scenario suite; ``stitchdec run``
decodes a suite in one search mode and writes a metrics report plus
per-utterance transcripts.

Exit codes: 0 success, 1 usage error, 2 input error, 3 contract violation.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from stitchdec.errors import ContractViolation, ScenarioFormatError
from stitchdec.metrics import MetricsAggregator
from stitchdec.scenario import GeneratorParams, ScenarioFile, generate_suite, load_scenario_file
from stitchdec.scorer import SyntheticScenario, SyntheticScorer
from stitchdec.search import DecodeResult, Mode, SearchConfig, decode

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_INPUT = 2
EXIT_CONTRACT = 3

THREADS_ENV = "STITCHDEC_THREADS"
MODE_CHOICES = ("rabs", "run", "back", "bsdec", "batch")

logger = logging.getLogger("stitchdec")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> None:  # argparse would exit with 2
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="stitchdec", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    run = sub.add_parser("run", help="decode a scenario suite")
    run.add_argument("--scenarios", required=True, type=Path, help="scenario file (JSON)")
    run.add_argument("--mode", choices=MODE_CHOICES, default="rabs")
    run.add_argument("--beam", type=int, default=10, help="beam width K")
    run.add_argument("--nu", type=float, default=1.0, help="running-stitch threshold on expected remaining tokens")
    run.add_argument("--upsilon", type=float, default=0.5, help="back-jump probability threshold")
    run.add_argument("--ctc-weight", type=float, default=0.4)
    run.add_argument("--max-len", type=int, default=200, help="maximum output length I_max")
    run.add_argument("--repeat-ngram", type=int, default=1, help="n-gram order for the bsdec repeat test")
    run.add_argument("--step-cost-ms", type=float, default=10.0, help="simulated cost of one decode step")
    run.add_argument("--seed", type=int, default=None, help="reseed every scenario's noise")
    run.add_argument("--out", type=Path, default=None, help="metrics report path")
    run.add_argument("--format", choices=("json", "csv"), default="json", help="metrics report format")
    run.add_argument(
        "--transcripts", type=Path, default=None, help="transcript path (default: <out>.transcripts.jsonl)"
    )
    run.add_argument("--wall-clock", action="store_true", help="report RTF from measured decode time")

    gen = sub.add_parser("generate", help="write a synthetic scenario suite")
    defaults = GeneratorParams()
    gen.add_argument("--count", type=int, default=defaults.count)
    gen.add_argument("--vocab-size", type=int, default=defaults.vocab_size, help="including blank, sos and eos")
    gen.add_argument("--min-tokens", type=int, default=defaults.min_tokens)
    gen.add_argument("--max-tokens", type=int, default=defaults.max_tokens)
    gen.add_argument("--misalignment-rate", type=float, default=defaults.misalignment_rate)
    gen.add_argument(
        "--repeat-rate", type=float, default=defaults.repeat_rate, help="chance of repeating the last 1-2 tokens"
    )
    gen.add_argument("--frames-per-block", type=int, default=defaults.frames_per_block)
    gen.add_argument("--frame-shift-ms", type=float, default=defaults.frame_shift)
    gen.add_argument("--seed", type=int, default=defaults.seed)
    gen.add_argument("--out", type=Path, required=True)
    return parser


def _reseed(scenario: SyntheticScenario, seed: Optional[int]) -> SyntheticScenario:
    if seed is None:
        return scenario
    mixed = int(np.random.SeedSequence([seed, scenario.noise_seed]).generate_state(1)[0]) & 0x7FFFFFFF
    return dataclasses.replace(scenario, noise_seed=mixed)


def _thread_count() -> int:
    raw = os.environ.get(THREADS_ENV, "1")
    try:
        value = int(raw)
    except ValueError:
        raise UsageError(f"{THREADS_ENV} must be an integer, got {raw!r}") from None
    if value < 1:
        raise UsageError(f"{THREADS_ENV} must be at least 1")
    return value


def decode_suite(suite: ScenarioFile, config: SearchConfig, seed: Optional[int] = None, threads: int = 1) -> list[DecodeResult]:
    """Decode every scenario; results come back in file order."""
    scenarios = [_reseed(s, seed) for s in suite.scenarios]

    def one(scenario: SyntheticScenario) -> DecodeResult:
        schedule = suite.schedule_for(scenario)
        scorer = SyntheticScorer(scenario, suite.vocab, schedule)
        return decode(scorer, schedule, config, scenario.scenario_id)

    if threads <= 1:
        return [one(s) for s in scenarios]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(one, scenarios))


def _transcript_lines(suite: ScenarioFile, results: Sequence[DecodeResult], mode: str) -> str:
    lines = []
    for scenario, res in zip(suite.scenarios, results):
        lines.append(
            json.dumps(
                {
                    "id": scenario.scenario_id,
                    "mode": mode,
                    "hypothesis": suite.vocab.render(res.transcript),
                    "reference": suite.vocab.render(scenario.reference_tokens),
                    "tokens": list(res.transcript),
                    "score": res.best.combined,
                    "correct": res.transcript == scenario.reference_tokens,
                    "truncated": res.truncated,
                },
                sort_keys=True,
            )
        )
    return "\n".join(lines) + ("\n" if lines else "")


def cmd_run(args: argparse.Namespace) -> int:
    try:
        config = SearchConfig(
            beam_width=args.beam,
            nu=args.nu,
            upsilon=args.upsilon,
            max_len=args.max_len,
            ctc_weight=args.ctc_weight,
            mode=Mode.parse(args.mode),
            repeat_ngram=args.repeat_ngram,
            step_cost_ms=args.step_cost_ms,
        )
    except ContractViolation as exc:
        raise UsageError(f"stitchdec run: error: {exc}") from None
    threads = _thread_count()
    suite = load_scenario_file(args.scenarios)
    results = decode_suite(suite, config, args.seed, threads)

    sink = MetricsAggregator(config.mode.value)
    for scenario, res in zip(suite.scenarios, results):
        sink.submit(res.timeline, res.transcript == scenario.reference_tokens)
    report = sink.report(order=[s.scenario_id for s in suite.scenarios], wall_clock=args.wall_clock)

    if args.out is not None:
        if args.format == "json":
            doc = report.to_dict()
            doc["config"] = {
                "mode": config.mode.value,
                "beam": config.beam_width,
                "nu": config.nu,
                "upsilon": config.upsilon,
                "ctc_weight": config.ctc_weight,
                "max_len": config.max_len,
                "repeat_ngram": config.repeat_ngram,
                "step_cost_ms": config.step_cost_ms,
                "seed": args.seed,
                "scenarios": str(args.scenarios),
            }
            body = json.dumps(doc, indent=2, sort_keys=True) + "\n"
        else:
            body = report.to_csv()
        args.out.write_text(body, encoding="utf-8")
        transcripts = args.transcripts or args.out.with_name(args.out.name + ".transcripts.jsonl")
    else:
        transcripts = args.transcripts
    if transcripts is not None:
        transcripts.write_text(_transcript_lines(suite, results, config.mode.value), encoding="utf-8")

    correct = sum(1 for r in report.rows if r.correct)
    summary = report.to_dict()["summary"]
    fields = [f"mode={config.mode.value}", f"correct={correct}/{len(report.rows)}"]
    fields += [f"{k}={summary[k]}" for k in ("ep50_ms", "ep90_ms", "rtf", "avg_last_steps", "discard_count", "truncated_count", "clock")]
    print(" ".join(fields))
    return EXIT_OK


def cmd_generate(args: argparse.Namespace) -> int:
    params = GeneratorParams(
        count=args.count,
        vocab_size=args.vocab_size,
        min_tokens=args.min_tokens,
        max_tokens=args.max_tokens,
        misalignment_rate=args.misalignment_rate,
        repeat_rate=args.repeat_rate,
        seed=args.seed,
        frames_per_block=args.frames_per_block,
        frame_shift=args.frame_shift_ms,
    )
    try:
        params.check()
    except ContractViolation as exc:
        raise UsageError(f"stitchdec generate: error: {exc}") from None
    generate_suite(params).save(args.out)
    print(f"wrote {params.count} scenarios to {args.out}")
    return EXIT_OK


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.ERROR, format="%(levelname)s %(name)s: %(message)s")
        if args.command == "run":
            return cmd_run(args)
        return cmd_generate(args)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except ScenarioFormatError as exc:
        print(f"stitchdec: input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except ContractViolation as exc:
        print(f"stitchdec: contract violation: {exc}", file=sys.stderr)
        return EXIT_CONTRACT
    except OSError as exc:
        print(f"stitchdec: I/O error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())

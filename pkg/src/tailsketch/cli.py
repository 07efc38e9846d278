"""Command-line entry point: synth, bootstrap, run, evaluate, inspect.

Exit codes: 0 success, 1 usage error, 2 data error.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .clustering import SamplerParams
from .errors import ParseError, StateVersionMismatch, TailSketchError
from .evalkit import SynthConfig, evaluate_files, generate_synthetic, save_report
from .pipeline import RunConfig, TraceSampler, run_bootstrap, run_stream
from .sketch import BIT_MODES

log = logging.getLogger("tailsketch")

EXIT_OK, EXIT_USAGE, EXIT_DATA = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _sampler_flags(p: argparse.ArgumentParser):
    d = SamplerParams()
    g = p.add_argument_group("sampler")
    g.add_argument("--budget", type=float, default=d.budget, help="sampling budget B")
    g.add_argument("--lambda", dest="lam", type=float, default=d.lam, help="decay factor lambda of 2^(-lambda*t)")
    g.add_argument("--alpha", type=float, default=d.alpha, help="PMC weight threshold alpha (> 1)")
    g.add_argument("--epsilon", type=float, default=d.epsilon, help="merge radius threshold epsilon")
    g.add_argument("--time-unit", type=float, default=d.time_unit, help="seconds of trace time per decay tick")
    g.add_argument("--clock", choices=("timestamp", "logical"), default=d.clock,
                   help="tick source: trace timestamps, or one tick per trace")
    g.add_argument("--rng-seed", type=int, default=d.rng_seed, help="seed of the budget-sampling RNG")
    g.add_argument("--hard-cap", action="store_true", help="also hold rare-trace sampling to the budget")
    g = p.add_argument_group("sketch")
    g.add_argument("--sketch-length", type=int, default=100, help="sketch length L")
    g.add_argument("--p-max", type=int, default=64, help="max components per call path |p|_max")
    g.add_argument("--hash-seed", type=int, default=0, help="seed of the hash coefficient matrix")
    g.add_argument("--hash-bit", choices=BIT_MODES, default="mix",
                   help="sign bit: top bit of the finalized hash (mix), raw top bit (msb) or low bit (parity)")
    g.add_argument("--skip-first-token", action="store_true",
                   help="leave the root token out of the path hash")


def _params(a) -> SamplerParams:
    return SamplerParams(budget=a.budget, lam=a.lam, alpha=a.alpha, epsilon=a.epsilon,
                         time_unit=a.time_unit, rng_seed=a.rng_seed, clock=a.clock, hard_cap=a.hard_cap)


def build_parser() -> argparse.ArgumentParser:
    fmt = argparse.ArgumentDefaultsHelpFormatter
    p = _Parser(prog="tailsketch", description=__doc__, formatter_class=fmt)
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging on stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("synth", help="generate a seeded synthetic dataset", formatter_class=fmt)
    d = SynthConfig()
    s.add_argument("--out-dir", type=Path, required=True, help="directory for train/test/labels files")
    s.add_argument("--seed", type=int, default=0, help="generator seed")
    s.add_argument("--n-train", type=int, default=d.n_train, help="fault-free training traces")
    s.add_argument("--n-test", type=int, default=d.n_test, help="test traces")
    s.add_argument("--anomaly-fraction", type=float, default=d.anomaly_fraction,
                   help="exact fraction of anomalous test traces")
    s.add_argument("--sigma", type=float, default=d.duration_sigma, help="lognormal sigma of span durations")
    s.add_argument("--spacing-us", type=int, default=d.spacing_us, help="mean gap between trace starts")

    b = sub.add_parser("bootstrap", help="cluster fault-free training traces into an initial state",
                       formatter_class=fmt)
    b.add_argument("--train", type=Path, required=True, help="training spans (JSON lines)")
    b.add_argument("--state", type=Path, required=True, help="state file to write")
    b.add_argument("--dbscan-eps", type=float, default=None, help="DBSCAN eps (default: 2 * epsilon)")
    b.add_argument("--min-pts", type=int, default=3, help="DBSCAN minPts")
    _sampler_flags(b)

    r = sub.add_parser("run", help="stream test traces through the sampler", formatter_class=fmt)
    r.add_argument("--test", type=Path, required=True, help="test spans (JSON lines)")
    r.add_argument("--state", type=Path, default=None, help="state file to resume from and update")
    r.add_argument("--decisions", type=Path, required=True, help="decision log to write (JSON lines)")
    r.add_argument("--sampled", type=Path, default=None, help="spans of sampled traces (JSON lines)")
    r.add_argument("--empty-state", action="store_true",
                   help="start from an empty sampler when no state file exists (uses the flags below)")
    r.add_argument("--timeout-s", type=float, default=30.0, help="trace completion timeout in stream seconds; 0 groups by end of file")
    r.add_argument("--dump-vectors", type=Path, default=None, help="debug: write call-path vectors here")
    _sampler_flags(r)

    e = sub.add_parser("evaluate", help="coverage and sampling rate of a decision log", formatter_class=fmt)
    e.add_argument("--decisions", type=Path, required=True, help="decision log (JSON lines)")
    e.add_argument("--labels", type=Path, required=True, help="labels (JSON lines of trace_id, kind)")
    e.add_argument("--report", type=Path, default=None, help="report file (default: standard output)")

    i = sub.add_parser("inspect", help="print a summary of a state file", formatter_class=fmt)
    i.add_argument("--state", type=Path, required=True, help="state file")
    return p


def _cmd_synth(a) -> int:
    cfg = SynthConfig(n_train=a.n_train, n_test=a.n_test, anomaly_fraction=a.anomaly_fraction,
                      duration_sigma=a.sigma, spacing_us=a.spacing_us)
    files = generate_synthetic(cfg, seed=a.seed, out_dir=a.out_dir)
    log.info("synth: %s, labels %s", files.counts, files.labels.count_by_kind())
    return EXIT_OK


def _cmd_bootstrap(a) -> int:
    cfg = RunConfig(train_path=a.train, state_path=a.state, params=_params(a), L=a.sketch_length,
                    p_max=a.p_max, hash_seed=a.hash_seed, hash_bit=a.hash_bit,
                    skip_first_token=a.skip_first_token, dbscan_eps=a.dbscan_eps, min_pts=a.min_pts)
    run_bootstrap(cfg)
    return EXIT_OK


def _cmd_run(a) -> int:
    if (a.state is None or not a.state.exists()) and not a.empty_state:
        raise UsageError("no state to resume: run 'bootstrap' first or pass --empty-state")
    cfg = RunConfig(test_path=a.test, state_path=a.state, decisions_path=a.decisions,
                    sampled_path=a.sampled, params=_params(a), L=a.sketch_length, p_max=a.p_max,
                    hash_seed=a.hash_seed, hash_bit=a.hash_bit, skip_first_token=a.skip_first_token,
                    empty_state=a.empty_state, timeout_us=int(a.timeout_s * 1e6) if a.timeout_s > 0 else None,
                    vectors_path=a.dump_vectors)
    summary = run_stream(cfg)
    log.info("run: %d traces, %d sampled (%.2f%%), %d PMC, %d OMC, %d rejected", summary.traces,
             summary.sampled, 100.0 * summary.sampled / max(summary.traces, 1), summary.n_pmc,
             summary.n_omc, summary.rejected)
    return EXIT_OK


def _cmd_evaluate(a) -> int:
    report = evaluate_files(a.decisions, a.labels)
    if a.report is None:
        sys.stdout.write(report.to_json() + "\n")
    else:
        save_report(report, a.report)
    log.info("evaluate: coverage %.4f, sampling rate %.4f", report.coverage, report.sampling_rate)
    return EXIT_OK


def _cmd_inspect(a) -> int:
    ts = TraceSampler.load(a.state)
    out = {"hasher": {k: v for k, v in ts.hasher.to_dict().items() if k != "registry"},
           "tokens": len(ts.hasher.registry), "sampler": ts.sampler.summary()}
    sys.stdout.write(json.dumps(out, indent=2) + "\n")
    return EXIT_OK


COMMANDS = {
    "synth": _cmd_synth,
    "bootstrap": _cmd_bootstrap,
    "run": _cmd_run,
    "evaluate": _cmd_evaluate,
    "inspect": _cmd_inspect,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        a = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.DEBUG if a.verbose else logging.INFO, stream=sys.stderr,
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s", force=True)
    try:
        return COMMANDS[a.command](a)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"tailsketch: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ParseError, StateVersionMismatch, TailSketchError, FileNotFoundError, json.JSONDecodeError,
            ValueError, OSError) as exc:
        log.error("%s", exc)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())

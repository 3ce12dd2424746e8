"""
Command-line entry point.

    python cli.py theory   CONFIG [--format json]
    python cli.py simulate CONFIG [--trials N] [--seed S] [--threads T] [--out PATH] [--format csv|json]
    python cli.py figure   FIGURE [--scale X] [--trials N] [--seed S] [--threads T] [--out PATH] [--format csv|json]
    python cli.py verify   [SUITE] [--seed S] [--out PATH]
    python cli.py gradcheck [--seed S] [--d D] [--n N] [--k K]

Exit codes: 0 success, 1 usage / parse / output error, 2 verification
failure, 3 theory or policy used outside its regime.
"""

import argparse
import json
import logging
import sys
import time

from errors import ConfigParseError, DomainError, ShapeError, TTTLabError, UnsupportedRegimeError
from figures import FIGURES, run_figure
from linalg import make_rng
from model import ttt_step
from montecarlo import POLICY_MANUAL, estimate_ttt_loss, gradient_check, rank_one_residual, run_theory
from records import OUTPUT_FORMATS, SweepRecord, check_writable, write_records
from settings import get_setting, load_config
from verification import GRADIENT_TOLERANCE, RANK_TOLERANCE, SUITE_CHOICES, random_unit_box_set, verify

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_VERIFY_FAILED = 2
EXIT_REGIME = 3


class LabArgumentParser(argparse.ArgumentParser):
    """ArgumentParser whose usage errors exit with EXIT_USAGE."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def banner(text, width=60):
    print(f"\n{'=' * width}", file=sys.stderr)
    print(text, file=sys.stderr)
    print('=' * width, file=sys.stderr)


def emit(text, out_path=None):
    """Write a payload to out_path, or to stdout."""
    if out_path is None:
        sys.stdout.write(text)
        return
    check_writable(out_path)
    with open(out_path, 'w', encoding='utf-8', newline='') as f:
        f.write(text)


# ============================================================================
# SUBCOMMANDS
# ============================================================================

def theory_for_config(cfg):
    """
    Theory report for a config, or None when a manual step size runs outside
    every regime the formulas cover.

    Raises:
        UnsupportedRegimeError: For theory_* policies outside their regime
    """
    try:
        return run_theory(cfg)
    except (UnsupportedRegimeError, DomainError) as e:
        if cfg.eta_policy != POLICY_MANUAL:
            raise
        logger.warning("No theory value for this manual-step config: %s", e)
        return None


def run_config(config_path, out_path=None, fmt='csv', trials=None, seed=None, threads=1):
    """
    Execute one experiment config: Monte-Carlo estimate plus, where a formula
    covers the config, the theory report.

    Losses are written unnormalised (the config may set β = 0). loss_theory
    is left empty for manual-step configs outside every theory regime.

    Returns:
        list holding one SweepRecord
    """
    cfg = load_config(config_path, trials=trials, seed=seed)
    check_writable(out_path)
    theory = theory_for_config(cfg)
    estimate = estimate_ttt_loss(cfg, threads=threads)
    regime = theory.regime_tag if theory is not None else 'none'
    logger.info("%s: %s regime, %d trials, seed %d", config_path, regime, cfg.trials, cfg.base_seed)
    record = SweepRecord(
        sweep_var='config',
        value=cfg.k / cfg.d,
        loss_theory=max(float(theory.predicted_final_loss), 0.0) if theory is not None else None,
        loss_mc_mean=estimate.mean,
        loss_mc_stderr=estimate.std_error,
        init=cfg.init,
        n=cfg.n,
        d=cfg.d,
        k=cfg.k,
        sigma=cfg.task.sigma,
        seed=cfg.base_seed,
    )
    write_records([record], out_path, fmt)
    return [record]


def cmd_theory(args):
    cfg = load_config(args.config)
    report = run_theory(cfg)
    if args.format == 'json':
        emit(json.dumps(report.to_dict(), indent=2) + '\n', args.out)
        return EXIT_OK
    lines = [f"{name:<22} {value}" for name, value in report.to_dict().items()]
    emit('\n'.join(lines) + '\n', args.out)
    return EXIT_OK


def cmd_simulate(args):
    banner(f"🚀 Simulating {args.config}")
    start_time = time.time()
    records = run_config(args.config, args.out, args.format, trials=args.trials, seed=args.seed, threads=args.threads)
    if args.out is None:
        sys.stdout.write(write_records(records, None, args.format))
    record = records[0]
    theory = f"{record.loss_theory:.6g}" if record.loss_theory is not None else "n/a"
    print(
        f"✅ Done in {time.time() - start_time:.2f}s: theory {theory}, "
        f"MC {record.loss_mc_mean:.6g} ± {record.loss_mc_stderr:.2g}",
        file=sys.stderr,
    )
    return EXIT_OK


def cmd_figure(args):
    trials = args.trials if args.trials is not None else get_setting('trials')
    seed = args.seed if args.seed is not None else get_setting('seed')
    banner(f"🚀 {args.figure_id} at scale {args.scale:g} ({trials} trials, seed {seed})")
    start_time = time.time()
    records = run_figure(
        args.figure_id,
        scale=args.scale,
        trials=trials,
        seed=seed,
        out_path=args.out,
        fmt=args.format,
        threads=args.threads,
    )
    if args.out is None:
        sys.stdout.write(write_records(records, None, args.format))
    print(f"✅ {len(records)} record(s) in {time.time() - start_time:.2f}s", file=sys.stderr)
    return EXIT_OK


def cmd_verify(args):
    seed = args.seed if args.seed is not None else get_setting('seed')
    banner(f"🔍 Verifying '{args.suite}' (seed {seed})")
    results = verify(args.suite, seed=seed)
    for result in results:
        marker = '✅' if result.passed else '❌'
        print(f"{marker} {result.suite} ({result.elapsed:.2f}s)", file=sys.stderr)
        for check in result.checks:
            status = 'ok' if check.passed else 'FAIL'
            print(f"   [{status}] {check.name}: {check.value:.4g} (limit {check.threshold:.4g})", file=sys.stderr)
    passed = all(r.passed for r in results)
    report = {'seed': seed, 'passed': passed, 'suites': [r.to_dict() for r in results]}
    emit(json.dumps(report, indent=2) + '\n', args.out)
    return EXIT_OK if passed else EXIT_VERIFY_FAILED


def cmd_gradcheck(args):
    seed = args.seed if args.seed is not None else get_setting('seed')
    rng = make_rng(seed, 6)
    test_set = random_unit_box_set(rng, args.d, args.n, args.k)
    W = rng.uniform(-1.0, 1.0, (args.d, args.d))
    gap = gradient_check(W, test_set)
    residual = rank_one_residual(ttt_step(W, test_set, 0.01) - W)
    passed = gap <= GRADIENT_TOLERANCE and residual <= RANK_TOLERANCE
    marker = '✅' if passed else '❌'
    print(f"{marker} d={args.d} n={args.n} k={args.k} seed={seed}", file=sys.stderr)
    sys.stdout.write(json.dumps({
        'max_abs_gradient_gap': gap,
        'rank_one_residual': residual,
        'passed': passed,
    }, indent=2) + '\n')
    return EXIT_OK if passed else EXIT_VERIFY_FAILED


# ============================================================================
# PARSER
# ============================================================================

def positive_scale(raw):
    try:
        value = float(raw)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: '{raw}'")
    if not 0 < value <= 1:
        raise argparse.ArgumentTypeError(f"scale must lie in (0, 1], got {raw}")
    return value


def build_parser():
    parser = LabArgumentParser(prog='ttt-lab', description="Single-step test-time training lab for linear attention")
    sub = parser.add_subparsers(dest='command', required=True, parser_class=LabArgumentParser)

    def run_flags(p):
        p.add_argument('--trials', type=int, default=None, help="Monte-Carlo trials (default: TTT_TRIALS or file)")
        p.add_argument('--seed', type=int, default=None, help="Base seed (default: TTT_SEED or file)")
        p.add_argument('--threads', type=int, default=get_setting('threads'), help="Worker threads, 0 = auto")
        p.add_argument('--out', default=None, help="Output file (default: stdout)")
        p.add_argument('--format', choices=OUTPUT_FORMATS, default='csv')

    p = sub.add_parser('theory', help="Print the theory report for a config")
    p.add_argument('config')
    p.add_argument('--format', choices=('text', 'json'), default='text')
    p.add_argument('--out', default=None)
    p.set_defaults(handler=cmd_theory)

    p = sub.add_parser('simulate', help="Run one experiment config")
    p.add_argument('config')
    run_flags(p)
    p.set_defaults(handler=cmd_simulate)

    p = sub.add_parser('figure', help="Reproduce a figure sweep")
    p.add_argument('figure_id', choices=tuple(FIGURES))
    p.add_argument('--scale', type=positive_scale, default=1.0)
    run_flags(p)
    p.set_defaults(handler=cmd_figure)

    p = sub.add_parser('verify', help="Run verification suites")
    p.add_argument('suite', nargs='?', choices=SUITE_CHOICES, default='all')
    p.add_argument('--seed', type=int, default=None)
    p.add_argument('--out', default=None, help="JSON report file (default: stdout)")
    p.set_defaults(handler=cmd_verify)

    p = sub.add_parser('gradcheck', help="Finite-difference check of the TTT gradient")
    p.add_argument('--seed', type=int, default=None)
    p.add_argument('--d', type=int, default=4)
    p.add_argument('--n', type=int, default=3)
    p.add_argument('--k', type=int, default=2)
    p.set_defaults(handler=cmd_gradcheck)
    return parser


def main(argv=None):
    try:
        parser = build_parser()
        args = parser.parse_args(argv)
        logging.basicConfig(
            level=getattr(logging, str(get_setting('log_level')).upper(), logging.INFO),
            format='%(asctime)s %(levelname)s %(name)s: %(message)s',
        )
        return args.handler(args)
    except UnsupportedRegimeError as e:
        print(f"⚠️  Unsupported regime: {e}", file=sys.stderr)
        return EXIT_REGIME
    except ConfigParseError as e:
        print(f"❌ Config error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (ShapeError, DomainError, KeyError, OSError) as e:
        print(f"❌ {e}", file=sys.stderr)
        return EXIT_USAGE
    except TTTLabError as e:
        print(f"❌ {e}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == '__main__':
    sys.exit(main())

"""
Command-line interface for rankforge

Subcommands:
    test           one rank test on a CSV sample
    estimate-rank  sequential rank estimate on a CSV sample
    simulate       Monte Carlo level/power table
    figure-data    null-law comparison and quantile-accuracy data

Exit status: 0 on success, 1 on usage or input errors, 2 on numerical failures.
"""
import argparse
import logging
import sys
from pathlib import Path
from typing import List, Optional

# Add project root to Python path
project_root = Path(__file__).parent
sys.path.insert(0, str(project_root))

from pydantic import ValidationError  # noqa: E402

from rankforge import settings  # noqa: E402
from rankforge.campaign import null_comparison, quantile_accuracy, run_campaign  # noqa: E402
from rankforge.constants import DEFAULT_WEIGHT_LAW, FLOAT_FORMAT  # noqa: E402
from rankforge.core_linalg import restrict_columns  # noqa: E402
from rankforge.exceptions import DegenerateSlicing, InvalidInput, RankForgeError  # noqa: E402
from rankforge.min_discrepancy import OptimizerConfig  # noqa: E402
from rankforge.rank_testing import (  # noqa: E402
    Lambda1Variant,
    RankTestSpec,
    TestMethod,
    TiePolicy,
    estimate_rank,
    run_test,
)
from rankforge.schemas import COLUMNS, CampaignConfig, rank_estimate_report, rank_test_report  # noqa: E402
from rankforge.sir import (  # noqa: E402
    MODEL_IDS,
    SLICING_MODES,
    WEIGHT_LAWS,
    WStarSampler,
    build_matrices,
    contrast_basis,
    read_csv,
)
from rankforge.statistics import StatKind  # noqa: E402

logger = logging.getLogger("rankforge.cli")

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_NUMERICAL = 2

DEFAULT_SIDECAR = "campaign.json"


class _Parser(argparse.ArgumentParser):
    """ArgumentParser that reports usage errors with exit status 1"""

    def error(self, message):
        self.print_help(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _add_sample_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--input", required=True, help="CSV with header; Y first, then X1..Xp")
    p.add_argument("--stat", choices=[k.value for k in StatKind], default="lambda1")
    p.add_argument("--method", choices=[m.value for m in TestMethod], default="asymptotic")
    p.add_argument("--variant", choices=[v.value for v in Lambda1Variant], default=None,
                   help="weighted chi-squared approximation for lambda1 (default wood)")
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--boot", type=int, default=1000, help="bootstrap replicates B")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--slices", type=int, default=5, help="number of slices H")
    p.add_argument("--slicing", choices=SLICING_MODES, default="count")
    p.add_argument("--weights", choices=WEIGHT_LAWS, default=DEFAULT_WEIGHT_LAW, help="bootstrap weight law")
    p.add_argument("--tie-policy", choices=[t.value for t in TiePolicy], default="error")
    p.add_argument("--restarts", type=int, default=2, help="random restarts for lambda3")
    p.add_argument("--workers", type=int, default=1, help="threads for bootstrap replicates")
    p.add_argument("--out", default=None, help="JSON output path (stdout when omitted)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="rankforge", description="Rank tests for estimated matrices")
    parser.add_argument("-v", "--verbose", action="count", default=0, help="-v info, -vv debug")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    test = sub.add_parser("test", help="test H0: rank = m on a CSV sample")
    _add_sample_flags(test)
    test.add_argument("--m", type=int, required=True, help="tested rank")

    est = sub.add_parser("estimate-rank", help="sequential rank estimate on a CSV sample")
    _add_sample_flags(est)

    sim = sub.add_parser("simulate", help="Monte Carlo level/power table")
    sim.add_argument("--model", choices=MODEL_IDS, default="I")
    sim.add_argument("--n", type=int, nargs="+", default=[100], help="sample sizes")
    sim.add_argument("--p", type=int, default=6)
    sim.add_argument("--slices", type=int, default=5, help="number of slices H")
    sim.add_argument("--reps", type=int, default=500)
    sim.add_argument("--boot", type=int, default=500)
    sim.add_argument("--alpha", type=float, default=0.05)
    sim.add_argument("--ranks", type=int, nargs="+", default=[0, 1])
    sim.add_argument("--columns", nargs="+", choices=COLUMNS, default=list(COLUMNS))
    sim.add_argument("--seed", type=int, default=0)
    sim.add_argument("--parallelism", type=int, default=1)
    sim.add_argument("--weights", choices=WEIGHT_LAWS, default=DEFAULT_WEIGHT_LAW)
    sim.add_argument("--slicing", choices=SLICING_MODES, default="count")
    sim.add_argument("--mc-draws", type=int, default=settings.MC_DRAWS)
    sim.add_argument("--out", default=None, help="CSV output path (stdout when omitted)")
    sim.add_argument("--sidecar", default=None,
                     help=f"JSON metadata path (default: <out>.json, or {DEFAULT_SIDECAR} when the table goes to stdout)")
    sim.add_argument("--log-details", default=None, help="per-replication CSV log path")

    fig = sub.add_parser("figure-data", help="data for the null-law and quantile-accuracy figures")
    fig.add_argument("--kind", choices=["null", "accuracy"], default="null")
    fig.add_argument("--model", choices=MODEL_IDS, default="I")
    fig.add_argument("--n", type=int, default=100)
    fig.add_argument("--m", type=int, default=1)
    fig.add_argument("--stat", choices=[k.value for k in StatKind], default="lambda3")
    fig.add_argument("--draws", type=int, default=2000, help="fresh null samples")
    fig.add_argument("--boot", type=int, default=2000)
    fig.add_argument("--samples", type=int, default=100, help="bootstrap samples (accuracy only)")
    fig.add_argument("--alpha", type=float, default=0.05)
    fig.add_argument("--seed", type=int, default=0)
    fig.add_argument("--p", type=int, default=6)
    fig.add_argument("--slices", type=int, default=5)
    fig.add_argument("--parallelism", type=int, default=1)
    fig.add_argument("--out", default=None, help="CSV output path (stdout when omitted)")
    return parser


def _emit(text: str, out: Optional[str]) -> None:
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)
        if not text.endswith("\n"):
            sys.stdout.write("\n")


def _load(args):
    sample = read_csv(args.input, args.slices, args.slicing)
    matrices, est = build_matrices(sample)
    basis = contrast_basis(args.slices)
    reduced = restrict_columns(est, basis)
    sampler = WStarSampler(matrices, args.weights, basis)
    spec = RankTestSpec(
        kind=StatKind(args.stat),
        m=getattr(args, "m", 0),
        method=TestMethod(args.method),
        variant=args.variant if args.stat == StatKind.LAMBDA1.value and args.method == "asymptotic" else None,
        alpha=args.alpha,
        replicates=args.boot,
        seed=args.seed,
        optimizer=OptimizerConfig(restarts=args.restarts),
        tie_policy=TiePolicy(args.tie_policy),
        workers=args.workers,
    )
    return reduced, sampler, spec


def cmd_test(args) -> int:
    est, sampler, spec = _load(args)
    result = run_test(est, spec, sampler, sampler.gamma_star_rule)
    _emit(rank_test_report(result).model_dump_json(indent=2), args.out)
    return EXIT_OK


def cmd_estimate_rank(args) -> int:
    est, sampler, spec = _load(args)
    estimate = estimate_rank(est, spec, sampler, sampler.gamma_star_rule)
    _emit(rank_estimate_report(estimate).model_dump_json(indent=2), args.out)
    return EXIT_OK


def cmd_simulate(args) -> int:
    cfg = CampaignConfig(
        model=args.model,
        n_values=args.n,
        p=args.p,
        h=args.slices,
        reps=args.reps,
        boot_b=args.boot,
        alpha=args.alpha,
        ranks_to_test=args.ranks,
        columns=args.columns,
        master_seed=args.seed,
        parallelism=args.parallelism,
        weight_law=args.weights,
        slicing=args.slicing,
        mc_draws=args.mc_draws,
    )
    table = run_campaign(cfg)
    if args.out:
        table.to_csv(args.out)
    else:
        sys.stdout.write(table.to_csv())
    sidecar = args.sidecar or (f"{args.out}.json" if args.out else DEFAULT_SIDECAR)
    table.write_sidecar(sidecar)
    logger.info("📊 campaign metadata written to %s", sidecar)
    if args.log_details:
        table.write_log(args.log_details)
        logger.info("📊 per-replication log written to %s", args.log_details)
    return EXIT_OK


def cmd_figure_data(args) -> int:
    common = dict(
        model_id=args.model, n=args.n, m=args.m, kind=StatKind(args.stat), seed=args.seed,
        p=args.p, h=args.slices, workers=args.parallelism,
    )
    if args.kind == "null":
        frame = null_comparison(draws=args.draws, boot_b=args.boot, **common)
    else:
        frame = quantile_accuracy(
            samples=args.samples, boot_b=args.boot, null_draws=args.draws, alpha=args.alpha, **common
        )
    text = frame.to_csv(index=False, float_format=FLOAT_FORMAT)
    _emit(text, args.out)
    return EXIT_OK


COMMANDS = {
    "test": cmd_test,
    "estimate-rank": cmd_estimate_rank,
    "simulate": cmd_simulate,
    "figure-data": cmd_figure_data,
}


def main(argv: Optional[List[str]] = None) -> int:
    """
    Parse argv and run one subcommand

    Returns:
        Exit status (0 ok, 1 usage/input error, 2 numerical failure)
    """
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    settings.configure_logging("DEBUG" if args.verbose > 1 else "INFO" if args.verbose else None)
    try:
        return COMMANDS[args.command](args)
    except (InvalidInput, DegenerateSlicing, ValidationError, FileNotFoundError, ValueError) as e:
        print(f"rankforge: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except RankForgeError as e:
        print(f"rankforge: numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())

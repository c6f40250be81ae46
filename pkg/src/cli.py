"""
Command-line front door for the Volterra control toolkit

Usage:
    python src/cli.py harvest --config config/harvest_42.toml
    python src/cli.py simulate --config config/minimal.toml --paths 20000 --seed 7
    python src/cli.py adjoint --config config/minimal.toml --out output/adjoint
    python src/cli.py check-mp --config config/harvest_42.toml
    python src/cli.py duality-test --paths 100000
    python src/cli.py harvest --config config/harvest_42.toml --dry-run

Exit codes: 0 success, 1 configuration or usage error, 2 numerical failure,
3 check-mp or duality-test ran to completion but a check failed (artifacts are kept).
"""
import argparse
import logging
import sys
from typing import List, Optional

import pandas as pd

from adjoint import estimate_q_diagonal, solve_closed_form, solve_regression
from config import LOG_LEVEL, VERSION, ConfigError, RunConfig, dump_config, load_config
from core import InvalidArgumentError, VolterraError, make_grid, sample_brownian
from forward import ensemble_summary, evaluate_J, simulate
from harvest import policy_control, run_scenario, scenario_from_config, solve_reflected_adjoint
from kernels import neumann_psi
from malliavin import duality_suite
from maxprinciple import adjoint_spec
from report import ResultStore, build_manifest


LOGGER = logging.getLogger("volterra")

SUBCOMMANDS = ("simulate", "adjoint", "check-mp", "harvest", "duality-test")
# subcommands whose verdict sets the exit status
CHECK_COMMANDS = ("check-mp", "duality-test")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """Usage errors exit with status 1 like configuration errors."""

    def error(self, message):
        raise UsageError(f"{message}\n{self.format_usage().strip()}")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=str, default=None, help="Run configuration (TOML)")
    common.add_argument("--seed", type=int, default=None, help="Override ensemble.seed")
    common.add_argument("--paths", type=int, default=None, help="Override ensemble.M")
    common.add_argument("--steps", type=int, default=None, help="Override grid.N")
    common.add_argument("--workers", type=int, default=None, help="Threads for path generation")
    common.add_argument("--out", type=str, default=None, help="Output directory")
    common.add_argument("--dry-run", action="store_true", help="Validate and print the resolved config only")
    common.add_argument("--verbose", action="store_true", help="Debug logging")

    parser = _Parser(prog="volterra", description="Singular control of stochastic Volterra equations")
    parser.add_argument("--version", action="version", version=f"volterra {VERSION}")
    sub = parser.add_subparsers(dest="command", metavar="{" + ",".join(SUBCOMMANDS) + "}", parser_class=_Parser)
    sub.required = True
    sub.add_parser("simulate", parents=[common], help="Simulate the state under the configured policy")
    sub.add_parser("adjoint", parents=[common], help="Solve the adjoint equation")
    sub.add_parser("check-mp", parents=[common], help="Check the maximum-principle conditions")
    sub.add_parser("harvest", parents=[common], help="Run the harvesting scenario end to end")
    sub.add_parser("duality-test", parents=[common], help="Monte Carlo check of the duality formula")
    return parser


def setup_logging(verbose: bool = False):
    level = logging.DEBUG if verbose else getattr(logging, LOG_LEVEL, logging.INFO)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s %(message)s", stream=sys.stderr, force=True)


def resolve_config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    return cfg.with_overrides(seed=args.seed, paths=args.paths, steps=args.steps, out=args.out, workers=args.workers)


# =============================================================================
# Subcommands
# =============================================================================

def _policy(cfg: RunConfig, scenario, W):
    """Fixed policy from the config, or the reflected harvest when asked for."""
    if cfg.model.policy.kind == "reflected":
        _, xi = solve_reflected_adjoint(scenario, W, cfg.solver.degree, cfg.solver.max_iter, cfg.solver.fixed_point_tol)
        return xi
    if cfg.model.policy.kind == "coupled":
        raise ConfigError("policy 'coupled' is only available in the harvest subcommand", key="model.policy")
    return policy_control(cfg.model.policy, W.grid)


def cmd_simulate(cfg: RunConfig, store: ResultStore) -> dict:
    scenario = scenario_from_config(cfg)
    grid = make_grid(cfg.grid.T, cfg.grid.N)
    W = sample_brownian(grid, cfg.ensemble.M, cfg.ensemble.seed, cfg.ensemble.workers)
    xi = _policy(cfg, scenario, W)
    X = simulate(scenario.svie, None, xi, W)
    J = evaluate_J(scenario.performance, X, None, xi, W)
    store.add_table("paths", ensemble_summary(X, xi))
    store.add_table("performance", pd.DataFrame({"J": [J.value], "J_se": [J.se]}))
    print(f"J = {J.value:.6g} (se {J.se:.3g})")
    return {"J": J.value, "J_se": J.se}


def cmd_adjoint(cfg: RunConfig, store: ResultStore) -> dict:
    scenario = scenario_from_config(cfg)
    grid = make_grid(cfg.grid.T, cfg.grid.N)
    W = sample_brownian(grid, cfg.ensemble.M, cfg.ensemble.seed, cfg.ensemble.workers)
    xi = _policy(cfg, scenario, W)
    X = simulate(scenario.svie, None, xi, W)
    spec = adjoint_spec(scenario.problem, grid, xi)
    if cfg.solver.method == "closed_form":
        psi = neumann_psi(spec.b0, grid, cfg.solver.psi_tol)
        solution = solve_closed_form(spec, psi, W, X, cfg.solver.degree)
    else:
        solution = solve_regression(spec, W, X, cfg.solver.degree)
    if not spec.sigma0.is_zero:
        estimate_q_diagonal(solution, W, cfg.solver.degree)
    store.add_table("adjoint", solution.summary())
    print(f"p(0) = {solution.p[:, 0].mean():.6g} via {solution.method}")
    return {"method": solution.method, "p0": float(solution.p[:, 0].mean())}


def cmd_check_mp(cfg: RunConfig, store: ResultStore) -> dict:
    bundle = run_scenario(cfg)
    store.add_table("mp_report", bundle.frames["mp_report"])
    store.add_table("gap", bundle.report.gap_frame())
    print(bundle.report.summary())
    return bundle.facts


def cmd_harvest(cfg: RunConfig, store: ResultStore) -> dict:
    bundle = run_scenario(cfg)
    for name, frame in bundle.frames.items():
        store.add_table(name, frame)
    print(bundle.report.summary())
    return bundle.facts


def cmd_duality(cfg: RunConfig, store: ResultStore) -> dict:
    grid = make_grid(cfg.grid.T, cfg.grid.N)
    W = sample_brownian(grid, cfg.ensemble.M, cfg.ensemble.seed, cfg.ensemble.workers)
    table = duality_suite(cfg.checks.duality, W)
    store.add_table("duality", table)
    print(table.to_string(index=False))
    return {"passed": bool(table["passed"].all())}


COMMANDS = {
    "simulate": cmd_simulate,
    "adjoint": cmd_adjoint,
    "check-mp": cmd_check_mp,
    "harvest": cmd_harvest,
    "duality-test": cmd_duality,
}


# =============================================================================
# Entry point
# =============================================================================

def _diagnostic(kind: str, message: str, key: Optional[str] = None, line: Optional[int] = None):
    text = str(message).replace('"', "'").splitlines()[0] if message else ""
    print(f'error kind={kind} key={key or "-"} line={line or "-"} message="{text}"', file=sys.stderr)
    print(message, file=sys.stderr)


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as e:
        _diagnostic("usage", str(e))
        return 1

    setup_logging(args.verbose)
    try:
        cfg = resolve_config(args)
        if args.dry_run:
            print(dump_config(cfg), end="")
            return 0
        with ResultStore(cfg.output.dir) as store:
            facts = COMMANDS[args.command](cfg, store)
            store.add_json("manifest", build_manifest(args.command, cfg, facts))
    except ConfigError as e:
        _diagnostic("config", str(e), e.key, e.line)
        return 1
    except InvalidArgumentError as e:
        _diagnostic("invalid_argument", str(e))
        return 1
    except VolterraError as e:
        _diagnostic(type(e).__name__, str(e))
        return 2
    if args.command in CHECK_COMMANDS and not facts.get("passed", True):
        _diagnostic("check_failed", f"{args.command}: one or more checks failed; see {cfg.output.dir}")
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())

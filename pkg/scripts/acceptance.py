"""
Acceptance suite for the Volterra control toolkit
Runs the oracle and property checks end to end at desk scale:
- Neumann resolvent and iterated-kernel bounds
- Forward simulation and the Girsanov weight
- Duality formula and Fubini rearrangements
- Adjoint solvers (closed form against regression)
- Reflected harvest, Skorokhod conditions and the optimality tournament
- Power of the necessary conditions and gradient consistency
- CLI determinism and exit codes

Usage:
    python scripts/acceptance.py                 # Full scale (M up to 1e5)
    python scripts/acceptance.py --quick         # Reduced path counts
    python scripts/acceptance.py --verbose       # Show detailed output
"""
import sys
import os
import math
import time
import tempfile
import argparse
from pathlib import Path
from typing import List, Tuple

import numpy as np

# Change to project root so .env and config/ are found
project_root = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
os.chdir(project_root)

# Add src to path
sys.path.insert(0, os.path.join(project_root, 'src'))

VERBOSE = False
QUICK = False
N_SE = 3.0
# per-node families of comparisons
FAMILY_SE = 4.0


def log(msg: str, indent: int = 0):
    """Print log message with optional indentation"""
    prefix = "     " * indent
    print(f"{prefix}{msg}")


def log_verbose(msg: str, indent: int = 0):
    """Print verbose log message"""
    if VERBOSE:
        log(msg, indent)


def mark(ok: bool) -> str:
    """Pass or fail marker for a log line"""
    return "✅" if ok else "❌"


def paths(full: int) -> int:
    """Path count for the current mode"""
    return max(full // 5, 2000) if QUICK else full


# =============================================================================
# Test: Kernels
# =============================================================================
def test_resolvent_constant_kernel() -> Tuple[bool, str]:
    """Psi(0, 1) for b0 = 1 is e; identity residual is small"""
    try:
        from core import make_grid
        from kernels import ConstantKernel, neumann_psi, resolvent_residual

        psi = neumann_psi(ConstantKernel(1.0), make_grid(1.0, 256), tol=1e-10)
        err = abs(psi.values[0, -1] - math.e)
        residual = resolvent_residual(ConstantKernel(1.0), psi)
        ok = err <= 1e-4 and residual <= 1e-3
        log(f"{mark(ok)} Resolvent computed to order {psi.order}")
        log(f"   |Psi(0,1) - e| = {err:.2e}, residual = {residual:.2e}")
        if err > 1e-4:
            return False, f"Psi(0,1) off by {err:.2e}"
        if residual > 1e-3:
            return False, f"residual {residual:.2e}"
        return True, f"err {err:.1e}"

    except Exception as e:
        return False, str(e)


def test_resolvent_rate() -> Tuple[bool, str]:
    """Residual shrinks about 4x per grid doubling for a kernel of t alone"""
    try:
        from core import make_grid
        from kernels import FunctionKernel, neumann_psi, resolvent_residual

        k = FunctionKernel(lambda t, s: 1.0 + t + 0.0 * s, bound=2.0, dt_fn=lambda t, s: np.ones_like(t))
        coarse = resolvent_residual(k, neumann_psi(k, make_grid(1.0, 128)))
        fine = resolvent_residual(k, neumann_psi(k, make_grid(1.0, 256)))
        ratio = coarse / fine
        ok = 3.0 <= ratio <= 5.0
        log(f"{mark(ok)} Residual ratio N=128 -> 256: {ratio:.2f}")
        log_verbose(f"   coarse {coarse:.3e}, fine {fine:.3e}")
        return ok, f"ratio {ratio:.2f}"

    except Exception as e:
        return False, str(e)


def test_iterated_majorant() -> Tuple[bool, str]:
    """|b0^n| stays under the certified majorant for n <= 10"""
    try:
        from core import make_grid
        from kernels import ConstantKernel, ExpDecayKernel, iterated_kernel, majorant

        grid = make_grid(1.0, 256)
        worst = -np.inf
        for kernel in (ConstantKernel(1.0), ExpDecayKernel(1.5, 2.0)):
            C = kernel.bound(grid.T)
            for n in range(1, 11):
                top = float(np.max(np.abs(iterated_kernel(kernel, n, grid).values)))
                worst = max(worst, top - majorant(C, grid.T, n))
                log_verbose(f"   {kernel!r} n={n}: max {top:.4e} bound {majorant(C, grid.T, n):.4e}")
        ok = worst <= 1e-6
        log(f"{mark(ok)} Majorant slack: {worst:.2e}")
        return ok, f"slack {worst:.1e}"

    except Exception as e:
        return False, str(e)


# =============================================================================
# Test: Forward simulation
# =============================================================================
def test_forward_two_grid() -> Tuple[bool, str]:
    """Deterministic growth reaches e^{cT} at first order"""
    try:
        from core import make_grid, sample_brownian
        from forward import AffineCoefficient, SvieSpec, simulate
        from kernels import ConstantKernel

        spec = SvieSpec(b=AffineCoefficient(state=ConstantKernel(1.0)))

        def error(N: int) -> float:
            W = sample_brownian(make_grid(1.0, N), 1, seed=0)
            return abs(simulate(spec, None, None, W).terminal()[0] - math.e)

        ratio = error(128) / error(256)
        ok = 1.7 <= ratio <= 2.3
        log(f"{mark(ok)} Two-grid error ratio: {ratio:.3f}")
        return ok, f"ratio {ratio:.2f}"

    except Exception as e:
        return False, str(e)


def test_forward_geometric_mean() -> Tuple[bool, str]:
    """Geometric sub-case: mean of X(T) equals the discrete compound growth"""
    try:
        from core import make_grid, mc_estimate, sample_brownian
        from forward import AffineCoefficient, SvieSpec, simulate
        from kernels import ConstantKernel

        a, s, N = 0.3, 0.4, 32
        W = sample_brownian(make_grid(1.0, N), paths(100000), seed=11)
        spec = SvieSpec(
            b=AffineCoefficient(state=ConstantKernel(a)),
            sigma=AffineCoefficient(state=ConstantKernel(s)),
        )
        est = mc_estimate(simulate(spec, None, None, W).terminal())
        target = (1.0 + a / N) ** N
        ok = est.within(target, N_SE)
        log(f"{mark(ok)} E[X(T)] = {est.value:.5f} ± {est.se:.5f} (target {target:.5f})")
        return ok, f"{(est.value - target) / est.se:+.2f} SE"

    except Exception as e:
        return False, str(e)


def test_girsanov() -> Tuple[bool, str]:
    """K(T) has unit mean and B(T) - int sigma0 is centred under Q"""
    try:
        from adjoint import girsanov_weight
        from core import make_grid, mc_estimate, sample_brownian
        from kernels import ConstantKernel

        W = sample_brownian(make_grid(1.0, 32), paths(100000), seed=12)
        K = girsanov_weight(ConstantKernel(0.3), W)
        mass = mc_estimate(K)
        shifted = mc_estimate(K * (W.paths[:, -1] - 0.3))
        ok = mass.within(1.0, N_SE) and shifted.within(0.0, N_SE)
        log(f"{mark(ok)} E[K] = {mass.value:.4f} ± {mass.se:.4f}, E_Q[B(T) - 0.3] = {shifted.value:+.4f} ± {shifted.se:.4f}")
        return ok, f"E[K]={mass.value:.3f}"

    except Exception as e:
        return False, str(e)


# =============================================================================
# Test: Duality formula
# =============================================================================
def test_duality_suite() -> Tuple[bool, str]:
    """E[F int phi dB] = E[int E[D_t F | F_t] phi dt] for the shipped presets"""
    try:
        from core import make_grid, sample_brownian
        from malliavin import duality_suite

        W = sample_brownian(make_grid(1.0, 16), paths(100000), seed=13)
        table = duality_suite(["terminal_value", "terminal_square", "wiener_integral"], W)
        for row in table.itertuples():
            log_verbose(f"   {row.test}: lhs {row.lhs:.4f} rhs {row.rhs:.4f} diff {row.diff:+.4f} ± {row.diff_se:.4f}")
        ok = bool((table["diff"].abs() <= N_SE * table["diff_se"] + 1e-10).all())
        log(f"{mark(ok)} Duality suite: {len(table)} presets")
        return ok, f"{int(table['passed'].sum())}/{len(table)} within {N_SE:g} SE"

    except Exception as e:
        return False, str(e)


def test_fubini() -> Tuple[bool, str]:
    """Deterministic rearrangements to rounding, the stochastic one within SE"""
    try:
        from core import ProcessPath, SingularControl, make_grid, sample_brownian
        from kernels import ExpDecayKernel
        from malliavin import fubini_checks

        W = sample_brownian(make_grid(1.0, 16), paths(20000), seed=14)
        p = ProcessPath(W.grid, W.paths.copy())
        xi = SingularControl.atom(W.grid, 0.25, 0.5)
        report = fubini_checks(p, ExpDecayKernel(1.0, 1.0), xi, W, p_functional=lambda b: b)
        ok = (
            report.residual_dt <= 1e-12
            and report.residual_dxi <= 1e-12
            and report.diff_db.within(0.0, N_SE, 1e-10)
        )
        log(f"{mark(ok)} Fubini residuals: dt {report.residual_dt:.1e}, dxi {report.residual_dxi:.1e}")
        log_verbose(f"   dB identity diff {report.diff_db.value:+.4f} ± {report.diff_db.se:.4f}")
        return ok, f"diff {report.diff_db.value:+.3f}"

    except Exception as e:
        return False, str(e)


# =============================================================================
# Test: Adjoint solvers
# =============================================================================
def test_adjoint_hand_solutions() -> Tuple[bool, str]:
    """Deterministic adjoints match 2e^0.1 and e^0.5 + 0.5e^0.25"""
    try:
        from adjoint import BsvieSpec, solve_closed_form, solve_regression
        from core import SingularControl, make_grid, sample_brownian
        from forward import TerminalWeight
        from kernels import ConstantKernel, neumann_psi

        W = sample_brownian(make_grid(1.0, 512), 10, seed=15)
        xi = SingularControl.atom(W.grid, 0.5, 0.5)
        cases = [
            ("constant", BsvieSpec(b0=ConstantKernel(0.1), theta=TerminalWeight(2.0)), 2.0 * math.exp(0.1)),
            (
                "jump",
                BsvieSpec(b0=ConstantKernel(0.5), weight="unit", xi=xi, theta=TerminalWeight(1.0)),
                math.exp(0.5) + 0.5 * math.exp(0.25),
            ),
        ]
        errors = []
        for name, spec, target in cases:
            closed = solve_closed_form(spec, neumann_psi(spec.b0, W.grid), W)
            regression = solve_regression(spec, W)
            for method, solution in (("closed", closed), ("regression", regression)):
                err = abs(solution.p[:, 0].mean() - target)
                log_verbose(f"   {name}/{method}: p(0) error {err:.2e}")
                if err > 1e-3:
                    errors.append(f"{name}/{method} {err:.1e}")
                if not np.all(solution.p[:, -1] == spec.theta.sample(W)):
                    errors.append(f"{name}/{method} p(T) != theta")
        if errors:
            return False, "; ".join(errors)
        log(f"✅ Hand-solved adjoints reproduced (target {cases[1][2]:.5f})")
        return True, "2 cases, 2 solvers"

    except Exception as e:
        return False, str(e)


def test_adjoint_cross_validation() -> Tuple[bool, str]:
    """Closed form and regression agree on every stochastic preset; increments are Q-martingale"""
    try:
        from adjoint import BsvieSpec, martingale_increments, solve_closed_form, solve_regression
        from core import SingularControl, make_grid, nodewise_estimates, sample_brownian
        from forward import TerminalWeight
        from kernels import ConstantKernel, ExpDecayKernel, neumann_psi

        W = sample_brownian(make_grid(1.0, 32), paths(50000), seed=16)
        sigma0 = ConstantKernel(0.2)
        presets = [
            ("linear", BsvieSpec(b0=ConstantKernel(0.1), sigma0=sigma0, theta=TerminalWeight(1.0, 0.5))),
            ("decaying", BsvieSpec(b0=ExpDecayKernel(0.5, 1.0), sigma0=sigma0, theta=TerminalWeight(1.0, 0.5))),
            ("quadratic", BsvieSpec(b0=ConstantKernel(0.2), sigma0=sigma0, theta=TerminalWeight(1.0, 0.0, 0.5))),
            (
                "harvested",
                BsvieSpec(
                    b0=ExpDecayKernel(0.5, 1.0),
                    sigma0=sigma0,
                    weight="unit",
                    xi=SingularControl.uniform_rate(W.grid, 0.5),
                    theta=TerminalWeight(1.0, 0.5, 0.25),
                ),
            ),
        ]
        failed = []
        for name, spec in presets:
            closed = solve_closed_form(spec, neumann_psi(spec.b0, W.grid), W)
            regression = solve_regression(spec, W)
            mean, se = nodewise_estimates(closed.p - regression.p)
            worst = float(np.max(np.abs(mean) - FAMILY_SE * se))
            inc_mean, inc_se = martingale_increments(regression, spec.sigma0, W)
            martingale = bool(np.all(np.abs(inc_mean) <= FAMILY_SE * inc_se + 1e-12))
            log_verbose(
                f"   {name}: p(0) closed {closed.p[:, 0].mean():.4f}, regression {regression.p[:, 0].mean():.4f}, "
                f"worst excess {worst:+.2e}, martingale {martingale}"
            )
            if worst > 1e-3 or not martingale:
                failed.append(name)
        ok = not failed
        log(f"{mark(ok)} Closed form against regression on {len(presets)} presets")
        return ok, "failed: " + ", ".join(failed) if failed else f"{len(presets)} presets"

    except Exception as e:
        return False, str(e)


# =============================================================================
# Test: Harvest scenario
# =============================================================================
def test_harvest_scenario() -> Tuple[bool, str]:
    """Reflected harvest of the bundled config satisfies every check"""
    try:
        from config import load_config
        from harvest import run_scenario

        cfg = load_config("config/harvest_42.toml")
        if QUICK:
            cfg = cfg.with_overrides(paths=4000, steps=32)
        start_time = time.time()
        bundle = run_scenario(cfg)
        elapsed = time.time() - start_time

        report = bundle.report
        for check in report.checks:
            log_verbose(f"   {'PASS' if check.passed else 'FAIL'} {check.name}: {check.statistic:.4g} (thr {check.threshold:.3g})")
        failed = [c.name for c in report.checks if not c.passed]
        log(f"{mark(not failed)} Harvest scenario: {len(report.checks)} checks in {elapsed:.1f}s")
        if failed:
            return False, "failed: " + ", ".join(failed)
        return True, f"{elapsed:.1f}s"

    except Exception as e:
        return False, str(e)


def test_tournament_size() -> Tuple[bool, str]:
    """At least six shipped alternatives, all beaten within paired SE"""
    try:
        from config import load_config
        from harvest import run_scenario

        cfg = load_config("config/harvest_42.toml").with_overrides(paths=paths(10000), steps=32)
        table = run_scenario(cfg).frames["tournament"]
        asserted = table[table["asserted"] & (table["policy"] != "candidate")]
        for row in table.itertuples():
            log_verbose(f"   {row.policy}: diff {row.diff:+.4f} ± {row.diff_se:.4f}")
        ok = len(asserted) >= 6 and bool(asserted["passed"].all())
        log(f"{mark(ok)} Tournament: {len(asserted)} asserted alternatives")
        return ok, f"{len(asserted)} alternatives"

    except Exception as e:
        return False, str(e)


# =============================================================================
# Test: Maximum-principle checks
# =============================================================================
def _lq_problem(control_kernel=None):
    from forward import AffineCoefficient, PerformanceSpec, SvieSpec, TerminalWeight, quadratic_control_cost
    from kernels import ConstantKernel
    from maxprinciple import ControlProblem

    svie = SvieSpec(
        b=AffineCoefficient(control=control_kernel or ConstantKernel(1.0)),
        sigma=AffineCoefficient(const=ConstantKernel(1.0)),
    )
    return ControlProblem(svie, PerformanceSpec(running=quadratic_control_cost(1.0), theta=TerminalWeight(1.0)))


def test_necessary_condition_power() -> Tuple[bool, str]:
    """Wrong controls are flagged by the singular and the stationarity checks"""
    try:
        from core import RegularControl, make_grid, sample_brownian
        from forward import PerformanceSpec, SvieSpec, TerminalWeight, deterministic_price, simulate
        from kernels import ConstantKernel, ScaledKernel
        from maxprinciple import ControlProblem, check_singular_conditions, check_stationarity_u

        W = sample_brownian(make_grid(1.0, 32), paths(10000), seed=17)
        harvest = ControlProblem(
            SvieSpec(h=ScaledKernel(ConstantKernel(1.0), -1.0)),
            PerformanceSpec(singular=deterministic_price(2.0), theta=TerminalWeight(1.0)),
        )
        X = simulate(harvest.svie, None, None, W)
        singular = check_singular_conditions(harvest, np.ones_like(X.values), X, None, W)
        stationarity = check_stationarity_u(_lq_problem(), RegularControl.constant(W.grid, 0.0), None, W)
        gap = singular.check("gap_sign")
        stat = stationarity.check("stationarity")
        ok = not gap.passed and not stat.passed
        log(f"{mark(ok)} Gap statistic {gap.statistic:+.3f}, stationarity statistic {stat.statistic:.3f}")
        return ok, "both flagged"

    except Exception as e:
        return False, str(e)


def test_gradient_consistency() -> Tuple[bool, str]:
    """Bump derivatives of J match the Hamiltonian gradient"""
    try:
        from core import RegularControl, make_grid, sample_brownian
        from kernels import ExpDecayKernel
        from maxprinciple import check_stationarity_u

        W = sample_brownian(make_grid(1.0, 32), paths(10000), seed=18)
        u = RegularControl.constant(W.grid, 0.5)
        report = check_stationarity_u(_lq_problem(ExpDecayKernel(1.0, 1.0)), u, None, W, abs_tol=1e-4)
        bumps = [c for c in report.checks if c.name.startswith("gradient")]
        for c in bumps:
            log_verbose(f"   {c.name}: {c.statistic:+.2e} ± {c.se:.2e}")
        ok = len(bumps) == 6 and all(c.passed for c in bumps)
        log(f"{mark(ok)} Gradient bumps: {sum(c.passed for c in bumps)}/{len(bumps)}")
        return ok, f"{len(bumps)} bumps"

    except Exception as e:
        return False, str(e)


# =============================================================================
# Test: CLI
# =============================================================================
def test_cli_determinism() -> Tuple[bool, str]:
    """Same seed gives byte-identical CSVs regardless of worker count"""
    try:
        from cli import main as cli_main

        with tempfile.TemporaryDirectory() as tmp:
            a, b = Path(tmp) / "a", Path(tmp) / "b"
            base = ["harvest", "--config", "config/harvest_42.toml", "--paths", "2000", "--steps", "16"]
            codes = (cli_main(base + ["--out", str(a)]), cli_main(base + ["--out", str(b), "--workers", "3"]))
            if codes != (0, 0):
                return False, f"exit codes {codes}"
            names = sorted(p.name for p in a.glob("*.csv"))
            same = all((a / n).read_bytes() == (b / n).read_bytes() for n in names)
        log(f"{mark(same)} {len(names)} CSVs compared")
        return same, f"{len(names)} files"

    except Exception as e:
        return False, str(e)


def test_cli_exit_codes() -> Tuple[bool, str]:
    """Config errors exit 1, numerical failures exit 2, failed checks exit 3"""
    try:
        from cli import main as cli_main

        with tempfile.TemporaryDirectory() as tmp:
            bad = Path(tmp) / "bad.toml"
            bad.write_text("[grid]\nN = 0\n")
            config_code = cli_main(["harvest", "--config", str(bad), "--out", tmp])
            stiff = Path(tmp) / "stiff.toml"
            stiff.write_text(
                '[grid]\nN = 8\n[ensemble]\nM = 100\n'
                '[model]\nh = { kind = "exp_decay", params = [1.0, 1.0] }\npolicy = "reflected"\n'
                '[price]\ntheta = { kind = "constant", params = [0.5] }\n[solver]\nmax_iter = 1\n'
            )
            numeric_code = cli_main(["harvest", "--config", str(stiff), "--out", str(Path(tmp) / "out")])
            low = Path(tmp) / "low.toml"
            low.write_text(
                '[grid]\nN = 8\n[ensemble]\nM = 400\n[model]\nsigma0 = { kind = "constant", params = [0.0] }\n'
                '[price]\nmode = "density_dependent"\ntheta = { kind = "constant", params = [0.5] }\n'
            )
            check_code = cli_main(["check-mp", "--config", str(low), "--out", str(Path(tmp) / "checks")])
        codes = (config_code, numeric_code, check_code)
        ok = codes == (1, 2, 3)
        log(f"{mark(ok)} Exit codes: config {config_code}, numeric {numeric_code}, failed check {check_code}")
        return ok, "/".join(str(c) for c in codes)

    except Exception as e:
        return False, str(e)


# =============================================================================
# Main Test Runner
# =============================================================================
def run_test(name: str, test_func, *args) -> Tuple[str, bool, str]:
    """Run a single test and return result"""
    try:
        success, detail = test_func(*args)
        return name, success, detail
    except Exception as e:
        return name, False, str(e)


def main():
    global VERBOSE, QUICK

    parser = argparse.ArgumentParser(description="Volterra Control Toolkit Acceptance Suite")
    parser.add_argument(
        "--quick", action="store_true",
        help="Quick mode: reduced path counts"
    )
    parser.add_argument(
        "--verbose", "-v", action="store_true",
        help="Show detailed output"
    )

    args = parser.parse_args()
    VERBOSE = args.verbose
    QUICK = args.quick

    print("=" * 70)
    print("  Volterra Control Toolkit - Acceptance Suite")
    print("=" * 70)
    print()
    if QUICK:
        print("⚡ Quick mode: reduced path counts")
        print()

    results: List[Tuple[str, bool, str]] = []

    # -------------------------------------------------------------------------
    # Section 1: Kernels
    # -------------------------------------------------------------------------
    print("-" * 70)
    print("📐 Kernel Tests")
    print("-" * 70)

    results.append(run_test("Resolvent: constant kernel", test_resolvent_constant_kernel))
    results.append(run_test("Resolvent: residual rate", test_resolvent_rate))
    results.append(run_test("Iterated kernel majorant", test_iterated_majorant))

    # -------------------------------------------------------------------------
    # Section 2: Forward simulation
    # -------------------------------------------------------------------------
    print()
    print("-" * 70)
    print("📈 Forward Simulation Tests")
    print("-" * 70)

    results.append(run_test("Forward: two-grid rate", test_forward_two_grid))
    results.append(run_test("Forward: geometric mean", test_forward_geometric_mean))
    results.append(run_test("Girsanov weight", test_girsanov))

    # -------------------------------------------------------------------------
    # Section 3: Duality
    # -------------------------------------------------------------------------
    print()
    print("-" * 70)
    print("🔁 Duality Tests")
    print("-" * 70)

    results.append(run_test("Duality suite", test_duality_suite))
    results.append(run_test("Fubini rearrangements", test_fubini))

    # -------------------------------------------------------------------------
    # Section 4: Adjoint solvers
    # -------------------------------------------------------------------------
    print()
    print("-" * 70)
    print("⏪ Adjoint Tests")
    print("-" * 70)

    results.append(run_test("Adjoint: hand solutions", test_adjoint_hand_solutions))
    results.append(run_test("Adjoint: cross-validation", test_adjoint_cross_validation))

    # -------------------------------------------------------------------------
    # Section 5: Harvest and maximum principle
    # -------------------------------------------------------------------------
    print()
    print("-" * 70)
    print("🐟 Harvest & Maximum-Principle Tests")
    print("-" * 70)

    results.append(run_test("Harvest scenario", test_harvest_scenario))
    results.append(run_test("Optimality tournament", test_tournament_size))
    results.append(run_test("Necessary-condition power", test_necessary_condition_power))
    results.append(run_test("Gradient consistency", test_gradient_consistency))

    # -------------------------------------------------------------------------
    # Section 6: CLI
    # -------------------------------------------------------------------------
    print()
    print("-" * 70)
    print("💻 CLI Tests")
    print("-" * 70)

    results.append(run_test("CLI determinism", test_cli_determinism))
    results.append(run_test("CLI exit codes", test_cli_exit_codes))

    # -------------------------------------------------------------------------
    # Summary
    # -------------------------------------------------------------------------
    print()
    print("=" * 70)
    print("  Test Summary")
    print("=" * 70)
    print()

    passed = sum(1 for _, success, _ in results if success)
    total = len(results)

    for name, success, detail in results:
        status = "✅" if success else "❌"
        detail_str = f"({detail})" if detail and len(detail) < 50 else ""
        print(f"  {status} {name} {detail_str}")

    print()
    print(f"  {'=' * 30}")
    print(f"  {passed}/{total} tests passed")

    if passed == total:
        print("  🎉 All tests passed!")
    else:
        failed = [(n, d) for n, s, d in results if not s]
        print(f"  ⚠️  {len(failed)} test(s) failed:")
        for name, detail in failed:
            print(f"     - {name}: {detail}")

    print()
    sys.exit(0 if passed == total else 1)


if __name__ == "__main__":
    main()

"""Acceptance criteria 1-11, each at its stated tolerance.

Every test prints one ``CRITERION n: PASS|FAIL`` line to the terminal, so a plain
``pytest -v`` run shows the verdicts even when output capture is on.
"""
import math
import time

import numpy as np
import pytest

from homconc import schulgasser as S
from homconc.cell_solver import effective_tensor, solve_corrector, voigt_reuss_bounds
from homconc.concentration import estimate_threshold_exponent, moment_fp, phase_moment_fp
from homconc.geometry import SchulgasserCell, build_laminate, build_multiphase, rasterize_schulgasser
from homconc.macro import Box
from homconc.sweep import SweepConfig, laminate_strip, run_sweep

from conftest import two_phase_cell

R_HALF = (3 * 0.5 / (4 * math.pi)) ** (1 / 3)


@pytest.fixture
def verdict(capsys, request):
    def report(n, checks):
        """``checks``: list of (label, passed, detail)."""
        ok = all(c[1] for c in checks)
        with capsys.disabled():
            print(f"\nCRITERION {n}: {'PASS' if ok else 'FAIL'}")
            for label, passed, detail in checks:
                print(f"    [{'ok' if passed else 'FAILED'}] {label}: {detail}")
        failed = [c[0] for c in checks if not c[1]]
        assert not failed, f"criterion {n} failed: {failed}"
    return report


@pytest.fixture(scope="module")
def schulgasser_128():
    """Ladder 32/64/128 for the single centered ball (the 128^3 solve dominates)."""
    cell = SchulgasserCell.single()
    t0 = time.perf_counter()
    sols = {N: solve_corrector(rasterize_schulgasser(cell, N)) for N in (32, 64, 128)}
    return sols, time.perf_counter() - t0


@pytest.fixture(scope="module")
def strip_sweep():
    cell, macro = laminate_strip()
    cfg = SweepConfig(cell, macro, (1 / 8, 1 / 16, 1 / 32), (2.0, 3.0, 4.0), D=Box((0.25, 0.25), (0.75, 0.75)))
    t0 = time.perf_counter()
    report = run_sweep(cfg)
    return report, time.perf_counter() - t0


def test_criterion_01_homogeneous_identity(verdict):
    t0 = time.perf_counter()
    checks = []
    for d, N in ((3, 32), (2, 64)):
        grid = build_multiphase([np.ones((N,) * d, dtype=bool)], [2.0], N)
        sol = solve_corrector(grid)
        dev = float(np.abs(sol.P - np.eye(d)).max())
        ae = float(np.abs(effective_tensor(sol).entries - 2 * np.eye(d)).max())
        checks += [(f"{d}D max|P - I|", dev <= 1e-10, f"{dev:.2e}"),
                   (f"{d}D max|A^E - 2I|", ae <= 1e-10, f"{ae:.2e}")]
    dt = time.perf_counter() - t0
    checks.append(("runtime < 5 s", dt < 5, f"{dt:.2f} s"))
    verdict(1, checks)


def test_criterion_02_laminate_oracle(verdict):
    t0 = time.perf_counter()
    sol = solve_corrector(build_laminate(0, (0.5, 0.5), (1.0, 2.0), 256))
    err = float(np.abs(effective_tensor(sol).entries - np.diag([4 / 3, 1.5])).max())
    dt = time.perf_counter() - t0
    verdict(2, [("max|A^E - diag(4/3, 3/2)|", err <= 1e-6, f"{err:.2e}"),
                ("runtime < 10 s", dt < 10, f"{dt:.2f} s")])


@pytest.mark.slow
def test_criterion_03_schulgasser_effective_tensor(verdict, schulgasser_128):
    sols, dt = schulgasser_128
    errs = [float(np.abs(effective_tensor(sols[N]).entries - np.eye(3)).max()) for N in (32, 64, 128)]
    verdict(3, [("error at 128", errs[-1] <= 5e-2, f"{errs[-1]:.4e}"),
                ("strictly decreasing 32/64/128", errs[0] > errs[1] > errs[2],
                 ", ".join(f"{e:.4e}" for e in errs)),
                ("runtime (minutes allowed)", True, f"{dt:.1f} s")])


def test_criterion_04_moment_oracle(verdict):
    t0 = time.perf_counter()
    cell = SchulgasserCell.single(radius=R_HALF)
    exact = S.lambda_moment(cell, 2.0)
    quad = S.lambda_moment_quadrature(cell, 2.0)
    ps = (2.0, 3.0, 4.0, 5.0, 5.5, 5.9)
    vals = [S.lambda_moment(cell, p) for p in ps]
    roots = [S.lb_factor(cell, p) for p in ps]
    flags = [math.isinf(S.lambda_moment(cell, p)) for p in (6.0, 6.5, 8.0)]
    dt = time.perf_counter() - t0
    verdict(4, [
        ("lambda_moment(2) = 0.6875", abs(exact - 0.6875) <= 1e-15, repr(exact)),
        ("adaptive quadrature agrees to 1e-8", abs(quad - exact) <= 1e-8, f"{abs(quad - exact):.1e}"),
        ("divergent for p >= p_c = 6", all(flags), str(flags)),
        ("lambda_moment strictly increasing on {2,3,4,5,5.5,5.9}",
         all(b > a for a, b in zip(vals, vals[1:])), ", ".join(f"{v:.6g}" for v in vals)),
        ("(info) p-th root strictly increasing", all(b > a for a, b in zip(roots, roots[1:])),
         ", ".join(f"{v:.6g}" for v in roots)),
        ("runtime < 1 s", dt < 1, f"{dt:.3f} s"),
    ])


@pytest.mark.slow
def test_criterion_05_critical_exponent(verdict, schulgasser_128):
    sols, _ = schulgasser_128
    est = estimate_threshold_exponent([sols[64], sols[128]], np.arange(2.0, 12.01, 0.25))
    verdict(5, [("critical_exponent(0.75) == 6", S.critical_exponent(0.75) == 6, repr(S.critical_exponent(0.75))),
                ("critical_exponent(5/8) == 4", S.critical_exponent(5 / 8) == 4, repr(S.critical_exponent(5 / 8))),
                ("estimate on 64/128 in [5, 7]", 5 <= est <= 7, f"{est:.4f}")])


def test_criterion_06_mean_corrector_identity(verdict):
    rng = np.random.default_rng(6)
    tol = 1e-8
    worst_mean, worst_lo, worst_hi = 0.0, math.inf, math.inf
    for _ in range(20):
        grid = two_phase_cell(rng, 32, (0.5, 20.0))
        sol = solve_corrector(grid, tol=tol)
        worst_mean = max(worst_mean, float(np.abs(sol.P.reshape(-1, 2, 2).mean(axis=0) - np.eye(2)).max()))
        AE = effective_tensor(sol).entries
        AE = 0.5 * (AE + AE.T)
        reuss, voigt = voigt_reuss_bounds(grid)
        worst_lo = min(worst_lo, float(np.linalg.eigvalsh(AE - reuss)[0]))
        worst_hi = min(worst_hi, float(np.linalg.eigvalsh(voigt - AE)[0]))
    verdict(6, [("column means of P within 10 tol", worst_mean <= 10 * tol, f"{worst_mean:.2e}"),
                ("A^E - Reuss positive semidefinite", worst_lo >= -1e-9, f"min eig {worst_lo:.3e}"),
                ("Voigt - A^E positive semidefinite", worst_hi >= -1e-9, f"min eig {worst_hi:.3e}")])


def test_criterion_07_monotonicity_and_decomposition(verdict, laminate_solution):
    ps = (2.0, 3.0, 4.0)
    cell = SchulgasserCell.single(radius=R_HALF)
    P_s, w_s, lab_s = S.quadrature_samples(cell)
    fields = {
        "laminate": (laminate_solution.P, laminate_solution.grid.phase, None, np.array([0.6, 0.8])),
        "schulgasser": (P_s, lab_s, w_s, np.array([1.0, 0.0, 0.0])),
    }
    checks = []
    for name, (P, lab, w, xi) in fields.items():
        f = [moment_fp(P, xi, p, weights=w) for p in ps]
        checks.append((f"{name} f_p nondecreasing", all(b >= a for a, b in zip(f, f[1:])),
                       ", ".join(f"{v:.10f}" for v in f)))
        worst = 0.0
        for p, fp in zip(ps, f):
            parts = sum(phase_moment_fp(P, lab, i, xi, p, num_phases=2, weights=w) ** p for i in (0, 1))
            worst = max(worst, abs(parts - fp ** p))
        checks.append((f"{name} phase decomposition", worst <= 1e-10, f"{worst:.1e}"))
    verdict(7, checks)


def _final(report, q, p=None):
    return report.select(q, p)[-1][1]


def test_criterion_08_localization_trend(verdict, strip_sweep):
    report, dt = strip_sweep
    res = [v for _, v in report.select("localization_residual", 2.0, -1)]
    rel = report.summary["localization_final_relative"]
    verdict(8, [("residual strictly decreasing", all(b < a for a, b in zip(res, res[1:])),
                 ", ".join(f"{v:.4e}" for v in res)),
                ("final relative error <= 5%", rel <= 0.05, f"{100 * rel:.3f}%"),
                ("runtime < 2 min (whole sweep)", dt < 120, f"{dt:.1f} s")])


def test_criterion_09_lower_bound_sandwich(verdict, strip_sweep):
    report, _ = strip_sweep
    checks = []
    for p in (2.0, 3.0, 4.0):
        norm, lb = _final(report, "lp_norm", p), _final(report, "lower_bound", p)
        checks.append((f"p={p:g}", norm >= 0.95 * lb, f"||grad u||={norm:.6f}  LB={lb:.6f}"))
    verdict(9, checks)


def test_criterion_10_chebyshev_sandwich(verdict, strip_sweep):
    report, _ = strip_sweep
    eps = 1 / 32
    median = dict(report.select("median_gradient"))[eps]
    checks = []
    for i in (0, 1):
        dist = [(r[2], r[4]) for r in report.rows if r[0] == eps and r[1] == "distribution" and r[3] == i]
        cheb = {r[2]: r[4] for r in report.rows if r[0] == eps and r[1] == "chebyshev_bound_p2" and r[3] == i}
        above = [(t, lam, cheb[t]) for t, lam in dist if t > median]
        worst = max((lam / c for _, lam, c in above if c > 0), default=0.0)
        checks.append((f"phase {i}: max lambda / bound over {len(above)} t above median",
                       bool(above) and worst <= 1.10, f"{worst:.4f}"))
    verdict(10, checks)


def test_criterion_11_analytic_self_consistency(verdict):
    t0 = time.perf_counter()
    cell = SchulgasserCell.single()
    g = S.gradient_mismatch(cell, n=100)
    e, slack = S.eigen_mismatch(cell, n=100)
    div = S.flux_divergence(cell, n=100)
    dt = time.perf_counter() - t0
    verdict(11, [("finite-difference grad Phi vs P", g <= 1e-5, f"{g:.2e}"),
                 ("lambda vs eigen-solve", e <= 1e-12, f"{e:.2e}"),
                 ("lambda |eta|^2 <= |P eta|^2", slack <= 1e-12, f"max slack {slack:.2e}"),
                 ("flux divergence", div <= 1e-4, f"{div:.2e}"),
                 ("runtime < 1 s", dt < 1, f"{dt:.3f} s")])

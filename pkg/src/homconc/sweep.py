"""Fine-scale sweeps over the period ``eps = 1/k`` in two dimensions.

Each fine solve tiles the cell raster periodically onto a refinement of the
macro mesh, so that one period holds ``elements_per_period`` elements along
each axis, and solves ``-div(A(x/eps) grad u) = f`` with the macro boundary
data. The homogenized problem is solved on that same fine mesh, so fine
gradients, two-scale predictions ``P(x/eps) grad u^H(x)`` and cell moments
all share the element midpoints as quadrature points.
"""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field, replace
from fractions import Fraction

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import kernels
from .cell_solver import CorrectorSolution, effective_tensor, solve_corrector
from .concentration import chebyshev_tail, format_value, moment_integral
from .errors import ConfigError, ConvergenceError
from .geometry import CellGrid
from .macro import (Box, MacroProblem, StructuredMesh, _midpoint_gradient_matrix, _reference_blocks,
                    solve_homogenized, solve_q1)

MIN_ELEMENTS_PER_PERIOD = 8
SWEEP_COLUMNS = ("epsilon", "quantity", "p_or_t", "phase", "value")


@dataclass(frozen=True, eq=False)
class SweepConfig:
    cell: CellGrid
    macro: MacroProblem
    epsilons: tuple = (1 / 4, 1 / 8, 1 / 16, 1 / 32)
    p_list: tuple = (2.0, 3.0, 4.0)
    t_grid: tuple = ()
    D: Box | None = None
    elements_per_period: int | None = None
    r_list: tuple = (1.0, 2.0)
    tol: float = 1e-10
    cell_tol: float = 1e-10
    cell_scheme: str = "fft"

    def __post_init__(self):
        if self.cell.dim != 2 or self.macro.dim != 2:
            raise ConfigError("sweeps are two-dimensional")
        eps = tuple(sorted((float(e) for e in self.epsilons), reverse=True))
        if not eps:
            raise ConfigError("epsilons is empty")
        object.__setattr__(self, "epsilons", eps)
        if self.D is None:
            object.__setattr__(self, "D", Box.centered(self.macro.extents))
        lo, hi = np.asarray(self.D.lo), np.asarray(self.D.hi)
        if np.any(lo <= 0) or np.any(hi >= np.asarray(self.macro.extents)) or np.any(hi <= lo):
            raise ConfigError("D must lie strictly inside the domain")
        if self.elements_per_period is None:
            object.__setattr__(self, "elements_per_period", max(self.cell.resolution, MIN_ELEMENTS_PER_PERIOD))
        for e in eps:
            refinement_factor(self.macro, e, self.elements_per_period)
        for p in self.p_list:
            if p < 2:
                raise ConfigError("tracked moments need p >= 2")
        if self.cell_scheme not in ("fft", "fem"):
            raise ConfigError("cell_scheme must be 'fft' or 'fem'")


def refinement_factor(macro: MacroProblem, epsilon: float, per_period: int) -> int:
    """Integer mesh refinement giving ``per_period`` elements per period on every axis."""
    if per_period < MIN_ELEMENTS_PER_PERIOD:
        raise ConfigError(f"under-resolved: {per_period} elements per period (< {MIN_ELEMENTS_PER_PERIOD})")
    k = Fraction(epsilon).limit_denominator(1 << 16)
    if k.numerator != 1 or abs(float(k) - epsilon) > 1e-12:
        raise ConfigError(f"epsilon {epsilon} is not of the form 1/k")
    factors = set()
    for ext, n in zip(macro.extents, macro.counts):
        fine = Fraction(ext).limit_denominator(1 << 16) / k * per_period
        if fine.denominator != 1 or fine.numerator % n:
            raise ConfigError(f"epsilon {epsilon}: {float(fine)} fine elements on an axis with {n} macro elements "
                              "is not an integer refinement")
        factors.add(fine.numerator // n)
    if len(factors) != 1:
        raise ConfigError(f"epsilon {epsilon}: refinement differs between axes")
    return factors.pop()


def solve_corrector_fem(grid: CellGrid, tol: float = 1e-10) -> CorrectorSolution:
    """Periodic cell correctors with the fine solver's own discretization.

    One multilinear element per voxel; ``P`` is taken at element midpoints.
    The fine solve at ``elements_per_period == grid.resolution`` homogenizes to
    exactly this discrete cell problem, so two-scale predictions built from it
    carry no cell-discretization mismatch.
    """
    d, N = grid.dim, grid.resolution
    mesh = StructuredMesh((1.0,) * d, (N,) * d)
    local = mesh.element_nodes()
    multi = np.unravel_index(local, mesh.node_shape)
    nodes = np.ravel_multi_index(tuple(m % N for m in multi), (N,) * d)
    coords = mesh.node_coordinates().reshape(-1, d)[local]
    Ke = np.einsum("eij,ijab->eab", grid.flat_tensors, _reference_blocks(mesh))
    nloc = 2 ** d
    K = sp.csr_matrix((Ke.ravel(), (np.repeat(nodes, nloc, axis=1).ravel(), np.tile(nodes, (1, nloc)).ravel())),
                      shape=(N ** d, N ** d))
    free = np.arange(1, N ** d)
    lu = spla.splu(K[free][:, free].tocsc())
    B = _midpoint_gradient_matrix(mesh)
    P = np.empty((N ** d, d, d))
    w = np.empty((d, N ** d))
    residuals = []
    for i in range(d):
        F = np.bincount(nodes.ravel(), weights=-np.einsum("eab,eb->ea", Ke, coords[..., i]).ravel(),
                        minlength=N ** d)
        u = np.zeros(N ** d)
        u[free] = lu.solve(F[free])
        res = float(np.linalg.norm(K @ u - F) / max(np.linalg.norm(F), 1.0))
        residuals.append(res)
        u -= kernels.voxel_mean(u)
        w[i] = u
        P[:, :, i] = u[nodes] @ B.T
        P[:, i, i] += 1.0
    res = max(residuals)
    if res > tol:
        raise ConvergenceError(f"periodic cell solve residual {res:.3e} exceeds {tol:g}", residual=res)
    return CorrectorSolution(grid, w.reshape((d,) + grid.shape), P.reshape(grid.shape + (d, d)), res,
                             (1,) * d, tol, 0.0)


@dataclass(frozen=True, eq=False)
class FineSolution:
    epsilon: float
    problem: MacroProblem
    u: np.ndarray
    grad: np.ndarray
    residual: float
    voxel: np.ndarray
    phase: np.ndarray

    @property
    def mesh(self):
        return self.problem.mesh


def _tile(cell: CellGrid, mesh, epsilon):
    y = mesh.element_midpoints() / epsilon
    return cell.voxel_index(y)


def solve_fine(cell: CellGrid, macro: MacroProblem, epsilon: float, tol: float = 1e-10,
               elements_per_period: int | None = None) -> FineSolution:
    """Solve the oscillatory problem with coefficients ``A(x/eps)``.

    Every subdomain of ``macro`` is filled with the same periodic cell.
    """
    per = elements_per_period or max(cell.resolution, MIN_ELEMENTS_PER_PERIOD)
    prob = macro.refine(refinement_factor(macro, epsilon, per))
    vox = _tile(cell, prob.mesh, epsilon)
    sol = solve_q1(prob.mesh, cell.flat_tensors[vox], prob.f, prob.bcs, tol)
    return FineSolution(epsilon, prob, sol.u, sol.grad, sol.residual, vox, cell.flat_phase[vox])


def _in_D(mesh, D):
    return D.contains(mesh.element_midpoints())


def lp_norm_gradient(fine: FineSolution, p, D: Box | None = None, phase=None) -> float:
    """``(int_D |grad u^eps|^p)^(1/p)`` by element-midpoint quadrature."""
    if p < 2:
        raise ValueError("p must be >= 2")
    sel = np.ones(fine.grad.shape[0], dtype=bool) if D is None else _in_D(fine.mesh, D)
    if phase is not None:
        sel &= fine.phase == phase
    g = np.linalg.norm(fine.grad[sel], axis=1)
    return (kernels.pairwise_sum(g ** p) * fine.mesh.element_volume) ** (1.0 / p)


def empirical_distribution(fine: FineSolution, phase, D: Box, t_grid) -> np.ndarray:
    """Measure of ``{x in D : chi_i |grad u^eps| > t}`` for each ``t``."""
    sel = _in_D(fine.mesh, D)
    if phase is not None:
        sel &= fine.phase == phase
    g = np.sort(np.linalg.norm(fine.grad[sel], axis=1))
    counts = g.shape[0] - np.searchsorted(g, np.asarray(t_grid, dtype=np.float64), side="right")
    return counts * fine.mesh.element_volume


@dataclass(frozen=True, eq=False)
class _Homogenized:
    """Homogenized solution on a fine mesh plus the cell data for predictions."""

    macro: object
    cell: CorrectorSolution

    def two_scale(self, fine: FineSolution) -> np.ndarray:
        P = self.cell.flat_P[fine.voxel]
        return np.einsum("eij,ej->ei", P, self.macro.grad_u_H)


def homogenized_on(fine_problem: MacroProblem, cell_solution: CorrectorSolution, tol=1e-10):
    AE = effective_tensor(cell_solution).entries
    AE = 0.5 * (AE + AE.T)
    prob = replace(fine_problem, tensors={k: AE for k in fine_problem.tensors})
    return _Homogenized(solve_homogenized(prob, tol), cell_solution)


def _cell_average(hom: _Homogenized, fine: FineSolution, sel, fn, chunk=256):
    """``sum_e vol * mean_y fn(x_e, y, P(y) grad u^H(x_e))`` over selected elements."""
    P = hom.cell.flat_P
    ys = hom.cell.grid.voxel_centers()
    mids = fine.mesh.element_midpoints()[sel]
    grads = hom.macro.grad_u_H[sel]
    per = np.empty(mids.shape[0])
    n, d = ys.shape
    for a in range(0, mids.shape[0], chunk):
        x = mids[a:a + chunk]
        eta = np.einsum("vij,ej->evi", P, grads[a:a + chunk])
        X = np.broadcast_to(x[:, None, :], eta.shape).reshape(-1, d)
        Y = np.broadcast_to(ys[None], eta.shape).reshape(-1, d)
        vals = np.asarray(fn(X, Y, eta.reshape(-1, d)), dtype=np.float64).reshape(eta.shape[:2])
        per[a:a + chunk] = vals.sum(axis=1) / n
    return kernels.pairwise_sum(per) * fine.mesh.element_volume


def localization_residual(fine: FineSolution, hom: _Homogenized, D: Box, q=None):
    """``(LHS, prediction)`` for ``int_D q(x, x/eps) |grad u^eps|^2``.

    ``q`` is ``None`` (constant 1), an integer phase id (indicator of that
    phase) or a callable ``q(x, y)`` vectorized over rows.
    """
    sel = _in_D(fine.mesh, D)
    g2 = np.einsum("ei,ei->e", fine.grad, fine.grad)
    vol = fine.mesh.element_volume
    if q is None or isinstance(q, (int, np.integer)):
        phase = None if q is None else int(q)
        lhs_sel = sel if phase is None else sel & (fine.phase == phase)
        lhs = kernels.pairwise_sum(np.ascontiguousarray(g2[lhs_sel])) * vol
        pred = moment_integral(hom.macro, {k: hom.cell for k in np.unique(hom.macro.subdomain).tolist()},
                               2.0, sel, phase)
        return float(lhs), float(pred)
    mids = fine.mesh.element_midpoints()[sel]
    qv = np.asarray(q(mids, np.mod(mids / fine.epsilon, 1.0)), dtype=np.float64)
    lhs = kernels.pairwise_sum(np.ascontiguousarray(qv * g2[sel])) * vol
    pred = _cell_average(hom, fine, sel, lambda x, y, eta: q(x, y) * np.einsum("ki,ki->k", eta, eta))
    return float(lhs), float(pred)


def clipped_power(p, M):
    """``psi(x, eta) = min(|eta|^p, M)``."""
    def psi(x, eta):
        return np.minimum(np.linalg.norm(eta, axis=-1) ** p, M)
    return psi


def caratheodory_residual(fine: FineSolution, hom: _Homogenized, D: Box, psi, p):
    """``(LHS, prediction)`` for ``int_D psi(x, grad u^eps)``; rejects ``psi``
    exceeding ``|eta|^p`` at any sampled point."""
    sel = _in_D(fine.mesh, D)
    mids = fine.mesh.element_midpoints()[sel]
    grads = fine.grad[sel]
    vals = np.asarray(psi(mids, grads), dtype=np.float64)
    bound = np.linalg.norm(grads, axis=1) ** p
    if np.any(np.abs(vals) > bound * (1 + 1e-12) + 1e-300):
        raise ValueError("psi violates the growth bound |psi(x, eta)| <= |eta|^p")
    lhs = kernels.pairwise_sum(np.ascontiguousarray(vals)) * fine.mesh.element_volume

    def checked(x, y, eta):
        v = np.asarray(psi(x, eta), dtype=np.float64)
        if np.any(np.abs(v) > np.linalg.norm(eta, axis=-1) ** p * (1 + 1e-12) + 1e-300):
            raise ValueError("psi violates the growth bound |psi(x, eta)| <= |eta|^p")
        return np.ascontiguousarray(v)

    pred = _cell_average(hom, fine, sel, checked)
    return float(lhs), float(pred)


def corrector_mismatch(fine: FineSolution, hom: _Homogenized, D: Box, r) -> float:
    """``|| grad u^eps - P(x/eps) grad u^H ||_{L^r(D)}``."""
    sel = _in_D(fine.mesh, D)
    diff = np.linalg.norm(fine.grad[sel] - hom.two_scale(fine)[sel], axis=1)
    return (kernels.pairwise_sum(diff ** r) * fine.mesh.element_volume) ** (1.0 / r)


def homogenized_l2_error(fine: FineSolution, hom: _Homogenized) -> float:
    """``|| u^eps - u^H ||_{L^2(Omega)}`` from element-midpoint values."""
    nodes = fine.mesh.element_nodes()
    e = (np.asarray(fine.u).ravel() - np.asarray(hom.macro.u_H).ravel())[nodes].mean(axis=1)
    return math.sqrt(kernels.pairwise_sum(e * e) * fine.mesh.element_volume)


@dataclass(frozen=True)
class SweepReport:
    """Long-format rows ``(epsilon, quantity, p_or_t, phase, value)`` plus a
    summary of the trend and sandwich verdicts. Phase ``-1`` is the whole cell."""

    rows: tuple
    summary: dict = field(default_factory=dict)

    def select(self, quantity, p_or_t=None, phase=None):
        """``[(epsilon, value)]`` in report order (decreasing epsilon)."""
        out = []
        for r in self.rows:
            if r[1] == quantity and (p_or_t is None or r[2] == p_or_t) and (phase is None or r[3] == phase):
                out.append((r[0], r[4]))
        return out

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(SWEEP_COLUMNS)
        for r in self.rows:
            w.writerow([format_value(float(r[0])), r[1], format_value(float(r[2])), r[3], format_value(float(r[4]))])
        return buf.getvalue()

    def to_json(self) -> str:
        rows = [dict(zip(SWEEP_COLUMNS, (float(r[0]), r[1], r[2], r[3],
                                         "+inf" if math.isinf(r[4]) else float(r[4])))) for r in self.rows]
        return json.dumps({"rows": rows, "summary": self.summary}, indent=2, sort_keys=True)


def _strictly_decreasing(vals):
    return all(b < a for a, b in zip(vals, vals[1:]))


def run_sweep(config: SweepConfig, cell_solution: CorrectorSolution | None = None, psi=None,
              psi_p=2.0, workers=None) -> SweepReport:
    """Fine solves over the epsilon ladder and every tracked diagnostic."""
    cfg = config
    if cell_solution is not None:
        sol = cell_solution
    elif cfg.cell_scheme == "fem":
        sol = solve_corrector_fem(cfg.cell, cfg.cell_tol)
    else:
        sol = solve_corrector(cfg.cell, tol=cfg.cell_tol, workers=workers)
    D = cfg.D
    phases = list(range(cfg.cell.num_phases))
    rows = []
    verdicts = {}
    for eps in cfg.epsilons:
        fine = solve_fine(cfg.cell, cfg.macro, eps, cfg.tol, cfg.elements_per_period)
        hom = homogenized_on(fine.problem, sol, cfg.tol)
        cells = {k: sol for k in np.unique(hom.macro.subdomain).tolist()}
        sel = _in_D(fine.mesh, D)
        measure = float(sel.sum() * fine.mesh.element_volume)
        for p in cfg.p_list:
            norm = lp_norm_gradient(fine, p, D)
            lb = moment_integral(hom.macro, cells, p, sel) ** (1.0 / p)
            rows += [(eps, "lp_norm", p, -1, norm), (eps, "lower_bound", p, -1, lb)]
        lhs, pred = localization_residual(fine, hom, D)
        rows += [(eps, "localization_lhs", 2.0, -1, lhs), (eps, "localization_prediction", 2.0, -1, pred),
                 (eps, "localization_residual", 2.0, -1, abs(lhs - pred)),
                 (eps, "localization_relative", 2.0, -1, abs(lhs - pred) / abs(pred) if pred else abs(lhs))]
        for i in phases:
            lhs_i, pred_i = localization_residual(fine, hom, D, q=i)
            rows.append((eps, "localization_residual", 2.0, i, abs(lhs_i - pred_i)))
        grads = np.linalg.norm(fine.grad[sel], axis=1)
        median = float(np.median(grads))
        t_grid = np.asarray(cfg.t_grid if len(cfg.t_grid) else
                            np.linspace(median, grads.max(), 9)[:-1] * 1.0, dtype=np.float64)
        for i in phases:
            lam = empirical_distribution(fine, i, D, t_grid)
            for p in cfg.p_list:
                bound_value = moment_integral(hom.macro, cells, p, sel, i)
                for t, l in zip(t_grid, lam):
                    cheb = chebyshev_tail(bound_value, p, t, measure) if t > 0 else measure
                    rows += [(eps, "distribution", float(t), i, float(l))] if p == cfg.p_list[0] else []
                    rows.append((eps, f"chebyshev_bound_p{p:g}", float(t), i, cheb))
        rows.append((eps, "median_gradient", 0.0, -1, median))
        for r in cfg.r_list:
            rows.append((eps, "corrector_mismatch", float(r), -1, corrector_mismatch(fine, hom, D, r)))
        rows.append((eps, "homogenized_l2", 2.0, -1, homogenized_l2_error(fine, hom)))
        if psi is not None:
            lhs, pred = caratheodory_residual(fine, hom, D, psi, psi_p)
            rows.append((eps, "caratheodory_residual", float(psi_p), -1, abs(lhs - pred)))
        rows.append((eps, "fine_residual", 0.0, -1, fine.residual))
    report = SweepReport(tuple(rows))
    report.summary.update(_verdicts(report, cfg, phases))
    return report


def _verdicts(report: SweepReport, cfg: SweepConfig, phases) -> dict:
    eps_min = cfg.epsilons[-1]
    out = {}
    loc = [v for _, v in report.select("localization_residual", 2.0, -1)]
    out["localization_decreasing"] = _strictly_decreasing(loc)
    out["localization_final_relative"] = report.select("localization_relative")[-1][1]
    ok = True
    for p in cfg.p_list:
        norm = dict(report.select("lp_norm", p))[eps_min]
        lb = dict(report.select("lower_bound", p))[eps_min]
        ok &= norm >= 0.95 * lb
    out["lower_bound_sandwich"] = bool(ok)
    median = dict(report.select("median_gradient"))[eps_min]
    p0 = cfg.p_list[0]
    ok = True
    for i in phases:
        dist = [(r[2], r[4]) for r in report.rows if r[0] == eps_min and r[1] == "distribution" and r[3] == i]
        cheb = {r[2]: r[4] for r in report.rows
                if r[0] == eps_min and r[1] == f"chebyshev_bound_p{p0:g}" and r[3] == i}
        for t, lam in dist:
            if t > median:
                ok &= lam <= 1.10 * cheb[t]
    out["chebyshev_sandwich"] = bool(ok)
    out["corrector_mismatch_decreasing"] = {
        format_value(float(r)): _strictly_decreasing([v for _, v in report.select("corrector_mismatch", float(r))])
        for r in cfg.r_list}
    out["homogenized_l2_decreasing"] = _strictly_decreasing([v for _, v in report.select("homogenized_l2")])
    car = [v for _, v in report.select("caratheodory_residual")]
    if car:
        out["caratheodory_decreasing"] = _strictly_decreasing(car)
    return out


def laminate_strip(resolution=16, counts=(8, 8), source=1.0) -> tuple[CellGrid, MacroProblem]:
    """Two-phase laminate (k = 1, 2 stacked along x) on the unit square with
    ``u = 0`` on ``x-``, unit inflow on ``x+``, insulated ``y`` sides and a uniform source."""
    from .geometry import build_laminate

    cell = build_laminate(0, (0.5, 0.5), (1.0, 2.0), resolution)
    macro = MacroProblem((1.0, 1.0), counts, 0, {0: np.eye(2)}, source,
                         {"x-": {"type": "dirichlet", "value": 0.0}, "x+": {"type": "neumann", "g": 1.0}})
    return cell, macro

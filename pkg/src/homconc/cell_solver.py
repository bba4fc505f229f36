"""Periodic corrector problem on a voxel grid.

For each unit vector ``e^i`` the corrector ``w^i`` solves
``div(A (grad w^i + e^i)) = 0`` with periodic ``w^i`` of zero mean. The
discretization is the Fourier-Galerkin (Lippmann-Schwinger) scheme with a
homogeneous reference conductivity ``k0 I``: the unknown is the compatible,
zero-mean fluctuation ``g = grad w^i`` and the equation

    g + Gamma0((A - k0) g) = -Gamma0((A - k0) e^i),   Gamma0 = G / k0,

restricted to compatible fields reduces to ``Gamma0(A g) = -Gamma0(A e^i)``,
which is symmetric positive definite there and is solved by conjugate
gradients. ``G`` is the orthogonal projection onto zero-mean gradient fields,
applied in frequency space; Nyquist modes are discarded.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.fft

from . import kernels, voxelio
from .errors import ConvergenceError
from .geometry import CellGrid, validate_coercivity


class _Projector:
    """Projection onto compatible zero-mean fields for a periodic grid."""

    def __init__(self, dim, resolution, workers=None):
        self.dim, self.N, self.workers = dim, resolution, workers
        self.axes = tuple(range(1, dim + 1))
        N = resolution
        full = np.fft.fftfreq(N, 1.0 / N)
        half = np.fft.rfftfreq(N, 1.0 / N)
        self.k = []
        for a in range(dim):
            f = half if a == dim - 1 else full
            shape = [1] * dim
            shape[a] = f.shape[0]
            self.k.append((2.0 * np.pi * f).reshape(shape))
        k2 = sum(k * k for k in self.k)
        valid = np.ones(k2.shape, dtype=bool)
        valid.flat[0] = False
        for a in range(dim):
            f = half if a == dim - 1 else full
            shape = [1] * dim
            shape[a] = f.shape[0]
            valid &= (np.abs(f) != N / 2).reshape(shape)
        with np.errstate(divide="ignore"):
            self.inv_k2 = np.where(valid, 1.0 / np.where(valid, k2, 1.0), 0.0)

    def fwd(self, field):
        return scipy.fft.rfftn(field, axes=self.axes, workers=self.workers)

    def inv(self, spec):
        return scipy.fft.irfftn(spec, s=(self.N,) * self.dim, axes=self.axes,
                                workers=self.workers)

    def __call__(self, field):
        F = self.fwd(field)
        div = self.k[0] * F[0]
        for a in range(1, self.dim):
            div = div + self.k[a] * F[a]
        div *= self.inv_k2
        for a in range(self.dim):
            F[a] = self.k[a] * div
        return self.inv(F)

    def potential(self, grad):
        """Zero-mean periodic potential whose gradient is the compatible ``grad``."""
        F = self.fwd(grad)
        div = self.k[0] * F[0]
        for a in range(1, self.dim):
            div = div + self.k[a] * F[a]
        W = -1j * div * self.inv_k2
        return scipy.fft.irfftn(W, s=(self.N,) * self.dim, axes=tuple(range(self.dim)),
                                workers=self.workers)


def _dot(u, v):
    return kernels.pairwise_sum((u * v).ravel()) / u[0].size


def _norm(u):
    return float(np.sqrt(_dot(u, u)))


@dataclass(frozen=True, eq=False)
class CorrectorSolution:
    """Correctors ``w`` (shape (dim,) + grid.shape) and the corrector matrix field
    ``P`` (shape grid.shape + (dim, dim)) whose column ``i`` is ``grad w^i + e^i``.
    """

    grid: CellGrid
    w: np.ndarray
    P: np.ndarray
    residual: float
    iterations: tuple
    tol: float
    reference_medium: float
    converged: bool = True

    @property
    def flat_P(self) -> np.ndarray:
        return self.P.reshape(-1, self.grid.dim, self.grid.dim)

    def cell_moment(self, xi, p, phase=None) -> float:
        """Voxel average of ``chi_phase |P xi|^p`` (the p-th power, not the root)."""
        s, _ = kernels.moment_sum(self.flat_P, np.asarray(xi, dtype=np.float64), float(p),
                                  self.grid.flat_phase, -1 if phase is None else int(phase))
        return s / self.grid.n_voxels

    def metadata(self) -> dict:
        return {
            "tol": self.tol,
            "iterations": list(self.iterations),
            "residual": self.residual,
            "reference_medium": self.reference_medium,
            "converged": self.converged,
        }


@dataclass(frozen=True)
class EffectiveTensor:
    dim: int
    entries: np.ndarray

    def eigenvalues(self) -> np.ndarray:
        return np.linalg.eigvalsh(0.5 * (self.entries + self.entries.T))


def _apply(grid, field):
    d, n = grid.dim, grid.n_voxels
    return kernels.voxel_matvec(grid.flat_tensors, field.reshape(d, n)).reshape(field.shape)


def _unit_field(grid, i):
    e = np.zeros((grid.dim,) + grid.shape)
    e[i] = 1.0
    return e


def _cg_direction(grid, proj, i, k0, tol, max_iter):
    E = _unit_field(grid, i)
    AE = _apply(grid, E)
    scale = _norm(AE) / k0
    b = -proj(AE) / k0
    x = np.zeros_like(E)
    it = 0

    def residual_of(x):
        return proj(_apply(grid, E + x))

    r = b
    while True:
        rr = _dot(r, r)
        rel = np.sqrt(rr) / scale
        p = r.copy()
        while rel > tol and it < max_iter:
            Ap = proj(_apply(grid, p)) / k0
            a = rr / _dot(p, Ap)
            x += a * p
            r = r - a * Ap
            rr_new = _dot(r, r)
            rel = np.sqrt(rr_new) / scale
            p = r + (rr_new / rr) * p
            rr = rr_new
            it += 1
        # recursive residuals drift; confirm against the true one
        true_rel = _norm(residual_of(x)) / (scale * k0)
        if true_rel <= tol or it >= max_iter:
            return x, true_rel, it
        r = -residual_of(x) / k0


def solve_corrector(grid: CellGrid, tol: float = 1e-8, max_iter: int | None = None,
                    workers: int | None = None) -> CorrectorSolution:
    """Solve the cell problem for every unit direction.

    Raises :class:`ConvergenceError` when ``max_iter`` (default
    ``10 * resolution``) is exhausted; the partial solution is attached as
    ``err.solution``.
    """
    if not tol > 0:
        raise ValueError("tol must be positive")
    alpha_min, beta_max = validate_coercivity(grid)
    if max_iter is None:
        max_iter = 10 * grid.resolution
    k0 = 0.5 * (alpha_min + beta_max)
    d = grid.dim
    proj = _Projector(d, grid.resolution, workers)
    P = np.empty(grid.shape + (d, d))
    w = np.empty((d,) + grid.shape)
    residuals, iters = [], []
    for i in range(d):
        g, res, it = _cg_direction(grid, proj, i, k0, tol, max_iter)
        w[i] = proj.potential(g)
        w[i] -= kernels.voxel_mean(w[i])
        col = g
        col[i] += 1.0
        P[..., :, i] = np.moveaxis(col, 0, -1)
        residuals.append(res)
        iters.append(it)
    sol = CorrectorSolution(grid, w, P, float(max(residuals)), tuple(iters), tol, k0,
                            converged=max(residuals) <= tol)
    if not sol.converged:
        err = ConvergenceError(
            f"corrector solve stopped after {max(iters)} iterations with residual {sol.residual:.3e} > {tol:g}",
            residual=sol.residual, iterations=max(iters))
        err.solution = sol
        raise err
    return sol


def effective_tensor(solution: CorrectorSolution) -> EffectiveTensor:
    """Voxel average of ``A(y) P(y)``."""
    grid = solution.grid
    d = grid.dim
    AE = np.empty((d, d))
    for i in range(d):
        col = np.moveaxis(solution.P[..., :, i], -1, 0)
        flux = _apply(grid, np.ascontiguousarray(col))
        for k in range(d):
            AE[k, i] = kernels.voxel_mean(flux[k])
    return EffectiveTensor(d, AE)


def equilibrium_residual(grid: CellGrid, solution: CorrectorSolution, workers=None) -> float:
    """``max_i ||G(A P e^i)|| / ||A e^i||``: the discrete dual norm of
    ``div(A (grad w^i + e^i))`` relative to the load."""
    proj = _Projector(grid.dim, grid.resolution, workers)
    worst = 0.0
    for i in range(grid.dim):
        col = np.ascontiguousarray(np.moveaxis(solution.P[..., :, i], -1, 0))
        num = _norm(proj(_apply(grid, col)))
        den = _norm(_apply(grid, _unit_field(grid, i)))
        worst = max(worst, num / den)
    return worst


def voigt_reuss_bounds(grid: CellGrid) -> tuple[np.ndarray, np.ndarray]:
    """(harmonic mean, arithmetic mean) of the voxel tensor field."""
    flat = grid.flat_tensors
    d = grid.dim
    mean = np.array([[kernels.voxel_mean(np.ascontiguousarray(flat[:, i, j]))
                      for j in range(d)] for i in range(d)])
    inv = np.linalg.inv(flat)
    hmean_inv = np.array([[kernels.voxel_mean(np.ascontiguousarray(inv[:, i, j]))
                           for j in range(d)] for i in range(d)])
    return np.linalg.inv(hmean_inv), mean


def export_solution(solution: CorrectorSolution, outdir, prefix="corrector") -> dict:
    """Write ``<prefix>_w.vox``, ``<prefix>_P.vox`` and ``<prefix>_meta.json``."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    g = solution.grid
    common = dict(dim=g.dim, resolution=g.resolution, num_phases=g.num_phases, labels=g.flat_phase)
    w_path = voxelio.write_voxels(outdir / f"{prefix}_w.vox", layout=voxelio.VECTOR,
                                  data=solution.w.reshape(g.dim, -1).T, **common)
    P_path = voxelio.write_voxels(outdir / f"{prefix}_P.vox", layout=voxelio.FULL,
                                  data=solution.flat_P.reshape(g.n_voxels, -1), **common)
    meta_path = outdir / f"{prefix}_meta.json"
    meta_path.write_text(json.dumps(solution.metadata(), indent=2, sort_keys=True))
    return {"w": str(w_path), "P": str(P_path), "meta": str(meta_path)}


def load_solution(grid: CellGrid, P_path, w_path=None, meta_path=None) -> CorrectorSolution:
    """Rebuild a :class:`CorrectorSolution` from exported files."""
    header, data, _ = voxelio.read_voxels(P_path)
    d, N = header["dim"], header["resolution"]
    if (d, N) != (grid.dim, grid.resolution):
        raise ValueError("corrector file does not match the grid")
    P = data.reshape((N,) * d + (d, d))
    if w_path is not None:
        _, wdata, _ = voxelio.read_voxels(w_path)
        w = wdata.T.reshape((d,) + (N,) * d)
    else:
        w = np.zeros((d,) + (N,) * d)
    meta = json.loads(Path(meta_path).read_text()) if meta_path else {}
    return CorrectorSolution(grid, w, P, float(meta.get("residual", 0.0)),
                             tuple(meta.get("iterations", ())), float(meta.get("tol", 0.0)),
                             float(meta.get("reference_medium", 0.0)),
                             bool(meta.get("converged", True)))

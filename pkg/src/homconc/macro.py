"""Structured-mesh multilinear finite elements for the homogenized problem.

Elements are axis-aligned boxes carrying a constant conductivity tensor; the
same assembly serves the homogenized solve (one effective tensor per
subdomain) and the oscillatory fine-scale solve in :mod:`homconc.sweep`.

Boundary sides are named ``"x-"``, ``"x+"``, ``"y-"``, ``"y+"``, ``"z-"``,
``"z+"``. Each side carries either ``{"type": "dirichlet", "value": u0}`` or
``{"type": "neumann", "g": flux}``; sides left out are insulated.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import kernels
from .errors import ConfigError, ConvergenceError

SIDES = ("x-", "x+", "y-", "y+", "z-", "z+")


def side_name(axis, upper):
    return "xyz"[axis] + ("+" if upper else "-")


@dataclass(frozen=True)
class Box:
    """Closed axis-aligned box used to select elements by their midpoints."""

    lo: tuple
    hi: tuple

    def contains(self, x):
        x = np.asarray(x)
        lo = np.asarray(self.lo) - 1e-12
        hi = np.asarray(self.hi) + 1e-12
        return np.all((x >= lo) & (x <= hi), axis=-1)

    @property
    def volume(self):
        return float(np.prod(np.subtract(self.hi, self.lo)))

    @classmethod
    def centered(cls, extents, fraction=0.5):
        ext = np.asarray(extents, dtype=float)
        return cls(tuple(ext * (1 - fraction) / 2), tuple(ext * (1 + fraction) / 2))


@dataclass(frozen=True)
class StructuredMesh:
    extents: tuple
    counts: tuple

    @property
    def dim(self):
        return len(self.counts)

    @property
    def spacing(self):
        return np.asarray(self.extents, dtype=float) / np.asarray(self.counts)

    @property
    def n_elements(self):
        return int(np.prod(self.counts))

    @property
    def node_shape(self):
        return tuple(n + 1 for n in self.counts)

    @property
    def n_nodes(self):
        return int(np.prod(self.node_shape))

    @property
    def element_volume(self):
        return float(np.prod(self.spacing))

    def element_midpoints(self):
        h = self.spacing
        axes = [(np.arange(n) + 0.5) * h[k] for k, n in enumerate(self.counts)]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)

    def node_coordinates(self):
        h = self.spacing
        axes = [np.arange(n + 1) * h[k] for k, n in enumerate(self.counts)]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)

    def element_nodes(self):
        """(n_elements, 2**dim) global node ids, local order = corner bits, axis 0 slowest."""
        d = self.dim
        idx = np.meshgrid(*[np.arange(n) for n in self.counts], indexing="ij")
        idx = [i.ravel() for i in idx]
        out = np.empty((self.n_elements, 2 ** d), dtype=np.int64)
        for a, bits in enumerate(itertools.product((0, 1), repeat=d)):
            out[:, a] = np.ravel_multi_index([idx[k] + bits[k] for k in range(d)], self.node_shape)
        return out

    def side_nodes(self, axis, upper):
        grids = np.meshgrid(*[np.arange(n) for n in self.node_shape], indexing="ij")
        mask = grids[axis] == (self.counts[axis] if upper else 0)
        return np.flatnonzero(mask.ravel())

    def side_facets(self, axis, upper):
        """(n_facets, 2**(dim-1)) node ids of the boundary facets on one side, row-major
        over the remaining axes."""
        d = self.dim
        other = [k for k in range(d) if k != axis]
        fixed = self.counts[axis] if upper else 0
        idx = np.meshgrid(*[np.arange(self.counts[k]) for k in other], indexing="ij")
        idx = [i.ravel() for i in idx]
        out = np.empty((idx[0].shape[0] if idx else 1, 2 ** (d - 1)), dtype=np.int64)
        for a, bits in enumerate(itertools.product((0, 1), repeat=d - 1)):
            coords = []
            j = 0
            for k in range(d):
                if k == axis:
                    coords.append(np.full(out.shape[0], fixed))
                else:
                    coords.append(idx[j] + bits[j])
                    j += 1
            out[:, a] = np.ravel_multi_index(coords, self.node_shape)
        return out

    def facet_area(self, axis):
        h = self.spacing
        return float(np.prod([h[k] for k in range(self.dim) if k != axis]))

    def refine(self, factor):
        return StructuredMesh(self.extents, tuple(n * factor for n in self.counts))


def _reference_blocks(mesh):
    """Per-entry element matrices: K_e = sum_ij A_ij * blocks[i, j] for constant A."""
    d = mesh.dim
    h = mesh.spacing
    gp = np.array([0.5 - 0.5 / np.sqrt(3.0), 0.5 + 0.5 / np.sqrt(3.0)])
    corners = list(itertools.product((0, 1), repeat=d))
    blocks = np.zeros((d, d, 2 ** d, 2 ** d))
    for q in itertools.product(gp, repeat=d):
        B = np.empty((d, 2 ** d))
        for a, bits in enumerate(corners):
            vals = [q[k] if bits[k] else 1.0 - q[k] for k in range(d)]
            for i in range(d):
                dv = (1.0 if bits[i] else -1.0) / h[i]
                B[i, a] = dv * np.prod([vals[k] for k in range(d) if k != i])
        blocks += np.einsum("ia,jb->ijab", B, B) * (mesh.element_volume / 2 ** d)
    return blocks


def _midpoint_gradient_matrix(mesh):
    d = mesh.dim
    h = mesh.spacing
    B = np.empty((d, 2 ** d))
    for a, bits in enumerate(itertools.product((0, 1), repeat=d)):
        for i in range(d):
            B[i, a] = (1.0 if bits[i] else -1.0) / h[i] / 2 ** (d - 1)
    return B


def element_gradients(mesh, u):
    """Gradient of the multilinear interpolant at each element midpoint."""
    B = _midpoint_gradient_matrix(mesh)
    return np.asarray(u).ravel()[mesh.element_nodes()] @ B.T


def _normalize_bcs(dim, bcs):
    out = {}
    bcs = dict(bcs or {})
    for name in bcs:
        if name not in SIDES[: 2 * dim]:
            raise ConfigError(f"unknown boundary side {name!r}")
    for axis in range(dim):
        for upper in (False, True):
            name = side_name(axis, upper)
            spec = dict(bcs.get(name, {"type": "neumann", "g": 0.0}))
            kind = spec.get("type")
            if kind == "dirichlet":
                out[name] = {"type": "dirichlet", "value": float(spec.get("value", 0.0))}
            elif kind == "neumann":
                out[name] = {"type": "neumann", "g": spec.get("g", 0.0)}
            else:
                raise ConfigError(f"side {name}: type must be 'dirichlet' or 'neumann'")
    return out


@dataclass(frozen=True, eq=False)
class FESolution:
    mesh: StructuredMesh
    u: np.ndarray
    grad: np.ndarray
    residual: float
    boundary_flux: float
    energy: float
    work: float


def solve_q1(mesh, element_tensors, f=0.0, bcs=None, tol=1e-10, method=None):
    """Solve ``-div(A grad u) = f`` with element-wise constant ``A`` and ``f``.

    ``boundary_flux`` is the total outflow through Dirichlet nodes (minus the
    nodal reactions), so ``sum f vol + sum g area == boundary_flux`` holds for
    the discrete solution.
    """
    d = mesh.dim
    A = np.asarray(element_tensors, dtype=np.float64).reshape(mesh.n_elements, d, d)
    bcs = _normalize_bcs(d, bcs)
    nodes = mesh.element_nodes()
    blocks = _reference_blocks(mesh)
    data = np.einsum("eij,ijab->eab", A, blocks)
    nloc = 2 ** d
    rows = np.repeat(nodes, nloc, axis=1).ravel()
    cols = np.tile(nodes, (1, nloc)).ravel()
    K = sp.csr_matrix((data.ravel(), (rows, cols)), shape=(mesh.n_nodes, mesh.n_nodes))

    fe = np.broadcast_to(np.asarray(f, dtype=np.float64), mesh.counts).ravel()
    F = np.bincount(nodes.ravel(), weights=np.repeat(fe * mesh.element_volume / nloc, nloc),
                    minlength=mesh.n_nodes)
    total_g = 0.0
    fixed = np.zeros(mesh.n_nodes, dtype=bool)
    u = np.zeros(mesh.n_nodes)
    for axis in range(d):
        for upper in (False, True):
            spec = bcs[side_name(axis, upper)]
            if spec["type"] == "neumann":
                facets = mesh.side_facets(axis, upper)
                other = tuple(mesh.counts[k] for k in range(d) if k != axis)
                g = np.broadcast_to(np.asarray(spec["g"], dtype=np.float64), other).ravel()
                area = mesh.facet_area(axis)
                total_g += float(g.sum() * area)
                F += np.bincount(facets.ravel(),
                                 weights=np.repeat(g * area / 2 ** (d - 1), 2 ** (d - 1)),
                                 minlength=mesh.n_nodes)
    for axis in range(d):
        for upper in (False, True):
            spec = bcs[side_name(axis, upper)]
            if spec["type"] == "dirichlet":
                ids = mesh.side_nodes(axis, upper)
                fixed[ids] = True
                u[ids] = spec["value"]

    pure_neumann = not fixed.any()
    if pure_neumann:
        total = float(fe.sum() * mesh.element_volume) + total_g
        scale = float(np.abs(fe).sum() * mesh.element_volume) + abs(total_g) + 1e-300
        if abs(total) > 1e-10 * scale:
            raise ConfigError(f"pure Neumann problem violates compatibility: int f + int g = {total:.3e}")
        fixed[0] = True  # pin one node, re-centred below

    free = ~fixed
    Kff = K[free][:, free].tocsc()
    rhs = F[free] - K[free][:, fixed] @ u[fixed]
    if method is None:
        method = "direct" if d == 2 or Kff.shape[0] < 60000 else "cg"
    if method == "direct":
        u[free] = spla.splu(Kff).solve(rhs)
    elif method == "cg":
        diag = Kff.diagonal()
        M = spla.LinearOperator(Kff.shape, matvec=lambda v: v / diag)
        sol, info = spla.cg(Kff, rhs, rtol=tol * 0.1, atol=0.0, maxiter=20 * Kff.shape[0], M=M)
        if info != 0:
            raise ConvergenceError("macro CG did not converge", iterations=info)
        u[free] = sol
    else:
        raise ValueError(f"unknown method {method!r}")
    if pure_neumann:
        ue = u[nodes].mean(axis=1)
        u -= kernels.voxel_mean(ue)

    Ku = K @ u
    den = np.linalg.norm(rhs) or 1.0
    residual = float(np.linalg.norm(Ku[free] - F[free]) / den)
    if residual > tol:
        raise ConvergenceError(f"macro solve residual {residual:.3e} exceeds {tol:g}", residual=residual)
    reaction = float(kernels.pairwise_sum(Ku[fixed] - F[fixed])) if not pure_neumann else 0.0
    return FESolution(mesh, u.reshape(mesh.node_shape), element_gradients(mesh, u), residual,
                      -reaction, float(u @ Ku), float(u @ F))


@dataclass(frozen=True, eq=False)
class MacroProblem:
    """Box domain, structured mesh, subdomain partition and boundary data.

    ``partition`` maps each element (array of shape ``counts``) to a subdomain
    id; ``tensors`` maps subdomain id to its (effective) conductivity; ``f`` is
    element-wise constant; ``bcs`` is keyed by side name.
    """

    extents: tuple
    counts: tuple
    partition: np.ndarray
    tensors: dict
    f: object = 0.0
    bcs: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "extents", tuple(float(e) for e in self.extents))
        object.__setattr__(self, "counts", tuple(int(c) for c in self.counts))
        if len(self.extents) != len(self.counts) or self.dim not in (2, 3):
            raise ConfigError("extents and counts must both have length 2 or 3")
        part = np.broadcast_to(np.asarray(self.partition, dtype=np.int64), self.counts).copy()
        object.__setattr__(self, "partition", part)
        tens = {}
        for k, t in self.tensors.items():
            a = np.asarray(getattr(t, "entries", t), dtype=np.float64)
            if a.ndim == 0:
                a = float(a) * np.eye(self.dim)
            if a.shape != (self.dim, self.dim):
                raise ConfigError(f"subdomain {k}: tensor shape {a.shape} != {(self.dim, self.dim)}")
            if not np.allclose(a, a.T, rtol=1e-6, atol=1e-9) or np.linalg.eigvalsh(0.5 * (a + a.T))[0] <= 0:
                raise ConfigError(f"subdomain {k}: tensor is not symmetric positive definite")
            tens[int(k)] = a
        object.__setattr__(self, "tensors", tens)
        missing = set(np.unique(part).tolist()) - set(tens)
        if missing:
            raise ConfigError(f"no tensor for subdomains {sorted(missing)}")
        _normalize_bcs(self.dim, self.bcs)

    @property
    def dim(self):
        return len(self.counts)

    @property
    def mesh(self):
        return StructuredMesh(self.extents, self.counts)

    def element_tensors(self):
        ids = self.partition.ravel()
        keys = np.array(sorted(self.tensors))
        table = np.stack([self.tensors[k] for k in keys])
        return table[np.searchsorted(keys, ids)]

    def refine(self, factor: int) -> "MacroProblem":
        """Same problem on a mesh refined ``factor`` times along every axis."""
        factor = int(factor)

        def up(a, axes):
            a = np.asarray(a)
            for ax in axes:
                a = np.repeat(a, factor, axis=ax)
            return a

        d = self.dim
        part = up(self.partition, range(d))
        f = np.asarray(self.f, dtype=np.float64)
        if f.ndim:
            f = up(np.broadcast_to(f, self.counts), range(d))
        bcs = {}
        for name, spec in _normalize_bcs(d, self.bcs).items():
            spec = dict(spec)
            g = np.asarray(spec.get("g", 0.0), dtype=np.float64)
            if spec["type"] == "neumann" and g.ndim:
                spec["g"] = up(g, range(g.ndim))
            bcs[name] = spec
        return replace(self, counts=tuple(c * factor for c in self.counts), partition=part, f=f, bcs=bcs)


@dataclass(frozen=True, eq=False)
class MacroSolution:
    problem: MacroProblem
    u_H: np.ndarray
    grad_u_H: np.ndarray
    residual: float
    boundary_flux: float
    energy: float
    work: float

    @property
    def mesh(self):
        return self.problem.mesh

    @property
    def subdomain(self):
        return self.problem.partition.ravel()

    def element_midpoints(self):
        return self.mesh.element_midpoints()

    @property
    def element_volume(self):
        return self.mesh.element_volume


def solve_homogenized(problem: MacroProblem, tol: float = 1e-10, method=None) -> MacroSolution:
    """Multilinear FE solution of ``-div(A^E grad u) = f`` with the problem's boundary data."""
    sol = solve_q1(problem.mesh, problem.element_tensors(), problem.f, problem.bcs, tol, method)
    return MacroSolution(problem, sol.u, sol.grad, sol.residual, sol.boundary_flux, sol.energy, sol.work)


def two_scale_reconstruction(macro: MacroSolution, cell_data: dict, element: int) -> np.ndarray:
    """Local two-scale gradient ``y -> P(y) grad u^H(x_e)`` on the element's cell grid.

    Returns an array of shape ``grid.shape + (dim,)``.
    """
    sub = int(macro.subdomain[element])
    if sub not in cell_data:
        raise ConfigError(f"no cell data for subdomain {sub}")
    sol = cell_data[sub]
    xi = macro.grad_u_H[element]
    return np.einsum("...ij,j->...i", sol.P, xi)

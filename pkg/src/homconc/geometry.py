"""Periodic unit-cell microstructures rasterized to conductivity voxel grids.

A :class:`CellGrid` stores one symmetric positive definite tensor and one phase
label per voxel of the unit cell ``[0, 1)^dim``, sampled at voxel centers
``(index + 1/2) / resolution``. Interfaces are sharp: no averaging of tensors
across phase boundaries.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

import numpy as np

from . import kernels
from .errors import CoercivityError, PartitionError


def _is_power_of_two(n: int) -> bool:
    return n >= 2 and (n & (n - 1)) == 0


def tensor2(entries, dim: int | None = None) -> np.ndarray:
    """Validate a conductivity tensor and return it as a read-only array.

    A scalar is promoted to ``scalar * I`` (``dim`` is then required).
    Raises :class:`CoercivityError` if the matrix is not symmetric positive
    definite.
    """
    a = np.asarray(entries, dtype=np.float64)
    if a.ndim == 0:
        if dim is None:
            raise ValueError("dim is required to promote a scalar conductivity")
        a = float(a) * np.eye(dim)
    if a.ndim != 2 or a.shape[0] != a.shape[1] or a.shape[0] not in (2, 3):
        raise ValueError(f"conductivity must be a 2x2 or 3x3 matrix, got shape {a.shape}")
    if dim is not None and a.shape[0] != dim:
        raise ValueError(f"expected a {dim}x{dim} tensor, got {a.shape}")
    if not np.all(np.isfinite(a)):
        raise CoercivityError("conductivity has non-finite entries")
    if not np.allclose(a, a.T, rtol=1e-12, atol=1e-14):
        raise CoercivityError("conductivity tensor is not symmetric")
    lo = np.linalg.eigvalsh(a)[0]
    if lo <= 0:
        raise CoercivityError(f"conductivity tensor is not positive definite (min eigenvalue {lo:g})")
    a = a.copy()
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class CellGrid:
    """Voxelized periodic cell: ``tensors[idx]`` is the (dim, dim) conductivity at
    voxel ``idx`` and ``phase[idx]`` its label in ``0..num_phases-1``.

    Arrays are stored read-only; indices wrap modulo ``resolution``.
    """

    dim: int
    resolution: int
    tensors: np.ndarray
    phase: np.ndarray
    num_phases: int

    def __post_init__(self):
        d, N = self.dim, self.resolution
        if d not in (2, 3):
            raise ValueError(f"dim must be 2 or 3, got {d}")
        if not _is_power_of_two(N):
            raise ValueError(f"resolution must be a power of two >= 2, got {N}")
        t = np.ascontiguousarray(self.tensors, dtype=np.float64)
        ph = np.ascontiguousarray(self.phase, dtype=np.uint8)
        if t.shape != (N,) * d + (d, d):
            raise ValueError(f"tensor field has shape {t.shape}, expected {(N,) * d + (d, d)}")
        if ph.shape != (N,) * d:
            raise ValueError(f"phase field has shape {ph.shape}, expected {(N,) * d}")
        if not 1 <= self.num_phases <= 255:
            raise ValueError("num_phases must lie in 1..255")
        if ph.size and int(ph.max()) >= self.num_phases:
            raise PartitionError(f"phase label {int(ph.max())} >= num_phases={self.num_phases}")
        if not np.all(np.isfinite(t)):
            raise CoercivityError("tensor field has non-finite entries")
        if not np.allclose(t, np.swapaxes(t, -1, -2), rtol=1e-12, atol=1e-14):
            raise CoercivityError("tensor field is not symmetric")
        t.setflags(write=False)
        ph.setflags(write=False)
        object.__setattr__(self, "tensors", t)
        object.__setattr__(self, "phase", ph)

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.resolution,) * self.dim

    @property
    def n_voxels(self) -> int:
        return self.resolution ** self.dim

    @property
    def flat_tensors(self) -> np.ndarray:
        return self.tensors.reshape(self.n_voxels, self.dim, self.dim)

    @property
    def flat_phase(self) -> np.ndarray:
        return self.phase.reshape(-1)

    def phase_fractions(self) -> np.ndarray:
        counts = np.bincount(self.flat_phase, minlength=self.num_phases)
        return counts / self.n_voxels

    def voxel_centers(self) -> np.ndarray:
        """Voxel-center coordinates, shape (n_voxels, dim), row-major order."""
        c = (np.arange(self.resolution) + 0.5) / self.resolution
        mesh = np.meshgrid(*([c] * self.dim), indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)

    def voxel_index(self, y: np.ndarray) -> np.ndarray:
        """Flat voxel index containing each cell point ``y`` (wrapped into [0,1))."""
        y = np.asarray(y, dtype=np.float64)
        idx = np.floor(np.mod(y, 1.0) * self.resolution).astype(np.int64) % self.resolution
        flat = np.zeros(idx.shape[:-1], dtype=np.int64)
        for k in range(self.dim):
            flat = flat * self.resolution + idx[..., k]
        return flat

    @classmethod
    def from_field(cls, tensors, phase=None, num_phases=None) -> "CellGrid":
        """Wrap an arbitrary voxel tensor field (shape (N,)*d + (d, d))."""
        t = np.asarray(tensors, dtype=np.float64)
        d = t.shape[-1]
        N = t.shape[0]
        if phase is None:
            phase = np.zeros((N,) * d, dtype=np.uint8)
        phase = np.asarray(phase, dtype=np.uint8)
        if num_phases is None:
            num_phases = int(phase.max()) + 1
        grid = cls(d, N, t, phase, num_phases)
        validate_coercivity(grid)
        return grid


@dataclass(frozen=True)
class SchulgasserCell:
    """Periodic dispersion of radially anisotropic crystallites in a unit matrix.

    Inside ball ``l`` the conductivity is ``lambda1 n n^T + lambda2 (I - n n^T)``
    with ``n`` the outward radial unit vector; outside it is ``I``. ``lambda1``
    defaults to ``1 / (2 lambda2 - 1)``, the value for which the effective
    tensor is exactly the identity. Passing another ``lambda1`` is allowed so
    that the identity can be checked (see :attr:`identity_defect`).
    """

    crystallites: tuple = ()
    lambda2: float = 0.75
    lambda1_override: float | None = field(default=None)

    def __post_init__(self):
        balls = tuple((tuple(float(v) for v in c), float(r)) for c, r in self.crystallites)
        object.__setattr__(self, "crystallites", balls)
        if not 0.5 < self.lambda2 < 1.0:
            raise ValueError(f"lambda2 must lie in (1/2, 1), got {self.lambda2}")
        for c, r in balls:
            if len(c) != 3:
                raise ValueError("crystallite centers must be 3-D points")
            if r <= 0:
                raise ValueError("crystallite radius must be positive")
            if min(c) - r <= 0.0 or max(c) + r >= 1.0:
                raise ValueError(f"ball at {c} with radius {r} leaves the open unit cell")
        for i in range(len(balls)):
            for j in range(i + 1, len(balls)):
                gap = np.linalg.norm(np.subtract(balls[i][0], balls[j][0]))
                if gap < balls[i][1] + balls[j][1]:
                    raise ValueError(f"crystallites {i} and {j} overlap")
        if not self.theta < 1.0:
            raise ValueError("crystallite volume fraction must be < 1")

    @classmethod
    def single(cls, radius=0.35, lambda2=0.75, center=(0.5, 0.5, 0.5)) -> "SchulgasserCell":
        return cls(((tuple(center), radius),), lambda2)

    @property
    def alpha(self) -> float:
        return 2.0 * self.lambda2 - 1.0

    @property
    def lambda1(self) -> float:
        if self.lambda1_override is not None:
            return float(self.lambda1_override)
        return 1.0 / self.alpha

    @property
    def identity_defect(self) -> float:
        """``|lambda1 * alpha - 1|``; zero for the neutral-inclusion choice."""
        return abs(self.lambda1 * self.alpha - 1.0)

    @property
    def centers(self) -> np.ndarray:
        return np.array([c for c, _ in self.crystallites], dtype=np.float64).reshape(-1, 3)

    @property
    def radii(self) -> np.ndarray:
        return np.array([r for _, r in self.crystallites], dtype=np.float64)

    @property
    def ball_fractions(self) -> np.ndarray:
        return 4.0 / 3.0 * np.pi * self.radii ** 3

    @property
    def theta(self) -> float:
        return float(self.ball_fractions.sum())


def build_multiphase(phase_masks: Sequence, phase_tensors: Sequence, resolution: int) -> CellGrid:
    """Assemble a grid from boolean masks (one per phase) and phase tensors."""
    if len(phase_masks) != len(phase_tensors):
        raise ValueError("phase_masks and phase_tensors must have equal length")
    if not phase_masks:
        raise ValueError("at least one phase is required")
    masks = np.stack([np.asarray(m, dtype=bool) for m in phase_masks])
    d = masks.ndim - 1
    if masks.shape[1:] != (resolution,) * d:
        raise ValueError(f"masks must have shape {(resolution,) * d}")
    cover = masks.sum(axis=0)
    if np.any(cover > 1):
        bad = np.argwhere(cover > 1)[0]
        raise PartitionError(f"phase masks overlap at voxel {tuple(int(i) for i in bad)}")
    if np.any(cover == 0):
        bad = np.argwhere(cover == 0)[0]
        raise PartitionError(f"voxel {tuple(int(i) for i in bad)} belongs to no phase")
    tens = np.stack([tensor2(t, d) for t in phase_tensors])
    phase = np.argmax(masks, axis=0).astype(np.uint8)
    return CellGrid(d, resolution, tens[phase], phase, len(phase_tensors))


def build_laminate(normal_axis: int, fractions: Sequence[float], conductivities: Sequence,
                   resolution: int, dim: int = 2) -> CellGrid:
    """Layers stacked along ``normal_axis``; every interface must fall on a voxel face."""
    if len(fractions) != len(conductivities):
        raise ValueError("fractions and conductivities must have equal length")
    if not 0 <= normal_axis < dim:
        raise ValueError(f"normal_axis must lie in 0..{dim - 1}")
    counts = []
    for f in fractions:
        # exact rational check keeps the fixture free of partial voxels
        frac = Fraction(f).limit_denominator(1 << 20)
        if abs(float(frac) - float(f)) > 1e-12:
            raise ValueError(f"fraction {f} is not representable exactly")
        n = frac * resolution
        if n.denominator != 1:
            raise ValueError(f"fraction {f} * resolution {resolution} is not an integer voxel count")
        counts.append(int(n))
    if sum(counts) != resolution:
        raise ValueError("fractions must sum to 1")
    labels_1d = np.repeat(np.arange(len(counts)), counts)
    shape = [1] * dim
    shape[normal_axis] = resolution
    labels = np.broadcast_to(labels_1d.reshape(shape), (resolution,) * dim)
    masks = [labels == k for k in range(len(counts))]
    return build_multiphase(masks, [tensor2(c, dim) for c in conductivities], resolution)


def rasterize_schulgasser(cell: SchulgasserCell, resolution: int) -> CellGrid:
    """Sample the crystallite conductivity at voxel centers (3-D only).

    Phase 1 is the crystallite aggregate, phase 0 the unit matrix.
    """
    if resolution % 2:
        raise ValueError("resolution must be even so no voxel center hits a ball center")
    if resolution < 16:
        raise ValueError("resolution must be at least 16")
    if not _is_power_of_two(resolution):
        raise ValueError("resolution must be a power of two")
    # a voxel center sits at (i + 1/2)/N; reject a ball center landing on one
    for c in cell.centers:
        k = c * resolution - 0.5
        if np.all(np.abs(k - np.round(k)) == 0.0):
            raise ValueError(f"ball center {tuple(c)} coincides with a voxel center")
    tensors, phase = kernels.rasterize_balls(resolution, cell.centers, cell.radii,
                                             cell.lambda1, cell.lambda2)
    N = resolution
    return CellGrid(3, N, tensors.reshape(N, N, N, 3, 3), phase.reshape(N, N, N), 2)


def validate_coercivity(grid: CellGrid) -> tuple[float, float]:
    """Return ``(min eigenvalue, max eigenvalue)`` over all voxels.

    Raises :class:`CoercivityError` naming the first voxel whose smallest
    eigenvalue is not positive.
    """
    flat = grid.flat_tensors
    lo = np.empty(flat.shape[0])
    hi = np.empty(flat.shape[0])
    chunk = 1 << 18
    for s in range(0, flat.shape[0], chunk):
        w = np.linalg.eigvalsh(flat[s:s + chunk])
        lo[s:s + chunk] = w[:, 0]
        hi[s:s + chunk] = w[:, -1]
    k = int(np.argmin(lo))
    if not lo[k] > 0:
        voxel = tuple(int(i) for i in np.unravel_index(k, grid.shape))
        raise CoercivityError(f"voxel {voxel} has non-positive eigenvalue {lo[k]:g}", voxel=voxel)
    return float(lo[k]), float(hi.max())

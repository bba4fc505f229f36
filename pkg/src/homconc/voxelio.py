"""Binary voxel files.

Layout: one line of UTF-8 JSON (the header) terminated by ``\\n``, then
``n_voxels * components`` little-endian float64 values in voxel-major order
(all components of voxel 0, then voxel 1, ... in row-major index order), then
``n_voxels`` unsigned 8-bit phase labels.
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

SYM_UPPER = "row-major symmetric upper-triangle"
FULL = "row-major full"
VECTOR = "vector"
MAGIC = "homconc-voxel"


def _upper_indices(d):
    return [(i, j) for i in range(d) for j in range(i, d)]


def pack_symmetric(tensors: np.ndarray) -> np.ndarray:
    """(n, d, d) symmetric tensors -> (n, d(d+1)/2) upper-triangle rows."""
    d = tensors.shape[-1]
    return np.stack([tensors[:, i, j] for i, j in _upper_indices(d)], axis=1)


def unpack_symmetric(packed: np.ndarray, d: int) -> np.ndarray:
    out = np.empty((packed.shape[0], d, d))
    for k, (i, j) in enumerate(_upper_indices(d)):
        out[:, i, j] = out[:, j, i] = packed[:, k]
    return out


def write_voxels(path, *, dim, resolution, num_phases, layout, data, labels, extra=None):
    """Write ``data`` (n_voxels, components) and ``labels`` (n_voxels,)."""
    n = resolution ** dim
    data = np.ascontiguousarray(data, dtype="<f8").reshape(n, -1)
    labels = np.ascontiguousarray(labels, dtype=np.uint8).reshape(n)
    header = {
        "format": MAGIC,
        "version": 1,
        "dim": int(dim),
        "resolution": int(resolution),
        "num_phases": int(num_phases),
        "tensor_layout": layout,
        "components": int(data.shape[1]),
        "float_bytes": int(data.nbytes),
        "label_bytes": int(labels.nbytes),
    }
    if extra:
        header.update(extra)
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode("utf-8") + b"\n")
        fh.write(data.tobytes())
        fh.write(labels.tobytes())
    return Path(path)


def read_voxels(path):
    """Return ``(header, data, labels)`` with data shaped (n_voxels, components)."""
    with open(path, "rb") as fh:
        header = json.loads(fh.readline().decode("utf-8"))
        if header.get("format") != MAGIC:
            raise ValueError(f"{path} is not a voxel file")
        n = header["resolution"] ** header["dim"]
        data = np.frombuffer(fh.read(header["float_bytes"]), dtype="<f8").astype(np.float64)
        labels = np.frombuffer(fh.read(header["label_bytes"]), dtype=np.uint8).copy()
    return header, data.reshape(n, header["components"]), labels


def write_cell_grid(path, grid):
    return write_voxels(path, dim=grid.dim, resolution=grid.resolution,
                        num_phases=grid.num_phases, layout=SYM_UPPER,
                        data=pack_symmetric(grid.flat_tensors), labels=grid.flat_phase)


def read_cell_grid(path):
    from .geometry import CellGrid, validate_coercivity

    header, data, labels = read_voxels(path)
    if header["tensor_layout"] != SYM_UPPER:
        raise ValueError(f"{path} does not hold a conductivity grid")
    d, N = header["dim"], header["resolution"]
    tensors = unpack_symmetric(data, d).reshape((N,) * d + (d, d))
    grid = CellGrid(d, N, tensors, labels.reshape((N,) * d), header["num_phases"])
    validate_coercivity(grid)
    return grid

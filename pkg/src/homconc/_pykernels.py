"""NumPy implementations of the voxel kernels.

Every routine here mirrors ``_ckernels.pyx`` operation for operation so the two
backends agree bit for bit (same summation tree, same arithmetic order).
"""
import numpy as np

BLOCK = 64


def _tree(leaves):
    a = leaves
    while a.shape[0] > 1:
        m = a.shape[0]
        head = a[0:m - 1:2] + a[1:m:2]
        if m % 2:
            head = np.concatenate([head, a[m - 1:]])
        a = head
    return float(a[0]) if a.shape[0] else 0.0


def _leaf_sums(x):
    n = x.shape[0]
    nb = -(-n // BLOCK)
    padded = np.zeros(nb * BLOCK)
    padded[:n] = x
    blocks = padded.reshape(nb, BLOCK)
    acc = np.zeros(nb)
    for j in range(BLOCK):
        acc += blocks[:, j]
    return acc


def pairwise_sum(x):
    """Fixed-order tree sum of a 1-D float64 array."""
    x = np.ascontiguousarray(x, dtype=np.float64).ravel()
    if x.shape[0] == 0:
        return 0.0
    return _tree(_leaf_sums(x))


def _image_norms(P, xi):
    n, d, _ = P.shape
    s = np.zeros(n)
    for i in range(d):
        c = P[:, i, 0] * xi[0]
        for j in range(1, d):
            c = c + P[:, i, j] * xi[j]
        s = s + c * c
    return np.sqrt(s)


def moment_sum(P, xi, p, labels=None, phase=-1, weights=None):
    """Return ``(sum_v w_v |P_v xi|^p, max_v |P_v xi|)`` over selected voxels.

    ``P`` has shape (n, d, d); ``labels``/``phase`` restrict the voxels when
    ``phase >= 0``; ``weights`` defaults to one per voxel.
    """
    P = np.ascontiguousarray(P, dtype=np.float64)
    xi = np.ascontiguousarray(xi, dtype=np.float64)
    v = _image_norms(P, xi)
    terms = np.power(v, float(p))
    if weights is not None:
        terms = np.ascontiguousarray(weights, dtype=np.float64) * terms
    if phase >= 0:
        mask = np.asarray(labels) == phase
        terms = np.where(mask, terms, 0.0)
        vmax = float(v[mask].max()) if mask.any() else 0.0
    else:
        vmax = float(v.max()) if v.shape[0] else 0.0
    return pairwise_sum(terms), vmax


def image_norms(P, xi):
    """Per-voxel ``|P_v xi|``."""
    return _image_norms(np.ascontiguousarray(P, dtype=np.float64),
                        np.ascontiguousarray(xi, dtype=np.float64))


def voxel_matvec(A, e):
    """Per-voxel product ``out[:, v] = A[v] @ e[:, v]`` for A (n, d, d), e (d, n)."""
    A = np.ascontiguousarray(A, dtype=np.float64)
    e = np.ascontiguousarray(e, dtype=np.float64)
    n, d, _ = A.shape
    out = np.empty((d, n))
    for i in range(d):
        c = A[:, i, 0] * e[0]
        for j in range(1, d):
            c = c + A[:, i, j] * e[j]
        out[i] = c
    return out


def rasterize_balls(resolution, centers, radii, lambda1, lambda2):
    """Radial-tangential ball tensors on the voxel-center lattice of [0, 1)^3.

    Returns ``(tensors, phase)`` with shapes (N^3, 3, 3) and (N^3,) in
    row-major voxel order. Voxels outside every ball get the identity and
    phase 0; inside, ``lambda2*I + (lambda1 - lambda2) n n^T`` and phase 1.
    """
    N = int(resolution)
    c = (np.arange(N) + 0.5) / N
    X, Y, Z = np.meshgrid(c, c, c, indexing="ij")
    X, Y, Z = X.ravel(), Y.ravel(), Z.ravel()
    n = N ** 3
    tensors = np.zeros((n, 3, 3))
    tensors[:, 0, 0] = tensors[:, 1, 1] = tensors[:, 2, 2] = 1.0
    phase = np.zeros(n, dtype=np.uint8)
    contrast = lambda1 - lambda2
    for (cx, cy, cz), r in zip(np.asarray(centers, dtype=np.float64).reshape(-1, 3),
                               np.asarray(radii, dtype=np.float64).ravel()):
        dx, dy, dz = X - cx, Y - cy, Z - cz
        s = np.sqrt(dx * dx + dy * dy + dz * dz)
        inside = (s < r) & (phase == 0)
        if not inside.any():
            continue
        si = s[inside]
        nv = (dx[inside] / si, dy[inside] / si, dz[inside] / si)
        block = np.empty((si.shape[0], 3, 3))
        for i in range(3):
            for j in range(3):
                base = lambda2 if i == j else 0.0
                block[:, i, j] = base + contrast * (nv[i] * nv[j])
        tensors[inside] = block
        phase[inside] = 1
    return tensors, phase

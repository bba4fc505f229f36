# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled voxel kernels; see ``_pykernels`` for the reference semantics."""
import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt

cnp.import_array()

DEF BLOCK = 64


cdef double _tree_inplace(double[::1] a, Py_ssize_t m) noexcept nogil:
    cdef Py_ssize_t k, half
    while m > 1:
        half = m // 2
        for k in range(half):
            a[k] = a[2 * k] + a[2 * k + 1]
        if m % 2:
            a[half] = a[m - 1]
            m = half + 1
        else:
            m = half
    return a[0]


def pairwise_sum(x):
    cdef double[::1] xv = np.ascontiguousarray(x, dtype=np.float64).ravel()
    cdef Py_ssize_t n = xv.shape[0]
    if n == 0:
        return 0.0
    cdef Py_ssize_t nb = (n + BLOCK - 1) // BLOCK
    cdef double[::1] leaves = np.empty(nb)
    cdef Py_ssize_t b, j, lo, hi
    cdef double acc
    with nogil:
        for b in range(nb):
            lo = b * BLOCK
            hi = lo + BLOCK
            if hi > n:
                hi = n
            acc = 0.0
            for j in range(lo, hi):
                acc = acc + xv[j]
            leaves[b] = acc
        acc = _tree_inplace(leaves, nb)
    return acc


cdef inline double _image_norm(const double[:, :, ::1] P, const double[::1] xi,
                               Py_ssize_t v, Py_ssize_t d) noexcept nogil:
    cdef Py_ssize_t i, j
    cdef double c, s = 0.0
    for i in range(d):
        c = P[v, i, 0] * xi[0]
        for j in range(1, d):
            c = c + P[v, i, j] * xi[j]
        s = s + c * c
    return sqrt(s)


def image_norms(P, xi):
    cdef const double[:, :, ::1] Pv = np.ascontiguousarray(P, dtype=np.float64)
    cdef const double[::1] xv = np.ascontiguousarray(xi, dtype=np.float64)
    cdef Py_ssize_t n = Pv.shape[0], d = Pv.shape[1], v
    out = np.empty(n)
    cdef double[::1] ov = out
    with nogil:
        for v in range(n):
            ov[v] = _image_norm(Pv, xv, v, d)
    return out


def moment_sum(P, xi, double p, labels=None, int phase=-1, weights=None):
    cdef const double[:, :, ::1] Pv = np.ascontiguousarray(P, dtype=np.float64)
    cdef const double[::1] xv = np.ascontiguousarray(xi, dtype=np.float64)
    cdef Py_ssize_t n = Pv.shape[0], d = Pv.shape[1]
    cdef const unsigned char[::1] lab
    cdef const double[::1] w
    cdef bint use_phase = phase >= 0
    cdef bint use_w = weights is not None
    if use_phase:
        lab = np.ascontiguousarray(labels, dtype=np.uint8).ravel()
    else:
        lab = np.zeros(1, dtype=np.uint8)
    if use_w:
        w = np.ascontiguousarray(weights, dtype=np.float64).ravel()
    else:
        w = np.zeros(1)
    if n == 0:
        return 0.0, 0.0
    norms = np.empty(n)
    cdef double[::1] nv = norms
    cdef Py_ssize_t b, v, lo, hi
    with nogil:
        for v in range(n):
            nv[v] = _image_norm(Pv, xv, v, d)
    # libm pow and numpy's vectorized power can differ in the last bit, so
    # both backends take the power through numpy
    cdef const double[::1] tv = np.power(norms, p)
    cdef Py_ssize_t nb = (n + BLOCK - 1) // BLOCK
    cdef double[::1] leaves = np.empty(nb)
    cdef double acc, term, vmax = 0.0
    cdef unsigned char ph = <unsigned char>(phase if phase >= 0 else 0)
    with nogil:
        for b in range(nb):
            lo = b * BLOCK
            hi = lo + BLOCK
            if hi > n:
                hi = n
            acc = 0.0
            for v in range(lo, hi):
                term = tv[v]
                if use_w:
                    term = w[v] * term
                if use_phase and lab[v] != ph:
                    term = 0.0
                elif nv[v] > vmax:
                    vmax = nv[v]
                acc = acc + term
            leaves[b] = acc
        acc = _tree_inplace(leaves, nb)
    return acc, vmax


def voxel_matvec(A, e):
    cdef const double[:, :, ::1] Av = np.ascontiguousarray(A, dtype=np.float64)
    cdef const double[:, ::1] ev = np.ascontiguousarray(e, dtype=np.float64)
    cdef Py_ssize_t n = Av.shape[0], d = Av.shape[1], v, i, j
    out = np.empty((d, n))
    cdef double[:, ::1] ov = out
    cdef double c
    with nogil:
        for v in range(n):
            for i in range(d):
                c = Av[v, i, 0] * ev[0, v]
                for j in range(1, d):
                    c = c + Av[v, i, j] * ev[j, v]
                ov[i, v] = c
    return out


def rasterize_balls(int resolution, centers, radii, double lambda1, double lambda2):
    cdef const double[:, ::1] cv = np.ascontiguousarray(centers, dtype=np.float64).reshape(-1, 3)
    cdef const double[::1] rv = np.ascontiguousarray(radii, dtype=np.float64).ravel()
    cdef Py_ssize_t N = resolution, nballs = cv.shape[0]
    cdef Py_ssize_t n = N * N * N
    tensors = np.zeros((n, 3, 3))
    phase = np.zeros(n, dtype=np.uint8)
    cdef double[:, :, ::1] tv = tensors
    cdef unsigned char[::1] pv = phase
    cdef Py_ssize_t a, b, c, v, l, i, j
    cdef double x, y, z, dx, dy, dz, s, contrast = lambda1 - lambda2, base
    cdef double nv[3]
    with nogil:
        for a in range(N):
            x = (a + 0.5) / N
            for b in range(N):
                y = (b + 0.5) / N
                for c in range(N):
                    z = (c + 0.5) / N
                    v = (a * N + b) * N + c
                    tv[v, 0, 0] = 1.0
                    tv[v, 1, 1] = 1.0
                    tv[v, 2, 2] = 1.0
                    for l in range(nballs):
                        dx = x - cv[l, 0]
                        dy = y - cv[l, 1]
                        dz = z - cv[l, 2]
                        s = sqrt(dx * dx + dy * dy + dz * dz)
                        if s < rv[l]:
                            nv[0] = dx / s
                            nv[1] = dy / s
                            nv[2] = dz / s
                            for i in range(3):
                                for j in range(3):
                                    base = lambda2 if i == j else 0.0
                                    tv[v, i, j] = base + contrast * (nv[i] * nv[j])
                            pv[v] = 1
                            break
    return tensors, phase

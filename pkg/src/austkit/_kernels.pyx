# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled convolution kernels.

The column matrix of im2col is never materialized in full: columns are
expanded one cache-sized tile at a time and multiplied with BLAS dgemm
straight away. Row-major arrays are handed to the column-major BLAS as
their transposes.

Shared contract with ``_kernels_py``:
  xp    padded input, C-contiguous (N, C, Hp, Wp)
  wmat  kernel as (O, K) with K = C*kh*kw ordered (c, i, j)
  out   (O, P) with P = N*Ho*Wo ordered (n, y, x)
"""
import numpy as np
cimport numpy as cnp
from scipy.linalg.cython_blas cimport dgemm

cnp.import_array()

DEF TILE_BYTES = 262144


cdef inline Py_ssize_t _tile_rows(Py_ssize_t k, Py_ssize_t wo) noexcept nogil:
    """Output rows per tile so that the K x t column tile stays near TILE_BYTES."""
    cdef Py_ssize_t r = TILE_BYTES // (8 * k * wo)
    if r < 1:
        r = 1
    return r


cdef void _expand(const double[:, :, :, ::1] xp, double* cols, Py_ssize_t r0, Py_ssize_t nrows,
                  int kh, int kw, int stride, Py_ssize_t Ho, Py_ssize_t Wo) noexcept nogil:
    """cols[(c,i,j), q] = xp[n, c, y*s+i, x*s+j] for output rows r0..r0+nrows.

    Output row index r enumerates (n, y); q enumerates (r - r0, x).
    """
    cdef Py_ssize_t C = xp.shape[1]
    cdef Py_ssize_t t = nrows * Wo
    cdef Py_ssize_t c, i, j, r, n, y, x, row = 0
    cdef double* dst
    cdef const double* src
    for c in range(C):
        for i in range(kh):
            for j in range(kw):
                dst = cols + row * t
                for r in range(r0, r0 + nrows):
                    n = r // Ho
                    y = r - n * Ho
                    src = &xp[n, c, y * stride + i, j]
                    if stride == 1:
                        for x in range(Wo):
                            dst[x] = src[x]
                    else:
                        for x in range(Wo):
                            dst[x] = src[x * stride]
                    dst += Wo
                row += 1


cdef void _scatter(double[:, :, :, ::1] dxp, const double* cols, Py_ssize_t r0, Py_ssize_t nrows,
                   int kh, int kw, int stride, Py_ssize_t Ho, Py_ssize_t Wo) noexcept nogil:
    """Adjoint of ``_expand``: accumulate a column tile back into dxp."""
    cdef Py_ssize_t C = dxp.shape[1]
    cdef Py_ssize_t t = nrows * Wo
    cdef Py_ssize_t c, i, j, r, n, y, x, row = 0
    cdef const double* src
    cdef double* dst
    for c in range(C):
        for i in range(kh):
            for j in range(kw):
                src = cols + row * t
                for r in range(r0, r0 + nrows):
                    n = r // Ho
                    y = r - n * Ho
                    dst = &dxp[n, c, y * stride + i, j]
                    if stride == 1:
                        for x in range(Wo):
                            dst[x] += src[x]
                    else:
                        for x in range(Wo):
                            dst[x * stride] += src[x]
                    src += Wo
                row += 1


def conv_forward(const double[:, :, :, ::1] xp, const double[:, ::1] wmat, int kh, int kw, int stride):
    cdef Py_ssize_t N = xp.shape[0], C = xp.shape[1]
    cdef Py_ssize_t Ho = (xp.shape[2] - kh) // stride + 1
    cdef Py_ssize_t Wo = (xp.shape[3] - kw) // stride + 1
    cdef Py_ssize_t O = wmat.shape[0], K = wmat.shape[1]
    if K != C * kh * kw:
        raise ValueError("kernel matrix does not match input channels")
    cdef Py_ssize_t P = N * Ho * Wo
    out = np.empty((O, P), dtype=np.float64)
    cdef double[:, ::1] o = out
    cdef Py_ssize_t R = _tile_rows(K, Wo)
    buf = np.empty(K * R * Wo, dtype=np.float64)
    cdef double[::1] cols = buf
    cdef Py_ssize_t rows = N * Ho, r0 = 0, nr, t, p0
    cdef int m, n_, k_, lda, ldb, ldc
    cdef double one = 1.0, zero = 0.0
    with nogil:
        while r0 < rows:
            nr = R if rows - r0 > R else rows - r0
            t = nr * Wo
            p0 = r0 * Wo
            _expand(xp, &cols[0], r0, nr, kh, kw, stride, Ho, Wo)
            # cm(out[:, tile]) (t x O) = cm(cols) (t x K) . cm(wmat) (K x O)
            m = <int>t; n_ = <int>O; k_ = <int>K
            lda = <int>t; ldb = <int>K; ldc = <int>P
            dgemm(b"N", b"N", &m, &n_, &k_, &one, &cols[0], &lda,
                  <double*>&wmat[0, 0], &ldb, &zero, &o[0, p0], &ldc)
            r0 += nr
    return out


def conv_backward(const double[:, :, :, ::1] xp, const double[:, ::1] wmat, const double[:, ::1] gmat,
                  int kh, int kw, int stride, bint need_dx, bint need_dw):
    """Return (dxp or None, dwmat or None) for upstream gradient gmat (O, P)."""
    cdef Py_ssize_t N = xp.shape[0], C = xp.shape[1], Hp = xp.shape[2], Wp = xp.shape[3]
    cdef Py_ssize_t Ho = (Hp - kh) // stride + 1
    cdef Py_ssize_t Wo = (Wp - kw) // stride + 1
    cdef Py_ssize_t O = wmat.shape[0], K = wmat.shape[1]
    cdef Py_ssize_t P = N * Ho * Wo
    if gmat.shape[0] != O or gmat.shape[1] != P:
        raise ValueError("gradient matrix does not match the output geometry")
    dx = np.zeros((N, C, Hp, Wp), dtype=np.float64) if need_dx else None
    dw = np.zeros((O, K), dtype=np.float64) if need_dw else None
    cdef double[:, :, :, ::1] dxv
    cdef double[:, ::1] dwv
    if need_dx:
        dxv = dx
    if need_dw:
        dwv = dw
    cdef Py_ssize_t R = _tile_rows(K, Wo)
    buf = np.empty(K * R * Wo, dtype=np.float64)
    cdef double[::1] cols = buf
    cdef Py_ssize_t rows = N * Ho, r0 = 0, nr, t, p0
    cdef int m, n_, k_, lda, ldb, ldc
    cdef double one = 1.0, zero = 0.0
    with nogil:
        while r0 < rows:
            nr = R if rows - r0 > R else rows - r0
            t = nr * Wo
            p0 = r0 * Wo
            if need_dw:
                _expand(xp, &cols[0], r0, nr, kh, kw, stride, Ho, Wo)
                # cm(dw) (K x O) += cm(cols)^T (K x t) . cm(g[:, tile]) (t x O)
                m = <int>K; n_ = <int>O; k_ = <int>t
                lda = <int>t; ldb = <int>P; ldc = <int>K
                dgemm(b"T", b"N", &m, &n_, &k_, &one, &cols[0], &lda,
                      <double*>&gmat[0, p0], &ldb, &one, &dwv[0, 0], &ldc)
            if need_dx:
                # cm(dcols) (t x K) = cm(g[:, tile]) (t x O) . cm(wmat)^T (O x K)
                m = <int>t; n_ = <int>K; k_ = <int>O
                lda = <int>P; ldb = <int>K; ldc = <int>t
                dgemm(b"N", b"T", &m, &n_, &k_, &one, <double*>&gmat[0, p0], &lda,
                      <double*>&wmat[0, 0], &ldb, &zero, &cols[0], &ldc)
                _scatter(dxv, &cols[0], r0, nr, kh, kw, stride, Ho, Wo)
            r0 += nr
    return dx, dw

# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled GRU recurrence kernels.

Same contract and gate layout as ``_kernels_py``; the time loop and the
elementwise gate math run in C, matrix products go to BLAS dgemm.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport tanh
from scipy.linalg.cython_blas cimport dgemm

cnp.import_array()

BACKEND = "cython"


cdef inline double _sig(double x) nogil:
    return 0.5 * (tanh(0.5 * x) + 1.0)


cdef void _gemm(bint ta, bint tb, int m, int n, int k, double alpha,
                double* a, int lda, double* b, int ldb, double beta,
                double* c, int ldc) noexcept nogil:
    # Row-major C[m,n] = alpha * op(A)[m,k] @ op(B)[k,n] + beta * C, via the
    # column-major identity C^T = op(B)^T op(A)^T.
    cdef char ca = b'T' if ta else b'N'
    cdef char cb = b'T' if tb else b'N'
    if m == 0 or n == 0:
        return
    dgemm(&cb, &ca, &n, &m, &k, &alpha, b, &ldb, a, &lda, &beta, c, &ldc)


cdef void _cell_forward(int B, int H, double* g, int ldg, double* h, double* w_hh,
                        double* zr_buf, double* rh_buf, double* n_buf,
                        double* z_out, double* r_out, double* n_out, double* h_out,
                        double* mask) noexcept nogil:
    # g: [B, 3H] input projections (row stride ldg); h: [B, H] previous state.
    cdef int i, j
    cdef int H2 = 2 * H, H3 = 3 * H
    cdef double z, r, n, hp, m
    # zr_buf = h @ U_zr
    _gemm(False, False, B, H2, H, 1.0, h, H, w_hh, H3, 0.0, zr_buf, H2)
    for i in range(B):
        for j in range(H):
            z = _sig(g[i * ldg + j] + zr_buf[i * H2 + j])
            r = _sig(g[i * ldg + H + j] + zr_buf[i * H2 + H + j])
            z_out[i * H + j] = z
            r_out[i * H + j] = r
            rh_buf[i * H + j] = r * h[i * H + j]
    # n_buf = (r*h) @ U_n
    _gemm(False, False, B, H, H, 1.0, rh_buf, H, w_hh + H2, H3, 0.0, n_buf, H)
    for i in range(B):
        m = 1.0 if mask == NULL else mask[i]
        for j in range(H):
            n = tanh(g[i * ldg + H2 + j] + n_buf[i * H + j])
            n_out[i * H + j] = n
            hp = h[i * H + j]
            h_out[i * H + j] = hp + m * (z_out[i * H + j] * (n - hp))


cdef void _cell_backward(int B, int H, double* dh, double* h_prev,
                         double* z, double* r, double* n, double* w_hh,
                         double* dxp, double* dh_prev, double* dw_hh,
                         double* rh_buf, double* tmp) noexcept nogil:
    # dh: gradient wrt the new state (already masked). Writes dxp [B,3H],
    # overwrites dh_prev [B,H] and accumulates into dw_hh [H,3H].
    cdef int i, j
    cdef int H2 = 2 * H, H3 = 3 * H
    cdef double zz, rr, nn, hp, g, dz, dan, dr
    for i in range(B):
        for j in range(H):
            g = dh[i * H + j]
            zz = z[i * H + j]
            nn = n[i * H + j]
            hp = h_prev[i * H + j]
            dz = g * (nn - hp)
            dan = g * zz * (1.0 - nn * nn)
            dxp[i * H3 + j] = dz * zz * (1.0 - zz)
            dxp[i * H3 + H2 + j] = dan
            rh_buf[i * H + j] = r[i * H + j] * hp
    # tmp = dan @ U_n^T  (drh)
    _gemm(False, True, B, H, H, 1.0, dxp + H2, H3, w_hh + H2, H3, 0.0, tmp, H)
    # dw_hh[:, 2H:] += (r*h_prev)^T @ dan
    _gemm(True, False, H, H, B, 1.0, rh_buf, H, dxp + H2, H3, 1.0, dw_hh + H2, H3)
    for i in range(B):
        for j in range(H):
            rr = r[i * H + j]
            dr = tmp[i * H + j] * h_prev[i * H + j]
            dxp[i * H3 + H + j] = dr * rr * (1.0 - rr)
            dh_prev[i * H + j] = dh[i * H + j] * (1.0 - z[i * H + j]) + tmp[i * H + j] * rr
    # dh_prev += dzr @ U_zr^T
    _gemm(False, True, B, H, H2, 1.0, dxp, H3, w_hh, H3, 1.0, dh_prev, H)
    # dw_hh[:, :2H] += h_prev^T @ dzr
    _gemm(True, False, H, H2, B, 1.0, h_prev, H, dxp, H3, 1.0, dw_hh, H3)


def gru_scan_forward(xp_in, h0_in, w_hh_in, mask_in):
    cdef double[:, :, ::1] xp = np.ascontiguousarray(xp_in, dtype=np.float64)
    cdef double[:, ::1] h0 = np.ascontiguousarray(h0_in, dtype=np.float64)
    cdef double[:, ::1] w_hh = np.ascontiguousarray(w_hh_in, dtype=np.float64)
    cdef double[:, ::1] mask = np.ascontiguousarray(mask_in, dtype=np.float64)
    cdef int T = xp.shape[0], B = xp.shape[1], H = xp.shape[2] // 3
    hs_a = np.empty((T, B, H))
    zs_a = np.empty((T, B, H))
    rs_a = np.empty((T, B, H))
    ns_a = np.empty((T, B, H))
    cdef double[:, :, ::1] hs = hs_a
    cdef double[:, :, ::1] zs = zs_a
    cdef double[:, :, ::1] rs = rs_a
    cdef double[:, :, ::1] ns = ns_a
    zr_a = np.empty((B, 2 * H))
    rh_a = np.empty((B, H))
    nb_a = np.empty((B, H))
    cdef double[:, ::1] zr = zr_a
    cdef double[:, ::1] rh = rh_a
    cdef double[:, ::1] nb = nb_a
    cdef int t
    cdef double* hprev
    if T == 0 or B == 0 or H == 0:
        return hs_a, zs_a, rs_a, ns_a
    with nogil:
        for t in range(T):
            hprev = &h0[0, 0] if t == 0 else &hs[t - 1, 0, 0]
            _cell_forward(B, H, &xp[t, 0, 0], 3 * H, hprev, &w_hh[0, 0],
                          &zr[0, 0], &rh[0, 0], &nb[0, 0],
                          &zs[t, 0, 0], &rs[t, 0, 0], &ns[t, 0, 0], &hs[t, 0, 0],
                          &mask[t, 0])
    return hs_a, zs_a, rs_a, ns_a


def gru_scan_backward(dhs_in, h0_in, w_hh_in, mask_in, hs_in, zs_in, rs_in, ns_in):
    cdef double[:, :, ::1] dhs = np.ascontiguousarray(dhs_in, dtype=np.float64)
    cdef double[:, ::1] h0 = np.ascontiguousarray(h0_in, dtype=np.float64)
    cdef double[:, ::1] w_hh = np.ascontiguousarray(w_hh_in, dtype=np.float64)
    cdef double[:, ::1] mask = np.ascontiguousarray(mask_in, dtype=np.float64)
    cdef double[:, :, ::1] hs = np.ascontiguousarray(hs_in, dtype=np.float64)
    cdef double[:, :, ::1] zs = np.ascontiguousarray(zs_in, dtype=np.float64)
    cdef double[:, :, ::1] rs = np.ascontiguousarray(rs_in, dtype=np.float64)
    cdef double[:, :, ::1] ns = np.ascontiguousarray(ns_in, dtype=np.float64)
    cdef int T = hs.shape[0], B = hs.shape[1], H = hs.shape[2]
    dxp_a = np.zeros((T, B, 3 * H))
    dw_a = np.zeros((H, 3 * H))
    carry_a = np.zeros((B, H))
    cdef double[:, :, ::1] dxp = dxp_a
    cdef double[:, ::1] dw = dw_a
    cdef double[:, ::1] carry = carry_a
    cdef double[:, ::1] dh = np.empty((B, H))
    cdef double[:, ::1] dhp = np.empty((B, H))
    cdef double[:, ::1] rh = np.empty((B, H))
    cdef double[:, ::1] tmp = np.empty((B, H))
    cdef int t, i, j
    cdef double m, g
    cdef double* hprev
    if T == 0 or B == 0 or H == 0:
        return dxp_a, carry_a, dw_a
    with nogil:
        for t in range(T - 1, -1, -1):
            hprev = &h0[0, 0] if t == 0 else &hs[t - 1, 0, 0]
            for i in range(B):
                m = mask[t, i]
                for j in range(H):
                    dh[i, j] = m * (dhs[t, i, j] + carry[i, j])
            _cell_backward(B, H, &dh[0, 0], hprev, &zs[t, 0, 0], &rs[t, 0, 0], &ns[t, 0, 0],
                           &w_hh[0, 0], &dxp[t, 0, 0], &dhp[0, 0], &dw[0, 0],
                           &rh[0, 0], &tmp[0, 0])
            for i in range(B):
                m = mask[t, i]
                for j in range(H):
                    g = dhs[t, i, j] + carry[i, j]
                    carry[i, j] = dhp[i, j] + (1.0 - m) * g
    return dxp_a, carry_a, dw_a


def gru_decode_forward(h0_in, w_ih_in, w_hh_in, b_in, w_out_in, b_out_in, int steps):
    cdef double[:, ::1] h0 = np.ascontiguousarray(h0_in, dtype=np.float64)
    cdef double[:, ::1] w_ih = np.ascontiguousarray(w_ih_in, dtype=np.float64)
    cdef double[:, ::1] w_hh = np.ascontiguousarray(w_hh_in, dtype=np.float64)
    cdef double[::1] b = np.ascontiguousarray(b_in, dtype=np.float64)
    cdef double[:, ::1] w_out = np.ascontiguousarray(w_out_in, dtype=np.float64)
    cdef double[::1] b_out = np.ascontiguousarray(b_out_in, dtype=np.float64)
    cdef int B = h0.shape[0], H = h0.shape[1], F = w_out.shape[1]
    cdef int H3 = 3 * H
    logits_a = np.empty((steps, B, F))
    ys_a = np.empty((steps, B, F))
    hs_a = np.empty((steps, B, H))
    zs_a = np.empty((steps, B, H))
    rs_a = np.empty((steps, B, H))
    ns_a = np.empty((steps, B, H))
    cdef double[:, :, ::1] logits = logits_a
    cdef double[:, :, ::1] ys = ys_a
    cdef double[:, :, ::1] hs = hs_a
    cdef double[:, :, ::1] zs = zs_a
    cdef double[:, :, ::1] rs = rs_a
    cdef double[:, :, ::1] ns = ns_a
    cdef double[:, ::1] g = np.empty((B, H3))
    cdef double[:, ::1] zr = np.empty((B, 2 * H))
    cdef double[:, ::1] rh = np.empty((B, H))
    cdef double[:, ::1] nb = np.empty((B, H))
    cdef double[:, ::1] x0 = np.zeros((B, max(F, 1)))
    cdef int t, i, j
    cdef double* hprev
    cdef double* xin
    if steps == 0 or B == 0 or H == 0:
        return logits_a, ys_a, hs_a, zs_a, rs_a, ns_a
    with nogil:
        for t in range(steps):
            hprev = &h0[0, 0] if t == 0 else &hs[t - 1, 0, 0]
            xin = &x0[0, 0] if t == 0 else &ys[t - 1, 0, 0]
            for i in range(B):
                for j in range(H3):
                    g[i, j] = b[j]
            _gemm(False, False, B, H3, F, 1.0, xin, F, &w_ih[0, 0], H3, 1.0, &g[0, 0], H3)
            _cell_forward(B, H, &g[0, 0], H3, hprev, &w_hh[0, 0], &zr[0, 0], &rh[0, 0], &nb[0, 0],
                          &zs[t, 0, 0], &rs[t, 0, 0], &ns[t, 0, 0], &hs[t, 0, 0], NULL)
            for i in range(B):
                for j in range(F):
                    logits[t, i, j] = b_out[j]
            _gemm(False, False, B, F, H, 1.0, &hs[t, 0, 0], H, &w_out[0, 0], F, 1.0, &logits[t, 0, 0], F)
            for i in range(B):
                for j in range(F):
                    ys[t, i, j] = _sig(logits[t, i, j])
    return logits_a, ys_a, hs_a, zs_a, rs_a, ns_a


def gru_decode_backward(dlogits_in, h0_in, w_ih_in, w_hh_in, w_out_in, ys_in, hs_in, zs_in, rs_in, ns_in):
    cdef double[:, :, ::1] dlogits = np.ascontiguousarray(dlogits_in, dtype=np.float64)
    cdef double[:, ::1] h0 = np.ascontiguousarray(h0_in, dtype=np.float64)
    cdef double[:, ::1] w_ih = np.ascontiguousarray(w_ih_in, dtype=np.float64)
    cdef double[:, ::1] w_hh = np.ascontiguousarray(w_hh_in, dtype=np.float64)
    cdef double[:, ::1] w_out = np.ascontiguousarray(w_out_in, dtype=np.float64)
    cdef double[:, :, ::1] ys = np.ascontiguousarray(ys_in, dtype=np.float64)
    cdef double[:, :, ::1] hs = np.ascontiguousarray(hs_in, dtype=np.float64)
    cdef double[:, :, ::1] zs = np.ascontiguousarray(zs_in, dtype=np.float64)
    cdef double[:, :, ::1] rs = np.ascontiguousarray(rs_in, dtype=np.float64)
    cdef double[:, :, ::1] ns = np.ascontiguousarray(ns_in, dtype=np.float64)
    cdef int T = hs.shape[0], B = hs.shape[1], H = hs.shape[2], F = w_out.shape[1]
    cdef int H3 = 3 * H
    dw_ih_a = np.zeros((F, H3))
    dw_hh_a = np.zeros((H, H3))
    db_a = np.zeros(H3)
    dw_out_a = np.zeros((H, F))
    db_out_a = np.zeros(F)
    dh_carry_a = np.zeros((B, H))
    cdef double[:, ::1] dw_ih = dw_ih_a
    cdef double[:, ::1] dw_hh = dw_hh_a
    cdef double[::1] db = db_a
    cdef double[:, ::1] dw_out = dw_out_a
    cdef double[::1] db_out = db_out_a
    cdef double[:, ::1] dh_carry = dh_carry_a
    cdef double[:, ::1] dx_next = np.zeros((B, max(F, 1)))
    cdef double[:, ::1] da = np.empty((B, max(F, 1)))
    cdef double[:, ::1] dh = np.empty((B, H))
    cdef double[:, ::1] dhp = np.empty((B, H))
    cdef double[:, ::1] dxp = np.empty((B, H3))
    cdef double[:, ::1] rh = np.empty((B, H))
    cdef double[:, ::1] tmp = np.empty((B, H))
    cdef int t, i, j
    cdef double y
    cdef double* hprev
    if T == 0 or B == 0 or H == 0:
        return dh_carry_a, dw_ih_a, dw_hh_a, db_a, dw_out_a, db_out_a
    with nogil:
        for t in range(T - 1, -1, -1):
            for i in range(B):
                for j in range(F):
                    y = ys[t, i, j]
                    da[i, j] = dlogits[t, i, j] + dx_next[i, j] * y * (1.0 - y)
                    db_out[j] += da[i, j]
            # dw_out += h^T da ; dh = da @ w_out^T + carry
            _gemm(True, False, H, F, B, 1.0, &hs[t, 0, 0], H, &da[0, 0], F, 1.0, &dw_out[0, 0], F)
            for i in range(B):
                for j in range(H):
                    dh[i, j] = dh_carry[i, j]
            _gemm(False, True, B, H, F, 1.0, &da[0, 0], F, &w_out[0, 0], F, 1.0, &dh[0, 0], H)
            hprev = &h0[0, 0] if t == 0 else &hs[t - 1, 0, 0]
            _cell_backward(B, H, &dh[0, 0], hprev, &zs[t, 0, 0], &rs[t, 0, 0], &ns[t, 0, 0],
                           &w_hh[0, 0], &dxp[0, 0], &dhp[0, 0], &dw_hh[0, 0],
                           &rh[0, 0], &tmp[0, 0])
            for i in range(B):
                for j in range(H3):
                    db[j] += dxp[i, j]
            if t > 0:
                _gemm(True, False, F, H3, B, 1.0, &ys[t - 1, 0, 0], F, &dxp[0, 0], H3, 1.0, &dw_ih[0, 0], H3)
            _gemm(False, True, B, F, H3, 1.0, &dxp[0, 0], H3, &w_ih[0, 0], H3, 0.0, &dx_next[0, 0], F)
            for i in range(B):
                for j in range(H):
                    dh_carry[i, j] = dhp[i, j]
    return dh_carry_a, dw_ih_a, dw_hh_a, db_a, dw_out_a, db_out_a

# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled hot kernels: tile rasterization and MLS-MPM particle transfers.

Semantics mirror desplat._pykern; per-pixel and per-particle accumulation
orders are identical so both backends agree to floating-point roundoff.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport exp, fabs, floor, log, log1p, sqrt
from libc.stdlib cimport free, malloc

name = "compiled"


# ---------------------------------------------------------------------------
# 3x3 helpers (row-major double[9])

cdef inline double _det3(const double* a) noexcept nogil:
    return (a[0] * (a[4] * a[8] - a[5] * a[7])
            - a[1] * (a[3] * a[8] - a[5] * a[6])
            + a[2] * (a[3] * a[7] - a[4] * a[6]))


cdef inline void _cofactor3(const double* a, double* c) noexcept nogil:
    c[0] = a[4] * a[8] - a[5] * a[7]
    c[1] = a[5] * a[6] - a[3] * a[8]
    c[2] = a[3] * a[7] - a[4] * a[6]
    c[3] = a[2] * a[7] - a[1] * a[8]
    c[4] = a[0] * a[8] - a[2] * a[6]
    c[5] = a[1] * a[6] - a[0] * a[7]
    c[6] = a[1] * a[5] - a[2] * a[4]
    c[7] = a[2] * a[3] - a[0] * a[5]
    c[8] = a[0] * a[4] - a[1] * a[3]


cdef inline void _matmul3(const double* a, const double* b, double* out) noexcept nogil:
    cdef int i, j, k
    for i in range(3):
        for j in range(3):
            out[3 * i + j] = 0.0
            for k in range(3):
                out[3 * i + j] += a[3 * i + k] * b[3 * k + j]


cdef inline void _matmul3_t(const double* a, const double* b, double* out) noexcept nogil:
    # out = a @ b^T
    cdef int i, j, k
    for i in range(3):
        for j in range(3):
            out[3 * i + j] = 0.0
            for k in range(3):
                out[3 * i + j] += a[3 * i + k] * b[3 * j + k]


cdef void _svd3(const double* f, double* u, double* sig, double* v) noexcept nogil:
    """F = U diag(sig) V^T with U, V proper rotations; sig[0] >= sig[1] >= |sig[2]|."""
    cdef double a[9]
    cdef int i, j, p, q, sweep, kk
    cdef double app, aqq, apq, tau, t, c, s, off, akp, akq, nrm
    # a = F^T F
    for i in range(3):
        for j in range(3):
            a[3 * i + j] = f[i] * f[j] + f[3 + i] * f[3 + j] + f[6 + i] * f[6 + j]
    for i in range(9):
        v[i] = 0.0
    v[0] = v[4] = v[8] = 1.0
    for sweep in range(12):
        off = fabs(a[1]) + fabs(a[2]) + fabs(a[5])
        if off < 1e-30 * (fabs(a[0]) + fabs(a[4]) + fabs(a[8]) + 1e-300):
            break
        for p in range(2):
            for q in range(p + 1, 3):
                apq = a[3 * p + q]
                if fabs(apq) < 1e-300:
                    continue
                app = a[3 * p + p]
                aqq = a[3 * q + q]
                tau = (aqq - app) / (2.0 * apq)
                if tau >= 0.0:
                    t = 1.0 / (tau + sqrt(1.0 + tau * tau))
                else:
                    t = -1.0 / (-tau + sqrt(1.0 + tau * tau))
                c = 1.0 / sqrt(1.0 + t * t)
                s = t * c
                a[3 * p + p] = app - t * apq
                a[3 * q + q] = aqq + t * apq
                a[3 * p + q] = 0.0
                a[3 * q + p] = 0.0
                for kk in range(3):
                    if kk != p and kk != q:
                        akp = a[3 * kk + p]
                        akq = a[3 * kk + q]
                        a[3 * kk + p] = c * akp - s * akq
                        a[3 * p + kk] = a[3 * kk + p]
                        a[3 * kk + q] = s * akp + c * akq
                        a[3 * q + kk] = a[3 * kk + q]
                for kk in range(3):
                    akp = v[3 * kk + p]
                    akq = v[3 * kk + q]
                    v[3 * kk + p] = c * akp - s * akq
                    v[3 * kk + q] = s * akp + c * akq
    # sort eigenvalues descending (selection sort on 3 entries)
    cdef double lam[3]
    lam[0] = a[0]
    lam[1] = a[4]
    lam[2] = a[8]
    cdef int order[3]
    order[0] = 0
    order[1] = 1
    order[2] = 2
    cdef int m, o_tmp
    for i in range(2):
        m = i
        for j in range(i + 1, 3):
            if lam[order[j]] > lam[order[m]]:
                m = j
        o_tmp = order[i]
        order[i] = order[m]
        order[m] = o_tmp
    cdef double vs[9]
    for j in range(3):
        for i in range(3):
            vs[3 * i + j] = v[3 * i + order[j]]
        sig[j] = sqrt(lam[order[j]]) if lam[order[j]] > 0.0 else 0.0
    for i in range(9):
        v[i] = vs[i]
    if _det3(v) < 0.0:
        v[2] = -v[2]
        v[5] = -v[5]
        v[8] = -v[8]
    # u_j = F v_j / sig_j for the two largest columns
    for j in range(3):
        for i in range(3):
            u[3 * i + j] = f[3 * i] * v[j] + f[3 * i + 1] * v[3 + j] + f[3 * i + 2] * v[6 + j]
    if sig[0] > 1e-12:
        for i in range(3):
            u[3 * i] /= sig[0]
    else:
        u[0] = 1.0
        u[3] = 0.0
        u[6] = 0.0
    if sig[1] > 1e-12:
        for i in range(3):
            u[3 * i + 1] /= sig[1]
    else:
        # any unit vector orthogonal to column 0
        if fabs(u[0]) < 0.9:
            u[1] = 0.0
            u[4] = u[6]
            u[7] = -u[3]
        else:
            u[1] = -u[6]
            u[4] = 0.0
            u[7] = u[0]
        nrm = sqrt(u[1] * u[1] + u[4] * u[4] + u[7] * u[7])
        if nrm < 1e-300:
            u[1] = 0.0
            u[4] = 1.0
            u[7] = 0.0
        else:
            u[1] /= nrm
            u[4] /= nrm
            u[7] /= nrm
    # column 2 = col0 x col1 keeps U proper; recover sig[2]'s sign from F v2 . u2
    u[2] = u[3] * u[7] - u[6] * u[4]
    u[5] = u[6] * u[1] - u[0] * u[7]
    u[8] = u[0] * u[4] - u[3] * u[1]
    if (u[2] * (f[0] * v[2] + f[1] * v[5] + f[2] * v[8])
            + u[5] * (f[3] * v[2] + f[4] * v[5] + f[5] * v[8])
            + u[8] * (f[6] * v[2] + f[7] * v[5] + f[8] * v[8])) < 0.0:
        sig[2] = -sig[2]


cdef inline void _pk1_fixed_corotated(const double* f, double mu, double lam, double* p) noexcept nogil:
    cdef double u[9]
    cdef double v[9]
    cdef double sig[3]
    cdef double r[9]
    cdef double cof[9]
    cdef double J
    cdef int i
    _svd3(f, u, sig, v)
    _matmul3_t(u, v, r)
    J = _det3(f)
    _cofactor3(f, cof)
    # J * F^-T equals the cofactor matrix, so no division is needed.
    for i in range(3):
        p[3 * i + 0] = 2.0 * mu * (f[3 * i + 0] - r[3 * i + 0]) + lam * (J - 1.0) * cof[3 * i + 0]
        p[3 * i + 1] = 2.0 * mu * (f[3 * i + 1] - r[3 * i + 1]) + lam * (J - 1.0) * cof[3 * i + 1]
        p[3 * i + 2] = 2.0 * mu * (f[3 * i + 2] - r[3 * i + 2]) + lam * (J - 1.0) * cof[3 * i + 2]


cdef inline void _pk1_hencky(const double* f, double mu, double lam, double* p) noexcept nogil:
    cdef double u[9]
    cdef double v[9]
    cdef double sig[3]
    cdef double eps[3]
    cdef double coef[3]
    cdef double tr
    cdef int i, j
    _svd3(f, u, sig, v)
    for i in range(3):
        if sig[i] < 1e-12:
            sig[i] = 1e-12
        eps[i] = log(sig[i])
    tr = eps[0] + eps[1] + eps[2]
    for i in range(3):
        coef[i] = (2.0 * mu * eps[i] + lam * tr) / sig[i]
    for i in range(3):
        for j in range(3):
            p[3 * i + j] = (u[3 * i + 0] * coef[0] * v[3 * j + 0]
                            + u[3 * i + 1] * coef[1] * v[3 * j + 1]
                            + u[3 * i + 2] * coef[2] * v[3 * j + 2])


cdef inline void _dp_project(double* f, double fric_alpha, double mu, double lam) noexcept nogil:
    cdef double u[9]
    cdef double v[9]
    cdef double sig[3]
    cdef double eps[3]
    cdef double dev[3]
    cdef double tr, dev_norm, dg, scale
    cdef int i, j
    _svd3(f, u, sig, v)
    for i in range(3):
        if sig[i] < 1e-12:
            sig[i] = 1e-12
        eps[i] = log(sig[i])
    tr = eps[0] + eps[1] + eps[2]
    for i in range(3):
        dev[i] = eps[i] - tr / 3.0
    dev_norm = sqrt(dev[0] * dev[0] + dev[1] * dev[1] + dev[2] * dev[2])
    if tr > 0.0 or dev_norm < 1e-15:
        eps[0] = eps[1] = eps[2] = 0.0
    else:
        dg = dev_norm + fric_alpha * tr * (3.0 * lam + 2.0 * mu) / (2.0 * mu)
        if dg <= 0.0:
            return
        scale = dg / dev_norm
        for i in range(3):
            eps[i] -= scale * dev[i]
    for i in range(3):
        sig[i] = exp(eps[i])
    for i in range(3):
        for j in range(3):
            f[3 * i + j] = (u[3 * i + 0] * sig[0] * v[3 * j + 0]
                            + u[3 * i + 1] * sig[1] * v[3 * j + 1]
                            + u[3 * i + 2] * sig[2] * v[3 * j + 2])


# ---------------------------------------------------------------------------
# rasterizer

def blend_forward(long long[::1] tile_starts, long long[::1] tile_kidx,
                  double[:, ::1] mean2d, double[:, ::1] conic, double[::1] opacity,
                  double[:, ::1] quant, int width, int height, int tile,
                  double early_exit):
    cdef int nch = quant.shape[1]
    out_arr = np.zeros((height, width, nch))
    alpha_arr = np.zeros((height, width))
    cdef double[:, :, ::1] out = out_arr
    cdef double[:, ::1] alpha_img = alpha_arr
    cdef int tiles_x = (width + tile - 1) // tile
    cdef Py_ssize_t tid, s, e, idx
    cdef long long kid
    cdef int tx, ty, x0, y0, px, py, ch
    cdef double cx, cy, dx, dy, power, a, t, w
    for tid in range(tile_starts.shape[0] - 1):
        s = tile_starts[tid]
        e = tile_starts[tid + 1]
        if s == e:
            continue
        ty = <int>(tid // tiles_x)
        tx = <int>(tid % tiles_x)
        x0 = tx * tile
        y0 = ty * tile
        for py in range(y0, min(y0 + tile, height)):
            cy = py + 0.5
            for px in range(x0, min(x0 + tile, width)):
                cx = px + 0.5
                t = 1.0
                for idx in range(s, e):
                    kid = tile_kidx[idx]
                    dx = cx - mean2d[kid, 0]
                    dy = cy - mean2d[kid, 1]
                    power = (-0.5 * (conic[kid, 0] * dx * dx + conic[kid, 2] * dy * dy)
                             - conic[kid, 1] * dx * dy)
                    if power > 0.0:
                        power = 0.0
                    a = opacity[kid] * exp(power)
                    w = a * t
                    for ch in range(nch):
                        out[py, px, ch] += w * quant[kid, ch]
                    t *= 1.0 - a
                    if early_exit > 0.0 and t < early_exit:
                        break
                alpha_img[py, px] = 1.0 - t
    return out_arr, alpha_arr


def blend_unce_grad(long long[::1] tile_starts, long long[::1] tile_kidx,
                    double[:, ::1] mean2d, double[:, ::1] conic, double[::1] opacity,
                    double[:, ::1] negw, int width, int height, int tile,
                    double early_exit, double clamp=1.0 - 1e-7):
    grad_arr = np.zeros(mean2d.shape[0])
    cdef double[::1] grad = grad_arr
    cdef double loss = 0.0
    cdef int tiles_x = (width + tile - 1) // tile
    cdef Py_ssize_t tid, s, e, idx, m, i
    cdef long long kid
    cdef int tx, ty, x0, y0, px, py
    cdef double cx, cy, dx, dy, power, a, t, acc, coeff, suf, nw
    cdef Py_ssize_t cap = 256
    cdef double* al = <double*>malloc(cap * 3 * sizeof(double))
    cdef double* gw
    cdef double* pre
    cdef long long* klist = <long long*>malloc(cap * sizeof(long long))
    if al == NULL or klist == NULL:
        free(al)
        free(klist)
        raise MemoryError()
    try:
        for tid in range(tile_starts.shape[0] - 1):
            s = tile_starts[tid]
            e = tile_starts[tid + 1]
            if s == e:
                continue
            if e - s > cap:
                cap = e - s
                free(al)
                free(klist)
                al = <double*>malloc(cap * 3 * sizeof(double))
                klist = <long long*>malloc(cap * sizeof(long long))
                if al == NULL or klist == NULL:
                    raise MemoryError()
            gw = al + cap
            pre = al + 2 * cap
            ty = <int>(tid // tiles_x)
            tx = <int>(tid % tiles_x)
            x0 = tx * tile
            y0 = ty * tile
            for py in range(y0, min(y0 + tile, height)):
                cy = py + 0.5
                for px in range(x0, min(x0 + tile, width)):
                    nw = negw[py, px]
                    cx = px + 0.5
                    t = 1.0
                    m = 0
                    for idx in range(s, e):
                        kid = tile_kidx[idx]
                        dx = cx - mean2d[kid, 0]
                        dy = cy - mean2d[kid, 1]
                        power = (-0.5 * (conic[kid, 0] * dx * dx + conic[kid, 2] * dy * dy)
                                 - conic[kid, 1] * dx * dy)
                        if power > 0.0:
                            power = 0.0
                        gw[m] = exp(power)
                        a = opacity[kid] * gw[m]
                        al[m] = a
                        pre[m] = t
                        klist[m] = kid
                        m += 1
                        t *= 1.0 - a
                        if early_exit > 0.0 and t < early_exit:
                            break
                    acc = 1.0 - t
                    if acc > clamp:
                        loss += nw * -log1p(-clamp)
                        continue  # clamped region: constant loss, zero gradient
                    loss += nw * -log1p(-acc)
                    if nw == 0.0:
                        continue
                    coeff = nw / (1.0 - acc)
                    suf = 1.0
                    for i in range(m - 1, -1, -1):
                        grad[klist[i]] += coeff * gw[i] * pre[i] * suf
                        suf *= 1.0 - al[i]
    finally:
        free(al)
        free(klist)
    return grad_arr, loss


# ---------------------------------------------------------------------------
# MLS-MPM transfers

def mpm_qaff(double[:, ::1] F, double[:, ::1] C, double[::1] mass, double[::1] volume,
             int[::1] model, double[::1] mu, double[::1] lam, double[::1] fric_alpha,
             double dt, double coeff):
    cdef Py_ssize_t n = F.shape[0], p, i, j, k
    q_arr = np.empty((n, 9))
    cdef double[:, ::1] q = q_arr
    cdef double pk[9]
    cdef double pft
    cdef double fac
    for p in range(n):
        if model[p] == 0:
            _pk1_fixed_corotated(&F[p, 0], mu[p], lam[p], pk)
        else:
            _pk1_hencky(&F[p, 0], mu[p], lam[p], pk)
        fac = coeff * dt * volume[p]
        for i in range(3):
            for j in range(3):
                pft = 0.0
                for k in range(3):
                    pft += pk[3 * i + k] * F[p, 3 * j + k]
                q[p, 3 * i + j] = mass[p] * C[p, 3 * i + j] - fac * pft
    return q_arr


def mpm_p2g_scatter(double[:, ::1] x, double[:, ::1] v, double[::1] mass,
                    double[:, ::1] Q, double[:, ::1] grid,
                    double[::1] origin, double h, long long[::1] dims):
    cdef Py_ssize_t n = x.shape[0], p
    cdef long long ny = dims[1], nz = dims[2]
    cdef long long base0, base1, base2, nid
    cdef int i, j, k, ax, clamped_n = 0
    cdef double xg[3]
    cdef double fx[3]
    cdef double w[9]
    cdef double mom[3]
    cdef double hi, wij, d0, d1, d2, m, q0, q1, q2
    cdef bint clipped
    for p in range(n):
        clipped = False
        for ax in range(3):
            xg[ax] = (x[p, ax] - origin[ax]) / h
            hi = dims[ax] - 2.5
            if xg[ax] < 1.5:
                xg[ax] = 1.5
                clipped = True
            elif xg[ax] > hi:
                xg[ax] = hi
                clipped = True
        if clipped:
            clamped_n += 1
            for ax in range(3):
                x[p, ax] = origin[ax] + xg[ax] * h
        base0 = <long long>floor(xg[0] - 0.5)
        base1 = <long long>floor(xg[1] - 0.5)
        base2 = <long long>floor(xg[2] - 0.5)
        fx[0] = xg[0] - base0
        fx[1] = xg[1] - base1
        fx[2] = xg[2] - base2
        for ax in range(3):
            w[3 * ax + 0] = 0.5 * (1.5 - fx[ax]) * (1.5 - fx[ax])
            w[3 * ax + 1] = 0.75 - (fx[ax] - 1.0) * (fx[ax] - 1.0)
            w[3 * ax + 2] = 0.5 * (fx[ax] - 0.5) * (fx[ax] - 0.5)
        m = mass[p]
        mom[0] = m * v[p, 0]
        mom[1] = m * v[p, 1]
        mom[2] = m * v[p, 2]
        for i in range(3):
            d0 = (i - fx[0]) * h
            for j in range(3):
                d1 = (j - fx[1]) * h
                for k in range(3):
                    d2 = (k - fx[2]) * h
                    wij = w[i] * w[3 + j] * w[6 + k]
                    nid = ((base0 + i) * ny + base1 + j) * nz + base2 + k
                    q0 = Q[p, 0] * d0 + Q[p, 1] * d1 + Q[p, 2] * d2
                    q1 = Q[p, 3] * d0 + Q[p, 4] * d1 + Q[p, 5] * d2
                    q2 = Q[p, 6] * d0 + Q[p, 7] * d1 + Q[p, 8] * d2
                    grid[nid, 0] += wij * m
                    grid[nid, 1] += wij * (mom[0] + q0)
                    grid[nid, 2] += wij * (mom[1] + q1)
                    grid[nid, 3] += wij * (mom[2] + q2)
    return clamped_n


def mpm_g2p_gather(double[:, ::1] x, double[:, ::1] gridv,
                   double[::1] origin, double h, long long[::1] dims, double coeff):
    cdef Py_ssize_t n = x.shape[0], p
    v_arr = np.zeros((n, 3))
    b_arr = np.zeros((n, 9))
    cdef double[:, ::1] vout = v_arr
    cdef double[:, ::1] bout = b_arr
    cdef long long ny = dims[1], nz = dims[2]
    cdef long long base0, base1, base2, nid
    cdef int i, j, k, ax
    cdef double xg[3]
    cdef double fx[3]
    cdef double w[9]
    cdef double hi, wij, d0, d1, d2, vx, vy, vz
    for p in range(n):
        for ax in range(3):
            xg[ax] = (x[p, ax] - origin[ax]) / h
            hi = dims[ax] - 2.5
            if xg[ax] < 1.5:
                xg[ax] = 1.5
            elif xg[ax] > hi:
                xg[ax] = hi
        base0 = <long long>floor(xg[0] - 0.5)
        base1 = <long long>floor(xg[1] - 0.5)
        base2 = <long long>floor(xg[2] - 0.5)
        fx[0] = xg[0] - base0
        fx[1] = xg[1] - base1
        fx[2] = xg[2] - base2
        for ax in range(3):
            w[3 * ax + 0] = 0.5 * (1.5 - fx[ax]) * (1.5 - fx[ax])
            w[3 * ax + 1] = 0.75 - (fx[ax] - 1.0) * (fx[ax] - 1.0)
            w[3 * ax + 2] = 0.5 * (fx[ax] - 0.5) * (fx[ax] - 0.5)
        for i in range(3):
            d0 = (i - fx[0]) * h
            for j in range(3):
                d1 = (j - fx[1]) * h
                for k in range(3):
                    d2 = (k - fx[2]) * h
                    wij = w[i] * w[3 + j] * w[6 + k]
                    nid = ((base0 + i) * ny + base1 + j) * nz + base2 + k
                    vx = gridv[nid, 0]
                    vy = gridv[nid, 1]
                    vz = gridv[nid, 2]
                    vout[p, 0] += wij * vx
                    vout[p, 1] += wij * vy
                    vout[p, 2] += wij * vz
                    bout[p, 0] += wij * vx * d0
                    bout[p, 1] += wij * vx * d1
                    bout[p, 2] += wij * vx * d2
                    bout[p, 3] += wij * vy * d0
                    bout[p, 4] += wij * vy * d1
                    bout[p, 5] += wij * vy * d2
                    bout[p, 6] += wij * vz * d0
                    bout[p, 7] += wij * vz * d1
                    bout[p, 8] += wij * vz * d2
        for i in range(9):
            bout[p, i] *= coeff
    return v_arr, b_arr


def mpm_fupdate(double[:, ::1] F, double[:, ::1] C, double dt, int[::1] model,
                double[::1] mu, double[::1] lam, double[::1] fric_alpha):
    cdef Py_ssize_t n = F.shape[0], p
    out_arr = np.empty((n, 9))
    cdef double[:, ::1] out = out_arr
    cdef double g[9]
    cdef double fn[9]
    cdef int i, j, k
    for p in range(n):
        for i in range(3):
            for j in range(3):
                g[3 * i + j] = dt * C[p, 3 * i + j] + (1.0 if i == j else 0.0)
        for i in range(3):
            for j in range(3):
                fn[3 * i + j] = (g[3 * i + 0] * F[p, 0 + j]
                                 + g[3 * i + 1] * F[p, 3 + j]
                                 + g[3 * i + 2] * F[p, 6 + j])
        if model[p] == 1:
            _dp_project(fn, fric_alpha[p], mu[p], lam[p])
        for i in range(9):
            out[p, i] = fn[i]
    return out_arr

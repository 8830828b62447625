"""Pure-NumPy implementations of the hot kernels.

Import-time fallback for environments without the compiled extension; also
the reference the compiled backend is tested against.  Function signatures
and semantics match desplat._ckern exactly (summation order per pixel /
particle is the same; only associativity inside BLAS calls may differ).
"""

import numpy as np

name = "python"

_OFFSETS = [(i, j, k) for i in range(3) for j in range(3) for k in range(3)]


# ---------------------------------------------------------------------------
# rasterizer

def _tile_alpha(ids, mean2d, conic, opacity, xs, ys):
    dx = xs[:, None] - mean2d[ids, 0][None, :]
    dy = ys[:, None] - mean2d[ids, 1][None, :]
    a, b, c = conic[ids, 0], conic[ids, 1], conic[ids, 2]
    power = -0.5 * (a * dx * dx + c * dy * dy) - b * dx * dy
    w = np.exp(np.minimum(power, 0.0))
    return opacity[ids] * w, w


def _pixel_grid(tid, tiles_x, tile, width, height):
    ty, tx = divmod(tid, tiles_x)
    x0, y0 = tx * tile, ty * tile
    w = min(tile, width - x0)
    h = min(tile, height - y0)
    px = x0 + np.arange(w) + 0.5
    py = y0 + np.arange(h) + 0.5
    xs = np.repeat(px[None, :], h, axis=0).ravel()
    ys = np.repeat(py[:, None], w, axis=1).ravel()
    return x0, y0, w, h, xs, ys


def blend_forward(tile_starts, tile_kidx, mean2d, conic, opacity, quant,
                  width, height, tile, early_exit):
    nch = quant.shape[1]
    out = np.zeros((height, width, nch))
    alpha_img = np.zeros((height, width))
    tiles_x = (width + tile - 1) // tile
    for tid in range(len(tile_starts) - 1):
        s, e = tile_starts[tid], tile_starts[tid + 1]
        if s == e:
            continue
        ids = tile_kidx[s:e]
        x0, y0, w, h, xs, ys = _pixel_grid(tid, tiles_x, tile, width, height)
        alpha, _ = _tile_alpha(ids, mean2d, conic, opacity, xs, ys)
        t_excl = np.cumprod(1.0 - alpha, axis=1)
        t_excl = np.concatenate([np.ones((alpha.shape[0], 1)), t_excl[:, :-1]], axis=1)
        include = t_excl >= early_exit if early_exit > 0.0 else np.ones_like(alpha, bool)
        wgt = alpha * t_excl * include
        out[y0:y0 + h, x0:x0 + w] = (wgt @ quant[ids]).reshape(h, w, nch)
        alpha_img[y0:y0 + h, x0:x0 + w] = (1.0 - np.prod(1.0 - alpha * include, axis=1)).reshape(h, w)
    return out, alpha_img


def blend_unce_grad(tile_starts, tile_kidx, mean2d, conic, opacity, negw,
                    width, height, tile, early_exit, clamp=1.0 - 1e-7):
    grad = np.zeros(mean2d.shape[0])
    loss = 0.0
    tiles_x = (width + tile - 1) // tile
    for tid in range(len(tile_starts) - 1):
        s, e = tile_starts[tid], tile_starts[tid + 1]
        if s == e:
            continue
        ids = tile_kidx[s:e]
        x0, y0, w, h, xs, ys = _pixel_grid(tid, tiles_x, tile, width, height)
        nw = negw[y0:y0 + h, x0:x0 + w].ravel()
        alpha, gw = _tile_alpha(ids, mean2d, conic, opacity, xs, ys)
        t_excl = np.cumprod(1.0 - alpha, axis=1)
        t_excl = np.concatenate([np.ones((alpha.shape[0], 1)), t_excl[:, :-1]], axis=1)
        include = t_excl >= early_exit if early_exit > 0.0 else np.ones_like(alpha, bool)
        om = 1.0 - alpha * include
        pre = np.cumprod(om, axis=1)
        acc = 1.0 - pre[:, -1]
        pre = np.concatenate([np.ones((om.shape[0], 1)), pre[:, :-1]], axis=1)
        rev = np.cumprod(om[:, ::-1], axis=1)[:, ::-1]
        suf = np.concatenate([rev[:, 1:], np.ones((om.shape[0], 1))], axis=1)
        clamped = acc > clamp
        loss += float(np.sum(nw * -np.log1p(-np.minimum(acc, clamp))))
        coeff = np.where(clamped, 0.0, nw / (1.0 - acc))
        contrib = coeff[:, None] * gw * pre * suf * include
        np.add.at(grad, ids, contrib.sum(axis=0))
    return grad, loss


# ---------------------------------------------------------------------------
# constitutive models (batched)

def _polar_rotations(F):
    U, _, Vh = np.linalg.svd(F)
    return U @ Vh


def fixed_corotated_pk1(F, mu, lam):
    R = _polar_rotations(F)
    J = np.linalg.det(F)
    FinvT = np.swapaxes(np.linalg.inv(F), -1, -2)
    return (2.0 * np.asarray(mu)[..., None, None] * (F - R)
            + (np.asarray(lam) * (J - 1.0) * J)[..., None, None] * FinvT)


def hencky_pk1(F, mu, lam):
    U, S, Vh = np.linalg.svd(F)
    eps = np.log(S)
    coef = (2.0 * np.asarray(mu)[..., None] * eps
            + np.asarray(lam)[..., None] * eps.sum(axis=-1, keepdims=True)) / S
    return (U * coef[..., None, :]) @ Vh


def drucker_prager_project(F, fric_alpha, mu, lam):
    """Project deformation gradients onto the cohesionless sand yield cone."""
    U, S, Vh = np.linalg.svd(F)
    eps = np.log(S)
    tr = eps.sum(axis=-1)
    dev = eps - tr[..., None] / 3.0
    dev_norm = np.linalg.norm(dev, axis=-1)
    mu = np.asarray(mu, dtype=np.float64)
    lam = np.asarray(lam, dtype=np.float64)
    dg = dev_norm + np.asarray(fric_alpha) * tr * (3.0 * lam + 2.0 * mu) / (2.0 * mu)
    tip = (tr > 0.0) | (dev_norm < 1e-15)  # expansion: collapse to the cone tip
    plastic = ~tip & (dg > 0.0)
    eps_new = eps.copy()
    eps_new[tip] = 0.0
    if np.any(plastic):
        scale = dg[plastic] / dev_norm[plastic]
        eps_new[plastic] = eps[plastic] - scale[:, None] * dev[plastic]
    S_new = np.exp(eps_new)
    return (U * S_new[..., None, :]) @ Vh


def mpm_qaff(F, C, mass, volume, model, mu, lam, fric_alpha, dt, coeff):
    """Fused affine+stress matrix: Q = mass*C - coeff*dt*volume * P(F) F^T."""
    n = F.shape[0]
    F3 = F.reshape(n, 3, 3)
    P = np.empty_like(F3)
    fc = model == 0
    if np.any(fc):
        P[fc] = fixed_corotated_pk1(F3[fc], mu[fc], lam[fc])
    if np.any(~fc):
        P[~fc] = hencky_pk1(F3[~fc], mu[~fc], lam[~fc])
    Q = (mass[:, None, None] * C.reshape(n, 3, 3)
         - (coeff * dt * volume)[:, None, None] * (P @ np.swapaxes(F3, 1, 2)))
    return Q.reshape(n, 9)


# ---------------------------------------------------------------------------
# grid transfers (quadratic B-splines)

def _spline_setup(x, origin, h, dims):
    xg = (x - origin) / h
    lo = 1.5
    hi = np.asarray(dims, dtype=np.float64) - 2.5
    clamped = int(np.count_nonzero(np.any((xg < lo) | (xg > hi), axis=1)))
    np.clip(xg, lo, hi, out=xg)
    base = np.floor(xg - 0.5).astype(np.int64)
    fx = xg - base
    w = np.empty((x.shape[0], 3, 3))
    w[:, 0] = 0.5 * (1.5 - fx) ** 2
    w[:, 1] = 0.75 - (fx - 1.0) ** 2
    w[:, 2] = 0.5 * (fx - 0.5) ** 2
    return xg, base, fx, w, clamped


def mpm_p2g_scatter(x, v, mass, Q, grid, origin, h, dims):
    """Scatter mass and APIC momentum onto the grid; clamps stray particles.

    Accumulation order is fixed (offset-major over the 27-node stencil,
    particle-major inside) so results are reproducible.
    """
    xg, base, fx, w, clamped = _spline_setup(x, origin, h, dims)
    x[:] = origin + xg * h
    ny, nz = dims[1], dims[2]
    mom = mass[:, None] * v
    Q3 = Q.reshape(-1, 3, 3)
    for i, j, k in _OFFSETS:
        wij = w[:, i, 0] * w[:, j, 1] * w[:, k, 2]
        dpos = (np.array([i, j, k], dtype=np.float64) - fx) * h
        nid = ((base[:, 0] + i) * ny + base[:, 1] + j) * nz + base[:, 2] + k
        contrib = np.empty((x.shape[0], 4))
        contrib[:, 0] = wij * mass
        contrib[:, 1:] = wij[:, None] * (mom + np.einsum("nab,nb->na", Q3, dpos))
        np.add.at(grid, nid, contrib)
    return clamped


def mpm_g2p_gather(x, gridv, origin, h, dims, coeff):
    """Gather velocities and the affine velocity gradient C from the grid."""
    xg, base, fx, w, _ = _spline_setup(x, origin, h, dims)
    ny, nz = dims[1], dims[2]
    n = x.shape[0]
    v = np.zeros((n, 3))
    B = np.zeros((n, 3, 3))
    for i, j, k in _OFFSETS:
        wij = w[:, i, 0] * w[:, j, 1] * w[:, k, 2]
        dpos = (np.array([i, j, k], dtype=np.float64) - fx) * h
        nid = ((base[:, 0] + i) * ny + base[:, 1] + j) * nz + base[:, 2] + k
        vn = gridv[nid]
        v += wij[:, None] * vn
        B += wij[:, None, None] * (vn[:, :, None] * dpos[:, None, :])
    return v, (coeff * B).reshape(n, 9)


def mpm_fupdate(F, C, dt, model, mu, lam, fric_alpha):
    """F <- (I + dt C) F, then the material's plastic return map."""
    n = F.shape[0]
    F3 = F.reshape(n, 3, 3)
    C3 = C.reshape(n, 3, 3)
    Fn = (np.eye(3) + dt * C3) @ F3
    dp = model == 1
    if np.any(dp):
        Fn[dp] = drucker_prager_project(Fn[dp], fric_alpha[dp], mu[dp], lam[dp])
    return Fn.reshape(n, 9)

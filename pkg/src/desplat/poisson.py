"""Joint Poisson indicator fields.

Per-shape screened-Poisson indicator solve on a uniform grid, cross-field
conflict resolution (scene priority, curvature-gated), and dense interior
point extraction.  Interiors are X > 0.5, exteriors X < 0.5.
"""

from dataclasses import dataclass

import numpy as np
from scipy.fft import dctn, idctn
from scipy.ndimage import binary_dilation, map_coordinates
from scipy.sparse.linalg import LinearOperator, cg
from scipy.spatial import cKDTree

from . import fileio
from .errors import NumericalError

DEFAULT_DIMS = 128
DEFAULT_SCREEN_WEIGHT = 4.0
MIN_POINTS = 50


@dataclass
class OrientedPointSet:
    """Positions with unit outward normals; optional area weights and colors."""

    positions: np.ndarray
    normals: np.ndarray
    weights: np.ndarray = None
    colors: np.ndarray = None

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=np.float64).reshape(-1, 3)
        self.normals = np.asarray(self.normals, dtype=np.float64).reshape(-1, 3)
        if len(self.positions) != len(self.normals):
            raise ValueError("positions and normals must have equal length")
        if len(self.normals):
            err = np.abs(np.linalg.norm(self.normals, axis=1) - 1.0)
            if err.max() > 1e-6:
                raise ValueError("normals must be unit length (+- 1e-6)")
        if self.weights is not None:
            self.weights = np.asarray(self.weights, dtype=np.float64).reshape(-1)
            if len(self.weights) != len(self.positions):
                raise ValueError("weights length mismatch")
        if self.colors is not None:
            self.colors = np.asarray(self.colors, dtype=np.float64).reshape(-1, 3)
            if len(self.colors) != len(self.positions):
                raise ValueError("colors length mismatch")

    def __len__(self):
        return len(self.positions)


@dataclass
class IndicatorGrid:
    """Uniform scalar grid: world origin, isotropic cell size, values (nx,ny,nz)."""

    origin: np.ndarray
    cell: float
    values: np.ndarray

    def __post_init__(self):
        self.origin = np.asarray(self.origin, dtype=np.float64).reshape(3)
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 3:
            raise ValueError("values must be a 3D array")
        if min(self.values.shape) < 8:
            raise ValueError("grid dims must be >= 8 per axis")

    @property
    def dims(self):
        return self.values.shape

    def cell_centers(self, ids):
        """World coordinates of cell centers for (M, 3) integer indices."""
        return self.origin + (np.asarray(ids, dtype=np.float64) + 0.5) * self.cell

    def sample(self, points):
        """Trilinear interpolation at world points; 0 outside the domain."""
        u = (np.asarray(points, dtype=np.float64).reshape(-1, 3) - self.origin) / self.cell - 0.5
        return map_coordinates(self.values, u.T, order=1, mode="constant", cval=0.0)

    def boundary_mask(self):
        m = np.zeros(self.dims, dtype=bool)
        m[0, :, :] = m[-1, :, :] = True
        m[:, 0, :] = m[:, -1, :] = True
        m[:, :, 0] = m[:, :, -1] = True
        return m

    def copy(self):
        return IndicatorGrid(self.origin.copy(), self.cell, self.values.copy())

    def save(self, path):
        fileio.write_volume(path, self.values[None], self.origin, self.cell)

    @classmethod
    def load(cls, path):
        fields, origin, cell = fileio.read_volume(path)
        return cls(origin=origin, cell=cell, values=fields[0])


def _grid_frame(points, dims, padding):
    lo = points.min(axis=0)
    hi = points.max(axis=0)
    size = hi - lo
    if size.max() <= 0.0:
        raise ValueError("degenerate bounding box: points span zero extent")
    dims = np.array([dims] * 3 if np.ndim(dims) == 0 else dims, dtype=np.int64)
    pad = padding * size.max()
    ext = size + 2.0 * pad
    cell = float((ext / dims).max())
    center = 0.5 * (lo + hi)
    origin = center - 0.5 * dims * cell
    return origin, cell, tuple(int(d) for d in dims)


def _splat_trilinear(points, vec, dims, origin, cell):
    """Scatter per-point vectors (and scalar mass) to cell centers."""
    V = np.zeros(dims + (3,))
    rho = np.zeros(dims)
    u = (points - origin) / cell - 0.5
    i0 = np.floor(u).astype(np.int64)
    frac = u - i0
    i0 = np.clip(i0, 0, np.asarray(dims) - 2)
    for dx in (0, 1):
        wx = frac[:, 0] if dx else 1.0 - frac[:, 0]
        for dy in (0, 1):
            wy = frac[:, 1] if dy else 1.0 - frac[:, 1]
            for dz in (0, 1):
                wz = frac[:, 2] if dz else 1.0 - frac[:, 2]
                w = wx * wy * wz
                idx = (i0[:, 0] + dx, i0[:, 1] + dy, i0[:, 2] + dz)
                np.add.at(V, idx, w[:, None] * vec)
                np.add.at(rho, idx, w)
    return V, rho


def _neg_laplacian_apply(X, screen_diag):
    """Matrix-free (-laplacian + screening) with Neumann boundary, 7-point."""
    out = screen_diag * X
    for axis in range(3):
        lo = [slice(None)] * 3
        hi = [slice(None)] * 3
        lo[axis] = slice(None, -1)
        hi[axis] = slice(1, None)
        d = X[tuple(hi)] - X[tuple(lo)]
        out[tuple(lo)] -= d
        out[tuple(hi)] += d
    return out


def _spectral_preconditioner(dims, const_mode):
    """Exact DCT-II inverse of the Neumann -laplacian; the singular constant
    mode is replaced by the screening's mean response."""
    lam = [2.0 - 2.0 * np.cos(np.pi * np.arange(n) / n) for n in dims]
    L = lam[0][:, None, None] + lam[1][None, :, None] + lam[2][None, None, :]
    L[0, 0, 0] = const_mode

    def apply(r):
        R = r.reshape(dims)
        return idctn(dctn(R, type=2, norm="ortho") / L, type=2, norm="ortho").ravel()

    return apply


def build_indicator(points, dims=DEFAULT_DIMS, padding=0.15,
                    screen_weight=DEFAULT_SCREEN_WEIGHT, rtol=1e-6, maxiter=2000):
    """Screened-Poisson indicator solve from oriented surface samples.

    Splats area-weighted normals into a grid vector field, solves
    (-lap + screen) X = div V by conjugate gradient (matrix-free stencil,
    preconditioned by the exact DCT inverse of the shifted Neumann
    Laplacian), and affinely normalizes so the sample mean is 0.5 and the
    domain-boundary mean is 0.
    """
    if len(points) < MIN_POINTS:
        raise ValueError(f"need at least {MIN_POINTS} oriented points, got {len(points)}")
    origin, cell, dims = _grid_frame(points.positions, dims, padding)
    vec = points.normals if points.weights is None else points.normals * points.weights[:, None]
    V, rho = _splat_trilinear(points.positions, vec, dims, origin, cell)
    div = (np.gradient(V[..., 0], axis=0) + np.gradient(V[..., 1], axis=1)
           + np.gradient(V[..., 2], axis=2))
    occupied = rho[rho > 0]
    rho_norm = rho / occupied.mean() if occupied.size else rho
    screen = screen_weight * rho_norm
    n_cells = int(np.prod(dims))
    A = LinearOperator((n_cells, n_cells),
                       matvec=lambda x: _neg_laplacian_apply(x.reshape(dims), screen).ravel())
    M = LinearOperator((n_cells, n_cells),
                       matvec=_spectral_preconditioner(dims, float(screen.mean()) + 1e-300))
    b = div.ravel()
    x, info = cg(A, b, rtol=rtol, maxiter=maxiter, M=M)
    if info > 0:
        resid = np.linalg.norm(A @ x - b) / max(np.linalg.norm(b), 1e-300)
        raise NumericalError(
            f"indicator CG did not converge in {maxiter} iterations "
            f"(relative residual {resid:.3e})")
    grid = IndicatorGrid(origin=origin, cell=cell, values=x.reshape(dims))
    sample_mean = float(grid.sample(points.positions).mean())
    boundary_mean = float(grid.values[grid.boundary_mask()].mean())
    denom = sample_mean - boundary_mean
    if abs(denom) < 1e-12:
        raise NumericalError("indicator normalization is degenerate "
                             "(samples and boundary share the same mean)")
    # positive scale keeps orientation: inward-flipped normals classify the
    # enclosed region as exterior instead of being silently re-oriented
    grid.values = (grid.values - boundary_mean) * (0.5 / abs(denom))
    return grid


def remap_grid(src, target):
    """Trilinear resample of `src` onto the frame of `target` (an
    IndicatorGrid or an (origin, cell, dims) triple); cells outside the
    source domain take value 0."""
    if isinstance(target, IndicatorGrid):
        t_origin, t_cell, t_dims = target.origin, target.cell, target.dims
    else:
        t_origin, t_cell, t_dims = target
        t_origin = np.asarray(t_origin, dtype=np.float64)
    t_dims = tuple(int(d) for d in t_dims)
    axes = [t_origin[a] + (np.arange(t_dims[a]) + 0.5) * t_cell for a in range(3)]
    cx, cy, cz = np.meshgrid(*axes, indexing="ij")
    u = np.stack([(cx - src.origin[0]) / src.cell - 0.5,
                  (cy - src.origin[1]) / src.cell - 0.5,
                  (cz - src.origin[2]) / src.cell - 0.5])
    inside = np.all((u > -0.5) & (u < np.array(src.dims).reshape(3, 1, 1, 1) - 0.5), axis=0)
    if not inside.any():
        raise ValueError("target frame does not overlap the source grid")
    # 'nearest' keeps exact-boundary coordinates stable; outside cells are
    # zeroed explicitly
    vals = map_coordinates(src.values, u.reshape(3, -1), order=1, mode="nearest")
    vals = vals.reshape(t_dims)
    vals[~inside] = 0.0
    return IndicatorGrid(origin=t_origin, cell=float(t_cell), values=vals)


def mean_curvature(points, k=16, return_flags=False):
    """Mean curvature per point from a local quadric fit over k neighbors.

    The local normal comes from a PCA of the neighborhood and is oriented
    toward the neighbors' centroid, so a sphere sampled on its surface
    reports H ~ +1/r.  Rank-deficient neighborhoods get curvature 0 (and a
    flag when return_flags is set).
    """
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    n = len(points)
    if n < k + 1:
        raise ValueError(f"need at least k+1={k + 1} points, got {n}")
    tree = cKDTree(points)
    _, nbr = tree.query(points, k=k + 1)
    local = points[nbr] - points[:, None, :]  # (n, k+1, 3), row 0 is the point itself
    cov = np.einsum("nki,nkj->nij", local, local)
    w, vecs = np.linalg.eigh(cov)
    normal = vecs[:, :, 0]
    tang1 = vecs[:, :, 2]
    tang2 = vecs[:, :, 1]
    centroid = local.mean(axis=1)
    flip = np.einsum("ni,ni->n", normal, centroid) < 0.0
    normal[flip] *= -1.0
    # fit in neighborhood-scaled coordinates so the Gram conditioning test is
    # scale free; curvature transforms back as H_world = H_scaled / h
    h = np.linalg.norm(local, axis=2).mean(axis=1)
    h = np.maximum(h, 1e-300)
    x = np.einsum("nki,ni->nk", local, tang1) / h[:, None]
    y = np.einsum("nki,ni->nk", local, tang2) / h[:, None]
    z = np.einsum("nki,ni->nk", local, normal) / h[:, None]
    design = np.stack([x * x, x * y, y * y, x, y, np.ones_like(x)], axis=2)
    G = np.einsum("nka,nkb->nab", design, design)
    rhs = np.einsum("nka,nk->na", design, z)
    good = np.abs(np.linalg.det(G)) > 1e-10 * (k + 1.0) ** 6
    H = np.zeros(n)
    if good.any():
        sol = np.linalg.solve(G[good], rhs[good][..., None])[..., 0]
        H[good] = (sol[:, 0] + sol[:, 2]) / h[good]
    if return_flags:
        return H, ~good
    return H


def _neighbor_struct(connectivity):
    if connectivity == 6:
        s = np.zeros((3, 3, 3), dtype=bool)
        s[1, 1, 0] = s[1, 1, 2] = s[1, 0, 1] = s[1, 2, 1] = s[0, 1, 1] = s[2, 1, 1] = True
    elif connectivity == 26:
        s = np.ones((3, 3, 3), dtype=bool)
        s[1, 1, 1] = False
    else:
        raise ValueError("connectivity must be 6 or 26")
    return s


def resolve_conflicts(x_s, x_o_s, tau=None, iterations=10, connectivity=6,
                      curvature_k=16):
    """Resolve indicator conflicts between a scene field and the object field
    remapped into its frame.

    Repeats for `iterations` rounds: classify scene surface cells
    (0.5 < X_S < 0.6) into intersection (X_O > 0.5) and non-intersection
    regions, compare mean curvature against the nearest non-intersecting
    surface cell, and demote anomalous scene cells to 0.49.  Afterwards every
    object-interior cell adjacent to a scene-interior cell is demoted to 0.49.
    Values are only ever lowered.  Returns the updated (scene, object) pair.
    """
    if x_s.dims != x_o_s.dims or abs(x_s.cell - x_o_s.cell) > 1e-12 \
            or np.max(np.abs(x_s.origin - x_o_s.origin)) > 1e-9 * max(1.0, x_s.cell):
        raise ValueError("grids must be co-registered (same frame)")
    xs = x_s.copy()
    xo = x_o_s.copy()
    vs, vo = xs.values, xo.values
    for _ in range(iterations):
        shell = (vs > 0.5) & (vs < 0.6)
        inter = shell & (vo > 0.5)
        non = shell & (vo < 0.5)
        n_inter, n_non = int(inter.sum()), int(non.sum())
        if n_inter == 0 or n_non == 0:
            break
        ids_inter = np.argwhere(inter)
        ids_non = np.argwhere(non)
        pts_inter = xs.cell_centers(ids_inter)
        pts_non = xs.cell_centers(ids_non)
        all_pts = np.vstack([pts_inter, pts_non])
        if len(all_pts) < curvature_k + 1:
            break
        H = mean_curvature(all_pts, k=curvature_k)
        H_inter, H_non = H[:n_inter], H[n_inter:]
        tau_it = tau if tau is not None else 3.0 * float(np.median(np.abs(H_non)))
        _, closest = cKDTree(pts_non).query(pts_inter)
        carve = np.abs(H_inter - H_non[closest]) > tau_it
        if not carve.any():
            break
        sel = ids_inter[carve]
        vs[sel[:, 0], sel[:, 1], sel[:, 2]] = 0.49
    struct = _neighbor_struct(connectivity)
    adjacent = binary_dilation(vs > 0.5, structure=struct)
    vo[(vo > 0.5) & adjacent] = 0.49
    return xs, xo


def extract_interior_points(grid):
    """World coordinates of all cell centers with X > 0.5."""
    ids = np.argwhere(grid.values > 0.5)
    if ids.size == 0:
        return np.zeros((0, 3))
    return grid.cell_centers(ids)

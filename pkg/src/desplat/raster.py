"""CPU front-to-back alpha-blending splatter.

Renders arbitrary per-kernel quantities, accumulated opacity silhouettes,
projected object masks, and unbiased depth (blended plane distance over
blended normal).  Work is tiled 16x16 with a per-tile depth sort; the inner
blending loop runs on the selected backend kernel.
"""

from collections import namedtuple
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import maximum_filter

from . import backend
from .sh import sh_basis
from .splats import scene_normal_candidates

TILE = 16
COV2D_FLOOR = 0.3          # px^2, added to the projected covariance diagonal
DEFAULT_EARLY_EXIT = 1e-4  # stop blending when transmittance drops below this
NEAR_PLANE = 1e-4
DEPTH_MIN_ALPHA = 0.5      # pixels with less accumulated opacity are invalid
_CUTOFF_SIGMA = 3.0


@dataclass
class RasterImage:
    """Row-major scalar image; values has shape (height, width, channels)."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim == 2:
            v = v[:, :, None]
        if v.ndim != 3:
            raise ValueError("image values must be (H, W) or (H, W, C)")
        self.values = v

    @property
    def height(self):
        return self.values.shape[0]

    @property
    def width(self):
        return self.values.shape[1]

    @property
    def channels(self):
        return self.values.shape[2]

    @property
    def buffer(self):
        return self.values.reshape(-1)


ProjectedKernel = namedtuple("ProjectedKernel", "mean2d cov2d depth in_front")


def _project_arrays(centers, covariances, camera, near=NEAR_PLANE):
    t = centers @ camera.R.T + camera.t
    depth = t[:, 2]
    in_front = depth > near
    fx, fy = camera.K[0, 0], camera.K[1, 1]
    cx, cy = camera.K[0, 2], camera.K[1, 2]
    z = np.where(in_front, depth, 1.0)
    mean2d = np.stack([fx * t[:, 0] / z + cx + camera.K[0, 1] * t[:, 1] / z,
                       fy * t[:, 1] / z + cy], axis=1)
    skew = camera.K[0, 1]
    J = np.zeros((len(centers), 2, 3))
    J[:, 0, 0] = fx / z
    J[:, 0, 1] = skew / z
    J[:, 0, 2] = -(fx * t[:, 0] + skew * t[:, 1]) / (z * z)
    J[:, 1, 1] = fy / z
    J[:, 1, 2] = -fy * t[:, 1] / (z * z)
    cov_cam = camera.R @ covariances @ camera.R.T
    cov2d = J @ cov_cam @ np.swapaxes(J, 1, 2)
    cov2d[:, 0, 0] += COV2D_FLOOR
    cov2d[:, 1, 1] += COV2D_FLOOR
    return mean2d, cov2d, depth, in_front


def project_kernel(kernel, camera, near=NEAR_PLANE):
    """Project one kernel; `in_front` False flags a skipped (behind) kernel."""
    mean2d, cov2d, depth, in_front = _project_arrays(
        kernel.center[None], kernel.covariance()[None], camera, near)
    return ProjectedKernel(mean2d[0], cov2d[0], float(depth[0]), bool(in_front[0]))


def _prepare(scene, camera, near=NEAR_PLANE):
    """Project, depth-sort (ties by kernel index), and bin kernels to tiles."""
    n = len(scene)
    width, height = camera.width, camera.height
    tiles_x = (width + TILE - 1) // TILE
    tiles_y = (height + TILE - 1) // TILE
    empty = (np.zeros(1, dtype=np.int64), np.zeros(0, dtype=np.int64),
             np.zeros((0, 2)), np.zeros((0, 3)), np.zeros(0, dtype=np.int64))
    if n == 0:
        return empty + (tiles_x, tiles_y)
    mean2d, cov2d, depth, in_front = _project_arrays(scene.centers, scene.covariances(),
                                                     camera, near)
    a, b, c = cov2d[:, 0, 0], cov2d[:, 0, 1], cov2d[:, 1, 1]
    det = a * c - b * b
    valid = in_front & (det > 1e-12)
    det = np.where(valid, det, 1.0)
    conic = np.stack([c / det, -b / det, a / det], axis=1)
    mid = 0.5 * (a + c)
    lam_max = mid + np.sqrt(np.maximum(mid * mid - det, 0.0))
    radius = np.ceil(_CUTOFF_SIGMA * np.sqrt(lam_max))

    order = np.lexsort((np.arange(n), depth))
    order = order[valid[order]]
    if order.size == 0:
        return empty + (tiles_x, tiles_y)
    m2 = np.ascontiguousarray(mean2d[order])
    cn = np.ascontiguousarray(conic[order])
    rad = radius[order]

    tx0 = np.clip(np.floor((m2[:, 0] - rad) / TILE), 0, tiles_x - 1).astype(np.int64)
    tx1 = np.clip(np.floor((m2[:, 0] + rad) / TILE), 0, tiles_x - 1).astype(np.int64)
    ty0 = np.clip(np.floor((m2[:, 1] - rad) / TILE), 0, tiles_y - 1).astype(np.int64)
    ty1 = np.clip(np.floor((m2[:, 1] + rad) / TILE), 0, tiles_y - 1).astype(np.int64)
    offscreen = ((m2[:, 0] + rad < 0) | (m2[:, 0] - rad >= width)
                 | (m2[:, 1] + rad < 0) | (m2[:, 1] - rad >= height))
    sx = np.where(offscreen, 0, tx1 - tx0 + 1)
    sy = np.where(offscreen, 0, ty1 - ty0 + 1)
    counts = sx * sy
    total = int(counts.sum())
    ntiles = tiles_x * tiles_y
    if total == 0:
        return (np.zeros(ntiles + 1, dtype=np.int64), np.zeros(0, dtype=np.int64),
                m2, cn, order, tiles_x, tiles_y)
    rep = np.repeat(np.arange(order.size), counts)
    local = np.arange(total) - np.repeat(np.concatenate([[0], np.cumsum(counts)[:-1]]), counts)
    sxr = np.repeat(np.maximum(sx, 1), counts)
    tx = np.repeat(tx0, counts) + local % sxr
    ty = np.repeat(ty0, counts) + local // sxr
    tile_id = ty * tiles_x + tx
    shuffle = np.argsort(tile_id, kind="stable")
    tile_kidx = rep[shuffle].astype(np.int64)
    tile_starts = np.zeros(ntiles + 1, dtype=np.int64)
    tile_starts[1:] = np.cumsum(np.bincount(tile_id, minlength=ntiles))
    return tile_starts, tile_kidx, m2, cn, order, tiles_x, tiles_y


def _blend(scene, camera, quant, early_exit):
    """Blend per-kernel quantities (N, K); returns (image (H,W,K), alpha (H,W))."""
    tile_starts, tile_kidx, m2, cn, order, _, _ = _prepare(scene, camera)
    quant = np.asarray(quant, dtype=np.float64)
    if quant.ndim == 1:
        quant = quant[:, None]
    q = np.ascontiguousarray(quant[order])
    op = np.ascontiguousarray(scene.opacities[order])
    return backend.kernels.blend_forward(tile_starts, tile_kidx, m2, cn, op, q,
                                         camera.width, camera.height, TILE,
                                         float(early_exit))


def blend_quantity(scene, camera, quantity, early_exit=DEFAULT_EARLY_EXIT):
    """Front-to-back alpha blending of a per-kernel scalar or vector source."""
    quantity = np.asarray(quantity, dtype=np.float64)
    if quantity.shape[0] != len(scene):
        raise ValueError("quantity must provide one row per kernel")
    img, _ = _blend(scene, camera, quantity, early_exit)
    return RasterImage(img)


def render_opacity_silhouette(scene, camera, early_exit=DEFAULT_EARLY_EXIT):
    """Accumulated opacity A(p) = 1 - prod(1 - alpha_i) in [0, 1]."""
    _, alpha = _blend(scene, camera, np.zeros((len(scene), 0)), early_exit)
    return RasterImage(alpha)


def kernel_view_colors(scene, camera):
    """SH-evaluated RGB per kernel for this view (splat convention: +0.5 shift)."""
    d = scene.centers - camera.center
    norm = np.linalg.norm(d, axis=1, keepdims=True)
    d = np.where(norm > 1e-12, d / np.maximum(norm, 1e-12), np.array([0.0, 0.0, 1.0]))
    basis = sh_basis(d)
    return np.maximum(np.einsum("nck,nk->nc", scene.sh, basis) + 0.5, 0.0)


def render_color(scene, camera, early_exit=DEFAULT_EARLY_EXIT):
    """RGB render with per-kernel view-dependent SH color, black background."""
    return blend_quantity(scene, camera, kernel_view_colors(scene, camera), early_exit)


def render_unbiased_depth(scene, camera, normals=None, early_exit=DEFAULT_EARLY_EXIT):
    """Depth from blended plane distance and normal: D = d(p) / (n(p) . K^-1 p').

    Kernels are expected flattened with disambiguated normals (pass `normals`
    to reuse a precomputed set).  Returns a 2-channel image (depth, validity);
    invalid pixels (accumulated opacity < 0.5 or degenerate denominator) hold
    the sentinel depth 0.
    """
    if normals is None:
        normals = scene_normal_candidates(scene)
        if scene.cameras:
            from .splats import disambiguate_normals
            normals = disambiguate_normals(scene)
    n_cam = normals @ camera.R.T
    t = scene.centers @ camera.R.T + camera.t
    d_g = np.abs(np.einsum("ij,ij->i", n_cam, t))
    quant = np.concatenate([n_cam, d_g[:, None]], axis=1)
    img, alpha = _blend(scene, camera, quant, early_exit)
    xs = np.arange(camera.width) + 0.5
    ys = np.arange(camera.height) + 0.5
    Kinv = np.linalg.inv(camera.K)
    px = np.stack(np.broadcast_arrays(xs[None, :], ys[:, None],
                                      np.ones((1, 1))), axis=-1)
    rays = px @ Kinv.T
    # Disambiguated normals face the camera, making the raw inner product
    # negative; divide by its magnitude so depth comes out positive.
    denom = np.abs(np.einsum("hwc,hwc->hw", img[:, :, :3], rays))
    valid = (alpha >= DEPTH_MIN_ALPHA) & (denom >= 1e-8)
    depth = np.where(valid, img[:, :, 3] / np.where(valid, denom, 1.0), 0.0)
    return RasterImage(np.stack([depth, valid.astype(np.float64)], axis=-1))


def render_projected_mask(scene, object_ids, camera, early_exit=DEFAULT_EARLY_EXIT):
    """Binary silhouette of the selected kernels rendered alone (zero opacity
    for the rest), thresholded at any accumulated opacity."""
    object_ids = np.asarray(object_ids)
    if object_ids.dtype == bool:
        sub = scene.subset(object_ids)
    else:
        sub = scene.subset(np.asarray(object_ids, dtype=np.int64))
    if len(sub) == 0:
        return RasterImage(np.zeros((camera.height, camera.width)))
    _, alpha = _blend(sub, camera, np.zeros((len(sub), 0)), early_exit)
    return RasterImage((alpha > 0.0).astype(np.float64))


def dilate_mask(mask, kernel_size):
    """Morphological max filter with an odd square kernel."""
    if kernel_size % 2 != 1 or kernel_size < 1:
        raise ValueError("kernel size must be odd and positive")
    arr = mask.values[:, :, 0] if isinstance(mask, RasterImage) else np.asarray(mask)
    out = maximum_filter(arr, size=kernel_size, mode="constant", cval=0.0)
    return RasterImage(out) if isinstance(mask, RasterImage) else out

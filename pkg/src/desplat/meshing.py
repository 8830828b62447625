"""Isosurface extraction, scene-patch cropping, and triangle-bound Gaussians."""

import logging
from dataclasses import dataclass

import numpy as np
from skimage import measure

from .splats import SplatScene, rotmat_to_quat

log = logging.getLogger(__name__)

DEGENERATE_AREA = 1e-12
FLAT_SCALE = 1e-8  # thin axis of a triangle-bound Gaussian


@dataclass
class TriangleMesh:
    vertices: np.ndarray   # (V, 3)
    triangles: np.ndarray  # (T, 3) int

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        self.triangles = np.asarray(self.triangles, dtype=np.int64).reshape(-1, 3)
        if len(self.triangles) and self.triangles.max() >= len(self.vertices):
            raise ValueError("triangle index out of range")
        self._face_normals = None

    def __len__(self):
        return len(self.triangles)

    def corners(self):
        """Vertex positions per triangle, (T, 3, 3)."""
        return self.vertices[self.triangles]

    def face_normals(self):
        if self._face_normals is None:
            v = self.corners()
            n = np.cross(v[:, 1] - v[:, 0], v[:, 2] - v[:, 0])
            norm = np.linalg.norm(n, axis=1, keepdims=True)
            self._face_normals = n / np.maximum(norm, 1e-300)
        return self._face_normals

    def face_areas(self):
        v = self.corners()
        return 0.5 * np.linalg.norm(np.cross(v[:, 1] - v[:, 0], v[:, 2] - v[:, 0]), axis=1)

    def centroids(self):
        return self.corners().mean(axis=1)

    def euler_characteristic(self):
        edges = np.vstack([self.triangles[:, [0, 1]], self.triangles[:, [1, 2]],
                           self.triangles[:, [2, 0]]])
        edges = np.unique(np.sort(edges, axis=1), axis=0)
        used = np.unique(self.triangles)
        return int(len(used) - len(edges) + len(self.triangles))


def _collapse_slivers(verts, faces, min_area, max_rounds=8):
    """Collapse the shortest edge of every near-zero-area face; keeps a
    closed surface closed, unlike simply deleting the face."""
    for _ in range(max_rounds):
        v = verts[faces]
        areas = 0.5 * np.linalg.norm(np.cross(v[:, 1] - v[:, 0], v[:, 2] - v[:, 0]), axis=1)
        distinct = ((faces[:, 0] != faces[:, 1]) & (faces[:, 1] != faces[:, 2])
                    & (faces[:, 0] != faces[:, 2]))
        bad = (areas < min_area) & distinct
        if not bad.any():
            faces = faces[distinct & (areas >= min_area)]
            break
        mapping = np.arange(len(verts), dtype=np.int64)
        pairs = ((0, 1), (1, 2), (2, 0))
        for f in faces[bad]:
            tri = verts[f]
            lengths = [np.linalg.norm(tri[i] - tri[j]) for i, j in pairs]
            i, j = pairs[int(np.argmin(lengths))]
            a, b = sorted((int(f[i]), int(f[j])))
            mapping[b] = a
        while True:
            nxt = mapping[mapping]
            if np.array_equal(nxt, mapping):
                break
            mapping = nxt
        faces = mapping[faces]
        faces = faces[(faces[:, 0] != faces[:, 1]) & (faces[:, 1] != faces[:, 2])
                      & (faces[:, 0] != faces[:, 2])]
    return faces


def marching_cubes(grid, iso=0.5):
    """Isosurface of an IndicatorGrid at `iso` with outward orientation.

    Triangle normals are made to agree with -grad(X) (interiors are high);
    degenerate triangles are dropped.  An empty isosurface yields an empty
    mesh.
    """
    values = grid.values
    if not (values.min() < iso < values.max()):
        return TriangleMesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64))
    verts, faces, _, _ = measure.marching_cubes(values, level=iso,
                                                spacing=(grid.cell,) * 3)
    verts = verts + grid.origin + 0.5 * grid.cell  # values live at cell centers
    # weld near-coincident vertices so that dropping the zero-area slivers
    # produced at grid points keeps the surface closed
    quant = np.round(verts / (1e-6 * grid.cell)).astype(np.int64)
    _, first, inverse = np.unique(quant, axis=0, return_index=True, return_inverse=True)
    verts = verts[first]
    faces = inverse[faces]
    faces = _collapse_slivers(verts, faces, DEGENERATE_AREA)
    mesh = TriangleMesh(verts, faces)
    if len(mesh) == 0:
        return mesh
    # orient against the indicator gradient at centroids
    gx, gy, gz = np.gradient(values)
    u = ((mesh.centroids() - grid.origin) / grid.cell - 0.5).T
    from scipy.ndimage import map_coordinates
    grad = np.stack([map_coordinates(g, u, order=1, mode="nearest")
                     for g in (gx, gy, gz)], axis=1)
    flip = np.einsum("ij,ij->i", mesh.face_normals(), -grad) < 0.0
    faces = mesh.triangles.copy()
    faces[flip] = faces[flip][:, ::-1]
    return TriangleMesh(mesh.vertices, faces)


def crop_mesh_patch(mesh, interior_points, scale=1.2):
    """Keep triangles whose centroids fall inside the bounding box of
    `interior_points`, scaled about its center."""
    interior_points = np.asarray(interior_points, dtype=np.float64).reshape(-1, 3)
    if len(interior_points) == 0:
        raise ValueError("interior point set is empty")
    lo = interior_points.min(axis=0)
    hi = interior_points.max(axis=0)
    center = 0.5 * (lo + hi)
    half = 0.5 * (hi - lo) * scale
    c = mesh.centroids()
    keep = np.all(np.abs(c - center) <= half, axis=1) if len(mesh) else np.zeros(0, bool)
    return TriangleMesh(mesh.vertices, mesh.triangles[keep])


def mesh_to_gaussians(mesh, opacity=1.0):
    """Bind one flattened Gaussian per triangle.

    Center = centroid; rotation columns are (triangle normal, unit(v2 - k),
    one-step Gram-Schmidt of (v3 - k)); scales are (1e-8, |v2 - k|,
    |r3 . (v3 - k)|).  Opacity and SH are left to fine-tune initialization
    (opacity defaults to `opacity`, SH to zero).  Degenerate triangles are
    skipped and counted.
    """
    v = mesh.corners()
    k = v.mean(axis=1)
    e2 = v[:, 1] - k
    e3 = v[:, 2] - k
    r1 = np.cross(e2, e3)
    n1 = np.linalg.norm(r1, axis=1)
    ok = n1 >= 2.0 * DEGENERATE_AREA
    skipped = int(np.count_nonzero(~ok))
    if skipped:
        log.warning("mesh_to_gaussians: skipped %d degenerate triangles", skipped)
    v, k, e2, e3, r1, n1 = v[ok], k[ok], e2[ok], e3[ok], r1[ok], n1[ok]
    r1 = r1 / n1[:, None]
    s2 = np.linalg.norm(e2, axis=1)
    r2 = e2 / s2[:, None]
    proj = e3 - np.einsum("ij,ij->i", e3, r1)[:, None] * r1 \
        - np.einsum("ij,ij->i", e3, r2)[:, None] * r2
    s3 = np.linalg.norm(proj, axis=1)
    r3 = proj / np.maximum(s3, 1e-300)[:, None]
    R = np.stack([r1, r2, r3], axis=2)
    neg = np.linalg.det(R) < 0.0
    R[neg, :, 2] *= -1.0
    n = len(k)
    scales = np.column_stack([np.full(n, FLAT_SCALE), s2, s3])
    return SplatScene(
        centers=k,
        opacities=np.full(n, opacity),
        rotations=rotmat_to_quat(R) if n else np.zeros((0, 4)),
        scales=scales,
        sh=np.zeros((n, 3, 16)),
        labels=np.zeros(n, dtype=np.int32),
    ), skipped


# ---------------------------------------------------------------------------
# mesh I/O: binary STL and ASCII OBJ

def save_stl(mesh, path):
    tri = mesh.corners().astype("<f4")
    nrm = mesh.face_normals().astype("<f4")
    n = len(mesh)
    rec = np.zeros(n, dtype=[("n", "<f4", 3), ("v", "<f4", (3, 3)), ("attr", "<u2")])
    rec["n"] = nrm
    rec["v"] = tri
    with open(path, "wb") as f:
        f.write(b"\x00" * 80)
        f.write(np.uint32(n).tobytes())
        f.write(rec.tobytes())


def load_stl(path):
    with open(path, "rb") as f:
        f.read(80)
        n = int(np.frombuffer(f.read(4), dtype="<u4")[0])
        rec = np.frombuffer(f.read(n * 50),
                            dtype=[("n", "<f4", 3), ("v", "<f4", (3, 3)), ("attr", "<u2")])
    verts = rec["v"].reshape(-1, 3).astype(np.float64)
    faces = np.arange(3 * n, dtype=np.int64).reshape(-1, 3)
    return TriangleMesh(verts, faces)


def save_obj(mesh, path):
    with open(path, "w") as f:
        for v in mesh.vertices:
            f.write(f"v {v[0]:.9g} {v[1]:.9g} {v[2]:.9g}\n")
        for t in mesh.triangles:
            f.write(f"f {t[0] + 1} {t[1] + 1} {t[2] + 1}\n")


def load_obj(path):
    verts, faces = [], []
    with open(path) as f:
        for line in f:
            parts = line.split()
            if not parts:
                continue
            if parts[0] == "v":
                verts.append([float(x) for x in parts[1:4]])
            elif parts[0] == "f":
                faces.append([int(p.split("/")[0]) - 1 for p in parts[1:4]])
    return TriangleMesh(np.array(verts, dtype=np.float64).reshape(-1, 3),
                        np.array(faces, dtype=np.int64).reshape(-1, 3))

"""Gaussian-splat data model, PLY I/O, and object/scene separation utilities."""

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .errors import SplatFormatError

# Stored PLY layout: 3 channels x (1 DC + 15 rest) SH coefficients, channel-major rest.
SH_REST = 45
_OPACITY_CLIP = 1e-7


def quat_to_rotmat(q):
    """Unit quaternions (..., 4) wxyz -> rotation matrices (..., 3, 3)."""
    q = np.asarray(q, dtype=np.float64)
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    R = np.empty(q.shape[:-1] + (3, 3), dtype=np.float64)
    R[..., 0, 0] = 1 - 2 * (y * y + z * z)
    R[..., 0, 1] = 2 * (x * y - w * z)
    R[..., 0, 2] = 2 * (x * z + w * y)
    R[..., 1, 0] = 2 * (x * y + w * z)
    R[..., 1, 1] = 1 - 2 * (x * x + z * z)
    R[..., 1, 2] = 2 * (y * z - w * x)
    R[..., 2, 0] = 2 * (x * z - w * y)
    R[..., 2, 1] = 2 * (y * z + w * x)
    R[..., 2, 2] = 1 - 2 * (x * x + y * y)
    return R


def rotmat_to_quat(R):
    """Rotation matrices (..., 3, 3) -> unit quaternions (..., 4) wxyz, w >= 0."""
    R = np.asarray(R, dtype=np.float64)
    shape = R.shape[:-2]
    R = R.reshape(-1, 3, 3)
    q = np.empty((R.shape[0], 4), dtype=np.float64)
    # Shepperd's method: pick the largest pivot per matrix for stability.
    t0 = 1.0 + R[:, 0, 0] + R[:, 1, 1] + R[:, 2, 2]
    t1 = 1.0 + R[:, 0, 0] - R[:, 1, 1] - R[:, 2, 2]
    t2 = 1.0 - R[:, 0, 0] + R[:, 1, 1] - R[:, 2, 2]
    t3 = 1.0 - R[:, 0, 0] - R[:, 1, 1] + R[:, 2, 2]
    choice = np.argmax(np.stack([t0, t1, t2, t3], axis=1), axis=1)
    for c, t, cols in (
        (0, t0, lambda s, i: (s, (R[i, 2, 1] - R[i, 1, 2]) / (4 * s),
                              (R[i, 0, 2] - R[i, 2, 0]) / (4 * s),
                              (R[i, 1, 0] - R[i, 0, 1]) / (4 * s))),
        (1, t1, lambda s, i: ((R[i, 2, 1] - R[i, 1, 2]) / (4 * s), s,
                              (R[i, 0, 1] + R[i, 1, 0]) / (4 * s),
                              (R[i, 0, 2] + R[i, 2, 0]) / (4 * s))),
        (2, t2, lambda s, i: ((R[i, 0, 2] - R[i, 2, 0]) / (4 * s),
                              (R[i, 0, 1] + R[i, 1, 0]) / (4 * s), s,
                              (R[i, 1, 2] + R[i, 2, 1]) / (4 * s))),
        (3, t3, lambda s, i: ((R[i, 1, 0] - R[i, 0, 1]) / (4 * s),
                              (R[i, 0, 2] + R[i, 2, 0]) / (4 * s),
                              (R[i, 1, 2] + R[i, 2, 1]) / (4 * s), s)),
    ):
        i = np.nonzero(choice == c)[0]
        if i.size:
            s = 0.5 * np.sqrt(t[i])
            w, x, y, z = cols(s, i)
            q[i, 0], q[i, 1], q[i, 2], q[i, 3] = w, x, y, z
    q /= np.linalg.norm(q, axis=1, keepdims=True)
    flip = q[:, 0] < 0
    q[flip] *= -1.0
    return q.reshape(shape + (4,))


@dataclass(frozen=True)
class Camera:
    """Pinhole camera: intrinsics K and a world-to-camera rigid pose."""

    K: np.ndarray
    R: np.ndarray
    t: np.ndarray
    width: int
    height: int

    def __post_init__(self):
        K = np.asarray(self.K, dtype=np.float64)
        R = np.asarray(self.R, dtype=np.float64)
        t = np.asarray(self.t, dtype=np.float64).reshape(3)
        if K.shape != (3, 3) or np.any(np.abs(K[np.tril_indices(3, -1)]) > 1e-12):
            raise ValueError("K must be 3x3 upper-triangular")
        if K[0, 0] <= 0 or K[1, 1] <= 0:
            raise ValueError("K focal entries must be positive")
        if np.max(np.abs(R @ R.T - np.eye(3))) > 1e-6:
            raise ValueError("pose rotation must be orthonormal")
        if self.width <= 0 or self.height <= 0:
            raise ValueError("image dimensions must be positive")
        object.__setattr__(self, "K", K)
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "t", t)

    @property
    def center(self):
        """Camera center in world coordinates."""
        return -self.R.T @ self.t

    def to_dict(self):
        return {"K": self.K.tolist(), "R": self.R.tolist(), "t": self.t.tolist(),
                "width": self.width, "height": self.height}

    @classmethod
    def from_dict(cls, d):
        return cls(K=np.array(d["K"]), R=np.array(d["R"]), t=np.array(d["t"]),
                   width=int(d["width"]), height=int(d["height"]))

    @classmethod
    def look_at(cls, eye, target, up=(0.0, 0.0, 1.0), fov_deg=50.0, width=256, height=256):
        """Build a camera at `eye` looking toward `target` (+z forward)."""
        eye = np.asarray(eye, dtype=np.float64)
        fwd = np.asarray(target, dtype=np.float64) - eye
        fwd /= np.linalg.norm(fwd)
        up = np.asarray(up, dtype=np.float64)
        right = np.cross(fwd, up)
        if np.linalg.norm(right) < 1e-9:  # forward parallel to up
            right = np.cross(fwd, np.array([1.0, 0.0, 0.0]))
            if np.linalg.norm(right) < 1e-9:
                right = np.cross(fwd, np.array([0.0, 1.0, 0.0]))
        right /= np.linalg.norm(right)
        down = np.cross(fwd, right)
        R = np.stack([right, down, fwd])
        t = -R @ eye
        f = 0.5 * width / np.tan(np.deg2rad(fov_deg) / 2.0)
        K = np.array([[f, 0.0, width / 2.0], [0.0, f, height / 2.0], [0.0, 0.0, 1.0]])
        return cls(K=K, R=R, t=t, width=width, height=height)


@dataclass
class GaussianKernel:
    """One splat: center, opacity, rotation+scales covariance factors, SH, label."""

    center: np.ndarray
    opacity: float
    rotation: np.ndarray  # unit quaternion, wxyz
    scales: np.ndarray
    sh: np.ndarray        # (3, 16)
    label: int = 0

    def covariance(self):
        R = quat_to_rotmat(self.rotation)
        S = np.diag(np.asarray(self.scales, dtype=np.float64))
        return R @ S @ S.T @ R.T


class SplatScene:
    """A set of Gaussian kernels stored as flat arrays, plus cameras.

    Kernel attributes are float64 arrays: centers (N,3), opacities (N,),
    rotations (N,4) wxyz unit quaternions, scales (N,3) positive,
    sh (N,3,16), labels (N,) int32.
    """

    def __init__(self, centers, opacities, rotations, scales, sh,
                 labels=None, cameras=(), up_axis=None, validate=True):
        n = len(centers)
        self.centers = np.ascontiguousarray(centers, dtype=np.float64).reshape(n, 3)
        self.opacities = np.ascontiguousarray(opacities, dtype=np.float64).reshape(n)
        self.rotations = np.ascontiguousarray(rotations, dtype=np.float64).reshape(n, 4)
        self.scales = np.ascontiguousarray(scales, dtype=np.float64).reshape(n, 3)
        self.sh = np.ascontiguousarray(sh, dtype=np.float64).reshape(n, 3, 16)
        if labels is None:
            labels = np.zeros(n, dtype=np.int32)
        self.labels = np.ascontiguousarray(labels, dtype=np.int32).reshape(n)
        self.cameras = list(cameras)
        self.up_axis = None if up_axis is None else np.asarray(up_axis, dtype=np.float64)
        if validate:
            self.validate()

    def validate(self):
        for name, arr in (("centers", self.centers), ("opacities", self.opacities),
                          ("rotations", self.rotations), ("scales", self.scales),
                          ("sh", self.sh)):
            if not np.all(np.isfinite(arr)):
                bad = int(np.nonzero(~np.all(np.isfinite(arr.reshape(len(self), -1)), axis=1))[0][0])
                raise SplatFormatError(f"non-finite value in field '{name}' at kernel {bad}")
        if len(self) and (self.opacities.min() < 0.0 or self.opacities.max() > 1.0):
            raise SplatFormatError("opacity out of [0, 1]")
        if len(self) and self.scales.min() <= 0.0:
            raise SplatFormatError("scales must be strictly positive")
        if len(self) and np.max(np.abs(np.linalg.norm(self.rotations, axis=1) - 1.0)) > 1e-9:
            raise SplatFormatError("rotation quaternions must be unit length")

    def __len__(self):
        return self.centers.shape[0]

    def kernel(self, i):
        return GaussianKernel(center=self.centers[i].copy(), opacity=float(self.opacities[i]),
                              rotation=self.rotations[i].copy(), scales=self.scales[i].copy(),
                              sh=self.sh[i].copy(), label=int(self.labels[i]))

    def kernels(self):
        for i in range(len(self)):
            yield self.kernel(i)

    @classmethod
    def from_kernels(cls, kernels, cameras=(), up_axis=None):
        kernels = list(kernels)
        return cls(
            centers=np.array([k.center for k in kernels], dtype=np.float64).reshape(len(kernels), 3),
            opacities=np.array([k.opacity for k in kernels], dtype=np.float64),
            rotations=np.array([k.rotation for k in kernels], dtype=np.float64).reshape(len(kernels), 4),
            scales=np.array([k.scales for k in kernels], dtype=np.float64).reshape(len(kernels), 3),
            sh=np.array([k.sh for k in kernels], dtype=np.float64).reshape(len(kernels), 3, 16),
            labels=np.array([k.label for k in kernels], dtype=np.int32),
            cameras=cameras, up_axis=up_axis)

    def subset(self, index):
        return SplatScene(self.centers[index], self.opacities[index], self.rotations[index],
                          self.scales[index], self.sh[index], self.labels[index],
                          cameras=self.cameras, up_axis=self.up_axis, validate=False)

    def copy(self):
        return SplatScene(self.centers.copy(), self.opacities.copy(), self.rotations.copy(),
                          self.scales.copy(), self.sh.copy(), self.labels.copy(),
                          cameras=list(self.cameras), up_axis=self.up_axis, validate=False)

    def rotation_matrices(self):
        return quat_to_rotmat(self.rotations)

    def covariances(self):
        R = self.rotation_matrices()
        RS = R * self.scales[:, None, :]
        return RS @ np.swapaxes(RS, 1, 2)


# ---------------------------------------------------------------------------
# PLY container (binary little-endian, de-facto splat layout)

_PLY_FIELDS = (["x", "y", "z", "nx", "ny", "nz"]
               + [f"f_dc_{i}" for i in range(3)]
               + [f"f_rest_{i}" for i in range(SH_REST)]
               + ["opacity"]
               + [f"scale_{i}" for i in range(3)]
               + [f"rot_{i}" for i in range(4)])


def _snap_pivot(q):
    """Recompute each quaternion's largest |component| from the other three so
    the vector is exactly unit in float64.  Loader and saver share this rule,
    which makes the PLY round trip byte-stable."""
    rows = np.arange(len(q))
    piv = np.argmax(np.abs(q), axis=1)
    rest = np.square(q).sum(axis=1) - q[rows, piv] ** 2
    q = q.copy()
    q[rows, piv] = np.sign(q[rows, piv]) * np.sqrt(np.maximum(1.0 - rest, 0.0))
    return q


def _stable_unit_quats(q):
    """Round unit quaternions to float32 such that save -> load -> save
    reproduces the same bytes (a fixed point of the round-trip map)."""
    q = q / np.linalg.norm(q, axis=1, keepdims=True)
    out = q.astype(np.float32)
    for _ in range(8):
        snapped = _snap_pivot(out.astype(np.float64)).astype(np.float32)
        if np.array_equal(snapped, out):
            break
        out = snapped
    return out


def save_ply(scene, path):
    """Write a SplatScene in the standard splat PLY layout.

    Inverse maps of load_ply are applied: opacity -> logit, scales -> log,
    quaternion stored wxyz.
    """
    if len(scene) == 0:
        raise SplatFormatError("empty scene")
    n = len(scene)
    data = np.zeros(n, dtype=[(f, "<f4") for f in _PLY_FIELDS])
    data["x"], data["y"], data["z"] = (scene.centers[:, i].astype(np.float32) for i in range(3))
    sh = scene.sh
    for c in range(3):
        data[f"f_dc_{c}"] = sh[:, c, 0].astype(np.float32)
    for c in range(3):
        for j in range(15):
            data[f"f_rest_{c * 15 + j}"] = sh[:, c, j + 1].astype(np.float32)
    op = np.clip(scene.opacities, _OPACITY_CLIP, 1.0 - _OPACITY_CLIP)
    data["opacity"] = np.log(op / (1.0 - op)).astype(np.float32)
    for i in range(3):
        data[f"scale_{i}"] = np.log(scene.scales[:, i]).astype(np.float32)
    rot = _stable_unit_quats(scene.rotations)
    for i in range(4):
        data[f"rot_{i}"] = rot[:, i]
    header = ["ply", "format binary_little_endian 1.0", f"element vertex {n}"]
    header += [f"property float {f}" for f in _PLY_FIELDS]
    header.append("end_header")
    with open(path, "wb") as f:
        f.write(("\n".join(header) + "\n").encode("ascii"))
        f.write(data.tobytes())


def load_ply(path):
    """Read a splat PLY: logits through the logistic map, log-scales
    exponentiated, quaternions normalized."""
    with open(path, "rb") as f:
        first = f.readline().decode("ascii", "replace").strip()
        if first != "ply":
            raise SplatFormatError("not a PLY file (missing 'ply' magic)")
        n = None
        props = []
        while True:
            line = f.readline()
            if not line:
                raise SplatFormatError("unexpected end of header")
            line = line.decode("ascii", "replace").strip()
            if line == "end_header":
                break
            parts = line.split()
            if not parts or parts[0] == "comment":
                continue
            if parts[0] == "format":
                if parts[1] != "binary_little_endian":
                    raise SplatFormatError(f"unsupported format '{parts[1]}'")
            elif parts[0] == "element":
                if parts[1] != "vertex":
                    raise SplatFormatError(f"unsupported element '{parts[1]}'")
                n = int(parts[2])
            elif parts[0] == "property":
                if parts[1] != "float":
                    raise SplatFormatError(f"unsupported property type in '{line}'")
                props.append(parts[2])
        if n is None:
            raise SplatFormatError("header declares no vertex element")
        for name in _PLY_FIELDS:
            if name not in props:
                raise SplatFormatError(f"missing required property '{name}'")
        raw = f.read(n * 4 * len(props))
        if len(raw) != n * 4 * len(props):
            raise SplatFormatError("truncated vertex data")
    table = np.frombuffer(raw, dtype="<f4").reshape(n, len(props)).astype(np.float64)
    col = {name: table[:, i] for i, name in enumerate(props)}

    centers = np.stack([col["x"], col["y"], col["z"]], axis=1)
    sh = np.zeros((n, 3, 16), dtype=np.float64)
    for c in range(3):
        sh[:, c, 0] = col[f"f_dc_{c}"]
        for j in range(15):
            sh[:, c, j + 1] = col[f"f_rest_{c * 15 + j}"]
    opacities = 1.0 / (1.0 + np.exp(-col["opacity"]))
    scales = np.exp(np.stack([col[f"scale_{i}"] for i in range(3)], axis=1))
    rotations = np.stack([col[f"rot_{i}"] for i in range(4)], axis=1)
    norms = np.linalg.norm(rotations, axis=1)
    if np.any(norms < 1e-12):
        bad = int(np.nonzero(norms < 1e-12)[0][0])
        raise SplatFormatError(f"zero-norm quaternion at kernel {bad}")
    off_unit = np.abs(norms - 1.0) > 1e-5
    rotations[off_unit] /= norms[off_unit, None]
    rotations = _snap_pivot(rotations)
    return SplatScene(centers, opacities, rotations, scales, sh)


def save_labels(labels, path):
    """Label sidecar: CSV for .csv paths, flat little-endian int32 otherwise."""
    labels = np.asarray(labels, dtype=np.int32)
    if str(path).endswith(".csv"):
        with open(path, "w") as f:
            f.write("\n".join(str(int(v)) for v in labels) + "\n")
    else:
        with open(path, "wb") as f:
            f.write(labels.astype("<i4").tobytes())


def load_labels(path, count=None):
    if str(path).endswith(".csv"):
        with open(path) as f:
            labels = np.array([int(line) for line in f.read().split()], dtype=np.int32)
    else:
        with open(path, "rb") as f:
            labels = np.frombuffer(f.read(), dtype="<i4").astype(np.int32)
    if count is not None and len(labels) != count:
        raise SplatFormatError(f"label sidecar holds {len(labels)} entries, expected {count}")
    return labels


def save_cameras(cameras, path):
    with open(path, "w") as f:
        json.dump([c.to_dict() for c in cameras], f, indent=1)


def load_cameras(path):
    with open(path) as f:
        return [Camera.from_dict(d) for d in json.load(f)]


# ---------------------------------------------------------------------------
# Separation plumbing

def split_object(scene, click_label):
    """Partition a scene into (object kernels, scene kernels) by label."""
    mask = scene.labels == click_label
    if not np.any(mask):
        raise ValueError(f"unknown label {click_label}: no kernel carries it")
    return scene.subset(mask), scene.subset(~mask)


def knn_residual_cleanup(scene_kernels, object_kernels, k=8, radius=None):
    """Drop scene kernels whose nearest object centers sit within `radius`.

    radius defaults to 2x the median nearest-neighbor spacing of the object.
    Returns (cleaned scene, removed count).
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    if len(object_kernels) == 0 or len(scene_kernels) == 0:
        return scene_kernels, 0
    tree = cKDTree(object_kernels.centers)
    if radius is None:
        if len(object_kernels) > 1:
            spacing, _ = tree.query(object_kernels.centers, k=2)
            radius = 2.0 * float(np.median(spacing[:, 1]))
        else:
            radius = 0.0
    k_eff = min(k, len(object_kernels))
    dist, _ = tree.query(scene_kernels.centers, k=k_eff)
    dist = np.atleast_2d(dist.reshape(len(scene_kernels), k_eff))
    remove = dist[:, 0] <= radius
    return scene_kernels.subset(~remove), int(np.count_nonzero(remove))


def transfer_labels(points, labeled_kernels):
    """Assign each point the label of its nearest kernel (ties: lowest index)."""
    if len(labeled_kernels) == 0:
        raise ValueError("labeled kernel set is empty")
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    tree = cKDTree(labeled_kernels.centers)
    dist, idx = tree.query(points)
    # Enforce the lowest-index tie-break that a k-d tree does not guarantee.
    ball = tree.query_ball_point(points, dist * (1.0 + 1e-12) + 1e-300)
    for i, cands in enumerate(ball):
        if len(cands) > 1:
            d = np.linalg.norm(labeled_kernels.centers[cands] - points[i], axis=1)
            best = d <= d.min() * (1.0 + 1e-12)
            idx[i] = min(np.asarray(cands)[best])
    return labeled_kernels.labels[idx]


def flatten_normal_candidates(kernel):
    """The +-unit axis of a kernel's shortest scale, in world frame.

    Equal scales tie-break to the lowest axis index.
    """
    scales = np.asarray(kernel.scales, dtype=np.float64)
    axis = int(np.argmin(scales))
    R = quat_to_rotmat(kernel.rotation)
    n = R[:, axis]
    n = n / np.linalg.norm(n)
    return n, -n


def scene_normal_candidates(scene):
    """Vectorized shortest-axis normals for every kernel (N, 3)."""
    axis = np.argmin(scene.scales, axis=1)
    R = scene.rotation_matrices()
    n = R[np.arange(len(scene)), :, axis]
    return n / np.linalg.norm(n, axis=1, keepdims=True)


def disambiguate_normals(scene, cameras=None):
    """Resolve the +-n ambiguity by majority vote over training views.

    A view votes for the candidate whose angle to the viewing direction
    (camera center -> kernel center) exceeds 90 degrees.  Exact ties pick the
    candidate opposing the first camera.
    """
    cameras = scene.cameras if cameras is None else list(cameras)
    if not cameras:
        raise ValueError("at least one camera is required")
    n = scene_normal_candidates(scene)
    dots = np.stack([np.einsum("ij,ij->i", n, scene.centers - cam.center)
                     for cam in cameras], axis=1)
    votes_plus = np.count_nonzero(dots < 0.0, axis=1)
    votes_minus = np.count_nonzero(dots > 0.0, axis=1)
    sign = np.where(votes_plus > votes_minus, 1.0, -1.0)
    tie = votes_plus == votes_minus
    if np.any(tie):
        first = dots[:, 0]
        sign[tie] = np.where(first[tie] <= 0.0, 1.0, -1.0)
    return n * sign[:, None]

"""Shared synthetic-scene builders for the test suite."""

import numpy as np
import pytest

from desplat.splats import Camera, SplatScene, rotmat_to_quat


def random_rotation(rng):
    A = rng.normal(size=(3, 3))
    Q, _ = np.linalg.qr(A)
    if np.linalg.det(Q) < 0:
        Q[:, 0] *= -1.0
    return Q


def rotation_aligning_z(normal):
    """Rotation whose third column is `normal` (unit)."""
    n = np.asarray(normal, dtype=np.float64)
    n = n / np.linalg.norm(n)
    ref = np.array([1.0, 0.0, 0.0]) if abs(n[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    u = np.cross(ref, n)
    u /= np.linalg.norm(u)
    v = np.cross(n, u)
    return np.stack([u, v, n], axis=1)


def fibonacci_directions(n):
    """Deterministic, roughly uniform unit directions."""
    i = np.arange(n) + 0.5
    phi = np.arccos(1.0 - 2.0 * i / n)
    theta = np.pi * (1.0 + 5.0 ** 0.5) * i
    return np.stack([np.sin(phi) * np.cos(theta),
                     np.sin(phi) * np.sin(theta),
                     np.cos(phi)], axis=1)


def sphere_samples(n, radius=1.0, center=(0.0, 0.0, 0.0)):
    """Oriented surface samples of a sphere (outward normals)."""
    normals = fibonacci_directions(n)
    return np.asarray(center) + radius * normals, normals


def flat_scene(centers, normals, size, opacity=0.9, sh_dc=None, labels=None,
               cameras=(), flat_eps=1e-9):
    """Scene of flattened kernels: tangent scales `size`, normal scale ~0."""
    centers = np.asarray(centers, dtype=np.float64).reshape(-1, 3)
    normals = np.asarray(normals, dtype=np.float64).reshape(-1, 3)
    n = len(centers)
    if n:
        rot = rotmat_to_quat(np.stack([rotation_aligning_z(nv) for nv in normals]))
    else:
        rot = np.zeros((0, 4))
    scales = np.tile([size, size, size * flat_eps], (n, 1))
    sh = np.zeros((n, 3, 16))
    if sh_dc is not None:
        sh[:, :, 0] = sh_dc
    return SplatScene(centers, np.full(n, opacity), rot, scales, sh,
                      labels=labels, cameras=cameras)


def isotropic_scene(centers, size, opacity=0.5, labels=None, cameras=()):
    centers = np.asarray(centers, dtype=np.float64)
    n = len(centers)
    rot = np.tile([1.0, 0.0, 0.0, 0.0], (n, 1))
    return SplatScene(centers, np.full(n, opacity), rot,
                      np.full((n, 3), size), np.zeros((n, 3, 16)),
                      labels=labels, cameras=cameras)


def ring_cameras(target, radius, height, count, width=128, height_px=128, fov=50.0):
    """Cameras on a circle above the target, all looking at it."""
    target = np.asarray(target, dtype=np.float64)
    cams = []
    for i in range(count):
        ang = 2.0 * np.pi * i / count
        eye = target + np.array([radius * np.cos(ang), radius * np.sin(ang), height])
        cams.append(Camera.look_at(eye, target, fov_deg=fov, width=width, height=height_px))
    return cams


def hemisphere_cameras(target, radius, count, width=128, height_px=128, fov=50.0,
                       min_elevation=0.25):
    """Cameras on the upper hemisphere around the target."""
    target = np.asarray(target, dtype=np.float64)
    dirs = fibonacci_directions(4 * count)
    dirs = dirs[dirs[:, 2] > min_elevation][:count]
    return [Camera.look_at(target + radius * d, target, fov_deg=fov,
                           width=width, height=height_px) for d in dirs]


@pytest.fixture
def rng():
    return np.random.default_rng(12345)

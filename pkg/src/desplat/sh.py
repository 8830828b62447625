"""Real spherical harmonics (degrees 0-3) and rotation of coefficient blocks.

The basis follows the splat-ecosystem convention (16 coefficients per channel,
ordered degree-major with m = -l..l inside each degree).  Rotation is done per
degree with Wigner D-matrices: the complex D is built from a ZYZ Euler
factorization and conjugated into the real basis by a fixed change-of-basis
matrix per degree.  The resulting blocks B satisfy the defining identity

    eval_sh(B @ c, R @ d) == eval_sh(c, d)

which is what every test in this module ultimately checks.
"""

from dataclasses import dataclass
from math import factorial

import numpy as np

MAX_DEGREE = 3
NUM_COEFFS = 16  # (MAX_DEGREE + 1)**2

SH_C0 = 0.28209479177387814
SH_C1 = 0.4886025119029199
SH_C2 = (1.0925484305920792, -1.0925484305920792, 0.31539156525252005,
         -1.0925484305920792, 0.5462742152960396)
SH_C3 = (-0.5900435899266435, 2.890611442640554, -0.4570457994644658,
         0.3731763325901154, -0.4570457994644658, 1.445305721320277,
         -0.5900435899266435)

# Slice of the 16-vector covered by each degree.
DEGREE_SLICES = (slice(0, 1), slice(1, 4), slice(4, 9), slice(9, 16))


@dataclass(frozen=True)
class EulerZYZ:
    """ZYZ Euler angles in radians: R = Rz(alpha) @ Ry(beta) @ Rz(gamma)."""

    alpha: float
    beta: float
    gamma: float


@dataclass(frozen=True)
class ShBlockRotation:
    """Per-degree orthogonal rotation blocks for real SH coefficients."""

    blocks: tuple  # one (2l+1, 2l+1) array per degree 0..3

    def apply(self, coeffs):
        """Rotate one or more 16-coefficient vectors (last axis = 16)."""
        coeffs = np.asarray(coeffs, dtype=np.float64)
        out = np.empty_like(coeffs)
        for l, sl in enumerate(DEGREE_SLICES):
            out[..., sl] = coeffs[..., sl] @ self.blocks[l].T
        return out


def sh_basis(dirs):
    """Evaluate the 16 real basis functions at unit directions (..., 3)."""
    dirs = np.asarray(dirs, dtype=np.float64)
    x, y, z = dirs[..., 0], dirs[..., 1], dirs[..., 2]
    xx, yy, zz = x * x, y * y, z * z
    out = np.empty(dirs.shape[:-1] + (NUM_COEFFS,), dtype=np.float64)
    out[..., 0] = SH_C0
    out[..., 1] = -SH_C1 * y
    out[..., 2] = SH_C1 * z
    out[..., 3] = -SH_C1 * x
    out[..., 4] = SH_C2[0] * x * y
    out[..., 5] = SH_C2[1] * y * z
    out[..., 6] = SH_C2[2] * (2.0 * zz - xx - yy)
    out[..., 7] = SH_C2[3] * x * z
    out[..., 8] = SH_C2[4] * (xx - yy)
    out[..., 9] = SH_C3[0] * y * (3.0 * xx - yy)
    out[..., 10] = SH_C3[1] * x * y * z
    out[..., 11] = SH_C3[2] * y * (4.0 * zz - xx - yy)
    out[..., 12] = SH_C3[3] * z * (2.0 * zz - 3.0 * xx - 3.0 * yy)
    out[..., 13] = SH_C3[4] * x * (4.0 * zz - xx - yy)
    out[..., 14] = SH_C3[5] * z * (xx - yy)
    out[..., 15] = SH_C3[6] * x * (xx - 3.0 * yy)
    return out


def eval_sh(coeffs, direction):
    """Evaluate sum_lm c_lm Y_lm at a unit direction.

    `coeffs` may be a single 16-vector or a stack (..., 16); the result
    broadcasts accordingly.
    """
    direction = np.asarray(direction, dtype=np.float64)
    norm = np.linalg.norm(direction, axis=-1)
    if np.any(np.abs(norm - 1.0) > 1e-9):
        raise ValueError("direction must be unit length (|d| = 1 +- 1e-9)")
    coeffs = np.asarray(coeffs, dtype=np.float64)
    if coeffs.shape[-1] != NUM_COEFFS:
        raise ValueError(f"expected {NUM_COEFFS} coefficients, got {coeffs.shape[-1]}")
    return np.sum(coeffs * sh_basis(direction), axis=-1)


def wigner_small_d(l, beta):
    """Small Wigner d-matrix of degree l, indexed d[m'+l, m+l].

    Standard convention: d(0) = I and d(beta).T = d(-beta).
    """
    if not 0 <= l <= MAX_DEGREE:
        raise ValueError(f"degree must be in [0, {MAX_DEGREE}], got {l}")
    d = np.zeros((2 * l + 1, 2 * l + 1))
    c, s = np.cos(beta / 2.0), np.sin(beta / 2.0)
    for mp in range(-l, l + 1):
        for m in range(-l, l + 1):
            pref = np.sqrt(factorial(l + mp) * factorial(l - mp)
                           * factorial(l + m) * factorial(l - m))
            total = 0.0
            for k in range(max(0, m - mp), min(l + m, l - mp) + 1):
                den = (factorial(l + m - k) * factorial(k)
                       * factorial(mp - m + k) * factorial(l - mp - k))
                total += ((-1.0) ** (mp - m + k) / den
                          * c ** (2 * l + m - mp - 2 * k)
                          * s ** (mp - m + 2 * k))
            d[mp + l, m + l] = pref * total
    return d


def rotation_to_euler_zyz(R):
    """Factor a rotation matrix as Rz(alpha) @ Ry(beta) @ Rz(gamma).

    Gimbal cases (beta near 0 or pi) put the whole z-rotation into alpha
    and set gamma = 0.
    """
    R = np.asarray(R, dtype=np.float64)
    _check_rotation(R)
    cos_beta = np.clip(R[2, 2], -1.0, 1.0)
    sin_beta = np.hypot(R[0, 2], R[1, 2])
    if sin_beta > 1e-12:
        alpha = np.arctan2(R[1, 2], R[0, 2])
        beta = np.arctan2(sin_beta, cos_beta)
        gamma = np.arctan2(R[2, 1], -R[2, 0])
    elif cos_beta > 0.0:
        alpha, beta, gamma = np.arctan2(R[1, 0], R[0, 0]), 0.0, 0.0
    else:
        alpha, beta, gamma = np.arctan2(R[1, 0], -R[0, 0]), np.pi, 0.0
    return EulerZYZ(float(alpha), float(beta), float(gamma))


def _check_rotation(R):
    if R.shape != (3, 3):
        raise ValueError("rotation must be a 3x3 matrix")
    if np.max(np.abs(R @ R.T - np.eye(3))) > 1e-6 or abs(np.linalg.det(R) - 1.0) > 1e-6:
        raise ValueError("input is not a rotation matrix (det 1, orthonormal)")


def _complex_to_real_basis(l):
    # Rows express the real (splat-convention) basis in the complex SH basis
    # with Condon-Shortley phase; unitary by construction.
    T = np.zeros((2 * l + 1, 2 * l + 1), dtype=complex)
    T[l, l] = 1.0
    inv_sqrt2 = 1.0 / np.sqrt(2.0)
    for m in range(1, l + 1):
        sign = (-1.0) ** m
        T[l + m, l + m] = inv_sqrt2
        T[l + m, l - m] = sign * inv_sqrt2
        T[l - m, l + m] = -1j * inv_sqrt2
        T[l - m, l - m] = 1j * sign * inv_sqrt2
    return T


_REAL_BASIS_T = tuple(_complex_to_real_basis(l) for l in range(MAX_DEGREE + 1))


def sh_block_rotation(R):
    """Build the per-degree real rotation blocks for a rotation matrix."""
    ang = rotation_to_euler_zyz(R)
    blocks = [np.ones((1, 1))]
    for l in range(1, MAX_DEGREE + 1):
        d = wigner_small_d(l, ang.beta)
        m = np.arange(-l, l + 1)
        D = np.exp(-1j * m[:, None] * ang.alpha) * d * np.exp(-1j * m[None, :] * ang.gamma)
        T = _REAL_BASIS_T[l]
        blocks.append(np.ascontiguousarray((T @ np.conj(D) @ T.conj().T).real))
    return ShBlockRotation(blocks=tuple(blocks))


def rotate_sh(coeffs, R):
    """Rotate SH coefficients (..., 16) so the represented function co-rotates
    with the object: eval(rotated, R @ d) == eval(original, d)."""
    return sh_block_rotation(R).apply(coeffs)

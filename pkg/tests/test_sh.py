import numpy as np
import pytest

from desplat import sh
from conftest import random_rotation


def unit(v):
    return v / np.linalg.norm(v)


class TestEvalSh:
    def test_dc_only_is_constant(self, rng):
        coeffs = np.zeros(16)
        coeffs[0] = 1.7
        for _ in range(10):
            d = unit(rng.normal(size=3))
            assert sh.eval_sh(coeffs, d) == pytest.approx(1.7 * 0.2820947918, abs=1e-9)

    def test_zero_coeffs(self, rng):
        assert sh.eval_sh(np.zeros(16), unit(rng.normal(size=3))) == 0.0

    def test_degree1_odd_parity(self, rng):
        coeffs = np.zeros(16)
        coeffs[1:4] = rng.normal(size=3)
        d = unit(rng.normal(size=3))
        assert sh.eval_sh(coeffs, d) == pytest.approx(-sh.eval_sh(coeffs, -d), abs=1e-12)

    def test_non_unit_direction_raises(self):
        with pytest.raises(ValueError):
            sh.eval_sh(np.zeros(16), np.array([1.0, 1.0, 0.0]))


class TestWignerSmallD:
    @pytest.mark.parametrize("l", [0, 1, 2, 3])
    def test_identity_at_zero(self, l):
        assert np.allclose(sh.wigner_small_d(l, 0.0), np.eye(2 * l + 1), atol=1e-14)

    def test_degree1_center_entry(self):
        # closed form d^1_{00}(beta) = cos(beta)
        assert sh.wigner_small_d(1, np.pi / 2)[1, 1] == pytest.approx(0.0, abs=1e-14)
        beta = 0.37
        assert sh.wigner_small_d(1, beta)[1, 1] == pytest.approx(np.cos(beta), abs=1e-14)

    def test_composition(self, rng):
        for l in (1, 2, 3):
            b1, b2 = rng.uniform(-3, 3, size=2)
            lhs = sh.wigner_small_d(l, b1) @ sh.wigner_small_d(l, b2)
            assert np.allclose(lhs, sh.wigner_small_d(l, b1 + b2), atol=1e-12)

    def test_transpose_is_negated_angle(self, rng):
        beta = rng.uniform(-3, 3)
        assert np.allclose(sh.wigner_small_d(3, beta).T, sh.wigner_small_d(3, -beta), atol=1e-13)

    def test_degree_out_of_range(self):
        with pytest.raises(ValueError):
            sh.wigner_small_d(4, 0.1)


class TestEulerZYZ:
    def test_identity(self):
        ang = sh.rotation_to_euler_zyz(np.eye(3))
        assert (ang.alpha, ang.beta, ang.gamma) == (0.0, 0.0, 0.0)

    def test_pure_y_rotation(self):
        c, s = np.cos(0.3), np.sin(0.3)
        R = np.array([[c, 0, s], [0, 1, 0], [-s, 0, c]])
        ang = sh.rotation_to_euler_zyz(R)
        assert ang.alpha == pytest.approx(0.0, abs=1e-12)
        assert ang.beta == pytest.approx(0.3, abs=1e-12)
        assert ang.gamma == pytest.approx(0.0, abs=1e-12)

    def test_round_trip_random(self, rng):
        def rz(a):
            c, s = np.cos(a), np.sin(a)
            return np.array([[c, -s, 0], [s, c, 0], [0, 0, 1.0]])

        def ry(b):
            c, s = np.cos(b), np.sin(b)
            return np.array([[c, 0, s], [0, 1.0, 0], [-s, 0, c]])

        for _ in range(300):
            R = random_rotation(rng)
            ang = sh.rotation_to_euler_zyz(R)
            R2 = rz(ang.alpha) @ ry(ang.beta) @ rz(ang.gamma)
            assert np.max(np.abs(R2 - R)) < 1e-8

    def test_gimbal_pi(self):
        R = np.diag([1.0, -1.0, -1.0])  # 180 degrees about x
        ang = sh.rotation_to_euler_zyz(R)
        assert ang.gamma == 0.0

    def test_rejects_non_rotation(self):
        with pytest.raises(ValueError):
            sh.rotation_to_euler_zyz(np.diag([1.0, 1.0, 2.0]))


class TestBlockRotation:
    def test_identity_blocks(self):
        blocks = sh.sh_block_rotation(np.eye(3)).blocks
        for l, B in enumerate(blocks):
            assert np.allclose(B, np.eye(2 * l + 1), atol=1e-12)

    def test_z_rotation_degree1_structure(self):
        theta = 0.61
        c, s = np.cos(theta), np.sin(theta)
        R = np.array([[c, -s, 0], [s, c, 0], [0, 0, 1.0]])
        B = sh.sh_block_rotation(R).blocks[1]
        # m = 0 row/column fixed, m = +-1 mix by cos/sin
        assert B[1, 1] == pytest.approx(1.0, abs=1e-12)
        assert abs(B[1, 0]) < 1e-12 and abs(B[1, 2]) < 1e-12
        assert B[0, 0] == pytest.approx(c, abs=1e-12)
        assert B[2, 2] == pytest.approx(c, abs=1e-12)
        assert abs(B[0, 2]) == pytest.approx(abs(s), abs=1e-12)

    def test_degree1_is_permuted_rotation(self, rng):
        P = np.array([[0.0, -1.0, 0.0], [0.0, 0.0, 1.0], [-1.0, 0.0, 0.0]])
        for _ in range(20):
            R = random_rotation(rng)
            B = sh.sh_block_rotation(R).blocks[1]
            assert np.max(np.abs(B - P @ R @ P.T)) < 1e-10

    def test_orthogonality(self, rng):
        for _ in range(50):
            R = random_rotation(rng)
            for l, B in enumerate(sh.sh_block_rotation(R).blocks):
                assert np.max(np.abs(B.T @ B - np.eye(2 * l + 1))) < 1e-10


class TestRotateSh:
    def test_identity_rotation_unchanged(self, rng):
        c = rng.normal(size=(3, 16))
        assert np.allclose(sh.rotate_sh(c, np.eye(3)), c, atol=1e-12)

    def test_dc_only_invariant(self, rng):
        c = np.zeros(16)
        c[0] = -0.4
        for _ in range(10):
            assert np.allclose(sh.rotate_sh(c, random_rotation(rng)), c, atol=1e-12)

    def test_sampling_oracle(self, rng):
        # ground truth for the whole module: rotated coefficients evaluated at
        # rotated directions reproduce the original field
        worst = 0.0
        for _ in range(1000):
            R = random_rotation(rng)
            c = rng.normal(size=16)
            d = unit(rng.normal(size=3))
            got = sh.eval_sh(sh.rotate_sh(c, R), unit(R @ d))
            want = sh.eval_sh(c, d)
            worst = max(worst, abs(got - want))
        assert worst < 1e-9

    def test_energy_preserved(self, rng):
        for _ in range(100):
            c = rng.normal(size=16)
            r = sh.rotate_sh(c, random_rotation(rng))
            assert np.linalg.norm(r) == pytest.approx(np.linalg.norm(c), abs=1e-9)

    def test_homomorphism(self, rng):
        for _ in range(50):
            R1, R2 = random_rotation(rng), random_rotation(rng)
            c = rng.normal(size=16)
            two_step = sh.rotate_sh(sh.rotate_sh(c, R1), R2)
            one_step = sh.rotate_sh(c, R2 @ R1)
            assert np.max(np.abs(two_step - one_step)) < 1e-8

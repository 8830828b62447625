import numpy as np
import pytest

from desplat.meshing import (TriangleMesh, crop_mesh_patch, load_obj, load_stl,
                             marching_cubes, mesh_to_gaussians, save_obj,
                             save_stl)
from desplat.poisson import IndicatorGrid, OrientedPointSet, build_indicator
from desplat.splats import quat_to_rotmat
from conftest import sphere_samples


@pytest.fixture(scope="module")
def sphere_mesh():
    pos, nrm = sphere_samples(5000, 1.0)
    grid = build_indicator(OrientedPointSet(positions=pos, normals=nrm), dims=64)
    return marching_cubes(grid)


class TestMarchingCubes:
    def test_uniform_field_empty(self):
        g = IndicatorGrid(origin=np.zeros(3), cell=0.1, values=np.full((8, 8, 8), 0.3))
        mesh = marching_cubes(g)
        assert len(mesh) == 0

    def test_sphere_closed_manifold(self, sphere_mesh):
        assert sphere_mesh.euler_characteristic() == 2
        area = sphere_mesh.face_areas().sum()
        assert area == pytest.approx(4.0 * np.pi, rel=0.05)

    def test_sphere_outward_orientation(self, sphere_mesh):
        c = sphere_mesh.centroids()
        n = sphere_mesh.face_normals()
        outward = np.einsum("ij,ij->i", n, c / np.linalg.norm(c, axis=1, keepdims=True))
        assert np.all(outward > 0.0)

    def test_every_edge_shared_twice(self, sphere_mesh):
        t = sphere_mesh.triangles
        edges = np.sort(np.vstack([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]]), axis=1)
        _, counts = np.unique(edges, axis=0, return_counts=True)
        assert np.all(counts == 2)

    def test_half_space_planar_normals(self):
        vals = np.tile(np.linspace(0.0, 1.0, 32)[None, None, :], (32, 32, 1))
        g = IndicatorGrid(origin=np.zeros(3), cell=0.1, values=vals)
        mesh = marching_cubes(g)
        assert len(mesh) > 0
        n = mesh.face_normals()
        # interior is at high z, so outward normals point to -z
        assert np.max(np.abs(n - [0.0, 0.0, -1.0])) < 1e-6


class TestCropMeshPatch:
    def test_huge_scale_keeps_all(self, sphere_mesh):
        box = np.array([[-0.1, -0.1, -0.1], [0.1, 0.1, 0.1]])
        out = crop_mesh_patch(sphere_mesh, box, scale=1e3)
        assert len(out) == len(sphere_mesh)

    def test_planar_area_oracle(self, rng):
        # a big plane mesh cropped by a unit box of points keeps ~unit area
        xs = np.linspace(-3, 3, 61)
        xx, yy = np.meshgrid(xs, xs, indexing="ij")
        verts = np.column_stack([xx.ravel(), yy.ravel(), np.zeros(xx.size)])
        quads = []
        for i in range(60):
            for j in range(60):
                a = i * 61 + j
                quads += [[a, a + 1, a + 61], [a + 1, a + 62, a + 61]]
        mesh = TriangleMesh(verts, np.array(quads))
        box = rng.uniform(-0.5, 0.5, size=(200, 3)) * [1, 1, 0]
        box[0], box[1] = [-0.5, -0.5, 0], [0.5, 0.5, 0]  # pin the exact bbox
        out = crop_mesh_patch(mesh, box, scale=1.0)
        assert out.face_areas().sum() == pytest.approx(1.0, abs=0.25)

    def test_zero_scale_empty(self, sphere_mesh):
        out = crop_mesh_patch(sphere_mesh, np.array([[0.2, 0.1, 0.0]]), scale=0.0)
        assert len(out) == 0

    def test_empty_points_error(self, sphere_mesh):
        with pytest.raises(ValueError):
            crop_mesh_patch(sphere_mesh, np.zeros((0, 3)))


class TestMeshToGaussians:
    def test_unit_right_triangle_hand_example(self):
        mesh = TriangleMesh(np.array([[0.0, 0, 0], [1.0, 0, 0], [0.0, 1, 0]]),
                            np.array([[0, 1, 2]]))
        scene, skipped = mesh_to_gaussians(mesh)
        assert skipped == 0 and len(scene) == 1
        assert np.allclose(scene.centers[0], [1 / 3, 1 / 3, 0.0], atol=1e-12)
        R = quat_to_rotmat(scene.rotations[0])
        assert abs(abs(R[2, 0]) - 1.0) < 1e-9  # r1 = +-e_z
        assert scene.scales[0, 0] == 1e-8
        assert scene.scales[0, 1] == pytest.approx(np.sqrt(5.0) / 3.0, abs=1e-12)

    def test_random_triangles_frames(self, rng):
        verts = rng.normal(size=(300, 3))
        faces = np.arange(300).reshape(-1, 3)
        scene, _ = mesh_to_gaussians(TriangleMesh(verts, faces))
        R = quat_to_rotmat(scene.rotations)
        eye = np.eye(3)
        assert np.max(np.abs(np.swapaxes(R, 1, 2) @ R - eye)) < 1e-9
        assert np.allclose(np.linalg.det(R), 1.0, atol=1e-9)
        assert np.all(scene.scales[:, 0] == 1e-8)
        # normal axis is orthogonal to both in-plane edges
        v = TriangleMesh(verts, faces).corners()
        r1 = R[:, :, 0]
        for other in (1, 2):
            d = np.abs(np.einsum("ij,ij->i", r1, v[:, other] - v[:, 0]))
            assert d.max() < 1e-6

    def test_kernel_count_matches_triangles(self, sphere_mesh):
        scene, skipped = mesh_to_gaussians(sphere_mesh)
        assert len(scene) + skipped == len(sphere_mesh)
        assert skipped == 0

    def test_degenerate_triangle_skipped(self):
        verts = np.array([[0.0, 0, 0], [1.0, 0, 0], [2.0, 0, 0],
                          [0.0, 0, 0], [1.0, 0, 0], [0.0, 1, 0]])
        mesh = TriangleMesh(verts, np.array([[0, 1, 2], [3, 4, 5]]))
        scene, skipped = mesh_to_gaussians(mesh)
        assert skipped == 1 and len(scene) == 1

    def test_two_sigma_footprint_covers_spans(self, rng):
        verts = rng.normal(size=(30, 3))
        faces = np.arange(30).reshape(-1, 3)
        mesh = TriangleMesh(verts, faces)
        scene, _ = mesh_to_gaussians(mesh)
        v = mesh.corners()
        k = v.mean(axis=1)
        assert np.allclose(scene.scales[:, 1], np.linalg.norm(v[:, 1] - k, axis=1))


class TestMeshIO:
    def test_stl_round_trip(self, sphere_mesh, tmp_path):
        path = tmp_path / "m.stl"
        save_stl(sphere_mesh, path)
        back = load_stl(path)
        assert len(back) == len(sphere_mesh)
        assert np.max(np.abs(back.corners() - sphere_mesh.corners())) < 1e-6

    def test_obj_round_trip(self, sphere_mesh, tmp_path):
        path = tmp_path / "m.obj"
        save_obj(sphere_mesh, path)
        back = load_obj(path)
        assert len(back) == len(sphere_mesh)
        assert np.max(np.abs(back.vertices - sphere_mesh.vertices)) < 1e-6
        assert np.array_equal(back.triangles, sphere_mesh.triangles)

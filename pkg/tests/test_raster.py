import numpy as np
import pytest

from jacfield import raster
from jacfield.mesh import Mesh
from jacfield.primitives import icosahedron

from conftest import rel_err


def random_soup(rng, n_faces, spread=1.0):
    verts = rng.uniform(-spread, spread, (n_faces * 3, 3))
    faces = np.arange(n_faces * 3).reshape(n_faces, 3)
    return Mesh(verts, faces)


class TestCameras:
    def test_deterministic_for_seed(self):
        a = raster.sample_cameras(4, 7, 2.5, 45.0, 64)
        b = raster.sample_cameras(4, 7, 2.5, 45.0, 64)
        assert a == b

    def test_radius_and_target(self):
        for cam in raster.sample_cameras(9, 3, 3.25, 50.0, 64):
            assert np.linalg.norm(cam.eye) == pytest.approx(3.25, abs=1e-9)
            assert cam.target == (0.0, 0.0, 0.0)

    def test_elevation_bounds(self):
        cams = raster.sample_cameras(64, 0, 2.0, 45.0, 64)
        for cam in cams:
            elevation = np.rad2deg(np.arcsin(cam.eye[1] / 2.0))
            assert -60.0 - 1e-9 <= elevation <= 60.0 + 1e-9

    def test_different_seeds_differ(self):
        assert raster.sample_cameras(4, 1, 2.5, 45.0, 64) != raster.sample_cameras(
            4, 2, 2.5, 45.0, 64
        )

    def test_camera_validation(self):
        with pytest.raises(raster.RasterError):
            raster.Camera((0, 0, 1), (0, 0, 1), (0, 1, 0), 45.0, 64)
        with pytest.raises(raster.RasterError):
            raster.Camera((0, 0, 1), (0, 0, 0), (0, 1, 0), 0.5, 64)
        with pytest.raises(raster.RasterError):
            raster.Camera((0, 0, 1), (0, 0, 0), (0, 1, 0), 45.0, 8)


class TestForwardRaster:
    def test_single_triangle_intensity_and_coverage(self, front_camera):
        m = Mesh(
            np.array([[-1.0, -1.0, 0.0], [1.0, -1.0, 0.0], [0.0, 1.2, 0.0]]),
            np.array([[0, 1, 2]]),
        )
        light = front_camera.view_direction()
        buf = raster.rasterize(m, m.vertices, front_camera, light, albedo=0.8, ambient=0.2)
        covered = buf.face_id == 0
        assert covered.sum() > 100
        n = np.array([0.0, 0.0, 1.0])
        expected = 0.8 * abs(n @ light) + 0.2
        assert np.allclose(buf.image[covered], expected, atol=1e-12)
        fid_oracle, depth_oracle = raster.coverage_oracle(m, m.vertices, front_camera)
        assert np.array_equal(buf.face_id, fid_oracle)
        assert np.allclose(buf.depth[covered], depth_oracle[covered])

    def test_coverage_matches_oracle_on_random_scenes(self, front_camera):
        rng = np.random.default_rng(42)
        for _ in range(5):
            m = random_soup(rng, int(rng.integers(3, 25)))
            buf = raster.rasterize(m, m.vertices, front_camera, (0.0, 0.0, 1.0))
            fid_oracle, _ = raster.coverage_oracle(m, m.vertices, front_camera)
            assert np.array_equal(buf.face_id, fid_oracle)

    def test_scene_behind_camera_is_background(self, front_camera):
        m = Mesh(
            np.array([[-1.0, -1.0, 5.0], [1.0, -1.0, 5.0], [0.0, 1.0, 5.0]]),
            np.array([[0, 1, 2]]),
        )  # camera at z=2.5 looks toward -z... mesh at z=5 is behind it
        buf = raster.rasterize(m, m.vertices, front_camera, (0, 0, 1), background=0.25)
        assert np.all(buf.face_id == raster.BACKGROUND_FACE)
        assert np.all(buf.image == 0.25)
        assert np.all(np.isinf(buf.depth))

    def test_zbuffer_prefers_near_face(self, front_camera):
        verts = np.array(
            [
                [-1.0, -1.0, 1.0], [1.0, -1.0, 1.0], [0.0, 1.0, 1.0],   # near (z=1)
                [-1.0, -1.0, -1.0], [1.0, -1.0, -1.0], [0.0, 1.0, -1.0],  # far
            ]
        )
        m = Mesh(verts, np.array([[3, 4, 5], [0, 1, 2]]))
        buf = raster.rasterize(m, verts, front_camera, (0, 0, 1))
        overlap = buf.face_id >= 0
        assert np.all(buf.face_id[overlap] == 1)

    def test_depth_is_order_independent_and_ties_pick_lower_index(self, front_camera):
        rng = np.random.default_rng(1)
        m = random_soup(rng, 12)
        buf = raster.rasterize(m, m.vertices, front_camera, (0, 0, 1))
        perm = rng.permutation(12)
        m2 = Mesh(m.vertices, m.faces[perm])
        buf2 = raster.rasterize(m2, m.vertices, front_camera, (0, 0, 1))
        assert np.allclose(buf.depth, buf2.depth, equal_nan=True)
        both = (buf.face_id >= 0) & (buf2.face_id >= 0)
        # new face k is old face perm[k]; ids may differ only where depths tie
        remapped = np.where(buf2.face_id >= 0, perm[buf2.face_id], -1)
        differs = both & (remapped != buf.face_id)
        assert not differs.any()

    def test_duplicate_faces_tie_goes_to_lower_index(self, front_camera):
        tri = np.array([[-1.0, -1.0, 0.0], [1.0, -1.0, 0.0], [0.0, 1.0, 0.0]])
        m = Mesh(np.vstack([tri, tri]), np.array([[3, 4, 5], [0, 1, 2]]))
        buf = raster.rasterize(m, m.vertices, front_camera, (0, 0, 1))
        covered = buf.face_id >= 0
        assert np.all(buf.face_id[covered] == 0)

    def test_barycentric_invariants(self, front_camera, unit_icosahedron):
        m = unit_icosahedron
        buf = raster.rasterize(m, m.vertices, front_camera, (0, 0, 1))
        covered = buf.face_id >= 0
        sums = buf.barycentric[covered].sum(axis=1)
        assert np.allclose(sums, 1.0, atol=1e-6)
        assert buf.barycentric[covered].min() >= -1e-6
        assert buf.barycentric[covered].max() <= 1.0 + 1e-6
        assert np.all(np.isfinite(buf.depth[covered]))
        assert np.all(np.isinf(buf.depth[~covered]))

    def test_nonfinite_vertices_rejected(self, front_camera, unit_icosahedron):
        v = unit_icosahedron.vertices.copy()
        v[0, 0] = np.inf
        with pytest.raises(raster.RasterError):
            raster.rasterize(unit_icosahedron, v, front_camera, (0, 0, 1))


class TestBackward:
    def test_zero_upstream(self, front_camera, unit_icosahedron):
        m = unit_icosahedron
        light = front_camera.view_direction()
        buf = raster.rasterize(m, m.vertices, front_camera, light)
        g = raster.rasterize_backward(
            m, m.vertices, front_camera, buf, np.zeros((64, 64)), light
        )
        assert np.all(g == 0.0)

    def test_finite_differences_on_stable_pixels(self, front_camera):
        from jacfield.checkgrad import check_raster_backward

        m = Mesh(
            np.array([[-0.5, -0.5, 0.0], [0.8, -0.4, 0.1], [0.0, 0.7, -0.1]]),
            np.array([[0, 1, 2]]),
        )
        light = np.array([0.3, 0.2, 0.9])
        light /= np.linalg.norm(light)
        err, used = check_raster_backward(m, front_camera, light, trials=5, seed=1)
        assert used >= 3
        assert err < 1e-3

    def test_finite_differences_icosahedron(self, front_camera, unit_icosahedron):
        from jacfield.checkgrad import check_raster_backward

        err, used = check_raster_backward(
            unit_icosahedron, front_camera, front_camera.view_direction(), trials=5, seed=3
        )
        assert used >= 3
        assert err < 1e-3

    def test_uniform_translation_has_zero_gradient(self, front_camera):
        # intensity depends only on the normal, so translating the triangle
        # parallel to the image plane changes nothing
        m = Mesh(
            np.array([[-0.6, -0.6, 0.0], [0.6, -0.6, 0.0], [0.0, 0.8, 0.0]]),
            np.array([[0, 1, 2]]),
        )
        light = np.array([0.0, 0.0, 1.0])
        buf = raster.rasterize(m, m.vertices, front_camera, light)
        rng = np.random.default_rng(2)
        g = raster.rasterize_backward(
            m, m.vertices, front_camera, buf, rng.standard_normal((64, 64)), light
        )
        for direction in ([1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.3, -0.7, 0.0]):
            deriv = float(np.sum(g * np.asarray(direction)[None, :]))
            assert deriv == pytest.approx(0.0, abs=1e-12)


class TestVertexViewMap:
    def test_patch_grid_arithmetic(self):
        assert raster.patch_grid_size(224, 32, 32) == 7
        assert raster.patch_grid_size(224, 32, 16) == 13
        assert raster.nearest_patch([5], [9], 224, 32, 32)[0] == 0
        assert raster.nearest_patch([31], [31], 224, 32, 16)[0] == 14  # row 1, col 1

    def test_stride_must_divide(self):
        with pytest.raises(raster.RasterError):
            raster.patch_grid_size(224, 32, 15)

    def test_occluded_vertex_invisible(self, front_camera):
        verts = np.array(
            [
                [-0.5, -0.5, 1.0], [0.5, -0.5, 1.0], [0.0, 0.5, 1.0],      # near wall
                [-0.05, -0.05, -1.0], [0.05, -0.05, -1.0], [0.0, 0.05, -1.0],  # far tri
            ]
        )
        m = Mesh(verts, np.array([[0, 1, 2], [3, 4, 5]]))
        buf = raster.rasterize(m, verts, front_camera, (0, 0, 1))
        vvm = raster.vertex_view_map(m, verts, front_camera, buf, 16, 16)
        assert vvm.visible[0] and vvm.visible[1] and vvm.visible[2]
        assert not vvm.visible[3] and not vvm.visible[4] and not vvm.visible[5]

    def test_visible_vertices_have_valid_pixel_and_patch(self, front_camera, unit_icosahedron):
        m = unit_icosahedron
        buf = raster.rasterize(m, m.vertices, front_camera, (0, 0, 1))
        vvm = raster.vertex_view_map(m, m.vertices, front_camera, buf, 16, 16)
        assert vvm.visible.any()
        grid = raster.patch_grid_size(64, 16, 16)
        vis = np.nonzero(vvm.visible)[0]
        assert np.all(vvm.patch[vis] >= 0)
        assert np.all(vvm.patch[vis] < grid * grid)
        assert np.all(vvm.pixel[vis] >= 0)
        assert np.all(vvm.pixel[vis] < 64)
        hidden = np.nonzero(~vvm.visible)[0]
        assert np.all(vvm.patch[hidden] == -1)

    def test_map_is_deterministic(self, front_camera, unit_icosahedron):
        m = unit_icosahedron
        buf = raster.rasterize(m, m.vertices, front_camera, (0, 0, 1))
        a = raster.vertex_view_map(m, m.vertices, front_camera, buf, 16, 8)
        b = raster.vertex_view_map(m, m.vertices, front_camera, buf, 16, 8)
        assert np.array_equal(a.patch, b.patch)
        assert np.array_equal(a.visible, b.visible)


class TestPGM:
    def test_header_and_quantization(self, tmp_path):
        img = np.array([[0.0, 1.0], [0.5, 0.25]])
        p = tmp_path / "x.pgm"
        raster.write_pgm(img, p)
        data = p.read_bytes()
        assert data.startswith(b"P5\n2 2\n255\n")
        body = data[len(b"P5\n2 2\n255\n"):]
        assert list(body) == [0, 255, 128, 64]  # round(255 v)

    def test_out_of_range_clipped(self, tmp_path):
        p = tmp_path / "y.pgm"
        raster.write_pgm(np.array([[-0.5, 2.0]]), p)
        assert list(p.read_bytes()[-2:]) == [0, 255]

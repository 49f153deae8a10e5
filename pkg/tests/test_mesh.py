import numpy as np
import pytest

from jacfield.mesh import (
    DegenerateFaceError,
    Mesh,
    MeshError,
    NonTriangleFaceError,
    face_geometry,
    load_obj,
    normalize_unit_sphere,
    save_obj,
)
from jacfield.primitives import cube, icosahedron, tetrahedron


def write(tmp_path, text, name="m.obj"):
    p = tmp_path / name
    p.write_text(text)
    return p


class TestLoadObj:
    def test_tetrahedron_roundtrip_counts(self, tmp_path):
        p = tmp_path / "tet.obj"
        save_obj(tetrahedron(), p)
        m = load_obj(p)
        assert m.n_vertices == 4
        assert m.n_faces == 4

    def test_repeated_index_rejected(self, tmp_path):
        p = write(tmp_path, "v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 1 2\n")
        with pytest.raises(DegenerateFaceError):
            load_obj(p)

    def test_quad_rejected(self, tmp_path):
        p = write(tmp_path, "v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf 1 2 3 4\n")
        with pytest.raises(NonTriangleFaceError) as exc:
            load_obj(p)
        assert exc.value.line_no == 5

    def test_parse_error_reports_line(self, tmp_path):
        p = write(tmp_path, "v 0 0 0\nv 1 0 zebra\n")
        with pytest.raises(MeshError) as exc:
            load_obj(p)
        assert ":2:" in str(exc.value)

    def test_zero_area_face_rejected(self, tmp_path):
        p = write(tmp_path, "v 0 0 0\nv 1 0 0\nv 2 0 0\nf 1 2 3\n")
        with pytest.raises(DegenerateFaceError) as exc:
            load_obj(p)
        assert 0 in exc.value.face_indices

    def test_texture_normal_records_ignored(self, tmp_path):
        p = write(
            tmp_path,
            "v 0 0 0\nv 1 0 0\nv 0 1 0\nvt 0 0\nvn 0 0 1\nf 1/1/1 2/1/1 3/1/1\n",
        )
        m = load_obj(p)
        assert m.n_faces == 1

    def test_vertex_and_face_order_preserved(self, tmp_path):
        p = write(tmp_path, "v 3 0 0\nv 0 5 0\nv 0 0 7\nv 1 1 1\nf 2 3 4\nf 1 2 3\n")
        m = load_obj(p)
        assert m.vertices[1, 1] == 5.0
        assert m.faces.tolist() == [[1, 2, 3], [0, 1, 2]]

    def test_save_load_save_is_exact(self, tmp_path):
        rng = np.random.default_rng(3)
        verts = rng.standard_normal((30, 3)) * np.pi
        faces = np.array([[i, i + 1, i + 2] for i in range(0, 27, 3)])
        p1, p2 = tmp_path / "a.obj", tmp_path / "b.obj"
        save_obj(verts, p1, faces)
        m1 = load_obj(p1)
        save_obj(m1, p2)
        assert p1.read_text() == p2.read_text()
        m2 = load_obj(p2)
        assert np.array_equal(m1.vertices, m2.vertices)
        assert np.array_equal(m1.faces, m2.faces)


class TestNormalize:
    def test_offset_cube_analytic(self):
        base = cube()
        verts = (base.vertices - 0.5) * 4.0 + np.array([5.0, 0.0, 0.0])  # corners +-2 at (5,0,0)
        m = Mesh(verts, base.faces)
        out, scale, center = normalize_unit_sphere(m)
        assert np.allclose(center, [5.0, 0.0, 0.0], atol=1e-9)
        assert scale == pytest.approx(1.0 / (2.0 * np.sqrt(3.0)), abs=1e-12)
        radii = np.linalg.norm(out.vertices, axis=1)
        assert radii.max() == pytest.approx(1.0, abs=1e-9)
        assert np.allclose(out.vertices.mean(axis=0), 0.0, atol=1e-9)

    def test_idempotent(self):
        m1, _, _ = normalize_unit_sphere(icosahedron())
        m2, scale, center = normalize_unit_sphere(m1)
        assert np.allclose(m1.vertices, m2.vertices, atol=1e-9)
        assert scale == pytest.approx(1.0, abs=1e-9)
        assert np.allclose(center, 0.0, atol=1e-9)

    def test_inverse_transform_recovers_input(self):
        rng = np.random.default_rng(11)
        verts = rng.standard_normal((12, 3)) * 3.0 + [1.0, -2.0, 0.5]
        m = Mesh(verts, icosahedron().faces)
        out, scale, center = normalize_unit_sphere(m)
        assert np.allclose(out.vertices / scale + center, verts, atol=1e-12)

    def test_degenerate_inputs_rejected(self):
        single = Mesh(np.zeros((1, 3)), np.zeros((0, 3), dtype=int))
        with pytest.raises(MeshError):
            normalize_unit_sphere(single)
        empty = Mesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=int))
        with pytest.raises(MeshError):
            normalize_unit_sphere(empty)


class TestFaceGeometry:
    def test_right_triangle(self):
        m = Mesh(np.array([[0.0, 0, 0], [1, 0, 0], [0, 1, 0]]), np.array([[0, 1, 2]]))
        geom = face_geometry(m)
        assert geom.areas[0] == pytest.approx(0.5)
        assert np.allclose(geom.normals[0], [0, 0, 1])

    def test_scaled_triangle_area(self):
        m = Mesh(np.array([[0.0, 0, 0], [2, 0, 0], [0, 2, 0]]), np.array([[0, 1, 2]]))
        assert face_geometry(m).areas[0] == pytest.approx(2.0)

    def test_icosahedron_closed_form_area(self):
        m = icosahedron()  # circumradius 1
        geom = face_geometry(m)
        edge = 4.0 / np.sqrt(10.0 + 2.0 * np.sqrt(5.0))
        expected = 5.0 * np.sqrt(3.0) * edge**2
        assert np.allclose(geom.areas, geom.areas[0], atol=1e-12)
        assert geom.areas.sum() == pytest.approx(expected, abs=1e-9)

    def test_basis_orthonormal_and_tangent(self):
        geom = face_geometry(icosahedron())
        for arr in (geom.normals, geom.basis_u, geom.basis_v):
            assert np.allclose(np.linalg.norm(arr, axis=1), 1.0, atol=1e-9)
        assert np.allclose(np.sum(geom.basis_u * geom.basis_v, axis=1), 0.0, atol=1e-9)
        assert np.allclose(np.sum(geom.basis_u * geom.normals, axis=1), 0.0, atol=1e-9)
        assert np.allclose(np.sum(geom.basis_v * geom.normals, axis=1), 0.0, atol=1e-9)

    def test_normal_flips_with_winding(self):
        m = icosahedron()
        flipped = Mesh(m.vertices, m.faces[:, [0, 2, 1]])
        assert np.allclose(face_geometry(flipped).normals, -face_geometry(m).normals)


class TestMeshValidation:
    def test_out_of_range_index(self):
        with pytest.raises(MeshError):
            Mesh(np.zeros((3, 3)), np.array([[0, 1, 5]]))

    def test_immutable(self):
        m = tetrahedron()
        with pytest.raises(ValueError):
            m.vertices[0, 0] = 9.0

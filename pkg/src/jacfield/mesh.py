"""Triangle mesh container, Wavefront OBJ I/O, and per-face differential geometry."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

# Faces whose area falls below this (relative to squared bounding radius)
# would make the gradient operator blow up, so they are rejected at load.
DEGENERATE_AREA = 1e-12


class MeshError(Exception):
    """Base class for mesh construction and I/O failures."""


class ObjParseError(MeshError):
    def __init__(self, path, line_no, message):
        super().__init__(f"{path}:{line_no}: {message}")
        self.line_no = line_no


class NonTriangleFaceError(MeshError):
    def __init__(self, path, line_no, n_verts):
        super().__init__(
            f"{path}:{line_no}: face has {n_verts} vertices; only triangles are "
            "supported (quads are not auto-triangulated)"
        )
        self.line_no = line_no


class DegenerateFaceError(MeshError):
    def __init__(self, face_indices, reason):
        super().__init__(f"degenerate faces {list(face_indices)}: {reason}")
        self.face_indices = list(face_indices)


@dataclass(frozen=True)
class Mesh:
    """Immutable triangle mesh: vertices (n, 3) float64 and faces (F, 3) int64.

    Faces follow the counter-clockwise orientation convention. Construction
    validates index bounds, repeated indices within a face, and face areas
    (relative to the bounding radius, so the check is scale-invariant).
    """

    vertices: np.ndarray
    faces: np.ndarray

    def __post_init__(self):
        v = np.ascontiguousarray(np.asarray(self.vertices, dtype=np.float64))
        f = np.ascontiguousarray(np.asarray(self.faces, dtype=np.int64))
        if v.ndim != 2 or v.shape[1] != 3:
            raise MeshError(f"vertices must be (n, 3), got {v.shape}")
        if f.ndim != 2 or f.shape[1] != 3:
            raise MeshError(f"faces must be (F, 3), got {f.shape}")
        if not np.all(np.isfinite(v)):
            raise MeshError("non-finite vertex coordinates")
        if f.size and (f.min() < 0 or f.max() >= len(v)):
            raise MeshError("face index out of range")
        repeated = (f[:, 0] == f[:, 1]) | (f[:, 1] == f[:, 2]) | (f[:, 0] == f[:, 2])
        if np.any(repeated):
            raise DegenerateFaceError(np.nonzero(repeated)[0], "repeated vertex index")
        if f.size:
            areas = _face_areas(v, f)
            radius = _bounding_radius(v)
            tiny = np.nonzero(areas <= DEGENERATE_AREA * max(radius, 1e-30) ** 2)[0]
            if tiny.size:
                raise DegenerateFaceError(tiny, "face area below degeneracy threshold")
        v.setflags(write=False)
        f.setflags(write=False)
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "faces", f)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_faces(self) -> int:
        return len(self.faces)


@dataclass(frozen=True)
class FaceGeometry:
    """Per-face area, unit normal, and an orthonormal in-plane basis."""

    areas: np.ndarray    # (F,)
    normals: np.ndarray  # (F, 3), right-hand rule from CCW winding
    basis_u: np.ndarray  # (F, 3)
    basis_v: np.ndarray  # (F, 3), = normal x basis_u


def _face_areas(vertices, faces):
    e1 = vertices[faces[:, 1]] - vertices[faces[:, 0]]
    e2 = vertices[faces[:, 2]] - vertices[faces[:, 0]]
    return 0.5 * np.linalg.norm(np.cross(e1, e2), axis=1)


def _bounding_radius(vertices):
    center = vertices.mean(axis=0)
    return float(np.linalg.norm(vertices - center, axis=1).max())


def load_obj(path) -> Mesh:
    """Read an ASCII Wavefront OBJ with triangle faces.

    Only ``v`` and ``f`` records are used; texture/normal records are ignored.
    Indices are 1-based. Quads (or larger polygons) raise NonTriangleFaceError,
    and degenerate faces raise DegenerateFaceError rather than being dropped.
    """
    path = Path(path)
    vertices = []
    faces = []
    with open(path, "r") as fh:
        for line_no, raw in enumerate(fh, start=1):
            tokens = raw.split()
            if not tokens or tokens[0].startswith("#"):
                continue
            key = tokens[0]
            if key == "v":
                if len(tokens) < 4:
                    raise ObjParseError(path, line_no, "vertex needs 3 coordinates")
                try:
                    vertices.append([float(t) for t in tokens[1:4]])
                except ValueError as exc:
                    raise ObjParseError(path, line_no, f"bad coordinate: {exc}")
            elif key == "f":
                refs = tokens[1:]
                if len(refs) != 3:
                    raise NonTriangleFaceError(path, line_no, len(refs))
                idx = []
                for ref in refs:
                    head = ref.split("/")[0]
                    try:
                        i = int(head)
                    except ValueError:
                        raise ObjParseError(path, line_no, f"bad face index {ref!r}")
                    if i <= 0:
                        raise ObjParseError(
                            path, line_no, "only positive 1-based indices supported"
                        )
                    idx.append(i - 1)
                faces.append(idx)
            # vt, vn, o, g, s, usemtl, mtllib: ignored
    if not vertices:
        raise ObjParseError(path, 0, "no vertices found")
    varr = np.asarray(vertices, dtype=np.float64)
    farr = np.asarray(faces, dtype=np.int64).reshape(-1, 3)
    if farr.size and farr.max() >= len(varr):
        bad = np.nonzero((farr >= len(varr)).any(axis=1))[0][0]
        raise ObjParseError(path, 0, f"face {bad} references missing vertex")
    return Mesh(varr, farr)


def save_obj(mesh_or_vertices, path, faces=None):
    """Write vertices/faces as ASCII OBJ with 9 significant digits."""
    if faces is None:
        vertices, faces = mesh_or_vertices.vertices, mesh_or_vertices.faces
    else:
        vertices = mesh_or_vertices
    with open(path, "w") as fh:
        for x, y, z in np.asarray(vertices, dtype=np.float64):
            fh.write(f"v {x:.9g} {y:.9g} {z:.9g}\n")
        for a, b, c in np.asarray(faces):
            fh.write(f"f {a + 1} {b + 1} {c + 1}\n")


def normalize_unit_sphere(mesh: Mesh):
    """Center the vertex centroid at the origin and scale the farthest vertex to radius 1.

    Returns ``(normalized_mesh, scale, center)`` where the inverse transform is
    ``original = normalized / scale + center``. Idempotent to within roundoff.
    """
    if mesh.n_vertices == 0:
        raise MeshError("empty mesh")
    center = mesh.vertices.mean(axis=0)
    radius = float(np.linalg.norm(mesh.vertices - center, axis=1).max())
    if radius <= 0.0:
        raise MeshError("mesh has zero spatial extent")
    scale = 1.0 / radius
    out = Mesh((mesh.vertices - center) * scale, mesh.faces)
    return out, scale, center


def face_geometry(mesh: Mesh, vertices: np.ndarray | None = None) -> FaceGeometry:
    """Area, unit normal and orthonormal tangent basis for every face.

    ``vertices`` overrides the mesh's own positions (same topology), which is
    how geometry of a deformed state is evaluated.
    """
    v = mesh.vertices if vertices is None else np.asarray(vertices, dtype=np.float64)
    f = mesh.faces
    e1 = v[f[:, 1]] - v[f[:, 0]]
    e2 = v[f[:, 2]] - v[f[:, 0]]
    cr = np.cross(e1, e2)
    cr_norm = np.linalg.norm(cr, axis=1)
    areas = 0.5 * cr_norm
    normals = cr / cr_norm[:, None]
    basis_u = e1 / np.linalg.norm(e1, axis=1)[:, None]
    basis_v = np.cross(normals, basis_u)
    return FaceGeometry(areas=areas, normals=normals, basis_u=basis_u, basis_v=basis_v)

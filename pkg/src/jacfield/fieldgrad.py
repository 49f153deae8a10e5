"""Per-face Jacobian fields and the area-weighted Poisson solve that turns them
back into vertex positions, with adjoint gradients through the solve.

The deformation is parameterized by one 3x3 matrix per face (row k of the
matrix is the target gradient of output coordinate k over that face). Vertex
positions are recovered as the area-weighted least-squares fit of the
piecewise-linear map's gradients to the prescribed field, which is a sparse
linear solve per coordinate. The system matrix depends only on the source
mesh, so its factorization is computed once and reused every iteration.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.csgraph as csgraph
import scipy.sparse.linalg as spla

from .mesh import FaceGeometry, Mesh, face_geometry


class FieldGradError(Exception):
    pass


class DisconnectedMeshError(FieldGradError):
    def __init__(self, n_components):
        super().__init__(
            f"mesh has {n_components} connected components; the centroid "
            "constraint is ambiguous across components, so disconnected meshes "
            "are rejected"
        )
        self.n_components = n_components


def identity_field(n_faces: int) -> np.ndarray:
    """The no-deformation Jacobian field: one identity matrix per face."""
    return np.broadcast_to(np.eye(3), (n_faces, 3, 3)).copy()


@dataclass
class PoissonSystem:
    """Assembled gradient operator and cached factorization for one source mesh.

    ``gradient_op`` maps a per-vertex scalar to stacked per-face 3D gradients
    (shape 3|F| x n). ``laplacian`` is G^T A G with A the diagonal of face
    areas repeated three times. The translation nullspace is handled by
    factorizing the system with vertex 0 eliminated (the reduced matrix is
    positive definite for a connected mesh) and re-centering solutions onto
    the source centroid afterwards; both steps together return the minimizer
    whose vertex mean equals the source's.
    """

    mesh: Mesh
    geom: FaceGeometry
    gradient_op: sp.csr_matrix
    area_weights: np.ndarray  # (3|F|,) diagonal entries
    laplacian: sp.csr_matrix
    source_centroid: np.ndarray
    _solver: object = field(repr=False, default=None)

    @property
    def n_vertices(self) -> int:
        return self.mesh.n_vertices

    @property
    def n_faces(self) -> int:
        return self.mesh.n_faces

    def solve_centered(self, rhs: np.ndarray, target_mean: float) -> np.ndarray:
        """Solve L x = rhs (rhs in range(L)) and shift x to the given mean."""
        x = np.empty(self.n_vertices)
        x[0] = 0.0
        x[1:] = self._solver(rhs[1:])
        return x + (target_mean - x.mean())


def build_gradient_operator(mesh: Mesh, geom: FaceGeometry | None = None) -> PoissonSystem:
    """Assemble the per-face gradient operator, Laplacian, and factorization.

    The gradient of vertex v's hat function on face f is
    (n_f x e_opp) / (2 area_f), with e_opp the edge opposite v oriented CCW.
    Raises DisconnectedMeshError for meshes with more than one component.
    """
    if geom is None:
        geom = face_geometry(mesh)
    v, f = mesh.vertices, mesh.faces
    n, F = mesh.n_vertices, mesh.n_faces

    # edge opposite local vertex j, oriented CCW: v[j+2] - v[j+1]
    grads = np.empty((F, 3, 3))  # (face, local vertex, component)
    for j in range(3):
        e_opp = v[f[:, (j + 2) % 3]] - v[f[:, (j + 1) % 3]]
        grads[:, j, :] = np.cross(geom.normals, e_opp) / (2.0 * geom.areas)[:, None]

    rows = (3 * np.arange(F))[:, None, None] + np.arange(3)[None, None, :]  # (F,1,3)
    rows = np.broadcast_to(rows, (F, 3, 3))
    cols = np.broadcast_to(f[:, :, None], (F, 3, 3))
    G = sp.coo_matrix(
        (grads.ravel(), (rows.ravel(), cols.ravel())), shape=(3 * F, n)
    ).tocsr()

    weights = np.repeat(geom.areas, 3)
    L = (G.T @ sp.diags(weights) @ G).tocsr()
    L = ((L + L.T) * 0.5).tocsr()

    adjacency = _vertex_adjacency(mesh)
    n_comp, _ = csgraph.connected_components(adjacency, directed=False)
    if n_comp != 1:
        raise DisconnectedMeshError(n_comp)

    reduced = L[1:, 1:].tocsc()
    try:
        solver = spla.factorized(reduced)
    except RuntimeError as exc:
        raise FieldGradError(f"factorization failed (numerically degenerate mesh): {exc}")

    return PoissonSystem(
        mesh=mesh,
        geom=geom,
        gradient_op=G,
        area_weights=weights,
        laplacian=L,
        source_centroid=v.mean(axis=0),
        _solver=solver,
    )


def _vertex_adjacency(mesh: Mesh) -> sp.coo_matrix:
    f = mesh.faces
    i = np.concatenate([f[:, 0], f[:, 1], f[:, 2]])
    j = np.concatenate([f[:, 1], f[:, 2], f[:, 0]])
    data = np.ones(len(i), dtype=np.int8)
    n = mesh.n_vertices
    return sp.coo_matrix((data, (i, j)), shape=(n, n))


def _check_field(system: PoissonSystem, jacobian_field: np.ndarray) -> np.ndarray:
    jf = np.asarray(jacobian_field, dtype=np.float64)
    if jf.shape != (system.n_faces, 3, 3):
        raise FieldGradError(
            f"field shape {jf.shape} does not match mesh with {system.n_faces} faces"
        )
    if not np.all(np.isfinite(jf)):
        raise FieldGradError("non-finite entries in Jacobian field")
    return jf


def poisson_solve(system: PoissonSystem, jacobian_field: np.ndarray) -> np.ndarray:
    """Vertex positions whose per-face gradients are closest (area-weighted
    least squares) to the prescribed field, centered on the source centroid.

    Solves L x_k = G^T A s_k per coordinate k, where s_k stacks row k of every
    face matrix.
    """
    jf = _check_field(system, jacobian_field)
    G, w = system.gradient_op, system.area_weights
    out = np.empty((system.n_vertices, 3))
    for k in range(3):
        s_k = jf[:, k, :].ravel()  # per-face gradient targets for coordinate k
        rhs = G.T @ (w * s_k)
        out[:, k] = system.solve_centered(rhs, system.source_centroid[k])
    return out


def poisson_adjoint(system: PoissonSystem, upstream: np.ndarray) -> np.ndarray:
    """Back-propagate a loss gradient w.r.t. solved vertices onto the field.

    For upstream g (n, 3) this is A G L^+ (g - mean(g)) per coordinate,
    reusing the cached factorization (L is symmetric). The centering applied
    in poisson_solve makes constant upstream gradients vanish.
    """
    up = np.asarray(upstream, dtype=np.float64)
    if up.shape != (system.n_vertices, 3):
        raise FieldGradError(f"upstream shape {up.shape} != (n, 3)")
    if not np.all(np.isfinite(up)):
        raise FieldGradError("non-finite upstream gradient")
    G, w = system.gradient_op, system.area_weights
    grad = np.empty((system.n_faces, 3, 3))
    for k in range(3):
        g = up[:, k]
        g_centered = g - g.mean()
        y = system.solve_centered(g_centered, 0.0)
        grad[:, k, :] = (w * (G @ y)).reshape(-1, 3)
    return grad


def jacobians_of_map(system: PoissonSystem, vertices: np.ndarray) -> np.ndarray:
    """Actual per-face Jacobians of the piecewise-linear map given by ``vertices``."""
    v = np.asarray(vertices, dtype=np.float64)
    if v.shape != (system.n_vertices, 3):
        raise FieldGradError(f"vertex array shape {v.shape} != (n, 3)")
    G = system.gradient_op
    jac = np.empty((system.n_faces, 3, 3))
    for k in range(3):
        jac[:, k, :] = (G @ v[:, k]).reshape(-1, 3)
    return jac


def tangent_projectors(geom: FaceGeometry) -> np.ndarray:
    """I - n n^T per face: the Jacobian of the identity map on each face."""
    n = geom.normals
    return np.eye(3)[None, :, :] - n[:, :, None] * n[:, None, :]

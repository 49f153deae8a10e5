"""Procedural triangle meshes used by tests, gradient checks, and demo runs."""

from __future__ import annotations

import numpy as np

from .mesh import Mesh


def tetrahedron() -> Mesh:
    v = np.array(
        [[1.0, 1.0, 1.0], [1.0, -1.0, -1.0], [-1.0, 1.0, -1.0], [-1.0, -1.0, 1.0]]
    )
    f = np.array([[0, 1, 2], [0, 3, 1], [0, 2, 3], [1, 3, 2]])
    return Mesh(v, f)


def cube() -> Mesh:
    """Axis-aligned unit cube (12 triangles, outward CCW winding)."""
    v = np.array(
        [
            [0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0],
            [0, 0, 1], [1, 0, 1], [1, 1, 1], [0, 1, 1],
        ],
        dtype=np.float64,
    )
    f = np.array(
        [
            [0, 2, 1], [0, 3, 2],  # z = 0
            [4, 5, 6], [4, 6, 7],  # z = 1
            [0, 1, 5], [0, 5, 4],  # y = 0
            [2, 3, 7], [2, 7, 6],  # y = 1
            [1, 2, 6], [1, 6, 5],  # x = 1
            [3, 0, 4], [3, 4, 7],  # x = 0
        ]
    )
    return Mesh(v, f)


def icosahedron() -> Mesh:
    """Regular icosahedron inscribed in the unit sphere."""
    phi = (1.0 + np.sqrt(5.0)) / 2.0
    v = np.array(
        [
            [-1, phi, 0], [1, phi, 0], [-1, -phi, 0], [1, -phi, 0],
            [0, -1, phi], [0, 1, phi], [0, -1, -phi], [0, 1, -phi],
            [phi, 0, -1], [phi, 0, 1], [-phi, 0, -1], [-phi, 0, 1],
        ],
        dtype=np.float64,
    )
    v /= np.linalg.norm(v[0])
    f = np.array(
        [
            [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
            [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
            [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
            [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
        ]
    )
    return Mesh(v, f)


def icosphere(subdivisions: int = 2) -> Mesh:
    """Icosahedron with ``subdivisions`` rounds of midpoint subdivision,
    reprojected to the unit sphere. Face count is 20 * 4**subdivisions
    (subdivisions=3 gives 1280 faces)."""
    base = icosahedron()
    verts = [tuple(p) for p in base.vertices]
    faces = base.faces.tolist()
    for _ in range(subdivisions):
        midpoint_cache = {}
        new_faces = []

        def midpoint(i, j):
            key = (min(i, j), max(i, j))
            if key not in midpoint_cache:
                p = np.asarray(verts[i]) + np.asarray(verts[j])
                p /= np.linalg.norm(p)
                midpoint_cache[key] = len(verts)
                verts.append(tuple(p))
            return midpoint_cache[key]

        for a, b, c in faces:
            ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
            new_faces += [[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]
        faces = new_faces
    return Mesh(np.asarray(verts, dtype=np.float64), np.asarray(faces))


def uv_sphere(segments: int = 25, rings: int = 11, radius: float = 1.0) -> Mesh:
    """Latitude/longitude sphere. Face count = segments * (2*rings - 2);
    segments=25, rings=11 gives exactly 500 faces."""
    verts = [np.array([0.0, radius, 0.0])]
    for r in range(1, rings):
        theta = np.pi * r / rings
        for s in range(segments):
            phi = 2.0 * np.pi * s / segments
            verts.append(
                radius
                * np.array(
                    [np.sin(theta) * np.cos(phi), np.cos(theta), np.sin(theta) * np.sin(phi)]
                )
            )
    verts.append(np.array([0.0, -radius, 0.0]))
    south = len(verts) - 1

    def ring_vert(r, s):
        return 1 + (r - 1) * segments + (s % segments)

    faces = []
    for s in range(segments):
        faces.append([0, ring_vert(1, s + 1), ring_vert(1, s)])
    for r in range(1, rings - 1):
        for s in range(segments):
            a, b = ring_vert(r, s), ring_vert(r, s + 1)
            c, d = ring_vert(r + 1, s), ring_vert(r + 1, s + 1)
            faces.append([a, b, d])
            faces.append([a, d, c])
    for s in range(segments):
        faces.append([south, ring_vert(rings - 1, s), ring_vert(rings - 1, s + 1)])
    return Mesh(np.asarray(verts), np.asarray(faces))


def torus(major_radius: float = 1.0, minor_radius: float = 0.35,
          major_segments: int = 24, minor_segments: int = 12) -> Mesh:
    verts = []
    for i in range(major_segments):
        u = 2.0 * np.pi * i / major_segments
        for j in range(minor_segments):
            v = 2.0 * np.pi * j / minor_segments
            r = major_radius + minor_radius * np.cos(v)
            verts.append([r * np.cos(u), minor_radius * np.sin(v), r * np.sin(u)])

    def vid(i, j):
        return (i % major_segments) * minor_segments + (j % minor_segments)

    faces = []
    for i in range(major_segments):
        for j in range(minor_segments):
            a, b = vid(i, j), vid(i + 1, j)
            c, d = vid(i + 1, j + 1), vid(i, j + 1)
            faces.append([a, b, c])
            faces.append([a, c, d])
    return Mesh(np.asarray(verts), np.asarray(faces))


def quadruped(subdivisions: int = 3) -> Mesh:
    """Crude four-legged animal: an icosphere stretched into a body with four
    leg bulges and a neck/head bump, all via smooth radial displacement so the
    mesh stays a connected manifold."""
    base = icosphere(subdivisions)
    v = base.vertices.copy()
    # elongate along x, flatten slightly along y
    v[:, 0] *= 1.6
    v[:, 1] *= 0.9

    def bump(center, sigma, direction, amount):
        w = np.exp(-np.sum((v - center) ** 2, axis=1) / (2.0 * sigma**2))
        return w[:, None] * np.asarray(direction) * amount

    down = [0.0, -1.0, 0.0]
    for sx in (-1.0, 1.0):
        for sz in (-1.0, 1.0):
            v += bump([sx * 0.9, -0.6, sz * 0.45], 0.35, down, 0.9)
    # neck + head
    v += bump([1.4, 0.5, 0.0], 0.45, [0.7, 1.0, 0.0], 0.8)
    return Mesh(v, base.faces)

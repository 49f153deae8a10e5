"""Geometric quality metrics: self-intersection ratio over non-adjacent face
pairs (BVH-accelerated, with an all-pairs oracle for validation) and
deviation of the realized map's Jacobians from the identity."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .fieldgrad import PoissonSystem, jacobians_of_map, tangent_projectors
from .mesh import Mesh

# Epsilon for coplanarity/segment predicates, relative to the bounding radius
# so the decision is invariant under rigid motion and uniform scaling.
# Ties resolve toward "no intersection".
PREDICATE_EPS = 1e-10
PAIR_CAP = 1000
_CHUNK = 65536


@dataclass
class IntersectionReport:
    intersecting_faces: int
    total_faces: int
    pairs: list = field(default_factory=list)
    pairs_truncated: bool = False

    @property
    def ratio(self) -> float:
        return self.intersecting_faces / self.total_faces if self.total_faces else 0.0

    def to_dict(self) -> dict:
        return {
            "intersecting_faces": self.intersecting_faces,
            "total_faces": self.total_faces,
            "ratio": self.ratio,
            "pairs": [[int(a), int(b)] for a, b in self.pairs],
            "pairs_truncated": self.pairs_truncated,
        }


@dataclass
class DeviationSummary:
    mean: float
    max: float
    hist_counts: np.ndarray
    hist_edges: np.ndarray


def self_intersection_ratio(mesh: Mesh, vertices: np.ndarray | None = None,
                            use_bvh: bool = True) -> IntersectionReport:
    """Fraction of faces with a non-degenerate intersection against any
    non-adjacent face (shared vertex or edge. i.e. any shared index, excluded;
    coplanar overlaps counted)."""
    pairs = intersecting_pairs(mesh, vertices, use_bvh=use_bvh)
    flagged = set()
    for a, b in pairs:
        flagged.add(int(a))
        flagged.add(int(b))
    report_pairs = [tuple(p) for p in pairs[:PAIR_CAP]]
    return IntersectionReport(
        intersecting_faces=len(flagged),
        total_faces=mesh.n_faces,
        pairs=report_pairs,
        pairs_truncated=len(pairs) > PAIR_CAP,
    )


def intersecting_pairs(mesh: Mesh, vertices: np.ndarray | None = None,
                       use_bvh: bool = True) -> list:
    """Sorted list of non-adjacent face-index pairs (i < j) that intersect."""
    v = mesh.vertices if vertices is None else np.asarray(vertices, dtype=np.float64)
    faces = mesh.faces
    F = len(faces)
    if F < 2:
        return []
    tris = v[faces]  # (F, 3, 3)
    centroid = v.mean(axis=0)
    scale = max(float(np.linalg.norm(v - centroid, axis=1).max()), 1e-30)
    eps = PREDICATE_EPS * scale

    if use_bvh:
        cand_i, cand_j = _bvh_candidate_pairs(tris, eps)
    else:
        cand_i, cand_j = np.triu_indices(F, k=1)

    # adjacency exclusion: any shared vertex index
    fi, fj = faces[cand_i], faces[cand_j]
    shared = np.zeros(len(cand_i), dtype=bool)
    for a in range(3):
        for b in range(3):
            shared |= fi[:, a] == fj[:, b]
    cand_i, cand_j = cand_i[~shared], cand_j[~shared]

    hits = []
    for start in range(0, len(cand_i), _CHUNK):
        ii = cand_i[start:start + _CHUNK]
        jj = cand_j[start:start + _CHUNK]
        mask = _tri_tri_intersect(tris[ii], tris[jj], eps, eps * scale)
        for a, b in zip(ii[mask], jj[mask]):
            hits.append((int(a), int(b)))
    hits.sort()
    return hits


def brute_force_pairs(mesh: Mesh, vertices: np.ndarray | None = None) -> list:
    """All-pairs oracle with the identical predicate; no spatial pruning."""
    return intersecting_pairs(mesh, vertices, use_bvh=False)


def _bvh_candidate_pairs(tris: np.ndarray, pad: float):
    """Face pairs whose padded AABBs overlap, via a median-split box tree."""
    lo = tris.min(axis=1) - pad
    hi = tris.max(axis=1) + pad
    F = len(tris)
    order = np.arange(F)
    # node: (lo, hi, start, end, left, right); leaves reference order[start:end]
    nodes = []

    def build(start, end):
        idx = len(nodes)
        nodes.append(None)
        sub = order[start:end]
        nlo, nhi = lo[sub].min(axis=0), hi[sub].max(axis=0)
        if end - start <= 8:
            nodes[idx] = (nlo, nhi, start, end, -1, -1)
            return idx
        axis = int(np.argmax(nhi - nlo))
        centers = (lo[sub, axis] + hi[sub, axis]) * 0.5
        mid = (end - start) // 2
        order[start:end] = sub[np.argpartition(centers, mid)]
        left = build(start, start + mid)
        right = build(start + mid, end)
        nodes[idx] = (nlo, nhi, start, end, left, right)
        return idx

    import sys
    old_limit = sys.getrecursionlimit()
    sys.setrecursionlimit(max(old_limit, 10000))
    try:
        build(0, F)
    finally:
        sys.setrecursionlimit(old_limit)

    out_i, out_j = [], []
    for f in range(F):
        qlo, qhi = lo[f], hi[f]
        stack = [0]
        while stack:
            nlo, nhi, start, end, left, right = nodes[stack.pop()]
            if np.any(qlo > nhi) or np.any(qhi < nlo):
                continue
            if left < 0:
                members = order[start:end]
                ok = members > f
                if np.any(ok):
                    members = members[ok]
                    box_ok = np.all(lo[members] <= qhi, axis=1) & np.all(
                        hi[members] >= qlo, axis=1
                    )
                    sel = members[box_ok]
                    out_i.extend([f] * len(sel))
                    out_j.extend(sel.tolist())
            else:
                stack.append(left)
                stack.append(right)
    return np.asarray(out_i, dtype=np.int64), np.asarray(out_j, dtype=np.int64)


def _tri_tri_intersect(t1, t2, eps_len, eps_area):
    """Vectorized non-degenerate triangle-triangle intersection predicate.

    Point/edge touches within epsilon do not count; coplanar area overlap does.
    """
    P = len(t1)
    result = np.zeros(P, dtype=bool)
    if P == 0:
        return result

    n1 = _unit_normal(t1)
    n2 = _unit_normal(t2)
    d2 = np.einsum("pij,pj->pi", t2 - t1[:, 0:1, :], n1)
    d1 = np.einsum("pij,pj->pi", t1 - t2[:, 0:1, :], n2)

    sep = (
        np.all(d2 > eps_len, axis=1) | np.all(d2 < -eps_len, axis=1)
        | np.all(d1 > eps_len, axis=1) | np.all(d1 < -eps_len, axis=1)
    )
    coplanar = np.all(np.abs(d1) <= eps_len, axis=1) & np.all(np.abs(d2) <= eps_len, axis=1)

    straddle = ~sep & ~coplanar
    if np.any(straddle):
        result[straddle] = _interval_overlap(
            t1[straddle], t2[straddle], d1[straddle], d2[straddle],
            n1[straddle], n2[straddle], eps_len,
        )
    if np.any(coplanar):
        result[coplanar] = _coplanar_overlap(
            t1[coplanar], t2[coplanar], n1[coplanar], eps_area
        )
    return result


def _unit_normal(tris):
    cr = np.cross(tris[:, 1] - tris[:, 0], tris[:, 2] - tris[:, 0])
    norm = np.linalg.norm(cr, axis=1)
    norm = np.where(norm < 1e-300, 1.0, norm)
    return cr / norm[:, None]


def _interval_overlap(t1, t2, d1, d2, n1, n2, eps):
    """Moller-style interval test on the plane-intersection line."""
    line = np.cross(n1, n2)
    ln = np.linalg.norm(line, axis=1)
    valid = ln > 1e-12  # near-parallel, non-coplanar slivers resolve to "no"
    line = line / np.where(valid, ln, 1.0)[:, None]

    a1, b1 = _crossing_interval(t1, d1, line, eps)
    a2, b2 = _crossing_interval(t2, d2, line, eps)
    overlap = np.minimum(b1, b2) - np.maximum(a1, a2)
    return valid & (overlap > eps)


def _crossing_interval(tri, dist, line, eps):
    """Projection interval of a triangle's crossing of the other's plane.

    Candidates are edge/plane crossing points (strictly opposite signed
    distances) and vertices lying on the plane (|distance| <= eps).
    """
    proj = np.einsum("pij,pj->pi", tri, line)  # (P, 3)
    P = len(tri)
    cand = np.full((P, 6), np.nan)
    valid = np.zeros((P, 6), dtype=bool)
    edges = [(0, 1), (1, 2), (2, 0)]
    for e, (i, j) in enumerate(edges):
        di, dj = dist[:, i], dist[:, j]
        ok = (di * dj < 0.0) & (np.abs(di) > eps) & (np.abs(dj) > eps)
        denom = np.where(ok, di - dj, 1.0)
        t = proj[:, i] + (proj[:, j] - proj[:, i]) * di / denom
        cand[:, e] = t
        valid[:, e] = ok
    for i in range(3):
        cand[:, 3 + i] = proj[:, i]
        valid[:, 3 + i] = np.abs(dist[:, i]) <= eps
    lo = np.where(valid, cand, np.inf).min(axis=1)
    hi = np.where(valid, cand, -np.inf).max(axis=1)
    return lo, hi


def _coplanar_overlap(t1, t2, n1, eps_area):
    """2D overlap of coplanar triangles: any proper edge crossing, or any
    vertex strictly inside the other triangle."""
    drop = np.argmax(np.abs(n1), axis=1)
    keep = np.array([[1, 2], [0, 2], [0, 1]])[drop]  # axes to keep per pair
    idx = np.arange(len(t1))[:, None, None]
    u = t1[idx, np.arange(3)[None, :, None], keep[:, None, :]]
    v = t2[idx, np.arange(3)[None, :, None], keep[:, None, :]]

    hit = np.zeros(len(t1), dtype=bool)
    for i in range(3):
        for j in range(3):
            hit |= _segments_cross(
                u[:, i], u[:, (i + 1) % 3], v[:, j], v[:, (j + 1) % 3], eps_area
            )
    for i in range(3):
        hit |= _point_in_tri(v[:, i], u, eps_area)
        hit |= _point_in_tri(u[:, i], v, eps_area)
    return hit


def _area2(a, b, c):
    return (b[:, 0] - a[:, 0]) * (c[:, 1] - a[:, 1]) - (b[:, 1] - a[:, 1]) * (c[:, 0] - a[:, 0])


def _segments_cross(a, b, c, d, eps_area):
    s1, s2 = _area2(a, b, c), _area2(a, b, d)
    s3, s4 = _area2(c, d, a), _area2(c, d, b)
    strict = lambda x, y: ((x > eps_area) & (y < -eps_area)) | ((x < -eps_area) & (y > eps_area))
    return strict(s1, s2) & strict(s3, s4)


def _point_in_tri(p, tri, eps_area):
    s0 = _area2(tri[:, 0], tri[:, 1], p)
    s1 = _area2(tri[:, 1], tri[:, 2], p)
    s2 = _area2(tri[:, 2], tri[:, 0], p)
    pos = (s0 > eps_area) & (s1 > eps_area) & (s2 > eps_area)
    neg = (s0 < -eps_area) & (s1 < -eps_area) & (s2 < -eps_area)
    return pos | neg


def jacobian_deviation(system: PoissonSystem, vertices: np.ndarray,
                       bins: int = 32) -> DeviationSummary:
    """Per-face Frobenius deviation of the realized map's Jacobians from the
    identity map's (each source face's tangent projector)."""
    jac = jacobians_of_map(system, vertices)
    proj = tangent_projectors(system.geom)
    dev = np.sqrt(np.sum((jac - proj) ** 2, axis=(1, 2)))
    top = float(dev.max()) if len(dev) else 0.0
    counts, edges = np.histogram(dev, bins=bins, range=(0.0, max(top, 1e-12)))
    return DeviationSummary(
        mean=float(dev.mean()) if len(dev) else 0.0,
        max=top,
        hist_counts=counts,
        hist_edges=edges,
    )

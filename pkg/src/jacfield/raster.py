"""Software rasterization: camera sampling, forward z-buffer rendering with
flat diffuse shading, vertex-to-pixel/patch maps, and reverse-mode gradients
of pixel intensities w.r.t. vertex positions.

Conventions: square images, perspective projection, image origin at the
top-left, pixel (row, col) center at continuous coordinates
(col + 0.5, row + 0.5). A pixel is covered when its center lies inside the
projected triangle (boundary inclusive); depth ties go to the lower face
index. Shading is per-face diffuse: albedo * clamp(n . light, 0, 1) + ambient,
so intensity depends on vertices only through the face normal. The backward
pass chain-rules through that normal and deliberately carries no gradient for
coverage/visibility changes (interior-gradient approximation).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .mesh import Mesh

BACKGROUND_FACE = -1
# Vertices closer than this camera depth are treated as behind the camera and
# their faces are dropped (no clipping; scenes are framed in front of cameras).
NEAR_DEPTH = 1e-6
# A vertex sits exactly on the surface its own face rasterizes, so the
# visibility z-test needs slack; scaled by the scene's bounding radius.
OCCLUSION_TOL = 1e-3

DEFAULT_ALBEDO = 0.8
DEFAULT_AMBIENT = 0.2


class RasterError(Exception):
    pass


@dataclass(frozen=True)
class Camera:
    eye: tuple
    target: tuple
    up: tuple
    fov_deg: float
    resolution: int

    def __post_init__(self):
        if np.allclose(self.eye, self.target):
            raise RasterError("camera eye coincides with target")
        if not (1.0 < self.fov_deg < 179.0):
            raise RasterError(f"fov {self.fov_deg} outside (1, 179) degrees")
        if self.resolution < 16:
            raise RasterError(f"resolution {self.resolution} < 16")

    def axes(self):
        """Right/up/forward unit vectors of the camera frame."""
        eye = np.asarray(self.eye, dtype=np.float64)
        fwd = np.asarray(self.target, dtype=np.float64) - eye
        fwd /= np.linalg.norm(fwd)
        right = np.cross(fwd, np.asarray(self.up, dtype=np.float64))
        nr = np.linalg.norm(right)
        if nr < 1e-12:
            raise RasterError("camera up vector parallel to view direction")
        right /= nr
        up = np.cross(right, fwd)
        return right, up, fwd

    def view_direction(self) -> np.ndarray:
        """Unit vector from target toward the eye (headlight direction)."""
        d = np.asarray(self.eye, dtype=np.float64) - np.asarray(self.target, dtype=np.float64)
        return d / np.linalg.norm(d)


@dataclass
class RenderBuffers:
    image: np.ndarray        # (H, W) intensities in [0, 1]
    depth: np.ndarray        # (H, W) camera-space depth, +inf background
    face_id: np.ndarray      # (H, W) int32, BACKGROUND_FACE for background
    barycentric: np.ndarray  # (H, W, 3) perspective-correct, 0 for background
    background: float


@dataclass
class VertexViewMap:
    """Per-vertex visibility, pixel, and patch assignment for one view."""

    visible: np.ndarray  # (n,) bool
    pixel: np.ndarray    # (n, 2) int (row, col), -1 where invisible
    patch: np.ndarray    # (n,) int patch index, -1 where invisible
    grid_size: int       # patches per image side

    def visible_table(self):
        """(vertex_id, patch_index) arrays for the visible vertices."""
        ids = np.nonzero(self.visible)[0]
        return ids.astype(np.uint32), self.patch[ids].astype(np.uint32)


def sample_cameras(count: int, seed: int, radius: float, fov_deg: float,
                   resolution: int) -> list[Camera]:
    """Deterministic stratified camera placement on a sphere around the origin.

    Azimuth is stratified over the full circle; elevation is stratified over
    [-60, 60] degrees from the equator and shuffled so the two coordinates
    decorrelate. All cameras look at the origin with a +y up hint.
    """
    if count < 1:
        raise RasterError("camera count must be >= 1")
    rng = np.random.default_rng(seed)
    az = 2.0 * np.pi * (np.arange(count) + rng.random(count)) / count
    el_slots = rng.permutation(count)
    el = np.deg2rad(-60.0 + 120.0 * (el_slots + rng.random(count)) / count)
    cameras = []
    for a, e in zip(az, el):
        eye = radius * np.array([np.cos(e) * np.cos(a), np.sin(e), np.cos(e) * np.sin(a)])
        cameras.append(
            Camera(eye=tuple(eye), target=(0.0, 0.0, 0.0), up=(0.0, 1.0, 0.0),
                   fov_deg=fov_deg, resolution=resolution)
        )
    return cameras


def project_vertices(vertices: np.ndarray, camera: Camera):
    """Screen coordinates (u=col, v=row, continuous) and camera depth per vertex."""
    right, up, fwd = camera.axes()
    eye = np.asarray(camera.eye, dtype=np.float64)
    rel = vertices - eye
    x = rel @ right
    y = rel @ up
    z = rel @ fwd
    tan_half = np.tan(np.deg2rad(camera.fov_deg) / 2.0)
    res = camera.resolution
    with np.errstate(divide="ignore", invalid="ignore"):
        u = (x / (z * tan_half) + 1.0) * 0.5 * res
        v = (1.0 - y / (z * tan_half)) * 0.5 * res
    return u, v, z


def shade_faces(vertices: np.ndarray, faces: np.ndarray, light: np.ndarray,
                albedo: float, ambient: float):
    """Per-face flat diffuse intensity and the quantities reused by backward."""
    e1 = vertices[faces[:, 1]] - vertices[faces[:, 0]]
    e2 = vertices[faces[:, 2]] - vertices[faces[:, 0]]
    cr = np.cross(e1, e2)
    cr_norm = np.linalg.norm(cr, axis=1)
    normals = cr / cr_norm[:, None]
    d = normals @ light
    intensity = albedo * np.clip(d, 0.0, 1.0) + ambient
    return intensity, normals, cr_norm, e1, e2, d


def rasterize(mesh: Mesh, vertices: np.ndarray, camera: Camera,
              light: np.ndarray, background: float = 0.0,
              albedo: float = DEFAULT_ALBEDO,
              ambient: float = DEFAULT_AMBIENT) -> RenderBuffers:
    """Forward z-buffer rasterization with flat diffuse shading."""
    v = np.asarray(vertices, dtype=np.float64)
    if not np.all(np.isfinite(v)):
        raise RasterError("non-finite vertex positions")
    light = np.asarray(light, dtype=np.float64)
    faces = mesh.faces
    res = camera.resolution

    image = np.full((res, res), background, dtype=np.float64)
    depth = np.full((res, res), np.inf)
    face_id = np.full((res, res), BACKGROUND_FACE, dtype=np.int32)
    bary = np.zeros((res, res, 3))
    buffers = RenderBuffers(image, depth, face_id, bary, background)

    u, vpix, z = project_vertices(v, camera)
    fu, fv, fz = u[faces], vpix[faces], z[faces]  # (F, 3)
    usable = np.all(fz > NEAR_DEPTH, axis=1)
    if not np.any(usable):
        return buffers

    # integer pixel bounding boxes, clipped to the image
    r0 = np.clip(np.floor(fv.min(axis=1) - 0.5).astype(np.int64), 0, res - 1)
    r1 = np.clip(np.ceil(fv.max(axis=1) - 0.5).astype(np.int64) + 1, 0, res)
    c0 = np.clip(np.floor(fu.min(axis=1) - 0.5).astype(np.int64), 0, res - 1)
    c1 = np.clip(np.ceil(fu.max(axis=1) - 0.5).astype(np.int64) + 1, 0, res)
    heights = np.maximum(r1 - r0, 0)
    widths = np.maximum(c1 - c0, 0)
    counts = np.where(usable, heights * widths, 0)
    total = int(counts.sum())
    if total == 0:
        return buffers

    fids = np.repeat(np.arange(len(faces)), counts)
    offsets = np.concatenate([[0], np.cumsum(counts)])[:-1]
    local = np.arange(total) - offsets[fids]
    w = widths[fids]
    rows = r0[fids] + local // w
    cols = c0[fids] + local % w
    px = cols + 0.5
    py = rows + 0.5

    au, av = fu[fids, 0], fv[fids, 0]
    bu, bv = fu[fids, 1], fv[fids, 1]
    cu, cv = fu[fids, 2], fv[fids, 2]
    area2 = _edge(au, av, bu, bv, cu, cv)
    e0 = _edge(bu, bv, cu, cv, px, py)
    e1 = _edge(cu, cv, au, av, px, py)
    e2 = _edge(au, av, bu, bv, px, py)
    with np.errstate(divide="ignore", invalid="ignore"):
        l0, l1, l2 = e0 / area2, e1 / area2, e2 / area2
    inside = (area2 != 0.0) & (l0 >= 0.0) & (l1 >= 0.0) & (l2 >= 0.0)
    if not np.any(inside):
        return buffers

    fids, rows, cols = fids[inside], rows[inside], cols[inside]
    l0, l1, l2 = l0[inside], l1[inside], l2[inside]

    # perspective-correct depth and barycentrics from screen-space weights
    w0 = l0 / fz[fids, 0]
    w1 = l1 / fz[fids, 1]
    w2 = l2 / fz[fids, 2]
    zhit = 1.0 / (w0 + w1 + w2)
    b0, b1, b2 = w0 * zhit, w1 * zhit, w2 * zhit

    # z-buffer resolve: nearest depth wins, lower face index on exact ties
    flat = rows * res + cols
    order = np.lexsort((fids, zhit, flat))
    flat_sorted = flat[order]
    first = np.ones(len(order), dtype=bool)
    first[1:] = flat_sorted[1:] != flat_sorted[:-1]
    win = order[first]

    intensity = shade_faces(v, faces, light, albedo, ambient)[0]
    r_w, c_w, f_w = rows[win], cols[win], fids[win]
    image[r_w, c_w] = intensity[f_w]
    depth[r_w, c_w] = zhit[win]
    face_id[r_w, c_w] = f_w
    bary[r_w, c_w, 0] = b0[win]
    bary[r_w, c_w, 1] = b1[win]
    bary[r_w, c_w, 2] = b2[win]
    return buffers


def _edge(ax, ay, bx, by, px, py):
    """Signed twice-area of triangle (a, b, p); the half-plane edge function."""
    return (bx - ax) * (py - ay) - (by - ay) * (px - ax)


def coverage_oracle(mesh: Mesh, vertices: np.ndarray, camera: Camera):
    """Brute-force coverage and depth resolve evaluating every (pixel, face)
    pair, with the same edge functions and tie rule as ``rasterize``.

    A sequential per-face z-test over full-image pixel grids: no bounding
    boxes, no candidate pruning, no sorting. Used to validate the production
    path exactly.
    """
    v = np.asarray(vertices, dtype=np.float64)
    faces = mesh.faces
    res = camera.resolution
    u, vpix, z = project_vertices(v, camera)
    face_id = np.full((res, res), BACKGROUND_FACE, dtype=np.int32)
    depth = np.full((res, res), np.inf)
    rows, cols = np.meshgrid(np.arange(res), np.arange(res), indexing="ij")
    px = cols + 0.5
    py = rows + 0.5
    for f, (i0, i1, i2) in enumerate(faces):
        if z[i0] <= NEAR_DEPTH or z[i1] <= NEAR_DEPTH or z[i2] <= NEAR_DEPTH:
            continue
        area2 = _edge(u[i0], vpix[i0], u[i1], vpix[i1], u[i2], vpix[i2])
        if area2 == 0.0:
            continue
        l0 = _edge(u[i1], vpix[i1], u[i2], vpix[i2], px, py) / area2
        l1 = _edge(u[i2], vpix[i2], u[i0], vpix[i0], px, py) / area2
        l2 = _edge(u[i0], vpix[i0], u[i1], vpix[i1], px, py) / area2
        inside = (l0 >= 0.0) & (l1 >= 0.0) & (l2 >= 0.0)
        with np.errstate(divide="ignore"):
            zhit = 1.0 / (l0 / z[i0] + l1 / z[i1] + l2 / z[i2])
        # strict < keeps the earlier (lower-index) face on exact depth ties
        win = inside & (zhit < depth)
        depth[win] = zhit[win]
        face_id[win] = f
    return face_id, depth


def rasterize_backward(mesh: Mesh, vertices: np.ndarray, camera: Camera,
                       buffers: RenderBuffers, upstream: np.ndarray,
                       light: np.ndarray, albedo: float = DEFAULT_ALBEDO) -> np.ndarray:
    """Gradient of sum(upstream * image) w.r.t. vertex positions.

    Chain rule runs intensity -> face normal -> the three face vertices,
    holding per-pixel face assignment and visibility fixed; silhouette terms
    are deliberately excluded.
    """
    v = np.asarray(vertices, dtype=np.float64)
    light = np.asarray(light, dtype=np.float64)
    up = np.asarray(upstream, dtype=np.float64)
    faces = mesh.faces
    if up.shape != buffers.image.shape:
        raise RasterError(f"upstream shape {up.shape} != image shape {buffers.image.shape}")

    grad = np.zeros_like(v)
    covered = buffers.face_id.ravel() >= 0
    if not np.any(covered):
        return grad
    # total upstream weight landing on each face
    u_face = np.bincount(
        buffers.face_id.ravel()[covered],
        weights=up.ravel()[covered],
        minlength=len(faces),
    )

    _, normals, cr_norm, e1, e2, d = shade_faces(v, faces, light, albedo, 0.0)
    gate = (d > 0.0) & (d < 1.0)
    coeff = u_face * albedo * gate / cr_norm  # dI/d|c|-normalized chain factor
    g_c = coeff[:, None] * (light[None, :] - normals * d[:, None])
    g_v1 = np.cross(e2, g_c)
    g_v2 = np.cross(g_c, e1)
    g_v0 = -g_v1 - g_v2
    np.add.at(grad, faces[:, 0], g_v0)
    np.add.at(grad, faces[:, 1], g_v1)
    np.add.at(grad, faces[:, 2], g_v2)
    return grad


def patch_grid_size(resolution: int, patch_size: int, stride: int) -> int:
    """Number of patch centers per image side for the overlapping-patch grid."""
    if resolution % patch_size != 0:
        raise RasterError(f"resolution {resolution} not divisible by patch size {patch_size}")
    if (resolution - patch_size) % stride != 0:
        raise RasterError(
            f"stride {stride} must divide resolution - patch_size "
            f"({resolution} - {patch_size})"
        )
    return (resolution - patch_size) // stride + 1


def nearest_patch(rows, cols, resolution: int, patch_size: int, stride: int):
    """Index of the patch whose center is nearest to each (row, col) pixel.

    Patch centers sit at patch_size/2 + k*stride along each axis; per-axis
    nearest index (ties round toward the higher index) gives the Euclidean
    nearest center on the grid.
    """
    m = patch_grid_size(resolution, patch_size, stride)
    c0 = patch_size / 2.0
    ri = np.clip(np.floor((np.asarray(rows) - c0) / stride + 0.5).astype(np.int64), 0, m - 1)
    ci = np.clip(np.floor((np.asarray(cols) - c0) / stride + 0.5).astype(np.int64), 0, m - 1)
    return ri * m + ci


def vertex_view_map(mesh: Mesh, vertices: np.ndarray, camera: Camera,
                    buffers: RenderBuffers, patch_size: int, stride: int) -> VertexViewMap:
    """Visibility flag, containing pixel, and nearest patch for every vertex.

    A vertex is visible when its projection lands in-bounds and its camera
    depth is within the occlusion tolerance of the z-buffer at that pixel.
    """
    v = np.asarray(vertices, dtype=np.float64)
    res = camera.resolution
    grid = patch_grid_size(res, patch_size, stride)
    u, vpix, z = project_vertices(v, camera)
    rows = np.floor(vpix).astype(np.int64)
    cols = np.floor(u).astype(np.int64)
    in_bounds = (z > NEAR_DEPTH) & (rows >= 0) & (rows < res) & (cols >= 0) & (cols < res)

    centroid = v.mean(axis=0)
    scene_radius = float(np.linalg.norm(v - centroid, axis=1).max())
    tol = OCCLUSION_TOL * max(scene_radius, 1e-12)

    visible = np.zeros(len(v), dtype=bool)
    ib = np.nonzero(in_bounds)[0]
    zbuf = buffers.depth[rows[ib], cols[ib]]
    visible[ib] = z[ib] <= zbuf + tol

    pixel = np.full((len(v), 2), -1, dtype=np.int64)
    patch = np.full(len(v), -1, dtype=np.int64)
    vis = np.nonzero(visible)[0]
    pixel[vis, 0] = rows[vis]
    pixel[vis, 1] = cols[vis]
    patch[vis] = nearest_patch(rows[vis], cols[vis], res, patch_size, stride)
    return VertexViewMap(visible=visible, pixel=pixel, patch=patch, grid_size=grid)


def write_pgm(image: np.ndarray, path):
    """8-bit binary PGM snapshot; intensities quantized as round(255 * v)."""
    img = np.asarray(image, dtype=np.float64)
    q = np.floor(255.0 * np.clip(img, 0.0, 1.0) + 0.5).astype(np.uint8)
    h, w = q.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(q.tobytes())

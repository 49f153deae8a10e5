"""Finite-difference verification suites for every gradient path in the
package: the Poisson adjoint, the rasterizer backward pass, and the
procedural guidance providers. The CLI ``checkgrad`` subcommand runs all of
them and reports the worst relative error per suite."""

from __future__ import annotations

import numpy as np

from . import guidance as gd
from . import raster
from .fieldgrad import build_gradient_operator, identity_field, poisson_adjoint, poisson_solve
from .mesh import Mesh


def relative_error(a: float, b: float) -> float:
    denom = max(abs(a), abs(b), 1e-12)
    return abs(a - b) / denom


def check_poisson_adjoint(mesh: Mesh, trials: int = 20, step: float = 1e-4,
                          seed: int = 0) -> float:
    """Adjoint directional derivatives vs central finite differences.

    Returns the max relative error over random (field, upstream, direction)
    trials.
    """
    system = build_gradient_operator(mesh)
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(trials):
        fld = identity_field(mesh.n_faces) + 0.3 * rng.standard_normal((mesh.n_faces, 3, 3))
        upstream = rng.standard_normal((mesh.n_vertices, 3))
        upstream /= np.linalg.norm(upstream)
        delta = rng.standard_normal((mesh.n_faces, 3, 3))
        delta /= np.linalg.norm(delta)

        grad = poisson_adjoint(system, upstream)
        analytic = float(np.sum(grad * delta))

        lo = np.sum(upstream * poisson_solve(system, fld - step * delta))
        hi = np.sum(upstream * poisson_solve(system, fld + step * delta))
        fd = (hi - lo) / (2.0 * step)
        worst = max(worst, relative_error(analytic, fd))
    return worst


def check_raster_backward(mesh: Mesh, camera: raster.Camera, light,
                          trials: int = 5, step: float = 1e-4, seed: int = 0,
                          albedo: float = raster.DEFAULT_ALBEDO,
                          ambient: float = raster.DEFAULT_AMBIENT):
    """Backward pass vs finite differences on face-stable pixels.

    The perturbation direction is a random per-vertex field; pixels whose
    face assignment changes under +/-step are excluded, matching the
    interior-gradient contract. Returns (max relative error, stable trials).
    """
    rng = np.random.default_rng(seed)
    v = mesh.vertices
    worst, used = 0.0, 0
    for _ in range(trials):
        upstream = rng.standard_normal((camera.resolution, camera.resolution))
        delta = rng.standard_normal(v.shape)
        delta /= np.linalg.norm(delta)

        buf = raster.rasterize(mesh, v, camera, light, albedo=albedo, ambient=ambient)
        grad = raster.rasterize_backward(mesh, v, camera, buf, upstream, light, albedo)
        analytic = float(np.sum(grad * delta))

        buf_hi = raster.rasterize(mesh, v + step * delta, camera, light,
                                  albedo=albedo, ambient=ambient)
        buf_lo = raster.rasterize(mesh, v - step * delta, camera, light,
                                  albedo=albedo, ambient=ambient)
        stable = (buf_hi.face_id == buf.face_id) & (buf_lo.face_id == buf.face_id)
        if not np.all(stable):
            # restrict both sides of the comparison to face-stable pixels
            masked = np.where(stable, upstream, 0.0)
            grad = raster.rasterize_backward(mesh, v, camera, buf, masked, light, albedo)
            analytic = float(np.sum(grad * delta))
            upstream = masked
        fd = float(
            np.sum(upstream * (buf_hi.image - buf_lo.image)) / (2.0 * step)
        )
        if abs(analytic) < 1e-12 and abs(fd) < 1e-12:
            continue
        worst = max(worst, relative_error(analytic, fd))
        used += 1
    return worst, used


def check_provider_gradients(provider, request: gd.GuidanceRequest,
                             step: float = 1e-3, probes: int = 40,
                             seed: int = 0) -> float:
    """Provider pixel gradients vs central finite differences of its loss."""
    rng = np.random.default_rng(seed)
    response = provider.evaluate(request)
    shape = request.images.shape
    worst = 0.0
    for _ in range(probes):
        idx = tuple(rng.integers(0, s) for s in shape)
        plus = request.images.copy()
        plus[idx] += step
        minus = request.images.copy()
        minus[idx] -= step
        req_p = gd.GuidanceRequest(request.iteration, plus, request.camera_ids,
                                   request.vertex_tables, request.prompt, request.base_prompt)
        req_m = gd.GuidanceRequest(request.iteration, minus, request.camera_ids,
                                   request.vertex_tables, request.prompt, request.base_prompt)
        rp = provider.evaluate(req_p)
        rm = provider.evaluate(req_m)
        fd = ((rp.semantic_loss + rp.vc_loss) - (rm.semantic_loss + rm.vc_loss)) / (2.0 * step)
        analytic = float(response.pixel_gradients[idx])
        if abs(analytic) < 1e-12 and abs(fd) < 1e-12:
            continue
        worst = max(worst, relative_error(analytic, fd))
    return worst

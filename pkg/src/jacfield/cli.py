"""Command-line entry point: deform, render, metrics, checkgrad subcommands.

Exit codes: 0 success, 1 configuration error, 2 runtime abort.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import checkgrad as cg
from . import guidance as gd
from . import optim, raster
from .mesh import MeshError, load_obj, normalize_unit_sphere
from .metrics import self_intersection_ratio

ENDPOINT_ENV = "JACFIELD_GUIDANCE_ENDPOINT"


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="jacfield")
    sub = parser.add_subparsers(dest="command", required=True)

    p_deform = sub.add_parser("deform", help="run a guided deformation")
    p_deform.add_argument("--config", required=True, help="run configuration JSON")
    p_deform.add_argument("--set", dest="overrides", action="append", default=[],
                          metavar="KEY=VALUE", help="dotted-path config override")

    p_render = sub.add_parser("render", help="rasterize a mesh from sampled cameras to PGM")
    p_render.add_argument("--mesh", required=True)
    p_render.add_argument("--views", type=int, default=4)
    p_render.add_argument("--seed", type=int, default=0)
    p_render.add_argument("--radius", type=float, default=2.5)
    p_render.add_argument("--fov", type=float, default=45.0)
    p_render.add_argument("--resolution", type=int, default=224)
    p_render.add_argument("--out", default="renders")

    p_metrics = sub.add_parser("metrics", help="print the self-intersection report as JSON")
    p_metrics.add_argument("--mesh", required=True)

    p_check = sub.add_parser("checkgrad", help="run the finite-difference gradient suites")
    p_check.add_argument("--mesh", default=None, help="OBJ to test on (default: icosahedron)")
    p_check.add_argument("--seed", type=int, default=0)
    return parser


def cmd_deform(args) -> int:
    config_path = Path(args.config)
    if not config_path.exists():
        print(f"error: config file not found: {config_path}", file=sys.stderr)
        return 1
    try:
        config = optim.RunConfig.from_json(config_path)
        for item in args.overrides:
            if "=" not in item:
                raise optim.ConfigError(f"--set expects KEY=VALUE, got {item!r}")
            key, _, value = item.partition("=")
            config.apply_override(key, value)
        endpoint = os.environ.get(ENDPOINT_ENV)
        if endpoint:
            config.provider.endpoint = endpoint
        config.validate()
    except (optim.ConfigError, json.JSONDecodeError, MeshError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1

    try:
        result = optim.run(config)
    except (gd.GuidanceError, optim.NonFiniteError, MeshError) as exc:
        print(f"run aborted: {exc}", file=sys.stderr)
        return 2

    if result.breakdowns:
        b = result.breakdowns[-1]
        print(f"final losses: semantic={b.semantic:.6g} vc={b.view_consistency:.6g} "
              f"identity={b.identity_reg:.6g} total={b.total:.6g}")
    else:
        print("final losses: (no iterations)")
    report = self_intersection_ratio(result.normalized, result.final_vertices)
    print(f"self-intersections: {report.intersecting_faces}/{report.total_faces} "
          f"(ratio {report.ratio:.4f})")
    print(f"artifacts in {result.output_dir}")
    return 0


def cmd_render(args) -> int:
    try:
        mesh = load_obj(args.mesh)
    except (OSError, MeshError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    normalized, _, _ = normalize_unit_sphere(mesh)
    cameras = raster.sample_cameras(args.views, args.seed, args.radius,
                                    args.fov, args.resolution)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for i, cam in enumerate(cameras):
        buf = raster.rasterize(normalized, normalized.vertices, cam, cam.view_direction())
        raster.write_pgm(buf.image, out / f"view_{i:03d}.pgm")
    print(f"wrote {len(cameras)} views to {out}")
    return 0


def cmd_metrics(args) -> int:
    try:
        mesh = load_obj(args.mesh)
    except (OSError, MeshError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    report = self_intersection_ratio(mesh)
    print(json.dumps(report.to_dict(), indent=2))
    return 0


def cmd_checkgrad(args) -> int:
    from .primitives import icosahedron

    if args.mesh:
        try:
            mesh = load_obj(args.mesh)
        except (OSError, MeshError) as exc:
            print(f"error: {exc}", file=sys.stderr)
            return 1
        mesh, _, _ = normalize_unit_sphere(mesh)
    else:
        mesh = icosahedron()

    failures = 0

    adj = cg.check_poisson_adjoint(mesh, trials=20, seed=args.seed)
    failures += _report("poisson adjoint", adj, 1e-4)

    camera = raster.Camera(eye=(0.0, 0.0, 2.5), target=(0.0, 0.0, 0.0),
                           up=(0.0, 1.0, 0.0), fov_deg=45.0, resolution=64)
    light = camera.view_direction()
    rast, used = cg.check_raster_backward(mesh, camera, light, trials=5, seed=args.seed)
    failures += _report(f"rasterizer backward ({used} stable trials)", rast, 1e-3)

    rng = np.random.default_rng(args.seed)
    images = rng.random((2, 32, 32))
    targets = rng.random((2, 32, 32))
    tables = [
        (np.array([0, 1], dtype=np.uint32), np.array([0, 1], dtype=np.uint32)),
        (np.array([0, 1], dtype=np.uint32), np.array([2, 3], dtype=np.uint32)),
    ]
    request = gd.GuidanceRequest(0, images, [0, 1], tables)
    it_err = cg.check_provider_gradients(gd.ImageTargetProvider(targets), request)
    failures += _report("image-target provider", it_err, 1e-6)
    vc_err = cg.check_provider_gradients(gd.PatchMeanVCProvider(16, 8), request)
    failures += _report("patch-mean VC provider", vc_err, 1e-6)

    return 2 if failures else 0


def _report(name: str, error: float, threshold: float) -> int:
    ok = error < threshold
    print(f"{'PASS' if ok else 'FAIL'} {name}: max rel error {error:.3e} "
          f"(threshold {threshold:.0e})")
    return 0 if ok else 1


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    handler = {
        "deform": cmd_deform,
        "render": cmd_render,
        "metrics": cmd_metrics,
        "checkgrad": cmd_checkgrad,
    }[args.command]
    return handler(args)


if __name__ == "__main__":
    sys.exit(main())

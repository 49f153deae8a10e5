"""The optimization loop: solve vertices from the parameter set, render views,
evaluate guidance, back-propagate pixel gradients to the parameters, Adam
step. Parameters are either the per-face Jacobian field (initialized to
identity) or raw per-vertex offsets (the ablation mode)."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import guidance as gd
from . import raster
from .fieldgrad import build_gradient_operator, identity_field, poisson_adjoint, poisson_solve
from .losses import LossBreakdown, compose, identity_regularization
from .mesh import Mesh, load_obj, normalize_unit_sphere, save_obj

MODES = ("jacobian", "vertex-displacement")
PROVIDERS = ("image-target", "patch-mean-vc", "remote")


class ConfigError(Exception):
    pass


class NonFiniteError(Exception):
    def __init__(self, tensor_name, iteration):
        super().__init__(f"non-finite values in {tensor_name} at iteration {iteration}")
        self.tensor_name = tensor_name


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------

@dataclass
class OptimizerConfig:
    iterations: int = 200
    learning_rate: float = 0.002
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    # optional random +/- jitter applied to the initial parameters; used by
    # regularization-only convergence studies where starting exactly at the
    # optimum would be vacuous
    init_jitter: float = 0.0
    init_jitter_seed: int = 0


@dataclass
class LossConfig:
    alpha: float = 1.0
    beta: float = 1.0
    semantic_weight: float = 1.0


@dataclass
class CameraConfig:
    count: int = 8
    seed: int = 0
    radius: float = 2.5
    fov: float = 45.0
    resolution: int = 224
    resample: bool | None = None  # None: resample unless provider is image-target


@dataclass
class RenderConfig:
    background: float = 0.0
    albedo: float = raster.DEFAULT_ALBEDO
    ambient: float = raster.DEFAULT_AMBIENT
    light: object = "headlight"  # "headlight" or a [x, y, z] direction


@dataclass
class PatchConfig:
    size: int = 32
    stride: int = 16


@dataclass
class ProviderConfig:
    kind: str = "patch-mean-vc"
    endpoint: str = "127.0.0.1:7763"
    target_scale: float = 1.25
    directional: bool = False


@dataclass
class RunConfig:
    mesh: str = ""
    prompt: str = ""
    base_prompt: str = ""
    mode: str = "jacobian"
    output_dir: str = "out"
    snapshot_every: int = 0
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    losses: LossConfig = field(default_factory=LossConfig)
    cameras: CameraConfig = field(default_factory=CameraConfig)
    render: RenderConfig = field(default_factory=RenderConfig)
    patches: PatchConfig = field(default_factory=PatchConfig)
    provider: ProviderConfig = field(default_factory=ProviderConfig)

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        return _dataclass_from_dict(cls, data, path="")

    @classmethod
    def from_json(cls, path) -> "RunConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def apply_override(self, dotted_key: str, raw_value: str):
        """Apply a ``--set section.key=value`` style override in place."""
        parts = dotted_key.split(".")
        target = self
        for part in parts[:-1]:
            if not dataclasses.is_dataclass(target) or part not in {
                f.name for f in dataclasses.fields(target)
            }:
                raise ConfigError(f"unknown config key {dotted_key!r}")
            target = getattr(target, part)
        leaf = parts[-1]
        if not dataclasses.is_dataclass(target) or leaf not in {
            f.name for f in dataclasses.fields(target)
        }:
            raise ConfigError(f"unknown config key {dotted_key!r}")
        current = getattr(target, leaf)
        try:
            value = json.loads(raw_value)
        except json.JSONDecodeError:
            value = raw_value
        if isinstance(current, bool) and not isinstance(value, bool):
            raise ConfigError(f"{dotted_key} expects true/false, got {raw_value!r}")
        if isinstance(current, int) and not isinstance(current, bool) and isinstance(value, float):
            if value != int(value):
                raise ConfigError(f"{dotted_key} expects an integer, got {raw_value!r}")
            value = int(value)
        setattr(target, leaf, value)

    def validate(self):
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.provider.kind not in PROVIDERS:
            raise ConfigError(f"provider.kind must be one of {PROVIDERS}")
        if self.optimizer.iterations < 0:
            raise ConfigError("optimizer.iterations must be >= 0")
        for name, value in [
            ("losses.alpha", self.losses.alpha),
            ("losses.beta", self.losses.beta),
            ("losses.semantic_weight", self.losses.semantic_weight),
        ]:
            if value < 0:
                raise ConfigError(f"{name} must be >= 0")
        if not Path(self.mesh).exists():
            raise ConfigError(f"mesh file not found: {self.mesh}")
        raster.patch_grid_size(self.cameras.resolution, self.patches.size, self.patches.stride)


def _dataclass_from_dict(cls, data, path):
    if not isinstance(data, dict):
        raise ConfigError(f"expected object at {path or 'config root'}, got {type(data).__name__}")
    names = {f.name: f for f in dataclasses.fields(cls)}
    unknown = set(data) - set(names)
    if unknown:
        where = f" in {path}" if path else ""
        raise ConfigError(f"unknown config key(s){where}: {sorted(unknown)}")
    kwargs = {}
    for key, value in data.items():
        f = names[key]
        if dataclasses.is_dataclass(f.type) or (
            isinstance(f.default_factory, type) and dataclasses.is_dataclass(f.default_factory)
        ):
            sub_cls = f.default_factory if f.default_factory is not dataclasses.MISSING else f.type
            kwargs[key] = _dataclass_from_dict(sub_cls, value, f"{path}.{key}" if path else key)
        else:
            kwargs[key] = value
    return cls(**kwargs)


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------

@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step: int
    learning_rate: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params: np.ndarray, learning_rate: float,
                   beta1=0.9, beta2=0.999, eps=1e-8) -> "AdamState":
        return cls(
            m=np.zeros_like(params), v=np.zeros_like(params), step=0,
            learning_rate=learning_rate, beta1=beta1, beta2=beta2, eps=eps,
        )


def adam_step(state: AdamState, params: np.ndarray, grad: np.ndarray) -> np.ndarray:
    """Standard Adam update with bias correction; returns updated parameters."""
    if grad.shape != params.shape:
        raise ValueError(f"gradient shape {grad.shape} != parameter shape {params.shape}")
    state.step += 1
    state.m = state.beta1 * state.m + (1.0 - state.beta1) * grad
    state.v = state.beta2 * state.v + (1.0 - state.beta2) * grad * grad
    m_hat = state.m / (1.0 - state.beta1 ** state.step)
    v_hat = state.v / (1.0 - state.beta2 ** state.step)
    return params - state.learning_rate * m_hat / (np.sqrt(v_hat) + state.eps)


# ---------------------------------------------------------------------------
# Run loop
# ---------------------------------------------------------------------------

@dataclass
class RunResult:
    mesh: Mesh                      # source mesh in original coordinates
    normalized: Mesh                # normalized source
    final_vertices: np.ndarray      # normalized coordinates
    final_vertices_original: np.ndarray
    breakdowns: list
    output_dir: Path
    system: object = None


def _camera_seed(base_seed: int, iteration: int) -> int:
    return int(np.random.SeedSequence([base_seed, iteration]).generate_state(1)[0])


def _light_for(camera: raster.Camera, light_cfg) -> np.ndarray:
    if light_cfg == "headlight":
        return camera.view_direction()
    light = np.asarray(light_cfg, dtype=np.float64)
    return light / np.linalg.norm(light)


def _check_finite(name, array, iteration):
    if not np.all(np.isfinite(array)):
        raise NonFiniteError(name, iteration)


def _jitter(params: np.ndarray, amplitude: float, seed: int) -> np.ndarray:
    """Constant-magnitude random-sign jitter per entry."""
    if amplitude == 0.0:
        return params
    rng = np.random.default_rng(seed)
    signs = rng.integers(0, 2, size=params.shape) * 2 - 1
    return params + amplitude * signs


def run(config: RunConfig, write_artifacts: bool = True) -> RunResult:
    """Execute the optimization loop described by ``config``.

    Emits final.obj (original coordinates), loss.csv, config_echo.json,
    periodic snapshots, and loss/deviation figures into the output directory.
    On remote-provider failure a checkpoint OBJ is written before the error
    propagates.
    """
    config.validate()
    source = load_obj(config.mesh)
    normalized, scale, center = normalize_unit_sphere(source)
    x0 = normalized.vertices

    def denormalize(x):
        # exact at x == x0, so a 0-iteration run reproduces the input bitwise
        return source.vertices + (x - x0) / scale

    out_dir = Path(config.output_dir)
    snap_dir = out_dir / "snapshots"
    if write_artifacts:
        out_dir.mkdir(parents=True, exist_ok=True)
        with open(out_dir / "config_echo.json", "w") as fh:
            json.dump(config.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")
        if config.snapshot_every > 0:
            snap_dir.mkdir(exist_ok=True)

    system = build_gradient_operator(normalized)
    jacobian_mode = config.mode == "jacobian"
    opt = config.optimizer
    if jacobian_mode:
        params = identity_field(normalized.n_faces)
    else:
        params = np.zeros_like(x0)
    params = _jitter(params, opt.init_jitter, opt.init_jitter_seed)
    state = AdamState.for_params(params, opt.learning_rate, opt.beta1, opt.beta2, opt.eps)

    cam_cfg = config.cameras
    fixed_cameras = config.provider.kind == "image-target"
    if cam_cfg.resample is not None:
        fixed_cameras = not cam_cfg.resample
    base_cameras = raster.sample_cameras(
        cam_cfg.count, cam_cfg.seed, cam_cfg.radius, cam_cfg.fov, cam_cfg.resolution
    )
    provider = _build_provider(config, normalized, base_cameras)

    def current_vertices(p):
        if jacobian_mode:
            return poisson_solve(system, p)
        return x0 + p

    breakdowns = []
    csv_file = open(out_dir / "loss.csv", "w") if write_artifacts else None
    if csv_file:
        csv_file.write(LossBreakdown.CSV_HEADER + "\n")

    try:
        for t in range(opt.iterations):
            verts = current_vertices(params)
            _check_finite("deformed_vertices", verts, t)

            if write_artifacts and config.snapshot_every > 0 and t > 0 \
                    and t % config.snapshot_every == 0:
                save_obj(denormalize(verts), snap_dir / f"iter_{t:06d}.obj",
                         normalized.faces)

            cameras = base_cameras if fixed_cameras else raster.sample_cameras(
                cam_cfg.count, _camera_seed(cam_cfg.seed, t), cam_cfg.radius,
                cam_cfg.fov, cam_cfg.resolution,
            )
            images, tables, buffers, lights = [], [], [], []
            for cam in cameras:
                light = _light_for(cam, config.render.light)
                buf = raster.rasterize(
                    normalized, verts, cam, light, config.render.background,
                    config.render.albedo, config.render.ambient,
                )
                vvm = raster.vertex_view_map(
                    normalized, verts, cam, buf, config.patches.size, config.patches.stride
                )
                images.append(buf.image)
                tables.append(vvm.visible_table())
                buffers.append(buf)
                lights.append(light)

            request = gd.GuidanceRequest(
                iteration=t, images=np.stack(images), camera_ids=list(range(len(cameras))),
                vertex_tables=tables, prompt=config.prompt, base_prompt=config.base_prompt,
            )
            try:
                response = provider.evaluate(request)
            except gd.ProviderUnavailable:
                if write_artifacts:
                    save_obj(denormalize(verts), out_dir / "checkpoint.obj", normalized.faces)
                    if csv_file:
                        csv_file.flush()
                raise
            except gd.GuidanceError as exc:
                if write_artifacts and hasattr(exc, "offending_gradients"):
                    dump = out_dir / f"bad_gradients_view{exc.offending_view}.npy"
                    np.save(dump, exc.offending_gradients)
                    exc.args = (f"{exc.args[0]} (gradients dumped to {dump})",)
                raise
            response.validate_against(request)
            _check_finite("provider_pixel_gradients", response.pixel_gradients, t)

            vertex_grad = np.zeros_like(verts)
            for cam, buf, light, up in zip(cameras, buffers, lights, response.pixel_gradients):
                vertex_grad += raster.rasterize_backward(
                    normalized, verts, cam, buf, up, light, config.render.albedo
                )
            _check_finite("vertex_gradient", vertex_grad, t)

            if jacobian_mode:
                provider_grad = poisson_adjoint(system, vertex_grad)
                id_value, id_grad = identity_regularization(params, config.losses.alpha)
            else:
                provider_grad = vertex_grad
                id_value, id_grad = 0.0, np.zeros_like(params)
            breakdown, total_grad = compose(
                response.semantic_loss, response.vc_loss, provider_grad, id_value, id_grad
            )
            _check_finite("total_gradient", total_grad, t)

            params = adam_step(state, params, total_grad)
            breakdowns.append(breakdown)
            if csv_file:
                csv_file.write(breakdown.as_row(t) + "\n")
    finally:
        if csv_file:
            csv_file.close()
        if hasattr(provider, "close"):
            provider.close()

    final = current_vertices(params) if opt.iterations > 0 else x0
    final_original = denormalize(final)
    if write_artifacts:
        save_obj(final_original, out_dir / "final.obj", normalized.faces)
        from . import report

        if breakdowns:
            report.render_loss_figure(breakdowns, out_dir / "loss_curves.png")
        report.render_deviation_figure(system, final, out_dir / "deviation_hist.png")
    return RunResult(
        mesh=source, normalized=normalized, final_vertices=final,
        final_vertices_original=final_original, breakdowns=breakdowns,
        output_dir=out_dir, system=system,
    )


def _build_provider(config: RunConfig, normalized: Mesh, cameras):
    kind = config.provider.kind
    if kind == "image-target":
        scaled = normalized.vertices * config.provider.target_scale
        targets = []
        for cam in cameras:
            light = _light_for(cam, config.render.light)
            buf = raster.rasterize(
                normalized, scaled, cam, light, config.render.background,
                config.render.albedo, config.render.ambient,
            )
            targets.append(buf.image)
        return gd.ImageTargetProvider(np.stack(targets), weight=config.losses.semantic_weight)
    if kind == "patch-mean-vc":
        return gd.PatchMeanVCProvider(
            config.patches.size, config.patches.stride, weight=config.losses.beta
        )
    return gd.RemoteProvider(
        endpoint=config.provider.endpoint,
        resolution=config.cameras.resolution,
        views=config.cameras.count,
        patch_size=config.patches.size,
        stride=config.patches.stride,
        prompt=config.prompt,
        base_prompt=config.base_prompt,
        semantic_weight=config.losses.semantic_weight,
        vc_weight=config.losses.beta,
        directional=config.provider.directional,
    )

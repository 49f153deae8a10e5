"""Guidance providers: the contract that turns rendered views into scalar
losses plus per-pixel gradients.

Two procedural providers run fully in-core (an image-matching loss and a
patch-mean view-consistency surrogate) and are exact enough to finite-diff.
The remote provider speaks a length-prefixed JSON+binary protocol to an
external service that owns the neural encoders; only images, visible-vertex
tables, and pixel gradients cross that boundary.
"""

from __future__ import annotations

import json
import socket
import struct
import time
from dataclasses import dataclass, field

import numpy as np

from .raster import nearest_patch, patch_grid_size  # noqa: F401  (grid shared with providers)

PROTOCOL_VERSION = 1


class GuidanceError(Exception):
    pass


class ProviderUnavailable(GuidanceError):
    """Remote service could not be reached after retries."""


class ProtocolError(GuidanceError):
    pass


class ShapeMismatch(GuidanceError):
    pass


@dataclass
class GuidanceRequest:
    iteration: int
    images: np.ndarray            # (N, H, W) intensities
    camera_ids: list              # opaque per-view identifiers
    vertex_tables: list           # per view: (vertex_ids uint32, patch_ids uint32)
    prompt: str = ""
    base_prompt: str = ""

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=np.float64)
        if self.images.ndim != 3:
            raise ShapeMismatch(f"images must be (views, H, W), got {self.images.shape}")
        if self.images.shape[0] < 1:
            raise ShapeMismatch("at least one view required")
        if self.images.shape[1] != self.images.shape[2]:
            raise ShapeMismatch("images must be square")
        if len(self.vertex_tables) != self.images.shape[0]:
            raise ShapeMismatch("one vertex table per view required")


@dataclass
class GuidanceResponse:
    semantic_loss: float
    vc_loss: float
    pixel_gradients: np.ndarray  # (N, H, W)

    def validate_against(self, request: GuidanceRequest):
        if self.pixel_gradients.shape != request.images.shape:
            raise ShapeMismatch(
                f"gradient shape {self.pixel_gradients.shape} != "
                f"image shape {request.images.shape}"
            )
        if not (np.isfinite(self.semantic_loss) and np.isfinite(self.vc_loss)):
            raise GuidanceError("non-finite loss in response")


class ImageTargetProvider:
    """Quadratic image-matching guidance against fixed per-view targets.

    semantic loss = weight * sum_views ||image - target||^2 / (2 * pixels);
    view-consistency is zero. Cameras must stay fixed across iterations.
    """

    def __init__(self, targets, weight: float = 1.0):
        self.targets = np.asarray(targets, dtype=np.float64)
        self.weight = float(weight)

    def evaluate(self, request: GuidanceRequest) -> GuidanceResponse:
        if self.targets.shape != request.images.shape:
            raise ShapeMismatch(
                f"target shape {self.targets.shape} != image shape {request.images.shape}"
            )
        diff = request.images - self.targets
        px = float(request.images.shape[1] * request.images.shape[2])
        loss = self.weight * 0.5 * float(np.sum(diff * diff)) / px
        grads = self.weight * diff / px
        return GuidanceResponse(semantic_loss=loss, vc_loss=0.0, pixel_gradients=grads)


class PatchMeanVCProvider:
    """View-consistency surrogate on patch mean intensities.

    For every vertex visible in >= 2 views, penalizes squared differences of
    the mean intensity of its assigned patch across all ordered view pairs,
    normalized by the number of summed pairs. The patch feature is linear in
    the pixels, so gradients distribute uniformly over each patch's pixels.
    """

    def __init__(self, patch_size: int, stride: int, weight: float = 1.0):
        self.patch_size = int(patch_size)
        self.stride = int(stride)
        self.weight = float(weight)

    def evaluate(self, request: GuidanceRequest) -> GuidanceResponse:
        n_views, res, _ = request.images.shape
        grid = patch_grid_size(res, self.patch_size, self.stride)
        n_patches = grid * grid
        ps = self.patch_size

        means = np.empty((n_views, n_patches))
        for view in range(n_views):
            means[view] = self._patch_means(request.images[view], grid)

        # per vertex: (view, patch) list across the views where it is visible
        occurrences: dict[int, list] = {}
        for view, (ids, patches) in enumerate(request.vertex_tables):
            patches = np.asarray(patches, dtype=np.int64)
            if patches.size and (patches.min() < 0 or patches.max() >= n_patches):
                raise ShapeMismatch(
                    f"patch index out of range for a {grid}x{grid} grid in view {view}"
                )
            for vid, pid in zip(np.asarray(ids, dtype=np.int64), patches):
                occurrences.setdefault(int(vid), []).append((view, int(pid)))

        loss = 0.0
        mean_grad = np.zeros((n_views, n_patches))
        n_pairs = 0
        for slots in occurrences.values():
            if len(slots) < 2:
                continue
            for vi, pi in slots:
                for vj, pj in slots:
                    if vi == vj:
                        continue
                    d = means[vi, pi] - means[vj, pj]
                    loss += d * d
                    mean_grad[vi, pi] += 2.0 * d
                    mean_grad[vj, pj] -= 2.0 * d
                    n_pairs += 1
        if n_pairs == 0:
            return GuidanceResponse(0.0, 0.0, np.zeros_like(request.images))

        loss = self.weight * loss / n_pairs
        mean_grad *= self.weight / n_pairs
        grads = np.zeros_like(request.images)
        for view in range(n_views):
            g = mean_grad[view].reshape(grid, grid) / (ps * ps)
            for ri in range(grid):
                r = ri * self.stride
                for ci in range(grid):
                    c = ci * self.stride
                    grads[view, r:r + ps, c:c + ps] += g[ri, ci]
        return GuidanceResponse(semantic_loss=0.0, vc_loss=float(loss), pixel_gradients=grads)

    def _patch_means(self, image, grid):
        ps, st = self.patch_size, self.stride
        out = np.empty(grid * grid)
        for ri in range(grid):
            for ci in range(grid):
                block = image[ri * st:ri * st + ps, ci * st:ci * st + ps]
                out[ri * grid + ci] = block.mean()
        return out


# ---------------------------------------------------------------------------
# Wire protocol (client side)
# ---------------------------------------------------------------------------

def encode_message(header: dict, payload: bytes = b"") -> bytes:
    """4-byte big-endian header length, UTF-8 JSON header, raw payload."""
    if payload:
        header = dict(header, payload_bytes=len(payload))
    raw = json.dumps(header).encode("utf-8")
    return struct.pack(">I", len(raw)) + raw + payload


def read_exact(sock: socket.socket, n: int) -> bytes:
    chunks = []
    remaining = n
    while remaining > 0:
        chunk = sock.recv(remaining)
        if not chunk:
            raise ProtocolError("connection closed mid-message")
        chunks.append(chunk)
        remaining -= len(chunk)
    return b"".join(chunks)


def read_message(sock: socket.socket):
    """Returns (header dict, payload bytes)."""
    (hlen,) = struct.unpack(">I", read_exact(sock, 4))
    try:
        header = json.loads(read_exact(sock, hlen).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ProtocolError(f"bad message header: {exc}")
    payload = read_exact(sock, int(header.get("payload_bytes", 0)))
    return header, payload


def pack_evaluate_payload(images: np.ndarray, vertex_tables) -> bytes:
    """N float32-LE row-major images (view-major), then per view a uint32-LE
    count followed by (vertex_id, patch_index) uint32-LE pairs."""
    parts = [np.ascontiguousarray(images, dtype="<f4").tobytes()]
    for ids, patches in vertex_tables:
        ids = np.asarray(ids, dtype="<u4")
        patches = np.asarray(patches, dtype="<u4")
        parts.append(struct.pack("<I", len(ids)))
        pairs = np.empty((len(ids), 2), dtype="<u4")
        pairs[:, 0] = ids
        pairs[:, 1] = patches
        parts.append(pairs.tobytes())
    return b"".join(parts)


def unpack_evaluate_payload(payload: bytes, n_views: int, resolution: int):
    """Inverse of pack_evaluate_payload (used by tests and mock servers)."""
    img_bytes = n_views * resolution * resolution * 4
    if len(payload) < img_bytes:
        raise ProtocolError("evaluate payload shorter than declared image block")
    images = np.frombuffer(payload[:img_bytes], dtype="<f4").reshape(
        n_views, resolution, resolution
    ).astype(np.float64)
    tables = []
    off = img_bytes
    for _ in range(n_views):
        if off + 4 > len(payload):
            raise ProtocolError("truncated vertex table")
        (count,) = struct.unpack_from("<I", payload, off)
        off += 4
        end = off + 8 * count
        if end > len(payload):
            raise ProtocolError("truncated vertex table entries")
        pairs = np.frombuffer(payload[off:end], dtype="<u4").reshape(count, 2)
        tables.append((pairs[:, 0].copy(), pairs[:, 1].copy()))
        off = end
    return images, tables


def parse_result(header: dict, payload: bytes, n_views: int, resolution: int) -> GuidanceResponse:
    if header.get("type") == "error":
        raise ProtocolError(f"service error: {header.get('message', '<no message>')}")
    if header.get("type") != "result":
        raise ProtocolError(f"unexpected message type {header.get('type')!r}")
    expected = n_views * resolution * resolution * 4
    if len(payload) != expected:
        raise ShapeMismatch(
            f"gradient payload {len(payload)} bytes, expected {expected} "
            f"({n_views} views at {resolution}x{resolution} float32)"
        )
    grads = np.frombuffer(payload, dtype="<f4").reshape(
        n_views, resolution, resolution
    ).astype(np.float64)
    return GuidanceResponse(
        semantic_loss=float(header["semantic_loss"]),
        vc_loss=float(header["vc_loss"]),
        pixel_gradients=grads,
    )


@dataclass
class RemoteProvider:
    """Client for a guidance service reachable at ``host:port``.

    Lazily connects and handshakes on first use. Connection failures retry
    with exponential backoff (3 attempts) before raising ProviderUnavailable;
    protocol-version mismatches and NaNs in responses abort immediately.
    """

    endpoint: str
    resolution: int
    views: int
    patch_size: int
    stride: int
    prompt: str = ""
    base_prompt: str = ""
    semantic_weight: float = 1.0
    vc_weight: float = 1.0
    directional: bool = False
    retry_base_delay: float = 0.5
    _sock: socket.socket | None = field(default=None, repr=False)

    def _parse_endpoint(self):
        host, _, port = self.endpoint.rpartition(":")
        if not host or not port.isdigit():
            raise GuidanceError(f"endpoint must be host:port, got {self.endpoint!r}")
        return host, int(port)

    def connect(self):
        if self._sock is not None:
            return
        host, port = self._parse_endpoint()
        last_exc = None
        for attempt in range(3):
            if attempt:
                time.sleep(self.retry_base_delay * 2 ** (attempt - 1))
            try:
                self._sock = socket.create_connection((host, port), timeout=60.0)
                break
            except OSError as exc:
                last_exc = exc
        else:
            raise ProviderUnavailable(
                f"cannot reach guidance service at {self.endpoint} after 3 attempts: {last_exc}"
            )
        hello = {
            "type": "hello",
            "version": PROTOCOL_VERSION,
            "resolution": self.resolution,
            "views": self.views,
            "patch_size": self.patch_size,
            "stride": self.stride,
            "prompt": self.prompt,
            "base_prompt": self.base_prompt,
            "weights": {"semantic": self.semantic_weight, "vc": self.vc_weight},
            "directional": self.directional,
        }
        self._sock.sendall(encode_message(hello))
        header, _ = read_message(self._sock)
        if header.get("type") == "error":
            self.close()
            raise ProtocolError(f"handshake refused: {header.get('message')}")
        if header.get("type") != "ready" or header.get("version") != PROTOCOL_VERSION:
            self.close()
            raise ProtocolError(
                f"protocol version mismatch: expected ready/v{PROTOCOL_VERSION}, got {header}"
            )

    def evaluate(self, request: GuidanceRequest) -> GuidanceResponse:
        if request.images.shape[1] != self.resolution or request.images.shape[0] != self.views:
            raise ShapeMismatch(
                f"request {request.images.shape} does not match handshake "
                f"({self.views} views at {self.resolution})"
            )
        self.connect()
        payload = pack_evaluate_payload(request.images, request.vertex_tables)
        msg = encode_message({"type": "evaluate", "iteration": request.iteration}, payload)
        try:
            self._sock.sendall(msg)
            header, body = read_message(self._sock)
        except OSError as exc:
            self.close()
            raise ProviderUnavailable(f"connection lost during evaluate: {exc}")
        response = parse_result(header, body, self.views, self.resolution)
        bad = ~np.isfinite(response.pixel_gradients)
        if np.any(bad):
            view = int(np.nonzero(bad.reshape(self.views, -1).any(axis=1))[0][0])
            exc = GuidanceError(
                f"non-finite gradient from service in view {view} "
                f"(iteration {request.iteration})"
            )
            # carried so the run loop can dump the offending view for diagnosis
            exc.offending_view = view
            exc.offending_gradients = response.pixel_gradients[view]
            raise exc
        response.validate_against(request)
        return response

    def close(self):
        if self._sock is not None:
            try:
                self._sock.sendall(encode_message({"type": "shutdown"}))
            except OSError:
                pass
            try:
                self._sock.close()
            finally:
                self._sock = None

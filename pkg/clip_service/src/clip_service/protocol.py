"""Server-side framing for the guidance wire protocol.

Every message is a 4-byte big-endian header length, a UTF-8 JSON header, and
a raw binary payload whose byte count the header carries in ``payload_bytes``.
"""

from __future__ import annotations

import json
import socket
import struct

import numpy as np

PROTOCOL_VERSION = 1


class ProtocolViolation(Exception):
    pass


def encode(header: dict, payload: bytes = b"") -> bytes:
    if payload:
        header = dict(header, payload_bytes=len(payload))
    raw = json.dumps(header).encode("utf-8")
    return struct.pack(">I", len(raw)) + raw + payload


def recv_exact(conn: socket.socket, n: int) -> bytes:
    chunks = []
    remaining = n
    while remaining > 0:
        chunk = conn.recv(remaining)
        if not chunk:
            raise ConnectionError("peer closed mid-message")
        chunks.append(chunk)
        remaining -= len(chunk)
    return b"".join(chunks)


def recv_message(conn: socket.socket):
    (hlen,) = struct.unpack(">I", recv_exact(conn, 4))
    try:
        header = json.loads(recv_exact(conn, hlen).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ProtocolViolation(f"malformed header: {exc}")
    if not isinstance(header, dict) or "type" not in header:
        raise ProtocolViolation("header missing 'type'")
    payload = recv_exact(conn, int(header.get("payload_bytes", 0)))
    return header, payload


def decode_evaluate_payload(payload: bytes, views: int, resolution: int):
    """Images (views, H, W float32-LE) followed by one visible-vertex table
    per view: uint32-LE count, then (vertex_id, patch_index) uint32-LE pairs."""
    img_bytes = views * resolution * resolution * 4
    if len(payload) < img_bytes:
        raise ProtocolViolation(
            f"payload {len(payload)} bytes is shorter than the image block ({img_bytes})"
        )
    images = np.frombuffer(payload[:img_bytes], dtype="<f4").reshape(
        views, resolution, resolution
    )
    tables = []
    offset = img_bytes
    for view in range(views):
        if offset + 4 > len(payload):
            raise ProtocolViolation(f"truncated vertex table for view {view}")
        (count,) = struct.unpack_from("<I", payload, offset)
        offset += 4
        end = offset + 8 * count
        if end > len(payload):
            raise ProtocolViolation(f"truncated vertex entries for view {view}")
        pairs = np.frombuffer(payload[offset:end], dtype="<u4").reshape(count, 2)
        tables.append((pairs[:, 0].astype(np.int64), pairs[:, 1].astype(np.int64)))
        offset = end
    if offset != len(payload):
        raise ProtocolViolation(f"{len(payload) - offset} trailing bytes in payload")
    return images, tables


def encode_result(semantic_loss: float, vc_loss: float, gradients: np.ndarray) -> bytes:
    data = np.ascontiguousarray(gradients, dtype="<f4").tobytes()
    return encode(
        {"type": "result", "semantic_loss": float(semantic_loss), "vc_loss": float(vc_loss)},
        data,
    )

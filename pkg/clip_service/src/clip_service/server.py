"""Socket server speaking the guidance protocol: one session at a time,
requests within a session processed strictly in order."""

from __future__ import annotations

import logging
import socket

import numpy as np
import torch

from . import protocol
from .encoders import EncoderError, build_encoder
from .lossmodel import LossModel

logger = logging.getLogger("clip_service")

REQUIRED_HELLO_KEYS = ("version", "resolution", "views", "patch_size", "stride")


class GuidanceServer:
    def __init__(self, host: str = "127.0.0.1", port: int = 0,
                 model_id: str = "toy", deterministic: bool = False):
        self.model_id = model_id
        self.deterministic = deterministic
        self._server = socket.create_server((host, port))
        self.port = self._server.getsockname()[1]
        self.endpoint = f"{host}:{self.port}"
        if deterministic:
            torch.set_num_threads(1)
            torch.use_deterministic_algorithms(True)

    def serve_forever(self, max_sessions: int | None = None):
        served = 0
        while max_sessions is None or served < max_sessions:
            try:
                conn, peer = self._server.accept()
            except OSError:
                return
            logger.info("session from %s", peer)
            try:
                self._session(conn)
            except (ConnectionError, OSError) as exc:
                logger.warning("session dropped: %s", exc)
            except protocol.ProtocolViolation as exc:
                logger.warning("protocol violation: %s", exc)
                self._try_send_error(conn, str(exc))
            finally:
                conn.close()
                served += 1

    def close(self):
        self._server.close()

    @staticmethod
    def _try_send_error(conn, message):
        try:
            conn.sendall(protocol.encode({"type": "error", "message": message}))
        except OSError:
            pass

    def _session(self, conn: socket.socket):
        header, _ = protocol.recv_message(conn)
        if header.get("type") != "hello":
            raise protocol.ProtocolViolation(f"expected hello, got {header.get('type')!r}")
        if header.get("version") != protocol.PROTOCOL_VERSION:
            self._try_send_error(
                conn,
                f"protocol version mismatch: server speaks {protocol.PROTOCOL_VERSION}, "
                f"client sent {header.get('version')!r}",
            )
            return
        missing = [k for k in REQUIRED_HELLO_KEYS if k not in header]
        if missing:
            raise protocol.ProtocolViolation(f"hello missing keys: {missing}")

        resolution = int(header["resolution"])
        views = int(header["views"])
        weights = header.get("weights", {})
        try:
            encoder = build_encoder(
                self.model_id, resolution, int(header["patch_size"]), int(header["stride"])
            )
        except EncoderError as exc:
            self._try_send_error(conn, f"model load failed: {exc}")
            return
        model = LossModel(
            encoder,
            prompt=header.get("prompt", ""),
            base_prompt=header.get("base_prompt", ""),
            semantic_weight=float(weights.get("semantic", 1.0)),
            vc_weight=float(weights.get("vc", 1.0)),
            directional=bool(header.get("directional", False)),
        )
        conn.sendall(protocol.encode({
            "type": "ready",
            "version": protocol.PROTOCOL_VERSION,
            "feature_layer": "final_token",
            "model": self.model_id,
        }))

        while True:
            header, payload = protocol.recv_message(conn)
            kind = header.get("type")
            if kind == "shutdown":
                logger.info("session shutdown")
                return
            if kind != "evaluate":
                raise protocol.ProtocolViolation(f"unexpected message type {kind!r}")
            images, tables = protocol.decode_evaluate_payload(payload, views, resolution)
            try:
                semantic, vc, grads = model.evaluate(images, tables)
            except ValueError as exc:
                raise protocol.ProtocolViolation(str(exc))
            if not (np.isfinite(semantic) and np.isfinite(vc)):
                raise protocol.ProtocolViolation("model produced non-finite loss")
            conn.sendall(protocol.encode_result(semantic, vc, grads))
            logger.info(
                "iteration %s: semantic %.6f vc %.6f", header.get("iteration"), semantic, vc
            )


def serve(host: str, port: int, model_id: str, deterministic: bool):
    server = GuidanceServer(host, port, model_id, deterministic)
    print(f"guidance service listening on {server.endpoint} (model {model_id})", flush=True)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.close()

import socket
import threading
from pathlib import Path

import pytest

from clip_service.server import GuidanceServer

FIXTURES = Path(__file__).parent / "fixtures"


@pytest.fixture
def live_server():
    """One-session deterministic server on a fresh port."""
    server = GuidanceServer(deterministic=True)
    thread = threading.Thread(target=server.serve_forever,
                              kwargs={"max_sessions": 1}, daemon=True)
    thread.start()
    yield server
    server.close()


def connect(server):
    return socket.create_connection(("127.0.0.1", server.port), timeout=30.0)

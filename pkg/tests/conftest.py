from __future__ import annotations

import socket
import threading
import time
from datetime import datetime, timezone

import pytest

NOW = datetime(2025, 6, 15, 12, 0, 0, tzinfo=timezone.utc)


@pytest.fixture
def now() -> datetime:
    return NOW


class UvicornHandle:
    """Runs an ASGI app on an ephemeral localhost port in a thread."""

    def __init__(self, app):
        import uvicorn

        self._config = uvicorn.Config(
            app, host="127.0.0.1", port=0, log_level="warning", lifespan="off"
        )
        self._server = uvicorn.Server(self._config)
        self._thread = threading.Thread(target=self._server.run, daemon=True)
        self.base_url = ""

    def __enter__(self) -> "UvicornHandle":
        self._thread.start()
        deadline = time.monotonic() + 10
        while not self._server.started:
            if time.monotonic() > deadline:
                raise RuntimeError("server did not start")
            time.sleep(0.01)
        sock: socket.socket = self._server.servers[0].sockets[0]
        host, port = sock.getsockname()[:2]
        self.base_url = f"http://{host}:{port}"
        return self

    def __exit__(self, *exc) -> None:
        self._server.should_exit = True
        self._thread.join(timeout=10)


@pytest.fixture
def run_http_server():
    """Factory fixture: start an app on a real socket, yield its base URL."""
    handles: list[UvicornHandle] = []

    def start(app) -> str:
        handle = UvicornHandle(app).__enter__()
        handles.append(handle)
        return handle.base_url

    yield start
    for handle in handles:
        handle.__exit__()

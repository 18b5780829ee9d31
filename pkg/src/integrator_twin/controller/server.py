"""TCP front end: one control session at a time, newline-delimited ASCII."""

from __future__ import annotations

import logging
import socket
import threading

from .protocol import MAX_LINE, ErrorCode, Response
from .service import Controller

log = logging.getLogger(__name__)

DEFAULT_PORT = 5025
BUSY_BANNER = Response.failure(ErrorCode.BUSY).to_line().encode("ascii") + b"\n"


class ControllerServer:
    """Serve a :class:`Controller` over TCP.

    A second client connecting while a session is open receives ``ERR busy``
    and is disconnected. When a session ends the server keeps listening; if a
    NET command changed the stored IP in the meantime, the listener is rebound
    to that address (same port). Passing ``host`` pins the bind address and
    disables the rebind.
    """

    def __init__(
        self,
        controller: Controller,
        host: str | None = None,
        port: int = DEFAULT_PORT,
        session_timeout: float | None = None,
    ):
        self.controller = controller
        self.host_override = host
        self.port = port
        self.session_timeout = session_timeout
        self._listener: socket.socket | None = None
        self._session: threading.Thread | None = None
        self._active = threading.Event()
        self._stop = threading.Event()
        self._thread: threading.Thread | None = None
        self.bound: tuple[str, int] | None = None
        self._unbindable: str | None = None

    @property
    def address(self) -> tuple[str, int]:
        if self.bound is None:
            raise RuntimeError("server is not listening")
        return self.bound

    def _bind_host(self) -> str:
        return self.host_override or self.controller.state.net.ip

    def _listen(self) -> None:
        sock = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        try:
            sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
            sock.bind((self._bind_host(), self.port))
            sock.listen(4)
        except OSError:
            sock.close()
            raise
        sock.settimeout(0.05)
        if self._listener is not None:
            self._listener.close()
        self._listener = sock
        self.bound = sock.getsockname()[:2]
        # an ephemeral port sticks across rebinds
        self.port = self.bound[1]
        log.info("listening on %s:%d", *self.bound)

    def serve_forever(self) -> None:
        if self._listener is None:
            self._listen()
        try:
            while not self._stop.is_set():
                wanted = self.controller.state.net.ip
                if (
                    not self._active.is_set()
                    and self.host_override is None
                    and wanted not in (self.bound[0], self._unbindable)
                ):
                    try:
                        self._listen()
                    except OSError as exc:
                        # keep serving on the old address rather than going dark
                        log.error("cannot rebind to %s:%d: %s", wanted, self.port, exc)
                        self._unbindable = wanted
                try:
                    conn, peer = self._listener.accept()
                except socket.timeout:
                    continue
                except OSError:
                    if self._stop.is_set():
                        break
                    raise
                if self._active.is_set():
                    log.info("refusing %s:%d, session busy", *peer)
                    try:
                        conn.sendall(BUSY_BANNER)
                    except OSError:
                        pass
                    conn.close()
                    continue
                self._active.set()
                self._session = threading.Thread(
                    target=self._run_session, args=(conn, peer), name="control-session", daemon=True
                )
                self._session.start()
        finally:
            if self._listener is not None:
                self._listener.close()
            if self._session is not None:
                self._session.join(timeout=2)

    def _run_session(self, conn: socket.socket, peer) -> None:
        log.info("session from %s:%d", *peer)
        conn.settimeout(self.session_timeout)
        try:
            with conn, conn.makefile("rb") as reader:
                while not self._stop.is_set():
                    line = reader.readline(MAX_LINE + 2)
                    if not line:
                        break
                    if not line.endswith(b"\n"):
                        # overlong record: drain to the newline, then reject once
                        while line and not line.endswith(b"\n"):
                            line = reader.readline(MAX_LINE + 2)
                        response, quit_ = Response.failure(ErrorCode.UNKNOWN), False
                    else:
                        response, quit_ = self.controller.handle_line(line)
                    log.debug("%r -> %s", line, response.to_line())
                    if quit_:
                        self._end_session()
                    conn.sendall(response.to_line().encode("ascii") + b"\n")
                    if quit_:
                        break
        except (OSError, ValueError) as exc:
            log.info("session from %s:%d dropped: %s", *peer, exc)
        finally:
            self._end_session()
        log.info("session from %s:%d closed", *peer)

    def _end_session(self) -> None:
        # a QUIT already released the slot; a newer session may own it by now
        if self._session is threading.current_thread():
            self._active.clear()

    def start(self) -> ControllerServer:
        """Run :meth:`serve_forever` on a daemon thread; returns once bound."""
        self._listen()
        self._thread = threading.Thread(target=self.serve_forever, name="control-server", daemon=True)
        self._thread.start()
        return self

    def shutdown(self) -> None:
        self._stop.set()
        if self._thread is not None:
            self._thread.join(timeout=5)

    def __enter__(self) -> ControllerServer:
        return self.start()

    def __exit__(self, *exc) -> None:
        self.shutdown()

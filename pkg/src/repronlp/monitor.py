"""HTTP surface for a live training run: event streaming and control.

Endpoints (all JSON, UTF-8):

* ``GET /status``  -> ``{run_id, state, epoch, config_fingerprint}``
* ``GET /events``  -> newline-delimited JSON: every event so far, then live
  ones as they occur (``application/x-ndjson``, held open until completion)
* ``GET /history`` -> JSON array of all events
* ``POST /control`` with ``{"action": "early_stop" | "reset_epoch"}`` -> 202

Control is epoch-granular: the trainer polls a single-slot mailbox at epoch
boundaries, so a command never interrupts a batch mid-update.  A second
command posted before the next boundary supersedes the first.  Commands after
completion get 409.  The event log is append-only; reconnecting clients
always receive the full prefix.
"""

from __future__ import annotations

import json
import logging
import threading
from dataclasses import dataclass
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

from .model import TrainEvent

logger = logging.getLogger(__name__)

ACTIONS = ("early_stop", "reset_epoch")


@dataclass
class ControlCommand:
    action: str
    issued_at: int  # epoch the client had observed


class RunHandle:
    """Shared state between one trainer and any number of monitor clients.

    The trainer is the single writer of the event log and the single reader
    of the command mailbox; HTTP threads only append commands and read events.
    """

    def __init__(self, run_id: str, config_fingerprint: str = ""):
        self.run_id = run_id
        self.config_fingerprint = config_fingerprint
        self._events: list[TrainEvent] = []
        self._cond = threading.Condition()
        self._command: ControlCommand | None = None
        self._completed = False

    # -- trainer side -------------------------------------------------------

    def publish(self, event: TrainEvent) -> None:
        with self._cond:
            self._events.append(event)
            self._cond.notify_all()

    def complete(self) -> None:
        with self._cond:
            self._completed = True
            self._cond.notify_all()

    def take(self) -> str | None:
        """Pop the pending command, if any; called at epoch boundaries."""
        with self._cond:
            command = self._command
            self._command = None
            return command.action if command else None

    # -- client side ----------------------------------------------------------

    def submit(self, action: str, issued_at: int = 0) -> None:
        if action not in ACTIONS:
            raise ValueError(f"unknown action {action!r}")
        with self._cond:
            if self._completed:
                raise RuntimeError("run already completed")
            # last-wins: a newer command supersedes an unconsumed one
            self._command = ControlCommand(action=action, issued_at=issued_at)

    @property
    def completed(self) -> bool:
        with self._cond:
            return self._completed

    @property
    def epoch(self) -> int:
        with self._cond:
            return self._events[-1].epoch if self._events else 0

    def snapshot_events(self) -> list[TrainEvent]:
        with self._cond:
            return list(self._events)

    def wait_beyond(self, count: int, timeout: float = 0.5):
        """Block until more than ``count`` events exist or the run completes."""
        with self._cond:
            self._cond.wait_for(
                lambda: len(self._events) > count or self._completed, timeout=timeout
            )
            return list(self._events[count:]), self._completed


def _make_handler(handle: RunHandle):
    class MonitorRequestHandler(BaseHTTPRequestHandler):
        # HTTP/1.0 close-delimited responses keep the ndjson stream framing trivial
        protocol_version = "HTTP/1.0"

        def log_message(self, fmt, *args):  # quiet by default
            logger.debug("monitor: " + fmt, *args)

        def _cors(self):
            self.send_header("Access-Control-Allow-Origin", "*")
            self.send_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS")
            self.send_header("Access-Control-Allow-Headers", "Content-Type")

        def _send_json(self, status: int, payload) -> None:
            body = json.dumps(payload).encode("utf-8")
            self.send_response(status)
            self._cors()
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(body)))
            self.end_headers()
            self.wfile.write(body)

        def do_OPTIONS(self):
            self.send_response(204)
            self._cors()
            self.end_headers()

        def do_GET(self):
            if self.path == "/status":
                self._send_json(200, {
                    "run_id": handle.run_id,
                    "state": "completed" if handle.completed else "running",
                    "epoch": handle.epoch,
                    "config_fingerprint": handle.config_fingerprint,
                })
            elif self.path == "/history":
                self._send_json(200, [e.to_json_dict()
                                      for e in handle.snapshot_events()])
            elif self.path == "/events":
                self._stream_events()
            else:
                self._send_json(404, {"error": f"no such endpoint {self.path}"})

        def _stream_events(self):
            self.send_response(200)
            self._cors()
            self.send_header("Content-Type", "application/x-ndjson")
            self.end_headers()
            sent = 0
            try:
                while True:
                    fresh, completed = handle.wait_beyond(sent)
                    for event in fresh:
                        line = json.dumps(event.to_json_dict()) + "\n"
                        self.wfile.write(line.encode("utf-8"))
                        sent += 1
                    self.wfile.flush()
                    if completed and not fresh:
                        return
            except (BrokenPipeError, ConnectionResetError):
                return  # client went away; nothing to clean up

        def do_POST(self):
            if self.path != "/control":
                self._send_json(404, {"error": f"no such endpoint {self.path}"})
                return
            length = int(self.headers.get("Content-Length", 0))
            try:
                payload = json.loads(self.rfile.read(length).decode("utf-8"))
                action = payload["action"]
            except (json.JSONDecodeError, UnicodeDecodeError, KeyError, TypeError):
                self._send_json(400, {"error": "body must be JSON with an 'action'"})
                return
            issued_at = payload.get("issued_at", 0)
            if action not in ACTIONS:
                self._send_json(400, {"error": f"unknown action {action!r}",
                                      "allowed": list(ACTIONS)})
                return
            try:
                handle.submit(action, issued_at=issued_at)
            except RuntimeError:
                self._send_json(409, {"error": "run already completed"})
                return
            self._send_json(202, {"accepted": action})

    return MonitorRequestHandler


class _Server(ThreadingHTTPServer):
    # join handler threads on close so open /events streams drain before exit;
    # handlers finish promptly once the run completes
    daemon_threads = False
    block_on_close = True


class MonitorServer:
    def __init__(self, handle: RunHandle, port: int):
        self._server = _Server(("127.0.0.1", port), _make_handler(handle))
        self._thread = threading.Thread(
            target=lambda: self._server.serve_forever(poll_interval=0.05),
            name="monitor", daemon=True)

    @property
    def port(self) -> int:
        return self._server.server_address[1]

    def start(self) -> None:
        self._thread.start()

    def stop(self) -> None:
        self._server.shutdown()
        self._server.server_close()


def serve(handle: RunHandle, port: int) -> MonitorServer | None:
    """Start the monitor; a busy port degrades to a warning, never a failure."""
    try:
        server = MonitorServer(handle, port)
    except OSError as exc:
        logger.warning("monitor disabled: cannot bind port %d (%s)", port, exc)
        return None
    server.start()
    return server

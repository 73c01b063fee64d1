"""Real-socket binding of the protocol: TCP server and node runner.

Frames are byte-identical to the simulated link; both channels share the
TCP stream, whose reliability stands in for the lossless control path.
The node runner paces the scenario against the wall clock divided by a
speedup factor, so multi-day storms can stream in seconds.
"""

from __future__ import annotations

import logging
import socket
import socketserver
import threading
import time

from slopewatch import wire
from slopewatch.alert import AlertEngine, Dispatcher
from slopewatch.config import Config, build_sinks
from slopewatch.ingest import Repository
from slopewatch.nodesim import Scenario, ScenarioPlayer
from slopewatch.session import (
    ConnAckReceived,
    DataAckReceived,
    IpAssigned,
    LinkDown,
    LogWarning,
    NodeState,
    ReadingsAvailable,
    SendFrame,
    ServerIpReceived,
    SessionTiming,
    SetTimer,
    TimerFired,
    node_step,
)
from slopewatch.station import ServerEngine
from slopewatch.replay import _group_batches

logger = logging.getLogger(__name__)

CONTROL_TYPES = (wire.MessageType.REQ_IP, wire.MessageType.SEND_IP)


class StationServer(socketserver.ThreadingTCPServer):
    """One engine shared by all client connections, guarded by a lock."""

    allow_reuse_address = True
    daemon_threads = True

    def __init__(self, addr: tuple[str, int], config: Config, store_dir: str):
        self.engine_lock = threading.Lock()
        repo = Repository(store_dir)
        alert_engine = AlertEngine(
            config.thresholds, config.analysis, Dispatcher(build_sinks(config, store_dir))
        )
        self.engine = ServerEngine(repo, config.calibration, alert_engine)
        super().__init__(addr, _StationHandler)

    def close_store(self) -> None:
        with self.engine_lock:
            self.engine.repo.close()


class _StationHandler(socketserver.StreamRequestHandler):
    def handle(self) -> None:
        server: StationServer = self.server  # type: ignore[assignment]
        peer_node: int | None = None
        while True:
            try:
                raw = wire.read_frame(self.rfile)
            except (wire.FrameError, ConnectionError, OSError):
                break
            if raw is None:
                break
            try:
                frame = wire.decode_frame(raw)
            except wire.FrameError as exc:
                logger.warning("dropping bad frame from %s: %s", self.client_address, exc)
                continue
            now = time.time()
            with server.engine_lock:
                if frame.msg_type in CONTROL_TYPES:
                    out = server.engine.handle_control_frame(frame, now)
                else:
                    out = server.engine.handle_data_frame(frame, now)
                if frame.msg_type is wire.MessageType.REQ_CONN:
                    peer_node = wire.decode_reqconn(frame.payload)[0]
            try:
                for ob in out:
                    self.wfile.write(wire.encode_frame(ob.frame))
                self.wfile.flush()
            except (ConnectionError, OSError):
                break
        if peer_node is not None:
            with server.engine_lock:
                server.engine.handle_link_down(peer_node, time.time())


def run_station(config: Config, listen: str, store_dir: str, ready_event=None, stop_event=None) -> int:
    """Serve until interrupted; flush the store on the way out."""
    host, _, port_s = listen.partition(":")
    addr = (host or "127.0.0.1", int(port_s or 0))
    try:
        server = StationServer(addr, config, store_dir)
    except OSError as exc:
        logger.error("cannot bind %s: %s", listen, exc)
        return 1
    host, port = server.server_address[:2]
    print(f"listening on {host}:{port}", flush=True)
    if ready_event is not None:
        ready_event.set()
    try:
        if stop_event is None:
            server.serve_forever(poll_interval=0.2)
        else:
            threading.Thread(target=server.serve_forever, kwargs={"poll_interval": 0.1}, daemon=True).start()
            stop_event.wait()
    except KeyboardInterrupt:
        pass
    finally:
        server.shutdown()
        server.close_store()
        server.server_close()
        print("store flushed, bye", flush=True)
    return 0


class NodeRunner:
    """Streams one scenario to a station over TCP, reconnecting on failures."""

    def __init__(
        self,
        scenario: Scenario,
        node_id: int,
        connect: str,
        speedup: float = 3600.0,
        timing: SessionTiming | None = None,
    ):
        host, _, port_s = connect.partition(":")
        self.addr = (host or "127.0.0.1", int(port_s))
        self.scenario = scenario
        self.speedup = max(speedup, 1e-9)
        # Wall-clock pacing: keep protocol timers snappy relative to sim time.
        self.timing = timing or SessionTiming(
            ip_retry=2.0, announce_timeout=2.0, connect_timeout=5.0,
            retransmit_interval=5.0, heartbeat_interval=30.0,
        )
        self.start_wall = time.monotonic()
        self.start_ts = int(time.time())
        self.player = ScenarioPlayer(scenario, node_id=node_id, start_ts=self.start_ts)
        self.state = NodeState(node_id=node_id)
        self.sock: socket.socket | None = None
        self._timer_at: float | None = None
        self._buffer = b""

    # sim-time now: scenario seconds elapsed
    def _sim_now(self) -> float:
        return self.start_ts + (time.monotonic() - self.start_wall) * self.speedup

    def run(self) -> int:
        self._connect_socket()
        self._event(TimerFired())  # boot
        end_ts = self.start_ts + self.scenario.duration
        next_tick = float(self.start_ts)
        while not (self.player.exhausted and not self.state.pending):
            now = self._sim_now()
            if now >= next_tick:
                for batch in _group_batches(self.player.emit_readings(min(now, end_ts))):
                    self._event(ReadingsAvailable(batch))
                next_tick += self.scenario.sample_interval
            if self._timer_at is not None and time.monotonic() >= self._timer_at:
                self._timer_at = None
                self._event(TimerFired())
            self._poll_socket()
        logger.info("scenario complete: %d readings emitted", self.player.emitted)
        if self.sock:
            self.sock.close()
        return 0

    def _connect_socket(self) -> None:
        if self.sock is not None:
            self.sock.close()
        try:
            self.sock = socket.create_connection(self.addr, timeout=5.0)
            self.sock.settimeout(0.05)
        except OSError:
            self.sock = None

    def _event(self, event) -> None:
        state, actions = node_step(self.state, event, self._sim_now(), self.timing)
        self.state = state
        sends = []
        for action in actions:
            if isinstance(action, SetTimer):
                # Protocol timers run on the wall clock, scaled like the scenario.
                self._timer_at = time.monotonic() + action.delay / self.speedup
            elif isinstance(action, LogWarning):
                logger.warning(action.message)
            elif isinstance(action, SendFrame):
                sends.append(action)
        # Transmit after all state bookkeeping so a failure maps to exactly
        # one LinkDown event and cannot be overridden by a later SetTimer.
        for action in sends:
            if not self._send(action):
                self._event(LinkDown())
                break

    def _send(self, action: SendFrame) -> bool:
        if action.frame.msg_type is wire.MessageType.REQ_CONN:
            self._connect_socket()  # fresh connection attempt
        if self.sock is None:
            return False
        try:
            self.sock.sendall(wire.encode_frame(action.frame))
            return True
        except OSError:
            return False

    def _poll_socket(self) -> None:
        if self.sock is None:
            time.sleep(0.02)
            return
        try:
            header = self.sock.recv(4096)
        except socket.timeout:
            return
        except OSError:
            self._event(LinkDown())
            return
        if not header:
            self._event(LinkDown())
            return
        self._buffer = getattr(self, "_buffer", b"") + header
        while True:
            frame, rest = _try_split(self._buffer)
            if frame is None:
                self._buffer = rest
                return
            self._buffer = rest
            self._handle_frame(frame)

    def _handle_frame(self, frame: wire.Frame) -> None:
        t = frame.msg_type
        if t is wire.MessageType.IP_ASSIGN:
            self._event(IpAssigned(wire.decode_ipassign(frame.payload)))
        elif t is wire.MessageType.SERVER_IP:
            self._event(ServerIpReceived(wire.decode_serverip(frame.payload)))
        elif t is wire.MessageType.CONN_ACK:
            sid, nonce = wire.decode_connack(frame.payload)
            self._event(ConnAckReceived(sid, nonce))
        elif t is wire.MessageType.DATA_ACK:
            self._event(DataAckReceived(wire.decode_dataack(frame.payload)))


def _try_split(buf: bytes) -> tuple[wire.Frame | None, bytes]:
    """Extract one frame from a stream buffer, or signal more bytes needed."""
    if len(buf) < wire.HEADER_LEN:
        return None, buf
    plen = int.from_bytes(buf[4:6], "big")
    total = wire.HEADER_LEN + plen + wire.TRAILER_LEN
    if len(buf) < total:
        return None, buf
    frame = wire.decode_frame(buf[:total])
    return frame, buf[total:]

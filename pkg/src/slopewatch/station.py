"""Base-station service engine: frames in, acks and alerts out.

Decodes protocol frames, drives the per-node server state machines,
allocates session ids, forwards batches to the repository and triggers one
alert evaluation per ingested batch. Transport-agnostic: both the
discrete-event replay harness and the socket server feed it frames and
transmit whatever it returns.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

from slopewatch import wire
from slopewatch.alert import AlertEngine
from slopewatch.domain import CalibrationConstants, SensorKind
from slopewatch.ingest import MissingConstantsError, Repository
from slopewatch.session import (
    AnnounceReceived,
    Channel,
    ForwardToIngest,
    LinkDown,
    LogWarning,
    ReqConnReceived,
    SendDataReceived,
    SendFrame,
    ServerSessionState,
    TraceLog,
    server_step,
)
from slopewatch.wire import Frame, MessageType

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Outbound:
    """A frame the engine wants transmitted."""

    frame: Frame
    channel: Channel
    node_id: int


class ServerEngine:
    """One engine per base station; sessions are keyed by node id."""

    def __init__(
        self,
        repo: Repository,
        calibration: dict[SensorKind, CalibrationConstants],
        alert_engine: AlertEngine,
        server_ip: str = "10.0.0.1",
        trace: TraceLog | None = None,
    ):
        self.repo = repo
        self.calibration = calibration
        self.alert_engine = alert_engine
        self.server_ip = server_ip
        self.trace = trace
        self.sessions: dict[int, ServerSessionState] = {}
        self.registry: dict[int, str] = {}  # node_id -> last announced IP
        self._session_to_node: dict[int, int] = {}
        self._next_session_id = 1
        self.batches_ingested = 0
        self.records_stored = 0
        self.duplicates_skipped = 0
        self.violations = 0

    # -- helpers ---------------------------------------------------------------

    def _state_of(self, node_id: int) -> ServerSessionState:
        if node_id not in self.sessions:
            self.sessions[node_id] = ServerSessionState(node_id=node_id)
        return self.sessions[node_id]

    def _alloc_session(self, node_id: int) -> int:
        sid = self._next_session_id
        self._next_session_id += 1
        self._session_to_node[sid] = node_id
        return sid

    def _step(self, node_id: int, event, now: float) -> list[Outbound]:
        state = self._state_of(node_id)
        new_state, actions = server_step(state, event, now, self.server_ip)
        self.sessions[node_id] = new_state
        if self.trace is not None:
            self.trace.record(now, "server", node_id, new_state.phase.value, event, actions)
        out: list[Outbound] = []
        for action in actions:
            if isinstance(action, ForwardToIngest):
                try:
                    stored = self.repo.ingest_batch(action.payload, node_id, self.calibration)
                except MissingConstantsError as exc:
                    logger.error("batch rejected: %s", exc)
                    return out  # no ack for an unstored batch
                self.batches_ingested += 1
                self.records_stored += len(stored)
                self.duplicates_skipped += len(action.payload.readings) - len(stored)
                self.alert_engine.evaluate_batch(stored)
            elif isinstance(action, SendFrame):
                out.append(Outbound(action.frame, action.channel, action.to_node or node_id))
            elif isinstance(action, LogWarning):
                self.violations += 1
                logger.warning(action.message)
        return out

    # -- entry points ------------------------------------------------------------

    def synthetic_ip_for(self, node_id: int) -> str:
        return f"10.77.{(node_id >> 8) & 0xFF}.{node_id & 0xFF}"

    def handle_control_frame(self, frame: Frame, now: float) -> list[Outbound]:
        """Control-channel frames: IP acquisition and address announcements."""
        if frame.msg_type is MessageType.REQ_IP:
            # Stand-in for the carrier: assign a synthetic address.
            node_id = wire.decode_reqip(frame.payload)
            reply = Frame(MessageType.IP_ASSIGN, wire.encode_ipassign(self.synthetic_ip_for(node_id)))
            return [Outbound(reply, Channel.CONTROL, node_id)]
        if frame.msg_type is MessageType.SEND_IP:
            node_id, ip = wire.decode_sendip(frame.payload)
            self.registry[node_id] = ip
            return self._step(node_id, AnnounceReceived(node_id, ip), now)
        logger.warning("unexpected %s on control channel", frame.msg_type.name)
        return []

    def handle_data_frame(self, frame: Frame, now: float, node_hint: int | None = None) -> list[Outbound]:
        """Data-channel frames: connection requests, batches, heartbeats."""
        if frame.msg_type is MessageType.REQ_CONN:
            node_id, nonce = wire.decode_reqconn(frame.payload)
            sid = self._alloc_session(node_id)
            return self._step(node_id, ReqConnReceived(node_id, nonce, sid), now)
        if frame.msg_type is MessageType.SEND_DATA:
            payload = wire.decode_senddata(frame.payload)
            node_id = self._session_to_node.get(payload.session_id)
            if node_id is None:
                self.violations += 1
                logger.warning("SEND_DATA for unknown session %d", payload.session_id)
                return []
            return self._step(node_id, SendDataReceived(payload), now)
        if frame.msg_type is MessageType.HEARTBEAT:
            return []  # liveness only
        logger.warning("unexpected %s on data channel", frame.msg_type.name)
        return []

    def handle_link_down(self, node_id: int, now: float) -> list[Outbound]:
        return self._step(node_id, LinkDown(), now)

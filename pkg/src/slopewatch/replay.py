"""End-to-end replay: scenario node + lossy link + base station on one clock.

A discrete-event loop owns simulated time; the node and server machines
are stepped purely and all I/O between them flows through the seeded
LossyLink (data channel) or a lossless control path. With a fixed seed the
whole run, including the summary, is reproducible bit for bit.
"""

from __future__ import annotations

import heapq
import logging
import time
from dataclasses import dataclass, field, replace

from slopewatch import wire
from slopewatch.alert import AlertEngine, Dispatcher
from slopewatch.analytics import segment_events
from slopewatch.config import Config, build_sinks
from slopewatch.domain import SensorKind
from slopewatch.ingest import Repository
from slopewatch.nodesim import Scenario, ScenarioPlayer
from slopewatch.session import (
    Channel,
    ConnAckReceived,
    DataAckReceived,
    Delivered,
    IpAssigned,
    LinkDown,
    LinkSevered,
    LogWarning,
    LossyLink,
    MessageType,
    NodePhase,
    NodeState,
    ReadingsAvailable,
    SendFrame,
    ServerIpReceived,
    SessionTiming,
    SetTimer,
    TimerFired,
    TraceLog,
    node_step,
)
from slopewatch.station import Outbound, ServerEngine

logger = logging.getLogger(__name__)

# 2010-04-02 00:00 UTC, the onset of the seven-day-rain storm fixture.
DEFAULT_START_TS = 1270166400

CONTROL_LATENCY_S = 0.01
MAX_READINGS_PER_FRAME = 255


@dataclass
class ReplaySummary:
    scenario: str
    seed: int
    sim_duration_s: float = 0.0
    readings_generated: int = 0
    records_stored: int = 0
    batches_ingested: int = 0
    duplicates_skipped: int = 0
    frames_offered: int = 0
    frames_dropped: int = 0
    severs: int = 0
    reconnect_attempts: int = 0
    recoveries: int = 0
    rain_events: int = 0
    alert_timeline: list[tuple[float, str]] = field(default_factory=list)

    def format(self) -> str:
        lines = [
            f"scenario            {self.scenario}",
            f"seed                {self.seed}",
            f"sim duration        {self.sim_duration_s:.0f} s",
            f"readings generated  {self.readings_generated}",
            f"records stored      {self.records_stored}",
            f"batches ingested    {self.batches_ingested}",
            f"duplicates skipped  {self.duplicates_skipped}",
            f"frames offered      {self.frames_offered}",
            f"frames dropped      {self.frames_dropped}",
            f"link severs         {self.severs}",
            f"reconnect attempts  {self.reconnect_attempts}",
            f"recoveries          {self.recoveries}",
            f"rain events         {self.rain_events}",
            "alert timeline:",
        ]
        for ts, level in self.alert_timeline:
            lines.append(f"  t+{ts:>10.0f}s  {level}")
        return "\n".join(lines)


class SimReplay:
    """Drives one node, one link and one server to scenario completion."""

    def __init__(
        self,
        scenario: Scenario,
        config: Config,
        store_dir: str,
        *,
        seed: int = 0,
        node_id: int = 1,
        start_ts: int = DEFAULT_START_TS,
        timing: SessionTiming | None = None,
        force_disconnect_at: tuple[float, ...] = (),
        server_restart_at: float | None = None,
        sinks: list | None = None,
        speedup: float = 0.0,
        trace: TraceLog | None = None,
    ):
        self.scenario = scenario
        self.config = config
        self.store_dir = store_dir
        self.seed = seed
        self.start_ts = start_ts
        self.speedup = speedup
        self.timing = timing or SessionTiming(heartbeat_interval=1800.0)
        self.trace = trace if trace is not None else TraceLog()
        self.now = float(start_ts)
        self._queue: list[tuple[float, int, object]] = []
        self._counter = 0

        self.link = LossyLink(replace(config.link, rng_seed=seed))
        self.player = ScenarioPlayer(scenario, node_id=node_id, start_ts=start_ts)
        self.node = NodeState(node_id=node_id)
        self._node_timer_gen = 0

        self._sinks = sinks if sinks is not None else build_sinks(config, store_dir)
        self.server = self._make_server()

        self.force_disconnect_at = force_disconnect_at
        self.server_restart_at = server_restart_at
        self.pre_restart_records = None

    def _make_server(self) -> ServerEngine:
        repo = Repository(self.store_dir)
        engine = AlertEngine(self.config.thresholds, self.config.analysis, Dispatcher(self._sinks))
        return ServerEngine(repo, self.config.calibration, engine, trace=self.trace)

    # -- event queue -------------------------------------------------------------

    def _schedule(self, at: float, fn) -> None:
        self._counter += 1
        heapq.heappush(self._queue, (at, self._counter, fn))

    # -- node plumbing -------------------------------------------------------------

    def _node_event(self, event) -> None:
        state, actions = node_step(self.node, event, self.now, self.timing)
        self.node = state
        self.trace.record(self.now, "node", state.node_id, state.phase.value, event, actions)
        for action in actions:
            if isinstance(action, SendFrame):
                self._transmit_from_node(action)
            elif isinstance(action, SetTimer):
                self._set_node_timer(action.delay)
            elif isinstance(action, LogWarning):
                logger.warning(action.message)

    def _set_node_timer(self, delay: float) -> None:
        self._node_timer_gen += 1
        gen = self._node_timer_gen
        self._schedule(self.now + delay, lambda: self._node_timer_fired(gen))

    def _node_timer_fired(self, gen: int) -> None:
        if gen == self._node_timer_gen:  # stale timers were replaced
            self._node_event(TimerFired())

    def _transmit_from_node(self, action: SendFrame) -> None:
        raw = wire.encode_frame(action.frame)
        if action.channel is Channel.CONTROL:
            self._schedule(self.now + CONTROL_LATENCY_S, lambda: self._server_control(raw))
            return
        # A fresh connection attempt re-establishes the severed carrier.
        if action.frame.msg_type is MessageType.REQ_CONN and not self.link.up:
            self.link.reconnect()
        outcome = self.link.deliver(raw, self.now, "up")
        if isinstance(outcome, Delivered):
            self._schedule(outcome.at, lambda: self._server_data(raw))
        elif isinstance(outcome, LinkSevered):
            self._link_down()

    def _link_down(self) -> None:
        self.link.sever()
        node_id = self.node.node_id
        self._schedule(self.now, lambda: self._node_event(LinkDown()))
        self._schedule(self.now, lambda: self._dispatch_outbound(
            self.server.handle_link_down(node_id, self.now)))

    # -- server plumbing ---------------------------------------------------------

    def _server_control(self, raw: bytes) -> None:
        frame = wire.decode_frame(raw)
        self._dispatch_outbound(self.server.handle_control_frame(frame, self.now))

    def _server_data(self, raw: bytes) -> None:
        frame = wire.decode_frame(raw)
        self._dispatch_outbound(self.server.handle_data_frame(frame, self.now))

    def _dispatch_outbound(self, outbound: list[Outbound]) -> None:
        for ob in outbound:
            raw = wire.encode_frame(ob.frame)
            if ob.channel is Channel.CONTROL:
                self._schedule(self.now + CONTROL_LATENCY_S, lambda raw=raw: self._node_receive(raw))
            else:
                outcome = self.link.deliver(raw, self.now, "down")
                if isinstance(outcome, Delivered):
                    self._schedule(outcome.at, lambda raw=raw: self._node_receive(raw))
                elif isinstance(outcome, LinkSevered):
                    self._link_down()

    def _node_receive(self, raw: bytes) -> None:
        frame = wire.decode_frame(raw)
        t = frame.msg_type
        if t is MessageType.IP_ASSIGN:
            self._node_event(IpAssigned(wire.decode_ipassign(frame.payload)))
        elif t is MessageType.SERVER_IP:
            self._node_event(ServerIpReceived(wire.decode_serverip(frame.payload)))
        elif t is MessageType.CONN_ACK:
            sid, nonce = wire.decode_connack(frame.payload)
            self._node_event(ConnAckReceived(sid, nonce))
        elif t is MessageType.DATA_ACK:
            self._node_event(DataAckReceived(wire.decode_dataack(frame.payload)))
        else:
            logger.warning("node received unexpected %s", t.name)

    # -- scenario sampling ---------------------------------------------------------

    def _sample_tick(self) -> None:
        readings = self.player.emit_readings(self.now)
        for batch in _group_batches(readings):
            self._node_event(ReadingsAvailable(batch))

    def _restart_server(self) -> None:
        """Kill-and-restart: in-memory state is lost, the store is reloaded."""
        self.pre_restart_records = self.server.repo.all_records()
        carry = (self.server.batches_ingested, self.server.records_stored,
                 self.server.duplicates_skipped)
        self.server.repo.close()
        self.link.sever()
        self._node_event(LinkDown())
        self.server = self._make_server()
        (self.server.batches_ingested, self.server.records_stored,
         self.server.duplicates_skipped) = carry

    # -- main loop -------------------------------------------------------------------

    def run(self) -> ReplaySummary:
        end_ts = self.start_ts + self.scenario.duration
        interval = max(self.scenario.sample_interval, 1e-9)
        t = float(self.start_ts)
        while t < end_ts:
            self._schedule(t, self._sample_tick)
            t += interval
        self._schedule(end_ts, self._sample_tick)
        for offset in self.force_disconnect_at:
            self._schedule(self.start_ts + offset, self._link_down)
        if self.server_restart_at is not None:
            self._schedule(self.start_ts + self.server_restart_at, self._restart_server)
        self._set_node_timer(0.0)  # boot

        deadline = end_ts + 30 * 86400.0  # hard stop against pathological configs
        try:
            while self._queue:
                at, _, fn = heapq.heappop(self._queue)
                if at > deadline:
                    logger.error("replay aborted at safety deadline")
                    break
                if self.speedup > 0 and at > self.now:
                    time.sleep((at - self.now) / self.speedup)
                self.now = max(self.now, at)
                fn()
                if self.player.exhausted and not self.node.pending and self.now >= end_ts:
                    break
        finally:
            self.server.repo.close()
        return self._summary()

    def _summary(self) -> ReplaySummary:
        phases = self.trace.phases("node")
        reconnects = sum(
            1 for a, b in zip(phases, phases[1:])
            if a == NodePhase.BACKOFF.value and b == NodePhase.CONNECTING.value
        )
        recoveries = 0
        saw_backoff = False
        for p in phases:
            if p == NodePhase.BACKOFF.value:
                saw_backoff = True
            elif p == NodePhase.STREAMING.value and saw_backoff:
                recoveries += 1
                saw_backoff = False
        timeline = [(0.0, "GREEN")] + [
            (ts - self.start_ts, level.name) for ts, level in self.server.alert_engine.timeline
        ]
        rain = self.server.repo.series(SensorKind.RAIN_GAUGE)
        rain_events = (
            len(segment_events(rain, self.config.analysis.dry_gap_h * 3600.0)) if rain else 0
        )
        return ReplaySummary(
            scenario=self.scenario.name,
            seed=self.seed,
            sim_duration_s=self.now - self.start_ts,
            readings_generated=self.player.emitted,
            records_stored=self.server.records_stored,
            batches_ingested=self.server.batches_ingested,
            duplicates_skipped=self.server.duplicates_skipped,
            frames_offered=self.link.frames_offered,
            frames_dropped=self.link.frames_dropped,
            severs=self.link.severs,
            reconnect_attempts=reconnects,
            recoveries=recoveries,
            rain_events=rain_events,
            alert_timeline=timeline,
        )


def _group_batches(readings) -> list[tuple]:
    """Split a reading list into wire batches: equal timestamp, <=255 each.

    Readings arrive in seq order, so each batch holds consecutive seqs and
    the batch seq (first reading's) identifies every reading in it.
    """
    batches: list[tuple] = []
    current: list = []
    for r in readings:
        if current and (r.timestamp != current[0].timestamp or len(current) >= MAX_READINGS_PER_FRAME):
            batches.append(tuple(current))
            current = []
        current.append(r)
    if current:
        batches.append(tuple(current))
    return batches

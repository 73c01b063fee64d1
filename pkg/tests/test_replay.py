"""End-to-end simulated replays: liveness, determinism, safety, durability."""

import dataclasses

from slopewatch.alert import AnalysisConfig, Thresholds
from slopewatch.config import Config
from slopewatch.domain import CalibrationConstants, SensorKind
from slopewatch.nodesim import Scenario, ScenarioStep
from slopewatch.session import LinkConfig, NodePhase
from slopewatch.replay import SimReplay

CALIBRATION = {
    kind: CalibrationConstants(kind, 0.01, 0.0) for kind in SensorKind
}
CALIBRATION[SensorKind.RAIN_GAUGE] = CalibrationConstants(SensorKind.RAIN_GAUGE, 0.2, 0.0)

THRESHOLDS = Thresholds(
    mt_rain_mm_per_h=5.0,
    mt_pore_kpa=50.0,
    mt_displacement_mm=5.0,
    mt_inclination_deg=5.0,
    prediction_horizon=6,
    hold_period_s=1800.0,
)


def make_config(link: LinkConfig) -> Config:
    return Config(
        thresholds=THRESHOLDS,
        analysis=AnalysisConfig(),
        calibration=CALIBRATION,
        link=link,
        sinks=("console",),
    )


def flat_scenario(ticks: int, interval: float = 3600.0) -> Scenario:
    """One quiet reading per sensor per tick; alerts stay green."""
    steps = []
    for k in range(1, ticks + 1):
        t = k * interval
        steps.append(ScenarioStep(t, SensorKind.RAIN_GAUGE, 1))
        steps.append(ScenarioStep(t, SensorKind.PIEZOMETER, 2000))
        steps.append(ScenarioStep(t, SensorKind.EXTENSOMETER, 50))
        steps.append(ScenarioStep(t, SensorKind.INCLINOMETER, 200))
        steps.append(ScenarioStep(t, SensorKind.TILTMETER, 150))
    return Scenario(name="flat", steps=tuple(steps), sample_interval=interval)


def run(scenario, link, store, **kwargs):
    sim = SimReplay(scenario, make_config(link), str(store), **kwargs)
    return sim, sim.run()


class TestLossFreeReplay:
    def test_every_reading_stored_once(self, tmp_path):
        _, summary = run(flat_scenario(20), LinkConfig(), tmp_path / "s", seed=1)
        assert summary.readings_generated == 100
        assert summary.records_stored == 100
        assert summary.duplicates_skipped == 0
        assert summary.frames_dropped == 0

    def test_empty_scenario(self, tmp_path):
        empty = Scenario(name="empty", steps=(), sample_interval=60.0)
        _, summary = run(empty, LinkConfig(), tmp_path / "s", seed=1)
        assert summary.readings_generated == 0
        assert summary.records_stored == 0
        assert summary.alert_timeline == [(0.0, "GREEN")]


class TestLossyReplay:
    def test_exactly_once_under_20pct_drop(self, tmp_path):
        link = LinkConfig(drop_probability=0.2, latency_ms=80)
        _, summary = run(flat_scenario(60), link, tmp_path / "s", seed=11)
        assert summary.records_stored == summary.readings_generated == 300
        assert summary.frames_dropped > 0
        assert summary.duplicates_skipped > 0  # retransmissions happened and were absorbed

    def test_deterministic_for_fixed_seed(self, tmp_path):
        link = LinkConfig(drop_probability=0.2, disconnect_probability_per_frame=0.002)
        _, first = run(flat_scenario(40), link, tmp_path / "a", seed=5)
        _, second = run(flat_scenario(40), link, tmp_path / "b", seed=5)
        assert dataclasses.asdict(first) == dataclasses.asdict(second)

    def test_different_seeds_usually_differ(self, tmp_path):
        link = LinkConfig(drop_probability=0.2)
        _, first = run(flat_scenario(40), link, tmp_path / "a", seed=1)
        _, second = run(flat_scenario(40), link, tmp_path / "b", seed=2)
        assert first.frames_dropped != second.frames_dropped

    def test_random_disconnects_recover(self, tmp_path):
        link = LinkConfig(drop_probability=0.1, disconnect_probability_per_frame=0.01)
        _, summary = run(flat_scenario(60), link, tmp_path / "s", seed=3)
        assert summary.records_stored == 300
        assert summary.severs > 0
        assert summary.recoveries >= 1

    def test_liveness_10k_batches_all_acked(self, tmp_path):
        # One reading per tick = one batch per tick; every batch must be
        # acknowledged eventually despite 20% frame loss.
        steps = tuple(
            ScenarioStep(3600.0 * k, SensorKind.RAIN_GAUGE, 1) for k in range(1, 10_001)
        )
        scenario = Scenario(name="batches", steps=steps, sample_interval=3600.0)
        cfg = Config(
            thresholds=THRESHOLDS,
            analysis=AnalysisConfig(max_window_samples=8),  # keep per-batch analysis light
            calibration=CALIBRATION,
            link=LinkConfig(drop_probability=0.2, latency_ms=50),
            sinks=("console",),
        )
        sim = SimReplay(scenario, cfg, str(tmp_path / "s"), seed=17)
        summary = sim.run()
        assert summary.batches_ingested >= 10_000  # retransmits may add duplicates
        assert summary.records_stored == 10_000
        assert sim.node.pending == ()


class TestForcedDisconnects:
    def test_backoff_recovery_visible_in_trace(self, tmp_path):
        scenario = flat_scenario(30)
        sim, summary = run(
            scenario,
            LinkConfig(drop_probability=0.1),
            tmp_path / "s",
            seed=4,
            force_disconnect_at=(scenario.duration / 3, 2 * scenario.duration / 3),
        )
        assert summary.severs >= 2
        assert summary.recoveries >= 1
        assert summary.records_stored == summary.readings_generated
        phases = sim.trace.phases("node")
        assert "Backoff" in phases
        backoff_idx = phases.index("Backoff")
        assert "Connecting" in phases[backoff_idx:]
        assert "Streaming" in phases[backoff_idx:]

    def test_send_data_only_while_streaming(self, tmp_path):
        scenario = flat_scenario(30)
        sim, _ = run(
            scenario,
            LinkConfig(drop_probability=0.15),
            tmp_path / "s",
            seed=9,
            force_disconnect_at=(scenario.duration / 2,),
        )
        for rec in sim.trace.records:
            if rec.side == "node" and rec.action.startswith("SendFrame(SEND_DATA"):
                assert rec.state == NodePhase.STREAMING.value

    def test_acks_only_answer_received_batches(self, tmp_path):
        scenario = flat_scenario(20)
        sim, _ = run(scenario, LinkConfig(drop_probability=0.2), tmp_path / "s", seed=13)
        for rec in sim.trace.records:
            if rec.side == "server" and "DATA_ACK" in rec.action:
                assert rec.event.startswith("SendDataReceived")


class TestServerRestart:
    def test_no_acked_batch_lost_across_restart(self, tmp_path):
        scenario = flat_scenario(40)
        sim, summary = run(
            scenario,
            LinkConfig(drop_probability=0.1),
            tmp_path / "s",
            seed=21,
            server_restart_at=scenario.duration / 2,
        )
        assert sim.pre_restart_records is not None
        final = sim.server.repo
        # reopen from disk to prove durability is on disk, not in memory
        from slopewatch.ingest import Repository

        reloaded = Repository(tmp_path / "s", read_only=True)
        final_keys = {(r.node_id, r.seq) for r in reloaded.all_records()}
        pre_keys = {(r.node_id, r.seq) for r in sim.pre_restart_records}
        assert pre_keys <= final_keys
        assert summary.records_stored == summary.readings_generated
        assert len(final_keys) == summary.readings_generated
        assert len(final) == len(final_keys)

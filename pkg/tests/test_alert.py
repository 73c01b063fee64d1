"""Alert ladder, four-way evaluation, hysteresis and sink tests."""

import itertools
import json
import threading
from http.server import BaseHTTPRequestHandler, HTTPServer

import pytest

from slopewatch.domain import AlertLevel
from slopewatch.analytics import RainEvent
from slopewatch.alert import (
    AlertDecision,
    AlertMode,
    AlertState,
    ConsoleSink,
    Dispatcher,
    ExceedanceSet,
    FileSink,
    Notification,
    Parameter,
    SmsOutboxSink,
    Thresholds,
    ThresholdError,
    ValueSnapshot,
    ValueSource,
    WebhookSink,
    evaluate,
    multi_level,
    step_alert_state,
    uni_alerts,
)

TH = Thresholds(
    mt_rain_mm_per_h=5.0,
    mt_pore_kpa=50.0,
    mt_displacement_mm=5.0,
    mt_inclination_deg=5.0,
    prediction_horizon=6,
    hold_period_s=1800.0,
)

G, Y, O, R = AlertLevel.GREEN, AlertLevel.YELLOW, AlertLevel.ORANGE, AlertLevel.RED

# Hand-derived truth table for the ladder, one row per (rain, pore, disp, incl):
# every non-green rung requires rain; orange adds pore; red adds either
# displacement or inclination on top of both.
LADDER_TABLE = {
    (False, False, False, False): G,
    (False, False, False, True): G,
    (False, False, True, False): G,
    (False, False, True, True): G,
    (False, True, False, False): G,
    (False, True, False, True): G,
    (False, True, True, False): G,
    (False, True, True, True): G,
    (True, False, False, False): Y,
    (True, False, False, True): Y,
    (True, False, True, False): Y,
    (True, False, True, True): Y,
    (True, True, False, False): O,
    (True, True, False, True): R,
    (True, True, True, False): R,
    (True, True, True, True): R,
}


def exc(rain=False, pore=False, disp=False, incl=False) -> ExceedanceSet:
    return ExceedanceSet(rain=rain, pore=pore, displacement=disp, inclination=incl)


class TestMultiLevel:
    def test_matches_truth_table_on_all_16_inputs(self):
        for combo, expected in LADDER_TABLE.items():
            assert multi_level(exc(*combo)) is expected, combo

    def test_monotone_over_all_comparable_pairs(self):
        combos = list(itertools.product((False, True), repeat=4))
        for a, b in itertools.product(combos, repeat=2):
            if all(x <= y for x, y in zip(a, b)):  # pointwise implication
                assert multi_level(exc(*a)) <= multi_level(exc(*b))

    def test_examples(self):
        assert multi_level(exc()) is G
        assert multi_level(exc(rain=True, pore=True, incl=True)) is R
        # rain-gated: everything but rain stays green in multi mode
        assert multi_level(exc(pore=True, disp=True, incl=True)) is G


class TestUniAlerts:
    def test_empty(self):
        assert uni_alerts(exc()) == set()

    def test_single_parameter(self):
        assert uni_alerts(exc(pore=True)) == {Parameter.PORE}

    def test_all_parameters(self):
        assert uni_alerts(exc(True, True, True, True)) == set(Parameter)


class TestThresholds:
    def test_rejects_non_positive_mt(self):
        with pytest.raises(ThresholdError):
            Thresholds(0.0, 1, 1, 1, 1, 0)

    def test_rejects_negative_hold(self):
        with pytest.raises(ThresholdError):
            Thresholds(1, 1, 1, 1, 1, -5.0)


class TestEvaluate:
    def test_emits_exactly_four_decisions(self):
        decisions = evaluate(ValueSnapshot(), ValueSnapshot(), TH, now=0.0)
        combos = [(d.source, d.mode) for d in decisions]
        assert sorted(combos, key=str) == sorted(
            itertools.product(ValueSource, AlertMode), key=str
        )

    def test_all_below_is_all_green(self):
        snap = ValueSnapshot(rain_intensity_mm_per_h=1.0, pore_kpa=10.0, displacement_mm=0.1,
                             inclinometer_deg=1.0, tiltmeter_deg=1.0)
        decisions = evaluate(snap, snap, TH, 0.0)
        assert all(d.level is G for d in decisions)
        assert all(uni_alerts(d.exceedances) == set() for d in decisions)

    def test_predicted_rain_surfaces_only_in_predicted_mode(self):
        current = ValueSnapshot(rain_intensity_mm_per_h=2.0)
        predicted = ValueSnapshot(rain_intensity_mm_per_h=9.0)
        by_combo = {(d.source, d.mode): d for d in evaluate(current, predicted, TH, 0.0)}
        assert by_combo[(ValueSource.CURRENT, AlertMode.MULTI)].level is G
        assert by_combo[(ValueSource.PREDICTED, AlertMode.MULTI)].level is Y

    def test_caine_exceedance_triggers_rain_flag(self):
        event = RainEvent(start=0.0, end=3600.0, total_mm=14.82)  # exactly on the curve
        snap = ValueSnapshot(rain_intensity_mm_per_h=1.0, active_event=event)
        high_mt = Thresholds(99.0, 50.0, 5.0, 5.0, 6, 1800.0)
        by_combo = {(d.source, d.mode): d for d in evaluate(snap, ValueSnapshot(), high_mt, 0.0)}
        assert by_combo[(ValueSource.CURRENT, AlertMode.MULTI)].level is Y
        assert by_combo[(ValueSource.CURRENT, AlertMode.MULTI)].exceedances.rain

    def test_tiltmeter_or_inclinometer_raises_inclination(self):
        snap = ValueSnapshot(tiltmeter_deg=6.0)
        decisions = evaluate(snap, ValueSnapshot(), TH, 0.0)
        current_uni = decisions[0]
        assert current_uni.exceedances.inclination

    def test_missing_sensors_do_not_exceed(self):
        decisions = evaluate(ValueSnapshot(), ValueSnapshot(), TH, 0.0)
        assert all(d.level is G for d in decisions)


def decisions_at(level: AlertLevel, now=0.0) -> list[AlertDecision]:
    e = {
        G: exc(),
        Y: exc(rain=True),
        O: exc(rain=True, pore=True),
        R: exc(rain=True, pore=True, disp=True),
    }[level]
    out = []
    for source in ValueSource:
        out.append(AlertDecision(Y if uni_alerts(e) else G, AlertMode.UNI, source, e, now))
        out.append(AlertDecision(multi_level(e), AlertMode.MULTI, source, e, now))
    return out


class TestStepAlertState:
    def test_escalation_is_immediate_and_notified_once(self):
        state = AlertState()
        state, notes = step_alert_state(state, decisions_at(Y), now=100.0, hold_period_s=1800.0)
        assert state.active_level is Y and state.since == 100.0
        assert len(notes) == 1
        assert notes[0].level is Y and not notes[0].all_clear

    def test_holding_level_does_not_renotify(self):
        state = AlertState(active_level=Y, since=100.0)
        state, notes = step_alert_state(state, decisions_at(Y), 200.0, 1800.0)
        assert notes == []
        assert state.since == 100.0

    def test_no_deescalation_before_hold_period(self):
        state = AlertState(active_level=R, since=100.0)
        state, notes = step_alert_state(state, decisions_at(G), 200.0, 1800.0)
        assert state.active_level is R and state.below_since == 200.0
        assert notes == []
        state, notes = step_alert_state(state, decisions_at(G), 200.0 + 1799.0, 1800.0)
        assert state.active_level is R
        assert notes == []

    def test_deescalation_after_hold_period(self):
        state = AlertState(active_level=R, since=100.0, below_since=200.0)
        state, notes = step_alert_state(state, decisions_at(G), 2000.0, 1800.0)
        assert state.active_level is G
        assert len(notes) == 1 and notes[0].all_clear

    def test_recovery_resets_hold_window(self):
        state = AlertState(active_level=R, since=100.0, below_since=200.0)
        state, _ = step_alert_state(state, decisions_at(R), 300.0, 1800.0)
        assert state.below_since is None
        state, notes = step_alert_state(state, decisions_at(G), 5000.0, 1800.0)
        assert state.active_level is R and notes == []  # window restarted

    def test_zero_hold_period_deescalates_immediately(self):
        state = AlertState(active_level=O, since=0.0)
        state, notes = step_alert_state(state, decisions_at(Y), 10.0, 0.0)
        assert state.active_level is Y
        assert notes[0].all_clear

    def test_escalation_can_skip_levels(self):
        state, notes = step_alert_state(AlertState(), decisions_at(R), 5.0, 1800.0)
        assert state.active_level is R
        assert notes[0].level is R


def note(level=Y, ts=100.0) -> Notification:
    return Notification(
        ts=ts, level=level, mode=AlertMode.MULTI, source=ValueSource.CURRENT,
        exceedances=exc(rain=True), message=f"{level.name} test",
    )


class FlakySink:
    name = "flaky"

    def __init__(self, failures: int):
        self.failures = failures
        self.delivered = 0

    def send(self, _):
        if self.failures > 0:
            self.failures -= 1
            raise RuntimeError("transient")
        self.delivered += 1


class TestDispatcher:
    def test_console_and_file_sinks(self, tmp_path, capsys):
        dispatcher = Dispatcher([ConsoleSink(), FileSink(tmp_path)])
        results = dispatcher.dispatch(note())
        assert [r.ok for r in results] == [True, True]
        assert "YELLOW" in capsys.readouterr().out
        lines = (tmp_path / "alerts.ndjson").read_text().splitlines()
        record = json.loads(lines[0])
        assert set(record) == {"ts", "level", "mode", "source", "exceedances", "message"}
        assert record["level"] == "YELLOW"
        assert record["exceedances"]["rain"] is True

    def test_duplicate_key_suppressed(self, tmp_path):
        dispatcher = Dispatcher([FileSink(tmp_path)])
        dispatcher.dispatch(note())
        results = dispatcher.dispatch(note())
        assert all(r.suppressed for r in results)
        assert len((tmp_path / "alerts.ndjson").read_text().splitlines()) == 1

    def test_distinct_transitions_not_suppressed(self, tmp_path):
        dispatcher = Dispatcher([FileSink(tmp_path)])
        dispatcher.dispatch(note(ts=100.0))
        results = dispatcher.dispatch(note(ts=200.0))
        assert results[0].ok

    def test_sink_failure_does_not_block_others(self, tmp_path):
        class BrokenSink:
            name = "broken"

            def send(self, _):
                raise OSError("down")

        dispatcher = Dispatcher([BrokenSink(), FileSink(tmp_path)])
        results = dispatcher.dispatch(note())
        assert [r.ok for r in results] == [False, True]
        assert results[0].error
        assert (tmp_path / "alerts.ndjson").exists()

    def test_single_retry_recovers_transient_failure(self):
        sink = FlakySink(failures=1)
        results = Dispatcher([sink]).dispatch(note())
        assert results[0].ok and sink.delivered == 1

    def test_two_failures_exhaust_retry(self):
        sink = FlakySink(failures=2)
        results = Dispatcher([sink]).dispatch(note())
        assert not results[0].ok

    def test_sms_outbox(self, tmp_path):
        Dispatcher([SmsOutboxSink(tmp_path)]).dispatch(note())
        assert (tmp_path / "sms_outbox.txt").read_text() == "YELLOW test\n"

    def test_requires_a_sink(self):
        with pytest.raises(ValueError):
            Dispatcher([])


class TestWebhookSink:
    def test_posts_json_record(self):
        received = []

        class Handler(BaseHTTPRequestHandler):
            def do_POST(self):
                length = int(self.headers["Content-Length"])
                received.append(json.loads(self.rfile.read(length)))
                self.send_response(200)
                self.end_headers()

            def log_message(self, *args):
                pass

        server = HTTPServer(("127.0.0.1", 0), Handler)
        thread = threading.Thread(target=server.serve_forever, daemon=True)
        thread.start()
        try:
            url = f"http://127.0.0.1:{server.server_address[1]}/hook"
            results = Dispatcher([WebhookSink(url)]).dispatch(note())
            assert results[0].ok
            assert received[0]["level"] == "YELLOW"
        finally:
            server.shutdown()

    def test_unreachable_target_recorded_as_failure(self, tmp_path):
        dispatcher = Dispatcher([
            WebhookSink("http://127.0.0.1:1/unreachable", timeout=0.2),
            FileSink(tmp_path),
        ])
        results = dispatcher.dispatch(note())
        assert not results[0].ok
        assert results[1].ok

"""Hydrological features and per-sensor forecasting.

Rain-event segmentation, antecedent rainfall, the global intensity-duration
threshold of Caine (1980), and autoregressive value prediction used by the
alert engine's "predicted" pathway.
"""

from __future__ import annotations

from dataclasses import dataclass
from statistics import median

import numpy as np

CAINE_COEFF = 14.82
CAINE_EXPONENT = -0.39
CAINE_D_MIN_H = 0.167  # open interval bounds, in hours
CAINE_D_MAX_H = 500.0


class AnalyticsError(ValueError):
    pass


class InvalidSeriesError(AnalyticsError):
    """Input series unordered or containing non-finite values."""


class InsufficientDataError(AnalyticsError):
    """Series too short for the requested model order or horizon."""


class CaineDomainError(AnalyticsError):
    """Duration outside the curve's published validity range."""


# ---------------------------------------------------------------------------
# Rainfall features
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RainEvent:
    """A maximal wet period bounded by dry gaps.

    Samples are accumulation totals over the preceding sampling interval,
    so an event opens one interval before its first wet sample.
    """

    start: float
    end: float
    total_mm: float

    @property
    def duration_h(self) -> float:
        return (self.end - self.start) / 3600.0

    @property
    def mean_intensity_mm_per_h(self) -> float:
        return self.total_mm / self.duration_h


@dataclass(frozen=True)
class RainfallFeatures:
    total_mm: float
    antecedent_mm: float
    event_duration_h: float | None  # None when no event is active
    event_intensity_mm_per_h: float | None


def _check_ordered(series: list[tuple[float, float]]) -> None:
    for (t1, _), (t2, _) in zip(series, series[1:]):
        if t2 < t1:
            raise InvalidSeriesError(f"rain series not time-ordered at t={t2}")


def _infer_interval(series: list[tuple[float, float]]) -> float:
    gaps = [t2 - t1 for (t1, _), (t2, _) in zip(series, series[1:]) if t2 > t1]
    return median(gaps) if gaps else 3600.0


def segment_events(
    rain: list[tuple[float, float]],
    dry_gap: float,
    sample_interval: float | None = None,
) -> list[RainEvent]:
    """Split a (timestamp, mm) series into rain events.

    Two wet samples belong to the same event unless the zero-rain span
    between them reaches ``dry_gap`` seconds. Every nonzero sample lands in
    exactly one event, so event totals sum to the series total.
    """
    if dry_gap <= 0:
        raise AnalyticsError(f"dry_gap must be positive, got {dry_gap}")
    _check_ordered(rain)
    wet = [(t, mm) for t, mm in rain if mm > 0]
    if not wet:
        return []
    interval = sample_interval if sample_interval is not None else _infer_interval(rain)
    events: list[RainEvent] = []
    run_start, _ = wet[0]
    run_total = 0.0
    last_t = None
    for t, mm in wet:
        if last_t is not None and (t - last_t) - interval >= dry_gap:
            events.append(RainEvent(start=run_start - interval, end=last_t, total_mm=run_total))
            run_start, run_total = t, 0.0
        run_total += mm
        last_t = t
    events.append(RainEvent(start=run_start - interval, end=last_t, total_mm=run_total))
    return events


def antecedent_rainfall(rain: list[tuple[float, float]], now: float, lookback: float) -> float:
    """Sum of rainfall samples within [now - lookback, now], inclusive."""
    if lookback <= 0:
        raise AnalyticsError(f"lookback must be positive, got {lookback}")
    lo = now - lookback
    return sum(mm for t, mm in rain if lo <= t <= now)


def compute_rainfall_features(
    rain: list[tuple[float, float]],
    now: float,
    lookback: float,
    dry_gap: float,
    sample_interval: float | None = None,
) -> RainfallFeatures:
    """Window totals plus the active event's (duration, intensity), if any.

    An event is active when less than ``dry_gap`` of dry time has elapsed
    since its last wet sample.
    """
    events = segment_events(rain, dry_gap, sample_interval)
    duration = intensity = None
    if events:
        latest = events[-1]
        interval = sample_interval if sample_interval is not None else _infer_interval(rain)
        if (now - latest.end) - interval < dry_gap:
            duration = latest.duration_h
            intensity = latest.mean_intensity_mm_per_h
    return RainfallFeatures(
        total_mm=sum(mm for _, mm in rain),
        antecedent_mm=antecedent_rainfall(rain, now, lookback),
        event_duration_h=duration,
        event_intensity_mm_per_h=intensity,
    )


# ---------------------------------------------------------------------------
# Intensity-duration threshold
# ---------------------------------------------------------------------------


def caine_threshold(duration_h: float) -> float:
    """Critical mean rainfall intensity (mm/h) for a storm of the given duration.

    Caine's 1980 worldwide curve I = 14.82 * D^-0.39, valid on the open
    interval 0.167 h < D < 500 h. Outside it the curve has no support and
    a CaineDomainError is raised rather than clamping.
    """
    if not CAINE_D_MIN_H < duration_h < CAINE_D_MAX_H:
        raise CaineDomainError(
            f"duration {duration_h} h outside the curve domain ({CAINE_D_MIN_H}, {CAINE_D_MAX_H})"
        )
    return CAINE_COEFF * duration_h**CAINE_EXPONENT


def exceeds_caine(event: RainEvent) -> bool | None:
    """Whether the event's mean intensity reaches or exceeds the curve.

    Returns None (not applicable) when the duration is outside the curve
    domain.
    """
    try:
        threshold = caine_threshold(event.duration_h)
    except CaineDomainError:
        return None
    return event.mean_intensity_mm_per_h >= threshold


# ---------------------------------------------------------------------------
# Autoregressive prediction
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ARModel:
    """AR(p) with intercept: x_t = c + sum_i phi_i * x_{t-i}."""

    order: int
    coefficients: tuple[float, ...]  # phi_1 .. phi_p (lag-1 first)
    intercept: float
    fit_residual_rms: float

    def __post_init__(self) -> None:
        if len(self.coefficients) != self.order:
            raise AnalyticsError(
                f"AR order {self.order} but {len(self.coefficients)} coefficients"
            )


class Predictor:
    """Interface of the value-prediction stage; AR is the one implementation."""

    def fit(self, series: list[float]) -> None:
        raise NotImplementedError

    def forecast(self, history: list[float], horizon: int) -> list[float]:
        raise NotImplementedError


def ar_fit(series: list[float], order: int) -> ARModel:
    """Least-squares AR(p) fit over all usable rows of the series.

    The series is mean-centered before solving, which keeps constant series
    exactly reproducible and leaves rank-deficient designs to the
    minimum-norm solution of the centered problem.
    """
    if order < 1:
        raise AnalyticsError(f"order must be >= 1, got {order}")
    x = np.asarray(series, dtype=float)
    if x.ndim != 1:
        raise InvalidSeriesError("series must be one-dimensional")
    if not np.all(np.isfinite(x)):
        raise InvalidSeriesError("series contains non-finite values")
    n = x.size
    if n < 2 * order + 2:
        raise InsufficientDataError(
            f"AR({order}) needs at least {2 * order + 2} samples, got {n}"
        )
    mean = x.mean()
    xc = x - mean
    rows = n - order
    design = np.ones((rows, order + 1))
    for lag in range(1, order + 1):
        design[:, lag] = xc[order - lag : n - lag]
    target = xc[order:]
    beta, _, _, _ = np.linalg.lstsq(design, target, rcond=None)
    centered_intercept = float(beta[0])
    coeffs = tuple(float(b) for b in beta[1:])
    intercept = float(mean * (1.0 - sum(coeffs)) + centered_intercept)
    residuals = design @ beta - target
    rms = float(np.sqrt(np.mean(residuals**2))) if rows else 0.0
    return ARModel(order=order, coefficients=coeffs, intercept=intercept, fit_residual_rms=rms)


def ar_forecast(model: ARModel, history: list[float], horizon: int) -> list[float]:
    """Recursive h-step-ahead forecast, feeding predictions back as inputs."""
    if horizon < 1:
        raise AnalyticsError(f"horizon must be >= 1, got {horizon}")
    if len(history) < model.order:
        raise InsufficientDataError(
            f"AR({model.order}) forecast needs {model.order} history samples, got {len(history)}"
        )
    window = list(history[-model.order :])
    out: list[float] = []
    for _ in range(horizon):
        nxt = model.intercept + sum(
            phi * window[-lag] for lag, phi in enumerate(model.coefficients, start=1)
        )
        out.append(nxt)
        window.append(nxt)
        window = window[-model.order :]
    return out


class ARPredictor(Predictor):
    """AR-backed predictor satisfying the pluggable prediction interface."""

    def __init__(self, order: int):
        self.order = order
        self.model: ARModel | None = None

    def fit(self, series: list[float]) -> None:
        self.model = ar_fit(series, self.order)

    def forecast(self, history: list[float], horizon: int) -> list[float]:
        if self.model is None:
            raise InsufficientDataError("predictor not fitted")
        return ar_forecast(self.model, history, horizon)

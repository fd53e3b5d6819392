"""Request-level and system-level serving metrics.

Per-request metrics are computed from a :class:`~servesim.traces.TokenTimeline`:
TTFT, the TBT series, TPOT, end-to-end latency, and the user idle latency,
which is the largest lateness of any token against its deadline series (how
long the user sat with nothing left to read).  On top of idle latency sits the
benefit of a request,

    benefit = tokens_generated - alpha * penalty(idle_latency)

and the system-level smooth goodput, the total benefit of every request in an
evaluation window divided by the window length.  Classic goodput (SLO-meeting
token output per second) and SLO attainment are provided alongside for
comparison.

Window semantics: a window selects requests by arrival in [start, end) and
clips their timelines at ``end``.  A clipped or empty timeline is marked
incomplete; incomplete requests never count toward goodput or attainment but
still contribute their generated-so-far tokens (and the idle latency of those
tokens) to smooth goodput, so abandoning a request is never rewarded.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .deadlines import DeadlinePolicy, deadlines_for, meets_slo
from .traces import RequestTrace, TokenTimeline


# ---------------------------------------------------------------------------
# Per-timeline metrics.


def ttft(timeline: TokenTimeline) -> float:
    """Time from arrival to the first output token, queueing included."""
    if timeline.num_tokens == 0:
        raise ValueError(f"{timeline.request_id}: no output tokens")
    return timeline.token_times[0] - timeline.arrival


def tbt_series(timeline: TokenTimeline) -> list[float]:
    """Intervals between adjacent tokens; empty for single-token requests."""
    if timeline.num_tokens == 0:
        raise ValueError(f"{timeline.request_id}: no output tokens")
    return [float(d) for d in np.diff(timeline.token_times)]


def tpot(timeline: TokenTimeline) -> float:
    """Mean per-token time excluding the first token: (t_n - t_1)/(n - 1)."""
    n = timeline.num_tokens
    if n < 2:
        raise ValueError(f"{timeline.request_id}: tpot undefined for <2 tokens")
    return (timeline.token_times[-1] - timeline.token_times[0]) / (n - 1)


def e2e_latency(timeline: TokenTimeline) -> float:
    if timeline.num_tokens == 0:
        raise ValueError(f"{timeline.request_id}: no output tokens")
    return timeline.token_times[-1] - timeline.arrival


def peak_lateness(timeline: TokenTimeline, policy: DeadlinePolicy) -> float:
    """Signed worst lateness: max over tokens of (relative time - deadline).

    Negative values mean every token beat its deadline with that much slack.
    """
    series = deadlines_for(policy, timeline)
    rel = np.asarray(timeline.token_times) - timeline.arrival
    return float(np.max(rel - series.as_array()))


def user_idle_latency(timeline: TokenTimeline, policy: DeadlinePolicy) -> float:
    """Worst lateness clamped below at zero.

    Zero exactly when the request meets the SLO; a user who always had tokens
    in hand never waited, no matter how much slack there was.
    """
    return max(0.0, peak_lateness(timeline, policy))


# ---------------------------------------------------------------------------
# Benefit.


@dataclass(frozen=True)
class LinearSeconds:
    """penalty(l) = scale * l, idle seconds weighted directly."""

    scale: float = 1.0

    def __post_init__(self):
        if self.scale < 0:
            raise ValueError("scale must be non-negative")

    def __call__(self, idle: float) -> float:
        return self.scale * max(0.0, idle)


@dataclass(frozen=True)
class TokensEquivalent:
    """penalty(l) = l / per_token_budget, idle time as tokens of reading lost.

    Makes the penalty commensurable with the token count in the benefit, so
    alpha stays dimensionless.
    """

    per_token_budget: float

    def __post_init__(self):
        if self.per_token_budget <= 0:
            raise ValueError("per_token_budget must be positive")

    def __call__(self, idle: float) -> float:
        return max(0.0, idle) / self.per_token_budget


@dataclass(frozen=True)
class IndicatorPenalty:
    """penalty(l) = penalty_value once idle latency exceeds a threshold."""

    threshold: float = 0.0
    penalty_value: float = 1.0

    def __post_init__(self):
        if self.threshold < 0 or self.penalty_value < 0:
            raise ValueError("threshold and penalty_value must be non-negative")

    def __call__(self, idle: float) -> float:
        return self.penalty_value if idle > self.threshold else 0.0


PenaltyFn = LinearSeconds | TokensEquivalent | IndicatorPenalty


@dataclass(frozen=True)
class BenefitParams:
    alpha: float = 5.0
    penalty: PenaltyFn = field(default_factory=lambda: LinearSeconds(1.0))

    def __post_init__(self):
        if self.alpha < 0:
            raise ValueError("alpha must be non-negative")


def benefit(timeline: TokenTimeline, policy: DeadlinePolicy,
            params: BenefitParams) -> float:
    """tokens - alpha * penalty(idle latency).  May be negative; no floor."""
    idle = user_idle_latency(timeline, policy)
    return timeline.num_tokens - params.alpha * params.penalty(idle)


def penalty_from_config(obj: dict) -> PenaltyFn:
    kind = obj.get("type")
    if kind == "linear_seconds":
        return LinearSeconds(float(obj.get("scale", 1.0)))
    if kind == "tokens_equivalent":
        return TokensEquivalent(float(obj["per_token_budget_s"]))
    if kind == "indicator":
        return IndicatorPenalty(float(obj.get("threshold_s", 0.0)),
                                float(obj.get("penalty_value", 1.0)))
    raise ValueError(f"unknown penalty type: {kind!r}")


def penalty_to_config(penalty: PenaltyFn) -> dict:
    if isinstance(penalty, LinearSeconds):
        return {"type": "linear_seconds", "scale": penalty.scale}
    if isinstance(penalty, TokensEquivalent):
        return {"type": "tokens_equivalent",
                "per_token_budget_s": penalty.per_token_budget}
    if isinstance(penalty, IndicatorPenalty):
        return {"type": "indicator", "threshold_s": penalty.threshold,
                "penalty_value": penalty.penalty_value}
    raise TypeError(f"unknown penalty: {penalty!r}")


# ---------------------------------------------------------------------------
# Evaluation windows and aggregates.


@dataclass(frozen=True)
class EvalWindow:
    """A set of request timelines observed over [start, end)."""

    start: float
    end: float
    requests: tuple[TokenTimeline, ...]

    def __post_init__(self):
        if not self.end > self.start:
            raise ValueError("window end must exceed start")
        for tl in self.requests:
            if not (self.start <= tl.arrival < self.end):
                raise ValueError(
                    f"{tl.request_id}: arrival outside window [start, end)")

    @property
    def length(self) -> float:
        return self.end - self.start


def window_from_traces(records: Sequence[RequestTrace], start: float, end: float,
                       use_delivery: bool = False) -> EvalWindow:
    """Build a window from trace records, clipping timelines at ``end``.

    Requests arriving outside [start, end) are dropped; tokens after ``end``
    are clipped and the timeline marked incomplete.
    """
    picked = []
    for rec in records:
        if not (start <= rec.arrival < end):
            continue
        tl = rec.delivery_timeline() if use_delivery else rec.generation_timeline()
        picked.append(tl.clipped(end))
    return EvalWindow(start, end, tuple(picked))


def _meets(tl: TokenTimeline, policy: DeadlinePolicy) -> bool:
    # Only a fully delivered request can attain its SLO; clipped or empty
    # timelines count as misses.
    return tl.complete and tl.num_tokens > 0 and meets_slo(tl, policy)


def goodput(window: EvalWindow, policy: DeadlinePolicy,
            per_request: bool = False) -> float:
    """SLO-meeting completed output per second over the window.

    Token-denominated by default; ``per_request=True`` counts SLO-meeting
    requests per second instead.
    """
    total = 0.0
    for tl in window.requests:
        if _meets(tl, policy):
            total += 1 if per_request else tl.num_tokens
    return total / window.length


def throughput(window: EvalWindow) -> float:
    """Tokens generated in the window per second, SLOs ignored."""
    return sum(tl.num_tokens for tl in window.requests) / window.length


def smooth_goodput(window: EvalWindow, policy: DeadlinePolicy,
                   params: BenefitParams) -> float:
    """Total benefit over all requests (SLO violators included) per second."""
    total = 0.0
    for tl in window.requests:
        if tl.num_tokens == 0:
            continue
        total += benefit(tl, policy, params)
    return total / window.length


def slo_attainment(window: EvalWindow, policy: DeadlinePolicy) -> float:
    """Fraction of window requests whose every token met its deadline."""
    if not window.requests:
        raise ValueError("attainment undefined for an empty window")
    met = sum(1 for tl in window.requests if _meets(tl, policy))
    return met / len(window.requests)


def percentile(values: Sequence[float], q: float) -> float:
    """Nearest-rank percentile: the ceil(q*n)-th smallest value, 1-indexed.

    No interpolation, so results are reproducible bit-for-bit across
    implementations.
    """
    if not values:
        raise ValueError("percentile of empty list")
    if not 0.0 <= q <= 1.0:
        raise ValueError("q must lie in [0, 1]")
    ordered = sorted(values)
    rank = max(1, math.ceil(q * len(ordered)))
    return ordered[rank - 1]


# ---------------------------------------------------------------------------
# Reports.


@dataclass(frozen=True)
class RequestMetrics:
    request_id: str
    arrival: float
    n_tokens: int
    complete: bool
    ttft: float | None
    tpot: float | None
    e2e: float | None
    max_tbt: float | None
    idle_latency: float
    peak_lateness: float | None
    benefit: float
    met_slo: bool


@dataclass(frozen=True)
class MetricsReport:
    window_start: float
    window_end: float
    per_request: tuple[RequestMetrics, ...]
    throughput_tokens_per_s: float
    goodput_tokens_per_s: float
    goodput_requests_per_s: float
    smooth_goodput_per_s: float
    slo_attainment: float
    ttft_percentiles: dict[str, float]
    tbt_percentiles: dict[str, float]
    mean_ttft: float
    mean_idle_latency: float

    def to_json_dict(self) -> dict:
        return {
            "window": {"start_s": self.window_start, "end_s": self.window_end},
            "aggregates": {
                "throughput_tokens_per_s": self.throughput_tokens_per_s,
                "goodput_tokens_per_s": self.goodput_tokens_per_s,
                "goodput_requests_per_s": self.goodput_requests_per_s,
                "smooth_goodput_per_s": self.smooth_goodput_per_s,
                "slo_attainment": self.slo_attainment,
                "ttft_percentiles_s": self.ttft_percentiles,
                "tbt_percentiles_s": self.tbt_percentiles,
                "mean_ttft_s": self.mean_ttft,
                "mean_idle_latency_s": self.mean_idle_latency,
            },
            "requests": [
                {
                    "request_id": r.request_id,
                    "arrival_s": r.arrival,
                    "n_tokens": r.n_tokens,
                    "complete": r.complete,
                    "ttft_s": r.ttft,
                    "tpot_s": r.tpot,
                    "e2e_s": r.e2e,
                    "max_tbt_s": r.max_tbt,
                    "idle_latency_s": r.idle_latency,
                    "peak_lateness_s": r.peak_lateness,
                    "benefit": r.benefit,
                    "met_slo": r.met_slo,
                }
                for r in self.per_request
            ],
        }


PERCENTILE_LABELS = (("p50", 0.50), ("p90", 0.90), ("p99", 0.99))


def build_report(window: EvalWindow, policy: DeadlinePolicy,
                 params: BenefitParams) -> MetricsReport:
    """Populate every per-request record and aggregate for a window."""
    if not window.requests:
        raise ValueError("cannot report on an empty window")

    records = []
    tbt_pool: list[float] = []
    for tl in window.requests:
        n = tl.num_tokens
        if n == 0:
            records.append(RequestMetrics(
                tl.request_id, tl.arrival, 0, tl.complete,
                ttft=None, tpot=None, e2e=None, max_tbt=None,
                idle_latency=0.0, peak_lateness=None, benefit=0.0,
                met_slo=False))
            continue
        gaps = tbt_series(tl)
        tbt_pool.extend(gaps)
        lateness = peak_lateness(tl, policy)
        idle = max(0.0, lateness)
        records.append(RequestMetrics(
            tl.request_id, tl.arrival, n, tl.complete,
            ttft=ttft(tl),
            tpot=tpot(tl) if n >= 2 else None,
            e2e=e2e_latency(tl),
            max_tbt=max(gaps) if gaps else None,
            idle_latency=idle,
            peak_lateness=lateness,
            benefit=n - params.alpha * params.penalty(idle),
            met_slo=_meets(tl, policy)))

    ttfts = [r.ttft for r in records if r.ttft is not None]
    ttft_pcts = {label: percentile(ttfts, q) for label, q in PERCENTILE_LABELS} \
        if ttfts else {}
    tbt_pcts = {label: percentile(tbt_pool, q) for label, q in PERCENTILE_LABELS} \
        if tbt_pool else {}

    return MetricsReport(
        window_start=window.start,
        window_end=window.end,
        per_request=tuple(records),
        throughput_tokens_per_s=throughput(window),
        goodput_tokens_per_s=goodput(window, policy),
        goodput_requests_per_s=goodput(window, policy, per_request=True),
        smooth_goodput_per_s=smooth_goodput(window, policy, params),
        slo_attainment=slo_attainment(window, policy),
        ttft_percentiles=ttft_pcts,
        tbt_percentiles=tbt_pcts,
        mean_ttft=float(np.mean(ttfts)) if ttfts else float("nan"),
        mean_idle_latency=float(np.mean([r.idle_latency for r in records])),
    )


REPORT_CSV_HEADER = [
    "request_id", "arrival_s", "n_tokens", "complete", "ttft_s", "tpot_s",
    "e2e_s", "max_tbt_s", "idle_latency_s", "benefit", "met_slo",
]


def _cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "1" if value else "0"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_report_csv(path, report: MetricsReport) -> None:
    """Flat CSV: one row per request, aggregate rows prefixed ``#agg``."""
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(REPORT_CSV_HEADER)
        for r in report.per_request:
            writer.writerow([
                r.request_id, _cell(r.arrival), r.n_tokens, _cell(r.complete),
                _cell(r.ttft), _cell(r.tpot), _cell(r.e2e), _cell(r.max_tbt),
                _cell(r.idle_latency), _cell(r.benefit), _cell(r.met_slo),
            ])
        agg = report.to_json_dict()["aggregates"]
        for name in ("throughput_tokens_per_s", "goodput_tokens_per_s",
                     "goodput_requests_per_s", "smooth_goodput_per_s",
                     "slo_attainment", "mean_ttft_s", "mean_idle_latency_s"):
            writer.writerow(["#agg", name, _cell(agg[name])])
        for scope in ("ttft", "tbt"):
            for label, value in agg[f"{scope}_percentiles_s"].items():
                writer.writerow(["#agg", f"{scope}_{label}_s", _cell(value)])


def write_report_json(path, report: MetricsReport) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(report.to_json_dict(), f, indent=2)
        f.write("\n")

"""Correlation rules over home and health sensors.

A health reading that crosses a threshold (the *trigger*) is believable only
if some other sensor agrees within the rule window: a high blood-pressure
reading while the motion sensor shows the patient moving normally suggests
the cuff, not the patient, is at fault. Uncorroborated triggers become
:class:`MisbehaviorReport` objects for the RA; corroborated ones become
:class:`PatientAlert` objects.

Thresholds are expressed in raw metric units. Normalised values are kept
alongside for sequence building.
"""

from __future__ import annotations

import enum
import json
import logging
import operator
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

from .errors import ConfigError, OutOfPhysicalRange
from .registry import PseudoId, RaDirectory

log = logging.getLogger(__name__)


class MetricKind(enum.Enum):
    HEALTH = "health"
    HOME = "home"


@dataclass(frozen=True)
class Metric:
    name: str
    kind: MetricKind
    low: float = 0.0
    high: float = 1.0
    categorical: bool = False

    def __post_init__(self):
        if not self.high > self.low:
            raise ConfigError(f"{self.name}: declared range must have high > low")

    def coerce(self, value) -> float:
        """Raw reading as a float; booleans and their string forms for categorical metrics."""
        if self.categorical:
            if isinstance(value, str):
                value = {"true": 1, "false": 0, "on": 1, "off": 0, "open": 1, "closed": 0}.get(
                    value.lower(), value)
            if value in (0, 1):  # also matches True/False
                return float(value)
            raise OutOfPhysicalRange(f"{self.name}: categorical value {value!r} not in {{0, 1}}")
        value = float(value)
        if not self.low <= value <= self.high:
            raise OutOfPhysicalRange(f"{self.name}={value} outside [{self.low}, {self.high}]")
        return value

    def scale(self, value: float) -> float:
        if self.categorical:
            return value
        return (value - self.low) / (self.high - self.low)


DEFAULT_METRICS = {
    m.name: m
    for m in (
        Metric("systolic_bp", MetricKind.HEALTH, 70, 190),
        Metric("diastolic_bp", MetricKind.HEALTH, 40, 130),
        Metric("heart_rate", MetricKind.HEALTH, 30, 220),
        Metric("spo2", MetricKind.HEALTH, 50, 100),
        Metric("body_temp", MetricKind.HEALTH, 34, 42),
        Metric("motion", MetricKind.HOME, categorical=True),
        Metric("door", MetricKind.HOME, categorical=True),
        Metric("occupancy", MetricKind.HOME, categorical=True),
    )
}


@dataclass(frozen=True)
class SensorReading:
    node_id: str
    metric: str
    value: float
    ts: int

    def to_dict(self) -> dict:
        return {"node_id": self.node_id, "metric": self.metric, "value": self.value, "ts": self.ts}


@dataclass(frozen=True)
class NormalizedReading:
    reading: SensorReading
    norm: float

    @property
    def metric(self) -> str:
        return self.reading.metric

    @property
    def ts(self) -> int:
        return self.reading.ts


def normalize(readings: Iterable[SensorReading], metrics: dict[str, Metric] | None = None,
              suspects: list | None = None) -> list[NormalizedReading]:
    """Min-max scale each reading over its metric's declared range.

    Out-of-range readings raise :class:`OutOfPhysicalRange`, unless a
    ``suspects`` list is passed, in which case they are logged, appended
    there and dropped.
    """
    metrics = metrics or DEFAULT_METRICS
    out = []
    for r in readings:
        try:
            metric = metrics.get(r.metric)
            if metric is None:
                raise OutOfPhysicalRange(f"undeclared metric {r.metric!r}")
            value = metric.coerce(r.value)
        except (OutOfPhysicalRange, TypeError, ValueError) as exc:
            if suspects is None:
                raise OutOfPhysicalRange(str(exc)) from None
            log.warning("suspect reading from %s: %s", r.node_id, exc)
            suspects.append(r)
            continue
        if value != r.value:
            r = SensorReading(r.node_id, r.metric, value, r.ts)
        out.append(NormalizedReading(r, metric.scale(value)))
    return out


@dataclass(frozen=True)
class Sequence:
    start: int
    end: int  # exclusive
    readings: tuple[NormalizedReading, ...]
    label: object = None  # filled by a learned detector; unused by the rule engine

    def by_metric(self) -> dict[str, list[NormalizedReading]]:
        groups: dict[str, list[NormalizedReading]] = {}
        for nr in self.readings:
            groups.setdefault(nr.metric, []).append(nr)
        return groups


def window_starts(t0: int, t_last: int, window: int) -> list[int]:
    """Left-aligned window starts, step ``window // 2``, only windows that fit in the span."""
    if window <= 0:
        raise ConfigError("window must be positive")
    step = max(1, window // 2)
    return list(range(t0, t_last - window + 2, step))


def build_sequences(normalized: list[NormalizedReading], window: int,
                    metric_set: Iterable[str] | None = None,
                    cover_tail: bool = False) -> list[Sequence]:
    """Sliding time windows ``[s, s + window)`` over time-ordered readings.

    Only whole windows inside the stream's span are built, so the last few
    readings may fall outside every window. ``cover_tail`` adds one
    right-aligned window ending at the last reading when that happens.
    """
    if metric_set is not None:
        wanted = set(metric_set)
        normalized = [nr for nr in normalized if nr.metric in wanted]
    if not normalized:
        return []
    ts = [nr.ts for nr in normalized]
    if ts != sorted(ts):
        raise ValueError("readings must be time-ordered")
    starts = window_starts(ts[0], ts[-1], window)
    if cover_tail and starts and starts[-1] + window <= ts[-1]:
        starts.append(ts[-1] - window + 1)
    sequences = []
    for s in starts:
        members = tuple(nr for nr in normalized if s <= nr.ts < s + window)
        sequences.append(Sequence(s, s + window, members))
    return sequences


_OPS = {">=": operator.ge, ">": operator.gt, "<=": operator.le, "<": operator.lt,
        "==": operator.eq, "!=": operator.ne}


@dataclass(frozen=True)
class Predicate:
    metric: str
    op: str
    threshold: float

    def __post_init__(self):
        if self.op not in _OPS:
            raise ConfigError(f"unknown comparison {self.op!r}")

    def fires(self, reading: SensorReading) -> bool:
        return reading.metric == self.metric and _OPS[self.op](reading.value, self.threshold)

    @classmethod
    def parse(cls, data) -> "Predicate":
        if isinstance(data, Predicate):
            return data
        try:
            return cls(data["metric"], data["op"], float(data["threshold"]))
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"bad predicate {data!r}: {exc}") from None


class Outcome(enum.Enum):
    SENSOR_MISBEHAVING = "SensorMisbehaving"
    PATIENT_ALERT = "PatientAlert"


@dataclass(frozen=True)
class CorrelationRule:
    rule_id: str
    trigger: Predicate
    corroborators: tuple[Predicate, ...]
    window: int
    verdict_on_uncorroborated: Outcome = Outcome.SENSOR_MISBEHAVING

    def __post_init__(self):
        if self.window <= 0:
            raise ConfigError(f"{self.rule_id}: window must be positive")
        if not self.corroborators:
            raise ConfigError(f"{self.rule_id}: needs at least one corroborator")
        if any(c.metric == self.trigger.metric for c in self.corroborators):
            raise ConfigError(f"{self.rule_id}: trigger metric reused as corroborator")

    @property
    def metrics(self) -> set[str]:
        return {self.trigger.metric} | {c.metric for c in self.corroborators}

    def corroborated_by(self, readings: Iterable[NormalizedReading]) -> bool:
        return any(c.fires(nr.reading) for nr in readings for c in self.corroborators)

    @classmethod
    def from_dict(cls, data: dict) -> "CorrelationRule":
        try:
            return cls(
                rule_id=str(data["rule_id"]),
                trigger=Predicate.parse(data["trigger"]),
                corroborators=tuple(Predicate.parse(c) for c in data["corroborators"]),
                window=int(data["window"]),
                verdict_on_uncorroborated=Outcome(
                    data.get("verdict_on_uncorroborated", Outcome.SENSOR_MISBEHAVING.value)),
            )
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"bad rule {data!r}: {exc}") from None

    def to_dict(self) -> dict:
        pred = lambda p: {"metric": p.metric, "op": p.op, "threshold": p.threshold}  # noqa: E731
        return {"rule_id": self.rule_id, "trigger": pred(self.trigger),
                "corroborators": [pred(c) for c in self.corroborators], "window": self.window,
                "verdict_on_uncorroborated": self.verdict_on_uncorroborated.value}


# Hypertension with normal activity is the motivating case; the other two follow the same shape.
DEFAULT_RULES = (
    CorrelationRule("hypertension", Predicate("systolic_bp", ">=", 140),
                    (Predicate("motion", "==", 0), Predicate("heart_rate", ">=", 110)), 60_000),
    CorrelationRule("hypoxemia", Predicate("spo2", "<=", 90),
                    (Predicate("motion", "==", 0), Predicate("heart_rate", ">=", 110)), 60_000),
    CorrelationRule("tachycardia", Predicate("heart_rate", ">=", 130),
                    (Predicate("spo2", "<=", 92), Predicate("motion", "==", 0)), 60_000),
)


@dataclass(frozen=True)
class MisbehaviorReport:
    node_id: str
    rule_id: str
    evidence: tuple[SensorReading, ...]
    ts: int

    verdict = Outcome.SENSOR_MISBEHAVING

    def to_dict(self) -> dict:
        return {"type": "MisbehaviorReport", "node_id": self.node_id, "rule_id": self.rule_id,
                "ts": self.ts, "evidence": [r.to_dict() for r in self.evidence]}


@dataclass(frozen=True)
class PatientAlert:
    node_id: str
    rule_id: str
    evidence: tuple[SensorReading, ...]
    ts: int
    corroborated: bool = True

    verdict = Outcome.PATIENT_ALERT

    def to_dict(self) -> dict:
        return {"type": "PatientAlert", "node_id": self.node_id, "rule_id": self.rule_id,
                "ts": self.ts, "corroborated": self.corroborated,
                "evidence": [r.to_dict() for r in self.evidence]}


def detect(sequences: list[Sequence], rules: Iterable[CorrelationRule]) -> list:
    """Judge every trigger-firing reading against the windows that contain it.

    A trigger reading is corroborated when any window holding it also holds a
    firing corroborator. Each firing reading yields exactly one finding:
    a :class:`PatientAlert` when corroborated, otherwise the rule's
    ``verdict_on_uncorroborated``. Evidence is the trigger reading followed by
    the corroborator-metric readings of its first window.
    """
    findings = []
    for rule in rules:
        judged: dict[SensorReading, tuple[bool, Sequence]] = {}
        for seq in sequences:
            support = rule.corroborated_by(seq.readings)
            for nr in seq.readings:
                if not rule.trigger.fires(nr.reading):
                    continue
                seen, first = judged.get(nr.reading, (False, seq))
                judged[nr.reading] = (seen or support, first)
        for reading, (corroborated, seq) in judged.items():
            context = tuple(nr.reading for nr in seq.readings
                            if nr.metric != rule.trigger.metric and nr.metric in rule.metrics)
            evidence = (reading,) + context
            if corroborated:
                findings.append(PatientAlert(reading.node_id, rule.rule_id, evidence, reading.ts))
            elif rule.verdict_on_uncorroborated is Outcome.PATIENT_ALERT:
                findings.append(PatientAlert(reading.node_id, rule.rule_id, evidence, reading.ts,
                                             corroborated=False))
            else:
                findings.append(MisbehaviorReport(reading.node_id, rule.rule_id, evidence, reading.ts))
    findings.sort(key=lambda f: (f.ts, f.rule_id, f.node_id))
    return findings


def misbehavior_reports(findings: Iterable) -> list[MisbehaviorReport]:
    return [f for f in findings if isinstance(f, MisbehaviorReport)]


def analyze(readings: Iterable[SensorReading], rules: Iterable[CorrelationRule] = DEFAULT_RULES,
            metrics: dict[str, Metric] | None = None, suspects: list | None = None) -> list:
    """normalize -> build_sequences -> detect, windowing each rule over its own metric set."""
    normalized = normalize(sorted(readings, key=lambda r: r.ts), metrics, suspects)
    findings = []
    for rule in rules:
        findings += detect(build_sequences(normalized, rule.window, rule.metrics, cover_tail=True),
                           [rule])
    findings.sort(key=lambda f: (f.ts, f.rule_id, f.node_id))
    return findings


def report_to_ra(directory: RaDirectory, report: MisbehaviorReport) -> PseudoId:
    """Revoke the patient owning the reporting node; the next publish carries the change.

    Raises ``UnknownPid`` for an unowned node and ``AlreadyRevoked`` on a repeat.
    """
    pid = directory.patient_for_node(report.node_id)
    directory.revoke(pid)
    directory.audit_log[-1].update(reason="misbehavior", node_id=report.node_id,
                                   rule_id=report.rule_id, report_ts=report.ts)
    return pid


# -- file formats -------------------------------------------------------------


def load_readings(path) -> list[SensorReading]:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    readings = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            d = json.loads(line)
            readings.append(SensorReading(str(d["node_id"]), str(d["metric"]), d["value"], int(d["ts"])))
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"{path}:{lineno}: {exc}") from None
    return readings


def load_rules(path) -> list[CorrelationRule]:
    try:
        data = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"{path}: {exc}") from None
    if isinstance(data, dict):
        data = data.get("rules", [])
    return [CorrelationRule.from_dict(d) for d in data]


def load_metrics(path) -> dict[str, Metric]:
    try:
        data = json.loads(Path(path).read_text())
        return {
            d["name"]: Metric(d["name"], MetricKind(d["kind"]), d.get("low", 0.0), d.get("high", 1.0),
                              d.get("categorical", False))
            for d in data
        }
    except (OSError, json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"{path}: {exc}") from None


def findings_to_ndjson(findings: Iterable) -> str:
    return "".join(json.dumps(f.to_dict(), sort_keys=True) + "\n" for f in findings)

"""Synthetic labeled streams and detection metrics.

Scenarios are a noisy (optionally diurnal) baseline with injected events:

``spike``        additive offset over ``[start, start + length)``; length 0 hits one sample
``step``         permanent offset from ``start``; the following ``length`` is labeled change_point
``fault_stuck``  sensor frozen at the clean signal level at ``start`` plus ``magnitude``
``oscillation``  additive sinusoid of amplitude ``magnitude`` and period ``period``
``dropout``      samples removed

Event times are offsets from the scenario start. Spike, stuck-sensor,
oscillation and dropout windows must not overlap each other. Anomaly labels
take precedence over change-point labels.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import IO, Any, Iterable, NamedTuple, Optional, Sequence

import numpy as np

from .detector import DetectionOutput, Detector, DetectorConfig
from .errors import AlignmentError, ScenarioError
from .rolling import Sample
from .streamio import emit_output, format_timestamp, output_columns, parse_duration, parse_timestamp

NORMAL = "normal"
ANOMALY = "anomaly"
CHANGE_POINT = "change_point"
EVENT_TYPES = ("spike", "step", "fault_stuck", "oscillation", "dropout")
_EXCLUSIVE = {"spike", "fault_stuck", "oscillation", "dropout"}

DEFAULT_START = "2022-02-21T00:00:00Z"


@dataclass
class Baseline:
    level: float = 0.0
    noise_std: float = 1.0
    diurnal_amplitude: float = 0.0
    diurnal_period: float = 86400.0


@dataclass
class Event:
    type: str
    start: float
    length: float = 0.0
    magnitude: float = 0.0
    period: float = 3600.0

    @property
    def end(self) -> float:
        return self.start + self.length


@dataclass
class ScenarioSpec:
    duration: float
    sampling_interval: float = 60.0
    baseline: Baseline = field(default_factory=Baseline)
    events: list[Event] = field(default_factory=list)
    dropout_probability: float = 0.0
    seed: int = 0
    start: float = field(default_factory=lambda: parse_timestamp(DEFAULT_START))

    def validate(self) -> None:
        if not self.duration > 0 or not self.sampling_interval > 0:
            raise ScenarioError("duration and sampling_interval must be positive")
        if not 0.0 <= self.dropout_probability < 1.0:
            raise ScenarioError("dropout_probability must lie in [0, 1)")
        if self.baseline.noise_std < 0 or self.baseline.diurnal_period <= 0:
            raise ScenarioError("invalid baseline")
        for ev in self.events:
            if ev.type not in EVENT_TYPES:
                raise ScenarioError(f"unknown event type {ev.type!r}")
            if ev.start < 0 or ev.length < 0 or ev.end > self.duration:
                raise ScenarioError(f"{ev.type} event at {ev.start} lies outside the scenario")
            if ev.type == "oscillation" and not ev.period > 0:
                raise ScenarioError("oscillation period must be positive")
        exclusive = sorted((e for e in self.events if e.type in _EXCLUSIVE), key=lambda e: e.start)
        for a, b in zip(exclusive, exclusive[1:]):
            a_end = a.end if a.length > 0 else a.start + self.sampling_interval
            if b.start < a_end:
                raise ScenarioError(
                    f"{a.type} at {a.start} overlaps {b.type} at {b.start}"
                )
        step_starts = [e.start for e in self.events if e.type == "step"]
        if len(step_starts) != len(set(step_starts)):
            raise ScenarioError("two step events share a start time")

    @classmethod
    def from_dict(cls, doc: dict[str, Any]) -> "ScenarioSpec":
        """Build from a plain mapping; durations may be numbers (seconds) or ``"7d"`` strings."""
        try:
            d = dict(doc)
            base = Baseline(**d.pop("baseline", {}))
            base.diurnal_period = parse_duration(base.diurnal_period)
            events = []
            for raw in d.pop("events", []):
                raw = dict(raw)
                for key in ("start", "length", "period"):
                    if key in raw:
                        raw[key] = parse_duration(raw[key])
                events.append(Event(**raw))
            for key in ("duration", "sampling_interval"):
                if key in d:
                    d[key] = parse_duration(d[key])
            if "start" in d:
                d["start"] = parse_timestamp(d["start"])
            spec = cls(baseline=base, events=events, **d)
        except (TypeError, ValueError) as exc:
            raise ScenarioError(f"invalid scenario document: {exc}") from exc
        spec.validate()
        return spec

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        d["start"] = format_timestamp(self.start)
        return d


def load_scenario(path: str) -> ScenarioSpec:
    with open(path, encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ScenarioError(f"{path}: {exc}") from exc
    return ScenarioSpec.from_dict(doc)


class LabeledSample(NamedTuple):
    timestamp: float
    value: float
    label: str
    # index into ScenarioSpec.events of the event behind a non-normal label
    event: Optional[int] = None

    @property
    def sample(self) -> Sample:
        return Sample(self.timestamp, self.value)


def _event_mask(ev: Event, offsets: np.ndarray) -> np.ndarray:
    if ev.length > 0:
        return (offsets >= ev.start) & (offsets < ev.end)
    mask = np.zeros(offsets.shape, dtype=bool)
    idx = int(np.searchsorted(offsets, ev.start))
    if idx < len(offsets):
        mask[idx] = True
    return mask


def generate(spec: ScenarioSpec) -> list[LabeledSample]:
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    offsets = np.arange(0.0, spec.duration, spec.sampling_interval)
    n = len(offsets)
    noise = rng.normal(0.0, spec.baseline.noise_std, n) if spec.baseline.noise_std > 0 else np.zeros(n)
    dropped = rng.random(n) < spec.dropout_probability

    b = spec.baseline
    clean = np.full(n, float(b.level))
    if b.diurnal_amplitude:
        clean += b.diurnal_amplitude * np.sin(2.0 * math.pi * offsets / b.diurnal_period)
    labels = np.full(n, NORMAL, dtype=object)
    event_ids = np.full(n, -1)

    for i, ev in enumerate(spec.events):
        if ev.type == "step":
            clean[offsets >= ev.start] += ev.magnitude
            span = (offsets >= ev.start) & (offsets < ev.end)
            labels[span] = CHANGE_POINT
            event_ids[span] = i

    values = clean + noise
    for i, ev in enumerate(spec.events):
        if ev.type == "step":
            continue
        mask = _event_mask(ev, offsets)
        if ev.type == "dropout":
            dropped |= mask
            continue
        if ev.type == "spike":
            values[mask] += ev.magnitude
        elif ev.type == "fault_stuck":
            if mask.any():
                values[mask] = clean[np.argmax(mask)] + ev.magnitude
        elif ev.type == "oscillation":
            values[mask] += ev.magnitude * np.sin(2.0 * math.pi * (offsets[mask] - ev.start) / ev.period)
        labels[mask] = ANOMALY
        event_ids[mask] = i

    keep = ~dropped
    times = spec.start + offsets
    return [
        LabeledSample(float(t), float(v), str(lab), None if e < 0 else int(e))
        for t, v, lab, e in zip(times[keep], values[keep], labels[keep], event_ids[keep])
    ]


def write_labeled_csv(samples: Iterable[LabeledSample], sink: IO[str]) -> None:
    w = csv.writer(sink, lineterminator="\n")
    w.writerow(["timestamp", "value", "label", "event"])
    for s in samples:
        w.writerow([format_timestamp(s.timestamp), repr(s.value), s.label, "" if s.event is None else s.event])


def read_labeled_csv(source: Iterable[str]) -> list[LabeledSample]:
    out = []
    for row in csv.DictReader(source):
        ev = row.get("event", "")
        out.append(
            LabeledSample(parse_timestamp(row["timestamp"]), float(row["value"]), row["label"], int(ev) if ev else None)
        )
    return out


def run_detector(config: DetectorConfig, samples: Sequence[LabeledSample]) -> list[DetectionOutput]:
    if not samples:
        return []
    det = Detector(config, samples[0].sample)
    outputs = [det.initial_output()]
    process = det.process
    outputs.extend(process(s.sample) for s in samples[1:])
    return outputs


# -- evaluation ---------------------------------------------------------------


@dataclass
class Metrics:
    """Detection quality against generator labels.

    ``precision`` is reported as 1.0 when nothing was flagged, and ``recall``
    as 1.0 when no sample carries an anomaly label.
    """

    precision: float
    recall: float
    event_recall: float
    false_positive_rate: float
    mean_detection_delay: Optional[float]
    adaptation_time: Optional[float]
    flags: int = 0
    true_flags: int = 0
    events: int = 0
    detected_events: int = 0
    detection_delays: dict[int, float] = field(default_factory=dict)
    adaptation_times: dict[int, Optional[float]] = field(default_factory=dict)

    def as_dict(self) -> dict:
        return asdict(self)


def evaluate(
    outputs: Sequence[DetectionOutput],
    labels: Sequence[LabeledSample],
    match_window: float,
    settle_window: float = 3600.0,
) -> Metrics:
    """Score detector verdicts against ground-truth labels.

    A flag counts towards an event when it falls between the event's first
    labeled sample and ``match_window`` after its last. The adaptation time of
    a change point is measured from its first labeled sample to the first
    unflagged change-point sample that begins ``settle_window`` of unflagged
    change-point samples. Warm-up records are ignored throughout.
    """
    if len(outputs) != len(labels):
        raise AlignmentError(f"{len(outputs)} outputs but {len(labels)} labels")
    for i, (o, lab) in enumerate(zip(outputs, labels)):
        if abs(o.timestamp - lab.timestamp) > 1e-6:
            raise AlignmentError(f"record {i}: output at {o.timestamp}, label at {lab.timestamp}")

    rows = [(o, lab) for o, lab in zip(outputs, labels) if not o.in_warmup]
    spans: dict[int, list[float]] = {}
    kinds: dict[int, str] = {}
    for o, lab in rows:
        if lab.label != NORMAL:
            key = lab.event if lab.event is not None else -1 - len(spans)
            spans.setdefault(key, [o.timestamp, o.timestamp])[1] = o.timestamp
            kinds.setdefault(key, lab.label)

    flag_times = [o.timestamp for o, _ in rows if o.is_anomaly]
    windows = sorted((s, e + match_window) for s, e in spans.values())

    def attributed(t: float) -> bool:
        return any(s <= t <= e for s, e in windows)

    true_flags = sum(1 for t in flag_times if attributed(t))
    false_flags = len(flag_times) - true_flags
    n_normal = sum(1 for _, lab in rows if lab.label == NORMAL)
    anomalous = [o for o, lab in rows if lab.label == ANOMALY]

    delays: dict[int, float] = {}
    arr = np.asarray(flag_times)
    for key, (s, e) in spans.items():
        hit = arr[(arr >= s) & (arr <= e + match_window)] if len(arr) else arr
        if len(hit):
            delays[key] = float(hit.min() - s)

    adaptation: dict[int, Optional[float]] = {}
    for key, kind in kinds.items():
        if kind != CHANGE_POINT:
            continue
        seq = [(o.timestamp, o.is_anomaly) for o, lab in rows if lab.event == key and lab.label == CHANGE_POINT]
        adaptation[key] = _settle_time(seq, settle_window)

    settled = [v for v in adaptation.values() if v is not None]
    return Metrics(
        precision=true_flags / len(flag_times) if flag_times else 1.0,
        recall=sum(o.is_anomaly for o in anomalous) / len(anomalous) if anomalous else 1.0,
        event_recall=len(delays) / len(spans) if spans else 1.0,
        false_positive_rate=false_flags / n_normal if n_normal else 0.0,
        mean_detection_delay=float(np.mean(list(delays.values()))) if delays else None,
        adaptation_time=float(np.mean(settled)) if settled else None,
        flags=len(flag_times),
        true_flags=true_flags,
        events=len(spans),
        detected_events=len(delays),
        detection_delays=delays,
        adaptation_times=adaptation,
    )


def _settle_time(seq: list[tuple[float, bool]], settle_window: float) -> Optional[float]:
    if not seq:
        return None
    start = seq[0][0]
    # walk backwards tracking the time of the next flag after each sample
    next_flag = math.inf
    best = None
    for t, flagged in reversed(seq):
        if flagged:
            next_flag = t
        elif next_flag - t > settle_window or (next_flag == math.inf and seq[-1][0] - t >= settle_window):
            best = t
    return None if best is None else best - start


# -- case-study analogs -------------------------------------------------------

DAY = 86400.0
HOUR = 3600.0


def bess_profile(seed: int = 7) -> ScenarioSpec:
    """Month of 1-minute battery cell temperature: spikes, a level step, a stuck sensor and packet loss."""
    ev = [
        Event("spike", 10 * DAY + 14 * HOUR, 20 * 60, 0.25),
        Event("spike", 11 * DAY + 16 * HOUR, 15 * 60, 0.30),
        Event("step", 14 * DAY + 9 * HOUR, 7 * DAY, 0.07),
        Event("spike", 17 * DAY + 10 * HOUR, 30 * 60, 0.25),
        Event("spike", 18 * DAY + 13 * HOUR, 30 * 60, 0.25),
        Event("fault_stuck", 19 * DAY + 8 * HOUR, 2 * HOUR, -0.2),
        Event("spike", 20 * DAY + 11 * HOUR, 30 * 60, 0.25),
        Event("spike", 22 * DAY + 15 * HOUR, 30 * 60, 0.25),
        Event("dropout", 28 * DAY + 2 * HOUR, 8 * HOUR),
        Event("spike", 30 * DAY + 12 * HOUR, HOUR, 0.25),
        Event("spike", 31 * DAY + 12 * HOUR, HOUR, 0.25),
    ]
    return ScenarioSpec(
        duration=33 * DAY,
        sampling_interval=60.0,
        baseline=Baseline(level=0.5, noise_std=0.01, diurnal_amplitude=0.01),
        events=ev,
        dropout_probability=0.01,
        seed=seed,
        start=parse_timestamp("2022-02-21T00:00:00Z"),
    )


def inverter_profile(seed: int = 11) -> ScenarioSpec:
    """Month of 1-minute inverter temperature with load cycles, packet loss, faults and oscillation."""
    ev = [
        Event("dropout", 3 * DAY + 6 * HOUR, 30 * HOUR),
        Event("spike", 4 * DAY + 16 * HOUR, 40 * 60, 0.3),
        Event("spike", 5 * DAY + 13 * HOUR, 40 * 60, 0.3),
        Event("fault_stuck", 6 * DAY + 9 * HOUR, 30 * 60, -0.35),
        Event("fault_stuck", 7 * DAY + 9 * HOUR, 30 * 60, -0.35),
        Event("oscillation", 8 * DAY, 5 * DAY, 0.06, period=2 * HOUR),
        Event("fault_stuck", 13 * DAY + 9 * HOUR, 30 * 60, -0.35),
        Event("fault_stuck", 19 * DAY + 9 * HOUR, 30 * 60, -0.35),
        Event("spike", 22 * DAY + 10 * HOUR, 30 * 60, 0.3),
        Event("spike", 22 * DAY + 15 * HOUR, 30 * 60, -0.3),
        Event("spike", 23 * DAY + 11 * HOUR, 30 * 60, 0.3),
    ]
    return ScenarioSpec(
        duration=32 * DAY,
        sampling_interval=60.0,
        baseline=Baseline(level=0.4, noise_std=0.015, diurnal_amplitude=0.05),
        events=ev,
        dropout_probability=0.01,
        seed=seed,
        start=parse_timestamp("2022-03-16T00:00:00Z"),
    )


# The inverter settings are assumptions; only the BESS values are documented.
PROFILES = {
    "bess": (bess_profile, DetectorConfig(7 * DAY, 5 * HOUR, 0.9973)),
    "inverter": (inverter_profile, DetectorConfig(7 * DAY, 5 * HOUR, 0.9973)),
}


@dataclass
class CaseStudyResult:
    profile: str
    spec: ScenarioSpec
    config: DetectorConfig
    samples: list[LabeledSample]
    outputs: list[DetectionOutput]
    metrics: Metrics
    files: list[Path] = field(default_factory=list)


def write_figure_csv(outputs: Sequence[DetectionOutput], samples: Sequence[LabeledSample], sink: IO[str]) -> None:
    """Detector output rows plus ground-truth label and event columns, for plotting."""
    sink.write(",".join(output_columns() + ["label", "event"]) + "\n")
    for out, lab in zip(outputs, samples):
        ev = "" if lab.event is None else str(lab.event)
        sink.write(f"{emit_output(out)},{lab.label},{ev}\n")


def replicate_case_study(
    profile: str,
    output_dir: Optional[str] = None,
    match_window: float = HOUR,
    seed: Optional[int] = None,
) -> CaseStudyResult:
    if profile not in PROFILES:
        raise ScenarioError(f"unknown profile {profile!r}; choose from {sorted(PROFILES)}")
    make, config = PROFILES[profile]
    spec = make() if seed is None else make(seed)
    samples = generate(spec)
    outputs = run_detector(config, samples)
    metrics = evaluate(outputs, samples, match_window)
    result = CaseStudyResult(profile, spec, config, samples, outputs, metrics)
    if output_dir is not None:
        out = Path(output_dir)
        out.mkdir(parents=True, exist_ok=True)
        paths = {
            "scenario": out / f"{profile}_scenario.json",
            "stream": out / f"{profile}_stream.csv",
            "figure": out / f"{profile}_figure.csv",
            "metrics": out / f"{profile}_metrics.json",
        }
        paths["scenario"].write_text(json.dumps(spec.to_dict(), indent=2) + "\n")
        with paths["stream"].open("w", encoding="utf-8", newline="") as fh:
            write_labeled_csv(samples, fh)
        with paths["figure"].open("w", encoding="utf-8", newline="") as fh:
            write_figure_csv(outputs, samples, fh)
        doc = {"config": config.as_dict(), "metrics": metrics.as_dict()}
        paths["metrics"].write_text(json.dumps(doc, indent=2, default=str) + "\n")
        result.files = list(paths.values())
    return result

"""Reading measurement streams, writing verdicts, and wiring them through detectors."""

from __future__ import annotations

import csv
import io
import json
import math
import os
import re
import time
from dataclasses import dataclass, field
from datetime import datetime, timezone
from typing import IO, Any, Callable, Iterable, Iterator, NamedTuple, Optional, Union

from .detector import SCHEMA_VERSION, DetectionOutput, Detector, DetectorConfig
from .errors import ConfigError, NonFiniteValueError, RestoreError
from .rolling import Sample

OUTPUT_FIELDS = (
    "timestamp",
    "value",
    "score",
    "is_anomaly",
    "lower",
    "upper",
    "learned",
    "in_warmup",
)
FORMATS = ("csv", "ndjson")

_DURATION_UNITS = {
    "ms": 1e-3,
    "s": 1.0,
    "sec": 1.0,
    "m": 60.0,
    "min": 60.0,
    "h": 3600.0,
    "hr": 3600.0,
    "d": 86400.0,
    "w": 604800.0,
}
_DURATION_RE = re.compile(r"(\d+(?:\.\d*)?|\.\d+)\s*([a-z]*)")


class StreamIOError(OSError):
    """Reading the input or writing the output failed mid-stream."""


def parse_duration(text: Union[str, float, int]) -> float:
    """Parse ``"7d"``, ``"5h"``, ``"90s"``, ``"1d12h"`` or a bare number of seconds."""
    if isinstance(text, (int, float)) and not isinstance(text, bool):
        if not math.isfinite(text) or text < 0:
            raise ConfigError(f"invalid duration {text!r}")
        return float(text)
    s = str(text).strip().lower()
    if not s:
        raise ConfigError("empty duration")
    total = 0.0
    pos = 0
    for m in _DURATION_RE.finditer(s):
        if s[pos : m.start()].strip():
            raise ConfigError(f"invalid duration {text!r}")
        unit = m.group(2) or "s"
        if unit not in _DURATION_UNITS:
            raise ConfigError(f"unknown duration unit {unit!r} in {text!r}")
        total += float(m.group(1)) * _DURATION_UNITS[unit]
        pos = m.end()
    if pos == 0 or s[pos:].strip():
        raise ConfigError(f"invalid duration {text!r}")
    return total


def parse_timestamp(raw: Any, fmt: str = "auto") -> float:
    """Epoch seconds from an ISO-8601 string or a number of epoch seconds.

    Naive ISO timestamps are taken as UTC.
    """
    if isinstance(raw, (int, float)) and not isinstance(raw, bool):
        if fmt == "iso":
            raise ValueError(f"expected ISO-8601 timestamp, got {raw!r}")
        t = float(raw)
    else:
        s = str(raw).strip()
        if not s:
            raise ValueError("empty timestamp")
        t = None
        if fmt in ("auto", "epoch"):
            try:
                t = float(s)
            except ValueError:
                if fmt == "epoch":
                    raise
        if t is None:
            if s.endswith(("Z", "z")):
                s = s[:-1] + "+00:00"
            dt = datetime.fromisoformat(s)
            if dt.tzinfo is None:
                dt = dt.replace(tzinfo=timezone.utc)
            t = dt.timestamp()
    if not math.isfinite(t):
        raise ValueError(f"non-finite timestamp {raw!r}")
    return t


def format_timestamp(t: float, fmt: str = "iso") -> str:
    if fmt == "epoch":
        return repr(t)
    dt = datetime.fromtimestamp(t, tz=timezone.utc)
    return dt.isoformat().replace("+00:00", "Z")


@dataclass(frozen=True)
class RecordMapping:
    timestamp_field: str = "timestamp"
    value_field: str = "value"
    timestamp_format: str = "auto"  # auto | iso | epoch
    signal_id_field: Optional[str] = None

    def __post_init__(self) -> None:
        if self.timestamp_format not in ("auto", "iso", "epoch"):
            raise ConfigError(f"unknown timestamp format {self.timestamp_format!r}")

    def check_header(self, columns: list[str]) -> None:
        wanted = [self.timestamp_field, self.value_field]
        if self.signal_id_field:
            wanted.append(self.signal_id_field)
        missing = [c for c in wanted if c not in columns]
        if missing:
            raise ConfigError(f"input header {columns} lacks field(s) {missing}")


class Record(NamedTuple):
    sample: Sample
    signal: Optional[str] = None


class Rejection(NamedTuple):
    reason: str  # malformed | missing-field | bad-timestamp | non-numeric | non-finite
    detail: str = ""
    timestamp: Optional[float] = None
    signal: Optional[str] = None


def parse_record(
    line: str,
    fmt: str,
    mapping: RecordMapping,
    columns: Optional[list[str]] = None,
) -> Union[Record, Rejection]:
    """Parse one input line into a finite-valued record, or say why not.

    ``columns`` is the CSV header and is required for ``fmt="csv"``.
    """
    if fmt == "csv":
        if columns is None:
            raise ValueError("csv records need the header columns")
        try:
            cells = next(csv.reader([line]))
        except (csv.Error, StopIteration) as exc:
            return Rejection("malformed", str(exc))
        fields: dict[str, Any] = dict(zip(columns, cells))
    elif fmt == "ndjson":
        try:
            fields = json.loads(line)
        except json.JSONDecodeError as exc:
            return Rejection("malformed", str(exc))
        if not isinstance(fields, dict):
            return Rejection("malformed", "record is not an object")
    else:
        raise ValueError(f"unknown format {fmt!r}")

    signal = None
    if mapping.signal_id_field:
        raw_signal = fields.get(mapping.signal_id_field)
        if raw_signal is None or raw_signal == "":
            return Rejection("missing-field", mapping.signal_id_field)
        signal = str(raw_signal)

    raw_t = fields.get(mapping.timestamp_field)
    if raw_t is None or raw_t == "":
        return Rejection("missing-field", mapping.timestamp_field, signal=signal)
    try:
        t = parse_timestamp(raw_t, mapping.timestamp_format)
    except (ValueError, TypeError, OverflowError) as exc:
        return Rejection("bad-timestamp", str(exc), signal=signal)

    raw_v = fields.get(mapping.value_field)
    if raw_v is None or raw_v == "":
        return Rejection("missing-field", mapping.value_field, t, signal)
    if isinstance(raw_v, bool):
        return Rejection("non-numeric", repr(raw_v), t, signal)
    try:
        v = float(raw_v)
    except (ValueError, TypeError):
        return Rejection("non-numeric", repr(raw_v), t, signal)
    if not math.isfinite(v):
        return Rejection("non-finite", repr(raw_v), t, signal)
    return Record(Sample(t, v), signal)


def _fmt(x: float) -> str:
    return format(x, ".9g")


def output_columns(with_signal: bool = False) -> list[str]:
    cols = list(OUTPUT_FIELDS)
    if with_signal:
        cols.append("signal")
    cols.append("note")
    return cols


def emit_output(
    out: Union[DetectionOutput, Rejection],
    fmt: str = "csv",
    timestamp_format: str = "iso",
    signal: Optional[str] = None,
    with_signal: bool = False,
) -> str:
    """Render one verdict (or rejection) as a CSV row or a JSON object line.

    Columns follow ``OUTPUT_FIELDS``, then ``signal`` for multi-signal runs and
    a trailing ``note`` that carries rejection reasons and warnings.
    """
    if isinstance(out, Rejection):
        ts = "" if out.timestamp is None else format_timestamp(out.timestamp, timestamp_format)
        note = f"rejected:{out.reason}"
        signal = out.signal if signal is None else signal
        if fmt == "ndjson":
            rec: dict[str, Any] = {"timestamp": ts or None, "rejected": out.reason}
            if out.detail:
                rec["detail"] = out.detail
            if with_signal:
                rec["signal"] = signal
            return json.dumps(rec)
        cells = [ts] + [""] * (len(OUTPUT_FIELDS) - 1)
        if with_signal:
            cells.append(signal or "")
        cells.append(note)
        return _csv_row(cells)

    ts = format_timestamp(out.timestamp, timestamp_format)
    if fmt == "ndjson":
        rec = {
            "timestamp": ts,
            "value": float(_fmt(out.value)),
            "score": float(_fmt(out.score)),
            "is_anomaly": out.is_anomaly,
            "lower": float(_fmt(out.limits.lower)),
            "upper": float(_fmt(out.limits.upper)),
            "learned": out.learned,
            "in_warmup": out.in_warmup,
        }
        if with_signal:
            rec["signal"] = signal
        if out.warning:
            rec["note"] = out.warning
        return json.dumps(rec)
    cells = [
        ts,
        _fmt(out.value),
        _fmt(out.score),
        "true" if out.is_anomaly else "false",
        _fmt(out.limits.lower),
        _fmt(out.limits.upper),
        "true" if out.learned else "false",
        "true" if out.in_warmup else "false",
    ]
    if with_signal:
        cells.append(signal or "")
    cells.append(out.warning or "")
    return _csv_row(cells)


def _csv_row(cells: list[str]) -> str:
    buf = io.StringIO()
    csv.writer(buf, lineterminator="").writerow(cells)
    return buf.getvalue()


@dataclass
class RunSummary:
    samples_in: int = 0
    samples_rejected: int = 0
    anomalies: int = 0
    adaptations: int = 0
    warnings: int = 0
    signals: int = 0
    wall_time: float = 0.0

    def as_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass
class StreamOptions:
    input_format: str = "csv"
    output_format: str = "csv"
    mapping: RecordMapping = field(default_factory=RecordMapping)
    output_timestamp_format: Optional[str] = None  # defaults to the input's style
    prescale: Optional[tuple[float, float]] = None
    snapshot_path: Optional[str] = None
    snapshot_every: int = 0
    restore: Optional[dict] = None
    realtime: bool = False
    sleep: Callable[[float], None] = time.sleep

    def __post_init__(self) -> None:
        for f in (self.input_format, self.output_format):
            if f not in FORMATS:
                raise ConfigError(f"unknown format {f!r}; choose from {FORMATS}")
        if self.snapshot_every < 0:
            raise ConfigError("snapshot_every must be >= 0")


def snapshot_document(detectors: dict[Optional[str], Detector]) -> dict:
    """Snapshot for a run: a bare detector document, or one per signal."""
    if list(detectors) == [None]:
        return detectors[None].snapshot()
    return {
        "schema_version": SCHEMA_VERSION,
        "signals": {key: det.snapshot() for key, det in detectors.items()},
    }


def restore_detectors(doc: dict, config: DetectorConfig) -> dict[Optional[str], Detector]:
    if not isinstance(doc, dict):
        raise RestoreError("snapshot document must be an object")
    if "signals" in doc:
        if doc.get("schema_version") != SCHEMA_VERSION:
            raise RestoreError(f"unsupported schema_version {doc.get('schema_version')!r}")
        signals = doc["signals"]
        if not isinstance(signals, dict):
            raise RestoreError("signals must be an object")
        return {key: Detector.restore(sub, config) for key, sub in signals.items()}
    return {None: Detector.restore(doc, config)}


def write_snapshot(path: str, doc: dict) -> None:
    tmp = f"{path}.tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, allow_nan=False)
        fh.write("\n")
    os.replace(tmp, path)


def read_snapshot(path: str) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise RestoreError(f"snapshot {path} is not valid JSON: {exc}") from exc


def _iter_lines(source: Iterable[str]) -> Iterator[str]:
    try:
        for line in source:
            yield line.rstrip("\r\n")
    except (OSError, UnicodeDecodeError) as exc:
        raise StreamIOError(f"failed reading input: {exc}") from exc


def run_stream(
    config: DetectorConfig,
    source: Iterable[str],
    sink: IO[str],
    options: Optional[StreamOptions] = None,
) -> RunSummary:
    """Process every input line and write one output line per record, in order.

    Each signal id gets its own detector, created from the first valid sample
    seen for it (or restored from ``options.restore``).
    """
    opts = options or StreamOptions()
    mapping = opts.mapping
    multi = bool(mapping.signal_id_field)
    detectors: dict[Optional[str], Detector] = {}
    if opts.restore is not None:
        detectors = restore_detectors(opts.restore, config)
        if multi and None in detectors:
            raise RestoreError("single-signal snapshot cannot seed a multi-signal run")
        if not multi and None not in detectors:
            raise RestoreError("multi-signal snapshot needs --signal-field")

    ts_out = opts.output_timestamp_format or (
        "epoch" if mapping.timestamp_format == "epoch" else "iso"
    )
    summary = RunSummary()
    started = time.perf_counter()
    last_t: Optional[float] = None

    def write(line: str) -> None:
        try:
            sink.write(line + "\n")
        except OSError as exc:
            raise StreamIOError(f"failed writing output: {exc}") from exc

    def save() -> None:
        try:
            write_snapshot(opts.snapshot_path, snapshot_document(detectors))
        except OSError as exc:
            raise StreamIOError(f"failed writing snapshot: {exc}") from exc

    if opts.output_format == "csv":
        write(",".join(output_columns(multi)))

    lines = _iter_lines(source)
    columns: Optional[list[str]] = None
    if opts.input_format == "csv":
        for header in lines:
            if header.strip():
                columns = next(csv.reader([header]))
                mapping.check_header(columns)
                break

    for line in lines:
        if not line.strip():
            continue
        summary.samples_in += 1
        parsed = parse_record(line, opts.input_format, mapping, columns)
        if isinstance(parsed, Record) and opts.prescale is not None:
            a, b = opts.prescale
            scaled = a * parsed.sample.value + b
            if math.isfinite(scaled):
                parsed = Record(Sample(parsed.sample.timestamp, scaled), parsed.signal)
            else:
                parsed = Rejection("non-finite", "after prescale", parsed.sample.timestamp, parsed.signal)
        if isinstance(parsed, Rejection):
            summary.samples_rejected += 1
            write(emit_output(parsed, opts.output_format, ts_out, with_signal=multi))
        else:
            sample, key = parsed
            if opts.realtime and last_t is not None and sample.timestamp > last_t:
                opts.sleep(sample.timestamp - last_t)
            last_t = sample.timestamp if last_t is None else max(last_t, sample.timestamp)
            det = detectors.get(key)
            if det is None:
                det = detectors[key] = Detector(config, sample)
                out = det.initial_output()
            else:
                try:
                    out = det.process(sample)
                except NonFiniteValueError as exc:
                    summary.samples_rejected += 1
                    rej = Rejection("non-finite", str(exc), None, key)
                    write(emit_output(rej, opts.output_format, ts_out, with_signal=multi))
                    continue
            summary.anomalies += out.is_anomaly
            summary.adaptations += out.adapted
            summary.warnings += out.warning is not None
            write(emit_output(out, opts.output_format, ts_out, key, multi))
        if (
            opts.snapshot_path
            and opts.snapshot_every
            and detectors
            and summary.samples_in % opts.snapshot_every == 0
        ):
            save()

    if opts.snapshot_path and detectors:
        save()
    try:
        sink.flush()
    except OSError as exc:
        raise StreamIOError(f"failed writing output: {exc}") from exc
    summary.signals = len(detectors)
    summary.wall_time = time.perf_counter() - started
    return summary

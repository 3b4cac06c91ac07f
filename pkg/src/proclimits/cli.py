"""Command-line entry point: ``proclimits detect|synth|eval|replicate``."""

from __future__ import annotations

import argparse
import contextlib
import csv
import json
import logging
import sys
from typing import Iterator, Optional, Sequence, TextIO

from .detector import DEFAULT_QUANTILE, DetectionOutput, DetectorConfig, ProcessLimits
from .errors import ProcLimitsError
from .streamio import (
    FORMATS,
    RecordMapping,
    StreamOptions,
    parse_duration,
    parse_timestamp,
    read_snapshot,
    run_stream,
)
from .synth import (
    PROFILES,
    ScenarioSpec,
    evaluate,
    generate,
    load_scenario,
    read_labeled_csv,
    replicate_case_study,
    write_labeled_csv,
)

EXIT_OK = 0
EXIT_STARTUP = 1
EXIT_IO = 2


class _StartupError(Exception):
    pass


@contextlib.contextmanager
def _open_in(path: str) -> Iterator[TextIO]:
    if path == "-":
        yield sys.stdin
        return
    try:
        fh = open(path, encoding="utf-8", newline="")
    except OSError as exc:
        raise _StartupError(f"cannot open input {path}: {exc}") from exc
    with fh:
        yield fh


@contextlib.contextmanager
def _open_out(path: str) -> Iterator[TextIO]:
    if path == "-":
        yield sys.stdout
        return
    try:
        fh = open(path, "w", encoding="utf-8", newline="")
    except OSError as exc:
        raise _StartupError(f"cannot open output {path}: {exc}") from exc
    with fh:
        yield fh


def _duration(text: str) -> float:
    try:
        return parse_duration(text)
    except ProcLimitsError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from exc


def _prescale(text: str) -> tuple[float, float]:
    try:
        a, b = (float(p) for p in text.split(","))
    except ValueError as exc:
        raise argparse.ArgumentTypeError("expected A,B (value' = A*value + B)") from exc
    return a, b


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="proclimits", description=__doc__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    d = sub.add_parser("detect", help="run the detector over a CSV/NDJSON stream")
    d.add_argument("--input", required=True, help="input path or - for stdin")
    d.add_argument("--format", choices=FORMATS, default="csv")
    d.add_argument("--timestamp-field", default="timestamp")
    d.add_argument("--value-field", default="value")
    d.add_argument("--signal-field", default=None)
    d.add_argument("--timestamp-format", choices=("auto", "iso", "epoch"), default="auto")
    d.add_argument("--t-e", type=_duration, required=True, help="expiration period, e.g. 7d")
    d.add_argument("--t-c", type=_duration, required=True, help="time constant, e.g. 5h")
    d.add_argument("--q", type=float, default=DEFAULT_QUANTILE)
    d.add_argument("--warmup", type=_duration, default=parse_duration("1d"))
    d.add_argument("--snapshot", default=None, help="write a state snapshot here")
    d.add_argument("--snapshot-every", type=int, default=0, metavar="N", help="also snapshot every N records")
    d.add_argument("--restore", default=None, help="resume from a snapshot")
    d.add_argument("--output", default="-")
    d.add_argument("--output-format", choices=FORMATS, default="csv")
    d.add_argument("--realtime", action="store_true", help="sleep to reproduce inter-arrival gaps")
    d.add_argument("--prescale", type=_prescale, default=None, metavar="A,B")

    s = sub.add_parser("synth", help="generate a labeled synthetic stream")
    src = s.add_mutually_exclusive_group(required=True)
    src.add_argument("--scenario", help="scenario JSON document")
    src.add_argument("--profile", choices=sorted(PROFILES))
    s.add_argument("--seed", type=int, default=None, help="override the scenario seed")
    s.add_argument("--output", default="-")

    e = sub.add_parser("eval", help="score detector output against labels")
    e.add_argument("--detections", required=True, help="CSV written by detect")
    e.add_argument("--labels", required=True, help="CSV written by synth")
    e.add_argument("--match-window", type=_duration, default=parse_duration("1h"))
    e.add_argument("--settle-window", type=_duration, default=parse_duration("1h"))
    e.add_argument("--output", default="-")

    r = sub.add_parser("replicate", help="run a case-study analog and write plot-ready CSV")
    r.add_argument("--profile", choices=sorted(PROFILES), required=True)
    r.add_argument("--output-dir", required=True)
    r.add_argument("--seed", type=int, default=None)
    return ap


def _cmd_detect(args: argparse.Namespace) -> int:
    try:
        config = DetectorConfig(args.t_e, args.t_c, args.q, args.warmup)
        mapping = RecordMapping(args.timestamp_field, args.value_field, args.timestamp_format, args.signal_field)
        restore = read_snapshot(args.restore) if args.restore else None
        options = StreamOptions(
            input_format=args.format,
            output_format=args.output_format,
            mapping=mapping,
            prescale=args.prescale,
            snapshot_path=args.snapshot,
            snapshot_every=args.snapshot_every,
            restore=restore,
            realtime=args.realtime,
        )
    except (ProcLimitsError, OSError) as exc:
        raise _StartupError(str(exc)) from exc
    with _open_in(args.input) as src, _open_out(args.output) as sink:
        try:
            summary = run_stream(config, src, sink, options)
        except ProcLimitsError as exc:
            raise _StartupError(str(exc)) from exc
    print(json.dumps(summary.as_dict()), file=sys.stderr)
    return EXIT_OK


def _cmd_synth(args: argparse.Namespace) -> int:
    try:
        if args.profile:
            make, _ = PROFILES[args.profile]
            spec: ScenarioSpec = make() if args.seed is None else make(args.seed)
        else:
            spec = load_scenario(args.scenario)
            if args.seed is not None:
                spec.seed = args.seed
        samples = generate(spec)
    except (ProcLimitsError, OSError) as exc:
        raise _StartupError(str(exc)) from exc
    with _open_out(args.output) as sink:
        write_labeled_csv(samples, sink)
    return EXIT_OK


def _read_detections(path: str) -> list[DetectionOutput]:
    outs = []
    with _open_in(path) as fh:
        for row in csv.DictReader(fh):
            if row.get("note", "").startswith("rejected"):
                continue
            outs.append(
                DetectionOutput(
                    timestamp=parse_timestamp(row["timestamp"]),
                    value=float(row["value"]),
                    score=float(row["score"]),
                    is_anomaly=row["is_anomaly"] == "true",
                    in_warmup=row["in_warmup"] == "true",
                    learned=row["learned"] == "true",
                    limits=ProcessLimits(float(row["lower"]), float(row["upper"])),
                )
            )
    return outs


def _cmd_eval(args: argparse.Namespace) -> int:
    try:
        outputs = _read_detections(args.detections)
        with _open_in(args.labels) as fh:
            labels = read_labeled_csv(fh)
        metrics = evaluate(outputs, labels, args.match_window, args.settle_window)
    except (ProcLimitsError, KeyError, ValueError) as exc:
        raise _StartupError(str(exc)) from exc
    with _open_out(args.output) as sink:
        sink.write(json.dumps(metrics.as_dict(), indent=2) + "\n")
    return EXIT_OK


def _cmd_replicate(args: argparse.Namespace) -> int:
    try:
        result = replicate_case_study(args.profile, args.output_dir, seed=args.seed)
    except (ProcLimitsError, OSError) as exc:
        raise _StartupError(str(exc)) from exc
    for path in result.files:
        print(path)
    return EXIT_OK


COMMANDS = {
    "detect": _cmd_detect,
    "synth": _cmd_synth,
    "eval": _cmd_eval,
    "replicate": _cmd_replicate,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_STARTUP
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return COMMANDS[args.command](args)
    except _StartupError as exc:
        print(f"proclimits: {exc}", file=sys.stderr)
        return EXIT_STARTUP
    except OSError as exc:
        # StreamIOError, or a buffered write that only fails on close
        print(f"proclimits: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())

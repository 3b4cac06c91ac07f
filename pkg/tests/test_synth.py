import io
import json
import math

import pytest

from oracles import normal_ppf
from proclimits.cli import main
from proclimits.detector import DetectionOutput, DetectorConfig, ProcessLimits
from proclimits.errors import AlignmentError, ScenarioError
from proclimits.synth import (
    ANOMALY,
    CHANGE_POINT,
    DAY,
    HOUR,
    NORMAL,
    Baseline,
    Event,
    LabeledSample,
    ScenarioSpec,
    evaluate,
    generate,
    read_labeled_csv,
    replicate_case_study,
    run_detector,
    write_labeled_csv,
)

Z_LIMIT = normal_ppf(0.99865)


def spec(events=(), noise=1.0, duration=DAY, **kw):
    return ScenarioSpec(
        duration=duration,
        sampling_interval=60.0,
        baseline=Baseline(level=10.0, noise_std=noise),
        events=list(events),
        seed=kw.pop("seed", 0),
        **kw,
    )


# -- generate ---------------------------------------------------------------


def test_constant_series():
    out = generate(spec(noise=0.0))
    assert len(out) == 1440
    assert {s.value for s in out} == {10.0}
    assert {s.label for s in out} == {NORMAL}
    assert out[1].timestamp - out[0].timestamp == 60.0


def test_single_spike():
    out = generate(spec([Event("spike", 3 * HOUR, 0, 10.0)]))
    hits = [s for s in out if s.label == ANOMALY]
    assert len(hits) == 1
    assert hits[0].timestamp - out[0].timestamp == 3 * HOUR
    assert hits[0].event == 0


def test_step_labels_then_normal():
    t_e = 6 * HOUR
    out = generate(spec([Event("step", 2 * HOUR, t_e, 5.0)], noise=0.0))
    t0 = out[0].timestamp
    for s in out:
        off = s.timestamp - t0
        want = CHANGE_POINT if 2 * HOUR <= off < 2 * HOUR + t_e else NORMAL
        assert s.label == want
        assert s.value == (15.0 if off >= 2 * HOUR else 10.0)


def test_stuck_and_oscillation():
    out = generate(
        spec(
            [Event("fault_stuck", HOUR, HOUR, -3.0), Event("oscillation", 5 * HOUR, 2 * HOUR, 2.0, period=HOUR)],
            noise=0.0,
        )
    )
    stuck = [s.value for s in out if s.event == 0]
    assert len(stuck) == 60 and set(stuck) == {7.0}
    osc = [s.value - 10.0 for s in out if s.event == 1]
    assert max(osc) == pytest.approx(2.0) and min(osc) == pytest.approx(-2.0)


def test_dropout_removes_samples():
    out = generate(spec([Event("dropout", HOUR, HOUR)], dropout_probability=0.05))
    assert len(out) < 1440 - 60
    t0 = out[0].timestamp
    assert not any(HOUR <= s.timestamp - t0 < 2 * HOUR for s in out)
    gaps = {b.timestamp - a.timestamp for a, b in zip(out, out[1:])}
    assert len(gaps) > 1


def test_generator_determinism():
    s = spec([Event("spike", HOUR, 0, 5.0)], dropout_probability=0.02, seed=3)
    a, b = io.StringIO(), io.StringIO()
    write_labeled_csv(generate(s), a)
    write_labeled_csv(generate(s), b)
    assert a.getvalue() == b.getvalue()
    c = io.StringIO()
    s.seed = 4
    write_labeled_csv(generate(s), c)
    assert c.getvalue() != a.getvalue()


def test_labeled_csv_roundtrip():
    out = generate(spec([Event("spike", HOUR, 0, 5.0)]))
    buf = io.StringIO()
    write_labeled_csv(out, buf)
    buf.seek(0)
    assert read_labeled_csv(buf) == out


@pytest.mark.parametrize(
    "events",
    [
        [Event("spike", HOUR, HOUR, 1.0), Event("fault_stuck", HOUR + 60, HOUR, 1.0)],
        [Event("dropout", HOUR, HOUR), Event("spike", HOUR + 600, 0, 1.0)],
        [Event("step", HOUR, HOUR, 1.0), Event("step", HOUR, HOUR, 2.0)],
        [Event("spike", 2 * DAY, 0, 1.0)],
        [Event("bogus", HOUR, 0, 1.0)],
    ],
)
def test_contradictory_events(events):
    with pytest.raises(ScenarioError):
        generate(spec(events))


def test_from_dict_durations():
    s = ScenarioSpec.from_dict(
        {
            "duration": "2d",
            "sampling_interval": "1min",
            "baseline": {"level": 0.5, "noise_std": 0.01, "diurnal_amplitude": 0.01, "diurnal_period": "1d"},
            "events": [{"type": "step", "start": "1d", "length": "6h", "magnitude": 0.1}],
            "seed": 9,
            "start": "2022-02-21T00:00:00Z",
        }
    )
    assert s.duration == 2 * DAY and s.events[0].length == 6 * HOUR
    again = ScenarioSpec.from_dict(json.loads(json.dumps(s.to_dict())))
    assert again == s
    with pytest.raises(ScenarioError):
        ScenarioSpec.from_dict({"duration": "2d", "colour": "red"})


# -- evaluate ---------------------------------------------------------------


def _outputs(labels, flags, warm=()):
    return [
        DetectionOutput(s.timestamp, s.value, 0.0, f, i in warm, not f, ProcessLimits(-1.0, 1.0))
        for i, (s, f) in enumerate(zip(labels, flags))
    ]


def _labels(kinds):
    return [LabeledSample(60.0 * i, 0.0, k, None if k == NORMAL else 0) for i, k in enumerate(kinds)]


def test_evaluate_perfect():
    labels = _labels([NORMAL] * 50 + [ANOMALY] * 3 + [NORMAL] * 50)
    m = evaluate(_outputs(labels, [s.label == ANOMALY for s in labels]), labels, 0.0)
    assert (m.precision, m.recall, m.event_recall, m.false_positive_rate) == (1.0, 1.0, 1.0, 0.0)
    assert m.mean_detection_delay == 0.0


def test_evaluate_no_flags():
    labels = _labels([NORMAL] * 50 + [ANOMALY] * 3 + [NORMAL] * 50)
    m = evaluate(_outputs(labels, [False] * len(labels)), labels, HOUR)
    assert m.recall == 0.0 and m.precision == 1.0 and m.flags == 0
    assert m.event_recall == 0.0 and m.mean_detection_delay is None


def test_evaluate_one_spurious_flag():
    labels = _labels([NORMAL] * 1000)
    flags = [i == 500 for i in range(1000)]
    m = evaluate(_outputs(labels, flags), labels, HOUR)
    assert m.precision == 0.0
    assert m.false_positive_rate == 1 / 1000


def test_evaluate_match_window_and_delay():
    labels = _labels([NORMAL] * 10 + [ANOMALY] * 2 + [NORMAL] * 10)
    flags = [i == 13 for i in range(22)]  # two minutes after the event ends
    assert evaluate(_outputs(labels, flags), labels, 60.0).event_recall == 0.0
    m = evaluate(_outputs(labels, flags), labels, 120.0)
    assert m.event_recall == 1.0 and m.precision == 1.0
    assert m.mean_detection_delay == 180.0


def test_evaluate_warmup_excluded():
    labels = _labels([NORMAL] * 100)
    flags = [i < 10 for i in range(100)]
    m = evaluate(_outputs(labels, flags, warm=range(10)), labels, HOUR)
    assert m.flags == 0 and m.false_positive_rate == 0.0


def test_evaluate_misaligned():
    labels = _labels([NORMAL] * 10)
    with pytest.raises(AlignmentError):
        evaluate(_outputs(labels, [False] * 10)[:-1], labels, HOUR)
    shifted = _outputs(labels, [False] * 10)
    shifted[4].timestamp += 30
    with pytest.raises(AlignmentError):
        evaluate(shifted, labels, HOUR)


def test_evaluate_adaptation_time():
    kinds = [NORMAL] * 10 + [CHANGE_POINT] * 200
    labels = _labels(kinds)
    # flagged for 30 samples, one stray flag, then quiet
    flags = [False] * 10 + [True] * 30 + [False] * 5 + [True] + [False] * 164
    m = evaluate(_outputs(labels, flags), labels, 0.0, settle_window=600.0)
    assert m.adaptation_time == 36 * 60.0


# -- case-study analogs -----------------------------------------------------


@pytest.fixture(scope="module")
def bess():
    return replicate_case_study("bess")


def test_bess_adapts_within_a_day_and_a_half(bess):
    assert bess.metrics.adaptation_time is not None
    assert bess.metrics.adaptation_time <= 1.5 * DAY
    assert bess.metrics.adaptation_time <= bess.config.expiration_period


def test_bess_spikes_detected(bess):
    start = {}
    for i, (s, o) in enumerate(zip(bess.samples, bess.outputs)):
        if s.event is not None and s.event not in start:
            start[s.event] = o
    strong = []
    for idx, ev in enumerate(bess.spec.events):
        if ev.type != "spike" or idx not in start:
            continue
        o = start[idx]
        sigma = (o.upper - o.lower) / (2 * Z_LIMIT)
        if abs(ev.magnitude) >= 5 * sigma:
            strong.append(idx)
    assert len(strong) >= 6
    assert all(idx in bess.metrics.detection_delays for idx in strong)


def test_bess_stuck_fault_does_not_move_limits(bess):
    idx = next(i for i, e in enumerate(bess.spec.events) if e.type == "fault_stuck")
    rows = [k for k, s in enumerate(bess.samples) if s.event == idx]
    first, after = bess.outputs[rows[0]], bess.outputs[rows[-1] + 1]
    assert all(bess.outputs[k].is_anomaly for k in rows)
    sigma = (first.upper - first.lower) / (2 * Z_LIMIT)
    assert abs(after.upper - first.upper) <= 0.2 * sigma
    assert abs(after.lower - first.lower) <= 0.2 * sigma


def test_inverter_writes_plot_files(tmp_path):
    res = replicate_case_study("inverter", str(tmp_path))
    names = sorted(p.name for p in res.files)
    assert names == [
        "inverter_figure.csv",
        "inverter_metrics.json",
        "inverter_scenario.json",
        "inverter_stream.csv",
    ]
    fig = (tmp_path / "inverter_figure.csv").read_text().splitlines()
    assert fig[0].split(",")[:8] == ["timestamp", "value", "score", "is_anomaly", "lower", "upper", "learned", "in_warmup"]
    assert len(fig) == len(res.samples) + 1
    assert res.metrics.event_recall == 1.0
    doc = json.loads((tmp_path / "inverter_metrics.json").read_text())
    assert doc["config"]["expiration_period"] == 7 * DAY


def test_run_detector_flags_match_limits():
    s = spec([Event("spike", 12 * HOUR, 0, 8.0), Event("step", 16 * HOUR, 6 * HOUR, 6.0)], duration=2 * DAY)
    config = DetectorConfig(DAY, HOUR, warmup=6 * HOUR)
    outs = run_detector(config, generate(s))
    for o in outs:
        if o.in_warmup:
            continue
        outside = not (o.lower <= o.value <= o.upper)
        assert outside == o.is_anomaly or abs(o.score - 0.9973) <= 1e-9


# -- CLI --------------------------------------------------------------------


def test_cli_synth_detect_eval(tmp_path, capsys):
    scen = tmp_path / "s.json"
    scen.write_text(
        json.dumps(
            {
                "duration": "3d",
                "sampling_interval": 60,
                "baseline": {"level": 1.0, "noise_std": 0.1},
                "events": [{"type": "spike", "start": "2d", "length": 0, "magnitude": 2.0}],
                "seed": 1,
            }
        )
    )
    labels, dets, metrics = tmp_path / "l.csv", tmp_path / "d.csv", tmp_path / "m.json"
    assert main(["synth", "--scenario", str(scen), "--output", str(labels)]) == 0
    assert main(["detect", "--input", str(labels), "--t-e", "1d", "--t-c", "1h", "--output", str(dets)]) == 0
    assert main(["eval", "--detections", str(dets), "--labels", str(labels), "--output", str(metrics)]) == 0
    m = json.loads(metrics.read_text())
    assert m["event_recall"] == 1.0 and m["recall"] == 1.0
    assert main(["synth", "--scenario", str(tmp_path / "missing.json")]) == 1


def test_cli_replicate(tmp_path, capsys):
    assert main(["replicate", "--profile", "bess", "--output-dir", str(tmp_path)]) == 0
    printed = capsys.readouterr().out.split()
    assert len(printed) == 4 and all(p.startswith(str(tmp_path)) for p in printed)
    m = json.loads((tmp_path / "bess_metrics.json").read_text())["metrics"]
    assert m["event_recall"] == 1.0
    assert not math.isnan(m["precision"])

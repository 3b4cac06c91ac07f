"""Online anomaly detector with dynamic process limits.

Each incoming sample is scored against a rolling Gaussian model, judged
against limits derived from that same model, and learned only when it looks
normal, when the recent scores say the process has moved to a new operating
point, or during the initial warm-up. Learned samples are forgotten once they
are older than the expiration period.

The lower limit comes from a second model fitted to the negated stream, kept
in lockstep with the direct one.
"""

from __future__ import annotations

import json
import logging
import math
from collections import deque
from dataclasses import asdict, dataclass
from typing import Any, Iterable, NamedTuple, Optional, Sequence

from .errors import ConfigError, NonFiniteValueError, RestoreError
from .gaussian import erf_approx, standard_ppf
from .rolling import (
    DEFAULT_VARIANCE_FLOOR,
    RunningGaussian,
    Sample,
    TimedBuffer,
    expire,
)

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1
DEFAULT_QUANTILE = 0.9973
DEFAULT_WARMUP = 86400.0
MIN_CONDITION_WINDOW = 2

# Scores enter the adaptation window as integers in units of 2**-52 so the
# running sum is exact and reproducible after a snapshot restore.
_SCORE_SCALE = 1 << 52
_INV_SQRT2 = 1.0 / math.sqrt(2.0)


@dataclass(frozen=True)
class DetectorConfig:
    """Detector tunables. Durations are in seconds."""

    expiration_period: float
    time_constant: float
    quantile: float = DEFAULT_QUANTILE
    warmup: float = DEFAULT_WARMUP
    variance_floor: float = DEFAULT_VARIANCE_FLOOR

    def __post_init__(self) -> None:
        for name in ("expiration_period", "time_constant", "quantile", "warmup", "variance_floor"):
            value = getattr(self, name)
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise ConfigError(f"{name} must be a number, got {value!r}")
            if not math.isfinite(value):
                raise ConfigError(f"{name} must be finite, got {value!r}")
            object.__setattr__(self, name, float(value))
        if not self.time_constant > 0:
            raise ConfigError("time_constant must be positive")
        if not self.expiration_period > self.time_constant:
            raise ConfigError(
                "expiration_period must exceed time_constant "
                f"({self.expiration_period} <= {self.time_constant})"
            )
        if not 0.5 < self.quantile < 1.0:
            raise ConfigError(f"quantile must lie in (0.5, 1), got {self.quantile}")
        if self.warmup < 0:
            raise ConfigError("warmup must be >= 0")
        if not self.variance_floor > 0:
            raise ConfigError("variance_floor must be positive")

    @property
    def limit_quantile(self) -> float:
        """One-sided CDF level whose two-sided score equals ``quantile``."""
        return self.quantile / 2.0 + 0.5

    def as_dict(self) -> dict:
        return asdict(self)


class ProcessLimits(NamedTuple):
    lower: float
    upper: float


@dataclass(slots=True)
class DetectionOutput:
    timestamp: float
    value: float
    score: float
    is_anomaly: bool
    in_warmup: bool
    learned: bool
    limits: ProcessLimits
    # learned only because the adaptation condition held
    adapted: bool = False
    warning: Optional[str] = None

    @property
    def lower(self) -> float:
        return self.limits.lower

    @property
    def upper(self) -> float:
        return self.limits.upper


def anomaly_score(x: float, mean: float, variance: float) -> float:
    """Two-sided score ``2 * |F(x) - 1/2|`` under N(mean, variance).

    That expression simplifies to ``|erf(z / sqrt(2))|``, which is what gets
    evaluated: it skips two roundings and is exactly symmetric in ``z``.
    """
    z = (x - mean) / math.sqrt(variance)
    return abs(erf_approx(z * _INV_SQRT2))


def adaptation_condition(scores: Sequence[float], q: float) -> bool:
    """True when the average of at least two recent scores exceeds ``q``."""
    if len(scores) < MIN_CONDITION_WINDOW:
        return False
    return math.fsum(scores) / len(scores) > q


def _score_units(y: float) -> int:
    return int(y * _SCORE_SCALE)


class Detector:
    """Single-signal detector. Feed samples in time order through :meth:`process`."""

    def __init__(self, config: DetectorConfig, first: Sample) -> None:
        t0, x0 = float(first[0]), float(first[1])
        if not math.isfinite(x0):
            raise NonFiniteValueError(f"non-finite initial value: {x0!r}")
        if not math.isfinite(t0):
            raise NonFiniteValueError(f"non-finite initial timestamp: {t0!r}")
        self.config = config
        self.stats = RunningGaussian.from_value(x0)
        self.stats_neg = RunningGaussian.from_value(-x0)
        self.buffer = TimedBuffer(config.expiration_period)
        self.score_window: deque[tuple[float, float]] = deque()
        self.start_time = t0
        self.last_timestamp = t0
        self.first_value = x0
        self._window_units = 0
        self._set_constants()

    def _set_constants(self) -> None:
        cfg = self.config
        self._q = cfg.quantile
        self._q_num, self._q_den = cfg.quantile.as_integer_ratio()
        self._z_limit = standard_ppf(cfg.limit_quantile)
        self._floor = cfg.variance_floor
        self._time_constant = cfg.time_constant
        self._expiration_period = cfg.expiration_period
        self._warmup = cfg.warmup

    # -- queries -----------------------------------------------------------

    def score_sample(self, x: float) -> float:
        return anomaly_score(x, self.stats.mean, self.stats.variance(self._floor))

    def limits(self) -> ProcessLimits:
        """Current lower/upper process limits.

        The upper limit is the ``q/2 + 1/2`` quantile of the direct model; the
        lower one is the negated quantile of the mirrored model.
        """
        z = self._z_limit
        upper = self.stats.mean + z * math.sqrt(self.stats.variance(self._floor))
        neg = self.stats_neg
        lower = -(neg.mean + z * math.sqrt(neg.variance(self._floor)))
        return ProcessLimits(lower, upper)

    def adaptation_condition(self) -> bool:
        n = len(self.score_window)
        if n < MIN_CONDITION_WINDOW:
            return False
        # sum/(n * scale) > num/den, in exact integer arithmetic
        return self._window_units * self._q_den > self._q_num * n * _SCORE_SCALE

    def in_warmup(self, timestamp: float) -> bool:
        return timestamp - self.start_time < self.config.warmup

    def initial_output(self) -> DetectionOutput:
        """Verdict for the seeding sample, which is learned by construction."""
        return DetectionOutput(
            timestamp=self.start_time,
            value=self.first_value,
            score=0.0,
            is_anomaly=False,
            in_warmup=self.in_warmup(self.start_time),
            learned=True,
            limits=self.limits(),
        )

    # -- processing --------------------------------------------------------

    def process(self, sample: Sample) -> DetectionOutput:
        t, x = float(sample[0]), float(sample[1])
        if not math.isfinite(x):
            raise NonFiniteValueError(f"non-finite value: {x!r}")
        if not math.isfinite(t):
            raise NonFiniteValueError(f"non-finite timestamp: {t!r}")
        warning = None
        if t < self.last_timestamp:
            logger.warning("timestamp regression %r < %r; clamping", t, self.last_timestamp)
            warning = "timestamp-regression"
            t = self.last_timestamp
        self.last_timestamp = t

        stats, neg, floor = self.stats, self.stats_neg, self._floor
        mean = stats.mean
        sd = math.sqrt(stats.variance(floor))
        y = abs(erf_approx((x - mean) / sd * _INV_SQRT2))
        z_limit = self._z_limit
        limits = ProcessLimits(
            -(neg.mean + z_limit * math.sqrt(neg.variance(floor))),
            mean + z_limit * sd,
        )

        window = self.score_window
        window.append((t, y))
        units = self._window_units + int(y * _SCORE_SCALE)
        cutoff = t - self._time_constant
        while window[0][0] <= cutoff:
            units -= int(window.popleft()[1] * _SCORE_SCALE)
        self._window_units = units

        warm = t - self.start_time < self._warmup
        normal = y < self._q
        adapted = False
        if warm or normal:
            learn = True
        else:
            learn = adapted = self.adaptation_condition()
        if learn:
            stats.update(x)
            neg.update(-x)
            entries = self.buffer.entries
            entries.append(Sample(t, x))
            if entries[0].timestamp <= t - self._expiration_period:
                expire(self.buffer, stats, t, neg)

        return DetectionOutput(
            t, x, y, not normal and not warm, warm, learn, limits, adapted, warning
        )

    def run(self, samples: Iterable[Sample]) -> list[DetectionOutput]:
        return [self.process(s) for s in samples]

    # -- persistence -------------------------------------------------------

    def snapshot(self) -> dict[str, Any]:
        return {
            "schema_version": SCHEMA_VERSION,
            "config": self.config.as_dict(),
            "stats_direct": self.stats.as_dict(),
            "stats_mirror": self.stats_neg.as_dict(),
            "buffer": [[s.timestamp, s.value] for s in self.buffer.entries],
            "score_window": [[t, y] for t, y in self.score_window],
            "start_time": self.start_time,
            "last_timestamp": self.last_timestamp,
            "first_value": self.first_value,
        }

    def dumps(self) -> str:
        return json.dumps(self.snapshot(), allow_nan=False)

    @classmethod
    def restore(cls, doc: dict[str, Any], config: Optional[DetectorConfig] = None) -> "Detector":
        """Rebuild a detector from :meth:`snapshot` output.

        If ``config`` is given it must match the configuration echoed in the
        document.
        """
        try:
            return cls._restore(doc, config)
        except RestoreError:
            raise
        except (KeyError, TypeError, ValueError, IndexError, AttributeError) as exc:
            raise RestoreError(f"corrupt snapshot document: {exc!r}") from exc

    @classmethod
    def loads(cls, text: str, config: Optional[DetectorConfig] = None) -> "Detector":
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise RestoreError(f"snapshot is not valid JSON: {exc}") from exc
        return cls.restore(doc, config)

    @classmethod
    def _restore(cls, doc: dict[str, Any], config: Optional[DetectorConfig]) -> "Detector":
        if not isinstance(doc, dict):
            raise RestoreError("snapshot document must be an object")
        version = doc.get("schema_version")
        if version != SCHEMA_VERSION:
            raise RestoreError(f"unsupported schema_version {version!r}")
        stored = DetectorConfig(**doc["config"])
        if config is None:
            config = stored
        elif config != stored:
            raise RestoreError(f"config mismatch: snapshot has {stored}, got {config}")

        def stats_from(d: dict) -> RunningGaussian:
            count, mean, sum_sq = d["count"], d["mean"], d["sum_sq"]
            if isinstance(count, bool) or not isinstance(count, int) or count < 1:
                raise RestoreError(f"invalid count {count!r}")
            mean, sum_sq = float(mean), float(sum_sq)
            if not (math.isfinite(mean) and math.isfinite(sum_sq)) or sum_sq < 0:
                raise RestoreError("invalid model moments")
            return RunningGaussian(count, mean, sum_sq)

        direct = stats_from(doc["stats_direct"])
        mirror = stats_from(doc["stats_mirror"])
        if direct.count != mirror.count:
            raise RestoreError("direct and mirrored models disagree on sample count")

        buffer = [Sample(float(t), float(x)) for t, x in doc["buffer"]]
        window = [(float(t), float(y)) for t, y in doc["score_window"]]
        if len(buffer) + 1 != direct.count:
            raise RestoreError(
                f"buffer holds {len(buffer)} samples but the model counts {direct.count}"
            )
        for seq in (buffer, window):
            for (a, _), (b, _) in zip(seq, seq[1:]):
                if b < a:
                    raise RestoreError("snapshot entries out of timestamp order")
        if any(not 0.0 <= y <= 1.0 for _, y in window):
            raise RestoreError("score outside [0, 1]")

        det = cls.__new__(cls)
        det.config = config
        det.stats = direct
        det.stats_neg = mirror
        det.buffer = TimedBuffer(config.expiration_period, buffer)
        det.score_window = deque(window)
        det.start_time = float(doc["start_time"])
        det.last_timestamp = float(doc.get("last_timestamp", det.start_time))
        det.first_value = float(doc.get("first_value", direct.mean))
        det._window_units = sum(_score_units(y) for _, y in window)
        det._set_constants()
        return det

    # -- introspection -----------------------------------------------------

    def state_size(self) -> int:
        """Number of stored samples and scores (what grows with the windows)."""
        return len(self.buffer) + len(self.score_window)

    def __repr__(self) -> str:
        return (
            f"Detector(stats={self.stats!r}, buffered={len(self.buffer)}, "
            f"window={len(self.score_window)})"
        )


def new_detector(config: DetectorConfig, first: Sample) -> Detector:
    return Detector(config, first)

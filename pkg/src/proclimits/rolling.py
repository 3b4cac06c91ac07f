"""Rolling Gaussian statistics with time-based expiration.

Samples are learned with Welford's one-pass update and forgotten again with
the inverse (revert) update once they are older than the expiration period.
Only the samples that may still need reverting are kept in memory.
"""

from __future__ import annotations

import math
from collections import deque
from typing import Iterable, NamedTuple, Optional

from .errors import NonFiniteValueError, RevertGuardError

DEFAULT_VARIANCE_FLOOR = 1e-12
INITIAL_VARIANCE = 1.0
MIN_COUNT_AFTER_REVERT = 2


class Sample(NamedTuple):
    timestamp: float
    value: float


def _check_finite(x: float) -> float:
    x = float(x)
    if not math.isfinite(x):
        raise NonFiniteValueError(f"non-finite value: {x!r}")
    return x


class RunningGaussian:
    """Running mean and corrected sum of squares of a sample population.

    The model is seeded with a single value and never becomes empty. Until a
    second sample arrives the variance is reported as ``INITIAL_VARIANCE``
    while ``sum_sq`` stays at zero, so the update identities hold exactly from
    the first learned sample on.
    """

    __slots__ = ("count", "mean", "sum_sq")

    def __init__(self, count: int, mean: float, sum_sq: float) -> None:
        self.count = count
        self.mean = mean
        self.sum_sq = sum_sq

    @classmethod
    def from_value(cls, x0: float) -> "RunningGaussian":
        return cls(1, _check_finite(x0), 0.0)

    def update(self, x: float) -> None:
        """Learn ``x``."""
        if not math.isfinite(x):
            raise NonFiniteValueError(f"non-finite value: {x!r}")
        mean = self.mean
        n = self.count + 1
        new_mean = mean + (x - mean) / n
        self.sum_sq += (x - mean) * (x - new_mean)
        self.mean = new_mean
        self.count = n

    def revert(self, x_old: float) -> None:
        """Forget ``x_old``, a sample previously learned by :meth:`update`.

        Raises :class:`RevertGuardError` when fewer than three samples are
        held, since the reverted model would have no sample variance.
        """
        if self.count <= MIN_COUNT_AFTER_REVERT:
            raise RevertGuardError(
                f"cannot revert with count={self.count}; need at least 3"
            )
        if not math.isfinite(x_old):
            raise NonFiniteValueError(f"non-finite value: {x_old!r}")
        mean = self.mean
        n = self.count - 1
        new_mean = mean - (x_old - mean) / n
        sum_sq = self.sum_sq - (x_old - new_mean) * (x_old - mean)
        self.sum_sq = sum_sq if sum_sq > 0.0 else 0.0
        self.mean = new_mean
        self.count = n

    def variance(self, floor: float = DEFAULT_VARIANCE_FLOOR) -> float:
        if self.count < 2:
            var = INITIAL_VARIANCE
        else:
            var = self.sum_sq / (self.count - 1)
        return var if var > floor else floor

    def std(self, floor: float = DEFAULT_VARIANCE_FLOOR) -> float:
        return math.sqrt(self.variance(floor))

    def copy(self) -> "RunningGaussian":
        return RunningGaussian(self.count, self.mean, self.sum_sq)

    def as_dict(self) -> dict:
        return {"count": self.count, "mean": self.mean, "sum_sq": self.sum_sq}

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, RunningGaussian):
            return NotImplemented
        return (self.count, self.mean, self.sum_sq) == (
            other.count,
            other.mean,
            other.sum_sq,
        )

    def __repr__(self) -> str:
        return (
            f"RunningGaussian(count={self.count}, mean={self.mean!r}, "
            f"sum_sq={self.sum_sq!r})"
        )


def init_stats(x0: float) -> RunningGaussian:
    return RunningGaussian.from_value(x0)


class TimedBuffer:
    """Learned samples, oldest first, that are still inside the expiration period."""

    __slots__ = ("entries", "max_age")

    def __init__(self, max_age: float, entries: Iterable[Sample] = ()) -> None:
        if not max_age > 0:
            raise ValueError("max_age must be positive")
        self.max_age = float(max_age)
        self.entries: deque[Sample] = deque()
        for s in entries:
            self.append(Sample(float(s[0]), float(s[1])))

    def append(self, sample: Sample) -> None:
        if self.entries and sample.timestamp < self.entries[-1].timestamp:
            raise ValueError("buffer entries must be appended in timestamp order")
        self.entries.append(sample)

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def values(self) -> list[float]:
        return [s.value for s in self.entries]


def expire(
    buffer: TimedBuffer,
    stats: RunningGaussian,
    now: float,
    mirror: Optional[RunningGaussian] = None,
) -> int:
    """Revert every buffered sample with ``timestamp <= now - max_age``.

    Reverts run oldest first and stop early, leaving the rest buffered, once
    ``stats`` is down to two samples. ``mirror`` (the model of the negated
    stream) forgets ``-value`` alongside. Returns the number of samples expired.
    """
    entries = buffer.entries
    cutoff = now - buffer.max_age
    removed = 0
    while entries and entries[0].timestamp <= cutoff:
        if stats.count <= MIN_COUNT_AFTER_REVERT:
            break
        value = entries.popleft().value
        stats.revert(value)
        if mirror is not None:
            mirror.revert(-value)
        removed += 1
    return removed

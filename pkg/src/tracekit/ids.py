"""Rotating ephemeral identifiers.

Every broadcast identifier is an independent 16-byte draw from the entropy
source.  There is deliberately no key schedule, no counter, and no seed
shared between identifiers: nothing about identifier k is computable from
identifier j.  The generator keeps no record of what it has handed out.
"""

from __future__ import annotations

import secrets
from dataclasses import dataclass
from typing import Callable

TEMPID_BYTES = 16

#: Rotation intervals (minutes) the protocol permits.
ALLOWED_INTERVALS = (5, 10, 15, 30)

MINUTES_PER_DAY = 1440


class EntropyError(RuntimeError):
    """The entropy source failed or returned a short read. Fatal: never
    fall back to a weaker source."""


class ConfigurationError(ValueError):
    """A configuration value is outside the permitted menu."""


@dataclass(frozen=True)
class TempID:
    """One ephemeral identifier, valid for a single rotation epoch."""

    bytes: bytes
    epoch_index: int
    day: int

    def __post_init__(self):
        if len(self.bytes) != TEMPID_BYTES:
            raise ValueError(f"TempID must be {TEMPID_BYTES} bytes, got {len(self.bytes)}")


@dataclass(frozen=True)
class RotationSchedule:
    interval_minutes: int

    @property
    def epochs_per_day(self) -> int:
        return MINUTES_PER_DAY // self.interval_minutes


def schedule_for_day(interval_minutes: int) -> RotationSchedule:
    """Build the day's rotation schedule for one of the permitted intervals."""
    if interval_minutes not in ALLOWED_INTERVALS:
        raise ConfigurationError(
            f"rotation interval must be one of {ALLOWED_INTERVALS}, got {interval_minutes}"
        )
    return RotationSchedule(interval_minutes=interval_minutes)


def current_epoch(clock_minutes_since_midnight: int, schedule: RotationSchedule) -> int:
    """Epoch index for a wall-clock minute within the day."""
    if not 0 <= clock_minutes_since_midnight < MINUTES_PER_DAY:
        raise ValueError(f"clock minute out of range: {clock_minutes_since_midnight}")
    return clock_minutes_since_midnight // schedule.interval_minutes


class TempIdGenerator:
    """Stateless identifier generator over an injected entropy source.

    The only attribute is the entropy callable itself; previously returned
    identifiers are never retained, so the read-set of a generate() call
    cannot include them (auditable in tests by inspecting the instance).

    The default source is the OS CSPRNG.  Simulations inject a seeded
    ``random.Random(seed).randbytes`` for reproducibility; the interface is
    identical.
    """

    __slots__ = ("_entropy",)

    def __init__(self, entropy: Callable[[int], bytes] = secrets.token_bytes):
        self._entropy = entropy

    def generate(self, day: int, epoch_index: int) -> TempID:
        try:
            raw = self._entropy(TEMPID_BYTES)
        except Exception as exc:  # entropy exhaustion is fatal, never degrade
            raise EntropyError("entropy source failed") from exc
        if len(raw) != TEMPID_BYTES:
            raise EntropyError(
                f"entropy source returned {len(raw)} bytes, need {TEMPID_BYTES}"
            )
        return TempID(bytes=raw, epoch_index=epoch_index, day=day)

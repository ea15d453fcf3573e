"""Single-use upload credentials handed out in two halves.

The first half is passed in person during treatment, the second by
telephone once the laboratory confirms a positive result.  The full code is
valid only during the telephone call, can be consumed exactly once, and the
registry never stores any patient identity next to a record: the
patient-to-code link lives with the doctor and stays outside this system.
"""

from __future__ import annotations

import secrets
import threading
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable

#: Digits per half; 6+6 is phone-dictation friendly.
DEFAULT_HALF_DIGITS = 6

DEFAULT_WINDOW_MINUTES = 15


class TanState(Enum):
    ISSUED = "Issued"
    HALF_A_HANDED_OVER = "HalfAHandedOver"
    ACTIVATED = "Activated"
    CONSUMED = "Consumed"
    DEACTIVATED = "Deactivated"


TERMINAL_STATES = {TanState.CONSUMED, TanState.DEACTIVATED}


class TanStateError(RuntimeError):
    """Operation applied in a state the protocol does not allow."""


class LabResultRequired(RuntimeError):
    """The second half may only be released after a positive lab result."""


@dataclass
class TanRecord:
    half_a: str
    half_b: str
    state: TanState = TanState.ISSUED
    activation_window: tuple | None = None  # (start, end) sim minutes

    @property
    def full_code(self) -> str:
        return self.half_a + self.half_b


def _random_half(entropy: Callable[[int], int], digits: int) -> str:
    return str(entropy(10**digits)).zfill(digits)


@dataclass
class TanRegistry:
    """All issued records, keyed by full code.

    ``validate_and_consume`` is linearizable: two racing validations of the
    same code yield exactly one accept.  The attempt log records times and
    outcomes only, never identities.
    """

    half_digits: int = DEFAULT_HALF_DIGITS
    records: dict = field(default_factory=dict)
    issuance_log: list = field(default_factory=list)
    attempt_log: list = field(default_factory=list)
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    @property
    def code_space(self) -> int:
        return 10 ** (2 * self.half_digits)

    def active_count(self) -> int:
        return sum(1 for r in self.records.values() if r.state is TanState.ACTIVATED)


def issue_batch(registry: TanRegistry, count: int, entropy: Callable[[int], int] = secrets.randbelow) -> list:
    """Issue ``count`` fresh records with independently random halves.

    Collisions on the full code are regenerated internally; the returned
    batch never contains duplicates.
    """
    if count < 1:
        raise ValueError("batch size must be at least 1")
    batch = []
    with registry._lock:
        for _ in range(count):
            while True:
                rec = TanRecord(
                    half_a=_random_half(entropy, registry.half_digits),
                    half_b=_random_half(entropy, registry.half_digits),
                )
                if rec.full_code not in registry.records:
                    break
            registry.records[rec.full_code] = rec
            batch.append(rec)
        registry.issuance_log.append(("issue", count))
    return batch


def hand_over_half_a(record: TanRecord) -> TanRecord:
    """In-person hand-over of the first half during treatment."""
    if record.state is not TanState.ISSUED:
        raise TanStateError(f"cannot hand over half A in state {record.state.value}")
    record.state = TanState.HALF_A_HANDED_OVER
    return record


def release_half_b(record: TanRecord, now: int, call_duration_minutes: int = DEFAULT_WINDOW_MINUTES,
                   lab_positive: bool = False) -> TanRecord:
    """Telephone release of the second half after a positive lab result.

    Activates the record for the duration of the call only.
    """
    if not lab_positive:
        raise LabResultRequired("refusing release without a positive lab result")
    if record.state is not TanState.HALF_A_HANDED_OVER:
        raise TanStateError(f"cannot release half B in state {record.state.value}")
    record.state = TanState.ACTIVATED
    record.activation_window = (now, now + call_duration_minutes)
    return record


def validate_and_consume(registry: TanRegistry, full_code: str, now: int) -> bool:
    """Accept iff the code exists, is activated, and the call window is open.

    A successful validation consumes the record; rejection is a value, not
    an error. Every attempt is logged (time and outcome only).
    """
    with registry._lock:
        rec = registry.records.get(full_code)
        ok = (
            rec is not None
            and rec.state is TanState.ACTIVATED
            and rec.activation_window is not None
            and rec.activation_window[0] <= now <= rec.activation_window[1]
        )
        if ok:
            rec.state = TanState.CONSUMED
        registry.attempt_log.append((now, ok))
    return ok


def deactivate(record: TanRecord) -> TanRecord:
    """Doctor-side deactivation after the call.

    Deactivating a consumed record is a no-op: the upload already happened.
    """
    if record.state is TanState.CONSUMED:
        return record
    record.state = TanState.DEACTIVATED
    record.activation_window = None
    return record

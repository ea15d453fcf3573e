"""Client-side storage: own sent identifiers and foreign contact events.

The two containers are deliberately separate types with no shared state.
Nothing in this module reads both; only the exposure/upload orchestration
layer ever holds the two side by side.

The own-ID ledger shuffles its physical storage order on insert, so the
creation order of identifiers cannot be recovered from a dump of the
container.  An append-only integrity log records exports and purges; it is
excluded from the post-match wipe so that the export history stays provable.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field

from . import wire
from .ids import TEMPID_BYTES, TempID

#: Minutes of silence after which an observation stream closes the event.
DEFAULT_GAP_MINUTES = 5

DEFAULT_RETENTION_DAYS = 14


class DuplicateSlotError(ValueError):
    """One identifier per (day, epoch) slot; a second insert is a bug."""


@dataclass
class ContactEvent:
    """Aggregated sighting of one foreign identifier."""

    foreign_tempid: bytes
    first_seen: int  # sim minute
    duration_minutes: int
    rssi_profile: list
    day: int

    @property
    def last_seen(self) -> int:
        return self.first_seen + self.duration_minutes - 1

    def mean_rssi(self) -> float:
        """Mean of the signal profile, cached while the profile is stable."""
        n = len(self.rssi_profile)
        cache = getattr(self, "_mean_cache", None)
        if cache is None or cache[0] != n:
            value = sum(self.rssi_profile) / n if n else float("nan")
            object.__setattr__(self, "_mean_cache", (n, value))
            return value
        return cache[1]

    def to_record(self) -> bytes:
        head = self.foreign_tempid
        head += self.first_seen.to_bytes(4, "big")
        head += self.duration_minutes.to_bytes(4, "big")
        head += self.day.to_bytes(2, "big")
        body = b"".join(int(round(r)).to_bytes(2, "big", signed=True) for r in self.rssi_profile)
        return head + body


@dataclass
class OwnIdLedger:
    """Shuffled store of the client's own broadcast identifiers."""

    rng: random.Random = field(default_factory=random.Random)
    entries: list = field(default_factory=list)  # (TempID, day, epoch_index)
    integrity_log: list = field(default_factory=list)
    _slots: set = field(default_factory=set)


@dataclass
class ForeignStore:
    """Received foreign contact events. Never holds own identifiers."""

    gap_minutes: int = DEFAULT_GAP_MINUTES
    events: list = field(default_factory=list)
    open_events: dict = field(default_factory=dict)  # id bytes -> ContactEvent
    dropped_frames: int = 0


def record_own(ledger: OwnIdLedger, tempid: TempID, day: int, epoch: int) -> None:
    """Insert an own identifier at a random storage position."""
    slot = (day, epoch)
    if slot in ledger._slots:
        raise DuplicateSlotError(f"slot {slot} already holds an identifier")
    ledger._slots.add(slot)
    pos = ledger.rng.randint(0, len(ledger.entries))
    ledger.entries.insert(pos, (tempid, day, epoch))


def observe_beacon(store: ForeignStore, foreign_token: bytes, rssi: float, now: int) -> None:
    """Process one received beacon frame at sim minute ``now``."""
    observe_span(store, foreign_token, rssi, now, 1)


def observe_span(store: ForeignStore, foreign_token: bytes, rssi: float, start: int, n_minutes: int) -> None:
    """Process ``n_minutes`` consecutive per-minute sightings at constant RSSI.

    Equivalent to ``n_minutes`` calls to :func:`observe_beacon` at minutes
    start .. start+n-1 (property-tested); exists because the simulator's
    geometry is piecewise constant per rotation epoch.
    """
    if n_minutes < 1:
        raise ValueError("span must cover at least one minute")
    try:
        id_bytes = wire.decode_token(foreign_token)
    except wire.DecodeError:
        store.dropped_frames += 1
        return
    ev = store.open_events.get(id_bytes)
    if ev is not None and start - ev.last_seen > store.gap_minutes:
        # silence exceeded the sampling gap: close and start fresh
        store.events.append(ev)
        ev = None
    if ev is None:
        ev = ContactEvent(
            foreign_tempid=id_bytes,
            first_seen=start,
            duration_minutes=n_minutes,
            rssi_profile=[rssi] * n_minutes,
            day=start // 1440,
        )
        store.open_events[id_bytes] = ev
    else:
        extra = (start + n_minutes - 1) - ev.last_seen
        if extra > 0:
            ev.duration_minutes += extra
            ev.rssi_profile.extend([rssi] * extra)


def close_open_events(store: ForeignStore, now: int) -> None:
    """Close any open event whose silence now exceeds the sampling gap."""
    for id_bytes in list(store.open_events):
        ev = store.open_events[id_bytes]
        if now - ev.last_seen > store.gap_minutes:
            store.events.append(ev)
            del store.open_events[id_bytes]


def all_events(store: ForeignStore) -> list:
    """Closed plus still-open events, for matching."""
    return store.events + list(store.open_events.values())


def purge_expired(container, now_day: int, retention_days: int = DEFAULT_RETENTION_DAYS):
    """Drop everything older than the retention window.

    Items from day d survive iff d >= now_day - retention_days.
    """
    if retention_days <= 0:
        raise ValueError("retention_days must be positive")
    cutoff = now_day - retention_days
    if isinstance(container, OwnIdLedger):
        removed = [e for e in container.entries if e[1] < cutoff]
        container.entries = [e for e in container.entries if e[1] >= cutoff]
        for _, day, epoch in removed:
            container._slots.discard((day, epoch))
        container.integrity_log.append(("purge", now_day, len(removed)))
    elif isinstance(container, ForeignStore):
        container.events = [e for e in container.events if e.day >= cutoff]
        for k in list(container.open_events):
            if container.open_events[k].day < cutoff:
                del container.open_events[k]
    else:
        raise TypeError(f"cannot purge {type(container).__name__}")
    return container


def export_health_tempids(ledger: OwnIdLedger, window_days: int, now_day: int) -> list:
    """Own identifiers from the last ``window_days`` days, for upload after a
    positive diagnosis. Every export is recorded in the integrity log."""
    cutoff = now_day - window_days
    out = [(t, day) for (t, day, _epoch) in ledger.entries if day >= cutoff]
    ledger.integrity_log.append(("export", now_day, len(out)))
    return out


def wipe_after_match(ledger: OwnIdLedger, store: ForeignStore) -> bool:
    """Erase both containers after a positive match classification.

    The integrity log is deliberately retained: exports must stay provable
    after the wipe. Returns the uninstall-eligible flag."""
    ledger.entries.clear()
    ledger._slots.clear()
    store.events.clear()
    store.open_events.clear()
    ledger.integrity_log.append(("wipe", None, 0))
    return True


def serialize_foreign_store(store: ForeignStore) -> bytes:
    """Snapshot of the foreign store as length-prefixed records."""
    return wire.encode_records(ev.to_record() for ev in all_events(store))


def serialize_own_ledger(ledger: OwnIdLedger) -> bytes:
    """Snapshot of the own-ID ledger, in physical (shuffled) storage order."""
    recs = []
    for tempid, day, epoch in ledger.entries:
        recs.append(tempid.bytes + day.to_bytes(2, "big") + epoch.to_bytes(2, "big"))
    return wire.encode_records(recs)

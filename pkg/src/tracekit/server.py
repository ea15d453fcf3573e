"""The publication server and its anonymizing separation procedure.

On an accepted upload the server keeps exactly three things: the identifier
bytes with their publication day, the retention bookkeeping, and a hash of
the revocation credential keyed to the uploaded set.  Transport metadata is
dropped in-flight, identifiers are re-sorted canonically, and upload batches
merge into one global set, so the persistent state is a deterministic
function of upload *content* alone — two peers uploading the same set, or
the same uploads in any order, leave byte-identical state.

The revocation credential is derived from the uploaded set itself rather
than drawn fresh, which is what makes the state content-deterministic; only
the uploader (who knows the exact set) can reproduce it.
"""

from __future__ import annotations

import hashlib
import struct
import threading
from dataclasses import dataclass, field

from . import tan, wire
from .ids import TEMPID_BYTES

DEFAULT_RETENTION_DAYS = 14

_CREDENTIAL_TAG = b"tracekit.revocation.v1"
STATE_VERSION = 0x01


@dataclass
class NiidStore:
    retention_days: int = DEFAULT_RETENTION_DAYS
    published: dict = field(default_factory=dict)  # id bytes -> publication day
    revoked: dict = field(default_factory=dict)  # id bytes -> revocation day
    groups: dict = field(default_factory=dict)  # credential hash -> frozenset of id bytes


def derive_credential(entries) -> bytes:
    """32-byte revocation credential for an uploaded (day, id) set."""
    canon = b"".join(struct.pack(">H", day) + id_bytes for day, id_bytes in sorted(entries))
    return hashlib.sha256(_CREDENTIAL_TAG + canon).digest()


class TraceServer:
    """Thread-safe upload acceptance, publication, revocation, retention."""

    def __init__(self, registry: tan.TanRegistry | None = None,
                 retention_days: int = DEFAULT_RETENTION_DAYS):
        self.registry = registry if registry is not None else tan.TanRegistry()
        self.store = NiidStore(retention_days=retention_days)
        self.backups = []  # (day, NiidStore snapshot)
        self.count_log = []  # integrity log: counts and days only, never IDs
        self._lock = threading.Lock()

    # -- upload ----------------------------------------------------------

    def accept_upload(self, upload_bytes: bytes, transport_meta, now_minute: int):
        """Validate the TAN, run the separation procedure, publish.

        Returns (accepted, revocation_credential). On any reject the store
        is left byte-identical to before. ``transport_meta`` exists only for
        the duration of this call and is never written anywhere.
        """
        del transport_meta  # discarded by design; see module docstring
        try:
            msg = wire.decode_upload(upload_bytes)
        except wire.DecodeError:
            return False, None
        days = {day for day, _ in msg.entries}
        if len(days) > self.store.retention_days + 1:
            return False, None
        if not tan.validate_and_consume(self.registry, msg.tan, now_minute):
            return False, None
        today = now_minute // 1440
        credential = derive_credential(msg.entries)
        cred_hash = hashlib.sha256(credential).digest()
        with self._lock:
            for _day, id_bytes in msg.entries:
                if id_bytes not in self.store.published and id_bytes not in self.store.revoked:
                    self.store.published[id_bytes] = today
            ids = frozenset(id_bytes for _day, id_bytes in msg.entries)
            self.store.groups[cred_hash] = self.store.groups.get(cred_hash, frozenset()) | ids
            self.count_log.append(("upload", today, len(msg.entries)))
        return True, credential

    # -- publication -----------------------------------------------------

    def publish_delta(self, since_day: int):
        """Published identifiers from ``since_day`` on, plus the current
        revocation list; both lexicographically sorted."""
        with self._lock:
            niids = sorted(b for b, d in self.store.published.items() if d >= since_day)
            revoked = sorted(self.store.revoked)
        return niids, revoked

    def publish_delta_message(self, since_day: int, today: int) -> bytes:
        niids, revoked = self.publish_delta(since_day)
        return wire.encode_niid_list(today, niids, revoked)

    def publish_statistics(self):
        """Aggregates only; no individual identifier appears."""
        with self._lock:
            hist = {}
            for day in self.store.published.values():
                hist[day] = hist.get(day, 0) + 1
            return {
                "total_niids": len(self.store.published),
                "day_histogram": {str(k): v for k, v in sorted(hist.items())},
            }

    # -- revocation ------------------------------------------------------

    def revoke(self, credential: bytes, now_day: int) -> bool:
        """Move the credential's upload group to the revocation list.

        Unknown credential: reject, no state change. Replay: idempotent.
        """
        cred_hash = hashlib.sha256(credential).digest()
        with self._lock:
            group = self.store.groups.get(cred_hash)
            if group is None:
                return False
            for id_bytes in group:
                day = self.store.published.pop(id_bytes, None)
                if day is not None:
                    self.store.revoked[id_bytes] = now_day
            self.count_log.append(("revoke", now_day, len(group)))
            return True

    # -- retention -------------------------------------------------------

    def retention_sweep(self, now_day: int) -> None:
        """Delete everything past retention, including backup snapshots."""
        with self._lock:
            self._sweep_store(self.store, now_day)
            self._sweep_backups(now_day)
            self.count_log.append(("sweep", now_day, 0))

    def _sweep_store(self, store: NiidStore, now_day: int) -> None:
        cutoff = now_day - store.retention_days
        store.published = {b: d for b, d in store.published.items() if d >= cutoff}
        store.revoked = {b: d for b, d in store.revoked.items() if d >= cutoff}
        alive = set(store.published) | set(store.revoked)
        groups = {}
        for h, ids in store.groups.items():
            kept = ids & alive
            if kept:
                groups[h] = kept
        store.groups = groups

    def _sweep_backups(self, now_day: int) -> None:
        # deletion obligations extend to secondary storage
        for _day, snap in self.backups:
            self._sweep_store(snap, now_day)

    def make_backup(self, now_day: int) -> None:
        with self._lock:
            snap = NiidStore(
                retention_days=self.store.retention_days,
                published=dict(self.store.published),
                revoked=dict(self.store.revoked),
                groups=dict(self.store.groups),
            )
            self.backups.append((now_day, snap))

    def backup_blobs(self):
        """Serialized backup snapshots, as they would rest on disk."""
        with self._lock:
            return [(day, serialize_state(snap)) for day, snap in self.backups]

    # -- introspection ---------------------------------------------------

    def canonical_state_bytes(self) -> bytes:
        with self._lock:
            return serialize_state(self.store)


def serialize_state(store: NiidStore) -> bytes:
    """Canonical serialization: a pure function of store content, with no
    trace of upload order, batch arrival, or transport metadata."""
    out = bytearray([STATE_VERSION])
    out += struct.pack(">H", store.retention_days)
    out += struct.pack(">I", len(store.published))
    for id_bytes in sorted(store.published):
        out += id_bytes + struct.pack(">H", store.published[id_bytes])
    out += struct.pack(">I", len(store.revoked))
    for id_bytes in sorted(store.revoked):
        out += id_bytes + struct.pack(">H", store.revoked[id_bytes])
    out += struct.pack(">I", len(store.groups))
    for h in sorted(store.groups):
        ids = sorted(store.groups[h])
        out += h + struct.pack(">I", len(ids))
        for id_bytes in ids:
            out += id_bytes
    return bytes(out)


def parse_state(blob: bytes) -> NiidStore:
    if not blob or blob[0] != STATE_VERSION:
        raise wire.DecodeError("unknown state version")
    off = 1
    (retention,) = struct.unpack_from(">H", blob, off)
    off += 2
    store = NiidStore(retention_days=retention)
    (n,) = struct.unpack_from(">I", blob, off)
    off += 4
    for _ in range(n):
        id_bytes = bytes(blob[off : off + TEMPID_BYTES])
        (day,) = struct.unpack_from(">H", blob, off + TEMPID_BYTES)
        store.published[id_bytes] = day
        off += TEMPID_BYTES + 2
    (n,) = struct.unpack_from(">I", blob, off)
    off += 4
    for _ in range(n):
        id_bytes = bytes(blob[off : off + TEMPID_BYTES])
        (day,) = struct.unpack_from(">H", blob, off + TEMPID_BYTES)
        store.revoked[id_bytes] = day
        off += TEMPID_BYTES + 2
    (n,) = struct.unpack_from(">I", blob, off)
    off += 4
    for _ in range(n):
        h = bytes(blob[off : off + 32])
        (k,) = struct.unpack_from(">I", blob, off + 32)
        off += 36
        ids = frozenset(bytes(blob[off + i * TEMPID_BYTES : off + (i + 1) * TEMPID_BYTES]) for i in range(k))
        store.groups[h] = ids
        off += k * TEMPID_BYTES
    if off != len(blob):
        raise wire.DecodeError("trailing bytes in state blob")
    return store

"""Executable threat scenarios run against servers, transcripts, and runs.

Each check comes with a shipped mutant fixture (an intentionally broken
implementation) that the check must flag Vulnerable; a check that cannot
fail proves nothing.  Verdicts are deterministic given (seed, inputs).

Scenarios not expressible against this protocol surface (social coercion,
commercial MAC-address tracking, platform-level data derivation, radio
stack exploits) are covered in the threat-model section of the README
rather than by code.  Secondary-use queries are subsumed by the metadata
and linkage checks: a server that retains no transport metadata and holds
only mutually independent identifiers cannot answer a contact-graph query
in the first place.
"""

from __future__ import annotations

import hashlib
import random
from dataclasses import dataclass
from enum import Enum

from scipy.stats import binomtest

from . import server as server_mod, tan, wire
from .ids import TEMPID_BYTES, TempIdGenerator


class AttackId(str, Enum):
    A1 = "A1"
    A3 = "A3"
    A4 = "A4"
    A5 = "A5"
    C2 = "C2"
    MA3 = "MA3"


class Outcome(str, Enum):
    DEFENDED = "Defended"
    VULNERABLE = "Vulnerable"


@dataclass
class AttackVerdict:
    attack_id: AttackId
    outcome: Outcome
    metric: float
    description: str

    def to_dict(self):
        return {
            "attack": self.attack_id.value,
            "outcome": self.outcome.value,
            "metric": self.metric,
            "description": self.description,
        }


# ---------------------------------------------------------------------------
# Mutant fixtures
# ---------------------------------------------------------------------------

class PeerLoggingServer(server_mod.TraceServer):
    """Non-compliant: writes transport metadata into persistent state."""

    def __init__(self, *args, **kwargs):
        super().__init__(*args, **kwargs)
        self.peer_log = []

    def accept_upload(self, upload_bytes, transport_meta, now_minute):
        ok, cred = super().accept_upload(upload_bytes, transport_meta, now_minute)
        if ok:
            self.peer_log.append((str(transport_meta), now_minute))
        return ok, cred

    def canonical_state_bytes(self):
        base = super().canonical_state_bytes()
        extra = b"".join(f"{peer}@{t}".encode() for peer, t in self.peer_log)
        return base + extra


class NoTanCheckServer(server_mod.TraceServer):
    """Non-compliant: publishes uploads without validating the TAN."""

    def accept_upload(self, upload_bytes, transport_meta, now_minute):
        try:
            msg = wire.decode_upload(upload_bytes)
        except wire.DecodeError:
            return False, None
        today = now_minute // 1440
        credential = server_mod.derive_credential(msg.entries)
        cred_hash = hashlib.sha256(credential).digest()
        with self._lock:
            for _day, id_bytes in msg.entries:
                self.store.published.setdefault(id_bytes, today)
            ids = frozenset(b for _d, b in msg.entries)
            self.store.groups[cred_hash] = self.store.groups.get(cred_hash, frozenset()) | ids
        return True, credential


class NoBackupPurgeServer(server_mod.TraceServer):
    """Non-compliant: retention sweep skips secondary storage."""

    def _sweep_backups(self, now_day):
        pass


class CounterTempIdGenerator:
    """Non-compliant: identifiers are a counter chain, id[k+1] = id[k] + 1."""

    def __init__(self, seed_bytes: bytes):
        self._next = int.from_bytes(seed_bytes, "big")

    def generate(self, day, epoch_index):
        from .ids import TempID

        raw = self._next.to_bytes(TEMPID_BYTES, "big")
        self._next = (self._next + 1) % (1 << (8 * TEMPID_BYTES))
        return TempID(bytes=raw, epoch_index=epoch_index, day=day)


# ---------------------------------------------------------------------------
# Helpers shared by checks
# ---------------------------------------------------------------------------

PEER_SENTINEL = "sentinel-peer-10.66.66.1"


def _activated_tan(registry: tan.TanRegistry, rng: random.Random, now: int) -> str:
    rec = tan.issue_batch(registry, 1, entropy=rng.randrange)[0]
    tan.hand_over_half_a(rec)
    tan.release_half_b(rec, now, 30, lab_positive=True)
    return rec.full_code


def _random_entries(rng: random.Random, n: int, day: int):
    return [(day, rng.randbytes(TEMPID_BYTES)) for _ in range(n)]


# ---------------------------------------------------------------------------
# Checks
# ---------------------------------------------------------------------------

def check_A3_metadata(server_factory, seed: int = 0) -> AttackVerdict:
    """Transport-metadata retention: identical uploads from different peers,
    and the same uploads in permuted order, must leave byte-identical
    persistent state; no peer sentinel may survive in any snapshot."""
    rng = random.Random(seed)
    batches = [_random_entries(rng, 20, day=3), _random_entries(rng, 15, day=4)]

    def run(order, peers):
        srv = server_factory()
        for idx, peer in zip(order, peers):
            code = _activated_tan(srv.registry, random.Random(seed + idx), now=5000)
            body = wire.encode_upload(code, batches[idx])
            ok, _ = srv.accept_upload(body, (peer, 5000 + idx), 5000)
            assert ok, "compliant upload must be accepted"
        return srv.canonical_state_bytes()

    state_a = run([0, 1], [PEER_SENTINEL, "10.0.0.2"])
    state_b = run([0, 1], ["192.168.7.7", "10.9.9.9"])
    state_c = run([1, 0], ["10.9.9.9", "192.168.7.7"])

    problems = []
    if state_a != state_b:
        problems.append("state depends on peer identity")
    if state_b != state_c:
        problems.append("state depends on upload order")
    if PEER_SENTINEL.encode() in state_a:
        problems.append("peer sentinel present in snapshot")
    if problems:
        return AttackVerdict(AttackId.A3, Outcome.VULNERABLE, float(len(problems)),
                             "; ".join(problems))
    return AttackVerdict(AttackId.A3, Outcome.DEFENDED, 0.0,
                         "state is a function of upload content only")


def linkage_accuracy(ids_by_user: dict, trials: int, seed: int) -> float:
    """Nearest-anchor linkage adversary.

    Each trial takes one identifier of a random user and one anchor
    identifier per user, then links by minimal absolute 128-bit distance.
    On independent uniform identifiers this succeeds with probability
    exactly 1/n_users; any arithmetic relationship between a user's
    identifiers pushes it toward 1.
    """
    rng = random.Random(seed)
    users = sorted(ids_by_user)
    as_int = {u: [int.from_bytes(b, "big") for b in ids_by_user[u]] for u in users}
    hits = 0
    for _ in range(trials):
        target_user = rng.choice(users)
        pool = as_int[target_user]
        ti = rng.randrange(len(pool))
        target = pool[ti]
        best_user, best_dist = None, None
        for u in users:
            candidates = as_int[u]
            choices = [i for i in range(len(candidates)) if u != target_user or i != ti]
            anchor = candidates[rng.choice(choices)]
            d = abs(anchor - target)
            if best_dist is None or d < best_dist:
                best_user, best_dist = u, d
        if best_user == target_user:
            hits += 1
    return hits / trials


def check_MA3_linkage(ids_by_user: dict, trials: int = 10_000, seed: int = 0,
                      p_threshold: float = 0.01) -> AttackVerdict:
    """Identifier unlinkability: the linkage adversary must do no better
    than the 1/n baseline (two-sided binomial test)."""
    n_users = len(ids_by_user)
    acc = linkage_accuracy(ids_by_user, trials, seed)
    p = binomtest(round(acc * trials), trials, 1.0 / n_users).pvalue
    if p > p_threshold:
        return AttackVerdict(AttackId.MA3, Outcome.DEFENDED, acc,
                             f"linkage accuracy {acc:.4f} vs baseline {1.0 / n_users:.4f} (p={p:.3f})")
    return AttackVerdict(AttackId.MA3, Outcome.VULNERABLE, acc,
                         f"linkage accuracy {acc:.4f} beats baseline {1.0 / n_users:.4f} (p={p:.2e})")


def check_C2_injection(server_factory, seed: int = 0, guesses: int = 1000) -> AttackVerdict:
    """False infection injection: no-TAN, random-guess, replayed, and
    expired-window uploads must all be rejected with no state change."""
    rng = random.Random(seed)
    srv = server_factory()
    entries = _random_entries(rng, 5, day=2)
    baseline = srv.canonical_state_bytes()
    accepted = 0

    # strategy: no TAN at all (malformed zero TAN never issued)
    body = wire.encode_upload("0" * 12, entries)
    ok, _ = srv.accept_upload(body, ("evil", 1), 3000)
    accepted += ok

    # strategy: random guesses
    for _ in range(guesses):
        code = str(rng.randrange(10**12)).zfill(12)
        ok, _ = srv.accept_upload(wire.encode_upload(code, entries), ("evil", 1), 3000)
        accepted += ok

    # strategy: replay a consumed TAN
    code = _activated_tan(srv.registry, rng, now=3000)
    ok, _ = srv.accept_upload(wire.encode_upload(code, _random_entries(rng, 3, day=2)), ("ok", 1), 3000)
    assert ok, "legitimate upload must pass"
    after_legit = srv.canonical_state_bytes()
    ok, _ = srv.accept_upload(wire.encode_upload(code, entries), ("evil", 1), 3001)
    accepted += ok

    # strategy: expired activation window
    code = _activated_tan(srv.registry, rng, now=3000)
    ok, _ = srv.accept_upload(wire.encode_upload(code, entries), ("evil", 1), 3000 + 31)
    accepted += ok

    unchanged = srv.canonical_state_bytes() == after_legit
    if accepted == 0 and unchanged and baseline != after_legit:
        return AttackVerdict(AttackId.C2, Outcome.DEFENDED, 0.0,
                             "all injection strategies rejected without state change")
    return AttackVerdict(AttackId.C2, Outcome.VULNERABLE, float(accepted),
                         f"{accepted} injection uploads accepted or state drifted")


def check_A4_retention(server_factory, seed: int = 0, days: int = 30,
                       retention_days: int = 14) -> AttackVerdict:
    """Retention: after daily sweeps over a long horizon no item, including
    in backup snapshots, may exceed the retention age."""
    rng = random.Random(seed)
    srv = server_factory()
    for day in range(days):
        code = _activated_tan(srv.registry, rng, now=day * 1440)
        body = wire.encode_upload(code, _random_entries(rng, 4, day=day))
        srv.accept_upload(body, ("peer", day), day * 1440)
        srv.make_backup(day)
        srv.retention_sweep(day)
    now = days - 1
    max_age = -1
    stores = [srv.store] + [server_mod.parse_state(blob) for _day, blob in srv.backup_blobs()]
    for st in stores:
        for day in list(st.published.values()) + list(st.revoked.values()):
            max_age = max(max_age, now - day)
    if max_age <= retention_days:
        return AttackVerdict(AttackId.A4, Outcome.DEFENDED, float(max_age),
                             f"max item age {max_age}d across store and {len(srv.backups)} backups")
    return AttackVerdict(AttackId.A4, Outcome.VULNERABLE, float(max_age),
                         f"item of age {max_age}d survived sweeps (retention {retention_days}d)")


def check_A1_false_positive(report, recount_fpr: float | None = None) -> AttackVerdict:
    """Through-wall false positives. Informational: the protocol cannot see
    walls; the countermeasure is appealability (revocation plus corrected
    notification state), exercised separately."""
    fpr = report.fpr
    if recount_fpr is not None and abs(recount_fpr - fpr) > 1e-12:
        return AttackVerdict(AttackId.A1, Outcome.VULNERABLE, fpr,
                             f"reported FPR {fpr} disagrees with recount {recount_fpr}")
    desc = f"false-positive rate {fpr:.4f} under staged wall geometry"
    return AttackVerdict(AttackId.A1, Outcome.DEFENDED if fpr == 0 else Outcome.VULNERABLE,
                         fpr, desc)


def check_A5_integrity(reports_by_policy: dict) -> AttackVerdict:
    """Post-diagnosis data integrity: compares missed epidemiologically
    valid contacts across the three behavior policies. Informational."""
    missed = {p: r.n_missed_valid_contacts for p, r in reports_by_policy.items()}
    desc = "missed valid contacts per policy: " + ", ".join(
        f"{p}={m}" for p, m in sorted(missed.items())
    )
    worst = max(missed.values()) if missed else 0
    return AttackVerdict(AttackId.A5, Outcome.DEFENDED if worst == 0 else Outcome.VULNERABLE,
                         float(worst), desc)


def generate_user_ids(n_users: int, ids_per_user: int, seed: int,
                      generator_factory=None) -> dict:
    """Published-identifier corpus with ground-truth ownership, for the
    linkage check. The default factory is the compliant generator."""
    rng = random.Random(seed)
    ids_by_user = {}
    for u in range(n_users):
        if generator_factory is None:
            gen = TempIdGenerator(rng.randbytes)
        else:
            gen = generator_factory(rng)
        ids_by_user[u] = [gen.generate(0, k).bytes for k in range(ids_per_user)]
    return ids_by_user

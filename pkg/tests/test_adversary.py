import random

from tracekit import adversary, server, sim
from tracekit.adversary import AttackId, Outcome
from tracekit.ids import TempIdGenerator


def test_metadata_check_passes_compliant_server():
    verdict = adversary.check_A3_metadata(server.TraceServer, seed=1)
    assert verdict.outcome is Outcome.DEFENDED
    assert verdict.attack_id is AttackId.A3


def test_metadata_check_flags_peer_logging_mutant():
    verdict = adversary.check_A3_metadata(adversary.PeerLoggingServer, seed=1)
    assert verdict.outcome is Outcome.VULNERABLE
    assert "peer" in verdict.description or "order" in verdict.description


def test_linkage_check_passes_compliant_generator():
    ids = adversary.generate_user_ids(50, 96, seed=3)
    verdict = adversary.check_MA3_linkage(ids, trials=10_000, seed=4)
    assert verdict.outcome is Outcome.DEFENDED
    assert abs(verdict.metric - 1 / 50) < 0.02


def test_linkage_check_flags_counter_mutant():
    ids = adversary.generate_user_ids(
        50, 96, seed=5,
        generator_factory=lambda rng: adversary.CounterTempIdGenerator(rng.randbytes(16)),
    )
    verdict = adversary.check_MA3_linkage(ids, trials=2_000, seed=6)
    assert verdict.outcome is Outcome.VULNERABLE
    assert verdict.metric > 0.9


def test_linkage_accuracy_deterministic():
    ids = adversary.generate_user_ids(10, 12, seed=7)
    a = adversary.linkage_accuracy(ids, trials=500, seed=8)
    b = adversary.linkage_accuracy(ids, trials=500, seed=8)
    assert a == b


def test_injection_check_passes_compliant_server():
    verdict = adversary.check_C2_injection(server.TraceServer, seed=9)
    assert verdict.outcome is Outcome.DEFENDED
    assert verdict.metric == 0.0


def test_injection_check_flags_no_tan_mutant():
    verdict = adversary.check_C2_injection(adversary.NoTanCheckServer, seed=9)
    assert verdict.outcome is Outcome.VULNERABLE
    assert verdict.metric > 0


def test_retention_check_passes_compliant_server():
    verdict = adversary.check_A4_retention(server.TraceServer, seed=10)
    assert verdict.outcome is Outcome.DEFENDED
    assert verdict.metric <= 14


def test_retention_check_flags_backup_skipping_mutant():
    verdict = adversary.check_A4_retention(adversary.NoBackupPurgeServer, seed=10)
    assert verdict.outcome is Outcome.VULNERABLE
    assert verdict.metric > 14


def test_counter_mutant_shape():
    gen = adversary.CounterTempIdGenerator(b"\x00" * 15 + b"\x09")
    a = gen.generate(0, 0)
    b = gen.generate(0, 1)
    assert int.from_bytes(b.bytes, "big") - int.from_bytes(a.bytes, "big") == 1


def test_false_positive_check_consistency_guard():
    report, _ = sim.run(sim.WorldConfig(n_agents=4, adoption_rate=1.0, sim_days=3,
                                        arena_size_m=30.0, rng_seed=1))
    ok = adversary.check_A1_false_positive(report, recount_fpr=report.fpr)
    assert ok.outcome in (Outcome.DEFENDED, Outcome.VULNERABLE)
    bad = adversary.check_A1_false_positive(report, recount_fpr=report.fpr + 0.5)
    assert bad.outcome is Outcome.VULNERABLE


def test_integrity_check_reports_policy_gap():
    class Fake:
        def __init__(self, missed):
            self.n_missed_valid_contacts = missed

    verdict = adversary.check_A5_integrity({"KeepRunning": Fake(0), "Uninstall": Fake(3)})
    assert verdict.metric == 3.0
    assert "Uninstall=3" in verdict.description


def test_verdict_serialization():
    verdict = adversary.check_A3_metadata(server.TraceServer, seed=11)
    doc = verdict.to_dict()
    assert doc["attack"] == "A3"
    assert doc["outcome"] in ("Defended", "Vulnerable")


def test_checks_deterministic_given_seed():
    v1 = adversary.check_C2_injection(server.TraceServer, seed=12)
    v2 = adversary.check_C2_injection(server.TraceServer, seed=12)
    assert v1.to_dict() == v2.to_dict()

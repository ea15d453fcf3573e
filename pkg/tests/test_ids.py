import random

import numpy as np
import pytest
from scipy.stats import binomtest, chisquare

from tracekit import adversary
from tracekit.ids import (
    ConfigurationError,
    EntropyError,
    TempID,
    TempIdGenerator,
    current_epoch,
    schedule_for_day,
)


def test_tempid_is_16_bytes():
    with pytest.raises(ValueError):
        TempID(bytes=b"\x00" * 15, epoch_index=0, day=0)
    tid = TempID(bytes=b"\x00" * 16, epoch_index=3, day=1)
    assert len(tid.bytes) == 16


def test_consecutive_ids_distinct():
    gen = TempIdGenerator()
    a = gen.generate(0, 0)
    b = gen.generate(0, 1)
    assert a.bytes != b.bytes


def test_bit_uniformity_three_sigma():
    # per-bit frequency over 1e5 seeded draws; 3 sigma around 0.5
    gen = TempIdGenerator(random.Random(7).randbytes)
    n = 100_000
    raw = b"".join(gen.generate(0, i % 96).bytes for i in range(n))
    bits = np.unpackbits(np.frombuffer(raw, dtype=np.uint8).reshape(n, 16), axis=1)
    freq = bits.mean(axis=0)
    sigma = 0.5 / np.sqrt(n)
    assert np.all(np.abs(freq - 0.5) <= 3 * sigma)
    # chi-square uniformity oracle over per-bit one-counts
    ones = bits.sum(axis=0)
    stat, p = chisquare(np.concatenate([ones, n - ones]))
    assert p > 0.001


def test_generator_keeps_no_history():
    # whitebox audit: the generator's only state is the entropy callable
    gen = TempIdGenerator()
    for i in range(10):
        gen.generate(0, i)
    assert gen.__slots__ == ("_entropy",)
    assert not hasattr(gen, "__dict__")


def test_entropy_exhaustion_is_fatal():
    def broken(_n):
        raise OSError("entropy pool empty")

    with pytest.raises(EntropyError):
        TempIdGenerator(broken).generate(0, 0)
    with pytest.raises(EntropyError):
        TempIdGenerator(lambda n: b"\x00" * (n - 1)).generate(0, 0)


@pytest.mark.parametrize("interval,epochs", [(5, 288), (10, 144), (15, 96), (30, 48)])
def test_schedule_menu(interval, epochs):
    assert schedule_for_day(interval).epochs_per_day == epochs


@pytest.mark.parametrize("interval", [7, 0, -5, 60, 1440])
def test_schedule_rejects_off_menu(interval):
    with pytest.raises(ConfigurationError):
        schedule_for_day(interval)


def test_current_epoch():
    sched = schedule_for_day(15)
    assert current_epoch(0, sched) == 0
    assert current_epoch(1439, sched) == 95
    assert current_epoch(37, sched) == 2  # floor(37/15)
    with pytest.raises(ValueError):
        current_epoch(1440, sched)
    with pytest.raises(ValueError):
        current_epoch(-1, sched)


def test_epoch_monotone_within_day():
    sched = schedule_for_day(10)
    values = [current_epoch(m, sched) for m in range(1440)]
    assert values == sorted(values)


def test_rotation_count_per_day():
    for interval in (5, 10, 15, 30):
        sched = schedule_for_day(interval)
        gen = TempIdGenerator(random.Random(1).randbytes)
        produced = {gen.generate(0, e).bytes for e in range(sched.epochs_per_day)}
        assert len(produced) == 1440 // interval


def test_blackbox_unlinkability():
    # grouping adversary over many users' published identifiers must sit at
    # the 1/N baseline (two-sided binomial test)
    rng = random.Random(11)
    ids_by_user = {
        u: [TempIdGenerator(rng.randbytes).generate(0, k).bytes for k in range(30)]
        for u in range(20)
    }
    trials = 10_000
    acc = adversary.linkage_accuracy(ids_by_user, trials=trials, seed=5)
    p = binomtest(round(acc * trials), trials, 1 / 20).pvalue
    assert p > 0.01

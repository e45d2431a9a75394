import numpy as np
import pytest

from crisisfilter.dedup import (
    DISTINCT,
    DUPLICATE,
    AnnotatedPair,
    DedupConfig,
    HashWindow,
    SnapshotError,
    tune_threshold,
)


def random_hashes(rng, n):
    return rng.integers(0, 2**64, size=n, dtype=np.uint64).tolist()


class TestCheckAndInsert:
    def test_empty_window_is_distinct(self):
        w = HashWindow(DedupConfig(threshold_d=10, capacity=5))
        d = w.check_and_insert(0xDEADBEEF, "a")
        assert d.verdict == DISTINCT
        assert len(w) == 1

    def test_exact_repost_is_duplicate(self):
        w = HashWindow(DedupConfig(threshold_d=10, capacity=5))
        w.check_and_insert(0xDEADBEEF, "a")
        d = w.check_and_insert(0xDEADBEEF, "b")
        assert d.verdict == DUPLICATE
        assert d.matched_id == "a"
        assert d.distance == 0
        assert len(w) == 1  # duplicates are not inserted

    def test_fifo_eviction_forgets_oldest(self):
        w = HashWindow(DedupConfig(threshold_d=2, capacity=3))
        hashes = [0x1, 0xF0, 0xF00000, 0xF0000000000]  # mutually far apart
        for i, h in enumerate(hashes):
            assert w.check_and_insert(h, f"h{i}").verdict == DISTINCT
        # h0 was evicted, so re-checking it is distinct again
        assert w.check_and_insert(0x1, "again").verdict == DISTINCT
        assert len(w) == 3

    def test_min_distance_match_oldest_tie(self):
        w = HashWindow(DedupConfig(threshold_d=10, capacity=10))
        w.check_and_insert(0b0111, "older")  # distance 3 from 0
        w.check_and_insert(0b1110000, "newer")  # distance 3 from 0
        d = w.check_and_insert(0, "probe")
        assert d.verdict == DUPLICATE
        assert d.matched_id == "older"
        assert d.distance == 3

    def test_duplicate_within_threshold_not_exact(self):
        w = HashWindow(DedupConfig(threshold_d=10, capacity=10))
        w.check_and_insert(0, "base")
        d = w.check_and_insert(0b11111, "near")  # distance 5
        assert d.verdict == DUPLICATE and d.distance == 5

    def test_beyond_threshold_is_distinct(self):
        w = HashWindow(DedupConfig(threshold_d=4, capacity=10))
        w.check_and_insert(0, "base")
        assert w.check_and_insert(0b11111, "far").verdict == DISTINCT


class TestQuery:
    def test_empty(self):
        w = HashWindow(DedupConfig())
        assert w.query(0x123, 10) == []

    def test_single_radius_zero(self):
        w = HashWindow(DedupConfig())
        w.check_and_insert(0x123, "a")
        assert w.query(0x123, 0) == [("a", 0)]

    def test_no_mutation(self):
        w = HashWindow(DedupConfig())
        w.check_and_insert(0x123, "a")
        w.query(0x124, 64)
        assert len(w) == 1

    def test_linear_vs_bktree_on_seeded_hashes(self):
        rng = np.random.default_rng(5)
        hashes = random_hashes(rng, 1000)
        lin = HashWindow.from_entries(
            [(h, f"i{i}") for i, h in enumerate(hashes)],
            DedupConfig(capacity=2000, engine="linear-scan"),
        )
        bkt = HashWindow.from_entries(
            [(h, f"i{i}") for i, h in enumerate(hashes)],
            DedupConfig(capacity=2000, engine="bk-tree"),
        )
        for probe in random_hashes(rng, 25):
            for radius in (5, 10, 28, 33):
                assert lin.query(probe, radius) == bkt.query(probe, radius)

    def test_ordering_distance_then_age(self):
        w = HashWindow(DedupConfig(threshold_d=0, capacity=10))
        w.check_and_insert(0b11, "d2-old")
        w.check_and_insert(0b111, "d3")
        w.check_and_insert(0b1100, "d2-new")
        got = w.query(0, 3)
        assert got == [("d2-old", 2), ("d2-new", 2), ("d3", 3)]


class TestEngineEquivalence:
    @pytest.mark.parametrize("capacity", [10, 1000])
    def test_decision_streams_identical(self, capacity):
        rng = np.random.default_rng(capacity)
        base = random_hashes(rng, 400)
        stream = []
        for i in range(3000):
            h = int(base[int(rng.integers(0, len(base)))])
            # mutate a few bits so near-duplicates appear
            for _ in range(int(rng.integers(0, 14))):
                h ^= 1 << int(rng.integers(0, 64))
            stream.append((h, f"img{i}"))
        lin = HashWindow(DedupConfig(threshold_d=10, capacity=capacity, engine="linear-scan"))
        bkt = HashWindow(DedupConfig(threshold_d=10, capacity=capacity, engine="bk-tree"))
        for h, image_id in stream:
            assert lin.check_and_insert(h, image_id) == bkt.check_and_insert(h, image_id)
        assert lin.entries() == bkt.entries()

    def test_window_never_exceeds_capacity(self):
        rng = np.random.default_rng(8)
        w = HashWindow(DedupConfig(threshold_d=0, capacity=50))
        hashes = random_hashes(rng, 300)
        for i, h in enumerate(hashes):
            w.check_and_insert(h, f"i{i}")
            assert len(w) <= 50
        kept = [h for h, _ in w.entries()]
        assert kept == hashes[-50:]  # exactly the most recent distinct hashes

    def test_replay_yields_all_duplicates(self):
        rng = np.random.default_rng(9)
        hashes = random_hashes(rng, 200)
        w = HashWindow(DedupConfig(threshold_d=10, capacity=1000))
        first = [w.check_and_insert(h, f"a{i}") for i, h in enumerate(hashes)]
        distinct_count = sum(1 for d in first if d.verdict == DISTINCT)
        second = [w.check_and_insert(h, f"b{i}") for i, h in enumerate(hashes)]
        assert all(d.verdict == DUPLICATE for d in second)
        assert len(w) == distinct_count


class TestSnapshot:
    def test_roundtrip_bytes_identical(self, tmp_path):
        rng = np.random.default_rng(12)
        w = HashWindow(DedupConfig(threshold_d=7, capacity=64))
        for i, h in enumerate(random_hashes(rng, 40)):
            w.check_and_insert(h, f"img-{i}")
        path = tmp_path / "win.cfhw"
        w.save(path)
        restored = HashWindow.load(path)
        assert restored.config.threshold_d == 7
        assert restored.config.capacity == 64
        assert restored.entries() == w.entries()
        assert restored.to_bytes() == w.to_bytes()

    def test_restored_window_same_verdicts(self, tmp_path):
        rng = np.random.default_rng(13)
        w = HashWindow(DedupConfig(threshold_d=10, capacity=100))
        for i, h in enumerate(random_hashes(rng, 60)):
            w.check_and_insert(h, f"img-{i}")
        path = tmp_path / "win.cfhw"
        w.save(path)
        restored = HashWindow.load(path, engine="bk-tree")
        for probe in random_hashes(rng, 40):
            assert w.check_and_insert(probe, "p") == restored.check_and_insert(probe, "p")

    def test_empty_roundtrip(self, tmp_path):
        w = HashWindow(DedupConfig())
        path = tmp_path / "empty.cfhw"
        w.save(path)
        assert HashWindow.load(path).entries() == []

    def test_bad_magic_rejected_with_position(self):
        with pytest.raises(SnapshotError, match="byte 0"):
            HashWindow.from_bytes(b"NOPE" + b"\x00" * 20)

    def test_truncated_record_rejected_with_position(self):
        w = HashWindow(DedupConfig(capacity=4))
        w.check_and_insert(0x1234, "some-image-id")
        data = w.to_bytes()
        with pytest.raises(SnapshotError, match="byte"):
            HashWindow.from_bytes(data[:-4])

    def test_bad_version_rejected(self):
        w = HashWindow(DedupConfig(capacity=4))
        data = bytearray(w.to_bytes())
        data[4] = 99
        with pytest.raises(SnapshotError, match="version"):
            HashWindow.from_bytes(bytes(data))


class TestTuneThreshold:
    def test_all_same_distance_zero(self):
        pairs = [AnnotatedPair(0, True)] * 10
        curve, best_d = tune_threshold(pairs, 2, 8)
        assert all(acc == 1.0 for _, acc in curve)
        assert best_d == 2  # smallest d on ties

    def test_perfect_separation_at_7(self):
        pairs = [AnnotatedPair(d, True) for d in range(0, 8)] + [
            AnnotatedPair(d, False) for d in range(8, 30)
        ]
        curve, best_d = tune_threshold(pairs, 0, 20)
        accs = dict(curve)
        assert accs[7] == 1.0
        assert best_d == 7

    def test_planted_overlap_around_10(self):
        # synthetic 1,100-pair set: same pairs fill 0..10 with a thin tail
        # at 11..13; different pairs sit at 14+ with a thicker 11..13 tail,
        # so accuracy climbs to d=10 and declines beyond it
        pairs = []
        for d in range(0, 11):
            pairs.extend([AnnotatedPair(d, True)] * 40)
        for d in range(11, 14):
            pairs.extend([AnnotatedPair(d, True)] * 4)
            pairs.extend([AnnotatedPair(d, False)] * 16)
        for i in range(600):
            pairs.append(AnnotatedPair(14 + i % 25, False))
        assert len(pairs) == 1100
        curve, best_d = tune_threshold(pairs, 0, 20)
        accs = dict(curve)
        # brute-force recount oracle
        for d, acc in curve:
            correct = sum(
                1
                for p in pairs
                if (p.is_same and p.distance <= d) or (not p.is_same and p.distance > d)
            )
            assert acc == correct / len(pairs)
        assert best_d == 10
        assert all(accs[d] <= accs[d + 1] for d in range(0, 10))
        assert all(accs[d] < accs[10] for d in range(11, 14))

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            tune_threshold([], 0, 10)

    def test_bad_range_rejected(self):
        with pytest.raises(ValueError):
            tune_threshold([AnnotatedPair(0, True)], 5, 3)


class TestConfig:
    def test_invalid_threshold(self):
        with pytest.raises(ValueError):
            DedupConfig(threshold_d=65)

    def test_invalid_capacity(self):
        with pytest.raises(ValueError):
            DedupConfig(capacity=0)

    def test_invalid_engine(self):
        with pytest.raises(ValueError):
            DedupConfig(engine="quantum")

"""De-duplication filter: a bounded FIFO window of recent hashes.

A `HashWindow` stores the hashes of the distinct images seen so far (up to
a fixed capacity, oldest evicted first) and answers Hamming-radius queries
against them. `check_and_insert` is the streaming entry point: a new hash
within `threshold_d` of a stored one is a duplicate and is NOT inserted;
anything else is distinct and enters the window.

Two interchangeable index engines back the window: a packed-array linear
scan with vectorized popcount (the default, and the correctness oracle)
and a BK-tree with triangle-inequality pruning for larger windows. Both
return identical decisions, including tie-breaks (closest match wins,
oldest entry on equal distance).
"""

from __future__ import annotations

import struct
from collections import deque
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .phash import popcount64
from .validation import check_hash64

__all__ = [
    "DISTINCT",
    "DUPLICATE",
    "DedupConfig",
    "DedupDecision",
    "AnnotatedPair",
    "HashWindow",
    "SnapshotError",
    "tune_threshold",
]

DISTINCT = "distinct"
DUPLICATE = "duplicate"

ENGINES = ("linear-scan", "bk-tree")

SNAPSHOT_MAGIC = b"CFHW"
SNAPSHOT_VERSION = 1


class SnapshotError(ValueError):
    """Raised when a window snapshot cannot be parsed."""


@dataclass(frozen=True)
class DedupConfig:
    """Window parameters: duplicate threshold, capacity, index engine."""

    threshold_d: int = 10
    capacity: int = 100_000
    engine: str = "linear-scan"

    def __post_init__(self):
        if not 0 <= self.threshold_d <= 64:
            raise ValueError(f"threshold_d must be in 0..64, got {self.threshold_d}")
        if self.capacity < 1:
            raise ValueError(f"capacity must be >= 1, got {self.capacity}")
        if self.engine not in ENGINES:
            raise ValueError(f"unknown engine {self.engine!r}; choose from {ENGINES}")


@dataclass(frozen=True)
class DedupDecision:
    """Outcome of one check_and_insert call."""

    verdict: str
    matched_id: str | None = None
    distance: int | None = None

    @property
    def is_duplicate(self) -> bool:
        return self.verdict == DUPLICATE


@dataclass(frozen=True)
class AnnotatedPair:
    """A hash-distance observation with a human same/different judgment."""

    distance: int
    is_same: bool

    def __post_init__(self):
        if not 0 <= self.distance <= 64:
            raise ValueError(f"pair distance must be in 0..64, got {self.distance}")


class _LinearScanIndex:
    """Ring buffer of packed hashes scanned with XOR + popcount."""

    def __init__(self, capacity: int):
        self._capacity = capacity
        self._hashes = np.zeros(capacity, dtype=np.uint64)
        self._ids: list[str | None] = [None] * capacity
        self._start = 0
        self._count = 0

    def __len__(self) -> int:
        return self._count

    def insert(self, h: int, image_id: str) -> None:
        slot = (self._start + self._count) % self._capacity
        self._hashes[slot] = h
        self._ids[slot] = image_id
        self._count += 1

    def evict_oldest(self) -> None:
        self._ids[self._start] = None
        self._start = (self._start + 1) % self._capacity
        self._count -= 1

    def _order(self) -> np.ndarray:
        return (self._start + np.arange(self._count)) % self._capacity

    def entries(self) -> list[tuple[int, str]]:
        order = self._order()
        return [(int(self._hashes[i]), self._ids[i]) for i in order]

    def best_match(self, h: int, radius: int) -> tuple[str, int] | None:
        if self._count == 0:
            return None
        order = self._order()
        dists = popcount64(self._hashes[order] ^ np.uint64(h))
        pos = int(np.argmin(dists))  # argmin returns the first (oldest) minimum
        d = int(dists[pos])
        if d > radius:
            return None
        return self._ids[order[pos]], d

    def query(self, h: int, radius: int) -> list[tuple[str, int]]:
        if self._count == 0:
            return []
        order = self._order()
        dists = popcount64(self._hashes[order] ^ np.uint64(h))
        hits = np.flatnonzero(dists <= radius)
        results = [(int(dists[i]), int(i), self._ids[order[i]]) for i in hits]
        results.sort(key=lambda t: (t[0], t[1]))
        return [(image_id, d) for d, _, image_id in results]


class _BKNode:
    __slots__ = ("h", "image_id", "seq", "alive", "children")

    def __init__(self, h: int, image_id: str, seq: int):
        self.h = h
        self.image_id = image_id
        self.seq = seq
        self.alive = True
        self.children: dict[int, _BKNode] = {}


class _BKTreeIndex:
    """BK-tree over Hamming space; deletions are tombstones plus rebuilds.

    BK-trees cannot delete cheaply, so FIFO eviction marks nodes dead and
    the tree is rebuilt from the live entries once tombstones exceed 25%
    of the live count. Queries stay exact throughout.
    """

    def __init__(self):
        self._root: _BKNode | None = None
        self._live = 0
        self._dead = 0

    def __len__(self) -> int:
        return self._live

    def insert(self, h: int, image_id: str, seq: int) -> None:
        node = _BKNode(h, image_id, seq)
        if self._root is None:
            self._root = node
        else:
            cur = self._root
            while True:
                d = (cur.h ^ h).bit_count()
                child = cur.children.get(d)
                if child is None:
                    cur.children[d] = node
                    break
                cur = child
        self._live += 1

    def mark_dead(self, h: int, image_id: str) -> None:
        cur = self._root
        while cur is not None:
            d = (cur.h ^ h).bit_count()
            if d == 0 and cur.alive and cur.image_id == image_id:
                cur.alive = False
                self._live -= 1
                self._dead += 1
                return
            cur = cur.children.get(d)
        raise KeyError(f"entry {image_id!r} not present in BK-tree")

    def needs_rebuild(self) -> bool:
        return self._dead > 0.25 * max(self._live, 1)

    def rebuild(self, entries: list[tuple[int, str, int]]) -> None:
        self._root = None
        self._live = 0
        self._dead = 0
        for h, image_id, seq in entries:
            self.insert(h, image_id, seq)

    def search(self, h: int, radius: int) -> list[tuple[int, int, str]]:
        """All live entries within radius as (distance, seq, id), unsorted."""
        results: list[tuple[int, int, str]] = []
        if self._root is None:
            return results
        stack = [self._root]
        while stack:
            node = stack.pop()
            d = (node.h ^ h).bit_count()
            if node.alive and d <= radius:
                results.append((d, node.seq, node.image_id))
            lo = d - radius
            hi = d + radius
            for edge, child in node.children.items():
                if lo <= edge <= hi:
                    stack.append(child)
        return results


class HashWindow:
    """Bounded FIFO store of (hash, image id) with radius queries.

    check_and_insert must be applied in a total order: the window is a
    single logical state machine and verdicts depend on arrival order.
    """

    def __init__(self, config: DedupConfig | None = None):
        self.config = config or DedupConfig()
        self._fifo: deque[tuple[int, str, int]] = deque()
        self._seq = 0
        if self.config.engine == "bk-tree":
            self._tree: _BKTreeIndex | None = _BKTreeIndex()
            self._linear: _LinearScanIndex | None = None
        else:
            self._tree = None
            self._linear = _LinearScanIndex(self.config.capacity)

    def __len__(self) -> int:
        return len(self._fifo)

    def entries(self) -> list[tuple[int, str]]:
        """Stored (hash, id) pairs, oldest first."""
        return [(h, image_id) for h, image_id, _ in self._fifo]

    def _best_match(self, h: int) -> tuple[str, int] | None:
        radius = self.config.threshold_d
        if self._linear is not None:
            return self._linear.best_match(h, radius)
        hits = self._tree.search(h, radius)
        if not hits:
            return None
        d, _, image_id = min(hits)
        return image_id, d

    def _insert(self, h: int, image_id: str) -> None:
        if len(self._fifo) >= self.config.capacity:
            old_h, old_id, _ = self._fifo.popleft()
            if self._linear is not None:
                self._linear.evict_oldest()
            else:
                self._tree.mark_dead(old_h, old_id)
                if self._tree.needs_rebuild():
                    self._tree.rebuild(list(self._fifo))
        seq = self._seq
        self._seq += 1
        self._fifo.append((h, image_id, seq))
        if self._linear is not None:
            self._linear.insert(h, image_id)
        else:
            self._tree.insert(h, image_id, seq)

    def check_and_insert(self, h: int, image_id: str) -> DedupDecision:
        """Classify a hash as duplicate/distinct; distinct hashes are stored.

        Duplicates report the minimum-distance match (oldest entry on
        ties) and leave the window untouched, so the window only ever
        holds hashes of distinct images.
        """
        h = check_hash64(h)
        match = self._best_match(h)
        if match is not None:
            image_id_hit, d = match
            return DedupDecision(DUPLICATE, matched_id=image_id_hit, distance=d)
        self._insert(h, image_id)
        return DedupDecision(DISTINCT)

    def query(self, h: int, radius: int) -> list[tuple[str, int]]:
        """All stored entries within radius, ascending by (distance, age). Read-only."""
        h = check_hash64(h)
        if not 0 <= radius <= 64:
            raise ValueError(f"radius must be in 0..64, got {radius}")
        if self._linear is not None:
            return self._linear.query(h, radius)
        hits = sorted(self._tree.search(h, radius))
        return [(image_id, d) for d, _, image_id in hits]

    # -- persistence ------------------------------------------------------

    def save(self, path) -> None:
        Path(path).write_bytes(self.to_bytes())

    def to_bytes(self) -> bytes:
        parts = [
            SNAPSHOT_MAGIC,
            struct.pack("<BB", SNAPSHOT_VERSION, self.config.threshold_d),
            struct.pack("<II", self.config.capacity, len(self._fifo)),
        ]
        for h, image_id, _ in self._fifo:
            raw = image_id.encode("utf-8")
            parts.append(struct.pack("<QH", h, len(raw)))
            parts.append(raw)
        return b"".join(parts)

    @classmethod
    def load(cls, path, engine: str = "linear-scan") -> "HashWindow":
        return cls.from_bytes(Path(path).read_bytes(), engine=engine)

    @classmethod
    def from_bytes(cls, data: bytes, engine: str = "linear-scan") -> "HashWindow":
        if data[:4] != SNAPSHOT_MAGIC:
            raise SnapshotError(f"bad snapshot magic {data[:4]!r} at byte 0")
        if len(data) < 14:
            raise SnapshotError(f"snapshot header truncated at byte {len(data)}")
        version, threshold = struct.unpack_from("<BB", data, 4)
        if version != SNAPSHOT_VERSION:
            raise SnapshotError(f"unsupported snapshot version {version} at byte 4")
        capacity, count = struct.unpack_from("<II", data, 6)
        try:
            config = DedupConfig(threshold_d=threshold, capacity=capacity, engine=engine)
        except ValueError as exc:
            raise SnapshotError(f"invalid snapshot config at byte 5: {exc}") from exc
        if count > capacity:
            raise SnapshotError(f"snapshot count {count} exceeds capacity at byte 10")
        window = cls(config)
        pos = 14
        for i in range(count):
            if pos + 10 > len(data):
                raise SnapshotError(f"snapshot record {i} truncated at byte {pos}")
            h, id_len = struct.unpack_from("<QH", data, pos)
            pos += 10
            if pos + id_len > len(data):
                raise SnapshotError(f"snapshot id {i} truncated at byte {pos}")
            try:
                image_id = data[pos : pos + id_len].decode("utf-8")
            except UnicodeDecodeError as exc:
                raise SnapshotError(f"snapshot id {i} not UTF-8 at byte {pos}") from exc
            pos += id_len
            window._insert(h, image_id)
        return window

    @classmethod
    def from_entries(
        cls, entries, config: DedupConfig | None = None
    ) -> "HashWindow":
        """Bulk-load (hash, id) pairs in insertion order without matching."""
        window = cls(config)
        for h, image_id in entries:
            window._insert(check_hash64(h), image_id)
        return window


def tune_threshold(
    pairs: list[AnnotatedPair], d_min: int = 0, d_max: int = 20
) -> tuple[list[tuple[int, float]], int]:
    """Sweep the duplicate threshold over annotated pairs.

    accuracy(d) counts pairs the threshold gets right: same pairs at
    distance <= d plus different pairs at distance > d. Returns the curve
    over [d_min, d_max] and the smallest d maximizing accuracy.
    """
    if not pairs:
        raise ValueError("tune_threshold requires at least one annotated pair")
    if not 0 <= d_min <= d_max <= 64:
        raise ValueError(f"need 0 <= d_min <= d_max <= 64, got {d_min}, {d_max}")
    dists = np.array([p.distance for p in pairs])
    same = np.array([p.is_same for p in pairs], dtype=bool)
    n = len(pairs)
    # cumulative counts by distance let accuracy(d) come from two lookups
    same_by_d = np.bincount(dists[same], minlength=65).cumsum()
    diff_by_d = np.bincount(dists[~same], minlength=65).cumsum()
    n_diff = int((~same).sum())
    curve = []
    for d in range(d_min, d_max + 1):
        correct = int(same_by_d[d]) + (n_diff - int(diff_by_d[d]))
        curve.append((d, correct / n))
    best_d = max(curve, key=lambda t: (t[1], -t[0]))[0]
    return curve, best_d

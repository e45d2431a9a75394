"""Streaming orchestration: ingest -> fetch -> relevancy -> de-duplication.

Records enter as JSONL, images are fetched (file paths by default, HTTP
pluggable), the relevancy model drops images scoring below 0.5 on the
relevant class, and the hash window drops near-duplicates. Every ingested
record ends in exactly one terminal outcome, and retention is tallied per
damage category at each stage boundary. Given the same arrival order,
model, and configuration, a run is bit-reproducible.

Fetching may use several workers but results are re-serialized into
arrival order before scoring; the dedup stage is strictly serial because
its verdicts depend on arrival order.
"""

from __future__ import annotations

import json
import urllib.request
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .classify import SoftmaxClassifier, feature_matrix
from .dedup import DedupConfig, HashWindow
from .imagecore import DecodeError, decode_image
from .phash import phash

__all__ = [
    "ImageRecord",
    "StageOutcome",
    "RetentionReport",
    "PipelineResult",
    "IngestError",
    "IngestResult",
    "ingest",
    "file_fetcher",
    "HttpFetcher",
    "fetch_record",
    "run_pipeline",
    "write_outcomes_jsonl",
]

UNLABELED = "unlabeled"

STAGE_FETCH = "fetch"
STAGE_RELEVANCY = "relevancy"
STAGE_DEDUP = "dedup"

PASS = "pass"
DROP = "drop"


@dataclass(frozen=True)
class ImageRecord:
    """One social-media image: identifiers, locator, optional labels."""

    id: str
    url: str = ""
    post_id: str = ""
    received_at: int = 0
    payload: object = None  # raster array once fetched
    damage: str | None = None
    relevance: str | None = None
    object_tags: tuple[str, ...] = ()
    dup_group: str | None = None

    @property
    def category(self) -> str:
        return self.damage if self.damage else UNLABELED


@dataclass(frozen=True)
class StageOutcome:
    """Terminal outcome of one record: where it stopped and why."""

    record_id: str
    stage: str
    action: str
    reason: str = ""

    def to_dict(self) -> dict:
        return {
            "record_id": self.record_id,
            "stage": self.stage,
            "action": self.action,
            "reason": self.reason,
        }


class IngestError(ValueError):
    """Raised when the record source itself cannot be read."""


@dataclass
class IngestResult:
    records: list[ImageRecord]
    malformed_count: int

    def __iter__(self):
        return iter(self.records)

    def __len__(self):
        return len(self.records)


def _record_from_obj(obj: dict) -> ImageRecord:
    if not isinstance(obj, dict) or "id" not in obj:
        raise ValueError("record object must carry an id")
    locator = obj.get("url") or obj.get("path") or ""
    if not locator:
        raise ValueError("record object must carry a url or path")
    return ImageRecord(
        id=str(obj["id"]),
        url=str(locator),
        post_id=str(obj.get("post_id", "")),
        received_at=int(obj.get("received_at", 0)),
        damage=obj.get("damage"),
        relevance=obj.get("relevance"),
        object_tags=tuple(obj.get("object_tags", ())),
        dup_group=obj.get("dup_group"),
    )


def ingest(source) -> IngestResult:
    """Parse a JSONL record stream (path, file-like, or iterable of lines).

    Records come out in input order. Malformed lines are counted and
    skipped; an unreadable source raises IngestError.
    """
    if isinstance(source, (str, Path)):
        try:
            lines = Path(source).read_text(encoding="utf-8").splitlines()
        except OSError as exc:
            raise IngestError(f"cannot read record source {source}: {exc}") from exc
    elif hasattr(source, "read"):
        lines = source.read().splitlines()
    else:
        lines = list(source)
    records: list[ImageRecord] = []
    malformed = 0
    for line in lines:
        line = line.strip()
        if not line:
            continue
        try:
            records.append(_record_from_obj(json.loads(line)))
        except (json.JSONDecodeError, ValueError, TypeError):
            malformed += 1
    return IngestResult(records, malformed)


# --------------------------------------------------------------------------
# fetch stage
# --------------------------------------------------------------------------


def file_fetcher(locator: str) -> bytes:
    """Default offline fetcher: the locator is a file path (file:// allowed)."""
    path = locator[7:] if locator.startswith("file://") else locator
    return Path(path).read_bytes()


class HttpFetcher:
    """HTTP fetcher with timeout and a fixed retry budget."""

    def __init__(self, timeout: float = 10.0, retries: int = 2):
        self.timeout = timeout
        self.retries = retries

    def __call__(self, url: str) -> bytes:
        last_error: Exception | None = None
        for _ in range(self.retries + 1):
            try:
                with urllib.request.urlopen(url, timeout=self.timeout) as resp:
                    return resp.read()
            except Exception as exc:  # noqa: BLE001 - retried, then reported
                last_error = exc
        raise IOError(f"fetch failed after {self.retries + 1} attempts: {last_error}")


def fetch_record(
    record: ImageRecord, fetcher=file_fetcher
) -> tuple[ImageRecord, StageOutcome | None]:
    """Attach the decoded raster to a record, or report a fetch/decode drop."""
    if record.payload is not None:
        return record, None
    try:
        data = fetcher(record.url)
    except Exception:
        return record, StageOutcome(record.id, STAGE_FETCH, DROP, "fetch-error")
    try:
        raster = decode_image(data)
    except DecodeError:
        return record, StageOutcome(record.id, STAGE_FETCH, DROP, "decode-error")
    return replace(record, payload=raster), None


# --------------------------------------------------------------------------
# retention accounting
# --------------------------------------------------------------------------


@dataclass
class RetentionReport:
    """Images remaining per category after each filtering stage."""

    categories: list[str]
    raw: dict[str, int]
    fetch_dropped: dict[str, int]
    after_relevancy: dict[str, int]
    after_dedup: dict[str, int]

    @property
    def raw_total(self) -> int:
        return sum(self.raw.values())

    @property
    def after_relevancy_total(self) -> int:
        return sum(self.after_relevancy.values())

    @property
    def after_dedup_total(self) -> int:
        return sum(self.after_dedup.values())

    @property
    def overall_reduction_pct(self) -> float:
        raw = self.raw_total
        if raw == 0:
            return 0.0
        return 100.0 * (1.0 - self.after_dedup_total / raw)

    def to_dict(self) -> dict:
        return {
            "categories": self.categories,
            "raw": self.raw,
            "fetch_dropped": self.fetch_dropped,
            "after_relevancy": self.after_relevancy,
            "after_dedup": self.after_dedup,
            "totals": {
                "raw": self.raw_total,
                "after_relevancy": self.after_relevancy_total,
                "after_dedup": self.after_dedup_total,
            },
            "overall_reduction_pct": self.overall_reduction_pct,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)


@dataclass
class PipelineResult:
    kept: list[ImageRecord]
    outcomes: list[StageOutcome]
    report: RetentionReport
    window: HashWindow
    hashes: dict[str, int] = field(default_factory=dict)


# --------------------------------------------------------------------------
# the pipeline
# --------------------------------------------------------------------------


def run_pipeline(
    records,
    relevancy: SoftmaxClassifier,
    dedup_cfg: DedupConfig | None = None,
    fetcher=file_fetcher,
    fetch_workers: int = 8,
    window: HashWindow | None = None,
    relevancy_threshold: float = 0.5,
) -> PipelineResult:
    """Run fetch -> relevancy -> dedup over records in arrival order.

    `window` may be a restored snapshot; otherwise a fresh window is
    created from `dedup_cfg`. Per-record failures become drops; only
    configuration errors raise.
    """
    records = list(records)
    if window is None:
        window = HashWindow(dedup_cfg or DedupConfig())
    categories: list[str] = []
    for r in records:
        if r.category not in categories:
            categories.append(r.category)
    if not categories:
        categories = [UNLABELED]

    zero = {c: 0 for c in categories}
    raw = dict(zero)
    fetch_dropped = dict(zero)
    after_relevancy = dict(zero)
    after_dedup = dict(zero)
    for r in records:
        raw[r.category] += 1

    # fetch (concurrent, re-serialized into arrival order)
    needs_fetch = any(r.payload is None for r in records)
    if needs_fetch and fetch_workers > 1 and len(records) > 1:
        with ThreadPoolExecutor(max_workers=fetch_workers) as pool:
            fetched = list(pool.map(lambda r: fetch_record(r, fetcher), records))
    else:
        fetched = [fetch_record(r, fetcher) for r in records]

    outcomes_by_id: dict[str, StageOutcome] = {}
    alive: list[ImageRecord] = []
    for record, outcome in fetched:
        if outcome is not None:
            outcomes_by_id[record.id] = outcome
            fetch_dropped[record.category] += 1
        else:
            alive.append(record)

    # relevancy (stateless, batch-scored)
    if alive:
        probs = relevancy.relevant_probability(feature_matrix([r.payload for r in alive]))
    else:
        probs = np.zeros(0)
    survivors: list[ImageRecord] = []
    for record, p in zip(alive, probs):
        if p < relevancy_threshold:
            outcomes_by_id[record.id] = StageOutcome(
                record.id, STAGE_RELEVANCY, DROP, f"irrelevant p={1.0 - p:.2f}"
            )
        else:
            survivors.append(record)
            after_relevancy[record.category] += 1

    # de-duplication (strictly serial)
    kept: list[ImageRecord] = []
    hashes: dict[str, int] = {}
    for record in survivors:
        h = phash(record.payload)
        hashes[record.id] = h
        decision = window.check_and_insert(h, record.id)
        if decision.is_duplicate:
            outcomes_by_id[record.id] = StageOutcome(
                record.id,
                STAGE_DEDUP,
                DROP,
                f"duplicate-of:{decision.matched_id} d={decision.distance}",
            )
        else:
            outcomes_by_id[record.id] = StageOutcome(record.id, STAGE_DEDUP, PASS)
            kept.append(record)
            after_dedup[record.category] += 1

    outcomes = [outcomes_by_id[r.id] for r in records]
    report = RetentionReport(categories, raw, fetch_dropped, after_relevancy, after_dedup)
    return PipelineResult(kept, outcomes, report, window, hashes)


def write_outcomes_jsonl(outcomes, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for outcome in outcomes:
            fh.write(json.dumps(outcome.to_dict(), sort_keys=True) + "\n")

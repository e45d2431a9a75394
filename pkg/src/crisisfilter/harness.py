"""Desk-scale reproduction machinery: synthetic corpora with ground truth,
the S1-S4 annotation-budget simulation, and the threshold-sweep experiment.

The corpus generator builds procedural image families whose parameters are
calibrated against the hash: damage classes are texture families whose
rubble density scales with severity (severe fragmented, mild intermediate,
none smooth), the irrelevant family is flat banner/text-card rasters, and
near-duplicates are perturbed copies verified to sit within Hamming
distance 10 of their original. Distinct images are verified to sit beyond
10 (offenders are regenerated), so a pipeline run can be checked exactly
against the generator's ground truth.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .classify import (
    DAMAGE_CLASSES,
    DEFAULT_IRRELEVANT_CATEGORIES,
    IRRELEVANT,
    RELEVANT,
    cross_validate,
    feature_matrix,
    largest_remainder,
)
from .dedup import AnnotatedPair, DedupConfig, HashWindow, tune_threshold
from .imagecore import box_blur7, resize_area, write_netpbm
from .metrics import EvalReport
from .phash import hamming, phash
from .pipeline import ImageRecord

__all__ = [
    "PERTURBATIONS",
    "CorpusSpec",
    "CorpusTruth",
    "BudgetConfig",
    "SettingReport",
    "SweepResult",
    "generate_corpus",
    "budget_sim",
    "sweep_threshold_experiment",
    "write_manifest",
    "read_manifest",
    "write_sweep_csv",
    "scene_image",
    "banner_image",
    "perturb_image",
]

PERTURBATIONS = ("resize", "crop", "brightness", "text-band", "blur")

SETTINGS = ("S1", "S2", "S3", "S4")

# fragmentation ranges per damage family; the overlap is deliberate so the
# 3-class problem has genuine confusion (the middle class is hardest)
DAMAGE_FRAGMENTATION = {
    "severe": (0.55, 1.0),
    "mild": (0.28, 0.72),
    "none": (0.0, 0.45),
}

RELEVANT_TAGS = ("rubble", "street", "building", "bridge", "road", "river")

DUPLICATE_THRESHOLD = 10
NEAR_MISS_RANGE = (11, 20)


@dataclass(frozen=True)
class CorpusSpec:
    """Parameters of one synthetic corpus."""

    seed: int = 42
    n_severe: int = 200
    n_mild: int = 100
    n_none: int = 300
    n_irrelevant: int = 200
    duplicate_rate: float = 0.4
    perturbations: tuple[str, ...] = PERTURBATIONS
    image_size: int = 48
    label_noise: float = 0.12
    exact_dup_fraction: float = 0.35
    strong_dup_fraction: float = 0.4
    near_miss_rate: float = 0.04

    def __post_init__(self):
        if not 0.0 <= self.duplicate_rate < 1.0:
            raise ValueError("duplicate_rate must be in [0, 1)")
        for n in (self.n_severe, self.n_mild, self.n_none, self.n_irrelevant):
            if n < 0:
                raise ValueError("family counts must be >= 0")
        unknown = set(self.perturbations) - set(PERTURBATIONS)
        if unknown:
            raise ValueError(f"unknown perturbations: {sorted(unknown)}")


@dataclass
class CorpusTruth:
    """Generator ground truth: duplicate groups, relevance, families, hashes."""

    groups: dict[str, list[str]]  # group id -> member ids in arrival order
    group_of: dict[str, str]
    relevant_ids: frozenset
    family: dict[str, str]  # true family, including "irrelevant"
    hashes: dict[str, int]
    near_pairs: list[tuple[str, str]] = field(default_factory=list)

    def retained_ids(self, arrival_order) -> list[str]:
        """Ids the full pipeline keeps: first relevant member of each group."""
        seen: set[str] = set()
        kept = []
        for record_id in arrival_order:
            if record_id not in self.relevant_ids:
                continue
            g = self.group_of[record_id]
            if g not in seen:
                seen.add(g)
                kept.append(record_id)
        return kept


# --------------------------------------------------------------------------
# procedural image families
# --------------------------------------------------------------------------


def _soft_blur3(layer: np.ndarray) -> np.ndarray:
    """3x3 clamped box blur used to soften drawn shapes."""
    n0, n1 = layer.shape
    s = np.zeros((n0 + 1, n1 + 1))
    np.cumsum(np.cumsum(layer, axis=0), axis=1, out=s[1:, 1:])
    ys = np.arange(n0)
    xs = np.arange(n1)
    y0, y1 = np.maximum(ys - 1, 0), np.minimum(ys + 2, n0)
    x0, x1 = np.maximum(xs - 1, 0), np.minimum(xs + 2, n1)
    sums = s[np.ix_(y1, x1)] - s[np.ix_(y0, x1)] - s[np.ix_(y1, x0)] + s[np.ix_(y0, x0)]
    return sums / np.outer(y1 - y0, x1 - x0)


def scene_image(rng: np.random.Generator, fragmentation: float, size: int = 48) -> np.ndarray:
    """Disaster-scene family: smooth ramp + soft blobs + rubble patches.

    `fragmentation` in [0, 1] controls how much of the frame is covered by
    extreme-gray rubble, which is what separates the damage classes.
    Structure is kept away from the borders so small crops stay within the
    duplicate threshold.
    """
    n = size
    y, x = np.mgrid[0:n, 0:n] / (n - 1)
    angle = rng.uniform(0, 2 * np.pi)
    ramp = np.cos(angle) * x + np.sin(angle) * y - 0.5
    base = rng.uniform(95, 148) + rng.uniform(42, 70) * ramp
    for _ in range(3):
        cy, cx = rng.uniform(0.25, 0.75, 2)
        sigma = rng.uniform(0.18, 0.35)
        base = base + rng.uniform(-45, 45) * np.exp(
            -(((y - cy) ** 2 + (x - cx) ** 2) / (2 * sigma**2))
        )
    # scenes stay darker than banner cards even after brightness edits
    mean = base.mean()
    if mean > 160.0:
        base *= 160.0 / mean
    k = int(round(fragmentation * 26))
    mask = np.zeros((n, n))
    vals = np.zeros((n, n))
    margin = n // 5
    for _ in range(k):
        h = int(rng.integers(3, 8))
        w = int(rng.integers(3, 8))
        cy = int(rng.integers(margin, n - h - margin + 1))
        cx = int(rng.integers(margin, n - w - margin + 1))
        dark = rng.uniform() < 0.55
        v = rng.uniform(18, 55) if dark else rng.uniform(195, 232)
        mask[cy : cy + h, cx : cx + w] = 1.0
        vals[cy : cy + h, cx : cx + w] = v
    soft = _soft_blur3(_soft_blur3(mask))
    soft_vals = _soft_blur3(_soft_blur3(mask * vals))
    base = base * (1 - soft) + soft_vals
    img = np.stack([base, base, base], axis=2)
    # warm color cast (earth/rubble tones): shifts the red histogram above
    # the blue one, a signature banners lack that survives crops, blur,
    # brightness changes, and text bands
    cast = rng.uniform(0.13, 0.2)
    img[:, :, 0] *= 1.0 + cast
    img[:, :, 1] *= rng.uniform(0.97, 1.03)
    img[:, :, 2] *= 1.0 - cast
    img += rng.normal(0, 2.5, img.shape)
    return np.clip(np.round(img), 12, 240).astype(np.uint8)


def banner_image(rng: np.random.Generator, size: int = 48) -> np.ndarray:
    """Irrelevant family: flat bright card with solid bands and text dashes."""
    n = size
    bg = rng.uniform(205, 242)
    img = np.full((n, n, 3), bg)
    img[:, :, 0] = bg * rng.uniform(0.985, 1.015)
    img[:, :, 2] = bg * rng.uniform(0.985, 1.015)
    # title blocks: bounded coverage so cards never read as busy scenes
    for _ in range(int(rng.integers(2, 4))):
        y0 = int(rng.integers(0, n - 8))
        height = int(rng.integers(3, 6))
        x0 = int(rng.integers(0, n // 3))
        x1 = int(rng.integers(2 * n // 3, n))
        shade = rng.uniform(40, 120)
        img[y0 : y0 + height, x0:x1, :] = shade + rng.uniform(-8, 8, 3)
    for _ in range(int(rng.integers(2, 6))):
        y0 = int(rng.integers(0, n - 2))
        x = int(rng.integers(0, n // 4))
        while x < n - 4:
            w = int(rng.integers(2, 5))
            img[y0 : y0 + 2, x : x + w, :] = rng.uniform(25, 95)
            x += w + int(rng.integers(2, 5))
    # faint per-image watermark so banner hashes decorrelate
    img += rng.normal(0, 2.0, img.shape)
    return np.clip(np.round(img), 0, 255).astype(np.uint8)


def _resize_rgb(img: np.ndarray, factor: float) -> np.ndarray:
    h, w = img.shape[:2]
    nh = max(8, int(round(h * factor)))
    nw = max(8, int(round(w * factor)))
    planes = [resize_area(img[:, :, c].astype(np.float64), nw, nh) for c in range(3)]
    return np.clip(np.round(np.stack(planes, axis=2)), 0, 255).astype(np.uint8)


def perturb_image(
    img: np.ndarray,
    rng: np.random.Generator,
    kinds,
    strong: bool = False,
) -> np.ndarray:
    """Apply near-duplicate edits: the strong variants drift further."""
    out = img
    for kind in kinds:
        if kind == "resize":
            f = rng.uniform(0.85, 1.18) if strong else rng.uniform(0.9, 1.1)
            out = _resize_rgb(out, f)
        elif kind == "brightness":
            f = rng.uniform(0.9, 1.1) if strong else rng.uniform(0.94, 1.06)
            out = np.clip(np.round(out.astype(np.float64) * f), 0, 255).astype(np.uint8)
        elif kind == "crop":
            frac = rng.uniform(0.06, 0.12) if strong else rng.uniform(0.02, 0.05)
            h, w = out.shape[:2]
            dy = max(1, int(round(h * frac)))
            dx = max(1, int(round(w * frac)))
            out = out[dy : h - dy, dx : w - dx]
        elif kind == "text-band":
            banded = out.copy()
            h = out.shape[0]
            band_h = max(2, h // (12 if strong else 20))
            y0 = int(rng.integers(0, h - band_h))
            banded[y0 : y0 + band_h, :, :] = 245 if rng.uniform() < 0.5 else 15
            out = banded
        elif kind == "blur":
            planes = [box_blur7(out[:, :, c].astype(np.float64)) for c in range(3)]
            out = np.clip(np.round(np.stack(planes, axis=2)), 0, 255).astype(np.uint8)
        else:
            raise ValueError(f"unknown perturbation {kind!r}")
    return out


# --------------------------------------------------------------------------
# corpus generation
# --------------------------------------------------------------------------


def _make_base(rng, family: str, size: int) -> np.ndarray:
    if family == "irrelevant":
        return banner_image(rng, size)
    lo, hi = DAMAGE_FRAGMENTATION[family]
    return scene_image(rng, rng.uniform(lo, hi), size)


def generate_corpus(spec: CorpusSpec, out_dir=None):
    """Build a labeled corpus with ground-truth duplicate groups.

    Returns (records, truth). Records arrive in a seeded shuffled order
    with each group's original first. With `out_dir` set, images are also
    written as PPM files and records carry their paths (payloads are kept
    either way).

    The generator verifies its own hash geometry: every duplicate is
    within DUPLICATE_THRESHOLD of its group's original (violating
    perturbations are re-drawn, and a copy is substituted as a last
    resort), and every pair of group originals is beyond it (violating
    images are regenerated).
    """
    rng = np.random.default_rng(spec.seed)
    size = spec.image_size

    families = (
        [("severe", spec.n_severe), ("mild", spec.n_mild), ("none", spec.n_none)]
    )
    # items: [img, observed_label, family, group_index, hash]
    items: list[list] = []
    rep_indices: list[int] = []
    for family, count in families:
        for _ in range(count):
            img = _make_base(rng, family, size)
            observed = family
            if rng.uniform() < spec.label_noise:
                observed = DAMAGE_CLASSES[int(rng.integers(0, 3))]
            rep_indices.append(len(items))
            items.append([img, observed, family, len(items), phash(img)])
    for _ in range(spec.n_irrelevant):
        img = _make_base(rng, "irrelevant", size)
        rep_indices.append(len(items))
        items.append([img, "none", "irrelevant", len(items), phash(img)])
    if not items:
        raise ValueError("corpus spec produces no images")
    n_bases = len(items)

    # enforce pairwise separation between group originals
    _separate_representatives(items, rep_indices, rng, spec, size)

    # near-miss siblings: strong edits that drift beyond the threshold get
    # their own group, giving the sweep its 11..20 tail
    near_pairs: list[tuple[int, int]] = []
    if spec.perturbations and spec.near_miss_rate > 0:
        n_near = int(round(spec.near_miss_rate * n_bases))
        scene_indices = [i for i in rep_indices if items[i][2] != "irrelevant"]
        for _ in range(n_near):
            src = int(rng.integers(0, len(scene_indices)))
            src_idx = scene_indices[src]
            sibling = _drift_copy(items[src_idx], rng, spec)
            if sibling is None:
                continue
            img, h = sibling
            if not _clears_representatives(h, items, rep_indices):
                continue
            rep_indices.append(len(items))
            near_pairs.append((src_idx, len(items)))
            items.append([img, items[src_idx][1], items[src_idx][2], len(items), h])

    # duplicates: perturbed (or exact) copies of base images, verified to
    # stay within the threshold of their original
    n_distinct = len(items)
    n_dups = int(round(spec.duplicate_rate / (1.0 - spec.duplicate_rate) * n_distinct))
    for _ in range(n_dups):
        base_idx = int(rng.integers(0, n_bases))
        img0, observed, family, group, h0 = items[base_idx]
        dup = None
        if spec.perturbations and rng.uniform() >= spec.exact_dup_fraction:
            for _ in range(8):
                n_kinds = int(rng.integers(1, min(3, len(spec.perturbations)) + 1))
                kinds = rng.choice(spec.perturbations, size=n_kinds, replace=False)
                strong = rng.uniform() < spec.strong_dup_fraction
                cand = perturb_image(img0, rng, kinds, strong=strong)
                h = phash(cand)
                if hamming(h0, h) <= DUPLICATE_THRESHOLD:
                    dup = (cand, h)
                    break
        if dup is None:  # exact re-post
            dup = (img0.copy(), h0)
        items.append([dup[0], observed, family, group, dup[1]])

    # arrival order: seeded shuffle with each group's original first
    order = _group_first_order(items, rng)

    groups: dict[str, list[str]] = {}
    group_of: dict[str, str] = {}
    family_map: dict[str, str] = {}
    hashes: dict[str, int] = {}
    relevant: set[str] = set()
    records: list[ImageRecord] = []
    ids = [f"img{idx:05d}" for idx in range(len(items))]
    out_path = Path(out_dir) if out_dir is not None else None
    if out_path is not None:
        out_path.mkdir(parents=True, exist_ok=True)
    for pos, idx in enumerate(order):
        img, observed, family, group, h = items[idx]
        image_id = ids[idx]
        gid = f"g{group:05d}"
        groups.setdefault(gid, []).append(image_id)
        group_of[image_id] = gid
        family_map[image_id] = family
        hashes[image_id] = h
        is_relevant = family != "irrelevant"
        if is_relevant:
            relevant.add(image_id)
            tags = tuple(
                rng.choice(RELEVANT_TAGS, size=int(rng.integers(1, 3)), replace=False)
            )
        else:
            tags = tuple(
                rng.choice(
                    DEFAULT_IRRELEVANT_CATEGORIES,
                    size=int(rng.integers(1, 3)),
                    replace=False,
                )
            )
        url = ""
        if out_path is not None:
            url = str(out_path / f"{image_id}.ppm")
            write_netpbm(url, img)
        records.append(
            ImageRecord(
                id=image_id,
                url=url,
                received_at=pos,
                payload=img,
                damage=observed,
                relevance=RELEVANT if is_relevant else IRRELEVANT,
                object_tags=tags,
                dup_group=gid,
            )
        )
    truth = CorpusTruth(
        groups=groups,
        group_of=group_of,
        relevant_ids=frozenset(relevant),
        family=family_map,
        hashes=hashes,
        near_pairs=[(ids[a], ids[b]) for a, b in near_pairs],
    )
    return records, truth


def _drift_copy(item, rng, spec):
    """A strong edit of `item`'s image landing in the near-miss band."""
    img0, _, _, _, h0 = item
    lo, hi = NEAR_MISS_RANGE
    for _ in range(12):
        n_kinds = int(rng.integers(2, min(3, len(spec.perturbations)) + 1))
        kinds = rng.choice(spec.perturbations, size=n_kinds, replace=False)
        cand = perturb_image(img0, rng, kinds, strong=True)
        h = phash(cand)
        if lo <= hamming(h0, h) <= hi:
            return cand, h
    return None


def _clears_representatives(h: int, items, rep_indices) -> bool:
    if not rep_indices:
        return True
    reps = np.array([items[i][4] for i in rep_indices], dtype=np.uint64)
    dists = np.bitwise_count(reps ^ np.uint64(h))
    return int(dists.min()) > DUPLICATE_THRESHOLD


def _separate_representatives(items, rep_indices, rng, spec, size) -> None:
    """Regenerate any group original within the threshold of an earlier one."""
    hashes = np.array([items[i][4] for i in rep_indices], dtype=np.uint64)
    for pos in range(1, len(rep_indices)):
        idx = rep_indices[pos]
        for _ in range(10):
            dists = np.bitwise_count(hashes[:pos] ^ hashes[pos])
            if int(dists.min()) > DUPLICATE_THRESHOLD:
                break
            img = _make_base(rng, items[idx][2], size)
            items[idx][0] = img
            items[idx][4] = phash(img)
            hashes[pos] = items[idx][4]
        else:
            raise RuntimeError(
                "could not separate corpus images beyond the duplicate threshold"
            )


def _group_first_order(items, rng) -> list[int]:
    order = rng.permutation(len(items))
    position_of = {int(idx): pos for pos, idx in enumerate(order)}
    members: dict[int, list[int]] = {}
    for idx, item in enumerate(items):
        members.setdefault(item[3], []).append(idx)
    final: list[int | None] = [None] * len(items)
    for group_members in members.values():
        positions = sorted(position_of[i] for i in group_members)
        # items are appended originals-first, so index order = original first
        for idx, pos in zip(sorted(group_members), positions):
            final[pos] = idx
    return final  # type: ignore[return-value]


# --------------------------------------------------------------------------
# manifests
# --------------------------------------------------------------------------


def write_manifest(records, path) -> None:
    """One JSON object per record: id, path, damage, relevance, dup_group, tags."""
    with open(path, "w", encoding="utf-8") as fh:
        for r in records:
            fh.write(
                json.dumps(
                    {
                        "id": r.id,
                        "path": r.url,
                        "damage": r.damage,
                        "relevance": r.relevance,
                        "dup_group": r.dup_group,
                        "object_tags": list(r.object_tags),
                    },
                    sort_keys=True,
                )
                + "\n"
            )


def read_manifest(path) -> list[ImageRecord]:
    records = []
    for pos, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines()):
        line = line.strip()
        if not line:
            continue
        obj = json.loads(line)
        records.append(
            ImageRecord(
                id=str(obj["id"]),
                url=str(obj.get("path", obj.get("url", ""))),
                received_at=pos,
                damage=obj.get("damage"),
                relevance=obj.get("relevance"),
                object_tags=tuple(obj.get("object_tags", ())),
                dup_group=obj.get("dup_group"),
            )
        )
    return records


# --------------------------------------------------------------------------
# budget simulation (S1..S4)
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class BudgetConfig:
    """Fixed annotation budget at 1 USD per labeled image."""

    budget_usd: int = 6000
    cost_per_label: int = 1
    sample_seed: int = 42

    def __post_init__(self):
        if self.budget_usd < 1:
            raise ValueError("budget must be >= 1")


@dataclass
class SettingReport:
    setting: str
    class_counts: dict[str, int]
    wasted_labels: int
    eval: EvalReport | None

    def to_dict(self) -> dict:
        return {
            "setting": self.setting,
            "class_counts": self.class_counts,
            "wasted_labels": self.wasted_labels,
            "eval": self.eval.to_dict() if self.eval is not None else None,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)


def _stratified_sample(records, budget: int, rng) -> list:
    """Budget-many records keeping the pool's class proportions; arrival order."""
    by_class: dict[str, list[int]] = {}
    for i, r in enumerate(records):
        by_class.setdefault(r.category, []).append(i)
    classes = sorted(by_class)
    total = len(records)
    take = largest_remainder(budget, [len(by_class[c]) / total for c in classes])
    chosen: list[int] = []
    for c, t in zip(classes, take):
        pool = by_class[c]
        picked = rng.choice(len(pool), size=t, replace=False)
        chosen.extend(pool[j] for j in picked)
    chosen.sort()
    return [records[i] for i in chosen]


def _dedup_records(records, truth: CorpusTruth) -> list:
    window = HashWindow(
        DedupConfig(threshold_d=DUPLICATE_THRESHOLD, capacity=max(len(records), 1))
    )
    kept = []
    for r in records:
        decision = window.check_and_insert(truth.hashes[r.id], r.id)
        if not decision.is_duplicate:
            kept.append(r)
    return kept


def _class_counts(records) -> dict[str, int]:
    counts: dict[str, int] = {}
    for r in records:
        counts[r.category] = counts.get(r.category, 0) + 1
    return dict(sorted(counts.items()))


def budget_sim(
    records,
    truth: CorpusTruth,
    cfg: BudgetConfig | None = None,
    setting: str = "S1",
    evaluate_cv: bool = True,
    cv_seed: int | None = None,
    **hyper,
) -> SettingReport:
    """Simulate one annotation-budget setting and evaluate its classifier.

    S1 samples the budget from the raw corpus keeping class proportions;
    S2 is the S1 sample run through the de-duplication filter (its label
    waste is |S1| - |S2|); S3 samples from the relevancy-filtered corpus;
    S4 samples from the corpus after both filters. Each setting trains the
    3-class damage classifier and reports pooled 5-fold cross-validation.
    """
    cfg = cfg or BudgetConfig()
    if setting not in SETTINGS:
        raise ValueError(f"setting must be one of {SETTINGS}, got {setting!r}")
    records = list(records)
    rng = np.random.default_rng(cfg.sample_seed)
    wasted = 0
    if setting in ("S1", "S2"):
        pool = records
    else:
        pool = [r for r in records if r.id in truth.relevant_ids]
        if setting == "S4":
            pool = _dedup_records(pool, truth)
    if cfg.budget_usd > len(pool):
        raise ValueError(
            f"budget {cfg.budget_usd} exceeds the {setting} pool size {len(pool)}"
        )
    sample = _stratified_sample(pool, cfg.budget_usd, rng)
    if setting == "S2":
        deduped = _dedup_records(sample, truth)
        wasted = (len(sample) - len(deduped)) * cfg.cost_per_label
        sample = deduped
    report = None
    if evaluate_cv:
        features = feature_matrix([_payload(r) for r in sample])
        labels = [r.damage for r in sample]
        report = cross_validate(
            features,
            labels,
            DAMAGE_CLASSES,
            k=5,
            seed=cfg.sample_seed if cv_seed is None else cv_seed,
            **hyper,
        )
    return SettingReport(
        setting=setting,
        class_counts=_class_counts(sample),
        wasted_labels=wasted,
        eval=report,
    )


def _payload(record: ImageRecord) -> np.ndarray:
    if record.payload is not None:
        return record.payload
    from .imagecore import read_image

    return read_image(record.url)


# --------------------------------------------------------------------------
# threshold sweep
# --------------------------------------------------------------------------


@dataclass
class SweepResult:
    curve: list[tuple[int, float]]
    best_d: int
    pairs: list[AnnotatedPair]

    def to_dict(self) -> dict:
        return {
            "best_d": self.best_d,
            "curve": [{"d": d, "accuracy": a} for d, a in self.curve],
            "n_pairs": len(self.pairs),
        }


def sweep_threshold_experiment(
    records,
    truth: CorpusTruth,
    n_pairs: int = 1100,
    seed: int = 42,
    d_min: int = 0,
    d_max: int = 20,
) -> SweepResult:
    """Rebuild the threshold-estimation experiment from ground truth.

    Pairs mix within-group (original vs duplicate), near-miss (drifted
    copies just beyond the threshold), and far cross-group originals;
    is_same comes from the generator's duplicate groups instead of manual
    annotation. The mix keeps far pairs dominant so accuracy stays high
    at low thresholds and declines once near-miss distances are admitted.
    """
    records = list(records)
    rng = np.random.default_rng(seed)
    same_candidates = []
    for members in truth.groups.values():
        for other in members[1:]:
            same_candidates.append((members[0], other))
    near_candidates = list(truth.near_pairs)
    originals = [m[0] for m in truth.groups.values()]
    if len(originals) < 2:
        raise ValueError("sweep needs at least two distinct groups")
    n_same = min(len(same_candidates), int(round(0.06 * n_pairs)))
    n_near = min(len(near_candidates), int(round(0.03 * n_pairs)))
    n_far = n_pairs - n_same - n_near
    if n_far < 0:
        raise ValueError("n_pairs too small for the candidate mix")

    def pick(candidates, count):
        idx = rng.choice(len(candidates), size=count, replace=False)
        return [candidates[i] for i in idx]

    chosen = pick(same_candidates, n_same) + pick(near_candidates, n_near)
    for _ in range(n_far):
        a, b = rng.choice(len(originals), size=2, replace=False)
        chosen.append((originals[a], originals[b]))
    pairs = [
        AnnotatedPair(
            distance=hamming(truth.hashes[a], truth.hashes[b]),
            is_same=truth.group_of[a] == truth.group_of[b],
        )
        for a, b in chosen
    ]
    curve, best_d = tune_threshold(pairs, d_min, d_max)
    return SweepResult(curve=curve, best_d=best_d, pairs=pairs)


def write_sweep_csv(result: SweepResult, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("d,accuracy\n")
        for d, acc in result.curve:
            fh.write(f"{d},{acc}\n")


# --------------------------------------------------------------------------
# bundled baseline relevancy model
# --------------------------------------------------------------------------

BASELINE_TRAIN_SPEC = CorpusSpec(
    seed=900,
    n_severe=180,
    n_mild=100,
    n_none=280,
    n_irrelevant=420,
    duplicate_rate=0.5,
)


def make_baseline_relevancy_model():
    """Retrain the bundled relevancy baseline from its fixed recipe.

    Deterministic: regenerating always produces the exact bytes shipped in
    crisisfilter/data/relevancy_baseline.cfm. The long schedule matters:
    gradient descent on this separable corpus keeps widening the margin,
    which is what makes the filter exact on fresh corpora.
    """
    from .classify import train_classifier

    records, _ = generate_corpus(BASELINE_TRAIN_SPEC)
    features = feature_matrix([r.payload for r in records])
    labels = [r.relevance for r in records]
    return train_classifier(
        features,
        labels,
        classes=(RELEVANT, IRRELEVANT),
        epochs=2000,
        lr_decay_every=400,
    )

"""Evaluation: metrics, dataset loading, and category-disjoint filtering."""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .imaging import BBox
from .trajectory import BinaryLabel

log = logging.getLogger(__name__)


class EvaluationError(ValueError):
    """Raised on invalid metric inputs or unusable datasets."""


# category stems whose numbered variants (pcb1, pcb2, ...) denote the same
# product family; extend via the variant_stems argument
DEFAULT_VARIANT_STEMS = ("pcb", "transistor")

_SEPARATOR_RE = re.compile(r"[\s_\-]+")
_VARIANT_RE = re.compile(r"^(.*?)-?(\d+)$")


def normalize_category(name: str, variant_stems=DEFAULT_VARIANT_STEMS) -> str:
    """Canonical category key: casefold, collapse separators, fold variants.

    A trailing digit suffix is stripped only when the remaining stem is a
    known variant stem, so ``PCB_2`` folds to ``pcb`` while ``category2``
    stays itself.
    """
    canon = _SEPARATOR_RE.sub("-", name.strip().lower()).strip("-")
    m = _VARIANT_RE.match(canon)
    if m:
        stem = m.group(1)
        stems = {s.strip().lower() for s in variant_stems}
        if stem in stems:
            return stem
    return canon


@dataclass(frozen=True)
class RemovedCategory:
    category: str
    matched_test_category: str


@dataclass(frozen=True)
class FilterResult:
    retained: tuple[str, ...]
    removed: tuple[RemovedCategory, ...]


def category_disjoint_filter(
    train_categories, test_categories, variant_stems=DEFAULT_VARIANT_STEMS
) -> FilterResult:
    """Drop training categories that collide with any test category.

    Collision is judged on normalized names, so numbered variants of the same
    family (pcb vs pcb1) collide. Removed entries carry the test category
    they matched, for audit output.
    """
    test_by_canon: dict[str, str] = {}
    for name in test_categories:
        test_by_canon.setdefault(normalize_category(name, variant_stems), name)
    retained: list[str] = []
    removed: list[RemovedCategory] = []
    for name in train_categories:
        canon = normalize_category(name, variant_stems)
        if canon in test_by_canon:
            removed.append(RemovedCategory(name, test_by_canon[canon]))
        else:
            retained.append(name)
    return FilterResult(tuple(retained), tuple(removed))


@dataclass(frozen=True)
class ConfusionCounts:
    """Binary confusion counts; positives are anomalous (Yes) samples."""

    tp: int = 0
    fp: int = 0
    tn: int = 0
    fn: int = 0

    @classmethod
    def from_pairs(cls, pairs) -> "ConfusionCounts":
        tp = fp = tn = fn = 0
        for truth, pred in pairs:
            if truth is BinaryLabel.YES:
                if pred is BinaryLabel.YES:
                    tp += 1
                else:
                    fn += 1
            else:
                if pred is BinaryLabel.YES:
                    fp += 1
                else:
                    tn += 1
        return cls(tp, fp, tn, fn)

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn


def balanced_accuracy(counts: ConfusionCounts) -> float:
    """Mean of anomaly recall and normal recall. Errors when a class is empty."""
    positives = counts.tp + counts.fn
    negatives = counts.tn + counts.fp
    if positives == 0 or negatives == 0:
        raise EvaluationError(
            f"balanced accuracy undefined: positives={positives} negatives={negatives}"
        )
    return 0.5 * (counts.tp / positives + counts.tn / negatives)


def anomaly_recall(counts: ConfusionCounts) -> float | None:
    """tp / (tp + fn); None when there are no anomalous samples."""
    positives = counts.tp + counts.fn
    if positives == 0:
        return None
    return counts.tp / positives


def f1_score(counts: ConfusionCounts) -> float | None:
    """2tp / (2tp + fp + fn); None when the denominator is zero."""
    denom = 2 * counts.tp + counts.fp + counts.fn
    if denom == 0:
        return None
    return 2 * counts.tp / denom


def confusion_from_predictions(
    samples,
    predictions: dict[str, BinaryLabel | None],
    *,
    unparseable_as_normal: bool = False,
) -> tuple[ConfusionCounts, int]:
    """Join samples with predictions by sample id.

    Unparseable (None) or missing predictions are excluded and counted, or
    mapped to the normal verdict when unparseable_as_normal is set. Returns
    (counts, number excluded).
    """
    pairs = []
    excluded = 0
    for sample in samples:
        pred = predictions.get(sample.sample_id)
        if pred is None:
            if unparseable_as_normal:
                pred = BinaryLabel.NO
            else:
                excluded += 1
                continue
        pairs.append((sample.label, pred))
    return ConfusionCounts.from_pairs(pairs), excluded


@dataclass(frozen=True)
class Sample:
    """One dataset image: identity, label, and optional ground-truth extras."""

    sample_id: str
    path: str
    category: str
    label: BinaryLabel
    defect_name: str | None = None
    gt_box: BBox | None = None


def mask_to_bbox(mask: np.ndarray) -> BBox | None:
    """Tightest half-open box around nonzero mask pixels; None if empty."""
    ys, xs = np.nonzero(mask)
    if len(ys) == 0:
        return None
    return BBox(int(xs.min()), int(ys.min()), int(xs.max()) + 1, int(ys.max()) + 1)


def _find_mask(root: Path, category: str, defect: str, stem: str) -> Path | None:
    base = root / category / "ground_truth" / defect
    for name in (f"{stem}_mask.png", f"{stem}.png"):
        candidate = base / name
        if candidate.is_file():
            return candidate
    return None


def load_dataset(root) -> list[Sample]:
    """Walk an inspection dataset laid out as category/test/<condition>/*.png.

    The ``good`` condition is normal; any other condition directory is an
    anomaly whose name is the defect label, with an optional mask under
    ground_truth/<condition>/. Unreadable images are skipped with a warning;
    a dataset with no readable samples is an error.
    """
    root = Path(root)
    if not root.is_dir():
        raise EvaluationError(f"dataset root {root} is not a directory")
    samples: list[Sample] = []
    for category_dir in sorted(p for p in root.iterdir() if p.is_dir()):
        test_dir = category_dir / "test"
        if not test_dir.is_dir():
            continue
        for condition_dir in sorted(p for p in test_dir.iterdir() if p.is_dir()):
            condition = condition_dir.name
            for image_path in sorted(condition_dir.glob("*.png")):
                try:
                    with Image.open(image_path) as im:
                        im.verify()
                except Exception as exc:
                    log.warning("skipping unreadable image %s: %s", image_path, exc)
                    continue
                stem = image_path.stem
                sample_id = f"{category_dir.name}/test/{condition}/{stem}"
                if condition == "good":
                    samples.append(
                        Sample(sample_id, str(image_path), category_dir.name, BinaryLabel.NO)
                    )
                    continue
                gt_box = None
                mask_path = _find_mask(root, category_dir.name, condition, stem)
                if mask_path is not None:
                    try:
                        with Image.open(mask_path) as mask_im:
                            gt_box = mask_to_bbox(np.asarray(mask_im.convert("L")))
                    except Exception as exc:
                        log.warning("unreadable mask %s: %s", mask_path, exc)
                samples.append(
                    Sample(
                        sample_id,
                        str(image_path),
                        category_dir.name,
                        BinaryLabel.YES,
                        defect_name=condition,
                        gt_box=gt_box,
                    )
                )
    if not samples:
        raise EvaluationError(f"no readable samples under {root}")
    return samples


@dataclass(frozen=True)
class ToolUsageStats:
    """Aggregate tool behavior over a batch of diagnosis records."""

    records: int
    call_rate: float
    avg_calls: float
    per_tool: dict[str, int]
    success_rate: float | None


def tool_usage_stats(records) -> ToolUsageStats:
    """Aggregate serialized diagnosis records (dicts with a tool_calls list)."""
    records = list(records)
    if not records:
        raise EvaluationError("no records to aggregate")
    with_calls = 0
    total_calls = 0
    successes = 0
    per_tool: dict[str, int] = {}
    for record in records:
        calls = record.get("tool_calls", [])
        if calls:
            with_calls += 1
        for call in calls:
            total_calls += 1
            per_tool[call["tool"]] = per_tool.get(call["tool"], 0) + 1
            if call.get("success"):
                successes += 1
    return ToolUsageStats(
        records=len(records),
        call_rate=with_calls / len(records),
        avg_calls=total_calls / len(records),
        per_tool=per_tool,
        success_rate=None if total_calls == 0 else successes / total_calls,
    )

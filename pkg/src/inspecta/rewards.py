"""Accuracy-gated reward math and the group-relative policy objective.

The total reward gates every shaping term behind answer correctness, so a
wrong verdict cannot earn partial credit from localization, typing, or tool
behavior; a format penalty applies unconditionally. Group math (advantage
normalization, clipped surrogate, KL regularizer) operates on plain floats so
it can be driven directly from serialized rollouts.
"""

from __future__ import annotations

import math
import re
import statistics
from dataclasses import dataclass, fields

from .imaging import BBox, parse_region
from .trajectory import BinaryLabel

DEFAULT_GROUP_SIZE = 4
DEFAULT_CLIP_EPSILON = 0.2
DEFAULT_KL_WEIGHT = 0.04


class RewardError(ValueError):
    """Raised on invalid reward inputs or configuration."""


@dataclass(frozen=True)
class RewardWeights:
    """Tuned shaping weights for the gated total reward.

    loc/type/tool weights scale their reward components inside the accuracy
    gate; tool_bonus pays for a positive confidence gain, call_cost charges
    per tool call, and format_penalty (non-positive) applies to invalid
    trajectories.
    """

    loc_weight: float = 0.8
    type_weight: float = 0.6
    tool_weight: float = 0.5
    tool_bonus: float = 0.3
    call_cost: float = 0.1
    format_penalty: float = -1.0

    def __post_init__(self):
        for name in ("loc_weight", "type_weight", "tool_weight", "tool_bonus", "call_cost"):
            value = getattr(self, name)
            if not math.isfinite(value) or value < 0:
                raise RewardError(f"{name} must be finite and >= 0, got {value}")
        if not math.isfinite(self.format_penalty) or self.format_penalty > 0:
            raise RewardError(f"format_penalty must be finite and <= 0, got {self.format_penalty}")

    @classmethod
    def from_mapping(cls, data) -> "RewardWeights":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise RewardError(f"unknown reward keys: {sorted(unknown)}")
        return cls(**{k: float(v) for k, v in data.items()})


DEFAULT_WEIGHTS = RewardWeights()


def iou(a: BBox, b: BBox) -> float:
    """Intersection over union of two boxes; 0 when disjoint."""
    ix0 = max(a.x0, b.x0)
    iy0 = max(a.y0, b.y0)
    ix1 = min(a.x1, b.x1)
    iy1 = min(a.y1, b.y1)
    if ix1 <= ix0 or iy1 <= iy0:
        return 0.0
    inter = (ix1 - ix0) * (iy1 - iy0)
    union = a.area + b.area - inter
    return inter / union


def location_reward(pred_box: BBox | None, gt_box: BBox | None) -> float:
    """IoU when both boxes exist; 1.0 for correctly reporting no location."""
    if gt_box is None and pred_box is None:
        return 1.0
    if gt_box is None or pred_box is None:
        return 0.0
    return iou(pred_box, gt_box)


# defect families for graded type credit; leaves are canonical defect names
DEFAULT_TAXONOMY: dict[str, tuple[str, ...]] = {
    "surface-mark": ("scratch", "stain", "discoloration", "smudge", "print", "spot"),
    "structural": ("crack", "dent", "bend", "chip", "break", "deformation", "cut"),
    "missing": ("hole", "missing-part", "absent-component", "gap"),
    "contamination": ("contamination", "dirt", "particle", "debris", "foreign-object"),
    "texture": ("texture-irregularity", "weave-defect", "rough-patch", "fray"),
}

DEFAULT_TYPE_ALIASES: dict[str, str] = {
    "scratched": "scratch",
    "scratches": "scratch",
    "stained": "stain",
    "discolouration": "discoloration",
    "color": "discoloration",
    "bent": "bend",
    "bent-lead": "bend",
    "bent-wire": "bend",
    "broken": "break",
    "broken-large": "break",
    "broken-small": "break",
    "broken-teeth": "break",
    "cracked": "crack",
    "contaminated": "contamination",
    "poke": "dent",
    "thread": "fray",
}

def normalize_defect_type(name: str, aliases: dict[str, str] | None = None) -> str:
    """Canonical defect-type key: casefold, collapse separators, apply aliases."""
    canon = re.sub(r"[\s_\-]+", "-", name.strip().lower()).strip("-")
    table = DEFAULT_TYPE_ALIASES if aliases is None else aliases
    return table.get(canon, canon)


def _family_of(leaf: str, taxonomy: dict[str, tuple[str, ...]]) -> str | None:
    for family, leaves in taxonomy.items():
        if leaf in leaves:
            return family
    return None


def type_reward(
    pred: str,
    gt: str,
    taxonomy: dict[str, tuple[str, ...]] | None = None,
    aliases: dict[str, str] | None = None,
    *,
    strict_gt: bool = True,
) -> float:
    """Graded defect-type credit: exact 1.0, same family 0.5, else 0.0.

    The ground-truth type must be a taxonomy leaf; with strict_gt=False an
    unknown ground truth degrades to exact-match scoring instead of raising
    (useful against datasets with free-form defect folder names).
    """
    tax = DEFAULT_TAXONOMY if taxonomy is None else taxonomy
    pred_c = normalize_defect_type(pred, aliases)
    gt_c = normalize_defect_type(gt, aliases)
    gt_family = _family_of(gt_c, tax)
    if gt_family is None:
        if strict_gt:
            raise RewardError(f"ground-truth type {gt!r} is not in the taxonomy")
        return 1.0 if pred_c == gt_c else 0.0
    if pred_c == gt_c:
        return 1.0
    if _family_of(pred_c, tax) == gt_family:
        return 0.5
    return 0.0


def type_reward_optional(
    pred: str | None,
    gt: str | None,
    taxonomy: dict[str, tuple[str, ...]] | None = None,
    aliases: dict[str, str] | None = None,
    *,
    strict_gt: bool = True,
) -> float:
    """Type credit with absence handled: silent on normal samples scores 1.0."""
    if gt is None:
        return 1.0 if pred is None else 0.0
    if pred is None:
        return 0.0
    return type_reward(pred, gt, taxonomy, aliases, strict_gt=strict_gt)


def answer_margin(logp_yes: float, logp_no: float, label: BinaryLabel) -> float:
    """Log-prob margin of the given label over its flip."""
    margin = logp_yes - logp_no
    return margin if label is BinaryLabel.YES else -margin


def tool_reward(
    num_calls: int, margin_gain: float | None, weights: RewardWeights = DEFAULT_WEIGHTS
) -> float:
    """Bonus for a positive confidence gain minus a per-call cost.

    A missing (None) gain counts as no gain, so tool use without measurable
    benefit only pays the call cost.
    """
    if num_calls < 0:
        raise RewardError(f"num_calls must be >= 0, got {num_calls}")
    gained = margin_gain is not None and margin_gain > 0.0
    return weights.tool_bonus * (1.0 if gained else 0.0) - weights.call_cost * num_calls


def total_reward(
    accuracy: bool,
    location_score: float,
    type_score: float,
    tool_score: float,
    format_valid: bool,
    weights: RewardWeights = DEFAULT_WEIGHTS,
) -> float:
    """Accuracy-gated total: wrong answers earn only the format term.

    total = acc * (1 + loc_w*loc + type_w*type + tool_w*tool) + format_term
    where acc is 0/1 and format_term is 0 when valid else format_penalty.
    """
    for name, value in (("location_score", location_score), ("type_score", type_score)):
        if not (0.0 <= value <= 1.0):
            raise RewardError(f"{name} must be in [0, 1], got {value}")
    if not math.isfinite(tool_score):
        raise RewardError(f"tool_score must be finite, got {tool_score}")
    gate = 1.0 if accuracy else 0.0
    shaped = 1.0 + (
        weights.loc_weight * location_score
        + weights.type_weight * type_score
        + weights.tool_weight * tool_score
    )
    format_term = 0.0 if format_valid else weights.format_penalty
    return gate * shaped + format_term


def group_advantages(rewards, *, sample_std: bool = False, std_floor: float = 1e-8):
    """Within-group standardized advantages.

    Population std by default; a degenerate group (std below the floor)
    yields all-zero advantages instead of dividing by noise.
    """
    values = [float(r) for r in rewards]
    if not values:
        raise RewardError("rewards must be non-empty")
    if any(not math.isfinite(v) for v in values):
        raise RewardError("rewards must be finite")
    if sample_std:
        if len(values) < 2:
            raise RewardError("sample std needs at least 2 rewards")
        std = statistics.stdev(values)
    else:
        std = statistics.pstdev(values)
    if std < std_floor:
        return [0.0] * len(values)
    mean = statistics.fmean(values)
    return [(v - mean) / std for v in values]


def kl_estimate(logp_theta: float, logp_ref: float) -> float:
    """Non-negative per-token KL estimate r - ln r - 1 with r = p_ref / p_theta.

    Computed as expm1(d) - d for d = logp_ref - logp_theta, which is exact at
    d = 0 and accurate for small |d|. Raises OverflowError when d is too
    large for the exponential.
    """
    if not (math.isfinite(logp_theta) and math.isfinite(logp_ref)):
        raise RewardError("log-probabilities must be finite")
    d = logp_ref - logp_theta
    if d > 709.0:
        raise OverflowError(f"log ratio {d} overflows the KL estimator")
    return math.expm1(d) - d


def clipped_surrogate(ratio: float, advantage: float, epsilon: float) -> float:
    """min(ratio * A, clip(ratio, 1-eps, 1+eps) * A)."""
    if not math.isfinite(ratio) or ratio <= 0:
        raise RewardError(f"ratio must be finite and > 0, got {ratio}")
    if not math.isfinite(epsilon) or epsilon <= 0:
        raise RewardError(f"epsilon must be > 0, got {epsilon}")
    clipped = min(max(ratio, 1.0 - epsilon), 1.0 + epsilon)
    return min(ratio * advantage, clipped * advantage)


def grpo_objective(
    ratios,
    advantages,
    kls,
    *,
    epsilon: float = DEFAULT_CLIP_EPSILON,
    kl_weight: float = DEFAULT_KL_WEIGHT,
) -> float:
    """Group loss: negated mean of clipped surrogate minus KL penalty.

    loss = -(1/G) * sum_i [ min(r_i A_i, clip(r_i) A_i) - kl_weight * kl_i ]

    With all-zero advantages this reduces to kl_weight * mean(kls); as
    epsilon grows the clip becomes a no-op and the surrogate is exactly
    ratio * advantage.
    """
    ratios = [float(r) for r in ratios]
    advantages = [float(a) for a in advantages]
    kls = [float(k) for k in kls]
    if not ratios or len(ratios) != len(advantages) or len(ratios) != len(kls):
        raise RewardError(
            f"group lengths must match and be >= 1: {len(ratios)}, {len(advantages)}, {len(kls)}"
        )
    if any(not math.isfinite(a) for a in advantages):
        raise RewardError("advantages must be finite")
    if not math.isfinite(kl_weight) or kl_weight < 0:
        raise RewardError(f"kl_weight must be >= 0, got {kl_weight}")
    total = 0.0
    for ratio, advantage, kl in zip(ratios, advantages, kls):
        if not math.isfinite(kl) or kl < 0:
            raise RewardError(f"kl terms must be >= 0, got {kl}")
        total += clipped_surrogate(ratio, advantage, epsilon) - kl_weight * kl
    return -total / len(ratios)


@dataclass(frozen=True)
class RewardBreakdown:
    """Per-trajectory reward components plus the gated total."""

    sample_id: str
    accuracy: bool
    location_score: float
    type_score: float
    tool_score: float
    format_valid: bool
    margin_gain: float | None
    num_calls: int
    total: float

    def to_json_dict(self) -> dict:
        return {
            "sample_id": self.sample_id,
            "accuracy": self.accuracy,
            "location_score": self.location_score,
            "type_score": self.type_score,
            "tool_score": self.tool_score,
            "format_valid": self.format_valid,
            "margin_gain": self.margin_gain,
            "num_calls": self.num_calls,
            "total": self.total,
        }


def score_record(record: dict, sample, weights: RewardWeights = DEFAULT_WEIGHTS) -> RewardBreakdown:
    """Score one serialized diagnosis record against its dataset sample.

    Location credit needs numeric coordinates in the reported location text;
    free-form location prose scores 0 against a ground-truth box. Unknown
    ground-truth defect names degrade type credit to exact matching.
    """
    final = record.get("final", {})
    answer = BinaryLabel.from_text(str(final.get("answer") or ""), lenient=True)
    # a completion with no parseable verdict is simply wrong; the format
    # penalty (not an exception) is the training signal for that failure
    accuracy = answer is sample.label

    location_text = final.get("location")
    pred_box = parse_region(location_text) if location_text else None
    gt_box = sample.gt_box if sample.label is BinaryLabel.YES else None
    location_score = location_reward(pred_box, gt_box)

    pred_type = final.get("defect_type")
    gt_type = sample.defect_name if sample.label is BinaryLabel.YES else None
    type_score = type_reward_optional(pred_type, gt_type, strict_gt=False)

    margins = record.get("margins")
    margin_gain = None
    if margins and margins.get("before") is not None and margins.get("after") is not None:
        margin_gain = float(margins["after"]) - float(margins["before"])

    calls = record.get("tool_calls", [])
    tool_score = tool_reward(len(calls), margin_gain, weights)
    format_valid = bool(record.get("format_valid", False))
    total = total_reward(accuracy, location_score, type_score, tool_score, format_valid, weights)
    return RewardBreakdown(
        sample_id=str(record.get("sample_id", sample.sample_id)),
        accuracy=accuracy,
        location_score=location_score,
        type_score=type_score,
        tool_score=tool_score,
        format_valid=format_valid,
        margin_gain=margin_gain,
        num_calls=len(calls),
        total=total,
    )

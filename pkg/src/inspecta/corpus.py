"""Training-corpus construction: teacher-distilled trajectories and SFT export.

A two-stage pipeline builds each training target. Stage one asks a teacher
policy for a grounded visual description under the annotation constraints;
stage two converts that description into a tagged trajectory, retrying with
violation feedback when the output fails strict parsing or contradicts the
annotation. An optional judge policy rates candidates and the best one is
kept. Export writes SFT-ready JSONL where observation contents are masked
out of the loss spans (tool outputs are environment text, not supervision).
"""

from __future__ import annotations

import json
import logging
import random
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

from . import prompts
from .policy_gateway import GatewayError, PolicyRequest
from .trajectory import (
    BinaryLabel,
    Observation as ObservationSegment,
    Trajectory,
    parse_trajectory,
    _segment_entry,
)

log = logging.getLogger(__name__)

DEFAULT_QUESTION = "Is there any anomaly in the image?"

# phrases that must never leak from construction prompts into targets
_LEAK_PHRASES = ("ground-truth supervision", "supervision constraint")

_SCORE_RE = re.compile(r"-?\d+(?:\.\d+)?")


class CorpusError(ValueError):
    pass


@dataclass(frozen=True)
class CotRecord:
    """One constructed training trajectory and its provenance."""

    sample: object
    stage1_description: str
    trajectory: Trajectory | None
    raw_text: str
    judge_score: float | None
    attempts: int
    status: str  # valid | repaired | rejected
    failure: str | None

    def to_json_dict(self) -> dict:
        return {
            "sample_id": self.sample.sample_id,
            "image_path": str(self.sample.path),
            "category": self.sample.category,
            "label": self.sample.label.text,
            "stage1_description": self.stage1_description,
            "trajectory_text": self.trajectory.render() if self.trajectory else None,
            "raw_text": self.raw_text,
            "judge_score": self.judge_score,
            "attempts": self.attempts,
            "status": self.status,
            "failure": self.failure,
        }


def _supervision_fields(sample) -> tuple[dict, dict]:
    """Placeholder values for the stage-one and stage-two templates."""
    location = "N/A"
    if sample.gt_box is not None:
        b = sample.gt_box
        location = f"{b.x0},{b.y0},{b.x1},{b.y1}"
    shared = {
        "LOCATION or N/A": location,
        "ANOMALY_TYPE or N/A": sample.defect_name or "N/A",
    }
    stage1 = {
        "normal or abnormal": "abnormal" if sample.label is BinaryLabel.YES else "normal",
        **shared,
    }
    stage2 = {"Yes or No": sample.label.text, **shared}
    return stage1, stage2


class CorpusBuilder:
    """Drives one teacher (and optional judge) policy through the pipeline."""

    def __init__(
        self,
        teacher,
        judge=None,
        *,
        max_attempts: int = 3,
        temperature: float = 0.7,
        max_tokens: int = 1024,
    ):
        if max_attempts < 1:
            raise CorpusError("max_attempts must be at least 1")
        self._teacher = teacher
        self._judge = judge
        self._max_attempts = max_attempts
        self._temperature = temperature
        self._max_tokens = max_tokens

    def _complete(self, policy, messages, images) -> str:
        request = PolicyRequest(
            messages=tuple(messages),
            images=tuple(images),
            temperature=self._temperature,
            max_tokens=self._max_tokens,
        )
        return policy.complete(request).text

    def build_trajectory(
        self, sample, image_png: bytes | None = None, *, num_candidates: int = 1, view: str = "unspecified"
    ) -> CotRecord:
        """Construct one training trajectory for a dataset sample.

        Collects up to ``num_candidates`` valid candidates within the attempt
        budget (best-effort: one valid candidate is enough to succeed), then
        keeps the judge's argmax, or the first candidate when no judge is
        configured or the judge is unreachable.
        """
        if num_candidates < 1:
            raise CorpusError("num_candidates must be at least 1")
        stage1_fields, stage2_fields = _supervision_fields(sample)
        images = (image_png,) if image_png else ()

        stage1_prompt = prompts.render(
            "stage1_description",
            {"CATEGORY": sample.category, "VIEW_ID": view, **stage1_fields},
        )
        stage1_text = self._complete(self._teacher, (("user", stage1_prompt),), images)

        stage2_prompt = (
            prompts.render("stage2_trajectory", stage2_fields)
            + "\n\nDetailed description:\n"
            + stage1_text
        )

        candidates: list[tuple[Trajectory, str]] = []
        transcript = [("user", stage2_prompt)]
        attempts = 0
        had_invalid = False
        last_failure = None
        last_raw = ""
        while attempts < self._max_attempts and len(candidates) < num_candidates:
            attempts += 1
            raw = self._complete(self._teacher, transcript, images)
            last_raw = raw
            parsed = parse_trajectory(raw, strict=True)
            if isinstance(parsed, Trajectory):
                if parsed.answer is sample.label:
                    candidates.append((parsed, raw))
                    transcript = [("user", stage2_prompt)]  # fresh ask for the next candidate
                    continue
                last_failure = "final answer contradicts the annotation"
                feedback = (
                    "The previous trajectory reached the wrong final answer. "
                    "Rewrite it so the diagnosis is consistent with the constraints."
                )
            else:
                codes = ", ".join(sorted(parsed.codes))
                last_failure = f"format violations: {codes}"
                feedback = (
                    f"The previous trajectory violated the output format ({codes}). "
                    "Rewrite it strictly following the tag format rules."
                )
            had_invalid = True
            transcript = transcript + [("assistant", raw), ("user", feedback)]

        if not candidates:
            return CotRecord(
                sample=sample,
                stage1_description=stage1_text,
                trajectory=None,
                raw_text=last_raw,
                judge_score=None,
                attempts=attempts,
                status="rejected",
                failure=last_failure,
            )

        trajectory, raw = candidates[0]
        score = None
        if self._judge is not None:
            scores = [self._judge_score(t) for t, _ in candidates]
            if all(s is not None for s in scores):
                best = max(range(len(scores)), key=lambda i: (scores[i], -i))
                trajectory, raw = candidates[best]
                score = scores[best]
            else:
                log.warning(
                    "judge unavailable for %s; keeping first candidate", sample.sample_id
                )
        return CotRecord(
            sample=sample,
            stage1_description=stage1_text,
            trajectory=trajectory,
            raw_text=raw,
            judge_score=score,
            attempts=attempts,
            status="repaired" if had_invalid else "valid",
            failure=None,
        )

    def _judge_score(self, trajectory: Trajectory) -> float | None:
        prompt = prompts.render("judge_score", {"trajectory": trajectory.render()})
        try:
            reply = self._complete(self._judge, (("user", prompt),), ())
        except GatewayError as exc:
            log.warning("judge call failed: %s", exc)
            return None
        match = _SCORE_RE.search(reply)
        if match is None:
            return None
        value = float(match.group(0))
        return value if 0.0 <= value <= 1.0 else None


def build_corpus(samples, builder_factory, *, num_candidates: int = 1, jobs: int = 1) -> list:
    """Run the builder over samples concurrently, results in input order.

    ``builder_factory(sample)`` returns the CorpusBuilder for that sample, so
    scripted teachers stay keyed by sample under concurrency.
    """
    if jobs < 1:
        raise CorpusError("jobs must be at least 1")

    def work(sample):
        builder = builder_factory(sample)
        image_png = Path(sample.path).read_bytes()
        try:
            return builder.build_trajectory(
                sample, image_png, num_candidates=num_candidates
            )
        except GatewayError as exc:
            log.warning("teacher failed on %s: %s", sample.sample_id, exc)
            return CotRecord(
                sample=sample,
                stage1_description="",
                trajectory=None,
                raw_text="",
                judge_score=None,
                attempts=0,
                status="rejected",
                failure=f"teacher failure: {exc}",
            )

    if jobs == 1:
        return [work(s) for s in samples]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(work, samples))


def _push_span(spans: list, start: int, end: int) -> None:
    if spans and spans[-1][1] == start:
        spans[-1][1] = end
    else:
        spans.append([start, end])


def compute_loss_spans(trajectory: Trajectory) -> list:
    """Character spans of the render that carry training loss.

    Everything is supervised except observation contents: those are produced
    by the environment at inference time, so imitating them teaches the model
    to hallucinate tool output. The observation tags themselves stay in the
    loss so the model learns where observations sit in the structure.
    """
    spans: list = []
    cursor = 0
    for segment in trajectory.segments:
        tag, content = _segment_entry(segment)
        piece = f"<{tag}>{content}</{tag}>"
        end = cursor + len(piece)
        if isinstance(segment, ObservationSegment):
            _push_span(spans, cursor, cursor + len(tag) + 2)
            _push_span(spans, end - len(tag) - 3, end)
        else:
            _push_span(spans, cursor, end)
        cursor = end
    return spans


def _scan_for_leaks(text: str, sample_id: str) -> None:
    lowered = text.lower()
    for phrase in _LEAK_PHRASES:
        if phrase in lowered:
            raise CorpusError(
                f"record {sample_id!r} leaks construction prompt text ({phrase!r})"
            )


def export_sft(
    records,
    path,
    *,
    balance: bool = False,
    seed: int = 0,
    question: str = DEFAULT_QUESTION,
) -> int:
    """Write serialized corpus records as SFT JSONL; returns lines written.

    Accepts the dict form produced by CotRecord.to_json_dict. Rejected
    records are a hard error: silently dropping them would hide corpus
    quality problems. ``balance`` downsamples the majority label class with
    a seeded RNG, preserving input order.
    """
    rows = []
    for record in records:
        status = record.get("status")
        if status == "rejected":
            raise CorpusError(
                f"record {record.get('sample_id')!r} was rejected; "
                "filter or rebuild before export"
            )
        text = record.get("trajectory_text")
        if not text:
            raise CorpusError(f"record {record.get('sample_id')!r} has no trajectory")
        parsed = parse_trajectory(text, strict=True)
        if not isinstance(parsed, Trajectory):
            raise CorpusError(
                f"record {record.get('sample_id')!r} trajectory fails strict parsing"
            )
        target_text = parsed.render()
        _scan_for_leaks(target_text, record.get("sample_id"))
        rows.append((record, parsed, target_text))

    if balance:
        yes_rows = [r for r in rows if r[0]["label"] == "Yes"]
        no_rows = [r for r in rows if r[0]["label"] == "No"]
        small = min(len(yes_rows), len(no_rows))
        majority = yes_rows if len(yes_rows) > len(no_rows) else no_rows
        if len(majority) > small:
            keep = set(
                random.Random(seed).sample(range(len(majority)), small)
            )
            trimmed = [r for i, r in enumerate(majority) if i in keep]
            kept = set(id(r) for r in trimmed) | set(
                id(r) for r in (no_rows if majority is yes_rows else yes_rows)
            )
            rows = [r for r in rows if id(r) in kept]

    instruction = prompts.render("training_instruction", {"Question": question})
    _scan_for_leaks(instruction, "<instruction>")
    path = Path(path)
    with path.open("w") as fh:
        for record, parsed, target_text in rows:
            line = {
                "images": [record["image_path"]],
                "instruction": instruction,
                "target_text": target_text,
                "loss_spans": compute_loss_spans(parsed),
            }
            fh.write(json.dumps(line) + "\n")
    return len(rows)

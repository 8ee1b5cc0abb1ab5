"""Corpus construction pipeline and SFT export."""

import json
import random
import re

import pytest

import _fixtures
import _gen
from inspecta.corpus import (
    CorpusBuilder,
    CorpusError,
    CotRecord,
    build_corpus,
    compute_loss_spans,
    export_sft,
)
from inspecta.evaluation import Sample, load_dataset
from inspecta.imaging import BBox
from inspecta.policy_gateway import PolicyResponse, ScriptedPolicy
from inspecta.trajectory import BinaryLabel, Trajectory, parse_trajectory

STAGE1 = "The board shows parallel traces; the lower left pad looks smeared."
NO_TRAJ = "<think>surface is uniform and clean</think><answer>No</answer>"
YES_TRAJ = (
    "<think>dark smear near the pad</think><location>(3, 4, 9, 11)</location>"
    "<type>scratch</type><answer>Yes</answer>"
)
TOOL_TRAJ = (
    "<think>possible smear, zooming in</think>"
    "<call_tool>crop x0=2 y0=3 x1=12 y1=13</call_tool>"
    "<observation>magnified view shows a dark streak</observation>"
    "<think>the streak is a real mark</think>"
    "<location>(3, 4, 9, 11)</location><type>scratch</type><answer>Yes</answer>"
)


def yes_sample(sample_id="pcb/test/scratch/000", path="img.png"):
    return Sample(sample_id, path, "pcb", BinaryLabel.YES, "scratch", BBox(3, 4, 9, 11))


def no_sample(sample_id="pcb/test/good/000", path="img.png"):
    return Sample(sample_id, path, "pcb", BinaryLabel.NO)


def teacher_with(*replies):
    return ScriptedPolicy([PolicyResponse(r) for r in replies])


class TestBuildTrajectory:
    def test_happy_path_without_judge(self):
        teacher = teacher_with(STAGE1, YES_TRAJ)
        builder = CorpusBuilder(teacher)
        record = builder.build_trajectory(yes_sample(), b"png")

        assert record.status == "valid"
        assert record.attempts == 1
        assert record.judge_score is None
        assert record.failure is None
        assert isinstance(record.trajectory, Trajectory)
        assert record.trajectory.answer is BinaryLabel.YES
        assert record.stage1_description == STAGE1

        stage1_prompt = teacher.requests[0].messages[0][1]
        assert "Product category: pcb." in stage1_prompt
        assert "abnormal" in stage1_prompt
        assert "3,4,9,11" in stage1_prompt
        assert "scratch" in stage1_prompt
        assert "{CATEGORY}" not in stage1_prompt

        stage2_prompt = teacher.requests[1].messages[0][1]
        assert stage2_prompt.endswith("Detailed description:\n" + STAGE1)
        assert "Final anomaly answer: Yes." in stage2_prompt

    def test_normal_sample_fields(self):
        teacher = teacher_with(STAGE1, NO_TRAJ)
        builder = CorpusBuilder(teacher)
        record = builder.build_trajectory(no_sample(), b"png")
        assert record.status == "valid"
        stage1_prompt = teacher.requests[0].messages[0][1]
        assert "anomaly label: normal" in stage1_prompt
        assert "location: N/A" in stage1_prompt
        stage2_prompt = teacher.requests[1].messages[0][1]
        assert "Final anomaly answer: No." in stage2_prompt

    def test_repair_after_format_violation(self):
        teacher = teacher_with(STAGE1, "not a trajectory at all", NO_TRAJ)
        builder = CorpusBuilder(teacher)
        record = builder.build_trajectory(no_sample(), b"png")

        assert record.status == "repaired"
        assert record.attempts == 2
        assert record.trajectory is not None

        retry = teacher.requests[2].messages
        assert [role for role, _ in retry] == ["user", "assistant", "user"]
        assert retry[1][1] == "not a trajectory at all"
        assert "violated the output format" in retry[2][1]

    def test_repair_after_wrong_answer(self):
        teacher = teacher_with(STAGE1, NO_TRAJ, YES_TRAJ)
        builder = CorpusBuilder(teacher)
        record = builder.build_trajectory(yes_sample(), b"png")
        assert record.status == "repaired"
        assert record.trajectory.answer is BinaryLabel.YES
        feedback = teacher.requests[2].messages[2][1]
        assert "wrong final answer" in feedback

    def test_rejection_at_attempt_cap(self):
        teacher = teacher_with(STAGE1, "junk one", "junk two", "junk three")
        builder = CorpusBuilder(teacher, max_attempts=3)
        record = builder.build_trajectory(no_sample(), b"png")
        assert record.status == "rejected"
        assert record.attempts == 3
        assert record.trajectory is None
        assert record.raw_text == "junk three"
        assert "format violations" in record.failure

    def test_judge_argmax_selection(self):
        teacher = teacher_with(STAGE1, YES_TRAJ, TOOL_TRAJ)
        judge = teacher_with("0.4", "0.9")
        builder = CorpusBuilder(teacher, judge)
        record = builder.build_trajectory(yes_sample(), b"png", num_candidates=2)

        assert record.status == "valid"
        assert record.judge_score == 0.9
        assert record.trajectory.tool_calls  # the second candidate used a tool
        # judge saw the rendered candidates
        judged = judge.requests[0].messages[0][1]
        assert YES_TRAJ in judged

    def test_judge_tie_keeps_first(self):
        teacher = teacher_with(STAGE1, YES_TRAJ, TOOL_TRAJ)
        judge = teacher_with("0.8", "0.8")
        builder = CorpusBuilder(teacher, judge)
        record = builder.build_trajectory(yes_sample(), b"png", num_candidates=2)
        assert record.judge_score == 0.8
        assert not record.trajectory.tool_calls

    def test_judge_unreachable_keeps_first_without_score(self):
        teacher = teacher_with(STAGE1, YES_TRAJ, TOOL_TRAJ)
        builder = CorpusBuilder(teacher, ScriptedPolicy([]))
        record = builder.build_trajectory(yes_sample(), b"png", num_candidates=2)
        assert record.judge_score is None
        assert not record.trajectory.tool_calls
        assert record.status == "valid"

    def test_judge_garbage_reply_keeps_first(self):
        teacher = teacher_with(STAGE1, YES_TRAJ, TOOL_TRAJ)
        judge = teacher_with("splendid work", "0.5")
        builder = CorpusBuilder(teacher, judge)
        record = builder.build_trajectory(yes_sample(), b"png", num_candidates=2)
        assert record.judge_score is None
        assert not record.trajectory.tool_calls

    def test_judge_score_out_of_range_rejected(self):
        teacher = teacher_with(STAGE1, YES_TRAJ)
        judge = teacher_with("7.5")
        builder = CorpusBuilder(teacher, judge)
        record = builder.build_trajectory(yes_sample(), b"png")
        assert record.judge_score is None

    def test_best_effort_candidates(self):
        # budget allows only one valid candidate although two were requested
        teacher = teacher_with(STAGE1, "junk", YES_TRAJ, "junk")
        builder = CorpusBuilder(teacher, max_attempts=3)
        record = builder.build_trajectory(yes_sample(), b"png", num_candidates=2)
        assert record.status == "repaired"
        assert record.trajectory is not None
        assert record.attempts == 3

    def test_to_json_dict(self):
        teacher = teacher_with(STAGE1, YES_TRAJ)
        record = CorpusBuilder(teacher).build_trajectory(yes_sample(), b"png")
        data = record.to_json_dict()
        assert data["sample_id"] == "pcb/test/scratch/000"
        assert data["label"] == "Yes"
        assert data["trajectory_text"] == YES_TRAJ
        assert data["status"] == "valid"
        assert data["judge_score"] is None


class TestBuildCorpus:
    def test_order_and_failure_isolation(self, tmp_path):
        _fixtures.build_dataset(tmp_path, {"pcb1": {"good": 2}})
        samples = load_dataset(tmp_path)

        scripts = {
            samples[0].sample_id: teacher_with(STAGE1, NO_TRAJ),
            samples[1].sample_id: ScriptedPolicy([]),  # teacher dies immediately
        }
        records = build_corpus(
            samples, lambda s: CorpusBuilder(scripts[s.sample_id]), jobs=2
        )
        assert [r.sample.sample_id for r in records] == [s.sample_id for s in samples]
        assert records[0].status == "valid"
        assert records[1].status == "rejected"
        assert "teacher failure" in records[1].failure


class TestLossSpans:
    def test_hand_case(self):
        text = (
            "<think>a</think><call_tool>crop x0=1</call_tool>"
            "<observation>obs text</observation><think>b</think><answer>No</answer>"
        )
        parsed = parse_trajectory(text, strict=True)
        assert isinstance(parsed, Trajectory)
        spans = compute_loss_spans(parsed)
        assert spans == [[0, 61], [69, 118]]
        masked = "".join(text[s:e] for s, e in spans)
        assert "obs text" not in masked
        assert masked.count("<observation>") == 1
        assert masked.count("</observation>") == 1

    def test_against_regex_oracle(self):
        rng = random.Random(41)
        pattern = re.compile(r"(<observation>).*?(</observation>)", re.S)
        for _ in range(100):
            trajectory = _gen.random_trajectory(rng)
            rendered = trajectory.render()
            parsed = parse_trajectory(rendered, strict=True)
            assert isinstance(parsed, Trajectory)
            spans = compute_loss_spans(parsed)
            masked = "".join(rendered[s:e] for s, e in spans)
            assert masked == pattern.sub(r"\1\2", rendered)
            # spans are sorted, non-overlapping, within bounds
            prev = 0
            for s, e in spans:
                assert prev <= s < e <= len(rendered)
                prev = e

    def test_no_tools_covers_everything(self):
        parsed = parse_trajectory(NO_TRAJ, strict=True)
        assert compute_loss_spans(parsed) == [[0, len(NO_TRAJ)]]


class TestExportSft:
    def _records(self):
        r1 = CotRecord(
            yes_sample(path="a.png"), STAGE1, parse_trajectory(TOOL_TRAJ, strict=True),
            TOOL_TRAJ, 0.9, 1, "valid", None,
        )
        r2 = CotRecord(
            no_sample(path="b.png"), STAGE1, parse_trajectory(NO_TRAJ, strict=True),
            NO_TRAJ, None, 1, "valid", None,
        )
        return [r1.to_json_dict(), r2.to_json_dict()]

    def test_export_lines(self, tmp_path):
        out = tmp_path / "sft.jsonl"
        written = export_sft(self._records(), out, question="Any defect present?")
        assert written == 2
        lines = [json.loads(l) for l in out.read_text().splitlines()]
        assert lines[0]["images"] == ["a.png"]
        assert lines[0]["target_text"] == TOOL_TRAJ
        assert lines[0]["loss_spans"]
        assert "Any defect present?" in lines[0]["instruction"]
        assert "{Question}" not in lines[0]["instruction"]
        # observation content masked
        spans = lines[0]["loss_spans"]
        masked = "".join(TOOL_TRAJ[s:e] for s, e in spans)
        assert "magnified view shows a dark streak" not in masked

    def test_rejected_record_is_an_error(self, tmp_path):
        bad = CotRecord(
            no_sample(), STAGE1, None, "junk", None, 3, "rejected", "format violations: x"
        ).to_json_dict()
        with pytest.raises(CorpusError):
            export_sft([bad], tmp_path / "sft.jsonl")

    def test_leaked_supervision_phrase_is_an_error(self, tmp_path):
        leaky = (
            "<think>per the ground-truth supervision constraints this is fine</think>"
            "<answer>No</answer>"
        )
        record = CotRecord(
            no_sample(), STAGE1, parse_trajectory(leaky, strict=True),
            leaky, None, 1, "valid", None,
        ).to_json_dict()
        with pytest.raises(CorpusError):
            export_sft([record], tmp_path / "sft.jsonl")

    def test_balance_downsamples_majority(self, tmp_path):
        records = []
        for i in range(3):
            records.append(
                CotRecord(
                    yes_sample(f"pcb/test/scratch/{i:03d}", f"y{i}.png"), STAGE1,
                    parse_trajectory(YES_TRAJ, strict=True), YES_TRAJ, None, 1, "valid", None,
                ).to_json_dict()
            )
        records.append(
            CotRecord(
                no_sample(path="n0.png"), STAGE1,
                parse_trajectory(NO_TRAJ, strict=True), NO_TRAJ, None, 1, "valid", None,
            ).to_json_dict()
        )
        out = tmp_path / "sft.jsonl"
        assert export_sft(records, out, balance=True, seed=3) == 2
        lines = [json.loads(l) for l in out.read_text().splitlines()]
        images = [l["images"][0] for l in lines]
        assert "n0.png" in images
        assert len([i for i in images if i.startswith("y")]) == 1

        # deterministic for a fixed seed
        out2 = tmp_path / "sft2.jsonl"
        export_sft(records, out2, balance=True, seed=3)
        assert out.read_text() == out2.read_text()

    def test_balance_keeps_input_order(self, tmp_path):
        records = self._records()
        out = tmp_path / "sft.jsonl"
        export_sft(records, out, balance=True, seed=0)
        lines = [json.loads(l) for l in out.read_text().splitlines()]
        assert [l["images"][0] for l in lines] == ["a.png", "b.png"]

"""Acceptance suite: one test per shipped guarantee, one printed line each.

Every criterion is checked at its stated numeric tolerance and runtime cap
against an independent straight-line oracle (never against the implementation
itself). Run with ``pytest -s tests/test_acceptance.py`` to see the PASS line
per criterion; a pytest failure line marks the criterion that did not hold.
"""

import json
import math
import random
import statistics
import time
from fractions import Fraction
from itertools import accumulate
from pathlib import Path

import numpy as np
from click.testing import CliRunner

import _fixtures
import _gen
from inspecta.cli import main as cli_main
from inspecta.evaluation import (
    Sample,
    anomaly_recall,
    balanced_accuracy,
    category_disjoint_filter,
    confusion_from_predictions,
    f1_score,
    tool_usage_stats,
)
from inspecta.imaging import BBox, RasterImage, clahe, edge_map, foreground_extract, otsu_threshold
from inspecta.rewards import (
    group_advantages,
    grpo_objective,
    iou,
    kl_estimate,
    tool_reward,
    total_reward,
)
from inspecta.trajectory import (
    BinaryLabel,
    parse_baseline_answer,
    parse_trajectory,
    render_trajectory,
)


def _pass(number: int, label: str, elapsed: float | None = None) -> None:
    suffix = f" [{elapsed:.2f}s]" if elapsed is not None else ""
    print(f"PASS criterion {number:2d}: {label}{suffix}")


# --------------------------------------------------------------------------
# 1. reward arithmetic


def test_criterion_01_reward_arithmetic():
    start = time.perf_counter()
    rng = random.Random(101)
    cases = []
    for _ in range(50):
        cases.append((
            rng.random() < 0.5,            # accuracy
            round(rng.random(), 6),        # location score
            round(rng.random(), 6),        # type score
            rng.randrange(0, 5),           # tool calls
            rng.random() < 0.5,            # confidence gained
            rng.random() < 0.7,            # format valid
        ))

    for acc, loc, typ, ncalls, gained, valid in cases:
        margin = 0.7 if gained else rng.choice([None, -0.4, 0.0])
        tool = tool_reward(ncalls, margin)
        tool_hand = 0.3 * (1.0 if gained else 0.0) - 0.1 * ncalls
        assert abs(tool - tool_hand) <= 1e-9

        total = total_reward(acc, loc, typ, tool, valid)
        hand = (1.0 if acc else 0.0) * (1.0 + 0.8 * loc + 0.6 * typ + 0.5 * tool_hand)
        hand += 0.0 if valid else -1.0
        assert abs(total - hand) <= 1e-9, (acc, loc, typ, ncalls, gained, valid)

        # the accuracy gate: a wrong answer earns exactly the format term
        gated = total_reward(False, loc, typ, tool, valid)
        assert gated == (0.0 if valid else -1.0)

    elapsed = time.perf_counter() - start
    assert elapsed < 1.0, f"reward table took {elapsed:.2f}s"
    _pass(1, "reward arithmetic, 50-case table + accuracy gate", elapsed)


# --------------------------------------------------------------------------
# 2. grpo math


def _grpo_straight_line(ratios, advantages, kls, epsilon, kl_weight):
    acc = 0.0
    for r, a, k in zip(ratios, advantages, kls):
        clipped = r
        if clipped < 1.0 - epsilon:
            clipped = 1.0 - epsilon
        if clipped > 1.0 + epsilon:
            clipped = 1.0 + epsilon
        surrogate = r * a
        alt = clipped * a
        if alt < surrogate:
            surrogate = alt
        acc += surrogate - kl_weight * k
    return -acc / len(ratios)


def test_criterion_02_grpo_math():
    start = time.perf_counter()
    rng = random.Random(202)

    for _ in range(10_000):
        size = rng.randrange(2, 9)
        group = [rng.uniform(-5.0, 5.0) for _ in range(size)]
        while statistics.pstdev(group) < 1e-6:
            group = [rng.uniform(-5.0, 5.0) for _ in range(size)]
        adv = group_advantages(group)
        assert abs(statistics.fmean(adv)) <= 1e-12
        assert abs(statistics.pstdev(adv) - 1.0) <= 1e-9

    # kl estimate: non-negative across a 10^6-point log-ratio sweep, zero
    # only at ratio 1 (the sweep spacing keeps every point > 1e-12 away)
    sweep = np.linspace(-700.0, 700.0, 10**6).tolist()
    assert all(kl_estimate(0.0, d) > 1e-12 for d in sweep)
    assert kl_estimate(0.0, 0.0) == 0.0
    assert kl_estimate(-2.5, -2.5) == 0.0

    for _ in range(1_000):
        size = rng.randrange(1, 9)
        ratios = [math.exp(rng.uniform(-1.0, 1.0)) for _ in range(size)]
        advantages = [rng.uniform(-3.0, 3.0) for _ in range(size)]
        kls = [abs(rng.uniform(0.0, 2.0)) for _ in range(size)]
        epsilon = rng.choice([0.1, 0.2, 0.5])
        kl_weight = rng.choice([0.0, 0.04, 0.1])
        got = grpo_objective(ratios, advantages, kls, epsilon=epsilon, kl_weight=kl_weight)
        want = _grpo_straight_line(ratios, advantages, kls, epsilon, kl_weight)
        assert abs(got - want) <= 1e-12

    elapsed = time.perf_counter() - start
    assert elapsed < 10.0, f"grpo math took {elapsed:.2f}s"
    _pass(2, "advantage standardization, kl sweep, objective vs reference", elapsed)


# --------------------------------------------------------------------------
# 3. otsu


def _otsu_oracle(hist) -> int:
    """Exhaustive between-class-variance argmax in exact rational arithmetic."""
    total = sum(hist)
    csum = list(accumulate(hist))
    wsum = list(accumulate(i * h for i, h in enumerate(hist)))
    best_t, best = 0, Fraction(-1)
    for t in range(256):
        c0, s0 = csum[t], wsum[t]
        c1 = total - c0
        if c0 == 0 or c1 == 0:
            value = Fraction(0)
        else:
            s1 = wsum[255] - s0
            mu_diff = Fraction(s0, c0) - Fraction(s1, c1)
            value = Fraction(c0 * c1, total * total) * mu_diff * mu_diff
        if value > best:  # strict: ties keep the smallest threshold
            best_t, best = t, value
    return best_t


def test_criterion_03_otsu_oracle_equivalence():
    start = time.perf_counter()
    rng = np.random.default_rng(303)
    hists = [rng.integers(0, 40, size=256).tolist() for _ in range(700)]
    for _ in range(200):  # sparse histograms
        hist = [0] * 256
        for _ in range(int(rng.integers(1, 12))):
            hist[int(rng.integers(0, 256))] = int(rng.integers(1, 500))
        hists.append(hist)
    for _ in range(100):  # engineered two-spike ties exercise the tie-break
        a, b = sorted(rng.choice(256, size=2, replace=False).tolist())
        hist = [0] * 256
        hist[a] = hist[b] = 7
        hists.append(hist)

    assert len(hists) == 1000
    for hist in hists:
        assert otsu_threshold(hist) == _otsu_oracle(hist)

    elapsed = time.perf_counter() - start
    assert elapsed < 5.0, f"otsu comparison took {elapsed:.2f}s"
    _pass(3, "otsu equals exhaustive rational search on 1000 histograms", elapsed)


# --------------------------------------------------------------------------
# 4. foreground extraction


def test_criterion_04_foreground_extraction():
    start = time.perf_counter()
    rng = np.random.default_rng(404)
    for i in range(100):
        size = (48, 64, 96)[i % 3]
        img, truth = _fixtures.textured_rect_fixture(rng, size=size)
        result = foreground_extract(RasterImage.from_array(img))
        assert not result.fallback
        got = result.bbox.as_tuple()
        for got_edge, want_edge in zip(got, truth):
            assert abs(got_edge - want_edge) <= 2, (i, got, truth)

    # uniform image: exact centered half-size fallback box
    flat = RasterImage.from_array(np.full((30, 50), 128, dtype=np.uint8))
    result = foreground_extract(flat)
    assert result.fallback
    assert result.bbox.as_tuple() == (12, 7, 37, 22)

    odd = RasterImage.from_array(np.full((41, 41), 9, dtype=np.uint8))
    result = foreground_extract(odd)
    assert result.fallback
    assert result.bbox.as_tuple() == (10, 10, 30, 30)

    elapsed = time.perf_counter() - start
    assert elapsed < 30.0, f"foreground took {elapsed:.2f}s"
    _pass(4, "foreground bbox within 2px on 100 fixtures + exact fallback", elapsed)


# --------------------------------------------------------------------------
# 5. clahe / canny


def test_criterion_05_clahe_and_canny():
    start = time.perf_counter()
    rng = np.random.default_rng(505)
    for shape in ((48, 56), (64, 64), (33, 80)):
        img = rng.integers(0, 256, size=shape, dtype=np.uint8)
        got = clahe(RasterImage.from_array(img), math.inf, (1, 1)).to_array()
        want = _fixtures.global_hist_eq_reference(img)
        assert np.array_equal(got, want), shape

    split = 20
    step = _fixtures.step_edge_image(40, 32, split)
    edges = edge_map(RasterImage.from_array(step)).to_array()
    edge_cols = set(np.nonzero(edges)[1].tolist())
    assert edge_cols, "step edge produced no edges"
    assert edge_cols <= {split - 1, split, split + 1}, edge_cols

    flat = np.full((32, 32), 77, dtype=np.uint8)
    assert not edge_map(RasterImage.from_array(flat)).to_array().any()

    elapsed = time.perf_counter() - start
    assert elapsed < 10.0, f"clahe/canny took {elapsed:.2f}s"
    _pass(5, "single-tile clahe == global HE; canny band and empty map", elapsed)


# --------------------------------------------------------------------------
# 6. iou


def test_criterion_06_iou_oracle():
    start = time.perf_counter()
    rng = random.Random(606)
    grid = 48

    def random_box():
        x0 = rng.randrange(0, grid - 1)
        y0 = rng.randrange(0, grid - 1)
        x1 = rng.randrange(x0 + 1, grid + 1)
        y1 = rng.randrange(y0 + 1, grid + 1)
        return (x0, y0, x1, y1)

    for _ in range(10_000):
        a, b = random_box(), random_box()
        got = iou(BBox(*a), BBox(*b))
        want = _fixtures.iou_counting_oracle(a, b, grid)
        assert abs(got - want) <= 1e-9, (a, b)
        assert got == iou(BBox(*b), BBox(*a))

    box = BBox(3, 5, 17, 19)
    assert iou(box, box) == 1.0
    assert iou(BBox(0, 0, 5, 5), BBox(20, 20, 30, 30)) == 0.0
    assert iou(BBox(0, 0, 5, 5), BBox(5, 0, 10, 5)) == 0.0  # touching edges

    elapsed = time.perf_counter() - start
    assert elapsed < 30.0, f"iou comparison took {elapsed:.2f}s"
    _pass(6, "iou matches counting oracle on 10000 pairs; exact edge cases", elapsed)


# --------------------------------------------------------------------------
# 7. trajectory grammar


def test_criterion_07_trajectory_grammar():
    start = time.perf_counter()
    rng = random.Random(707)
    for _ in range(1_000):
        trajectory = _gen.random_trajectory(rng)
        text = render_trajectory(trajectory)
        assert parse_trajectory(text) == trajectory

    for code, mutate in _gen.MUTATIONS.items():
        for _ in range(200):
            trajectory = (
                _gen.random_yes_trajectory(rng)
                if code == "missing-location-on-yes"
                else _gen.random_trajectory(rng)
            )
            broken = mutate(render_trajectory(trajectory))
            report = parse_trajectory(broken)
            assert not report.valid, (code, broken)
            found = {v.code for v in report.violations}
            assert found == {code}, (code, found, broken)

    elapsed = time.perf_counter() - start
    assert elapsed < 30.0, f"grammar checks took {elapsed:.2f}s"
    _pass(7, "1000 round-trips; 6 mutation classes x200 report exactly their code", elapsed)


# --------------------------------------------------------------------------
# 8. baseline answer parser

YES = BinaryLabel.YES
NO = BinaryLabel.NO

BASELINE_CASES = [
    # single yes keyword
    ("Yes.", YES),
    ("The weld looks anomalous.", YES),
    ("Clearly defective.", YES),
    ("The coating is abnormal near the rim.", YES),
    ("YES", YES),
    ("Verdict: yes", YES),
    ("This part is Anomalous!", YES),
    ("label=defective", YES),
    # single no keyword
    ("No.", NO),
    ("The surface is normal.", NO),
    ("Everything looks defect-free.", NO),
    ("NO", NO),
    ("Part appears NORMAL", NO),
    ("Answer: no", NO),
    ("defect-free finish throughout", NO),
    ("(normal)", NO),
    # mixed polarity: the final stated conclusion wins
    ("It looks normal but on closer inspection the weld is defective. Final answer: Yes.", YES),
    ("Possibly defective at first glance, but the final conclusion is that the part is normal.", NO),
    ("yes yes yes ... final verdict: no", NO),
    ("no no no, wait: defective", YES),
    ("The region seemed abnormal; further review shows it is defect-free.", NO),
    ("Initially normal-looking, ultimately anomalous.", YES),
    ("Normal? No. Defective? Yes.", YES),
    ("abnormal, abnormal, normal", NO),
    ("normal normal abnormal", YES),
    ("The answer is not no but yes", YES),
    ("The answer is not yes but no", NO),
    ("Defective components were expected, yet this sample is normal.", NO),
    ("While most units are normal, this one is clearly anomalous.", YES),
    ("I first wrote Yes, then corrected it to No.", NO),
    # word boundaries: keywords must not fire inside longer words
    ("Nothing unusual here.", None),
    ("yesterday's batch was fine", None),
    ("The anomaly is glaring.", None),
    ("A defect is present.", None),
    ("abnormality detected", None),
    ("an abnormal spot", YES),
    ("Notably clean.", None),
    ("normality restored", None),
    ("Denormalized data", None),
    ("no-defect", NO),
    # no keyword at all
    ("Hard to say.", None),
    ("", None),
    ("Inspection inconclusive.", None),
    ("????", None),
    ("The image shows a PCB.", None),
    ("Possible issue at the corner.", None),
    # case and punctuation variants
    ("DEFECT-FREE", NO),
    ("DeFeCtIvE", YES),
    ("answer:NO", NO),
    ("It is normal; I am sure. Normal.", NO),
    ("anomalous.", YES),
    ("Is it defective? yes", YES),
    ("Is it normal? no", NO),
    ("It's defect-free, not defective", YES),  # keyword scan has no negation
    ("The sample is defective, I believe.", YES),
    # explicit flips, each polarity
    ("Looks normal. Actually, yes.", YES),
    ("Defective. On second thought, defect-free.", NO),
    ("normal\nnormal\ndefective", YES),
    ("yes\nno", NO),
    ("no\nyes", YES),
]


def test_criterion_08_baseline_parser():
    assert len(BASELINE_CASES) == 60
    for text, expected in BASELINE_CASES:
        got = parse_baseline_answer(text)
        assert got is expected, (text, got, expected)
    _pass(8, "baseline keyword parser agrees on all 60 hand-labeled cases")


# --------------------------------------------------------------------------
# 9. category-disjoint filter


def test_criterion_09_category_filter():
    train = ["toothbrush", "zipper", "pcb", "transistor1", "bolt", "cable gland"]
    test = ["toothbrush", "zipper", "pcb1", "pcb2", "pcb3", "pcb4", "transistor"]
    result = category_disjoint_filter(train, test)

    assert {r.category for r in result.removed} == {"toothbrush", "zipper", "pcb", "transistor1"}
    assert set(result.retained) == {"bolt", "cable gland"}
    matched = {r.category: r.matched_test_category for r in result.removed}
    assert matched["transistor1"] == "transistor"
    assert matched["pcb"] in {"pcb1", "pcb2", "pcb3", "pcb4"}
    assert matched["toothbrush"] == "toothbrush"
    assert matched["zipper"] == "zipper"

    # every pcb variant individually collides with the bare family name
    for variant in ("pcb1", "pcb2", "pcb3", "pcb4"):
        sub = category_disjoint_filter(["pcb"], [variant])
        assert [r.category for r in sub.removed] == ["pcb"]
        assert sub.removed[0].matched_test_category == variant

    _pass(9, "category filter reproduces the reference removal set exactly")


# --------------------------------------------------------------------------
# 10. metrics


def test_criterion_10_metrics():
    # 20 samples arranged for tp=7 fn=3 tn=6 fp=4
    samples = []
    predictions = {}
    for i in range(10):
        sid = f"anom/{i:02d}"
        samples.append(Sample(sid, f"{sid}.png", "anom", YES))
        predictions[sid] = YES if i < 7 else NO
    for i in range(10):
        sid = f"good/{i:02d}"
        samples.append(Sample(sid, f"{sid}.png", "good", NO))
        predictions[sid] = NO if i < 6 else YES

    counts, excluded = confusion_from_predictions(samples, predictions)
    assert excluded == 0
    assert (counts.tp, counts.fn, counts.tn, counts.fp) == (7, 3, 6, 4)
    assert abs(balanced_accuracy(counts) - (7 / 10 + 6 / 10) / 2) <= 1e-9
    assert abs(anomaly_recall(counts) - 7 / 10) <= 1e-9
    assert abs(f1_score(counts) - 14 / 21) <= 1e-9

    # all-Yes predictor on a balanced fixture: balanced accuracy is exactly 1/2
    all_yes = {s.sample_id: YES for s in samples}
    counts_yes, _ = confusion_from_predictions(samples, all_yes)
    assert balanced_accuracy(counts_yes) == 0.5

    # tool usage over a 20-record fixture: 8 records carry 10 calls, 7 succeed
    records = [{"tool_calls": []} for _ in range(12)]
    for _ in range(4):
        records.append({"tool_calls": [{"tool": "crop", "success": True}]})
    records.append({"tool_calls": [{"tool": "crop", "success": False}]})
    records.append({"tool_calls": [{"tool": "enhance", "success": True},
                                   {"tool": "measure", "success": False}]})
    records.append({"tool_calls": [{"tool": "enhance", "success": True},
                                   {"tool": "prior", "success": True}]})
    records.append({"tool_calls": [{"tool": "enhance", "success": False}]})
    assert len(records) == 20

    stats = tool_usage_stats(records)
    assert abs(stats.call_rate - 8 / 20) <= 1e-9
    assert abs(stats.avg_calls - 10 / 20) <= 1e-9
    assert abs(stats.success_rate - 7 / 10) <= 1e-9
    assert stats.per_tool == {"crop": 5, "enhance": 3, "measure": 1, "prior": 1}

    _pass(10, "balanced accuracy, recall, f1, tool usage match hand values")


# --------------------------------------------------------------------------
# 11. hermetic end-to-end inference

NO_TRAJ = "<think>surface is uniform and clean</think><answer>No</answer>"


def _yes_traj(box):
    x0, y0, x1, y1 = box
    return (
        f"<think>visible mark</think><location>({x0}, {y0}, {x1}, {y1})</location>"
        f"<type>scratch</type><answer>Yes</answer>"
    )


def _routing(tools, target="none"):
    return (
        "Think: quick look at the surface\n"
        f"Need Tools: {tools}\n"
        f"Tool Target: {target}\n"
        "Target Region: surface\n"
        "Target Scale: small\n"
        "Target Type: texture\n"
        "Suspicion Level: low\n"
        "Preliminary Answer: No\n"
    )


def _null_wall(value):
    if isinstance(value, dict):
        return {k: (0 if k == "wall_ms" else _null_wall(v)) for k, v in value.items()}
    if isinstance(value, list):
        return [_null_wall(v) for v in value]
    return value


def test_criterion_11_hermetic_inference(tmp_path):
    root = tmp_path / "data"
    info = _fixtures.build_dataset(
        root, {"pcb": {"good": 4, "scratch": 4, "crack": 4}}, seed=11
    )
    assert len(info) == 12

    entries = {}
    crack_seen = 0
    for sample_id, (label, box) in sorted(info.items()):
        if "good" in sample_id:
            entries[sample_id] = [_routing("none"), NO_TRAJ]            # none-route
        elif "scratch" in sample_id:
            entries[sample_id] = [                                       # multi-tool
                _routing("crop, enhance", target="region (2, 2, 20, 20)"),
                _yes_traj(box),
            ]
        else:
            # tool-failure paths: measure without coordinates, prior with no store
            tools = "measure" if crack_seen % 2 == 0 else "prior"
            crack_seen += 1
            entries[sample_id] = [
                _routing(tools, target="the gap near the center"),
                _yes_traj(box),
            ]
    script = tmp_path / "script.json"
    script.write_text(json.dumps(entries))

    start = time.perf_counter()
    runner = CliRunner()
    outputs = []
    for i in range(3):
        out = tmp_path / f"records_{i}.jsonl"
        result = runner.invoke(cli_main, [
            "infer", "--dataset", str(root), "--out", str(out),
            "--backend", "mock", "--script", str(script),
        ])
        assert result.exit_code == 0, result.output
        rows = [json.loads(line) for line in out.read_text().splitlines()]
        outputs.append(json.dumps(_null_wall(rows), sort_keys=True))
    elapsed = time.perf_counter() - start
    assert elapsed < 20.0, f"three runs took {elapsed:.2f}s"

    assert outputs[0] == outputs[1] == outputs[2]

    rows = [json.loads(line) for line in (tmp_path / "records_0.jsonl").read_text().splitlines()]
    none_route = [r for r in rows if not r["tool_calls"] and "good" in r["sample_id"]]
    multi_tool = [r for r in rows if len(r["tool_calls"]) >= 2]
    failures = [r for r in rows if any(not c["success"] for c in r["tool_calls"])]
    assert len(none_route) >= 2
    assert len(multi_tool) >= 2
    assert len(failures) >= 2
    for record in multi_tool:
        assert all(c["success"] for c in record["tool_calls"])
    for record in failures:
        assert record["final"]["answer"] == "Yes"  # failure still yields a verdict

    _pass(11, "12-image infer run is bit-identical across 3 runs", elapsed)


# --------------------------------------------------------------------------
# 12. corpus pipeline

STAGE1 = "The board shows parallel traces; the lower left pad looks smeared."


def test_criterion_12_corpus_pipeline(tmp_path):
    root = tmp_path / "data"
    info = _fixtures.build_dataset(
        root, {"pcb": {"good": 10, "scratch": 10}}, seed=12
    )
    assert len(info) == 20

    entries = {}
    for sample_id, (label, box) in info.items():
        trajectory = _yes_traj(box) if label == "Yes" else NO_TRAJ
        entries[sample_id] = {"teacher": [STAGE1, trajectory], "judge": ["0.8"]}
    script = tmp_path / "script.json"
    script.write_text(json.dumps(entries))

    runner = CliRunner()
    records_path = tmp_path / "corpus.jsonl"
    result = runner.invoke(cli_main, [
        "corpus", "build", "--dataset", str(root), "--out", str(records_path),
        "--backend", "mock", "--script", str(script),
    ])
    assert result.exit_code == 0, result.output
    assert "valid     20" in result.output

    sft_path = tmp_path / "sft.jsonl"
    result = runner.invoke(cli_main, [
        "corpus", "export", "--records", str(records_path), "--out", str(sft_path),
    ])
    assert result.exit_code == 0, result.output

    lines = [json.loads(line) for line in sft_path.read_text().splitlines()]
    assert len(lines) == 20
    for line in lines:
        image_path = Path(line["images"][0])
        sample_id = str(image_path.relative_to(root).with_suffix(""))
        expected_label = info[sample_id][0]

        parsed = parse_trajectory(line["target_text"])
        assert parsed.answer.text == expected_label, sample_id      # label-consistent
        assert render_trajectory(parsed) == line["target_text"]     # round-trips
        assert line["loss_spans"]

    text = sft_path.read_text().lower()
    assert "ground-truth supervision" not in text
    assert "supervision constraint" not in text

    # argmax judge retention on a 2-candidate fixture
    solo_root = tmp_path / "solo"
    solo_info = _fixtures.build_dataset(solo_root, {"pcb": {"scratch": 1}}, seed=13)
    (sample_id, (label, box)), = solo_info.items()
    low = (
        "<think>first guess at the smear</think>"
        f"<location>({box[0]}, {box[1]}, {box[2]}, {box[3]})</location>"
        "<type>scratch</type><answer>Yes</answer>"
    )
    high = (
        "<think>careful look confirms the smear</think>"
        f"<location>({box[0]}, {box[1]}, {box[2]}, {box[3]})</location>"
        "<type>scratch</type><answer>Yes</answer>"
    )
    solo_script = tmp_path / "solo.json"
    solo_script.write_text(json.dumps({
        sample_id: {"teacher": [STAGE1, low, high], "judge": ["0.3", "0.9"]},
    }))
    solo_records = tmp_path / "solo.jsonl"
    result = runner.invoke(cli_main, [
        "corpus", "build", "--dataset", str(solo_root), "--out", str(solo_records),
        "--backend", "mock", "--script", str(solo_script), "--candidates", "2",
    ])
    assert result.exit_code == 0, result.output
    record = json.loads(solo_records.read_text().splitlines()[0])
    assert record["judge_score"] == 0.9
    assert "careful look confirms" in record["trajectory_text"]
    assert "first guess" not in record["trajectory_text"]

    _pass(12, "corpus build/export: consistent, round-tripping, argmax retention")

"""Seeded random generators and mutation helpers shared across test modules."""

from __future__ import annotations

import random
import re

from inspecta.trajectory import (
    Answer,
    BinaryLabel,
    CallTool,
    DefectType,
    Location,
    Observation,
    Think,
    ToolCall,
    Trajectory,
)

_WORDS = (
    "surface", "joint", "panel", "texture", "edge", "clean", "uniform",
    "solder", "left", "right", "upper", "lower", "region", "looks", "matte",
    "reflection", "alignment", "consistent", "grain", "weld", "coating",
)

_DEFECTS = ("scratch", "dent", "stain", "crack", "chip", "contamination")

_ARG_KEYS = ("x0", "y0", "x1", "y1", "region", "scale", "query", "k")


def phrase(rng: random.Random, lo: int = 2, hi: int = 6) -> str:
    return " ".join(rng.choice(_WORDS) for _ in range(rng.randint(lo, hi)))


def random_tool_call(rng: random.Random) -> ToolCall:
    tool = rng.choice(("crop", "prior", "enhance", "measure"))
    args = {}
    for _ in range(rng.randint(0, 3)):
        key = rng.choice(_ARG_KEYS)
        if key in args:
            continue
        roll = rng.random()
        if roll < 0.4:
            args[key] = rng.randint(0, 512)
        elif roll < 0.7:
            args[key] = round(rng.uniform(0.0, 100.0), 2)
        else:
            args[key] = rng.choice(("top-left", "edge", "solder", "panel"))
    return ToolCall(tool, args)


def random_trajectory(rng: random.Random) -> Trajectory:
    """A random canonical valid trajectory (0-3 tool rounds, either verdict)."""
    segments = []
    for _ in range(rng.randint(0, 3)):
        segments.append(Think(phrase(rng)))
        segments.append(CallTool(random_tool_call(rng)))
        segments.append(Observation(phrase(rng)))
    segments.append(Think(phrase(rng)))
    if rng.random() < 0.5:
        segments.append(Location(phrase(rng, 1, 3)))
        segments.append(DefectType(rng.choice(_DEFECTS)))
        segments.append(Answer(BinaryLabel.YES))
    else:
        segments.append(Answer(BinaryLabel.NO))
    return Trajectory(tuple(segments))


def random_yes_trajectory(rng: random.Random) -> Trajectory:
    while True:
        t = random_trajectory(rng)
        if t.answer is BinaryLabel.YES:
            return t


# Mutations keyed by the single violation code each must produce. Each takes
# rendered valid trajectory text and returns broken text.

def mutate_missing_answer(text: str) -> str:
    return re.sub(r"<answer>(?:Yes|No)</answer>$", "", text)


def mutate_malformed_tag(text: str) -> str:
    assert text.endswith("</answer>")
    return text[: -len("</answer>")]


def mutate_orphan_observation(text: str) -> str:
    return "<observation>stray evidence</observation>" + text


def mutate_missing_location(text: str) -> str:
    assert "<location>" in text
    return re.sub(r"<location>.*?</location>", "", text, count=1)


def mutate_text_outside_tags(text: str) -> str:
    return "loose commentary " + text


def mutate_missing_observation(text: str) -> str:
    return text.replace(
        "<answer>", "<call_tool>crop x0=0 y0=0 x1=4 y1=4</call_tool><answer>", 1
    )


MUTATIONS = {
    "missing-answer": mutate_missing_answer,
    "malformed-tag": mutate_malformed_tag,
    "orphan-observation": mutate_orphan_observation,
    "missing-location-on-yes": mutate_missing_location,
    "text-outside-tags": mutate_text_outside_tags,
    "missing-observation": mutate_missing_observation,
}

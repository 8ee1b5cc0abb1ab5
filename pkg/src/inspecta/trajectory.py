"""Tagged diagnostic trajectory grammar.

A trajectory is a flat sequence of XML-style tagged segments:

    <think>...</think> <call_tool>...</call_tool> <observation>...</observation>
    <location>...</location> <type>...</type> <answer>Yes|No</answer>

Canonical shapes (only whitespace may separate tags):

- normal verdict:    ``<think>...</think><answer>No</answer>``
- anomalous verdict: ``<think>...</think><location>...</location><type>...</type><answer>Yes</answer>``
- either shape may insert ``<call_tool>...</call_tool><observation>...</observation><think>...</think>``
  blocks before the verdict; every call is paired 1:1, in order, with a later
  observation.

``parse_trajectory`` returns a :class:`Trajectory` when the text is valid and a
:class:`FormatReport` listing every violation otherwise. ``render_trajectory``
is its inverse on valid trajectories.
"""

from __future__ import annotations

import enum
import math
import re
from dataclasses import dataclass, field


class TrajectoryError(ValueError):
    """Raised when rendering or constructing from invalid trajectory data."""


class BinaryLabel(enum.Enum):
    """Binary anomaly verdict. YES means anomalous, NO means normal."""

    YES = "Yes"
    NO = "No"

    @property
    def text(self) -> str:
        return self.value

    def flipped(self) -> "BinaryLabel":
        return BinaryLabel.NO if self is BinaryLabel.YES else BinaryLabel.YES

    @classmethod
    def from_text(cls, text: str, *, lenient: bool = False) -> "BinaryLabel | None":
        """Parse a Yes/No literal. Lenient mode ignores case; returns None on failure."""
        value = text.strip()
        if lenient:
            value = value.lower()
            if value == "yes":
                return cls.YES
            if value == "no":
                return cls.NO
            return None
        if value == "Yes":
            return cls.YES
        if value == "No":
            return cls.NO
        return None


TOOL_NAMES = ("crop", "prior", "enhance", "measure")

TAG_NAMES = ("think", "call_tool", "observation", "location", "type", "answer")

_OPEN_RE = re.compile(r"<(think|call_tool|observation|location|type|answer)>")
_ANY_TAG_RE = re.compile(r"</?(?:think|call_tool|observation|location|type|answer)>")

ArgValue = int | float | str


@dataclass(frozen=True)
class ToolCall:
    """A parsed tool invocation: canonical tool name plus ordered arguments."""

    tool: str
    arguments: dict[str, ArgValue] = field(default_factory=dict)

    def render(self) -> str:
        parts = [self.tool]
        parts.extend(f"{k}={v}" for k, v in self.arguments.items())
        return " ".join(parts)


@dataclass(frozen=True)
class Think:
    text: str


@dataclass(frozen=True)
class CallTool:
    call: ToolCall


@dataclass(frozen=True)
class Observation:
    text: str


@dataclass(frozen=True)
class Location:
    text: str


@dataclass(frozen=True)
class DefectType:
    text: str


@dataclass(frozen=True)
class Answer:
    label: BinaryLabel


Segment = Think | CallTool | Observation | Location | DefectType | Answer


@dataclass(frozen=True)
class Violation:
    """One grammar violation: a stable code plus optional human detail."""

    code: str
    detail: str | None = None

    def __str__(self) -> str:
        return self.code if self.detail is None else f"{self.code}: {self.detail}"


@dataclass(frozen=True)
class FormatReport:
    """Outcome of a failed parse or validation: every violation found."""

    violations: tuple[Violation, ...]

    @property
    def valid(self) -> bool:
        return not self.violations

    @property
    def codes(self) -> frozenset[str]:
        return frozenset(v.code for v in self.violations)

    def __str__(self) -> str:
        return "; ".join(str(v) for v in self.violations) or "valid"


@dataclass(frozen=True)
class Trajectory:
    """A validated tagged trajectory."""

    segments: tuple[Segment, ...]

    @property
    def answer(self) -> BinaryLabel:
        last = self.segments[-1]
        if not isinstance(last, Answer):
            raise TrajectoryError("trajectory has no final answer segment")
        return last.label

    @property
    def location(self) -> str | None:
        for seg in self.segments:
            if isinstance(seg, Location):
                return seg.text
        return None

    @property
    def defect_type(self) -> str | None:
        for seg in self.segments:
            if isinstance(seg, DefectType):
                return seg.text
        return None

    @property
    def tool_calls(self) -> tuple[ToolCall, ...]:
        return tuple(seg.call for seg in self.segments if isinstance(seg, CallTool))

    def render(self) -> str:
        return render_trajectory(self)


def _coerce_arg(raw: str) -> ArgValue:
    try:
        return int(raw)
    except ValueError:
        pass
    try:
        value = float(raw)
    except ValueError:
        return raw
    # non-finite floats would not survive a render/parse round trip
    return value if math.isfinite(value) else raw


def normalize_tool_name(name: str) -> str:
    """Lowercase and strip an optional T_ prefix (templates write T_crop etc.)."""
    name = name.strip().lower()
    if name.startswith("t_"):
        name = name[2:]
    return name


def parse_tool_call(content: str) -> ToolCall | Violation:
    """Parse ``tool key=value ...`` call content.

    Returns a Violation (code ``invalid-tool-call``) instead of raising so the
    caller can accumulate it with other grammar violations.
    """
    tokens = content.split()
    if not tokens:
        return Violation("invalid-tool-call", "empty call")
    name = normalize_tool_name(tokens[0])
    if name not in TOOL_NAMES:
        return Violation("invalid-tool-call", f"unknown tool {tokens[0]!r}")
    arguments: dict[str, ArgValue] = {}
    for token in tokens[1:]:
        key, sep, raw = token.partition("=")
        if not sep or not key:
            return Violation("invalid-tool-call", f"expected key=value, got {token!r}")
        arguments[key] = _coerce_arg(raw)
    return ToolCall(name, arguments)


def _tokenize(text: str) -> tuple[list[tuple[str, str]], list[str], list[Violation]]:
    """Split text into (tag, content) entries, outside-text chunks, violations.

    An unclosed tag recovers its content up to the next known tag token (or end
    of input) and records a malformed-tag violation, so downstream checks can
    still see the recovered value.
    """
    entries: list[tuple[str, str]] = []
    outside: list[str] = []
    violations: list[Violation] = []
    pos = 0
    while True:
        m = _OPEN_RE.search(text, pos)
        if m is None:
            tail = text[pos:].strip()
            if tail:
                outside.append(tail)
            break
        before = text[pos : m.start()].strip()
        if before:
            outside.append(before)
        tag = m.group(1)
        closer = f"</{tag}>"
        end = text.find(closer, m.end())
        if end == -1:
            nxt = _ANY_TAG_RE.search(text, m.end())
            stop = nxt.start() if nxt else len(text)
            entries.append((tag, text[m.end() : stop]))
            violations.append(Violation("malformed-tag", f"unclosed <{tag}>"))
            pos = stop
        else:
            entries.append((tag, text[m.end() : end]))
            pos = end + len(closer)
    return entries, outside, violations


_FOLDABLE = ("", "none", "n/a")


def _semantic_violations(
    entries: list[tuple[str, str]], *, lenient: bool
) -> list[Violation]:
    """Validate a tokenized entry sequence against the trajectory grammar."""
    violations: list[Violation] = []

    for tag, content in entries:
        if _ANY_TAG_RE.search(content):
            violations.append(Violation("nested-tag", f"tag marker inside <{tag}>"))

    answer_positions = [i for i, (tag, _) in enumerate(entries) if tag == "answer"]
    label: BinaryLabel | None = None
    if not answer_positions:
        violations.append(Violation("missing-answer"))
    elif len(answer_positions) > 1:
        violations.append(Violation("multiple-answer", f"{len(answer_positions)} answers"))
    else:
        idx = answer_positions[0]
        if idx != len(entries) - 1:
            violations.append(Violation("answer-not-final"))
        raw = entries[idx][1]
        label = BinaryLabel.from_text(raw, lenient=lenient)
        if label is None:
            violations.append(Violation("bad-answer-value", raw.strip()[:40]))

    scope = entries[: answer_positions[0]] if answer_positions else entries

    thinks = [content for tag, content in scope if tag == "think"]
    if answer_positions and not thinks:
        violations.append(Violation("missing-think"))
    for content in (c for tag, c in entries if tag == "think"):
        if not content.strip():
            violations.append(Violation("empty-think"))

    pending = 0
    for tag, _ in scope:
        if tag == "call_tool":
            pending += 1
        elif tag == "observation":
            if pending == 0:
                violations.append(Violation("orphan-observation"))
            else:
                pending -= 1
    if pending:
        violations.append(Violation("missing-observation", f"{pending} unanswered call(s)"))

    for tag, content in entries:
        if tag == "call_tool":
            parsed = parse_tool_call(content)
            if isinstance(parsed, Violation):
                violations.append(parsed)

    if label is not None:
        locations = sum(1 for tag, _ in entries if tag == "location")
        types = sum(1 for tag, _ in entries if tag == "type")
        if label is BinaryLabel.YES:
            if locations == 0:
                violations.append(Violation("missing-location-on-yes"))
            elif locations > 1:
                violations.append(Violation("multiple-location"))
            if types == 0:
                violations.append(Violation("missing-type-on-yes"))
            elif types > 1:
                violations.append(Violation("multiple-type"))
        else:
            if locations:
                violations.append(Violation("unexpected-location-on-no"))
            if types:
                violations.append(Violation("unexpected-type-on-no"))

    return violations


def _build_segments(entries: list[tuple[str, str]], *, lenient: bool) -> tuple[Segment, ...]:
    segments: list[Segment] = []
    for tag, content in entries:
        if tag == "think":
            segments.append(Think(content.strip()))
        elif tag == "call_tool":
            call = parse_tool_call(content)
            assert isinstance(call, ToolCall)
            segments.append(CallTool(call))
        elif tag == "observation":
            segments.append(Observation(content.strip()))
        elif tag == "location":
            segments.append(Location(content.strip()))
        elif tag == "type":
            segments.append(DefectType(content.strip()))
        else:
            label = BinaryLabel.from_text(content, lenient=lenient)
            assert label is not None
            segments.append(Answer(label))
    return tuple(segments)


def parse_trajectory(text: str, *, strict: bool = True) -> Trajectory | FormatReport:
    """Parse tagged trajectory text.

    Strict mode (training targets) flags non-whitespace text outside tags.
    Lenient mode (live model output) ignores outside text and folds
    ``<location>``/``<type>`` segments whose content is none/n-a/empty to
    absent, since the decision templates always emit those lines.

    Returns:
        A Trajectory when the grammar holds, otherwise a FormatReport with
        every violation found (the parse never raises on bad input).
    """
    entries, outside, violations = _tokenize(text)
    lenient = not strict
    if lenient:
        entries = [
            (tag, content)
            for tag, content in entries
            if not (tag in ("location", "type") and content.strip().lower() in _FOLDABLE)
        ]
    elif outside:
        violations.append(Violation("text-outside-tags", outside[0][:40]))
    violations.extend(_semantic_violations(entries, lenient=lenient))
    if violations:
        return FormatReport(tuple(violations))
    return Trajectory(_build_segments(entries, lenient=lenient))


def _segment_entry(segment: Segment) -> tuple[str, str]:
    if isinstance(segment, Think):
        return "think", segment.text
    if isinstance(segment, CallTool):
        return "call_tool", segment.call.render()
    if isinstance(segment, Observation):
        return "observation", segment.text
    if isinstance(segment, Location):
        return "location", segment.text
    if isinstance(segment, DefectType):
        return "type", segment.text
    if isinstance(segment, Answer):
        return "answer", segment.label.text
    raise TrajectoryError(f"unknown segment type {type(segment).__name__}")


def validate_segments(segments: tuple[Segment, ...]) -> FormatReport:
    """Run grammar validation over typed segments (used before rendering)."""
    entries = [_segment_entry(seg) for seg in segments]
    return FormatReport(tuple(_semantic_violations(entries, lenient=False)))


def render_trajectory(trajectory: Trajectory) -> str:
    """Serialize a trajectory canonically. Raises TrajectoryError if invalid."""
    report = validate_segments(trajectory.segments)
    if not report.valid:
        raise TrajectoryError(f"cannot render invalid trajectory: {report}")
    parts = []
    for segment in trajectory.segments:
        tag, content = _segment_entry(segment)
        parts.append(f"<{tag}>{content}</{tag}>")
    return "".join(parts)


_YES_WORDS = ("yes", "anomalous", "defective", "abnormal")
_NO_WORDS = ("no", "normal", "defect-free")
_ANSWER_WORD_RE = re.compile(
    r"\b(" + "|".join(_YES_WORDS + _NO_WORDS) + r")\b", re.IGNORECASE
)


def parse_baseline_answer(text: str) -> BinaryLabel | None:
    """Extract a binary verdict from free-form text.

    Case-insensitive, word-bounded keyword scan; the last keyword occurrence
    wins. Returns None when no keyword appears (unparseable).
    """
    last: str | None = None
    for m in _ANSWER_WORD_RE.finditer(text):
        last = m.group(1).lower()
    if last is None:
        return None
    return BinaryLabel.YES if last in _YES_WORDS else BinaryLabel.NO


ROUTING_TOOL_VALUES = ("crop", "enhance", "measure", "prior", "none")
# the routing template offers the expert-prior channel under its backing model
# name; canonicalize it to the prior tool
_ROUTING_TOOL_ALIASES = {"qwen3vlmax-api": "prior"}
SCALE_VALUES = ("tiny", "small", "medium", "large", "unknown")
TARGET_TYPE_VALUES = (
    "edge",
    "corner",
    "spacing",
    "bending",
    "surface-mark",
    "component",
    "texture",
    "unknown",
)
SUSPICION_VALUES = ("low", "medium", "high")

_ROUTING_FIELDS = (
    "think",
    "need tools",
    "tool target",
    "target region",
    "target scale",
    "target type",
    "suspicion level",
    "preliminary answer",
)
_ROUTING_LINE_RE = re.compile(r"^\s*([A-Za-z][A-Za-z ]*?)\s*:\s*(.*?)\s*$")


@dataclass(frozen=True)
class RoutingDecision:
    """Parsed first-round routing output."""

    think: str
    tools: tuple[str, ...]
    tool_target: str
    target_region: str
    target_scale: str
    target_type: str
    suspicion: str
    preliminary: BinaryLabel

    @property
    def wants_tools(self) -> bool:
        return self.tools != ("none",)


def parse_routing(text: str) -> RoutingDecision | FormatReport:
    """Parse the line-oriented first-round routing format.

    Lines are matched as ``Field: value`` with case-insensitive field names;
    unknown lines are ignored and the first occurrence of a field wins.
    """
    found: dict[str, str] = {}
    for line in text.splitlines():
        m = _ROUTING_LINE_RE.match(line)
        if not m:
            continue
        name = m.group(1).strip().lower()
        if name in _ROUTING_FIELDS and name not in found:
            found[name] = m.group(2)

    violations: list[Violation] = []
    for name in _ROUTING_FIELDS:
        if name not in found:
            violations.append(Violation("missing-field", name))
    if violations:
        return FormatReport(tuple(violations))

    tools: list[str] = []
    for token in found["need tools"].split(","):
        token = normalize_tool_name(token)
        if not token:
            continue
        token = _ROUTING_TOOL_ALIASES.get(token, token)
        if token not in ROUTING_TOOL_VALUES:
            violations.append(Violation("unknown-tool", token))
        elif token not in tools:
            tools.append(token)
    if not tools and not violations:
        violations.append(Violation("bad-enum-value", "need tools is empty"))
    if "none" in tools and len(tools) > 1:
        violations.append(Violation("none-not-singleton", found["need tools"].strip()))

    def check_enum(field_name: str, allowed: tuple[str, ...]) -> str:
        value = found[field_name].strip().lower()
        if value not in allowed:
            violations.append(Violation("bad-enum-value", f"{field_name}={value!r}"))
        return value

    scale = check_enum("target scale", SCALE_VALUES)
    target_type = check_enum("target type", TARGET_TYPE_VALUES)
    suspicion = check_enum("suspicion level", SUSPICION_VALUES)
    preliminary = BinaryLabel.from_text(found["preliminary answer"], lenient=True)
    if preliminary is None:
        violations.append(
            Violation("bad-enum-value", f"preliminary answer={found['preliminary answer']!r}")
        )

    if violations:
        return FormatReport(tuple(violations))
    assert preliminary is not None
    return RoutingDecision(
        think=found["think"].strip(),
        tools=tuple(tools),
        tool_target=found["tool target"].strip(),
        target_region=found["target region"].strip(),
        target_scale=scale,
        target_type=target_type,
        suspicion=suspicion,
        preliminary=preliminary,
    )

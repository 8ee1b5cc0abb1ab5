"""Two-round diagnosis orchestration.

Round one asks the policy to route among the inspection tools; the
orchestrator executes the requested tools locally, fuses their outputs into
a textual context plus image attachments, and runs a second round for the
final verdict. A direct mode skips routing entirely for ablation runs.
"""

from __future__ import annotations

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

from . import prompts
from .imaging import (
    BBox,
    ImagingError,
    RasterImage,
    clahe,
    crop,
    edge_map,
    foreground_extract,
    measure_distance,
    parse_points,
    parse_region,
)
from .policy_gateway import GatewayError, PolicyRequest, answer_logprobs
from .priors import PriorNotFound, PriorStore
from .rewards import answer_margin
from .trajectory import (
    BinaryLabel,
    RoutingDecision,
    ToolCall,
    Trajectory,
    parse_baseline_answer,
    parse_routing,
    parse_trajectory,
)

log = logging.getLogger(__name__)

MODES = ("agentic", "direct")


class OrchestratorError(RuntimeError):
    pass


@dataclass(frozen=True)
class OrchestratorConfig:
    mode: str = "agentic"
    compute_margins: bool = False
    temperature: float = 0.0
    max_tokens: int = 1024
    clahe_clip: float = 2.0
    clahe_tiles: tuple = (8, 8)
    canny_low: float = 50.0
    canny_high: float = 150.0
    median_kernel: int = 31

    def __post_init__(self):
        if self.mode not in MODES:
            raise OrchestratorError(f"mode must be one of {MODES}, got {self.mode!r}")


@dataclass(frozen=True)
class Observation:
    """One tool output: a RasterImage, prior text, or a Measurement."""

    tool: str
    kind: str  # image | text | measurement
    payload: object


@dataclass(frozen=True)
class ToolExecution:
    call: ToolCall
    observation: Observation | None
    success: bool
    error: str | None
    wall_ms: float


@dataclass(frozen=True)
class Round:
    name: str  # routing | decision | direct
    prompt: str
    raw_response: str
    parsed: object = None


@dataclass(frozen=True)
class MarginPair:
    """Signed answer confidence before and after tool evidence."""

    before: float
    after: float


@dataclass(frozen=True)
class FinalDecision:
    answer: BinaryLabel | None
    location: str | None
    defect_type: str | None


@dataclass(frozen=True)
class DiagnosisRecord:
    sample_id: str
    mode: str
    rounds: tuple
    tool_calls: tuple
    final: FinalDecision
    margins: MarginPair | None
    format_valid: bool
    notes: tuple
    wall_ms: float

    def to_json_dict(self) -> dict:
        return {
            "sample_id": self.sample_id,
            "mode": self.mode,
            "rounds": [
                {"name": r.name, "prompt": r.prompt, "raw_response": r.raw_response}
                for r in self.rounds
            ],
            "tool_calls": [
                {
                    "tool": ex.call.tool,
                    "arguments": dict(ex.call.arguments),
                    "success": ex.success,
                    "error": ex.error,
                    "observation_kind": ex.observation.kind if ex.observation else None,
                    "wall_ms": ex.wall_ms,
                }
                for ex in self.tool_calls
            ],
            "final": {
                "answer": self.final.answer.text if self.final.answer else None,
                "location": self.final.location,
                "defect_type": self.final.defect_type,
            },
            "margins": (
                {"before": self.margins.before, "after": self.margins.after}
                if self.margins
                else None
            ),
            "format_valid": self.format_valid,
            "notes": list(self.notes),
            "wall_ms": self.wall_ms,
        }


def fuse_context(executions) -> tuple[str, list]:
    """Render tool outputs as round-two context text plus image attachments.

    Image observations become attachment references; attachment #1 is always
    the original image, so the first tool image is #2.
    """
    entries = []
    images = []
    for ex in executions:
        name = ex.call.tool
        if not ex.success:
            entries.append(f"tool: {name}\nresult: unavailable ({ex.error})")
            continue
        obs = ex.observation
        if obs.kind == "image":
            images.append(obs.payload)
            entries.append(f"tool: {name}\nresult: image #{len(images) + 1} from tool {name}")
        elif obs.kind == "measurement":
            entries.append(f"tool: {name}\nresult: {obs.payload.render()}")
        else:
            entries.append(f"tool: {name}\nresult: {obs.payload}")
    return "\n".join(entries), images


class _ToolFailure(Exception):
    def __init__(self, call: ToolCall, message: str):
        super().__init__(message)
        self.call = call
        self.message = message


class Orchestrator:
    def __init__(
        self,
        policy,
        priors: PriorStore | None = None,
        config: OrchestratorConfig | None = None,
        *,
        clock=time.perf_counter,
    ):
        self._policy = policy
        self._priors = priors
        self._config = config or OrchestratorConfig()
        self._clock = clock

    # -- public entry points -------------------------------------------------

    def run(self, sample_id: str, image: RasterImage, category: str, view: str = "*"):
        return self._run_with(self._policy, sample_id, image, category, view)

    def run_sample(self, sample) -> DiagnosisRecord:
        """Diagnose one dataset sample; label fields are never consulted."""
        image = RasterImage.load_png(Path(sample.path))
        return self.run(sample.sample_id, image, sample.category)

    def run_batch(self, samples, *, jobs: int = 1, policy_factory=None) -> list:
        """Diagnose samples concurrently, results in input order.

        ``policy_factory(sample)`` supplies a per-sample policy (scripted
        replays key replies by sample, so concurrency cannot reorder them);
        without a factory every worker shares the orchestrator's policy.
        """
        if jobs < 1:
            raise OrchestratorError("jobs must be at least 1")

        def work(sample):
            policy = policy_factory(sample) if policy_factory else self._policy
            image = RasterImage.load_png(Path(sample.path))
            t0 = self._clock()
            try:
                return self._run_with(policy, sample.sample_id, image, sample.category, "*")
            except GatewayError as exc:
                # one bad sample must not sink a whole batch
                log.warning("sample %s failed: %s", sample.sample_id, exc)
                return DiagnosisRecord(
                    sample_id=sample.sample_id,
                    mode=self._config.mode,
                    rounds=(),
                    tool_calls=(),
                    final=FinalDecision(None, None, None),
                    margins=None,
                    format_valid=False,
                    notes=(f"policy failure: {exc}",),
                    wall_ms=(self._clock() - t0) * 1000.0,
                )

        if jobs == 1:
            return [work(s) for s in samples]
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(work, samples))

    # -- round plumbing ------------------------------------------------------

    def _ask(self, policy, prompt: str, images, want_logprobs: bool):
        request = PolicyRequest(
            messages=(("user", prompt),),
            images=tuple(images),
            temperature=self._config.temperature,
            max_tokens=self._config.max_tokens,
            want_logprobs=want_logprobs,
        )
        return policy.complete(request)

    def _run_with(self, policy, sample_id, image, category, view) -> DiagnosisRecord:
        t0 = self._clock()
        cfg = self._config
        notes: list[str] = []
        rounds: list[Round] = []
        executions: list[ToolExecution] = []
        margins = None

        original_png = image.to_png_bytes()

        if cfg.mode == "direct":
            final, format_valid = self._decision_round(
                policy, original_png, (), rounds, notes, name="direct"
            )
            return self._record(
                sample_id, rounds, executions, final, margins, format_valid, notes, t0
            )

        routing_prompt = prompts.load_template("round1_routing")
        routing_resp = self._ask(policy, routing_prompt, (original_png,), False)
        routing = parse_routing(routing_resp.text)
        rounds.append(Round("routing", routing_prompt, routing_resp.text, routing))

        if not isinstance(routing, RoutingDecision):
            notes.append("routing reply unparseable; fell back to single-round diagnosis")
            final, format_valid = self._decision_round(
                policy, original_png, (), rounds, notes, name="decision"
            )
            return self._record(
                sample_id, rounds, executions, final, margins, format_valid, notes, t0
            )

        if not routing.wants_tools:
            notes.append("routing selected no tools")
            final, format_valid = self._decision_round(
                policy, original_png, (), rounds, notes, name="decision"
            )
            return self._record(
                sample_id, rounds, executions, final, margins, format_valid, notes, t0
            )

        probe_logprobs = None
        if cfg.compute_margins:
            # confidence before tool evidence, measured on the plain prompt
            probe_resp = self._ask(
                policy, prompts.load_template("baseline_zero_shot"), (original_png,), True
            )
            probe_logprobs = answer_logprobs(probe_resp)
            notes.append("margin probe pass executed")

        executions = [
            self._execute_tool(name, routing, image, category, view)
            for name in routing.tools
        ]
        context_text, tool_images = fuse_context(executions)
        round2_prompt = prompts.render("round2_decision", {"tool_context": context_text})
        attachments = [original_png] + [img.to_png_bytes() for img in tool_images]

        decision_resp = self._ask(policy, round2_prompt, attachments, cfg.compute_margins)
        final, format_valid, parsed = self._finalize(decision_resp.text, notes)
        rounds.append(Round("decision", round2_prompt, decision_resp.text, parsed))

        if cfg.compute_margins and final.answer is not None:
            after_logprobs = answer_logprobs(decision_resp)
            if probe_logprobs is not None and after_logprobs is not None:
                margins = MarginPair(
                    answer_margin(*probe_logprobs, final.answer),
                    answer_margin(*after_logprobs, final.answer),
                )
            else:
                notes.append("margins unavailable: missing answer logprobs")

        return self._record(
            sample_id, rounds, executions, final, margins, format_valid, notes, t0
        )

    def _decision_round(self, policy, original_png, extra_images, rounds, notes, *, name):
        prompt = prompts.load_template("baseline_zero_shot")
        resp = self._ask(policy, prompt, (original_png, *extra_images), False)
        final, format_valid, parsed = self._finalize(resp.text, notes)
        rounds.append(Round(name, prompt, resp.text, parsed))
        return final, format_valid

    def _finalize(self, text: str, notes: list):
        parsed = parse_trajectory(text, strict=False)
        if isinstance(parsed, Trajectory):
            return (
                FinalDecision(parsed.answer, parsed.location, parsed.defect_type),
                True,
                parsed,
            )
        keyword = parse_baseline_answer(text)
        if keyword is not None:
            notes.append("final reply failed structured parse; used keyword answer")
            return FinalDecision(keyword, None, None), False, None
        notes.append("final reply unparseable")
        return FinalDecision(None, None, None), False, None

    def _record(
        self, sample_id, rounds, executions, final, margins, format_valid, notes, t0
    ) -> DiagnosisRecord:
        return DiagnosisRecord(
            sample_id=sample_id,
            mode=self._config.mode,
            rounds=tuple(rounds),
            tool_calls=tuple(executions),
            final=final,
            margins=margins,
            format_valid=format_valid,
            notes=tuple(notes),
            wall_ms=(self._clock() - t0) * 1000.0,
        )

    # -- tool execution ------------------------------------------------------

    def _execute_tool(self, name, routing, image, category, view) -> ToolExecution:
        t0 = self._clock()
        try:
            call, observation = self._dispatch(name, routing, image, category, view)
            return ToolExecution(
                call, observation, True, None, (self._clock() - t0) * 1000.0
            )
        except _ToolFailure as failure:
            log.info("tool %s failed: %s", name, failure.message)
            return ToolExecution(
                failure.call, None, False, failure.message, (self._clock() - t0) * 1000.0
            )

    def _dispatch(self, name, routing: RoutingDecision, image, category, view):
        if name == "crop":
            return self._tool_crop(routing, image)
        if name == "enhance":
            return self._tool_enhance(routing, image)
        if name == "measure":
            return self._tool_measure(routing)
        if name == "prior":
            return self._tool_prior(category, view)
        raise OrchestratorError(f"unroutable tool {name!r}")

    def _tool_crop(self, routing, image):
        requested = parse_region(routing.tool_target or "")
        if requested is not None:
            x0 = max(requested.x0, 0)
            y0 = max(requested.y0, 0)
            x1 = min(requested.x1, image.width)
            y1 = min(requested.y1, image.height)
            call = ToolCall(
                "crop",
                {"x0": requested.x0, "y0": requested.y0, "x1": requested.x1, "y1": requested.y1},
            )
            if x0 >= x1 or y0 >= y1:
                raise _ToolFailure(call, "requested region lies outside the image")
            bbox = BBox(x0, y0, x1, y1)
        else:
            bbox = foreground_extract(image, median_kernel=self._config.median_kernel).bbox
            call = ToolCall(
                "crop", {"x0": bbox.x0, "y0": bbox.y0, "x1": bbox.x1, "y1": bbox.y1}
            )
        return call, Observation("crop", "image", crop(image, bbox))

    def _tool_enhance(self, routing, image):
        cfg = self._config
        if routing.target_type in ("edge", "corner"):
            call = ToolCall(
                "enhance", {"mode": "edge", "low": cfg.canny_low, "high": cfg.canny_high}
            )
            result = edge_map(image, cfg.canny_low, cfg.canny_high)
        else:
            call = ToolCall(
                "enhance",
                {
                    "mode": "clahe",
                    "clip_limit": cfg.clahe_clip,
                    "tiles_x": cfg.clahe_tiles[0],
                    "tiles_y": cfg.clahe_tiles[1],
                },
            )
            result = clahe(image, cfg.clahe_clip, cfg.clahe_tiles)
        return call, Observation("enhance", "image", result)

    def _tool_measure(self, routing):
        points = parse_points(routing.tool_target or "")
        if len(points) < 2:
            call = ToolCall("measure", {"target": routing.tool_target or "none"})
            raise _ToolFailure(call, "missing coordinates")
        a, b = points[0], points[1]
        call = ToolCall("measure", {"x0": a.x, "y0": a.y, "x1": b.x, "y1": b.y})
        try:
            result = measure_distance(a, b)
        except ImagingError as exc:
            raise _ToolFailure(call, str(exc)) from exc
        return call, Observation("measure", "measurement", result)

    def _tool_prior(self, category, view):
        call = ToolCall("prior", {"category": category, "view": view})
        if self._priors is None:
            raise _ToolFailure(call, "no prior store configured")
        try:
            record = self._priors.lookup(category, view)
        except PriorNotFound as exc:
            raise _ToolFailure(call, str(exc.args[0])) from exc
        return call, Observation("prior", "text", record.text)

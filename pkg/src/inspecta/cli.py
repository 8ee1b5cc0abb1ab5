"""The ``inspecta`` command line.

Subcommands mirror the package layers: ``tool`` runs a single imaging tool,
``infer`` drives the two-round diagnosis loop over a dataset, ``eval``
computes detection metrics from saved records, ``reward`` scores records and
group objectives, ``corpus`` builds and exports training trajectories, and
``filter`` enforces category disjointness between training and test splits.

Machine-readable output goes to the path given by ``--out`` (JSON or JSONL);
human summaries go to stdout. Exit codes: 0 success, 1 domain error,
2 usage error.
"""

from __future__ import annotations

import functools
import json
import logging
from pathlib import Path

import click

from . import __version__
from .config import ConfigError, load_config, _as_tiles
from .corpus import (
    CorpusBuilder,
    CorpusError,
    build_corpus,
    export_sft,
)
from .evaluation import (
    EvaluationError,
    balanced_accuracy,
    anomaly_recall,
    category_disjoint_filter,
    confusion_from_predictions,
    f1_score,
    load_dataset,
    tool_usage_stats,
)
from .imaging import (
    ImagingError,
    RasterImage,
    clahe,
    crop,
    edge_map,
    foreground_extract,
    measure_angle,
    measure_distance,
    parse_points,
    parse_region,
)
from .orchestrator import Orchestrator, OrchestratorConfig, OrchestratorError
from .policy_gateway import (
    GatewayAuthError,
    GatewayError,
    HttpPolicyClient,
    ScriptedPolicy,
    response_from_script,
)
from .priors import PriorError, PriorNotFound, PriorStore
from .prompts import PromptError
from .rewards import (
    RewardError,
    group_advantages,
    grpo_objective,
    score_record,
)
from .trajectory import BinaryLabel, TrajectoryError

log = logging.getLogger(__name__)

_DOMAIN_ERRORS = (
    ImagingError,
    EvaluationError,
    PriorError,
    PriorNotFound,
    RewardError,
    CorpusError,
    ConfigError,
    OrchestratorError,
    GatewayError,
    TrajectoryError,
    PromptError,
    OSError,
)


def domain_errors(fn):
    """Map package exceptions to exit code 1 with a clean stderr line."""

    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except _DOMAIN_ERRORS as exc:
            message = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
            click.echo(f"error: {message}", err=True)
            raise SystemExit(1)

    return wrapper


def _fmt(value, digits=4):
    return "n/a" if value is None else f"{value:.{digits}f}"


def _write_jsonl(path, rows) -> None:
    with Path(path).open("w") as fh:
        for row in rows:
            fh.write(json.dumps(row) + "\n")


def _read_jsonl(path) -> list:
    rows = []
    for i, line in enumerate(Path(path).read_text().splitlines()):
        line = line.strip()
        if not line:
            continue
        try:
            rows.append(json.loads(line))
        except json.JSONDecodeError as exc:
            raise EvaluationError(f"{path} line {i + 1} is not valid JSON: {exc}")
    return rows


@click.group()
@click.version_option(__version__, prog_name="inspecta")
@click.option("-v", "--verbose", is_flag=True, help="Enable debug logging.")
def main(verbose):
    """Tool-augmented industrial anomaly inspection."""
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )


# --------------------------------------------------------------------------
# tool subcommands


@main.group()
def tool():
    """Run one imaging tool directly."""


@tool.command("crop")
@click.option("--image", "image_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--bbox", default=None, help='Region "X0,Y0,X1,Y1"; omitted = auto foreground.')
@click.option("--background", default=None, type=click.Path(exists=True, dir_okay=False),
              help="Explicit background image for foreground extraction.")
@click.option("--out", default=None, type=click.Path(dir_okay=False), help="Write the cropped PNG here.")
@click.option("--print-bbox", is_flag=True, help="Print the region even when --out is given.")
@domain_errors
def tool_crop(image_path, bbox, background, out, print_bbox):
    """Crop a region, locating the foreground object when none is given."""
    image = RasterImage.load_png(Path(image_path))
    if bbox is not None:
        region = parse_region(bbox)
        if region is None:
            raise ImagingError(f"could not parse bbox {bbox!r}")
    else:
        bg = RasterImage.load_png(Path(background)) if background else None
        region = foreground_extract(image, bg).bbox
    result = crop(image, region)
    if out:
        result.save_png(Path(out))
        click.echo(f"wrote {out}")
    if print_bbox or not out:
        click.echo(f"{region.x0},{region.y0},{region.x1},{region.y1}")


@tool.command("enhance")
@click.option("--image", "image_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--mode", type=click.Choice(["clahe", "edge"]), default="clahe", show_default=True)
@click.option("--clip-limit", default=2.0, show_default=True, type=float)
@click.option("--tiles", default="8x8", show_default=True, help='CLAHE grid, e.g. "8x8".')
@click.option("--low", default=50.0, show_default=True, type=float, help="Edge low threshold.")
@click.option("--high", default=150.0, show_default=True, type=float, help="Edge high threshold.")
@click.option("--out", required=True, type=click.Path(dir_okay=False))
@domain_errors
def tool_enhance(image_path, mode, clip_limit, tiles, low, high, out):
    """Contrast-enhance (CLAHE) or edge-map an image."""
    image = RasterImage.load_png(Path(image_path))
    if mode == "clahe":
        result = clahe(image, clip_limit, _as_tiles(tiles))
    else:
        result = edge_map(image, low, high)
    result.save_png(Path(out))
    click.echo(f"wrote {out} (mode={mode})")


@tool.command("measure")
@click.option("--distance", nargs=2, default=None, metavar='"X,Y" "X,Y"',
              help="Distance between two points.")
@click.option("--angle", nargs=3, default=None, metavar='"X,Y" "X,Y" "X,Y"',
              help="Angle at the middle (vertex) point, in degrees.")
@click.option("--units-per-pixel", default=None, type=float)
@click.option("--unit", default="px", show_default=True)
@domain_errors
def tool_measure(distance, angle, units_per_pixel, unit):
    """Measure a distance or an angle between reference points."""
    if bool(distance) == bool(angle):
        raise click.UsageError("pass exactly one of --distance or --angle")
    if distance:
        points = parse_points(" ".join(distance))
        if len(points) != 2:
            raise ImagingError(f"expected two points, got {distance!r}")
        result = measure_distance(
            points[0], points[1], units_per_pixel=units_per_pixel, unit=unit
        )
    else:
        points = parse_points(" ".join(angle))
        if len(points) != 3:
            raise ImagingError(f"expected three points, got {angle!r}")
        result = measure_angle(points[0], points[1], points[2])
    click.echo(result.render())


@tool.command("prior")
@click.option("--category", required=True)
@click.option("--view", default="*", show_default=True)
@click.option("--priors", "priors_path", required=True, type=click.Path(exists=True, dir_okay=False))
@domain_errors
def tool_prior(category, view, priors_path):
    """Look up the normalcy prior for a category and view."""
    store = PriorStore.load(priors_path)
    record = store.lookup(category, view)
    click.echo(record.text)


# --------------------------------------------------------------------------
# inference


def _scripted_factory(script_path):
    raw = json.loads(Path(script_path).read_text())
    if not isinstance(raw, dict):
        raise GatewayError(f"script {script_path} must map sample ids to reply lists")
    replies = {}
    for sample_id, entries in raw.items():
        if not isinstance(entries, list):
            raise GatewayError(f"script entry for {sample_id!r} must be a list")
        replies[sample_id] = [response_from_script(e) for e in entries]

    def factory(sample):
        return ScriptedPolicy(list(replies.get(sample.sample_id, ())))

    return factory


def _http_client(cfg) -> HttpPolicyClient:
    client = HttpPolicyClient(endpoint=cfg.endpoint_url, model=cfg.endpoint_model)
    if not (client.endpoint and client.model and client.api_key):
        raise GatewayAuthError(
            "http backend needs endpoint, model, and api key "
            "(config [endpoint] plus INSPECTA_API_KEY, or INSPECTA_* variables)"
        )
    return client


@main.command("infer")
@click.option("--dataset", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--out", required=True, type=click.Path(dir_okay=False), help="Records JSONL.")
@click.option("--backend", type=click.Choice(["mock", "http"]), required=True)
@click.option("--script", default=None, type=click.Path(exists=True, dir_okay=False),
              help="Scripted replies JSON for the mock backend.")
@click.option("--config", "config_path", default=None, type=click.Path(exists=True, dir_okay=False))
@click.option("--jobs", default=None, type=int)
@click.option("--seed", default=None, type=int)
@click.option("--margins/--no-margins", "margins", default=None,
              help="Probe answer confidence before and after tool use.")
@click.option("--direct", is_flag=True, help="Single-round mode without tools.")
@domain_errors
def infer(dataset, out, backend, script, config_path, jobs, seed, margins, direct):
    """Diagnose every dataset sample and write one record per line."""
    cfg = load_config(config_path).with_overrides(
        jobs=jobs, seed=seed, compute_margins=margins
    )
    samples = load_dataset(dataset)

    factory = None
    policy = None
    if backend == "mock":
        if not script:
            raise click.UsageError("--backend mock requires --script")
        factory = _scripted_factory(script)
    else:
        policy = _http_client(cfg)

    priors = PriorStore.load(cfg.priors_path) if cfg.priors_path else None
    orch_config = OrchestratorConfig(
        mode="direct" if direct else "agentic",
        compute_margins=cfg.compute_margins,
        temperature=cfg.temperature,
        max_tokens=cfg.max_tokens,
        clahe_clip=cfg.clahe_clip,
        clahe_tiles=cfg.clahe_tiles,
        canny_low=cfg.canny_low,
        canny_high=cfg.canny_high,
        median_kernel=cfg.median_kernel,
    )
    orchestrator = Orchestrator(policy, priors, orch_config)
    records = orchestrator.run_batch(samples, jobs=cfg.jobs, policy_factory=factory)

    rows = [r.to_json_dict() for r in records]
    _write_jsonl(out, rows)

    answers = {"Yes": 0, "No": 0, "unparseable": 0}
    for row in rows:
        answers[row["final"]["answer"] or "unparseable"] += 1
    called = sum(1 for row in rows if row["tool_calls"])
    click.echo(f"samples        {len(rows)}")
    click.echo(f"answered yes   {answers['Yes']}")
    click.echo(f"answered no    {answers['No']}")
    click.echo(f"unparseable    {answers['unparseable']}")
    click.echo(f"used tools     {called}")
    click.echo(f"records        {out}")


# --------------------------------------------------------------------------
# evaluation


def _load_predictions(path):
    predictions = {}
    rows = _read_jsonl(path)
    full_records = True
    for row in rows:
        sample_id = row.get("sample_id")
        if not sample_id:
            raise EvaluationError(f"prediction line missing sample_id: {row!r}")
        if "final" in row:
            answer = (row.get("final") or {}).get("answer")
        else:
            answer = row.get("answer")
            full_records = False
        if "tool_calls" not in row:
            full_records = False
        predictions[sample_id] = (
            BinaryLabel.from_text(str(answer), lenient=True) if answer else None
        )
    return predictions, rows if full_records else None


@main.command("eval")
@click.option("--dataset", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--predictions", required=True, type=click.Path(exists=True, dir_okay=False),
              help="Records JSONL from `inspecta infer` (or {sample_id, answer} lines).")
@click.option("--out", default=None, type=click.Path(dir_okay=False), help="Metrics JSON.")
@click.option("--unparseable-as-normal", is_flag=True,
              help="Count unparseable predictions as No instead of excluding them.")
@domain_errors
def eval_cmd(dataset, predictions, out, unparseable_as_normal):
    """Compute detection metrics for saved predictions."""
    samples = load_dataset(dataset)
    preds, records = _load_predictions(predictions)
    counts, excluded = confusion_from_predictions(
        samples, preds, unparseable_as_normal=unparseable_as_normal
    )

    def guarded(metric):
        try:
            return metric(counts)
        except EvaluationError:
            return None

    accuracy = (counts.tp + counts.tn) / counts.total if counts.total else None
    report = {
        "samples": len(samples),
        "evaluated": counts.total,
        "excluded_unparseable": excluded,
        "confusion": {"tp": counts.tp, "fp": counts.fp, "tn": counts.tn, "fn": counts.fn},
        "accuracy": accuracy,
        "balanced_accuracy": guarded(balanced_accuracy),
        "anomaly_recall": anomaly_recall(counts),
        "f1": f1_score(counts),
        "tool_usage": None,
    }
    if records:
        stats = tool_usage_stats(records)
        report["tool_usage"] = {
            "call_rate": stats.call_rate,
            "avg_calls": stats.avg_calls,
            "per_tool": stats.per_tool,
            "success_rate": stats.success_rate,
        }

    if out:
        Path(out).write_text(json.dumps(report, indent=2) + "\n")
    click.echo(f"samples            {report['samples']}")
    click.echo(f"evaluated          {report['evaluated']}")
    click.echo(f"excluded           {report['excluded_unparseable']}")
    click.echo(f"accuracy           {_fmt(report['accuracy'])}")
    click.echo(f"balanced accuracy  {_fmt(report['balanced_accuracy'])}")
    click.echo(f"anomaly recall     {_fmt(report['anomaly_recall'])}")
    click.echo(f"f1                 {_fmt(report['f1'])}")
    if report["tool_usage"]:
        usage = report["tool_usage"]
        click.echo(f"tool call rate     {_fmt(usage['call_rate'])}")
        click.echo(f"avg calls/sample   {_fmt(usage['avg_calls'])}")


# --------------------------------------------------------------------------
# rewards


@main.group()
def reward():
    """Reward scoring and group objectives."""


@reward.command("score")
@click.option("--records", "records_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--dataset", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--out", required=True, type=click.Path(dir_okay=False), help="Breakdown JSONL.")
@click.option("--config", "config_path", default=None, type=click.Path(exists=True, dir_okay=False))
@domain_errors
def reward_score(records_path, dataset, out, config_path):
    """Score diagnosis records against dataset annotations."""
    cfg = load_config(config_path)
    weights = cfg.reward_weights()
    samples = {s.sample_id: s for s in load_dataset(dataset)}
    rows = []
    for record in _read_jsonl(records_path):
        sample_id = record.get("sample_id")
        sample = samples.get(sample_id)
        if sample is None:
            raise RewardError(f"record {sample_id!r} has no matching dataset sample")
        rows.append(score_record(record, sample, weights).to_json_dict())
    _write_jsonl(out, rows)

    n = len(rows)
    if n:
        mean_total = sum(r["total"] for r in rows) / n
        acc = sum(1 for r in rows if r["accuracy"]) / n
        valid = sum(1 for r in rows if r["format_valid"]) / n
    else:
        mean_total = acc = valid = None
    click.echo(f"records       {n}")
    click.echo(f"mean reward   {_fmt(mean_total)}")
    click.echo(f"accuracy      {_fmt(acc)}")
    click.echo(f"format valid  {_fmt(valid)}")


@reward.command("grpo")
@click.option("--groups", "groups_path", required=True, type=click.Path(exists=True, dir_okay=False),
              help='JSONL, one group per line: {"rewards": [...], "ratios": [...], "kls": [...]}.')
@click.option("--out", required=True, type=click.Path(dir_okay=False))
@click.option("--epsilon", default=None, type=float)
@click.option("--kl-weight", default=None, type=float)
@click.option("--config", "config_path", default=None, type=click.Path(exists=True, dir_okay=False))
@domain_errors
def reward_grpo(groups_path, out, epsilon, kl_weight, config_path):
    """Standardize rewards into advantages and compute the clipped objective."""
    cfg = load_config(config_path).with_overrides(clip_epsilon=epsilon, kl_weight=kl_weight)
    rows = []
    losses = []
    for i, group in enumerate(_read_jsonl(groups_path)):
        rewards = group.get("rewards")
        if not isinstance(rewards, list) or not rewards:
            raise RewardError(f"group {i} needs a non-empty rewards list")
        advantages = group_advantages([float(r) for r in rewards])
        ratios = [float(r) for r in group.get("ratios", [1.0] * len(rewards))]
        kls = [float(k) for k in group.get("kls", [0.0] * len(rewards))]
        loss = grpo_objective(
            ratios, advantages, kls, epsilon=cfg.clip_epsilon, kl_weight=cfg.kl_weight
        )
        losses.append(loss)
        rows.append(
            {"group": group.get("group", i), "advantages": advantages, "loss": loss}
        )
    _write_jsonl(out, rows)
    mean_loss = sum(losses) / len(losses) if losses else None
    click.echo(f"groups     {len(rows)}")
    click.echo(f"mean loss  {_fmt(mean_loss, 6)}")


# --------------------------------------------------------------------------
# corpus


@main.group()
def corpus():
    """Training-corpus construction and export."""


def _corpus_factories(backend, script, cfg, judge_model):
    if backend == "mock":
        if not script:
            raise click.UsageError("--backend mock requires --script")
        raw = json.loads(Path(script).read_text())
        if not isinstance(raw, dict):
            raise GatewayError(f"script {script} must map sample ids to reply objects")
        parsed = {}
        for sample_id, entry in raw.items():
            if not isinstance(entry, dict) or "teacher" not in entry:
                raise GatewayError(f"script entry for {sample_id!r} needs a teacher list")
            teacher = [response_from_script(e) for e in entry["teacher"]]
            judge_entries = entry.get("judge")
            judge = (
                [response_from_script(e) for e in judge_entries]
                if judge_entries is not None
                else None
            )
            parsed[sample_id] = (teacher, judge)

        def teacher_for(sample):
            teacher, _ = parsed.get(sample.sample_id, ([], None))
            return ScriptedPolicy(list(teacher))

        def judge_for(sample):
            _, judge = parsed.get(sample.sample_id, ([], None))
            return ScriptedPolicy(list(judge)) if judge is not None else None

        return teacher_for, judge_for

    client = _http_client(cfg)
    judge_client = None
    if judge_model:
        judge_client = HttpPolicyClient(endpoint=cfg.endpoint_url, model=judge_model)
    return (lambda sample: client), (lambda sample: judge_client)


@corpus.command("build")
@click.option("--dataset", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--out", required=True, type=click.Path(dir_okay=False), help="Corpus records JSONL.")
@click.option("--backend", type=click.Choice(["mock", "http"]), required=True)
@click.option("--script", default=None, type=click.Path(exists=True, dir_okay=False),
              help='Mock replies JSON: {sample_id: {"teacher": [...], "judge": [...]}}.')
@click.option("--candidates", default=1, show_default=True, type=int)
@click.option("--max-attempts", default=3, show_default=True, type=int)
@click.option("--jobs", default=None, type=int)
@click.option("--judge-model", default=None, help="Judge model name for the http backend.")
@click.option("--config", "config_path", default=None, type=click.Path(exists=True, dir_okay=False))
@domain_errors
def corpus_build(dataset, out, backend, script, candidates, max_attempts, jobs, judge_model, config_path):
    """Distill one training trajectory per dataset sample."""
    cfg = load_config(config_path).with_overrides(jobs=jobs)
    samples = load_dataset(dataset)
    teacher_for, judge_for = _corpus_factories(backend, script, cfg, judge_model)

    def builder_factory(sample):
        return CorpusBuilder(
            teacher_for(sample),
            judge_for(sample),
            max_attempts=max_attempts,
            temperature=cfg.temperature,
            max_tokens=cfg.max_tokens,
        )

    records = build_corpus(
        samples, builder_factory, num_candidates=candidates, jobs=cfg.jobs
    )
    _write_jsonl(out, [r.to_json_dict() for r in records])

    by_status = {"valid": 0, "repaired": 0, "rejected": 0}
    for record in records:
        by_status[record.status] += 1
    click.echo(f"samples   {len(records)}")
    click.echo(f"valid     {by_status['valid']}")
    click.echo(f"repaired  {by_status['repaired']}")
    click.echo(f"rejected  {by_status['rejected']}")
    click.echo(f"records   {out}")


@corpus.command("export")
@click.option("--records", "records_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--out", required=True, type=click.Path(dir_okay=False), help="SFT JSONL.")
@click.option("--balance", is_flag=True, help="Downsample the majority label class.")
@click.option("--seed", default=0, show_default=True, type=int)
@click.option("--question", default=None, help="Question text for the instruction template.")
@click.option("--skip-rejected", is_flag=True,
              help="Drop rejected records instead of failing on them.")
@domain_errors
def corpus_export(records_path, out, balance, seed, question, skip_rejected):
    """Export corpus records as SFT training lines with loss spans."""
    records = _read_jsonl(records_path)
    if skip_rejected:
        kept = [r for r in records if r.get("status") != "rejected"]
        dropped = len(records) - len(kept)
        if dropped:
            click.echo(f"dropped {dropped} rejected record(s)", err=True)
        records = kept
    kwargs = {"balance": balance, "seed": seed}
    if question is not None:
        kwargs["question"] = question
    written = export_sft(records, out, **kwargs)
    click.echo(f"wrote {written} training line(s) to {out}")


# --------------------------------------------------------------------------
# category filter


def _read_names(value) -> list:
    path = Path(value)
    if path.is_file():
        text = path.read_text()
        names = [part.strip() for part in text.replace(",", "\n").splitlines()]
    else:
        names = [part.strip() for part in value.split(",")]
    return [name for name in names if name]


@main.group("filter")
def filter_group():
    """Dataset hygiene filters."""


@filter_group.command("categories")
@click.option("--train", required=True,
              help="Training categories: comma-separated names or a file with one per line.")
@click.option("--test", required=True,
              help="Test categories: comma-separated names or a file with one per line.")
@click.option("--out", default=None, type=click.Path(dir_okay=False), help="Result JSON.")
@domain_errors
def filter_categories(train, test, out):
    """Drop training categories that collide with test categories."""
    result = category_disjoint_filter(_read_names(train), _read_names(test))
    report = {
        "retained": list(result.retained),
        "removed": [
            {"category": r.category, "matched_test_category": r.matched_test_category}
            for r in result.removed
        ],
    }
    if out:
        Path(out).write_text(json.dumps(report, indent=2) + "\n")
    for removed in result.removed:
        click.echo(f"removed {removed.category} (matches {removed.matched_test_category})")
    click.echo(f"retained {len(result.retained)} of "
               f"{len(result.retained) + len(result.removed)} categories")


if __name__ == "__main__":
    main()

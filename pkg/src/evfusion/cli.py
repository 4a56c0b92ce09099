"""Command-line interface: run, batch, replay, ablate, analyze, tools."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from collections.abc import Sequence
from pathlib import Path
from typing import Any

from .analytics import EvidenceFilter, ablation_markdown, analyze, run_ablations
from .argumentation import argue, render
from .backends import ChatSession, RecordedChatClient, chat_client_for
from .config import RunConfig, load_config
from .errors import ConfigurationError, EvFusionError, InvalidInputError, PipelineInvariantError
from .evidence import ContentType
from .pipeline import Runtime, SampleSpec, run_batch, run_sample
from .records import PipelineRecord, read_records, write_records
from .tools import ToolCatalog, build_default_catalog, format_catalog

log = logging.getLogger("evfusion")

EXIT_OK, EXIT_INVARIANT, EXIT_CONFIG = 0, 1, 2


class UsageError(Exception):
    pass


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", metavar="PATH", help="JSON run configuration")
    p.add_argument("--out", metavar="DIR", help="output directory")
    p.add_argument("--seed", type=int, metavar="N", help="sampling seed passed to backends")
    p.add_argument(
        "--content-override",
        choices=[c.value for c in ContentType],
        help="skip content classification and use this type",
    )
    p.add_argument("--workers", type=int, metavar="N", help="parallel samples (batch) or replays")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = argparse.ArgumentParser(prog="evfusion", description="Evidence-weighted audio question answering.")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", parents=[common], help="answer one sample")
    run.add_argument("--sample", metavar="JSON", help="sample spec file (instead of the flags below)")
    run.add_argument("--sample-id", default="sample")
    run.add_argument("--audio", help="audio URI resolvable by the backends")
    run.add_argument("--question")
    run.add_argument("--choice", action="append", dest="choices", help="repeat once per option")
    run.add_argument("--duration", type=float, help="audio duration in seconds")
    run.add_argument("--answer", help="gold label, if known")

    batch = sub.add_parser("batch", parents=[common], help="answer every sample in a JSONL manifest")
    batch.add_argument("manifest")

    replay = sub.add_parser("replay", parents=[common], help="re-run argumentation from logged records")
    replay.add_argument("log")
    replay.add_argument(
        "--use-config", action="store_true", help="call the configured reasoner instead of the logged answers"
    )

    ablate = sub.add_parser("ablate", parents=[common], help="replay ablation with McNemar tests")
    ablate.add_argument("log")
    ablate.add_argument(
        "--filter",
        action="append",
        dest="filters",
        choices=[f.value for f in EvidenceFilter if f is not EvidenceFilter.BOTH],
        help="variant(s) to compare with the baseline replay (default: both single-source variants)",
    )
    ablate.add_argument("--alpha", type=float, default=0.05)
    ablate.add_argument("--chi2", action="store_true", help="asymptotic test instead of exact")

    an = sub.add_parser("analyze", parents=[common], help="agreement, calibration, corroboration tables")
    an.add_argument("log")

    tools = sub.add_parser("tools", parents=[common], help="tool catalog")
    tools_sub = tools.add_subparsers(dest="tools_command", required=True)
    tl = tools_sub.add_parser("list", parents=[common], help="print the catalog")
    tl.add_argument("--content", choices=[c.value for c in ContentType])
    return parser


def _overrides(args: argparse.Namespace) -> dict[str, Any]:
    return {
        "out": args.out,
        "seed": args.seed,
        "content_override": args.content_override,
        "workers": args.workers,
    }


def _config(args: argparse.Namespace) -> RunConfig:
    return load_config(args.config, overrides=_overrides(args))


def _out_dir(args: argparse.Namespace, config: RunConfig | None) -> Path:
    out = Path(args.out or (config.out_dir if config else "out"))
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_json(path: Path, data: Any) -> None:
    path.write_text(json.dumps(data, indent=2, sort_keys=True, ensure_ascii=False) + "\n", encoding="utf-8")


def cmd_run(args: argparse.Namespace) -> int:
    if args.sample:
        try:
            data = json.loads(Path(args.sample).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read sample spec {args.sample}: {exc}") from exc
    else:
        if not args.choices:
            raise UsageError("run needs --choice (at least two) or --sample")
        if not (args.audio and args.question and args.duration):
            raise UsageError("run needs --audio, --question and --duration")
        data = {
            "sample_id": args.sample_id,
            "audio": args.audio,
            "question": args.question,
            "choices": args.choices,
            "duration_s": args.duration,
            "answer": args.answer,
        }
    try:
        spec = SampleSpec.from_dict(data)
    except InvalidInputError as exc:
        raise UsageError(str(exc)) from exc
    config = _config(args)
    runtime = Runtime.from_config(config)
    outcome = run_sample(spec, runtime)
    out = _out_dir(args, config)
    write_records([outcome.record], out / "records.jsonl")
    _write_json(out / f"{spec.sample_id}.output.json", outcome.output)
    print(render(outcome.argument, outcome.record.bundle()))
    return EXIT_OK


def read_manifest(path: str | Path) -> list[SampleSpec]:
    specs = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                specs.append(SampleSpec.from_dict(json.loads(line)))
            except (json.JSONDecodeError, InvalidInputError) as exc:
                log.warning("%s:%d: skipping bad manifest line (%s)", path, lineno, exc)
    return specs


def cmd_batch(args: argparse.Namespace) -> int:
    config = _config(args)
    try:
        specs = read_manifest(args.manifest)
    except OSError as exc:
        raise UsageError(f"cannot read manifest: {exc}") from exc
    runtime = Runtime.from_config(config)
    failures: list[dict[str, str]] = []

    def on_error(spec: SampleSpec, exc: Exception) -> None:
        log.warning("%s failed: %s", spec.sample_id, exc)
        failures.append({"sample_id": spec.sample_id, "error": f"{type(exc).__name__}: {exc}"})

    outcomes = [o for o in run_batch(specs, runtime, config.workers, on_error) if o is not None]
    out = _out_dir(args, config)
    write_records([o.record for o in outcomes], out / "records.jsonl")
    with open(out / "outputs.jsonl", "w", encoding="utf-8") as fh:
        for o in outcomes:
            fh.write(json.dumps(o.output, sort_keys=True, ensure_ascii=False) + "\n")
    graded = [o.record.is_correct for o in outcomes if o.record.is_correct is not None]
    summary = {
        "samples": len(specs),
        "completed": len(outcomes),
        "failed": failures,
        "graded": len(graded),
        "correct": sum(graded),
        "accuracy": round(sum(graded) / len(graded), 4) if graded else None,
    }
    _write_json(out / "summary.json", summary)
    print(json.dumps(summary, sort_keys=True))
    return EXIT_OK


def cmd_replay(args: argparse.Namespace) -> int:
    config = _config(args) if args.use_config else None
    rows = []
    for rec in read_records(args.log):
        if config is not None:
            client = chat_client_for(config.profiles["reasoner"])
            endpoint = config.profiles["reasoner"].endpoint_id
        else:
            client = RecordedChatClient(rec.exchanges)
            endpoint = _reasoner_endpoint(rec)
        session = ChatSession(client, endpoint, clock=lambda: 0.0, sink=[])
        argument = argue(rec.bundle(), session)
        recorded = rec.chosen
        rows.append(
            {
                "sample_id": rec.sample_id,
                "recorded": recorded,
                "replayed": argument.decision.chosen,
                "match": recorded == argument.decision.chosen,
                "completeness_pass": argument.completeness.passed,
            }
        )
    for row in rows:
        print(json.dumps(row, sort_keys=True))
    matched = sum(r["match"] for r in rows)
    print(f"{matched}/{len(rows)} decisions reproduced")
    return EXIT_OK


def _reasoner_endpoint(rec: PipelineRecord) -> str:
    sources = set(rec.sources)
    others = [e.endpoint for e in rec.exchanges if e.endpoint not in sources]
    return others[-1] if others else "reasoner"


def cmd_ablate(args: argparse.Namespace) -> int:
    config = _config(args)
    filters = [EvidenceFilter(f) for f in (args.filters or ["source_a_only", "source_b_only"])]
    profile = config.profiles["reasoner"]
    client = chat_client_for(profile)
    records = list(read_records(args.log))
    base, variants = run_ablations(
        records,
        filters,
        client,
        profile.endpoint_id,
        args.alpha,
        not args.chi2,
        config.scoring,
        config.workers,
    )
    out = _out_dir(args, config)
    payload = {"baseline": base.to_dict(), "variants": [v.to_dict() for v in variants], "alpha": args.alpha}
    _write_json(out / "ablation.json", payload)
    md = ablation_markdown(base, variants)
    (out / "ablation.md").write_text(md + "\n", encoding="utf-8")
    print(json.dumps(payload, sort_keys=True))
    print(md)
    return EXIT_OK


def cmd_analyze(args: argparse.Namespace) -> int:
    report = analyze(read_records(args.log))
    out = Path(args.out) if args.out else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        for name, text in report.csv_files().items():
            (out / name).write_text(text, encoding="utf-8")
    print(report.text())
    return EXIT_OK


def cmd_tools(args: argparse.Namespace) -> int:
    catalog: ToolCatalog = build_default_catalog()
    if args.config:
        catalog = _config(args).catalog()
    content = ContentType(args.content) if args.content else None
    print(format_catalog(catalog, content))
    return EXIT_OK


COMMANDS = {
    "run": cmd_run,
    "batch": cmd_batch,
    "replay": cmd_replay,
    "ablate": cmd_ablate,
    "analyze": cmd_analyze,
    "tools": cmd_tools,
}


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        parser.error(str(exc))
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except PipelineInvariantError as exc:
        print(f"invariant breach: {exc}", file=sys.stderr)
        return EXIT_INVARIANT
    except (EvFusionError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVARIANT
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())

"""Regenerate the checked-in pipeline fixtures and golden outputs.

    python3 -m tests.support.make_fixtures

Runs every scenario through the simulator with recording clients, then
replays the batch from the written fixtures to produce the golden files.
"""

from __future__ import annotations

import json
import shutil
from pathlib import Path

from evfusion.backends import RecordingChatClient, RecordingToolClient
from evfusion.cli import main
from evfusion.config import load_config
from evfusion.pipeline import Runtime, SampleSpec, run_sample

from .scenarios import REASONER, SCENARIOS, SOURCE_A, SOURCE_B, TOOLS
from .sim import Simulator

FIXTURES = Path(__file__).resolve().parent.parent / "fixtures" / "pipeline"


def config_dict() -> dict:
    def chat(endpoint: str) -> dict:
        return {"kind": "fixture", "endpoint_id": endpoint, "fixture_path": "chat"}

    return {
        "profiles": {
            "source_a": chat(SOURCE_A),
            "source_b": chat(SOURCE_B),
            "reasoner": chat(REASONER),
            "tools": {"kind": "fixture", "endpoint_id": TOOLS, "fixture_path": "."},
        },
        "seed": 0,
        "workers": 1,
    }


def write_inputs(root: Path) -> None:
    root.mkdir(parents=True, exist_ok=True)
    (root / "config.json").write_text(json.dumps(config_dict(), indent=2, sort_keys=True) + "\n")
    with open(root / "manifest.jsonl", "w", encoding="utf-8") as fh:
        for s in SCENARIOS:
            fh.write(json.dumps(s.spec(), sort_keys=True) + "\n")


def record(root: Path) -> None:
    config = load_config(root / "config.json", env={})
    sim = Simulator(SCENARIOS)
    chat = RecordingChatClient(sim.chat_client(), root / "chat")
    runtime = Runtime(
        config,
        config.catalog(),
        {role: chat for role in ("source_a", "source_b", "reasoner")},
        RecordingToolClient(sim.tool_client(), root),
    )
    for s in SCENARIOS:
        run_sample(SampleSpec.from_dict(s.spec()), runtime)


def golden(root: Path) -> None:
    out = root / "golden"
    code = main(["batch", str(root / "manifest.jsonl"), "--config", str(root / "config.json"), "--out", str(out)])
    if code != 0:
        raise SystemExit(f"golden batch failed with exit code {code}")


def regenerate(root: Path = FIXTURES) -> None:
    for sub in ("chat", "tools", "golden"):
        shutil.rmtree(root / sub, ignore_errors=True)
    write_inputs(root)
    record(root)
    golden(root)


if __name__ == "__main__":
    regenerate()

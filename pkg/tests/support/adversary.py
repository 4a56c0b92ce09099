"""A reasoner that always wants more tools and tools that never settle anything."""

from __future__ import annotations

import json
import re
from typing import Any

from evfusion.backends import ChatRequest, FunctionChatClient, FunctionToolClient
from evfusion.config import config_from_dict
from evfusion.pipeline import Runtime, SampleSpec
from evfusion.tools import ToolRequest

SPEC = SampleSpec(
    sample_id="adversarial",
    audio="fixture://adversarial.wav",
    question="Which animal is heard first?",
    choices=("a dog", "a cat", "a bird", "a horse"),
    duration_s=30.0,
    answer="A",
)

_TOOL_LINE = re.compile(r"^- (?P<name>.+?) \[[a-z]+, [a-z_]+\]: ")
_ITEM_LINE = re.compile(r"^\[(?P<id>ev:[^\]]+)\] \((?P<src>[^;]+);")


class Adversary:
    def __init__(self) -> None:
        self.tool_calls: list[ToolRequest] = []
        self.proposals = 0

    def chat(self, request: ChatRequest) -> str:
        text = "\n".join(m.content for m in request.messages if m.role == "user")
        if text.startswith("TASK: unified-analysis"):
            return "no structured answer"
        if text.startswith("TASK: tool-selection"):
            return self.propose(text)
        if text.startswith("TASK: contradiction-detection"):
            return self.conflicts(text)
        if text.startswith("TASK: answer-selection"):
            return "ANSWER: A"
        if text.startswith("TASK: reasoning"):
            return "no sections at all"
        if request.endpoint == "src-a":
            return "OBSERVATION: a dog barks first\nTIME: 2.0-3.0\nCONTENT: music\nTENTATIVE: A"
        return "OBSERVATION: a cat meows first\nTIME: 2.5-3.5\nCONTENT: music\nTENTATIVE: B"

    def propose(self, text: str) -> str:
        self.proposals += 1
        names = [m.group("name") for m in map(_TOOL_LINE.match, text.splitlines()) if m]
        done = re.search(r"^Already run: (.*)$", text, re.M)
        ran = done.group(1).split(", ") if done else []
        fresh = [n for n in names if n not in ran]
        # Re-propose something already run to exercise duplicate suppression.
        picks = ran[:1] + fresh[: 4 - len(ran[:1])]
        return json.dumps([{"tool": n, "params": {}} for n in picks])

    def conflicts(self, text: str) -> str:
        rows = [m.groupdict() for m in map(_ITEM_LINE.match, text.splitlines()) if m]
        out = []
        for i, a in enumerate(rows):
            for b in rows[i + 1 :]:
                if a["src"] != b["src"]:
                    out.append({"kind": "lalm_vs_tool", "item_ids": [a["id"], b["id"]], "description": "x"})
        return json.dumps(out)

    def tool(self, request: ToolRequest) -> dict[str, Any]:
        self.tool_calls.append(request)
        return {"output": {"summary": "inconclusive"}, "confidence": 0.05, "relevance": 0.0}


def runtime(adversary: Adversary) -> Runtime:
    prof = {"kind": "fixture", "fixture_path": "unused"}
    config = config_from_dict(
        {
            "profiles": {
                "source_a": {**prof, "endpoint_id": "src-a"},
                "source_b": {**prof, "endpoint_id": "src-b"},
                "reasoner": {**prof, "endpoint_id": "reasoner"},
                "tools": {**prof, "endpoint_id": "tools"},
            }
        }
    )
    chat = FunctionChatClient(adversary.chat)
    return Runtime(
        config,
        config.catalog(),
        {"source_a": chat, "source_b": chat, "reasoner": chat},
        FunctionToolClient(adversary.tool),
    )

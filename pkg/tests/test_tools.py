from __future__ import annotations

import pytest

from evfusion.errors import CatalogError, InvalidInputError
from evfusion.evidence import ContentType, ReliabilityTier
from evfusion.tools import (
    Step,
    ToolCatalog,
    ToolRequest,
    ToolResult,
    ToolScope,
    build_default_catalog,
    cap_tool_confidence,
    check_request,
    format_catalog,
    tools_for_step,
    validate_catalog,
    validated,
)


@pytest.fixture(scope="module")
def catalog():
    return validated(build_default_catalog())


def test_default_catalog_has_25_tools(catalog):
    assert len(catalog) == 25
    assert len(set(catalog.names)) == 25
    assert validate_catalog(catalog).valid


@pytest.mark.parametrize(
    ("step", "content", "expected"),
    [
        (Step.STEP1, ContentType.SPEECH, 12),
        (Step.STEP1, ContentType.MUSIC, 23),
        (Step.STEP2, ContentType.SPEECH, 5),
        (Step.STEP2, ContentType.MUSIC, 8),
        (Step.STEP1, ContentType.MIXED, 23),
        (Step.STEP2, ContentType.ENVIRONMENTAL, 5),
    ],
)
def test_step_counts(catalog, step, content, expected):
    assert len(tools_for_step(catalog, step, content)) == expected


def test_step2_tools_are_segment_capable(catalog):
    for content in ContentType:
        for spec in tools_for_step(catalog, Step.STEP2, content):
            assert spec.scope in (ToolScope.SEGMENT_LEVEL, ToolScope.BOTH)


def test_unvalidated_catalog_refused():
    with pytest.raises(CatalogError):
        tools_for_step(build_default_catalog(), Step.STEP1, ContentType.SPEECH)


def test_validation_catches_duplicates_and_counts(catalog):
    specs = list(catalog.specs)
    broken = ToolCatalog(tuple(specs + [specs[0]]))
    report = validate_catalog(broken)
    assert not report.valid
    assert any("duplicate" in v for v in report.violations)
    with pytest.raises(CatalogError):
        validated(ToolCatalog(tuple(specs[1:])))


def test_catalog_json_round_trip(catalog, tmp_path):
    path = tmp_path / "catalog.json"
    path.write_text(catalog.to_json())
    loaded = validated(ToolCatalog.load(path))
    assert loaded.names == catalog.names


def test_segment_tool_needs_time_range(catalog):
    spec = catalog.get("temporal segments")
    with pytest.raises(InvalidInputError):
        check_request(ToolRequest("temporal segments", "a.wav"), spec)
    check_request(ToolRequest("temporal segments", "a.wav", (0.0, 2.0)), spec)
    with pytest.raises(InvalidInputError):
        check_request(ToolRequest("temporal segments", "a.wav", (3.0, 2.0)), spec)


def test_invocation_key_ignores_param_order_but_not_range():
    a = ToolRequest("transcription", "a.wav", None, {"x": 1, "y": 2})
    b = ToolRequest("transcription", "a.wav", None, {"y": 2, "x": 1})
    c = ToolRequest("transcription", "a.wav", (0.0, 1.0), {"x": 1, "y": 2})
    assert a.invocation_key == b.invocation_key
    assert a.invocation_key != c.invocation_key
    assert a.digest == b.digest


@pytest.mark.parametrize(
    ("tool", "content", "raw", "expected"),
    [
        ("beat & onset detection", ContentType.MUSIC, 0.99, 0.90),
        ("instrument detection", ContentType.MUSIC, 0.99, 0.75),
        ("chord progression", ContentType.MUSIC, 0.99, 0.60),
        ("speech LLM query (Qwen3)", ContentType.SPEECH, 0.99, 0.70),
        ("instrument detection", ContentType.SPEECH, 0.5, 0.30),
    ],
)
def test_cap_tool_confidence(catalog, tool, content, raw, expected):
    req = ToolRequest(tool, "a.wav")
    res = ToolResult(req, {"summary": "x"}, raw, raw, 1.0)
    assert cap_tool_confidence(res, catalog.get(tool), content).capped_confidence == pytest.approx(expected)


def test_tool_result_round_trip():
    req = ToolRequest("transcription", "a.wav", (1.0, 2.0), {"lang": "en"})
    res = ToolResult(req, {"summary": "hello"}, 0.8, 0.75, 0.5, 12)
    assert ToolResult.from_dict(res.to_dict()) == res
    failed = ToolResult.failed(req, "timeout")
    assert not failed.ok and failed.error == "timeout"
    assert ToolResult.from_dict(failed.to_dict()) == failed


def test_format_catalog_lists_every_tool(catalog):
    text = format_catalog(catalog)
    assert "25 enabled tools" in text
    for name in catalog.names:
        assert name in text
    assert "step2 [speech]: 5 tools" in text


def test_tiers_in_catalog(catalog):
    assert catalog.get("harmonic analysis").tier is ReliabilityTier.ANALYTIC
    assert catalog.get("speaker count").tier is ReliabilityTier.PROBABILISTIC
    assert catalog.get("scene context").tier is ReliabilityTier.HEURISTIC

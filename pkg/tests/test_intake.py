from __future__ import annotations

import json

import pytest
from hypothesis import given
from hypothesis import strategies as st

from evfusion.errors import InvalidInputError, PartialIntakeError
from evfusion.evidence import FULL_AUDIO, ContentType
from evfusion.intake import (
    classify_content,
    merge_observations,
    observation_prompt,
    parse_response,
    plan_queries,
    segment_scopes,
    synthesize_source,
)

from .support.helpers import observation

BLOCKS = """OBSERVATION: a man speaks slowly
TIME: 1.0-2.5
TAG: speech
OBSERVATION: a door slams
TAG: environmental
CONTENT: speech
TENTATIVE: (B)
"""


def test_segment_scopes_tile_the_clip():
    scopes = segment_scopes(9.0)
    assert [(s.start, s.end) for s in scopes] == [(0.0, 3.0), (3.0, 6.0), (6.0, 9.0)]
    assert [s.tag for s in scopes] == ["seg1", "seg2", "seg3"]
    with pytest.raises(InvalidInputError):
        segment_scopes(0)


@given(st.floats(0.1, 3600))
def test_segments_cover_duration(d):
    scopes = segment_scopes(d)
    assert scopes[0].start == 0.0 and scopes[-1].end == d
    for a, b in zip(scopes, scopes[1:]):
        assert a.end == b.start


def test_plan_queries_four_per_source():
    qs = plan_queries(12.0, ["a", "b"], "How many?", ["one", "two"])
    assert [q.key for q in qs] == ["a:full", "a:seg1", "a:seg2", "a:seg3", "b:full", "b:seg1", "b:seg2", "b:seg3"]
    assert "segment 2 of 3" in qs[2].prompt and "4.00-8.00 s" in qs[2].prompt
    assert "(B) two" in qs[0].prompt


def test_prompt_does_not_ask_for_answer_in_observations():
    text = observation_prompt(FULL_AUDIO, 10.0)
    assert "Do not select an answer in your observations" in text


def test_parse_blocks():
    parsed = parse_response(BLOCKS, "a", FULL_AUDIO)
    assert [o.claim for o in parsed.observations] == ["a man speaks slowly", "a door slams"]
    assert parsed.observations[0].time_range == (1.0, 2.5)
    assert parsed.observations[1].tags == frozenset({"environmental"})
    assert parsed.content_vote is ContentType.SPEECH
    assert parsed.tentative_prediction == "B"


def test_segment_times_become_absolute():
    scope = segment_scopes(9.0)[1]
    parsed = parse_response("OBSERVATION: a bell\nTIME: 0.5-1.0", "a", scope)
    assert parsed.observations[0].time_range == (3.5, 4.0)
    assert parsed.observations[0].id == "a:seg2:0"


def test_parse_json_reply():
    reply = json.dumps(
        {
            "observations": [{"claim": "birds sing", "time_range": [0, 2], "tag": "environmental"}, "wind"],
            "content": "environmental",
            "tentative": "C",
        }
    )
    parsed = parse_response(reply, "b", FULL_AUDIO)
    assert [o.claim for o in parsed.observations] == ["birds sing", "wind"]
    assert parsed.content_vote is ContentType.ENVIRONMENTAL
    assert parsed.tentative_prediction == "C"


def test_parse_free_text_fallback():
    parsed = parse_response("- a guitar strums\n- someone hums\n", "a", FULL_AUDIO)
    assert [o.claim for o in parsed.observations] == ["a guitar strums", "someone hums"]


def test_merge_observations_dedups_and_tracks_scopes():
    seg = segment_scopes(9.0)[0]
    obs = [observation("a", 0, "a dog barks loudly"), observation("a", 0, "a dog barks loudly", seg)]
    merged = merge_observations(obs)
    assert len(merged) == 1
    assert merged[0][1] == frozenset({"full", "seg1"})


def test_synthesize_source_marks_segment_corroboration():
    scopes = [FULL_AUDIO, *segment_scopes(9.0)]
    responses = [
        parse_response("OBSERVATION: a dog barks loudly\nCONTENT: environmental\nTENTATIVE: A", "a", scopes[0]),
        parse_response("OBSERVATION: a dog barks loudly\nTENTATIVE: A", "a", scopes[1]),
        parse_response("OBSERVATION: a car passes\nTENTATIVE: B", "a", scopes[2]),
        parse_response("TENTATIVE: A", "a", scopes[3]),
    ]
    rep = synthesize_source(responses, "a")
    assert [o.claim for o in rep.observations] == ["a dog barks loudly", "a car passes"]
    assert rep.segment_corroborated_ids == frozenset({"a:full:0"})
    assert rep.tentative_predictions == ("A", "A", "B", "A")
    assert rep.content_vote is ContentType.ENVIRONMENTAL


def test_partial_intake_carries_report():
    resp = parse_response("OBSERVATION: a car passes", "a", FULL_AUDIO)
    with pytest.raises(PartialIntakeError) as info:
        synthesize_source([resp], "a")
    partial = info.value.partial
    assert partial.missing_queries == ("seg1", "seg2", "seg3")
    assert len(partial.observations) == 1


def test_classify_content_majority_and_tie():
    scopes = [FULL_AUDIO, *segment_scopes(9.0)]

    def rep(src, vote):
        return synthesize_source([parse_response(f"CONTENT: {vote}", src, s) for s in scopes], src)

    assert classify_content([rep("a", "music"), rep("b", "music")]) is ContentType.MUSIC
    assert classify_content([rep("a", "music"), rep("b", "speech")]) is ContentType.MIXED
    assert classify_content([rep("a", "music"), rep("b", "speech")], [ContentType.SPEECH]) is ContentType.SPEECH

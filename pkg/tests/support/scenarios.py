"""Fixture samples: speech, music, environmental and a planted contradiction."""

from __future__ import annotations

from .sim import Heard, Scenario, ToolReply

SOURCE_A = "listener-a"
SOURCE_B = "listener-b"
REASONER = "reasoner"
TOOLS = "tools"


def _both(full_a, full_b, segs_a=(), segs_b=()):
    out = {SOURCE_A: {"full": full_a}, SOURCE_B: {"full": full_b}}
    for i, seg in enumerate(segs_a):
        out[SOURCE_A][f"seg{i + 1}"] = seg
    for i, seg in enumerate(segs_b):
        out[SOURCE_B][f"seg{i + 1}"] = seg
    return out


SPEECH_INTERVIEW = Scenario(
    sample_id="speech-interview",
    audio="fixture://speech-interview.wav",
    question="How many people speak in the recording?",
    choices=("one person", "two people", "three people", "four people"),
    duration_s=24.0,
    answer="B",
    content="speech",
    heard=_both(
        [Heard("two people speak in a calm interview"), Heard("a man asks questions about farming")],
        [Heard("two people talk in a calm interview"), Heard("a woman answers about crops")],
        segs_a=[[Heard("a man introduces the guest", (0.5, 6.0))], [Heard("a woman describes harvest work")], []],
        segs_b=[[Heard("the host introduces the guest", (0.4, 5.5))], [], [Heard("both people laugh at the end")]],
    ),
    tentative={SOURCE_A: "B", SOURCE_B: "B"},
    proposals=[["speaker count", "diarization + transcription"], ["energy dynamics"]],
    tools={
        "speaker count": ToolReply("7 speakers detected by clustering", 0.8, {"num_speakers": 7}),
        "diarization + transcription": ToolReply(
            "2 speakers: interviewer and guest discuss farming", 0.85, {"num_speakers": 2}
        ),
        "energy dynamics": ToolReply("steady speech level with short pauses", 0.9),
    },
)

MUSIC_TEMPO = Scenario(
    sample_id="music-tempo",
    audio="fixture://music-tempo.wav",
    question="What best describes the tempo of the piece?",
    choices=("slow ballad", "fast dance track", "no steady beat"),
    duration_s=30.0,
    answer="B",
    content="music",
    heard=_both(
        [Heard("a fast dance track with heavy drums", tag="music")],
        [Heard("a fast dance track with synthesizer and drums", tag="music")],
    ),
    tentative={SOURCE_A: "B", SOURCE_B: "B"},
    proposals=[["beat & onset detection", "instrument detection", "tempo tracking"]],
    tools={
        "beat & onset detection": ToolReply("steady beat at 128 bpm, a fast dance tempo", 0.95),
        "instrument detection": ToolReply("drums, synthesizer and bass", 0.7),
        "tempo tracking": ToolReply("tempo 128 bpm, fast", 0.9),
    },
)

PLANTED_CONTRADICTION = Scenario(
    sample_id="dog-bark-conflict",
    audio="fixture://dog-bark.wav",
    question="Is a dog barking in the clip?",
    choices=("yes, a dog barks", "no dog barks"),
    duration_s=12.0,
    answer="A",
    content="environmental",
    heard=_both(
        [Heard("a dog barks near the door", (2.0, 3.5), "environmental")],
        [Heard("no dog barks, only passing traffic", (2.0, 3.5), "environmental")],
    ),
    tentative={SOURCE_A: "A", SOURCE_B: "B"},
    proposals=[["environment detection"]],
    tools={"environment detection": ToolReply("street traffic; no dog barks in the clip", 0.55)},
    segment_tools={"event sequence": ToolReply("a dog barks twice between 2.1 and 3.4 s", 0.72)},
)

MUSIC_INSTRUMENT = Scenario(
    sample_id="music-instrument",
    audio="fixture://music-instrument.wav",
    question="Which instrument plays the melody?",
    choices=("piano", "violin", "trumpet", "guitar"),
    duration_s=18.0,
    answer="A",
    content="music",
    heard=_both(
        [Heard("a piano plays a slow melody", tag="music"), Heard("soft reverb on the recording", tag="music")],
        [Heard("solo piano melody in a quiet room", tag="music")],
    ),
    tentative={SOURCE_A: "A", SOURCE_B: "A"},
    proposals=[["instrument detection", "harmonic analysis"], ["melody transcription"]],
    tools={
        "instrument detection": ToolReply("piano", 0.88),
        "harmonic analysis": ToolReply("key of C major, simple triads", 0.8),
        "melody transcription": ToolReply("single-line melody in the piano register", 0.7),
    },
    sloppy_first_draft=True,
)

STREET_SCENE = Scenario(
    sample_id="street-scene",
    audio="fixture://street-scene.wav",
    question="Where was this recorded?",
    choices=("a busy street", "a quiet forest", "an office"),
    duration_s=15.0,
    answer="A",
    content="environmental",
    heard=_both(
        [Heard("cars pass and a horn sounds", tag="environmental")],
        [Heard("busy street traffic with a car horn", tag="environmental")],
    ),
    tentative={SOURCE_A: "A", SOURCE_B: "C"},
    proposals=[["environment detection", "scene context"]],
    tools={
        "environment detection": ToolReply("outdoor urban street, traffic", 0.6),
        "scene context": ToolReply("", 0.0, error="timeout"),
    },
    unified_json=False,
)

SCENARIOS = (SPEECH_INTERVIEW, MUSIC_TEMPO, PLANTED_CONTRADICTION, MUSIC_INSTRUMENT, STREET_SCENE)

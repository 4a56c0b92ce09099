"""Shared tokenizer used by claim matching, keyword reclassification and
completeness checks.

Everything here is deterministic and dependency-free so that the lexical
fallbacks behave identically across runs.
"""

from __future__ import annotations

import json
import re
from collections.abc import Iterable
from typing import Any

_WORD_RE = re.compile(r"[a-z0-9]+(?:\.[0-9]+)?")

STOP_WORDS = frozenset(
    """
    a an the and or but if then than that this these those there here is are was were be been
    being am do does did doing have has had having of in on at by for with to from into onto
    over under about as it its it's they them their he she his her we our you your i me my
    which who whom whose what when where while during after before also only just very so
    such can could may might will would should shall must some any each every both all
    audio clip recording sound sounds heard hear appears seems likely possibly throughout
    """.split()
)

NEGATIONS = frozenset({"no", "not", "without", "absent", "none", "never", "nobody", "nothing", "lacks"})

NUMBER_WORDS = {
    "zero": "0",
    "one": "1",
    "single": "1",
    "two": "2",
    "pair": "2",
    "three": "3",
    "four": "4",
    "five": "5",
    "six": "6",
    "seven": "7",
    "eight": "8",
    "nine": "9",
    "ten": "10",
    "eleven": "11",
    "twelve": "12",
}

# Categorical opposites (as stemmed forms) that make two otherwise-overlapping
# claims incompatible.
ANTONYMS = (
    (frozenset({"male"}), frozenset({"female"})),
    (frozenset({"man", "men"}), frozenset({"woman", "women"})),
    (frozenset({"fast"}), frozenset({"slow"})),
    (frozenset({"major"}), frozenset({"minor"})),
    (frozenset({"loud"}), frozenset({"quiet", "soft"})),
    (frozenset({"increas", "increase"}), frozenset({"decreas", "decrease"})),
    (frozenset({"indoor"}), frozenset({"outdoor"})),
    (frozenset({"live"}), frozenset({"studio"})),
)


def words(text: str) -> list[str]:
    """Lowercased raw word tokens; contractions like ``isn't`` yield ``not``."""
    lowered = text.lower().replace("n't", " not")
    return _WORD_RE.findall(lowered)


def stem(word: str) -> str:
    if word[0].isdigit():
        return word
    if len(word) > 4 and word.endswith("ies"):
        return word[:-3] + "y"
    if word.endswith("sses"):
        return word[:-2]
    if len(word) > 5 and word.endswith("ing"):
        return word[:-3]
    if len(word) > 4 and word.endswith("ed"):
        return word[:-2]
    if len(word) > 3 and word.endswith("s") and not word.endswith(("ss", "us", "is")):
        return word[:-1]
    return word


def normalize_word(word: str) -> str:
    return NUMBER_WORDS.get(word, word)


def content_tokens(text: str) -> list[str]:
    """Ordered stemmed content words with stop words and negations removed."""
    out = []
    for w in words(text):
        w = normalize_word(w)
        if w in STOP_WORDS or w in NEGATIONS:
            continue
        out.append(stem(w))
    return out


def token_set(text: str) -> frozenset[str]:
    return frozenset(content_tokens(text))


def plain_token_set(text: str) -> frozenset[str]:
    """Lowercase, punctuation-stripped words with no stemming or stop-word removal."""
    return frozenset(words(text))


def jaccard(a: Iterable[str], b: Iterable[str]) -> float:
    sa, sb = set(a), set(b)
    if not sa and not sb:
        return 0.0
    return len(sa & sb) / len(sa | sb)


def overlap_coefficient(part: Iterable[str], whole: Iterable[str]) -> float:
    """Fraction of ``part`` found in ``whole``."""
    sp = set(part)
    if not sp:
        return 0.0
    return len(sp & set(whole)) / len(sp)


def negated_terms(text: str) -> frozenset[str]:
    """Content terms that fall within two words after a negation."""
    toks = [normalize_word(w) for w in words(text)]
    out = set()
    for i, w in enumerate(toks):
        if w not in NEGATIONS:
            continue
        for nxt in toks[i + 1 : i + 3]:
            if nxt in STOP_WORDS or nxt in NEGATIONS:
                continue
            out.add(stem(nxt))
    return frozenset(out)


def quantities(text: str) -> dict[str, int]:
    """Integer counts attached to nearby content words.

    ``"2 speakers detected"`` and ``"speakers: 2"`` both give ``{"speaker": 2}``.
    A number binds to the next two content words; a trailing number binds to
    the word before it.  Non-integer numbers (scores, seconds with decimals)
    are ignored.
    """
    toks = content_tokens(text)
    out: dict[str, int] = {}
    for i, tok in enumerate(toks):
        if not tok.isdigit():
            continue
        value = int(tok)
        following = [t for t in toks[i + 1 : i + 3] if not _is_number(t)]
        if following:
            for t in following[:2]:
                out.setdefault(t, value)
        elif i > 0 and not _is_number(toks[i - 1]):
            out.setdefault(toks[i - 1], value)
    return out


def _is_number(tok: str) -> bool:
    return tok.replace(".", "", 1).isdigit()


def claims_conflict(a: str, b: str) -> str | None:
    """Return a short reason when two claims are explicitly incompatible.

    Three markers count: a shared quantity with different counts, a shared
    head term negated in exactly one claim, and a categorical antonym pair
    over otherwise overlapping content.
    """
    qa, qb = quantities(a), quantities(b)
    for key in sorted(set(qa) & set(qb)):
        if qa[key] != qb[key]:
            return f"count mismatch on '{key}': {qa[key]} vs {qb[key]}"
    ta, tb = token_set(a), token_set(b)
    na, nb = negated_terms(a), negated_terms(b)
    for term in sorted((na & tb) - nb):
        return f"'{term}' negated in one claim only"
    for term in sorted((nb & ta) - na):
        return f"'{term}' negated in one claim only"
    if ta & tb:
        for left, right in ANTONYMS:
            sa, sb = _side(ta, left, right), _side(tb, left, right)
            if sa and sb and sa != sb:
                return f"categorical conflict ({min(left)} vs {min(right)})"
    return None


def _side(terms: frozenset[str], left: frozenset[str], right: frozenset[str]) -> str | None:
    has_left, has_right = bool(terms & left), bool(terms & right)
    if has_left == has_right:
        return None
    return "left" if has_left else "right"


def affirmed_tokens(text: str) -> frozenset[str]:
    """Content tokens of ``text`` that are not under a negation."""
    return token_set(text) - negated_terms(text)


def discriminative_tokens(choices: list[str] | tuple[str, ...]) -> list[frozenset[str]]:
    """Per-choice tokens minus the tokens every choice shares."""
    sets = [token_set(c) for c in choices]
    common = frozenset.intersection(*sets) if sets else frozenset()
    return [s - common for s in sets]


def supported_choices(claim: str, choices: list[str] | tuple[str, ...]) -> frozenset[int]:
    """Indices of the choices whose distinguishing words the claim affirms."""
    toks = affirmed_tokens(claim)
    return frozenset(i for i, d in enumerate(discriminative_tokens(choices)) if d and toks & d)


def relevance_score(claim: str, question: str, choices: list[str] | tuple[str, ...]) -> float:
    """Lexical relevance in [0.1, 1.0].

    Claims that affirm a choice's distinguishing words start at 0.6; all
    others start at 0.1.  Both rise with the share of claim words found in
    the question and options.
    """
    toks = token_set(claim)
    context = token_set(question).union(*(token_set(c) for c in choices))
    share = overlap_coefficient(toks, context)
    if supported_choices(claim, choices):
        return 0.6 + 0.4 * share
    return 0.1 + 0.5 * share


_FENCE_RE = re.compile(r"```(?:json)?\s*(.*?)```", re.DOTALL)


def extract_json(text: str) -> Any:
    """Pull the first JSON value out of a model reply.

    Tries the whole reply, then fenced blocks, then the widest bracketed
    span.  Raises ValueError when nothing parses.
    """
    candidates = [text.strip()]
    candidates += [m.strip() for m in _FENCE_RE.findall(text)]
    for open_ch, close_ch in (("[", "]"), ("{", "}")):
        start, end = text.find(open_ch), text.rfind(close_ch)
        if 0 <= start < end:
            candidates.append(text[start : end + 1])
    for cand in candidates:
        if not cand:
            continue
        try:
            return json.loads(cand)
        except json.JSONDecodeError:
            continue
    raise ValueError("no JSON value found in reply")

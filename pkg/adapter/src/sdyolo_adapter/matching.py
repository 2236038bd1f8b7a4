"""Matching prompt words to detector class names.

The quality score only credits detections whose class corresponds to a word
of the base prompt. Matching is deliberately naive: lowercase the prompt,
split it into alphabetic words, strip a plural suffix, and look each variant
up in the detector's class list. A handful of irregular plurals that appear
in common detector vocabularies are mapped explicitly. Prompts whose nouns
this scheme cannot reach can pass an explicit class whitelist instead.
"""

from __future__ import annotations

import re

_WORD = re.compile(r"[a-z]+")

IRREGULAR_PLURALS = {
    "people": "person",
    "men": "man",
    "women": "woman",
    "children": "child",
    "mice": "mouse",
    "geese": "goose",
    "sheep": "sheep",
    "knives": "knife",
    "scissors": "scissors",
    "skis": "skis",
}


def _singular_variants(word: str) -> list[str]:
    """The word itself plus naive singular forms, most specific first."""
    variants = [word]
    if word in IRREGULAR_PLURALS:
        variants.append(IRREGULAR_PLURALS[word])
    if word.endswith("es") and len(word) > 3:
        variants.append(word[:-2])
    if word.endswith("s") and len(word) > 3:
        variants.append(word[:-1])
    return variants


def prompt_classes(
    base_prompt: str,
    class_names: tuple[str, ...] | list[str],
    whitelist: tuple[str, ...] | list[str] | None = None,
) -> frozenset[str]:
    """Detector classes a detection must have to count toward quality.

    Args:
        base_prompt: the plain object prompt, e.g. "two people and a bus".
        class_names: the detector's class vocabulary.
        whitelist: optional explicit class list that replaces extraction;
            names not in the detector's vocabulary are dropped.

    Returns:
        The matching class names, possibly empty. Multi-word class names
        ("traffic light") match when every one of their words could be
        reached from the prompt, which keeps the scheme word-based without
        special cases for compounds.
    """
    known = {name.lower(): name for name in class_names}
    if whitelist is not None:
        return frozenset(known[w.lower()] for w in whitelist if w.lower() in known)

    words = _WORD.findall(base_prompt.lower())
    reachable = set()
    for word in words:
        reachable.update(_singular_variants(word))

    matched = set()
    for lower, name in known.items():
        parts = lower.split()
        if parts and all(part in reachable for part in parts):
            matched.add(name)
    return frozenset(matched)


def mean_matching_confidence(
    detections: list[tuple[str, float]] | tuple[tuple[str, float], ...],
    matching: frozenset[str],
) -> float:
    """Average confidence over detections of matching classes, 0.0 if none."""
    scores = [conf for name, conf in detections if name in matching]
    if not scores:
        return 0.0
    return float(sum(scores) / len(scores))

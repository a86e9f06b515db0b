"""Gazetteer-based entity tagging: longest-match, non-overlapping, greedy."""

from __future__ import annotations

from pathlib import Path

from reflectool.errors import FormatError


def load_gazetteer(path: str | Path) -> frozenset[str]:
    """Newline-delimited term file; blank lines ignored."""
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise FormatError(f"cannot read gazetteer {path}: {exc}") from exc
    return frozenset(line.strip() for line in lines if line.strip())


def _word_char(ch: str) -> bool:
    return ch.isalnum()


def entity_tag(
    sentence: str, gazetteer: frozenset[str] | set[str]
) -> list[tuple[str, tuple[int, int]]]:
    """Case-insensitive matches of gazetteer terms, left-to-right greedy,
    preferring the longest term at each word start; matches never overlap.

    Returns (surface text as written, (start, end)) with end exclusive.
    """
    terms = sorted(
        {term.strip().lower() for term in gazetteer if term.strip()},
        key=len,
        reverse=True,
    )
    if not terms:
        return []
    lowered = sentence.lower()
    matches: list[tuple[str, tuple[int, int]]] = []
    i = 0
    n = len(sentence)
    while i < n:
        match_len = 0
        at_word_start = _word_char(lowered[i]) and (i == 0 or not _word_char(lowered[i - 1]))
        if at_word_start:
            for term in terms:
                end = i + len(term)
                if lowered.startswith(term, i) and (end == n or not _word_char(lowered[end])):
                    match_len = len(term)
                    break
        if match_len:
            matches.append((sentence[i : i + match_len], (i, i + match_len)))
            i += match_len
        else:
            i += 1
    return matches

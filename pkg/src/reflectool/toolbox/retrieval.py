"""Passage retrieval over a fixed corpus and over uploaded document files.

Both paths share the BM25 scorer from the memory module; document files are
chunked into overlapping word windows before ranking.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

from reflectool.errors import FormatError
from reflectool.memory import Bm25Index, tokenize

CHUNK_WORDS = 300
CHUNK_OVERLAP = 50
DOC_RAG_TOP_K = 3


@dataclass(frozen=True)
class Corpus:
    """Ordered read-only passages with unique doc ids."""

    passages: tuple[tuple[str, str], ...]

    def __post_init__(self) -> None:
        ids = [doc_id for doc_id, _ in self.passages]
        if len(ids) != len(set(ids)):
            raise ValueError("corpus doc_ids must be unique")

    def __len__(self) -> int:
        return len(self.passages)


def load_corpus(path: str | Path) -> Corpus:
    """JSONL with one {"id": ..., "text": ...} object per line."""
    passages: list[tuple[str, str]] = []
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise FormatError(f"cannot read corpus {path}: {exc}") from exc
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            record = json.loads(line)
            passages.append((str(record["id"]), str(record["text"])))
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            raise FormatError(f"corpus {path} line {lineno}: {exc}") from exc
    try:
        return Corpus(tuple(passages))
    except ValueError as exc:
        raise FormatError(f"corpus {path}: {exc}") from exc


def _ranked(query: str, docs: list[str], k: int) -> list[tuple[int, float]]:
    """Indices of the top-k docs by BM25 score, ties by insertion order."""
    if not docs:
        return []
    index = Bm25Index([tokenize(doc) for doc in docs])
    query_tokens = tokenize(query)
    scores = [index.score(query_tokens, i) for i in range(len(docs))]
    order = sorted(range(len(docs)), key=lambda i: (-scores[i], i))
    return [(i, scores[i]) for i in order[: min(k, len(docs))]]


def corpus_retrieve(query: str, corpus: Corpus, k: int) -> list[tuple[str, float, str]]:
    """Top-k passages as (doc_id, score, text), descending score."""
    return [
        (corpus.passages[i][0], score, corpus.passages[i][1])
        for i, score in _ranked(query, [text for _, text in corpus.passages], k)
    ]


def chunk_words(text: str, size: int = CHUNK_WORDS, overlap: int = CHUNK_OVERLAP) -> list[str]:
    """Windows of at most ``size`` whitespace words overlapping by ``overlap``."""
    words = text.split()
    if not words:
        return []
    step = max(1, size - overlap)
    chunks = []
    for start in range(0, len(words), step):
        chunks.append(" ".join(words[start : start + size]))
        if start + size >= len(words):
            break
    return chunks


def doc_rag_search(
    query: str, files: tuple[str, ...] | list[str], k: int = DOC_RAG_TOP_K
) -> list[tuple[str, str]]:
    """Chunk the given files and return the top-k chunks as (marker, text).

    Raises OSError when a file cannot be read; the caller reports that as a
    tool error.
    """
    markers: list[str] = []
    chunks: list[str] = []
    for file_path in files:
        text = Path(file_path).read_text(encoding="utf-8")
        for j, chunk in enumerate(chunk_words(text)):
            markers.append(f"[{file_path}#{j}]")
            chunks.append(chunk)
    return [(markers[i], chunks[i]) for i, _ in _ranked(query, chunks, k)]

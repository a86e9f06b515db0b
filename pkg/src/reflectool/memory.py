"""Long-term memory of successful task trajectories with BM25 retrieval.

Only trajectories that actually solved their task are admitted; retrieval
ranks stored entries by Okapi BM25 similarity between the query instruction
and each stored instruction, breaking score ties by insertion order.
"""

from __future__ import annotations

import json
import math
import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

from reflectool.errors import FormatError
from reflectool.model import (
    Outcome,
    TaskInstance,
    Trajectory,
    task_from_dict,
    task_to_dict,
    trajectory_from_dict,
    trajectory_to_dict,
)

DEFAULT_K1 = 1.5
DEFAULT_B = 0.75

STORE_VERSION = 1

_TOKEN = re.compile(r"[^\W_]+", re.UNICODE)


def tokenize(text: str) -> list[str]:
    """Lowercase and split on non-alphanumeric characters; no stemming or
    stopword removal."""
    return _TOKEN.findall(text.lower())


class Bm25Index:
    """Okapi BM25 over a fixed list of token documents.

    score = sum_t idf(t) * tf * (k1+1) / (tf + k1 * (1 - b + b * len/avglen))
    with idf(t) = ln((N - df + 0.5) / (df + 0.5) + 1), which keeps every
    score finite and non-negative.
    """

    def __init__(self, docs: list[list[str]], k1: float = DEFAULT_K1, b: float = DEFAULT_B):
        self.k1 = k1
        self.b = b
        self.doc_lengths = [len(doc) for doc in docs]
        self.avg_doc_length = (
            sum(self.doc_lengths) / len(self.doc_lengths) if docs else 0.0
        )
        self._term_freqs = [Counter(doc) for doc in docs]
        self.doc_freq: Counter[str] = Counter()
        for freqs in self._term_freqs:
            for token in freqs:
                self.doc_freq[token] += 1
        n = len(docs)
        self._idf = {
            token: math.log((n - df + 0.5) / (df + 0.5) + 1)
            for token, df in self.doc_freq.items()
        }

    def __len__(self) -> int:
        return len(self.doc_lengths)

    def score(self, query_tokens: list[str], doc_index: int) -> float:
        freqs = self._term_freqs[doc_index]
        length = self.doc_lengths[doc_index]
        norm = self.k1 * (1 - self.b + self.b * length / self.avg_doc_length)
        total = 0.0
        for token in sorted(set(query_tokens)):
            tf = freqs.get(token, 0)
            if tf == 0:
                continue
            total += self._idf[token] * tf * (self.k1 + 1) / (tf + norm)
        return total


@dataclass(frozen=True)
class MemoryEntry:
    """A stored (task, successful trajectory) pair."""

    task: TaskInstance
    trajectory: Trajectory
    tokens: tuple[str, ...]
    insertion_index: int


@dataclass
class MemoryStore:
    """Append-only store; the BM25 index is rebuilt on mutation and on load.

    Concurrency: many readers or one writer. The inference stage treats a
    loaded store as an immutable snapshot.
    """

    k1: float = DEFAULT_K1
    b: float = DEFAULT_B
    entries: list[MemoryEntry] = field(default_factory=list)
    _index: Bm25Index | None = field(default=None, repr=False)

    def __len__(self) -> int:
        return len(self.entries)

    def add_if_success(self, task: TaskInstance, traj: Trajectory) -> bool:
        """Store the pair iff the trajectory succeeded; returns whether added."""
        if traj.outcome is not Outcome.SUCCESS:
            return False
        entry = MemoryEntry(
            task=task,
            trajectory=traj,
            tokens=tuple(tokenize(task.instruction)),
            insertion_index=len(self.entries),
        )
        self.entries.append(entry)
        self._index = None
        return True

    def _ensure_index(self) -> Bm25Index:
        if self._index is None:
            self._index = Bm25Index(
                [list(e.tokens) for e in self.entries], k1=self.k1, b=self.b
            )
        return self._index

    def retrieve(self, query: str, k: int) -> list[MemoryEntry]:
        return [entry for entry, _ in self.retrieve_scored(query, k)]

    def retrieve_scored(self, query: str, k: int) -> list[tuple[MemoryEntry, float]]:
        """Top-k entries by BM25 score, descending; ties resolved by ascending
        insertion order. Returns at most ``min(k, size)`` entries."""
        if k <= 0 or not self.entries:
            return []
        index = self._ensure_index()
        query_tokens = tokenize(query)
        scores = [index.score(query_tokens, i) for i in range(len(self.entries))]
        order = sorted(range(len(self.entries)), key=lambda i: (-scores[i], i))
        return [(self.entries[i], scores[i]) for i in order[:k]]

    # --- persistence ---------------------------------------------------

    def save(self, path: str | Path) -> None:
        payload = {
            "version": STORE_VERSION,
            "entries": [
                {
                    "task": task_to_dict(entry.task),
                    "trajectory": trajectory_to_dict(entry.trajectory),
                    "insertion_index": entry.insertion_index,
                }
                for entry in self.entries
            ],
        }
        Path(path).write_text(json.dumps(payload, indent=2), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path, k1: float = DEFAULT_K1, b: float = DEFAULT_B) -> "MemoryStore":
        """Rebuild a store from disk; tokens and the index are recomputed."""
        try:
            payload = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise FormatError(f"cannot read memory store {path}: {exc}") from exc
        if not isinstance(payload, dict) or payload.get("version") != STORE_VERSION:
            raise FormatError(
                f"memory store {path}: unsupported version {payload.get('version')!r}"
            )
        store = cls(k1=k1, b=b)
        raw_entries = sorted(
            payload.get("entries", []), key=lambda e: e.get("insertion_index", 0)
        )
        for raw in raw_entries:
            task = task_from_dict(raw["task"])
            store.entries.append(
                MemoryEntry(
                    task=task,
                    trajectory=trajectory_from_dict(raw["trajectory"]),
                    tokens=tuple(tokenize(task.instruction)),
                    insertion_index=len(store.entries),
                )
            )
        return store

"""Labeled text corpora: JSONL ingestion, open-vocabulary splits, seen/unseen partition.

A corpus file is UTF-8 JSON lines, one object per line::

    {"id": "doc-1", "text": "...", "labels": ["tag a", "tag b"]}

Label comparison is exact string equality everywhere in this module; soft
matching is an evaluation-time concern and lives in :mod:`groov.metrics`.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, field
from pathlib import Path


class CorpusFormatError(ValueError):
    """A corpus file violates the JSONL record contract."""


@dataclass(frozen=True)
class Instance:
    """One data point: an input text and the set of labels annotated on it."""

    id: str
    text: str
    labels: frozenset[str]

    def __post_init__(self) -> None:
        for label in self.labels:
            if not label:
                raise ValueError(f"instance {self.id!r}: empty label")
            if "\n" in label:
                raise ValueError(f"instance {self.id!r}: label contains newline")


@dataclass
class Corpus:
    """An ordered list of instances plus the instance-level label frequencies.

    ``label_frequency[l]`` counts instances carrying ``l`` (not occurrences
    within texts); this is the count the propensity model is built from.
    ``dedup_warnings`` counts labels that were silently deduplicated within
    single records at load time.
    """

    instances: list[Instance] = field(default_factory=list)
    label_frequency: dict[str, int] = field(default_factory=dict)
    dedup_warnings: int = 0

    def __len__(self) -> int:
        return len(self.instances)

    def label_set(self) -> set[str]:
        return set(self.label_frequency)

    def recount(self) -> dict[str, int]:
        """Recompute label frequencies from instances (integrity check)."""
        freq: dict[str, int] = {}
        for inst in self.instances:
            for label in inst.labels:
                freq[label] = freq.get(label, 0) + 1
        return freq

    @classmethod
    def from_instances(cls, instances: list[Instance], dedup_warnings: int = 0) -> "Corpus":
        corpus = cls(instances=list(instances), dedup_warnings=dedup_warnings)
        corpus.label_frequency = corpus.recount()
        return corpus


@dataclass(frozen=True)
class LabelPartition:
    """Seen labels (union over train) and unseen labels (test-only)."""

    seen: frozenset[str]
    unseen: frozenset[str]

    def __post_init__(self) -> None:
        if self.seen & self.unseen:
            raise ValueError("seen and unseen label sets overlap")


def load_corpus(path: str | Path) -> Corpus:
    """Load a JSONL corpus, preserving instance order.

    Duplicate labels within one record are deduplicated and counted in
    ``Corpus.dedup_warnings``.  Malformed lines and duplicate ids raise
    :class:`CorpusFormatError` naming the offending line number(s).
    """
    instances: list[Instance] = []
    seen_ids: dict[str, int] = {}
    dedup_warnings = 0
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusFormatError(f"{path}: line {lineno}: invalid JSON: {exc}") from exc
            if not isinstance(record, dict):
                raise CorpusFormatError(f"{path}: line {lineno}: record is not an object")
            try:
                inst_id = record["id"]
                text = record["text"]
                labels = record["labels"]
            except KeyError as exc:
                raise CorpusFormatError(f"{path}: line {lineno}: missing field {exc}") from exc
            if (
                not isinstance(inst_id, str)
                or not isinstance(text, str)
                or not isinstance(labels, list)
                or not all(isinstance(l, str) for l in labels)
            ):
                raise CorpusFormatError(f"{path}: line {lineno}: wrong field types")
            if inst_id in seen_ids:
                raise CorpusFormatError(
                    f"{path}: line {lineno}: duplicate id {inst_id!r} "
                    f"(first seen on line {seen_ids[inst_id]})"
                )
            seen_ids[inst_id] = lineno
            label_set = frozenset(labels)
            dedup_warnings += len(labels) - len(label_set)
            try:
                instances.append(Instance(id=inst_id, text=text, labels=label_set))
            except ValueError as exc:
                raise CorpusFormatError(f"{path}: line {lineno}: {exc}") from exc
    return Corpus.from_instances(instances, dedup_warnings=dedup_warnings)


def write_corpus(corpus: Corpus, path: str | Path) -> None:
    """Write a corpus as JSONL.  Labels are sorted so output is byte-stable."""
    with open(path, "w", encoding="utf-8") as fh:
        for inst in corpus.instances:
            record = {"id": inst.id, "text": inst.text, "labels": sorted(inst.labels)}
            fh.write(json.dumps(record, ensure_ascii=False) + "\n")


def write_label_list(labels: set[str] | frozenset[str], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for label in sorted(labels):
            fh.write(label + "\n")


def read_label_list(path: str | Path) -> set[str]:
    with open(path, encoding="utf-8") as fh:
        return {line.rstrip("\n") for line in fh if line.rstrip("\n")}


def build_ov_split(
    train: Corpus, test: Corpus, n_labels: int, seed: int
) -> tuple[Corpus, Corpus, set[str]]:
    """Hold out ``n_labels`` train labels and move every carrier to the test side.

    Labels are sampled uniformly without replacement from the train split's
    distinct labels under ``seed``.  Moved instances are appended to the test
    corpus preserving their original order, so the same inputs always produce
    byte-identical outputs.  Labels whose carriers all moved become unseen as
    a side effect even when not sampled.
    """
    if n_labels < 0:
        raise ValueError("n_labels must be non-negative")
    distinct = sorted(train.label_set())
    if n_labels > len(distinct):
        raise ValueError(
            f"n_labels={n_labels} exceeds the {len(distinct)} distinct train labels"
        )
    rng = random.Random(seed)
    removed = set(rng.sample(distinct, n_labels))

    kept: list[Instance] = []
    moved: list[Instance] = []
    for inst in train.instances:
        if inst.labels & removed:
            moved.append(inst)
        else:
            kept.append(inst)
    new_train = Corpus.from_instances(kept)
    new_test = Corpus.from_instances(test.instances + moved)
    return new_train, new_test, removed


def partition_labels(train: Corpus, test: Corpus) -> LabelPartition:
    """Seen = union of train labels; unseen = test labels missing from train."""
    seen = frozenset(train.label_set())
    unseen = frozenset(test.label_set() - seen)
    return LabelPartition(seen=seen, unseen=unseen)

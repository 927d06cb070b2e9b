"""Corpus and dataset ingestion: normalization, loading, label filtering, splits.

Plain-text LM corpora are read line by line (one document per non-blank
line) with the file list sorted by path so document order is
deterministic.  Classification data is UTF-8 JSON lines with ``text``
(string) and ``labels`` (array of strings).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import DataError, IngestionError, SchemaError, UsageError

_DIGIT_MAP = str.maketrans({c: "0" for c in "123456789"})

BINARY = "binary"
MULTILABEL = "multilabel"


def normalize_text(raw: str) -> str:
    """Replace every ASCII digit with '0'. Total and idempotent."""
    return raw.translate(_DIGIT_MAP)


@dataclass(frozen=True)
class RawCorpus:
    documents: tuple[str, ...]
    source_tags: tuple[str, ...] = ()

    def __len__(self):
        return len(self.documents)


@dataclass(frozen=True)
class LabeledExample:
    text: str
    labels: frozenset[int]


@dataclass(frozen=True)
class LabeledDataset:
    examples: tuple[LabeledExample, ...]
    label_vocabulary: tuple[str, ...]
    task_kind: str
    warning: str | None = field(default=None, compare=False)

    def __len__(self):
        return len(self.examples)


def load_lm_corpus(paths) -> RawCorpus:
    """Read plain-text files into a normalized corpus.

    One document per non-blank line; files are visited in sorted path
    order so the result is deterministic for a given path set.
    """
    docs = []
    tags = []
    for path in sorted(str(p) for p in paths):
        try:
            raw = Path(path).read_bytes()
        except OSError as e:
            raise IngestionError(f"cannot read corpus file {path}: {e}") from e
        try:
            text = raw.decode("utf-8")
        except UnicodeDecodeError as e:
            raise IngestionError(
                f"corpus file {path} is not valid UTF-8 at byte {e.start}") from e
        for line in text.splitlines():
            line = line.strip()
            if line:
                docs.append(normalize_text(line))
                tags.append(path)
    return RawCorpus(documents=tuple(docs), source_tags=tuple(tags))


def _parse_record(line: str, lineno: int, path) -> tuple[str, list[str]]:
    try:
        rec = json.loads(line)
    except json.JSONDecodeError as e:
        raise SchemaError(f"{path}:{lineno}: invalid JSON record: {e}") from e
    if not isinstance(rec, dict):
        raise SchemaError(f"{path}:{lineno}: record must be an object")
    if "text" not in rec:
        raise SchemaError(f"{path}:{lineno}: missing field 'text'")
    if "labels" not in rec:
        raise SchemaError(f"{path}:{lineno}: missing field 'labels'")
    text = rec["text"]
    labels = rec["labels"]
    if not isinstance(text, str):
        raise SchemaError(f"{path}:{lineno}: field 'text' must be a string")
    if not isinstance(labels, list) or not all(isinstance(x, str) for x in labels):
        raise SchemaError(f"{path}:{lineno}: field 'labels' must be a list of strings")
    return text, labels


def load_classification_dataset(path, task_kind: str) -> LabeledDataset:
    """Load a JSON-lines dataset, building the label vocabulary in first-seen order."""
    if task_kind not in (BINARY, MULTILABEL):
        raise UsageError(f"unknown task kind {task_kind!r}")
    try:
        raw = Path(path).read_bytes()
    except OSError as e:
        raise IngestionError(f"cannot read dataset {path}: {e}") from e
    try:
        text = raw.decode("utf-8")
    except UnicodeDecodeError as e:
        raise IngestionError(f"dataset {path} is not valid UTF-8 at byte {e.start}") from e

    label_ids: dict[str, int] = {}
    examples = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        txt, labels = _parse_record(line, lineno, path)
        if task_kind == BINARY and len(labels) != 1:
            raise SchemaError(
                f"{path}:{lineno}: binary task needs exactly 1 label, got {len(labels)}")
        ids = set()
        for name in labels:
            if name not in label_ids:
                label_ids[name] = len(label_ids)
            ids.add(label_ids[name])
        examples.append(LabeledExample(text=normalize_text(txt), labels=frozenset(ids)))
    vocab = tuple(label_ids)
    if task_kind == BINARY and examples and len(vocab) < 2:
        raise SchemaError(f"{path}: binary task needs 2 label values, found {len(vocab)}")
    return LabeledDataset(examples=tuple(examples), label_vocabulary=vocab,
                          task_kind=task_kind)


def filter_frequent_labels(ds: LabeledDataset, min_train_count: int) -> LabeledDataset:
    """Drop labels occurring on fewer than ``min_train_count`` examples.

    Examples left without labels are retained; they simply score zero
    relevance.  When every label falls below the threshold the result
    has an empty vocabulary and carries a warning instead of erroring.
    """
    if ds.task_kind != MULTILABEL:
        raise UsageError("filter_frequent_labels applies to multilabel datasets only")
    if min_train_count < 1:
        raise UsageError(f"min_train_count must be >= 1, got {min_train_count}")
    counts = np.zeros(len(ds.label_vocabulary), dtype=np.int64)
    for ex in ds.examples:
        for lid in ex.labels:
            counts[lid] += 1
    keep = [i for i in range(len(ds.label_vocabulary)) if counts[i] >= min_train_count]
    remap = {old: new for new, old in enumerate(keep)}
    new_examples = tuple(
        LabeledExample(text=ex.text,
                       labels=frozenset(remap[l] for l in ex.labels if l in remap))
        for ex in ds.examples)
    warning = None
    if not keep:
        warning = (f"all {len(ds.label_vocabulary)} labels fall below the "
                   f"frequency threshold {min_train_count}")
    return LabeledDataset(examples=new_examples,
                          label_vocabulary=tuple(ds.label_vocabulary[i] for i in keep),
                          task_kind=ds.task_kind, warning=warning)


def split_dataset(ds: LabeledDataset, ratios, seed: int):
    """Deterministic (train, valid, test) split.

    Part sizes are floor-based with the remainder assigned to train; the
    parts are disjoint and their union is the input.
    """
    r = tuple(float(x) for x in ratios)
    if len(r) != 3 or any(x <= 0 for x in r):
        raise UsageError(f"ratios must be 3 positive numbers, got {ratios}")
    if abs(sum(r) - 1.0) > 1e-9:
        raise UsageError(f"ratios must sum to 1, got {sum(r)!r}")
    n = len(ds.examples)
    if n < 3:
        raise DataError(f"cannot split {n} examples into 3 parts")
    order = np.random.default_rng(seed).permutation(n)
    n_valid = int(n * r[1])
    n_test = int(n * r[2])
    n_train = n - n_valid - n_test
    cut1, cut2 = n_train, n_train + n_valid
    parts = (order[:cut1], order[cut1:cut2], order[cut2:])
    return tuple(
        replace(ds, examples=tuple(ds.examples[i] for i in idx), warning=None)
        for idx in parts)

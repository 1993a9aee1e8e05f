"""SemEval-2017 Task 4 (subtasks A/B/C) TSV loading, tweet normalization and splits.

Record layouts (tab separated, UTF-8, LF or CRLF):

    A:    id  label  text          label in {negative, neutral, positive}
    B:    id  topic  label  text   label in {negative, positive}
    C:    id  topic  label  text   label in {-2, -1, 0, 1, 2}

Lines whose text is the placeholder ``Not Available`` (deleted tweets in the
official distribution) are skipped and counted.
"""

from __future__ import annotations

import html
import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

NOT_AVAILABLE = "Not Available"

_URL_RE = re.compile(r"(?:https?://|www\.)\S*", re.IGNORECASE)
_MENTION_RE = re.compile(r"@\w+")


class CorpusError(ValueError):
    pass


class ParseError(CorpusError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


class LabelError(ParseError):
    pass


class StratificationError(CorpusError):
    pass


@dataclass(frozen=True)
class SentimentScale:
    kind: str
    labels: tuple

    def __post_init__(self):
        if len(set(self.labels)) != len(self.labels):
            raise ValueError("scale labels must be unique")

    def __len__(self):
        return len(self.labels)

    def __contains__(self, label):
        return label in self.labels

    def index(self, label) -> int:
        return self.labels.index(label)

    def parse(self, token: str):
        """Map a file token to a label on this scale, or raise KeyError."""
        token = token.strip()
        if self.kind == "five_point":
            if token not in {str(v) for v in self.labels}:
                raise KeyError(token)
            return int(token)
        if token not in self.labels:
            raise KeyError(token)
        return token

    @staticmethod
    def format(label) -> str:
        return str(label)


THREE_POINT = SentimentScale("three_point", ("negative", "neutral", "positive"))
TWO_POINT = SentimentScale("two_point", ("negative", "positive"))
FIVE_POINT = SentimentScale("five_point", (-2, -1, 0, 1, 2))

SCALES = {s.kind: s for s in (THREE_POINT, TWO_POINT, FIVE_POINT)}
SUBTASK_SCALES = {"A": THREE_POINT, "B": TWO_POINT, "C": FIVE_POINT}


def scale_for(subtask: str) -> SentimentScale:
    try:
        return SUBTASK_SCALES[subtask.upper()]
    except KeyError:
        raise ValueError(f"unknown subtask {subtask!r}; expected A, B or C") from None


def _normalize_once(text: str, lowercase: bool) -> str:
    text = html.unescape(text)
    text = _URL_RE.sub("<url>", text)
    text = _MENTION_RE.sub("<user>", text)
    if lowercase:
        text = text.lower()
    return " ".join(text.split())


def normalize_tweet(raw: str, lowercase: bool = True) -> str:
    """Unescape entities, mask URLs and @-mentions, lowercase, squash whitespace.

    The pass is repeated until nothing changes, so doubly-escaped entities
    (``&amp;amp;``) and entities exposed by lowercasing still end in a fixed
    point; this is what makes the function idempotent.
    """
    text = raw
    for _ in range(16):
        out = _normalize_once(text, lowercase)
        if out == text:
            return out
        text = out
    return text


@dataclass(frozen=True)
class LabeledTweet:
    id: str
    label: object
    raw_text: str
    topic: str | None = None
    norm_text: str = ""

    @classmethod
    def make(cls, id: str, label, raw_text: str, topic: str | None = None,
             lowercase: bool = True) -> "LabeledTweet":
        return cls(id, label, raw_text, topic, normalize_tweet(raw_text, lowercase))


@dataclass(frozen=True)
class Dataset:
    subtask: str
    scale: SentimentScale
    examples: tuple[LabeledTweet, ...]
    source_path: str = field(default="", compare=False)
    skipped: int = field(default=0, compare=False)

    def __len__(self):
        return len(self.examples)

    def __iter__(self):
        return iter(self.examples)

    @property
    def labels(self) -> list:
        return [ex.label for ex in self.examples]

    @property
    def texts(self) -> list[str]:
        return [ex.norm_text for ex in self.examples]

    def subset(self, indices: Iterable[int]) -> "Dataset":
        return Dataset(self.subtask, self.scale,
                       tuple(self.examples[i] for i in indices), self.source_path)


def _has_topic(subtask: str) -> bool:
    return subtask in ("B", "C")


def parse_lines(lines: Iterable[str], subtask: str, source_path: str = "",
                lowercase: bool = True) -> Dataset:
    subtask = subtask.upper()
    scale = scale_for(subtask)
    n_fields = 4 if _has_topic(subtask) else 3
    examples = []
    skipped = 0
    for lineno, line in enumerate(lines, start=1):
        line = line.rstrip("\r\n")
        if not line.strip():
            continue
        fields = line.split("\t")
        # official files sometimes carry trailing empty columns
        while len(fields) > n_fields and fields[-1] == "":
            fields.pop()
        if len(fields) != n_fields:
            raise ParseError(f"expected {n_fields} tab-separated fields for subtask "
                             f"{subtask}, found {len(fields)}", lineno)
        if n_fields == 4:
            tweet_id, topic, label_tok, text = fields
        else:
            tweet_id, label_tok, text = fields
            topic = None
        if text == NOT_AVAILABLE:
            skipped += 1
            continue
        try:
            label = scale.parse(label_tok)
        except KeyError:
            raise LabelError(f"label {label_tok!r} is not on the {scale.kind} scale "
                             f"{list(scale.labels)}", lineno) from None
        examples.append(LabeledTweet.make(tweet_id, label, text, topic, lowercase))
    return Dataset(subtask, scale, tuple(examples), source_path, skipped)


def load_dataset(path, subtask: str, lowercase: bool = True) -> Dataset:
    path = Path(path)
    # utf-8-sig tolerates a BOM; newline="" keeps CR so CRLF is stripped per line
    with open(path, encoding="utf-8-sig", newline="") as fh:
        return parse_lines(fh, subtask, str(path), lowercase)


def format_record(ex: LabeledTweet, subtask: str, normalized: bool = False) -> str:
    text = ex.norm_text if normalized else ex.raw_text
    fields = [ex.id]
    if _has_topic(subtask):
        fields.append(ex.topic or "")
    fields += [SentimentScale.format(ex.label), text]
    for f in fields:
        if "\t" in f or "\n" in f or "\r" in f:
            raise ValueError(f"field {f!r} of tweet {ex.id} cannot be written as TSV")
    return "\t".join(fields)


def write_dataset(ds: Dataset, path, normalized: bool = False) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for ex in ds.examples:
            fh.write(format_record(ex, ds.subtask, normalized) + "\n")


def class_distribution(ds: Dataset) -> dict:
    counts = Counter(ex.label for ex in ds.examples)
    return {label: counts.get(label, 0) for label in ds.scale.labels}


def stratified_split(ds: Dataset, fraction: float, seed: int) -> tuple[Dataset, Dataset]:
    """Split each class so that about ``fraction`` of it lands in the first part.

    Both parts keep the original example order. Every class needs at least two
    examples so each part receives at least one of them.
    """
    if not 0.0 < fraction < 1.0:
        raise ValueError("fraction must lie strictly between 0 and 1")
    by_label: dict = {}
    for i, ex in enumerate(ds.examples):
        by_label.setdefault(ex.label, []).append(i)
    small = [lab for lab, idx in by_label.items() if len(idx) < 2]
    if small:
        raise StratificationError(f"classes with fewer than 2 examples: {small}")

    rng = np.random.default_rng(seed)
    first: list[int] = []
    for label in ds.scale.labels:
        idx = by_label.get(label)
        if not idx:
            continue
        k = int(np.floor(fraction * len(idx) + 0.5))
        k = min(max(k, 1), len(idx) - 1)
        perm = rng.permutation(len(idx))
        first.extend(idx[j] for j in perm[:k])
    chosen = set(first)
    a = sorted(chosen)
    b = [i for i in range(len(ds.examples)) if i not in chosen]
    return ds.subset(a), ds.subset(b)


def concat(datasets: Sequence[Dataset]) -> Dataset:
    first = datasets[0]
    if any(d.scale != first.scale for d in datasets):
        raise CorpusError("cannot concatenate datasets on different scales")
    examples = tuple(ex for d in datasets for ex in d.examples)
    return Dataset(first.subtask, first.scale, examples, first.source_path)

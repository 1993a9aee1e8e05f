"""Seeded lexicon-template generator for synthetic SemEval-style tweets.

Every tweet gets a five-point label in -2..2 and is assembled from filler
words plus class cues:

* polarity words: negative lexicon for labels < 0, positive lexicon for
  labels > 0, a separate "meh" lexicon for label 0 (the three never overlap);
* an intensity cue before the polarity word for labels +-1 ("somewhat") and
  +-2 ("absolutely"); with probability ``confusion`` the cue comes from the
  other intensity set, so +-1 and +-2 are only partly separable.

Coarser scales are derived from the same draw: two-point maps labels < 0 to
negative and labels >= 0 to positive; three-point maps them to
negative / neutral / positive. The two-point task is therefore separable by
lexicon while the five-point task refines it with noisy cues.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .corpus import Dataset, LabeledTweet, scale_for, write_dataset

POSITIVE = ("love", "great", "awesome", "happy", "amazing", "excellent", "wonderful",
            "fantastic", "brilliant", "enjoy", "best", "perfect", "delightful", "superb",
            "glad", "thrilled")
NEGATIVE = ("hate", "awful", "terrible", "sad", "horrible", "worst", "disappointing",
            "angry", "boring", "annoying", "ugly", "poor", "dreadful", "miserable",
            "upset", "broken")
MEH = ("okay", "fine", "average", "normal", "meh", "alright", "usual", "standard")
STRONG = ("absolutely", "totally", "extremely", "utterly", "insanely")
MILD = ("somewhat", "kinda", "fairly", "slightly", "mostly")
FILLER = ("the", "a", "today", "just", "watched", "new", "show", "game", "phone", "movie",
          "about", "with", "my", "friends", "tonight", "this", "weekend", "update", "news",
          "again", "really", "going", "to", "see", "at", "store", "and", "so", "it", "was")
TOPICS = ("iphone", "netflix", "starbucks", "tesla", "nintendo", "spotify", "marvel", "amazon")


@dataclass(frozen=True)
class Record:
    id: str
    topic: str
    label: int
    text: str


def _tweet(rng: np.random.Generator, label: int, topic: str, confusion: float) -> str:
    words = list(rng.choice(FILLER, size=int(rng.integers(3, 9))))
    lexicon = NEGATIVE if label < 0 else POSITIVE if label > 0 else MEH
    n_polar = int(rng.integers(1, 3))
    for _ in range(n_polar):
        phrase = [str(rng.choice(lexicon))]
        if label != 0:
            strong = abs(label) == 2
            if rng.random() < confusion:
                strong = not strong
            phrase.insert(0, str(rng.choice(STRONG if strong else MILD)))
        pos = int(rng.integers(0, len(words) + 1))
        words[pos:pos] = phrase
    if rng.random() < 0.5:
        words.insert(int(rng.integers(0, len(words) + 1)), topic.capitalize())
    if rng.random() < 0.3:
        words.insert(0, f"@user{int(rng.integers(1000))}")
    if rng.random() < 0.2:
        words.append(f"https://t.co/{int(rng.integers(10**6)):06d}")
    if rng.random() < 0.2:
        i = int(rng.integers(len(words)))
        words[i] = words[i].upper()
    text = " ".join(words)
    return text.replace(" and ", " &amp; ") if rng.random() < 0.1 else text


def synthetic_records(n: int, seed: int, confusion: float = 0.3,
                      constant_label: int | None = None) -> list[Record]:
    """``n`` records with uniformly drawn labels (or all ``constant_label``)."""
    rng = np.random.default_rng(seed)
    out = []
    for i in range(n):
        label = int(rng.integers(-2, 3)) if constant_label is None else constant_label
        topic = str(rng.choice(TOPICS))
        out.append(Record(f"{800000000000000000 + i}", topic, label,
                          _tweet(rng, label, topic, confusion)))
    return out


def coarsen(label: int, subtask: str):
    if subtask == "C":
        return label
    if subtask == "B":
        return "negative" if label < 0 else "positive"
    return "negative" if label < 0 else "neutral" if label == 0 else "positive"


def to_dataset(records, subtask: str, source_path: str = "") -> Dataset:
    subtask = subtask.upper()
    scale = scale_for(subtask)
    examples = tuple(
        LabeledTweet.make(r.id, coarsen(r.label, subtask), r.text,
                          r.topic if subtask in ("B", "C") else None)
        for r in records)
    return Dataset(subtask, scale, examples, source_path)


SPLITS = (("train", 0.6), ("dev", 0.2), ("test", 0.2))


def split_records(records):
    n = len(records)
    n_train = int(round(SPLITS[0][1] * n))
    n_dev = int(round(SPLITS[1][1] * n))
    return {"train": records[:n_train], "dev": records[n_train:n_train + n_dev],
            "test": records[n_train + n_dev:]}


def fixture_datasets(n: int = 500, seed: int = 17, subtask: str = "B", **kw) -> dict:
    """Train/dev/test Datasets (60/20/20) for one synthetic fixture."""
    parts = split_records(synthetic_records(n, seed, **kw))
    return {k: to_dataset(v, subtask) for k, v in parts.items()}


def write_fixture(out_dir, n: int = 500, seed: int = 17, subtask: str = "B",
                  prefix: str | None = None, **kw) -> dict[str, Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    prefix = prefix or f"synthetic_{subtask.lower()}{n}"
    paths = {}
    for split, ds in fixture_datasets(n, seed, subtask, **kw).items():
        path = out_dir / f"{prefix}.{split}.tsv"
        write_dataset(ds, path)
        paths[split] = path
    return paths


def toy_dataset(n: int = 32, seed: int = 5) -> Dataset:
    """Small three-point (subtask A layout) set for overfitting checks."""
    return to_dataset(synthetic_records(n, seed, confusion=0.0), "A")

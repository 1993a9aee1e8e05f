"""Multinomial Naive Bayes baseline with add-alpha smoothing, kept in log space."""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .corpus import SCALES, Dataset, SentimentScale

FORMAT = "tweetbench-nb/1"


class TrainingError(ValueError):
    pass


class ModelFormatError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class NBModel:
    """Trained model.

    ``log_lik`` has one row per label and one column per vocabulary word, plus
    a final column for the shared unknown-word bucket.
    """

    scale: SentimentScale
    labels: tuple
    alpha: float
    vocab_words: tuple[str, ...]
    log_prior_arr: np.ndarray
    log_lik: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "_index", {w: i for i, w in enumerate(self.vocab_words)})

    @property
    def unknown_index(self) -> int:
        return len(self.vocab_words)

    @property
    def log_prior(self) -> dict:
        return dict(zip(self.labels, self.log_prior_arr.tolist()))

    def log_likelihood(self, label, word: str | None) -> float:
        """Smoothed log P(word | label); ``None`` or an unseen word hits the unknown bucket."""
        col = self._index.get(word, self.unknown_index) if word is not None else self.unknown_index
        return float(self.log_lik[self.labels.index(label), col])

    def word_columns(self, text: str) -> np.ndarray:
        unk = self.unknown_index
        return np.array([self._index.get(w, unk) for w in text.split()], dtype=np.int64)

    def save(self, path) -> None:
        payload = {
            "format": FORMAT,
            "scale": self.scale.kind,
            "alpha": self.alpha,
            "labels": [SentimentScale.format(l) for l in self.labels],
            "vocab": list(self.vocab_words),
            "log_prior": self.log_prior_arr.tolist(),
            "log_likelihood": self.log_lik.tolist(),
        }
        Path(path).write_text(json.dumps(payload), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "NBModel":
        try:
            payload = json.loads(Path(path).read_text(encoding="utf-8"))
            if payload.get("format") != FORMAT:
                raise ModelFormatError(f"{path}: not a {FORMAT} file")
            scale = SCALES[payload["scale"]]
            labels = tuple(scale.parse(tok) for tok in payload["labels"])
            vocab = tuple(payload["vocab"])
            prior = np.array(payload["log_prior"], dtype=np.float64)
            lik = np.array(payload["log_likelihood"], dtype=np.float64)
            alpha = float(payload["alpha"])
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, ModelFormatError):
                raise
            raise ModelFormatError(f"{path}: {exc}") from exc
        if prior.shape != (len(labels),) or lik.shape != (len(labels), len(vocab) + 1):
            raise ModelFormatError(f"{path}: table shapes do not match labels/vocab")
        return cls(scale, labels, alpha, vocab, prior, lik)


def train_nb(ds: Dataset, alpha: float = 1.0) -> NBModel:
    if not alpha > 0:
        raise ValueError(f"alpha must be positive, got {alpha}")
    if len(ds) == 0:
        raise TrainingError("cannot train on an empty dataset")

    docs = [ex.norm_text.split() for ex in ds.examples]
    vocab = tuple(sorted({w for d in docs for w in d}))
    index = {w: i for i, w in enumerate(vocab)}
    present = {ex.label for ex in ds.examples}
    labels = tuple(l for l in ds.scale.labels if l in present)
    dropped = [l for l in ds.scale.labels if l not in present]
    if dropped:
        warnings.warn(f"classes without training examples dropped from the model: {dropped}",
                      stacklevel=2)
    row = {l: i for i, l in enumerate(labels)}

    n_docs = np.zeros(len(labels))
    counts = np.zeros((len(labels), len(vocab) + 1))
    for ex, words in zip(ds.examples, docs):
        r = row[ex.label]
        n_docs[r] += 1
        np.add.at(counts[r], [index[w] for w in words], 1.0)

    log_prior = np.log(n_docs / n_docs.sum())
    totals = counts.sum(axis=1, keepdims=True)
    log_lik = np.log(counts + alpha) - np.log(totals + alpha * (len(vocab) + 1))
    return NBModel(ds.scale, labels, float(alpha), vocab, log_prior, log_lik)


def _scores(model: NBModel, text: str) -> np.ndarray:
    cols = model.word_columns(text)
    return model.log_prior_arr + model.log_lik[:, cols].sum(axis=1)


def predict_nb(model: NBModel, text: str):
    """Return the best label and the unnormalized log posterior of every label.

    Ties go to the label that comes first on the scale.
    """
    scores = _scores(model, text)
    best = int(np.argmax(scores))  # argmax returns the first maximum
    return model.labels[best], dict(zip(model.labels, scores.tolist()))


def nb_probabilities(model: NBModel, text: str) -> dict:
    scores = _scores(model, text)
    p = np.exp(scores - scores.max())
    p /= p.sum()
    return dict(zip(model.labels, p.tolist()))


def predict_many(model: NBModel, texts) -> list:
    return [predict_nb(model, t)[0] for t in texts]

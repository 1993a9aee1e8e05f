"""Desk-scale benchmark toolkit for SemEval-2017 Task 4 tweet sentiment (subtasks A, B, C)."""

from .corpus import (Dataset, LabeledTweet, SentimentScale, class_distribution, load_dataset,
                     normalize_tweet, stratified_split)
from .metrics import (ConfusionMatrix, MetricsReport, compute_metrics, confusion, evaluate,
                      render_report)
from .nb import NBModel, nb_probabilities, predict_nb, train_nb
from .tokenizer import TextEncoder, TokenSequence, Vocab, apply_mlm_mask, build_vocab, decode, encode

__version__ = "0.1.0"

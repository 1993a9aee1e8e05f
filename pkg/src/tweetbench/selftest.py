"""Property checks run by ``tweetbench selftest``."""

from __future__ import annotations

import math
import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import metrics as M
from .corpus import Dataset, LabeledTweet, SentimentScale, normalize_tweet
from .encoder import (BASE, DESK, TrainConfig, grad_check, init_model, parameter_count,
                      train_classifier)
from .fixtures import fixture_datasets, toy_dataset
from .nb import predict_nb, train_nb
from .tokenizer import TextEncoder, TokenSequence, apply_mlm_mask, build_vocab


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str
    seconds: float


def check_metrics_oracle(seed: int) -> tuple[bool, str]:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for k in (2, 3, 5):
        labels = tuple(range(k))
        gold = rng.integers(0, k, 10_000).tolist()
        pred = rng.integers(0, k, 10_000).tolist()
        m = M.confusion(gold, pred, labels)
        tally = [[0] * k for _ in range(k)]
        for g, p in zip(gold, pred):
            tally[g][p] += 1
        if m.counts.tolist() != tally:
            return False, f"confusion tally mismatch for {k} labels"
        rep = M.compute_metrics(m)
        f1s = []
        for c in labels:
            tp = sum(1 for g, p in zip(gold, pred) if g == c and p == c)
            npred = sum(1 for p in pred if p == c)
            ngold = sum(1 for g in gold if g == c)
            prec = tp / npred if npred else 0.0
            rec = tp / ngold if ngold else 0.0
            f1 = 2 * prec * rec / (prec + rec) if prec + rec else 0.0
            f1s.append(f1)
            got = rep.per_class[c]
            worst = max(worst, abs(got.precision - prec), abs(got.recall - rec), abs(got.f1 - f1))
        acc = sum(g == p for g, p in zip(gold, pred)) / len(gold)
        worst = max(worst, abs(rep.accuracy - acc), abs(rep.macro.f1 - sum(f1s) / k))
    return worst < 1e-12, f"max abs deviation {worst:.2e}"


def check_nb_example(seed: int) -> tuple[bool, str]:
    docs = [("chinese beijing chinese", "c"), ("chinese chinese shanghai", "c"),
            ("chinese macao", "c"), ("tokyo japan chinese", "j")]
    scale = SentimentScale("two_point", ("c", "j"))
    ds = Dataset("B", scale, tuple(LabeledTweet(str(i), y, t, "x", t) for i, (t, y) in enumerate(docs)))
    model = train_nb(ds, 1.0)
    label, scores = predict_nb(model, "chinese chinese chinese tokyo japan")
    # |V| = 6 plus one unknown bucket: denominators 8 + 7 for c, 3 + 7 for j
    want_c = math.log(3 / 4) + 3 * math.log(6 / 15) + 2 * math.log(1 / 15)
    want_j = math.log(1 / 4) + 3 * math.log(2 / 10) + 2 * math.log(2 / 10)
    err = max(abs(scores["c"] - want_c), abs(scores["j"] - want_j))
    return label == "c" and err < 1e-9, f"label {label}, score error {err:.1e}"


def check_masking(seed: int) -> tuple[bool, str]:
    seq = TokenSequence(tuple([2] + [10] * 100 + [3] + [0] * 10), tuple([0] * 112),
                        tuple([1] * 102 + [0] * 10), frozenset({0, 101}))
    batch = [seq] * 100  # 10 000 eligible positions
    masked = apply_mlm_mask(batch, 0.15, seed)
    labels = np.array(masked.mlm_labels)
    frac = (labels != -100).sum() / 10_000
    bad = (labels[:, [0, 101]] != -100).any() or (labels[:, 102:] != -100).any()
    return 0.13 <= frac <= 0.17 and not bad, f"masked fraction {frac:.4f}"


def check_grad(seed: int, mutate: str | None = None) -> tuple[bool, str]:
    cfg = DESK.replace(dropout_rate=0.0, seed=seed)
    model = init_model(cfg)
    rng = np.random.default_rng(seed)
    B, T = 3, 12
    ids = rng.integers(5, cfg.vocab_size, (B, T))
    ids[:, 0] = 2
    mask = np.ones((B, T), dtype=np.int64)
    mask[1, 9:] = 0
    ids[mask == 0] = 0
    segs = np.zeros((B, T), dtype=np.int64)
    segs[:, 7:] = 1
    labels = rng.integers(0, cfg.num_classes, B)
    res = grad_check(model, (ids, segs, mask), labels, epsilon=1e-3, n_coords=200, seed=seed,
                     mutate={mutate: 2.0} if mutate else None)
    return res.passed, f"max rel error {res.max_rel_error:.2e} over {res.n_coords} coords"


def check_param_count(seed: int) -> tuple[bool, str]:
    n = parameter_count(BASE)
    return abs(n - 110e6) / 110e6 < 0.05, f"base config {n:,} parameters"


def check_normalize(seed: int) -> tuple[bool, str]:
    cases = ["@John check https://t.co/xyz GREAT &amp; fun", "&amp;amp;lt;", "  WWW.x.com @a_b  "]
    ok = all(normalize_tweet(normalize_tweet(c)) == normalize_tweet(c) for c in cases)
    ok &= normalize_tweet(cases[0]) == "<user> check <url> great & fun"
    return ok, "idempotent on sample inputs"


def check_overfit(seed: int) -> tuple[bool, str]:
    toy = toy_dataset()
    vocab = build_vocab(toy.texts, 8000, 2)
    te = TextEncoder(vocab)
    model = init_model(DESK.replace(vocab_size=len(vocab), dropout_rate=0.0, seed=seed))
    _, hist = train_classifier(model, toy, toy, TrainConfig(epochs=200, seed=seed), te,
                               stop_at_train_accuracy=1.0)
    return hist[-1].train_accuracy == 1.0, f"train accuracy {hist[-1].train_accuracy} " \
                                           f"after {hist[-1].epoch} epochs"


def check_fixture(seed: int) -> tuple[bool, str]:
    from .harness import fit
    d = fixture_datasets(500, 17, "B")
    accs = {}
    for kind in ("naive_bayes", "encoder"):
        pred = fit(kind, d["train"], d["dev"], seed).predict(d["test"])
        accs[kind] = M.evaluate(d["test"].labels, pred, d["test"].scale).accuracy
    return all(a >= 0.9 for a in accs.values()), ", ".join(f"{k} {v:.4f}" for k, v in accs.items())


CHECKS: list[tuple[str, Callable, bool]] = [
    ("metrics_oracle", check_metrics_oracle, False),
    ("nb_worked_example", check_nb_example, False),
    ("mlm_masking", check_masking, False),
    ("grad_check", check_grad, False),
    ("param_count", check_param_count, False),
    ("normalize", check_normalize, False),
    ("overfit", check_overfit, True),
    ("fixture_accuracy", check_fixture, True),
]


def run_selftest(seed: int = 0, quick: bool = False, mutate_grad: str | None = None,
                 report: Callable[[CheckResult], None] | None = None) -> list[CheckResult]:
    results = []
    for name, fn, needs_training in CHECKS:
        if quick and needs_training:
            continue
        t0 = time.perf_counter()
        try:
            if name == "grad_check":
                ok, detail = fn(seed, mutate_grad)
            else:
                ok, detail = fn(seed)
        except Exception as exc:  # a crashing check is a failed check
            ok, detail = False, f"{type(exc).__name__}: {exc}"
        res = CheckResult(name, bool(ok), detail, time.perf_counter() - t0)
        results.append(res)
        if report:
            report(res)
    return results

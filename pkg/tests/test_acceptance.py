"""Acceptance criteria, one test each.

Every test records a ``PASS``/``FAIL``/``SKIP`` line that is printed in the
pytest terminal summary. Criterion 8 needs the official SemEval files: point
``TWEETBENCH_SEMEVAL_DIR`` at a directory holding ``subtaskA.train.tsv``,
``subtaskA.test.tsv``, ``subtaskA.dev.tsv`` and the same three for ``subtaskB``.
"""

import math
import os
import time
from pathlib import Path

import numpy as np
import pytest

from tweetbench import metrics as M
from tweetbench.corpus import Dataset, LabeledTweet, SentimentScale, load_dataset
from tweetbench.encoder import (BASE, DESK, TrainConfig, grad_check, init_model,
                                parameter_count, parameter_shapes, train_classifier)
from tweetbench.encoder.config import tensor_kind
from tweetbench.fixtures import fixture_datasets, toy_dataset
from tweetbench.harness import ExperimentConfig, binary_vs_multiclass_study, fit, run_experiment
from tweetbench.nb import predict_nb, train_nb
from tweetbench.tokenizer import NOT_MASKED, TextEncoder, TokenSequence, apply_mlm_mask, build_vocab

ROOT = Path(__file__).resolve().parents[1]
RESULTS: dict[int, str] = {}


class Criterion:
    def __init__(self, num, title):
        self.num, self.title = num, title

    def __enter__(self):
        self.t0 = time.perf_counter()
        self.detail = ""
        return self

    def __exit__(self, exc_type, exc, tb):
        secs = time.perf_counter() - self.t0
        if exc_type is None:
            status = "PASS"
        elif issubclass(exc_type, pytest.skip.Exception):
            status = "SKIP"
            self.detail = str(exc)
        else:
            status = "FAIL"
            self.detail = self.detail or f"{exc_type.__name__}: {exc}".splitlines()[0]
        line = f"{status} [{self.num}] {self.title}: {self.detail} ({secs:.1f}s)"
        RESULTS[self.num] = line
        print(line)
        return False


def test_1_metrics_oracle():
    with Criterion(1, "metrics match a brute-force oracle") as c:
        rng = np.random.default_rng(2024)
        worst = 0.0
        for k in (2, 3, 5):
            gold = rng.integers(0, k, 10_000).tolist()
            pred = rng.integers(0, k, 10_000).tolist()
            tally = {}
            for g, p in zip(gold, pred):
                tally[g, p] = tally.get((g, p), 0) + 1
            m = M.confusion(gold, pred, range(k))
            assert all(m.counts[g, p] == tally.get((g, p), 0) for g in range(k) for p in range(k))
            rep = M.compute_metrics(m)
            ps, rs, fs = [], [], []
            for cl in range(k):
                tp = tally.get((cl, cl), 0)
                col = sum(tally.get((g, cl), 0) for g in range(k))
                row = sum(tally.get((cl, p), 0) for p in range(k))
                prec, rec = (tp / col if col else 0.0), (tp / row if row else 0.0)
                f1 = 2 * prec * rec / (prec + rec) if prec + rec else 0.0
                ps.append(prec), rs.append(rec), fs.append(f1)
                worst = max(worst, *(abs(a - b) for a, b in zip(rep.per_class[cl], (prec, rec, f1))))
            acc = sum(tally.get((i, i), 0) for i in range(k)) / 10_000
            want = (acc, sum(ps) / k, sum(rs) / k, sum(fs) / k)
            worst = max(worst, *(abs(a - b) for a, b in zip(rep.summary(), want)))
        c.detail = f"max deviation {worst:.1e}"
        assert worst <= 1e-12
        assert time.perf_counter() - c.t0 < 10


def test_2_naive_bayes_worked_example():
    with Criterion(2, "naive Bayes worked example") as c:
        docs = [("chinese beijing chinese", "c"), ("chinese chinese shanghai", "c"),
                ("chinese macao", "c"), ("tokyo japan chinese", "j")]
        scale = SentimentScale("two_point", ("c", "j"))
        ds = Dataset("B", scale, tuple(LabeledTweet(str(i), y, t, "t", t)
                                       for i, (t, y) in enumerate(docs)))
        model = train_nb(ds, 1.0)
        query = "chinese chinese chinese tokyo japan"
        label, scores = predict_nb(model, query)
        vocab = {w for t, _ in docs for w in t.split()}
        worst = 0.0
        for cl in ("c", "j"):
            words = [w for t, y in docs if y == cl for w in t.split()]
            denom = len(words) + len(vocab) + 1
            prior = sum(y == cl for _, y in docs) / len(docs)
            want = math.log(prior) + sum(math.log((words.count(w) + 1) / denom)
                                         for w in query.split())
            worst = max(worst, abs(scores[cl] - want), abs(model.log_prior[cl] - math.log(prior)))
            for w in vocab:
                worst = max(worst, abs(model.log_likelihood(cl, w)
                                       - math.log((words.count(w) + 1) / denom)))
        c.detail = f"label {label}, max log-prob deviation {worst:.1e}"
        assert label == "c"
        assert worst <= 1e-9
        assert time.perf_counter() - c.t0 < 1


def test_3_gradient_check():
    with Criterion(3, "gradient check on the desk encoder") as c:
        cfg = DESK.replace(dropout_rate=0.0)
        model = init_model(cfg, np.float64)
        rng = np.random.default_rng(0)
        ids = rng.integers(5, cfg.vocab_size, (3, 12))
        ids[:, 0] = 2
        mask = np.ones_like(ids)
        mask[1, 9:] = 0
        ids[mask == 0] = 0
        segs = np.zeros_like(ids)
        segs[:, 6:] = 1
        res = grad_check(model, (ids, segs, mask), np.array([0, 2, 1]), epsilon=1e-3,
                         n_coords=200)
        kinds = {tensor_kind(n) for n in parameter_shapes(cfg)}
        c.detail = f"max rel error {res.max_rel_error:.2e} over {res.n_coords} coords"
        assert res.n_coords >= 200
        assert set(res.per_kind) == kinds
        assert res.max_rel_error < 1e-4
        assert time.perf_counter() - c.t0 < 120


def test_4_mlm_masking_statistics():
    with Criterion(4, "MLM masking statistics") as c:
        seq = TokenSequence(tuple([2] + [10] * 100 + [3] + [0] * 10), (0,) * 112,
                            tuple([1] * 102 + [0] * 10), frozenset({0, 101}))
        labels = np.array(apply_mlm_mask([seq] * 100, 0.15, 0).mlm_labels)
        frac = (labels != NOT_MASKED).sum() / 10_000
        c.detail = f"masked fraction {frac:.4f}"
        assert 0.13 <= frac <= 0.17
        assert (labels[:, [0, 101]] == NOT_MASKED).all()
        assert (labels[:, 102:] == NOT_MASKED).all()
        assert time.perf_counter() - c.t0 < 5


def test_5_overfit_toy_set():
    with Criterion(5, "desk encoder overfits the 32-example toy set") as c:
        toy = toy_dataset()
        assert len(toy) == 32
        te = TextEncoder(build_vocab(toy.texts, 8000, 2))
        model = init_model(DESK.replace(vocab_size=len(te.vocab), dropout_rate=0.0))
        _, hist = train_classifier(model, toy, toy, TrainConfig(epochs=200), te,
                                   stop_at_train_accuracy=1.0)
        c.detail = f"train accuracy {hist[-1].train_accuracy} at epoch {hist[-1].epoch}"
        assert hist[-1].train_accuracy == 1.0 and hist[-1].epoch <= 200
        assert time.perf_counter() - c.t0 < 300


def test_6_qualitative_ordering():
    with Criterion(6, "fixture accuracy and binary >= five-point ordering") as c:
        d = fixture_datasets(500, 17, "B")
        accs = {}
        for kind in ("naive_bayes", "encoder"):
            pred = fit(kind, d["train"], d["dev"], 0).predict(d["test"])
            accs[kind] = M.evaluate(d["test"].labels, pred, d["test"].scale).accuracy
        study = binary_vs_multiclass_study(seed=0, strict=False)
        c.detail = (", ".join(f"{k} {v:.3f}" for k, v in accs.items()) + "; study "
                    + ", ".join(f"{k} {v['binary']:.3f}>={v['five_class']:.3f}"
                                for k, v in study.accuracies.items()))
        assert all(a >= 0.9 for a in accs.values())
        assert all(study.holds.values())
        assert time.perf_counter() - c.t0 < 600


@pytest.mark.parametrize("name", ["b500_naive_bayes", "b500_encoder"])
def test_7_determinism(name, tmp_path):
    with Criterion(7, "same-seed reruns are byte-identical") as c:
        def cfg():
            cf = ExperimentConfig.load(ROOT / "configs" / f"{name}.json")
            d = cf.to_dict()
            d["output_dir"] = str(tmp_path)
            return ExperimentConfig.from_dict(d, cf.base_dir)

        a, b = run_experiment(cfg()), run_experiment(cfg())
        same = [(a.run_dir / f).read_bytes() == (b.run_dir / f).read_bytes()
                for f in ("predictions.tsv", "report.json")]
        prev = RESULTS.get(7, "")
        c.detail = "; ".join(filter(None, [prev.split(": ", 1)[1].rsplit(" (", 1)[0]
                                           if prev.startswith("PASS") else "",
                                           f"{name} identical"]))
        assert all(same)


TABLE1 = {"A": {"train": 5868, "test": 20632, "dev": 2000},
          "B": {"train": 4309, "test": 10551, "dev": 1417}}


def test_8_official_data_counts():
    with Criterion(8, "official SemEval file counts") as c:
        root = os.environ.get("TWEETBENCH_SEMEVAL_DIR")
        if not root:
            pytest.skip("TWEETBENCH_SEMEVAL_DIR not set; official SemEval files not supplied")
        got = {}
        for sub, splits in TABLE1.items():
            for split in splits:
                got[sub, split] = len(load_dataset(Path(root) / f"subtask{sub}.{split}.tsv", sub))
        c.detail = ", ".join(f"{s}.{p}={n}" for (s, p), n in got.items())
        assert all(got[s, p] == TABLE1[s][p] for s, p in got)


def test_9_base_parameter_count():
    with Criterion(9, "base config parameter count") as c:
        n = parameter_count(BASE)
        c.detail = f"{n:,} parameters ({(n - 110e6) / 110e6:+.2%} vs 110M)"
        assert abs(n - 110e6) / 110e6 < 0.05

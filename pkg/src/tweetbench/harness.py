"""Seeded experiment runs, persisted artifacts, run comparison and the binary/five-point study.

A run directory ``<output_dir>/<timestamp>-<seed>/`` holds:

    config.json        byte copy of the experiment config
    predictions.tsv    id<TAB>gold<TAB>pred for the evaluated split
    report.json        metrics (deterministic given the seed; no timings)
    run.json           wall time and artifact names
    model.json         Naive Bayes model              (naive_bayes runs)
    weights.bin        encoder weight container       (encoder runs)
    vocab.txt          subword vocabulary             (encoder runs)
    history.jsonl      one JSON line per epoch        (encoder runs)

``<output_dir>/latest`` names the most recent run directory.
"""

from __future__ import annotations

import hashlib
import json
import os
import shutil
import time
from dataclasses import asdict, dataclass, field, fields
from importlib import resources
from pathlib import Path
from typing import Sequence

import numpy as np

from . import metrics as M
from .corpus import Dataset, SentimentScale, load_dataset, scale_for, stratified_split
from .encoder import (EncoderConfig, TrainConfig, init_model, load_weights, predict_logits,
                      save_weights, train_classifier)
from .encoder.train import EpochRecord, read_history
from .fixtures import fixture_datasets
from .nb import NBModel, predict_many, train_nb
from .tokenizer import DEFAULT_MAX_LEN, DEFAULT_VOCAB_SIZE, TextEncoder, Vocab, build_vocab

MODEL_KINDS = ("naive_bayes", "encoder")
OUTPUT_ENV = "TWEETBENCH_OUT"


class ExperimentError(RuntimeError):
    def __init__(self, stage: str, message: str):
        self.stage = stage
        super().__init__(f"[{stage}] {message}")


class ComparisonError(ValueError):
    pass


class StudyAssertionError(AssertionError):
    pass


@dataclass(frozen=True)
class TokenizerSettings:
    vocab_size: int = DEFAULT_VOCAB_SIZE
    min_freq: int = 2
    max_len: int = DEFAULT_MAX_LEN
    use_topic: bool = True
    lowercase: bool = True


@dataclass(frozen=True)
class EncoderSettings:
    """Encoder shape; vocab size, class count and max_len come from the data."""

    num_layers: int = 2
    hidden_size: int = 64
    num_heads: int = 4
    ffn_size: int = 128
    dropout_rate: float = 0.1

    def config(self, vocab_size: int, num_classes: int, max_len: int, seed: int) -> EncoderConfig:
        return EncoderConfig(vocab_size=vocab_size, num_classes=num_classes, max_len=max_len,
                             seed=seed, **asdict(self))


def _section(cls, d, what):
    known = {f.name for f in fields(cls)}
    unknown = set(d) - known
    if unknown:
        raise ValueError(f"unknown keys in {what}: {sorted(unknown)}")
    return cls(**d)


@dataclass(frozen=True)
class ExperimentConfig:
    name: str
    subtask: str
    model_kind: str
    train_path: str
    test_path: str
    seed: int
    dev_path: str | None = None
    output_dir: str | None = None
    alpha: float = 1.0
    dev_fraction: float = 0.2
    tokenizer: TokenizerSettings = TokenizerSettings()
    encoder: EncoderSettings = EncoderSettings()
    train: TrainConfig = TrainConfig()
    base_dir: str = field(default=".", compare=False)

    def __post_init__(self):
        if self.subtask not in ("A", "B", "C"):
            raise ValueError(f"subtask must be A, B or C, got {self.subtask!r}")
        if self.model_kind not in MODEL_KINDS:
            raise ValueError(f"model_kind must be one of {MODEL_KINDS}, got {self.model_kind!r}")
        if not isinstance(self.seed, int):
            raise ValueError("seed is mandatory and must be an integer")

    def resolve(self, p: str | None) -> Path | None:
        if p is None:
            return None
        path = Path(p)
        return path if path.is_absolute() else Path(self.base_dir) / path

    @property
    def train_config(self) -> TrainConfig:
        return TrainConfig(**{**asdict(self.train), "seed": self.seed})

    def to_dict(self) -> dict:
        data = {"train": self.train_path, "test": self.test_path}
        if self.dev_path is not None:
            data["dev"] = self.dev_path
        out = {
            "name": self.name,
            "subtask": self.subtask,
            "model_kind": self.model_kind,
            "seed": self.seed,
            "data": data,
            "alpha": self.alpha,
            "dev_fraction": self.dev_fraction,
            "tokenizer": asdict(self.tokenizer),
            "encoder": asdict(self.encoder),
            "train": {k: v for k, v in asdict(self.train).items() if k != "seed"},
        }
        if self.output_dir is not None:
            out["output_dir"] = self.output_dir
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"

    @classmethod
    def from_dict(cls, d: dict, base_dir=".") -> "ExperimentConfig":
        d = dict(d)
        allowed = {"name", "subtask", "model_kind", "seed", "data", "output_dir", "alpha",
                   "dev_fraction", "tokenizer", "encoder", "train"}
        unknown = set(d) - allowed
        if unknown:
            raise ValueError(f"unknown experiment config keys: {sorted(unknown)}")
        if "seed" not in d:
            raise ValueError("experiment config needs a 'seed'")
        data = d.get("data", {})
        if "train" not in data or "test" not in data:
            raise ValueError("config 'data' needs 'train' and 'test' paths")
        if set(data) - {"train", "dev", "test"}:
            raise ValueError(f"unknown data keys: {sorted(set(data) - {'train', 'dev', 'test'})}")
        train = dict(d.get("train", {}))
        train.pop("seed", None)
        return cls(
            name=d.get("name", f"{d.get('model_kind')}-{d.get('subtask')}"),
            subtask=str(d.get("subtask", "")).upper(),
            model_kind=d.get("model_kind", ""),
            train_path=data["train"],
            test_path=data["test"],
            dev_path=data.get("dev"),
            seed=d["seed"],
            output_dir=d.get("output_dir"),
            alpha=float(d.get("alpha", 1.0)),
            dev_fraction=float(d.get("dev_fraction", 0.2)),
            tokenizer=_section(TokenizerSettings, d.get("tokenizer", {}), "tokenizer"),
            encoder=_section(EncoderSettings, d.get("encoder", {}), "encoder"),
            train=TrainConfig.from_dict(train),
            base_dir=str(base_dir),
        )

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        path = Path(path)
        return cls.from_dict(json.loads(path.read_text(encoding="utf-8")), path.parent)

    def save(self, path) -> None:
        Path(path).write_text(self.to_json(), encoding="utf-8")


@dataclass
class RunResult:
    config: ExperimentConfig
    config_bytes: bytes
    metrics: M.MetricsReport
    wall_time: float
    history: list[EpochRecord]
    run_dir: Path | None
    artifacts: dict
    test_set: str = ""

    @property
    def name(self) -> str:
        return self.config.name

    @property
    def subtask(self) -> str:
        return self.config.subtask

    def summary(self) -> M.SummaryRow:
        return self.metrics.summary()


# ---------------------------------------------------------------- fitting


@dataclass
class Fitted:
    kind: str
    scale: SentimentScale
    nb: NBModel | None = None
    encoder: object = None
    text_encoder: TextEncoder | None = None
    history: list = field(default_factory=list)

    def predict(self, ds: Dataset) -> list:
        if self.kind == "naive_bayes":
            return predict_many(self.nb, ds.texts)
        seqs = self.text_encoder.encode_dataset(ds)
        idx = predict_logits(self.encoder, seqs).argmax(axis=1)
        return [self.scale.labels[i] for i in idx]


def fit(kind: str, train: Dataset, dev: Dataset | None, seed: int, alpha: float = 1.0,
        tokenizer: TokenizerSettings = TokenizerSettings(),
        encoder: EncoderSettings = EncoderSettings(),
        tcfg: TrainConfig | None = None, dev_fraction: float = 0.2,
        log_path=None) -> Fitted:
    if kind == "naive_bayes":
        return Fitted(kind, train.scale, nb=train_nb(train, alpha))
    if dev is None:
        train, dev = stratified_split(train, 1.0 - dev_fraction, seed)
    corpus = train.texts
    if tokenizer.use_topic:
        corpus += [ex.topic for ex in train.examples if ex.topic]
    vocab = build_vocab(corpus, tokenizer.vocab_size, tokenizer.min_freq)
    text_encoder = TextEncoder(vocab, tokenizer.max_len, tokenizer.use_topic, tokenizer.lowercase)
    ecfg = encoder.config(len(vocab), len(train.scale), tokenizer.max_len, seed)
    tcfg = TrainConfig(**{**asdict(tcfg or TrainConfig()), "seed": seed})
    model, history = train_classifier(init_model(ecfg), train, dev, tcfg, text_encoder,
                                      log_path=log_path)
    return Fitted(kind, train.scale, encoder=model, text_encoder=text_encoder, history=history)


# ---------------------------------------------------------------- persistence


def _sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_predictions(path, ids, gold, pred) -> None:
    fmt = SentimentScale.format
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for i, g, p in zip(ids, gold, pred):
            fh.write(f"{i}\t{fmt(g)}\t{fmt(p)}\n")


def read_predictions(path, scale: SentimentScale):
    ids, gold, pred = [], [], []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            i, g, p = line.rstrip("\n").split("\t")
            ids.append(i)
            gold.append(scale.parse(g))
            pred.append(scale.parse(p))
    return ids, gold, pred


def _report_payload(cfg: ExperimentConfig, report: M.MetricsReport, test_set: str) -> dict:
    return {
        "name": cfg.name,
        "subtask": cfg.subtask,
        "model_kind": cfg.model_kind,
        "seed": cfg.seed,
        "split": "test",
        "test_path": cfg.test_path,
        "test_set": test_set,
        "metrics": report.to_json(),
    }


def _dump(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def _new_run_dir(out: Path, seed: int) -> Path:
    stamp = time.strftime("%Y%m%dT%H%M%S")
    candidate = out / f"{stamp}-{seed}"
    k = 1
    while candidate.exists():
        candidate = out / f"{stamp}-{seed}.{k}"
        k += 1
    return candidate


def run_experiment(cfg: ExperimentConfig, config_bytes: bytes | None = None) -> RunResult:
    """Load, train, predict the test split, score, and persist one run.

    Any failure raises ExperimentError tagged with the stage; the partially
    written run directory is removed.
    """
    config_bytes = config_bytes if config_bytes is not None else cfg.to_json().encode("utf-8")
    out = Path(cfg.output_dir or os.environ.get(OUTPUT_ENV, "runs"))
    if not out.is_absolute() and cfg.output_dir is not None:
        out = (Path(cfg.base_dir) / out).resolve()
    t0 = time.perf_counter()

    stage = "load"
    try:
        paths = {k: cfg.resolve(p) for k, p in
                 (("train", cfg.train_path), ("dev", cfg.dev_path), ("test", cfg.test_path))}
        for k, p in paths.items():
            if p is not None and not p.is_file():
                raise FileNotFoundError(f"{k} data file not found: {p}")
        train = load_dataset(paths["train"], cfg.subtask, cfg.tokenizer.lowercase)
        dev = (load_dataset(paths["dev"], cfg.subtask, cfg.tokenizer.lowercase)
               if paths["dev"] else None)
        test = load_dataset(paths["test"], cfg.subtask, cfg.tokenizer.lowercase)
        test_set = _sha256(paths["test"])
    except Exception as exc:
        raise ExperimentError(stage, f"{type(exc).__name__}: {exc}") from exc

    out.mkdir(parents=True, exist_ok=True)
    tmp = out / f".partial-{os.getpid()}-{time.monotonic_ns()}"
    tmp.mkdir()
    try:
        stage = "train"
        log_path = tmp / "history.jsonl" if cfg.model_kind == "encoder" else None
        fitted = fit(cfg.model_kind, train, dev, cfg.seed, cfg.alpha, cfg.tokenizer,
                     cfg.encoder, cfg.train_config, cfg.dev_fraction, log_path)

        stage = "predict"
        pred = fitted.predict(test)
        gold = test.labels

        stage = "evaluate"
        report = M.evaluate(gold, pred, test.scale)

        stage = "persist"
        artifacts = {"config": "config.json", "predictions": "predictions.tsv",
                     "report": "report.json"}
        (tmp / "config.json").write_bytes(config_bytes)
        write_predictions(tmp / "predictions.tsv", [ex.id for ex in test.examples], gold, pred)
        (tmp / "report.json").write_text(_dump(_report_payload(cfg, report, test_set)),
                                         encoding="utf-8")
        if fitted.kind == "naive_bayes":
            fitted.nb.save(tmp / "model.json")
            artifacts["model"] = "model.json"
        else:
            save_weights(fitted.encoder.astype(np.float64), tmp / "weights.bin")
            fitted.text_encoder.vocab.save(tmp / "vocab.txt")
            artifacts.update(weights="weights.bin", vocab="vocab.txt", history="history.jsonl")

        stage = "evaluate"
        _, g2, p2 = read_predictions(tmp / "predictions.tsv", test.scale)
        if M.evaluate(g2, p2, test.scale) != report:
            raise RuntimeError("metrics recomputed from predictions.tsv disagree with the report")

        stage = "persist"
        wall = time.perf_counter() - t0
        (tmp / "run.json").write_text(_dump({"wall_time": wall, "artifacts": artifacts,
                                            "config_dir": str(Path(cfg.base_dir).resolve())}),
                                      encoding="utf-8")
        run_dir = _new_run_dir(out, cfg.seed)
        tmp.rename(run_dir)
        (out / "latest").write_text(run_dir.name + "\n", encoding="utf-8")
    except Exception as exc:
        shutil.rmtree(tmp, ignore_errors=True)
        raise ExperimentError(stage, f"{type(exc).__name__}: {exc}") from exc

    return RunResult(cfg, config_bytes, report, wall, fitted.history, run_dir, artifacts,
                     test_set)


def load_run(run_dir) -> RunResult:
    run_dir = Path(run_dir)
    report_path = run_dir / "report.json"
    if not report_path.is_file():
        raise FileNotFoundError(f"{run_dir}: no report.json")
    payload = json.loads(report_path.read_text(encoding="utf-8"))
    config_bytes = (run_dir / "config.json").read_bytes()
    meta = json.loads((run_dir / "run.json").read_text(encoding="utf-8"))
    cfg = ExperimentConfig.from_dict(json.loads(config_bytes), meta.get("config_dir", run_dir))
    scale = scale_for(payload["subtask"])
    history = read_history(run_dir / "history.jsonl") if (run_dir / "history.jsonl").exists() else []
    return RunResult(cfg, config_bytes, M.MetricsReport.from_json(payload["metrics"], scale),
                     meta["wall_time"], history, run_dir, meta["artifacts"], payload["test_set"])


def load_fitted(run_dir) -> Fitted:
    """Rebuild the trained model of a persisted run for re-evaluation."""
    run = load_run(run_dir)
    cfg = run.config
    scale = scale_for(cfg.subtask)
    if cfg.model_kind == "naive_bayes":
        return Fitted(cfg.model_kind, scale, nb=NBModel.load(Path(run_dir) / "model.json"))
    vocab = Vocab.load(Path(run_dir) / "vocab.txt")
    te = TextEncoder(vocab, cfg.tokenizer.max_len, cfg.tokenizer.use_topic, cfg.tokenizer.lowercase)
    model = load_weights(Path(run_dir) / "weights.bin")
    return Fitted(cfg.model_kind, scale, encoder=model, text_encoder=te, history=run.history)


# ---------------------------------------------------------------- comparison


@dataclass(frozen=True)
class RunSummary:
    name: str
    subtask: str
    test_set: str
    row: M.SummaryRow

    def summary(self) -> M.SummaryRow:
        return self.row


def _as_summary(r) -> RunSummary:
    if isinstance(r, RunSummary):
        return r
    return RunSummary(r.name, r.subtask, r.test_set, r.summary())


@dataclass
class Comparison:
    base: str
    rows: dict
    deltas: dict

    def table(self) -> str:
        lines = [M.render_report(self.rows).rstrip("\n")]
        for name, d in self.deltas.items():
            vals = " | ".join(("+" if v >= 0 else "") + M.fmt4(v) for v in d)
            lines.append(f"delta {name} - {self.base}: {vals}")
        return "\n".join(lines) + "\n"

    def to_json(self) -> dict:
        return {"base": self.base,
                "rows": {k: v._asdict() for k, v in self.rows.items()},
                "deltas": {k: v._asdict() for k, v in self.deltas.items()}}


def compare_runs(results: Sequence) -> Comparison:
    """Table of runs plus per-metric deltas of every run against the first one."""
    runs = [_as_summary(r) for r in results]
    if len(runs) < 2:
        raise ComparisonError("need at least two runs to compare")
    first = runs[0]
    for r in runs[1:]:
        if (r.subtask, r.test_set) != (first.subtask, first.test_set):
            raise ComparisonError(f"{r.name} was evaluated on subtask {r.subtask} / test set "
                                  f"{r.test_set[:12]}, {first.name} on {first.subtask} / "
                                  f"{first.test_set[:12]}")
    rows, names = {}, []
    for r in runs:
        name = r.name
        k = 2
        while name in rows:
            name = f"{r.name}#{k}"
            k += 1
        rows[name] = r.row
        names.append(name)
    deltas = {n: M.SummaryRow(*(a - b for a, b in zip(rows[n], first.row)))
              for n in names[1:]}
    return Comparison(names[0], rows, deltas)


def reference_rows() -> list[dict]:
    """Published SemEval-2017 reference numbers (BERT-base vs Naive Bayes), never asserted."""
    text = resources.files("tweetbench").joinpath("data/table2.json").read_text(encoding="utf-8")
    return json.loads(text)["rows"]


def reference_summaries() -> list[RunSummary]:
    return [RunSummary(r["name"], r["subtask"], f"reference-{r['subtask']}",
                       M.SummaryRow(r["accuracy"], r["precision"], r["recall"], r["f1"]))
            for r in reference_rows()]


def replay_reference() -> dict[str, Comparison]:
    """Per-subtask comparison of the reference rows, baseline first."""
    out = {}
    rows = reference_summaries()
    for sub in ("A", "B", "C"):
        group = sorted((r for r in rows if r.subtask == sub),
                       key=lambda r: not r.name.startswith("Baseline"))
        out[sub] = compare_runs(group)
    return out


# ---------------------------------------------------------------- study


@dataclass
class StudyReport:
    seed: int
    n: int
    accuracies: dict  # model_kind -> {"binary": acc, "five_class": acc}

    @property
    def holds(self) -> dict:
        return {k: v["binary"] >= v["five_class"] for k, v in self.accuracies.items()}

    def to_json(self) -> dict:
        return {"seed": self.seed, "n": self.n, "accuracies": self.accuracies,
                "binary_at_least_five_class": self.holds}

    def render(self) -> str:
        lines = ["Model       | Binary (B) | Five-point (C) | binary >= five"]
        for k, v in self.accuracies.items():
            lines.append(f"{k:<11} | {M.fmt4(v['binary']):<10} | {M.fmt4(v['five_class']):<14} | "
                         f"{'yes' if self.holds[k] else 'NO'}")
        return "\n".join(lines) + "\n"


def binary_vs_multiclass_study(seed: int = 0, model_kinds: Sequence[str] = MODEL_KINDS,
                               n: int = 500, fixture_seed: int = 17,
                               constant_label: int | None = None,
                               encoder: EncoderSettings = EncoderSettings(),
                               tcfg: TrainConfig | None = None,
                               strict: bool = True) -> StudyReport:
    """Train each model kind on the same synthetic draw labelled two ways and compare.

    The two-point labels coarsen the five-point ones, so the five-point task
    refines the binary partition. With ``strict`` a violated ordering raises
    StudyAssertionError.
    """
    accuracies = {}
    for kind in model_kinds:
        accs = {}
        for key, sub in (("binary", "B"), ("five_class", "C")):
            d = fixture_datasets(n, fixture_seed, sub, constant_label=constant_label)
            fitted = fit(kind, d["train"], d["dev"], seed, encoder=encoder, tcfg=tcfg)
            pred = fitted.predict(d["test"])
            accs[key] = M.evaluate(d["test"].labels, pred, d["test"].scale).accuracy
        accuracies[kind] = accs
    report = StudyReport(seed, n, accuracies)
    if strict and not all(report.holds.values()):
        raise StudyAssertionError(f"binary accuracy below five-class accuracy: {accuracies}")
    return report

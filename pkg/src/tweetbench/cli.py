"""``tweetbench`` command line.

Exit codes: 0 success, 1 property/assertion failure, 2 usage or input error,
3 runtime training failure. Results go to stdout, diagnostics to stderr.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import metrics as M
from .corpus import CorpusError, class_distribution, concat, load_dataset, write_dataset
from .harness import (ComparisonError, ExperimentConfig, ExperimentError, StudyAssertionError,
                      binary_vs_multiclass_study, compare_runs, load_fitted, load_run,
                      reference_summaries, replay_reference, run_experiment)
from .selftest import run_selftest
from .tokenizer import CapacityError, DEFAULT_VOCAB_SIZE, build_vocab

EXIT_OK, EXIT_FAIL, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2, 3


class UsageError(Exception):
    pass


def _err(msg: str) -> None:
    print(f"tweetbench: {msg}", file=sys.stderr)


def _apply_config_defaults(args, parser) -> None:
    """Fill unset flags from ``--config`` (a JSON object keyed by flag name)."""
    if args.command == "train" or not args.config:
        return
    try:
        values = json.loads(Path(args.config).read_text(encoding="utf-8"))
    except (OSError, ValueError) as exc:
        raise UsageError(f"cannot read --config {args.config}: {exc}") from exc
    if not isinstance(values, dict):
        raise UsageError("--config must hold a JSON object")
    for key, value in values.items():
        dest = key.replace("-", "_")
        if dest == "in":
            dest = "in_path"
        if not hasattr(args, dest) or dest in ("command", "config"):
            raise UsageError(f"--config key {key!r} is not an option of '{args.command}'")
        if getattr(args, dest) in (None, False, []):
            setattr(args, dest, value)


def cmd_prepare(args) -> int:
    if not args.in_path or not args.subtask or not args.out:
        raise UsageError("prepare needs --in, --subtask and --out")
    ds = load_dataset(args.in_path, args.subtask)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    stem = Path(args.in_path).name.rsplit(".", 1)[0]
    write_dataset(ds, out / f"{stem}.norm.tsv", normalized=True)
    summary = {
        "source": str(args.in_path),
        "subtask": ds.subtask,
        "total": len(ds),
        "skipped_not_available": ds.skipped,
        "distribution": {str(k): v for k, v in class_distribution(ds).items()},
    }
    text = json.dumps(summary, indent=2) + "\n"
    (out / f"{stem}.distribution.json").write_text(text, encoding="utf-8")
    sys.stdout.write(text)
    return EXIT_OK


def cmd_build_vocab(args) -> int:
    if not args.in_path or not args.subtask or not args.out:
        raise UsageError("build-vocab needs --in, --subtask and --out")
    ds = concat([load_dataset(p, args.subtask) for p in args.in_path])
    vocab = build_vocab(ds.texts, args.max_size or DEFAULT_VOCAB_SIZE, args.min_freq or 2)
    vocab.save(args.out)
    print(json.dumps({"vocab": str(args.out), "size": len(vocab)}))
    return EXIT_OK


def _load_experiment(path, seed, out):
    path = Path(path)
    raw = path.read_bytes()
    cfg = ExperimentConfig.from_dict(json.loads(raw), path.parent)
    if seed is not None and seed != cfg.seed or out is not None:
        d = cfg.to_dict()
        if seed is not None:
            d["seed"] = seed
        if out is not None:
            d["output_dir"] = str(Path(out).resolve())
        cfg = ExperimentConfig.from_dict(d, path.parent)
        raw = cfg.to_json().encode("utf-8")
    return cfg, raw


def cmd_train(args) -> int:
    if not args.config:
        raise UsageError("train needs --config")
    try:
        cfg, raw = _load_experiment(args.config, args.seed, args.out)
    except (OSError, ValueError) as exc:
        raise UsageError(f"bad experiment config {args.config}: {exc}") from exc
    try:
        result = run_experiment(cfg, raw)
    except ExperimentError as exc:
        _err(str(exc))
        return EXIT_USAGE if exc.stage == "load" else EXIT_RUNTIME
    print(result.run_dir)
    return EXIT_OK


def cmd_evaluate(args) -> int:
    if not args.run:
        raise UsageError("evaluate needs --run")
    run = load_run(args.run)
    fitted = load_fitted(args.run)
    test_path = args.test or run.config.resolve(run.config.test_path)
    ds = load_dataset(test_path, run.config.subtask, run.config.tokenizer.lowercase)
    report = M.evaluate(ds.labels, fitted.predict(ds), ds.scale)
    payload = {"run": str(args.run), "test_path": str(test_path), "split": "test",
               "metrics": report.to_json()}
    print(json.dumps(payload, indent=2, sort_keys=True))
    return EXIT_OK


def cmd_report(args) -> int:
    runs = args.runs or []
    if not runs and not args.reference:
        raise UsageError("report needs --runs DIR [DIR ...] or --reference table2")
    out = []
    data = {}
    if args.reference:
        if args.reference != "table2":
            raise UsageError(f"unknown reference {args.reference!r}; only 'table2' exists")
        rows = {r.name: r.row for r in reference_summaries()}
        out.append(M.render_report(rows))
        comps = replay_reference()
        for sub, comp in comps.items():
            out.append(f"subtask {sub}:\n" + comp.table())
        data["reference"] = {sub: c.to_json() for sub, c in comps.items()}
    if runs:
        results = []
        for d in runs:
            try:
                results.append(load_run(d))
            except FileNotFoundError as exc:
                raise UsageError(str(exc)) from exc
        if len(results) == 1:
            r = results[0]
            out.append(M.render_report({r.name: r.metrics}))
            data["runs"] = {r.name: r.summary()._asdict()}
        else:
            try:
                comp = compare_runs(results)
            except ComparisonError as exc:
                raise UsageError(str(exc)) from exc
            out.append(comp.table())
            data["runs"] = comp.to_json()
    sys.stdout.write(json.dumps(data, indent=2) + "\n" if args.json else "\n".join(out))
    return EXIT_OK


def cmd_study(args) -> int:
    kinds = args.models or ["naive_bayes", "encoder"]
    report = binary_vs_multiclass_study(seed=args.seed or 0, model_kinds=kinds,
                                        n=args.n or 500, strict=False)
    sys.stdout.write(json.dumps(report.to_json(), indent=2) + "\n" if args.json
                     else report.render())
    return EXIT_OK if all(report.holds.values()) else EXIT_FAIL


def cmd_selftest(args) -> int:
    def show(res):
        print(f"{'PASS' if res.passed else 'FAIL'} {res.name}: {res.detail} "
              f"({res.seconds:.1f}s)", flush=True)

    results = run_selftest(seed=args.seed or 0, quick=args.quick,
                           mutate_grad=args.mutate_grad, report=show)
    failed = [r.name for r in results if not r.passed]
    if failed:
        _err("failed properties: " + ", ".join(failed))
        return EXIT_FAIL
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tweetbench", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def command(name, help):
        p = sub.add_parser(name, help=help)
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--config", default=None, help="JSON file with option defaults "
                       "(for 'train': the experiment config)")
        return p

    p = command("prepare", "normalize a SemEval TSV file and summarize its labels")
    p.add_argument("--in", dest="in_path")
    p.add_argument("--subtask", choices=["A", "B", "C"])
    p.add_argument("--out", help="output directory")
    p.set_defaults(func=cmd_prepare)

    p = command("build-vocab", "train a subword vocabulary from TSV files")
    p.add_argument("--in", dest="in_path", nargs="+")
    p.add_argument("--subtask", choices=["A", "B", "C"])
    p.add_argument("--max-size", type=int)
    p.add_argument("--min-freq", type=int)
    p.add_argument("--out", help="vocab file (one token per line)")
    p.set_defaults(func=cmd_build_vocab)

    p = command("train", "run one experiment config end to end")
    p.add_argument("--out", default=None, help="override the config's output directory")
    p.set_defaults(func=cmd_train)

    p = command("evaluate", "re-score a finished run, optionally on another test file")
    p.add_argument("--run")
    p.add_argument("--test")
    p.set_defaults(func=cmd_evaluate)

    p = command("report", "print a results table for runs and/or the reference rows")
    p.add_argument("--runs", nargs="*")
    p.add_argument("--reference", choices=["table2"])
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_report)

    p = command("study", "binary vs five-point accuracy on matched synthetic fixtures")
    p.add_argument("--models", nargs="+", choices=["naive_bayes", "encoder"])
    p.add_argument("--n", type=int)
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_study)

    p = command("selftest", "run the built-in property checks")
    p.add_argument("--quick", action="store_true", help="skip training-based checks")
    p.add_argument("--mutate-grad", default=None, help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_selftest)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        _apply_config_defaults(args, parser)
        return args.func(args)
    except UsageError as exc:
        _err(str(exc))
        return EXIT_USAGE
    except CorpusError as exc:
        _err(str(exc))
        return EXIT_USAGE
    except (OSError, CapacityError, ValueError) as exc:
        _err(f"{type(exc).__name__}: {exc}")
        return EXIT_USAGE
    except StudyAssertionError as exc:
        _err(str(exc))
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())

"""
Config-driven runs and a comparison table
=========================================

Run the baseline and the encoder from their JSON configs, reload both runs
from disk and compare them. The last block replays the stored reference rows.
"""

import tempfile
from pathlib import Path

from tweetbench.harness import (ExperimentConfig, compare_runs, load_run, replay_reference,
                                run_experiment)

CONFIGS = Path(__file__).resolve().parents[1] / "configs"
out = Path(tempfile.mkdtemp(prefix="tweetbench-demo-"))

runs = []
for name in ("b200_naive_bayes", "b200_encoder"):
    cfg = ExperimentConfig.load(CONFIGS / f"{name}.json")
    d = cfg.to_dict()
    d["output_dir"] = str(out)
    result = run_experiment(ExperimentConfig.from_dict(d, cfg.base_dir))
    print(result.run_dir.name, sorted(result.artifacts))
    runs.append(load_run(result.run_dir))

print(compare_runs(runs).table())

# reference rows only, nothing here is recomputed
for subtask, comp in replay_reference().items():
    print("subtask", subtask)
    print(comp.table())

"""
The command-line workflow
=========================

The same steps, driven through ``vitalgan`` subcommands. Each call below
is equivalent to running ``vitalgan <args>`` in a shell.
"""

import json
import tempfile
from pathlib import Path

from vitalgan import cli, data, toy

work = Path(tempfile.mkdtemp())

# %%
# A CSV of real series and a run configuration. Paths are resolved
# relative to the configuration file.

with open(work / "real.csv", "w", newline="") as fh:
    data.write_csv(toy.sine_cycles(300, minority_fraction=0.2, rng=0), fh)

config = {
    "channels": ["temperature", "respiratory_rate"],
    "architecture": {"c": 4, "m": 8, "h": 16},
    "training": {"generator_steps": 100, "batch_size": 32, "learning_rate": 5e-4, "seed": 0},
    "hpo": {"hidden_size": [8], "lstm_layers": [1], "epochs": [3], "trials": 2},
    "data": {"test_fraction": 0.3, "split_seed": 0},
    "paths": {"input": "real.csv", "checkpoint": "gan.ckpt", "log": "train.log"},
}
(work / "run.json").write_text(json.dumps(config, indent=2))

# %%
# filter, train, synthesize, evaluate

cli.main(["filter", str(work / "real.csv"), str(work / "filtered.csv")])
cli.main(["train", str(work / "run.json")])
print((work / "train.log").read_text().splitlines()[-1])
cli.main(["synthesize", str(work / "gan.ckpt"), "210", str(work / "proxy.csv"), "--clamp"])
cli.main(["evaluate", str(work / "real.csv"), str(work / "proxy.csv"), str(work / "run.json"), str(work / "report.json")])
print((work / "report.json").read_text())

# %%
# Exit codes: 0 success, 1 usage or configuration error, 2 data error,
# 3 numerical failure.

(work / "bad.json").write_text(json.dumps({**config, "learning_rate": 1.0}))
print("unknown key ->", cli.main(["train", str(work / "bad.json")]))
print("missing file ->", cli.main(["filter", str(work / "nope.csv"), str(work / "out.csv")]))

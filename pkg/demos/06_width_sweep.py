"""A width sweep through the experiment harness.

The same run is available as ``frcap sweep --set sweep.widths=[8,16,32,64]``.
"""

import csv
import tempfile
from pathlib import Path

from frcap.config import finalize
from frcap.experiments import run_experiment

with tempfile.TemporaryDirectory() as out:
    cfg = finalize({"output_dir": out, "train": {"loss": "hinge", "epochs": 100},
                    "sweep": {"kind": "width", "widths": [8, 16, 32, 64]}},
                   experiment="sweep")
    run_experiment(cfg)
    rows = list(csv.DictReader((Path(out) / "sweep.csv").open()))

cols = ("fr_empirical_natural", "spectral", "path_2", "test_acc")
print(f"{'width':>6}" + "".join(f"{c:>22}" for c in cols))
for r in rows:
    print(f"{r['width']:>6}" + "".join(f"{float(r[c]):>22.4f}" for c in cols))

"""
Scoring detection files from another detector
=============================================

The ``eval`` command reads KITTI-format result files, one folder per budget,
and writes AP tables plus recall curves. Here the "detector" is the ground
truth with a little noise, written to disk the way an external model would.
"""

import subprocess
import sys
import tempfile
from dataclasses import replace
from pathlib import Path

import numpy as np

from lidar_ora.kitti_io import KittiTree, format_label_file, read_labels
from lidar_ora.report import read_csv_table
from lidar_ora.synth import SynthConfig, write_corpus

work = Path(tempfile.mkdtemp())
data, dets, out = work / "data", work / "dets", work / "eval"
ids = write_corpus(data, SynthConfig(num_frames=30, seed=4))

# Clean results find everything; the attacked results lose 40% of objects.
rng = np.random.default_rng(0)
for budget, keep in ((0, 1.0), (200, 0.6)):
    folder = dets / f"budget_{budget}" / "detections"
    folder.mkdir(parents=True)
    for fid in ids:
        rows = [
            replace(lab, score=float(rng.uniform(0.3, 1.0)))
            for lab in read_labels(KittiTree(data).label(fid))
            if rng.random() < keep
        ]
        (folder / f"{fid}.txt").write_text(format_label_file(rows))

# Run the installed command line tool. Pass ``--sampling kitti41`` to use the
# official evaluator's 41-threshold sampling instead of the exact curve.
cmd = [sys.executable, "-m", "lidar_ora.cli", "eval", "--gt-root", str(data), "--det-root", str(dets), "--output-root", str(out)]
subprocess.run(cmd, check=True)

for row in read_csv_table(out / "ap_table.csv"):
    if row["difficulty"] == "moderate":
        ap = f"{float(row['ap']):.2f}" if row["ap"] else "-"
        print(f"{row['class']:>10} budget {row['budget']:>3}: AP {ap}")
print("tables written to", out)

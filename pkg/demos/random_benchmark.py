"""End-to-end benchmark run on random filament phantoms, through the CLI.

Writes a small dataset of phantoms with overlapping instances, splits it into
completely and partly labeled images with a manifest, evaluates three
"training runs" of predictions and prints the mean/std summary.

Run with ``python demos/random_benchmark.py [workdir]``.
"""

import sys
import tempfile
from pathlib import Path

import numpy as np

from filament_eval import io as fio
from filament_eval.cli import main as cli
from filament_eval.synth import perturb_prediction


def make_dataset(root: Path, seeds):
    cli(["synth", "--out", str(root), "--random", *map(str, seeds), "--n-instances", "4", "--overlap-prob", "0.4"])
    names = sorted(p.stem for p in (root / "gt").glob("*.fiv"))
    with open(root / "manifest.csv", "w") as fh:
        fh.write("name,split,labeling\n")
        for k, name in enumerate(names):
            fh.write(f"{name},test,{'partly' if k % 3 == 2 else 'completely'}\n")
    return names


def make_runs(root: Path, names, n_runs=3):
    """Independent prediction sets standing in for repeated training runs."""
    runs = []
    for r in range(n_runs):
        out = root / f"run{r}"
        out.mkdir(exist_ok=True)
        rng = np.random.default_rng(100 + r)
        for name in names:
            _, gt = fio.read_fiv(root / "gt" / f"{name}.fiv")
            fio.write_fiv(out / f"{name}.fiv", perturb_prediction(rng, gt, 6))
        runs.append(str(out))
    return runs


def main(workdir=None):
    root = Path(workdir or tempfile.mkdtemp(prefix="filament_eval_demo_"))
    names = make_dataset(root, range(12))
    runs = make_runs(root, names)
    print(f"dataset: {len(names)} images in {root}")

    # single run, markdown to stdout
    cli(["evaluate", "--gt", str(root / "gt"), "--pred", runs[0], "--manifest", str(root / "manifest.csv"),
         "--split", "test", "--format", "md", "--threads", "2"])

    # three runs -> mean and sample std per metric
    out = root / "summary.csv"
    cli(["evaluate", "--gt", str(root / "gt"), "--pred", *runs, "--manifest", str(root / "manifest.csv"),
         "--split", "test", "--format", "csv", "--out", str(out)])
    header, *rows = out.read_text().splitlines()
    keys = header.split(",")
    print("\nthree-run summary (mean +/- std):")
    for row in rows:
        d = dict(zip(keys, row.split(",")))
        print(f"  {d['split']:<11} S {d['S_mean']} +/- {d['S_std']}   avF1 {d['avF1_mean']}   C {d['C_mean']}"
              f"   FS {d['FS_mean']}   FM {d['FM_mean']}")


if __name__ == "__main__":
    main(sys.argv[1] if len(sys.argv) > 1 else None)

"""Regenerate the committed regression fixtures.

Run from the repository root: ``python3 tests/fixtures/make_fixtures.py``.
Only rerun when a deliberate change alters training numerics.
"""

import shutil
import subprocess
import sys
from pathlib import Path

from tannet.data import generate
from tannet.model import ArchConfig, build
from tannet.training import step_schedule, train, write_log

HERE = Path(__file__).resolve().parent
REF = HERE / "reference"


def loss_curve():
    # seed-7 desk run, first 5 epochs of a 20-epoch schedule
    model = build(ArchConfig(), seed=7)
    history = train(model, generate(7, 200), 5, seed=7, schedule=step_schedule(20), batch_size=8, eval_every=0)
    write_log(HERE / "seed7_loss.csv", history, ["seed=7 videos=200 epochs=5 of 20 batch=8"])


def reference_run():
    if REF.exists():
        shutil.rmtree(REF)
    tan = [sys.executable, "-m", "tannet.cli"]
    subprocess.run(tan + ["train", "--seed", "7", "--videos", "40", "--eval-videos", "20", "--epochs", "2", "--out", str(REF)], check=True)
    (REF / "optim.tanckpt").unlink()
    subprocess.run(
        tan + ["eval", "--seed", "7", "--checkpoint", str(REF / "model.tanckpt"), "--protocol", "sampled:25", "--csv", str(REF / "metric_report.csv")],
        check=True,
    )


if __name__ == "__main__":
    loss_curve()
    reference_run()

"""Drive the whole pipeline through the command-line interface.

harmonize -> features -> stratify -> pretrain -> finetune -> predict ->
evaluate, all on generated phantoms in a temporary directory. Every step
is seeded, so rerunning this script reproduces the same artifacts.
"""

import shutil
import tempfile
from pathlib import Path

from gliomaforge.cli import main
from gliomaforge.nifti import save_case
from gliomaforge.synthetic import make_case, make_dataset

root = Path(tempfile.mkdtemp(prefix="gliomaforge-demo-"))
raw, ref, harm = root / "raw", root / "ref", root / "harmonized"

for case in make_dataset(6, shape=(32, 32, 32), seed=40):
    save_case(raw, case)
save_case(ref, make_case("reference", shape=(32, 32, 32), seed=999))

cfg = root / "pipeline.cfg"
cfg.write_text(
    "seed = 7\n"
    "[train]\n"
    "lr = 1e-3\ncrop_size = 32\nbatch_size = 2\n"
    "[model]\n"
    "stage_channels = 8,16,32,64\nstage_heads = 1,2,4,8\n"
    "stage_depths = 1,1,1,1\ndecoder_channels = 8\nffn_expansion = 2\n"
)


def run(*argv):
    print(f"\n$ gliomaforge {' '.join(argv)}")
    rc = main(list(argv))
    assert rc == 0, f"exit code {rc}"


run("harmonize", "--ref-dir", str(ref), "--in", str(raw), "--out", str(harm))
run("features", "--in", str(harm), "--out", str(root / "features.csv"))
run("stratify", "--features", str(root / "features.csv"), "--k", "2",
    "--folds", "3", "--out", str(root / "folds.csv"), "--seed", "7")
run("pretrain", "--data", str(harm), "--out", str(root / "pretrained.ck"),
    "--config", str(cfg), "--epochs", "2")
run("finetune", "--data", str(harm), "--folds", str(root / "folds.csv"),
    "--val-fold", "0", "--ckpt", str(root / "pretrained.ck"),
    "--out", str(root / "finetuned.ck"), "--config", str(cfg), "--epochs", "2")

case_dir = root / "one-case"
case_dir.mkdir()
for f in raw.glob("synth-000-*"):
    shutil.copy(f, case_dir / f.name)
run("predict", "--ckpt", str(root / "finetuned.ck"), "--in", str(case_dir),
    "--out", str(root / "predictions" / "synth-000.nii"))
run("evaluate", "--pred", str(root / "predictions"), "--gt", str(case_dir),
    "--out", str(root / "metrics.csv"))

print(f"\nartifacts under {root}:")
for path in sorted(root.rglob("*")):
    if path.is_file():
        print(f"  {path.relative_to(root)}")
shutil.rmtree(root)

"""End-to-end demo on synthetic RRUFF-style spectra.

    python scripts/synthetic_demo.py OUT_DIR
"""

import sys
from pathlib import Path

from spectral_forge.cli import main
from spectral_forge.ingest import Kind
from spectral_forge.synthetic import SyntheticConfig, write_synthetic_corpus


def run(*argv):
    print("$ spectral-forge", " ".join(argv))
    rc = main(list(argv))
    if rc:
        sys.exit(rc)


def demo(out: Path):
    write_synthetic_corpus(out / "corpus", SyntheticConfig(n_classes=6, per_class=10, seed=0),
                           kinds=(Kind.RAW, Kind.PROCESSED))
    ds = str(out / "clean.bin")
    run("preprocess", "--in", str(out / "corpus"), "--kind", "processed", "--out", ds)
    run("baseline", "--dataset", ds, "--out", str(out / "baseline"))
    fast = ["--max-epochs", "5", "--dense-width", "64", "--max-folds", "1"]
    run("supervised", "--dataset", ds, "--model", "cnn", "--out", str(out / "cnn"), *fast)
    run("shift-robustness", "--dataset", ds, "--m", "2,64", "--shifts", "0,30", "--out", str(out / "shift"), *fast)
    for name in ("baseline", "cnn", "shift"):
        print((out / name / "report.txt").read_text())


if __name__ == "__main__":
    if len(sys.argv) != 2:
        sys.exit(__doc__)
    demo(Path(sys.argv[1]))

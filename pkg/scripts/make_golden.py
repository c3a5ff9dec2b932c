"""Regenerate tests/data/oracle_corr_golden.csv (rigid-sphere r=0.09 vs r=0.10).

Run once; the test suite compares later runs against it byte for byte.
"""
import sys
import tempfile
from pathlib import Path

from morphoacoustics.cli import main

FREQS = ["100", "250", "500", "1000", "2000", "4000", "8000", "12000", "16000"]
ROOT = Path(__file__).resolve().parents[1]


def oracle_corr_csv(workdir: Path) -> Path:
    a, b, out = workdir / "r090.txt", workdir / "r100.txt", workdir / "corr.csv"
    for radius, path in (("0.09", a), ("0.10", b)):
        rc = main(["oracle", "--radius", radius, "--n-directions", "200", "--freqs", *FREQS, "--out", str(path)])
        assert rc == 0
    assert main(["corr", str(a), str(b), "--out", str(out)]) == 0
    return out


if __name__ == "__main__":
    dest = ROOT / "tests" / "data" / "oracle_corr_golden.csv"
    with tempfile.TemporaryDirectory() as tmp:
        dest.write_bytes(oracle_corr_csv(Path(tmp)).read_bytes())
    print(dest.read_text(), file=sys.stderr)

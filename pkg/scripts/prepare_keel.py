"""Convert KEEL-format ``.dat`` files into the numeric CSVs under ``data/``.

The KEEL repository (also redistributed by the ``keel-ds`` wheel) ships the
UCI benchmark sets already cleaned of missing values:

    wisconsin.dat -> bcw.csv   (683 rows, 9 features)
    pima.dat      -> pid.csv   (768 rows, 8 features)
    bupa.dat      -> bld.csv   (345 rows, 6 features; last column is the selector)

Usage::

    python scripts/prepare_keel.py path/to/keel_dir data/
"""

import csv
import sys
from pathlib import Path

NAMES = {"wisconsin": "bcw", "pima": "pid", "bupa": "bld"}


def convert(src: Path, dst: Path) -> int:
    rows = []
    for line in src.read_text().splitlines():
        line = line.strip()
        if not line or line.startswith("@"):
            continue
        rows.append([cell.strip() for cell in line.split(",")])
    width = len(rows[0])
    with dst.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow([f"f{i + 1}" for i in range(width - 1)] + ["class"])
        writer.writerows(rows)
    return len(rows)


def main(argv):
    src_dir, dst_dir = Path(argv[1]), Path(argv[2])
    dst_dir.mkdir(parents=True, exist_ok=True)
    for keel, short in NAMES.items():
        n = convert(src_dir / f"{keel}.dat", dst_dir / f"{short}.csv")
        print(f"{short}: {n} rows")


if __name__ == "__main__":
    main(sys.argv)

"""Fetch the flow-cytometry data (first condition, 853 x 11) and its consensus graph.

The CSV and edge list ship inside the ``cdt`` wheel; this script downloads
the wheel with pip (no install) and extracts the two resources into
``data/``:

* ``data/sachs.csv``: header plus the first 853 rows, columns
  praf, pmek, plcg, PIP2, PIP3, p44/42, pakts473, PKA, PKC, P38, pjnk (raw
  concentrations, not standardized).
* ``data/sachs_graph.txt``: the reference graph in the package's edge-list
  format, with 0-based indices in the column order above.

Usage: python scripts/fetch_sachs.py [--wheel PATH]
"""
import argparse
import csv
import glob
import io
from pathlib import Path
import subprocess
import sys
import tempfile
import zipfile

DATA = Path(__file__).resolve().parent.parent / "data"
N_ROWS = 853
RESOURCE = "cdt/data/resources/"


def fetch_wheel(dest: str) -> str:
    subprocess.run([sys.executable, "-m", "pip", "download", "cdt==0.6.0", "--no-deps", "-d", dest, "-q"],
                   check=True)
    return glob.glob(f"{dest}/cdt-*.whl")[0]


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    parser.add_argument("--wheel", help="path to an already downloaded cdt wheel")
    args = parser.parse_args()
    with tempfile.TemporaryDirectory() as tmp:
        wheel = args.wheel or fetch_wheel(tmp)
        with zipfile.ZipFile(wheel) as zf:
            data = zf.read(RESOURCE + "cyto_full_data.csv").decode()
            target = zf.read(RESOURCE + "cyto_full_target.csv").decode()

    lines = data.splitlines()
    header = lines[0].split(",")
    DATA.mkdir(exist_ok=True)
    (DATA / "sachs.csv").write_text("\n".join(lines[: N_ROWS + 1]) + "\n")

    index = {name: i for i, name in enumerate(header)}
    rows = list(csv.reader(io.StringIO(target)))[1:]
    edges = [f"{index[a]} {index[b]}" for a, b in rows]
    (DATA / "sachs_graph.txt").write_text("\n".join([f"d={len(header)}"] + edges) + "\n")
    print(f"wrote {DATA / 'sachs.csv'} ({N_ROWS} rows) and {len(edges)} reference edges")


if __name__ == "__main__":
    main()

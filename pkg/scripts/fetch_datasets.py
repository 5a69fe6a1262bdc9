"""Write the desk-scale benchmark tables to data/ as plain CSV.

diabetes (Pima Indians, 768 x 8) is taken from the KEEL copy shipped inside the
``keel-ds`` wheel on PyPI. qsar-biodeg (1055 x 41) is fetched from OpenML when
that host is reachable; otherwise a local file can be passed with --qsar.

    python scripts/fetch_datasets.py [--qsar path/to/biodeg.csv]
"""
from __future__ import annotations

import argparse
import csv
import io
import subprocess
import sys
import tempfile
import zipfile
from pathlib import Path

DATA = Path(__file__).resolve().parents[1] / "data"
PIMA_COLUMNS = ["preg", "plas", "pres", "skin", "insu", "mass", "pedi", "age", "class"]


def fetch_diabetes(out: Path) -> None:
    with tempfile.TemporaryDirectory() as tmp:
        subprocess.run([sys.executable, "-m", "pip", "download", "--no-deps", "-q",
                        "-d", tmp, "keel-ds==0.2.5"], check=True)
        wheel = next(Path(tmp).glob("keel_ds-*.whl"))
        raw = zipfile.ZipFile(wheel).read("keel_ds/data/balanced/raw/pima.dat").decode()
    rows = [r for r in csv.reader(io.StringIO(raw)) if r and not r[0].startswith("@")]
    if len(rows) != 768:
        raise SystemExit(f"unexpected pima row count {len(rows)}")
    with out.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(PIMA_COLUMNS)
        w.writerows([c.strip() for c in r] for r in rows)
    print(f"wrote {out} ({len(rows)} rows)")


def fetch_qsar(out: Path, local: str | None) -> None:
    if local:
        src = Path(local).read_text().splitlines()
        # UCI distributes biodeg.csv ';'-separated without a header
        rows = [line.split(";") for line in src if line.strip()]
        if len(rows[0]) == 42 and rows[0][-1] in ("RB", "NRB"):
            header = [f"V{j}" for j in range(1, 42)] + ["Class"]
        else:
            header, rows = rows[0], rows[1:]
    else:
        from sklearn.datasets import fetch_openml

        frame = fetch_openml(data_id=1494, as_frame=True).frame
        header, rows = list(frame.columns), frame.astype(str).values.tolist()
    with out.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)
    print(f"wrote {out} ({len(rows)} rows)")


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--qsar", help="local qsar-biodeg file (UCI biodeg.csv or OpenML CSV export)")
    ap.add_argument("--skip-qsar", action="store_true")
    args = ap.parse_args()
    DATA.mkdir(exist_ok=True)
    if not (DATA / "diabetes.csv").exists():
        fetch_diabetes(DATA / "diabetes.csv")
    if not args.skip_qsar:
        try:
            fetch_qsar(DATA / "qsar-biodeg.csv", args.qsar)
        except Exception as e:  # network-dependent
            print(f"qsar-biodeg unavailable: {e}", file=sys.stderr)


if __name__ == "__main__":
    main()

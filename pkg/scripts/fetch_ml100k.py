"""Materialise MovieLens-100K ``u.data`` from a PyPI-hosted copy.

GroupLens hosts the archive directly, but sandboxed machines often only reach
a package index. The RecBole wheel bundles the full 100,000-row ratings table
as an atomic ``.inter`` file; this script pulls that wheel with pip and
rewrites the table in the original tab-separated ``u.data`` layout.

Usage:
    python scripts/fetch_ml100k.py [--out data/ml-100k/u.data]
"""

import argparse
import subprocess
import sys
import tempfile
import zipfile
from pathlib import Path

WHEEL_SPEC = "recbole==1.2.1"
MEMBER = "recbole/dataset_example/ml-100k/ml-100k.inter"
DEFAULT_OUT = Path(__file__).resolve().parent.parent / "data" / "ml-100k" / "u.data"


def fetch(out: Path = DEFAULT_OUT) -> Path:
    if out.exists():
        return out
    with tempfile.TemporaryDirectory() as tmp:
        subprocess.run(
            [sys.executable, "-m", "pip", "download", WHEEL_SPEC, "--no-deps",
             "--only-binary=:all:", "-d", tmp, "-q"],
            check=True,
        )
        wheel = next(Path(tmp).glob("*.whl"))
        with zipfile.ZipFile(wheel) as zf:
            text = zf.read(MEMBER).decode("utf-8")
    lines = text.splitlines()
    # first line is the typed header "user_id:token\titem_id:token\t..."
    body = [ln for ln in lines[1:] if ln.strip()]
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text("\n".join(body) + "\n")
    return out


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", type=Path, default=DEFAULT_OUT)
    args = ap.parse_args()
    path = fetch(args.out)
    n = sum(1 for _ in path.open())
    print(f"{path}: {n} interactions")


if __name__ == "__main__":
    main()

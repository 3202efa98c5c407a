"""Regenerate the bundled desk-scale model files under src/mocapsolve/data."""
import argparse
from pathlib import Path

from mocapsolve.desk import LAYOUTS, write_model

DATA = Path(__file__).resolve().parents[1] / "src" / "mocapsolve" / "data"


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", type=Path, default=DATA)
    args = ap.parse_args()
    args.out.mkdir(parents=True, exist_ok=True)
    for layout in LAYOUTS:
        path = args.out / f"desk_model_{layout}.json"
        write_model(path, layout)
        print(path)


if __name__ == "__main__":
    main()

"""Regenerate the bundled region maps under src/scrl/data/maps."""

import argparse
from pathlib import Path

import numpy as np

from scrl.env import RegionMap, format_region_map


def agri() -> RegionMap:
    # five crop plots around an unlabelled farm track
    cells = np.zeros((50, 50), dtype=int)
    cells[0:20, :] = 2
    cells[20:28, 0:20] = 1
    cells[38:50, 0:14] = 3
    cells[22:36, 36:50] = 4
    cells[40:50, 24:50] = 5
    return RegionMap(cells, 5)


def med() -> RegionMap:
    # two low-demand districts in the north, three high-demand ones in the south
    cells = np.zeros((50, 50), dtype=int)
    cells[0:18, 0:22] = 1
    cells[0:18, 28:50] = 2
    cells[22:36, 14:36] = 3
    cells[38:50, 0:20] = 4
    cells[38:50, 30:50] = 5
    return RegionMap(cells, 5)


def tiny() -> RegionMap:
    cells = np.ones((8, 8), dtype=int)
    cells[:, 6:] = 2
    return RegionMap(cells, 2)


def ablation() -> RegionMap:
    # narrow strips at both ends of an 11x11 field
    cells = np.zeros((11, 11), dtype=int)
    cells[:, :2] = 1
    cells[:, 9:] = 2
    return RegionMap(cells, 2)


MAPS = {"agri": agri, "med": med, "tiny": tiny, "ablation": ablation}


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default=str(Path(__file__).resolve().parents[1] / "src/scrl/data/maps"))
    args = parser.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for name, build in MAPS.items():
        (out / f"{name}.map").write_text(format_region_map(build()))
        print(f"wrote {out / name}.map")


if __name__ == "__main__":
    main()

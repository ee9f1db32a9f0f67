"""Region-labelled grid world for sequential resource allocation.

The agent carries a speed level and one of eight compass headings. Each step
it adjusts both by at most one unit, then moves ``v'`` cells along the new
heading, clamped at the map border. Reward is ``-0.1 / (1 + v')``: the slower
the agent, the more resource it spends.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

# headings counter-clockwise from East; row 0 is the top of the map
HEADINGS = ("E", "NE", "N", "NW", "W", "SW", "S", "SE")
DX = np.array([1, 1, 0, -1, -1, -1, 0, 1])
DY = np.array([0, -1, -1, -1, 0, 1, 1, 1])
EAST = 0


class MapFormatError(ValueError):
    pass


@dataclass(frozen=True)
class EnvState:
    x: int
    y: int
    v: int = 0
    heading: int = EAST


@dataclass(frozen=True)
class EnvAction:
    dv: int
    dh: int


# index = 3 * (dv + 1) + (dh + 1)
ACTIONS = tuple(EnvAction(dv, dh) for dv in (-1, 0, 1) for dh in (-1, 0, 1))
ACTION_DV = np.array([a.dv for a in ACTIONS])
ACTION_DH = np.array([a.dh for a in ACTIONS])


def action_index(action: EnvAction) -> int:
    return 3 * (action.dv + 1) + (action.dh + 1)


@dataclass(frozen=True, eq=False)
class RegionMap:
    cells: np.ndarray  # (height, width) int labels
    m: int

    def __post_init__(self):
        cells = np.asarray(self.cells, dtype=int)
        if cells.ndim != 2 or cells.size == 0:
            raise MapFormatError("map must be a non-empty 2-D grid")
        if self.m < 1:
            raise MapFormatError("region count must be positive")
        if cells.min() < 0 or cells.max() > self.m:
            raise MapFormatError(f"labels must lie in 0..{self.m}")
        missing = sorted(set(range(1, self.m + 1)) - set(np.unique(cells).tolist()))
        if missing:
            raise MapFormatError(f"regions without cells: {missing}")
        cells.setflags(write=False)
        object.__setattr__(self, "cells", cells)

    @property
    def height(self) -> int:
        return self.cells.shape[0]

    @property
    def width(self) -> int:
        return self.cells.shape[1]

    def __eq__(self, other):
        return isinstance(other, RegionMap) and self.m == other.m and np.array_equal(self.cells, other.cells)

    __hash__ = None


def parse_region_map(text: str) -> RegionMap:
    lines = [ln.split("#", 1)[0].strip() for ln in text.splitlines()]
    lines = [ln for ln in lines if ln]
    if not lines:
        raise MapFormatError("empty map file")
    header = lines[0].split()
    if len(header) != 3:
        raise MapFormatError("header must be 'width height m'")
    try:
        width, height, m = (int(tok) for tok in header)
    except ValueError as exc:
        raise MapFormatError(f"malformed header: {lines[0]!r}") from exc
    if width < 1 or height < 1:
        raise MapFormatError("width and height must be positive")
    rows = lines[1:]
    if len(rows) != height:
        raise MapFormatError(f"expected {height} rows, found {len(rows)}")
    cells = []
    for r, row in enumerate(rows):
        values = row.split()
        if len(values) != width:
            raise MapFormatError(f"row {r} has {len(values)} labels, expected {width}")
        try:
            cells.append([int(v) for v in values])
        except ValueError as exc:
            raise MapFormatError(f"row {r} holds a non-integer label") from exc
    arr = np.array(cells, dtype=int)
    if arr.min() < 0 or arr.max() > m:
        bad = int(arr.max()) if arr.max() > m else int(arr.min())
        raise MapFormatError(f"label {bad} outside 0..{m}")
    return RegionMap(arr, m)


def load_region_map(path) -> RegionMap:
    return parse_region_map(Path(path).read_text(encoding="utf-8"))


def format_region_map(region_map: RegionMap) -> str:
    lines = [f"{region_map.width} {region_map.height} {region_map.m}"]
    lines += [" ".join(str(int(v)) for v in row) for row in region_map.cells]
    return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class EnvConfig:
    region_map: RegionMap
    horizon: int = 1000
    v_max: int = 3
    eta: tuple[tuple[EnvState, float], ...] = field(default=())

    def __post_init__(self):
        if self.horizon < 1:
            raise ValueError("horizon must be positive")
        if self.v_max < 1:
            raise ValueError("v_max must be positive")
        if not self.eta:
            raise ValueError("initial-state distribution is empty")
        probs = np.array([p for _, p in self.eta], dtype=float)
        if np.any(probs < 0) or not np.isclose(probs.sum(), 1.0, atol=1e-9):
            raise ValueError("initial-state probabilities must be non-negative and sum to 1")
        for s, _ in self.eta:
            check_state(self, s)

    @property
    def m(self) -> int:
        return self.region_map.m

    @property
    def eta_states(self) -> np.ndarray:
        return np.array([(s.x, s.y, s.v, s.heading) for s, _ in self.eta], dtype=int)

    @property
    def eta_cdf(self) -> np.ndarray:
        return np.cumsum([p for _, p in self.eta])


def check_state(config: EnvConfig, s: EnvState) -> None:
    rm = config.region_map
    if not (0 <= s.x < rm.width and 0 <= s.y < rm.height):
        raise ValueError(f"state ({s.x}, {s.y}) is outside the {rm.width}x{rm.height} map")
    if not 0 <= s.v <= config.v_max:
        raise ValueError(f"speed {s.v} outside 0..{config.v_max}")
    if not 0 <= s.heading < 8:
        raise ValueError(f"heading {s.heading} outside 0..7")


def uniform_eta(cells) -> tuple[tuple[EnvState, float], ...]:
    cells = list(cells)
    return tuple((EnvState(x, y, 0, EAST), 1.0 / len(cells)) for x, y in cells)


def draw_initial(config: EnvConfig, u: np.ndarray) -> np.ndarray:
    """Initial states (n, 4) for uniforms ``u`` of shape (n,)."""
    idx = np.minimum(np.searchsorted(config.eta_cdf, u, side="right"), len(config.eta) - 1)
    return config.eta_states[idx]


def reset(config: EnvConfig, rng: np.random.Generator) -> EnvState:
    x, y, v, h = draw_initial(config, np.array([rng.random()]))[0]
    return EnvState(int(x), int(y), int(v), int(h))


def step_arrays(config: EnvConfig, x, y, v, h, action):
    """Vectorised transition. All arguments are integer arrays of one shape."""
    rm = config.region_map
    v2 = np.clip(v + ACTION_DV[action], 0, config.v_max)
    h2 = (h + ACTION_DH[action]) % 8
    x2 = np.clip(x + v2 * DX[h2], 0, rm.width - 1)
    y2 = np.clip(y + v2 * DY[h2], 0, rm.height - 1)
    return x2, y2, v2, h2, reward_for_speed(v2)


def reward_for_speed(v):
    return -0.1 / (1.0 + np.asarray(v, dtype=float))


def step(config: EnvConfig, s: EnvState, a: EnvAction) -> tuple[EnvState, float]:
    x, y, v, h, r = step_arrays(config, np.array(s.x), np.array(s.y), np.array(s.v), np.array(s.heading),
                                np.array(action_index(a)))
    return EnvState(int(x), int(y), int(v), int(h)), float(r)


def labels(region_map: RegionMap, s: EnvState) -> frozenset[int]:
    if not (0 <= s.x < region_map.width and 0 <= s.y < region_map.height):
        raise ValueError(f"state ({s.x}, {s.y}) is outside the map")
    label = int(region_map.cells[s.y, s.x])
    return frozenset() if label == 0 else frozenset((label,))


def label_array(region_map: RegionMap, x, y) -> np.ndarray:
    return region_map.cells[y, x]

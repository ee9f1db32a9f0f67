"""Flat ``key = value`` run configuration."""

from __future__ import annotations

from dataclasses import dataclass
from importlib import resources
from pathlib import Path

from .constraints import ConstraintSyntaxError, load_formula
from .env import EnvConfig, EnvState, MapFormatError, load_region_map
from .trainer import MODES, RESAMPLE, TrainConfig


class ConfigError(ValueError):
    pass


# key -> (default, parser, description)
DEFAULTS = {
    "map": ("", str, "region map file, relative to the config file"),
    "formula": ("", str, "constraint file, relative to the config file"),
    "mode": ("scrl", str, "scrl | scrl_min | unconstrained"),
    "seed": (0, int, "base seed for every random stream"),
    "beta": (0.01, float, "penalty step size"),
    "beta_decay": (0.0, float, "fraction of beta removed linearly by the last iteration"),
    "strict_margin": (0.0, float, "margin applied to negated (strict) atoms"),
    "gamma_rho": (1.0, float, "density discount used during training"),
    "alpha": (0.2, float, "policy learning rate"),
    "gamma_r": (0.99, float, "return discount"),
    "baseline_rate": (0.1, float, "running-mean rate of the per-bucket baseline"),
    "cell_stride": (5, int, "cells per position bucket along each axis"),
    "batch_size": (16, int, "trajectories per iteration"),
    "iterations": (500, int, "iteration budget"),
    "conv_window": (50, int, "convergence window (iterations)"),
    "conv_tol": (1e-3, float, "convergence tolerance"),
    "horizon": (1000, int, "episode length T"),
    "v_max": (3, int, "top speed level"),
    "start": ("0,0", str, "start cells 'x,y;x,y;...' drawn uniformly"),
    "disjunct_resample": ("per_call", str, "per_call | per_iteration"),
    "eval_episodes": (100, int, "episodes used by evaluation"),
    "workers": (1, int, "rollout threads (capped by SCRL_THREADS)"),
    "scale_bounds": (False, "bool", "scale constraint bounds by horizon/1000"),
    "pgm": (False, "bool", "also write heatmap.pgm"),
}


def _bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _convert(key: str, text: str):
    kind = DEFAULTS[key][1]
    try:
        if kind == "bool":
            return _bool(text)
        return kind(text.strip())
    except ValueError as exc:
        raise ConfigError(f"bad value for {key}: {text!r}") from exc


def parse_pairs(lines, source: str = "<config>") -> dict:
    values = {}
    for n, raw in enumerate(lines, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{n}: expected key = value")
        key, text = (part.strip() for part in line.split("=", 1))
        if key not in DEFAULTS:
            raise ConfigError(f"{source}:{n}: unknown key {key!r}")
        values[key] = _convert(key, text)
    return values


@dataclass
class RunConfig:
    values: dict
    base_dir: Path

    @classmethod
    def load(cls, path=None, overrides=()) -> "RunConfig":
        values = {k: v[0] for k, v in DEFAULTS.items()}
        base = Path.cwd()
        if path is not None:
            p = resolve_config_path(path)
            values.update(parse_pairs(p.read_text(encoding="utf-8").splitlines(), str(p)))
            base = p.parent
        values.update(parse_pairs(overrides, "--set"))
        return cls(values, base)

    def __getitem__(self, key):
        return self.values[key]

    def set(self, key, value):
        if key not in DEFAULTS:
            raise ConfigError(f"unknown key {key!r}")
        self.values[key] = value

    def path(self, key: str) -> Path:
        text = self.values[key]
        if not text:
            raise ConfigError(f"{key} is not set")
        p = Path(text)
        return p if p.is_absolute() else self.base_dir / p

    def start_cells(self):
        cells = []
        for part in str(self.values["start"]).split(";"):
            part = part.strip()
            if not part:
                continue
            try:
                x, y = (int(t) for t in part.split(","))
            except ValueError as exc:
                raise ConfigError(f"bad start cell {part!r}") from exc
            cells.append((x, y))
        if not cells:
            raise ConfigError("start lists no cells")
        return cells

    def train_config(self) -> TrainConfig:
        v = self.values
        if v["mode"] not in MODES:
            raise ConfigError(f"unknown mode {v['mode']!r}; choose from {', '.join(MODES)}")
        if v["disjunct_resample"] not in RESAMPLE:
            raise ConfigError(f"disjunct_resample must be one of {', '.join(RESAMPLE)}")
        map_path = self.path("map")
        if not map_path.is_file():
            raise ConfigError(f"map not found: {map_path}")
        formula_path = self.path("formula")
        if not formula_path.is_file():
            raise ConfigError(f"formula not found: {formula_path}")
        try:
            region_map = load_region_map(map_path)
            cells = self.start_cells()
            eta = tuple((EnvState(x, y), 1.0 / len(cells)) for x, y in cells)
            env = EnvConfig(region_map, horizon=v["horizon"], v_max=v["v_max"], eta=eta)
            formula = load_formula(formula_path.read_text(encoding="utf-8"), region_map.m, v["strict_margin"])
            if v["scale_bounds"]:
                formula = formula.scaled(v["horizon"] / 1000.0)
            return TrainConfig(
                env=env, formula=formula, mode=v["mode"], seed=v["seed"], beta=v["beta"],
                beta_decay=v["beta_decay"], strict_margin=v["strict_margin"], gamma_rho=v["gamma_rho"],
                alpha=v["alpha"], gamma_r=v["gamma_r"], baseline_rate=v["baseline_rate"],
                cell_stride=v["cell_stride"], batch_size=v["batch_size"], iterations=v["iterations"],
                conv_window=v["conv_window"], conv_tol=v["conv_tol"],
                disjunct_resample=v["disjunct_resample"], workers=v["workers"],
            )
        except (MapFormatError, ConstraintSyntaxError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc


def bundled(kind: str, name: str) -> Path:
    return Path(str(resources.files("scrl") / "data" / kind / name))


def resolve_config_path(path) -> Path:
    """An existing path as given, else a bundled config of that name."""
    p = Path(path)
    if p.is_file():
        return p
    fallback = bundled("configs", p.name)
    if fallback.is_file():
        return fallback
    raise ConfigError(f"config not found: {path}")


def describe_defaults() -> str:
    return "\n".join(f"{k} = {v[0]}  # {v[2]}" for k, v in DEFAULTS.items())

"""Experiment configuration: JSON file <-> nested frozen dataclasses."""
from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from ..channel import GridSpec, SystemDims

__all__ = ["ExperimentConfig", "load_config", "parse_bits", "format_bits"]


def parse_bits(value) -> float:
    """``1..`` or ``"inf"`` (infinite resolution, no quantization)."""
    if isinstance(value, str):
        if value.strip().lower() in ("inf", "infinity", "∞"):
            return math.inf
        value = int(value)
    if isinstance(value, float) and math.isinf(value):
        return math.inf
    if int(value) != value or value < 1:
        raise ValueError(f"bits must be a positive integer or 'inf', got {value!r}")
    return int(value)


def format_bits(bits) -> str:
    return "inf" if math.isinf(bits) else str(int(bits))


@dataclass(frozen=True)
class DimsSection:
    n_antennas: int = 16
    n_users: int = 2
    n_taps: int = 4
    n_paths: int = 2
    period: float = 1.0
    rolloff: float = 0.35


@dataclass(frozen=True)
class GridSection:
    n_aoa: int = 32
    n_delay: int = 8
    aoa_spacing: str = "sin"


@dataclass(frozen=True)
class TrainSection:
    n_train: tuple[int, ...] = (48,)
    zc_root: int | str = "auto"
    snr_db: tuple[float, ...] = (0.0,)
    cv_slots: int | None = None


@dataclass(frozen=True)
class QuantizerSection:
    bits: tuple[float, ...] = (1, 2, 3, 4)
    step: float | None = None


@dataclass(frozen=True)
class SolverSection:
    method: str = "newton"
    tol: float = 1e-6
    max_inner: int = 200
    max_support: int | None = None
    prior_weight: float = 1.0
    dense_cap: int = 10 ** 6


@dataclass(frozen=True)
class MonteCarloSection:
    trials: int = 100
    base_seed: int = 0
    on_grid: bool = False


@dataclass(frozen=True)
class OutputSection:
    dir: str = "results"


_SECTIONS = {
    "dims": DimsSection,
    "grid": GridSection,
    "train": TrainSection,
    "quantizer": QuantizerSection,
    "solver": SolverSection,
    "mc": MonteCarloSection,
    "output": OutputSection,
}


@dataclass(frozen=True)
class ExperimentConfig:
    dims: DimsSection = field(default_factory=DimsSection)
    grid: GridSection = field(default_factory=GridSection)
    train: TrainSection = field(default_factory=TrainSection)
    quantizer: QuantizerSection = field(default_factory=QuantizerSection)
    solver: SolverSection = field(default_factory=SolverSection)
    mc: MonteCarloSection = field(default_factory=MonteCarloSection)
    output: OutputSection = field(default_factory=OutputSection)

    def __post_init__(self):
        t, q = self.train, self.quantizer
        if not t.n_train or not t.snr_db or not q.bits:
            raise ValueError("n_train, snr_db and bits lists must be non-empty")
        if self.mc.trials < 1:
            raise ValueError("trials must be >= 1")
        if self.solver.method not in ("newton", "gradient"):
            raise ValueError(f"unknown solver method {self.solver.method!r}")
        if not (t.zc_root == "auto" or isinstance(t.zc_root, int)):
            raise ValueError("zc_root must be an integer or 'auto'")
        for n in t.n_train:
            if n < self.dims.n_users * self.dims.n_taps:
                raise ValueError(f"n_train={n} is shorter than K*D")
            if not 0 < self.cv_slots < n:
                raise ValueError(f"cv_slots={self.cv_slots} must lie in (0, {n})")
        # validates dims and grid eagerly
        self.system_dims()
        self.grid_spec()

    @property
    def cv_slots(self) -> int:
        if self.train.cv_slots is None:
            return self.dims.n_users * self.dims.n_taps
        return int(self.train.cv_slots)

    def system_dims(self) -> SystemDims:
        d = self.dims
        return SystemDims(d.n_antennas, d.n_users, d.n_taps, d.n_paths, d.period)

    def grid_spec(self) -> GridSpec:
        g = self.grid
        return GridSpec(g.n_aoa, g.n_delay, g.aoa_spacing)

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "ExperimentConfig":
        unknown = set(data) - set(_SECTIONS)
        if unknown:
            raise ValueError(f"unknown config sections: {sorted(unknown)}")
        sections = {}
        for name, section_cls in _SECTIONS.items():
            raw = dict(data.get(name, {}))
            known = {f.name for f in dataclasses.fields(section_cls)}
            bad = set(raw) - known
            if bad:
                raise ValueError(f"unknown keys in [{name}]: {sorted(bad)}")
            for key in ("n_train", "snr_db"):
                if key in raw:
                    raw[key] = tuple(_as_list(raw[key]))
            if name == "quantizer" and "bits" in raw:
                raw["bits"] = tuple(parse_bits(b) for b in _as_list(raw["bits"]))
            sections[name] = section_cls(**raw)
        return cls(**sections)

    def to_dict(self) -> dict[str, Any]:
        out = {}
        for name in _SECTIONS:
            sec = dataclasses.asdict(getattr(self, name))
            for key, val in sec.items():
                if isinstance(val, tuple):
                    sec[key] = list(val)
            if name == "quantizer":
                sec["bits"] = [b if isinstance(b, int) else "inf" for b in sec["bits"]]
            out[name] = sec
        return out

    def replace(self, **sections) -> "ExperimentConfig":
        """Copy with individual section fields overridden, e.g.
        ``cfg.replace(mc={"trials": 5})``."""
        new = {}
        for name, changes in sections.items():
            new[name] = dataclasses.replace(getattr(self, name), **_normalize(name, changes))
        return dataclasses.replace(self, **new)


def _normalize(name, changes):
    changes = dict(changes)
    for key in ("n_train", "snr_db"):
        if key in changes:
            changes[key] = tuple(_as_list(changes[key]))
    if name == "quantizer" and "bits" in changes:
        changes["bits"] = tuple(parse_bits(b) for b in _as_list(changes["bits"]))
    return changes


def _as_list(value):
    return list(value) if isinstance(value, (list, tuple)) else [value]


def load_config(path) -> ExperimentConfig:
    with open(Path(path)) as fh:
        return ExperimentConfig.from_dict(json.load(fh))

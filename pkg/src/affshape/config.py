"""Run configuration: every tunable with its default, serializable to JSON."""

from __future__ import annotations

import enum
import json
from dataclasses import asdict, dataclass, field, fields

from .detector import (CONVERGENCE_RATIO, DEFAULT_THRESHOLD, MAX_ELONGATION, MAX_ITER, WINDOW,
                       WINDOW_MR)
from .evaluation import OVERLAP_THRESHOLD, PX_THRESHOLD, RATIO_THRESHOLD
from .patch import DEFAULT_MR_SCALE, DEFAULT_SIZE
from .registration import RegistrationConfig, ToyConfig


class ConfigError(ValueError):
    pass


@dataclass
class DetectConfig:
    levels_per_octave: int = 3
    initial_sigma: float = 1.6
    threshold: float = DEFAULT_THRESHOLD
    affine: bool = True
    max_iter: int = MAX_ITER
    window: int = WINDOW
    window_mr: float = WINDOW_MR
    convergence_ratio: float = CONVERGENCE_RATIO
    max_elongation: float = MAX_ELONGATION
    sample_from: str = "scalespace"


@dataclass
class MatchConfig:
    descriptor: str = "rootsift"
    patch_size: int = DEFAULT_SIZE
    mr_scale: float = DEFAULT_MR_SCALE
    orient: bool = True
    ratio_threshold: float = RATIO_THRESHOLD
    px_threshold: float = PX_THRESHOLD
    overlap_threshold: float = OVERLAP_THRESHOLD
    mutual: bool = False


@dataclass
class RunConfig:
    detect: DetectConfig = field(default_factory=DetectConfig)
    match: MatchConfig = field(default_factory=MatchConfig)
    registration: RegistrationConfig = field(default_factory=RegistrationConfig)
    toy: ToyConfig = field(default_factory=ToyConfig)

    def to_dict(self) -> dict:
        return {f.name: _plain(asdict(getattr(self, f.name))) for f in fields(self)}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        if not isinstance(d, dict):
            raise ConfigError("config must be a JSON object")
        sections = {f.name: f for f in fields(cls)}
        unknown = set(d) - set(sections)
        if unknown:
            raise ConfigError(f"unknown config sections: {sorted(unknown)}")
        out = cls()
        for name, sub in d.items():
            current = getattr(out, name)
            known = {f.name for f in fields(current)}
            bad = set(sub) - known
            if bad:
                raise ConfigError(f"unknown keys in [{name}]: {sorted(bad)}")
            merged = {**_plain(asdict(current)), **sub}
            try:
                setattr(out, name, type(current)(**merged))
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"invalid [{name}] section: {exc}") from exc
        return out

    @classmethod
    def from_json(cls, text: str) -> "RunConfig":
        try:
            return cls.from_dict(json.loads(text))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"bad JSON: {exc}") from exc

    @classmethod
    def load(cls, path) -> "RunConfig":
        with open(path, encoding="utf-8") as fh:
            return cls.from_json(fh.read())

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_json())


def _plain(d: dict) -> dict:
    return {k: (v.value if isinstance(v, enum.Enum) else v) for k, v in d.items()}

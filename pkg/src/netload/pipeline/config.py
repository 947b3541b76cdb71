"""Run configuration: flat ``key = value`` text.

Blank lines and lines starting with ``#`` are ignored. Lists are comma
separated. Relative paths are resolved against the config file's directory.
See FORMATS.md for the key reference.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np
import pandas as pd

from .. import presets
from ..features import STEP
from ..quantreg import EXTREME_LEVELS

TAIL_MODES = ("none", "static", "conditional")
DEFAULT_CENTRAL = tuple(round(a, 2) for a in np.arange(1, 20) / 20)
DEFAULT_RESERVE = (0.0001, 0.0005, 0.001, 0.0025)


class ConfigError(ValueError):
    """Invalid or inconsistent run configuration."""


def _floats(s: str) -> tuple[float, ...]:
    return tuple(float(x) for x in s.split(",") if x.strip())


def _strs(s: str) -> tuple[str, ...]:
    return tuple(x.strip() for x in s.split(",") if x.strip())


def _opt(s: str) -> str | None:
    return None if s.strip().lower() in ("", "none") else s.strip()


@dataclass(frozen=True)
class RunConfig:
    dataset: str
    test_start: str
    test_end: str | None = None
    train_start: str | None = None
    standardize_until: str | None = None
    holidays: str | None = None
    school_holidays: str | None = None
    region: str = "region"
    timezone: str = "Europe/London"
    target: str = "netload"
    preset: str = "gam-point"
    qr_features: tuple[str, ...] | None = None
    central_levels: tuple[float, ...] = DEFAULT_CENTRAL
    extreme_levels: tuple[float, ...] = EXTREME_LEVELS
    tail: tuple[str, ...] = ("conditional",)
    threshold: str = "cv"
    cv_folds: int = 3
    tail_linear: tuple[str, ...] = presets.TAIL_LINEAR
    tail_smooth_k: int = 4
    cadence: str = "14D"
    min_train_days: int = 28
    issue_hour: float = 6.0
    reserve_alphas: tuple[float, ...] = DEFAULT_RESERVE
    n_boot: int = 1000
    n_sim: int = 1000
    seed: int = 0
    output: str = "out"
    base_dir: str = field(default=".", compare=False)

    def __post_init__(self) -> None:
        presets.get(self.preset)
        bad = set(self.tail) - set(TAIL_MODES)
        if bad or not self.tail:
            raise ConfigError(f"tail modes must be among {TAIL_MODES}, got {self.tail}")
        try:
            cad = pd.Timedelta(self.cadence)
        except ValueError as exc:
            raise ConfigError(f"bad cadence {self.cadence!r}") from exc
        if cad <= pd.Timedelta(0) or cad.value % STEP.value:
            raise ConfigError("cadence must be a positive multiple of 30 minutes")
        lv = np.r_[self.central_levels]
        if np.any(lv <= 0) or np.any(lv >= 1) or np.any(np.diff(lv) <= 0) or 0.5 not in lv:
            raise ConfigError("central levels must increase strictly in (0, 1) and include 0.5")
        ex = np.asarray(self.extreme_levels)
        if np.any(ex <= 0) or np.any(ex > lv.min()):
            raise ConfigError("extreme levels must not exceed the smallest central level")
        if self.threshold != "cv":
            a = float(self.threshold)
            if a not in np.r_[lv, ex] or a >= 0.5:
                raise ConfigError("fixed threshold must be one of the lower quantile levels")
        for a in self.reserve_alphas:
            if not 0 < a < 0.5:
                raise ConfigError("reserve alphas must be in (0, 0.5)")
        if self.cv_folds < 2:
            raise ConfigError("cv_folds must be at least 2")

    # -- derived --------------------------------------------------------------
    @property
    def lower_levels(self) -> tuple[float, ...]:
        """Extreme trial levels, most extreme first."""
        return tuple(sorted(self.extreme_levels))

    @property
    def all_levels(self) -> tuple[float, ...]:
        ex = set(self.extreme_levels) | {round(1 - a, 12) for a in self.extreme_levels}
        return tuple(sorted(ex | set(self.central_levels)))

    @property
    def cadence_delta(self) -> pd.Timedelta:
        return pd.Timedelta(self.cadence)

    def path(self, name: str | None) -> Path | None:
        if name is None:
            return None
        p = Path(name)
        return p if p.is_absolute() else Path(self.base_dir) / p

    @property
    def output_dir(self) -> Path:
        return self.path(self.output)  # type: ignore[return-value]

    # -- text form ------------------------------------------------------------
    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            if f.name == "base_dir":
                continue
            v = getattr(self, f.name)
            if v is None:
                s = "none"
            elif isinstance(v, tuple):
                s = ", ".join(format(x, "g") if isinstance(x, float) else str(x) for x in v)
            else:
                s = str(v)
            lines.append(f"{f.name} = {s}")
        return "\n".join(lines) + "\n"

    def with_(self, **kw) -> "RunConfig":
        return replace(self, **kw)


_PARSERS = {
    "central_levels": _floats, "extreme_levels": _floats, "reserve_alphas": _floats,
    "tail": _strs, "tail_linear": _strs,
    "qr_features": lambda s: _strs(s) if _opt(s) else None,
    "cv_folds": int, "tail_smooth_k": int, "min_train_days": int, "n_boot": int, "n_sim": int,
    "seed": int, "issue_hour": float,
    "test_end": _opt, "train_start": _opt, "standardize_until": _opt, "holidays": _opt,
    "school_holidays": _opt,
}


def parse_config(text: str, base_dir: str | Path = ".") -> RunConfig:
    names = {f.name for f in fields(RunConfig)} - {"base_dir"}
    kv: dict[str, object] = {}
    for no, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"line {no}: expected 'key = value'")
        key, val = (s.strip() for s in line.split("=", 1))
        if key not in names:
            raise ConfigError(f"line {no}: unknown key {key!r}")
        if key in kv:
            raise ConfigError(f"line {no}: duplicate key {key!r}")
        try:
            kv[key] = _PARSERS.get(key, str)(val)
        except ValueError as exc:
            raise ConfigError(f"line {no}: bad value for {key!r}: {exc}") from exc
    for req in ("dataset", "test_start"):
        if req not in kv:
            raise ConfigError(f"missing required key {req!r}")
    try:
        return RunConfig(base_dir=str(base_dir), **kv)  # type: ignore[arg-type]
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path: str | Path) -> RunConfig:
    p = Path(path)
    return parse_config(p.read_text(encoding="utf-8"), p.parent)

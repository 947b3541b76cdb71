"""Dataset ingestion and schema validation."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from .. import presets
from ..features import SchemaError, TimeTable, read_csv


@dataclass
class ValidationReport:
    path: str
    rows: int
    start: str | None
    end: str | None
    gaps: int
    missing: dict[str, int]
    findings: list[str] = field(default_factory=list)

    @property
    def clean(self) -> bool:
        return not self.findings

    def to_record(self) -> dict:
        return {"path": self.path, "rows": self.rows, "start": self.start, "end": self.end,
                "gaps": self.gaps, "missing": self.missing, "findings": self.findings}


def _check_raw_timestamps(path: Path) -> None:
    ts = pd.read_csv(path, usecols=["timestamp"], dtype=str, keep_default_na=False)["timestamp"]
    dup = ts[ts.duplicated()]
    if len(dup):
        raise SchemaError(f"duplicate timestamp {dup.iloc[0]}")


def validate_dataset(path: str | Path, preset: str | None = None, target: str = "netload",
                     columns: set[str] | None = None) -> ValidationReport:
    """Check a dataset CSV.

    Hard violations raise :class:`SchemaError`: unreadable file, missing
    ``timestamp``/target/preset columns, duplicate, non-increasing or
    off-grid timestamps. Softer issues (gaps, missing values, nonpositive
    capacities) are listed as findings.
    """
    p = Path(path)
    if not p.exists():
        raise SchemaError(f"dataset {p} does not exist")
    head = pd.read_csv(p, nrows=0)
    if "timestamp" not in head.columns:
        raise SchemaError("CSV has no 'timestamp' column")
    need = {target} | (columns or set())
    if preset is not None:
        need |= presets.raw_columns_for(preset)
    missing_cols = sorted(need - set(head.columns))
    if missing_cols:
        raise SchemaError(f"missing column(s): {', '.join(missing_cols)}")
    _check_raw_timestamps(p)
    t = read_csv(p, target)
    findings = []
    gaps = t.gaps()
    if gaps:
        findings.append(f"{gaps} missing half-hour step(s) in the timestamp sequence")
    miss = t.missing()
    for c, k in miss.items():
        if k:
            findings.append(f"column {c!r}: {k} missing value(s)")
    for c in ("wind_capacity", "solar_capacity"):
        if c in t:
            x = t.column(c)
            nonpos = int(np.sum(np.isfinite(x) & (x <= 0)))
            if nonpos:
                findings.append(f"column {c!r}: {nonpos} nonpositive value(s)")
    fmt = "%Y-%m-%dT%H:%M:%SZ"
    return ValidationReport(str(p), len(t), t.index[0].strftime(fmt) if len(t) else None,
                            t.index[-1].strftime(fmt) if len(t) else None, gaps, miss, findings)


def load_dataset(path: str | Path, target: str = "netload") -> TimeTable:
    _check_raw_timestamps(Path(path))
    return read_csv(path, target)

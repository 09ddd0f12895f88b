"""Time series of run diagnostics with a fixed column schema and CSV round-trip."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigurationError
from .functionals import free_energy
from .grid import (DensityField, boundary_mass_fraction, center_of_mass, mass,
                   second_moment, upsilon_moment)
from .potential import newtonian_potential

UPSILON_P = 1.5

UNITS = {
    "t": "time",
    "mass": "mass",
    "com": "length",
    "M2": "mass*length^2",
    "upsilon": "mass*length^3",
    "entropy": "mass (nats)",
    "entropy_positive": "mass (nats)",
    "interaction": "mass^2",
    "free_energy": "mass (nats)",
    "dissipation": "mass/length^2",
    "fisher": "mass/length^2",
    "dw2": "mass*length^2",
    "admissibility_margin": "mass (nats)",
    "max_density": "mass/length^2",
    "boundary_mass_fraction": "1",
}


def columns(n: int) -> list[str]:
    """Column names in their fixed order for ``n`` species."""
    sp = lambda name: [f"{name}_{i + 1}" for i in range(n)]
    return (["t"] + sp("mass") + ["com_x", "com_y", "M2", "upsilon_1.5", "entropy",
            "entropy_positive", "interaction", "free_energy", "dissipation", "fisher"]
            + sp("dw2") + ["admissibility_margin"] + sp("max_density")
            + ["boundary_mass_fraction", "stop_reason"])


@dataclass
class TimeSeries:
    """Rows of diagnostics plus run metadata and optional field snapshots.

    ``meta`` carries what replaying diagnostics needs: ``kind`` (jko or fv),
    ``A``, ``beta``, ``L``, ``N`` and, for JKO runs, ``tau`` and ``epsilon``.
    """

    n: int
    meta: dict = field(default_factory=dict)
    rows: list = field(default_factory=list)
    stop_reason: str = ""
    snapshots: list = field(default_factory=list)  # (t, DensityField)

    @property
    def names(self) -> list[str]:
        return columns(self.n)

    def append(self, row: dict) -> None:
        missing = set(self.names) - set(row) - {"stop_reason"}
        if missing:
            raise ConfigurationError(f"row is missing columns {sorted(missing)}")
        self.rows.append(row)

    def column(self, name: str) -> np.ndarray:
        return np.array([r[name] for r in self.rows], dtype=float)

    def species_columns(self, name: str) -> np.ndarray:
        """``(rows, n)`` array of a per-species quantity."""
        return np.column_stack([self.column(f"{name}_{i + 1}") for i in range(self.n)])

    @property
    def t(self) -> np.ndarray:
        return self.column("t")

    def __len__(self):
        return len(self.rows)

    def snapshot_at(self, t: float) -> DensityField:
        best = min(self.snapshots, key=lambda s: abs(s[0] - t))
        return best[1]


def _fmt(x) -> str:
    if isinstance(x, str):
        return x
    if x is None or (isinstance(x, float) and math.isnan(x)):
        return "nan"
    return format(float(x), ".17g")


def write_csv(series: TimeSeries, path) -> None:
    """UTF-8 CSV: ``#`` comment lines (units and metadata), header, one row per sample."""
    names = series.names
    path = Path(path)
    with path.open("w", encoding="utf-8", newline="") as fh:
        fh.write("# pks time series; units: " + "; ".join(f"{k}={v}" for k, v in UNITS.items()) + "\n")
        for k, v in series.meta.items():
            fh.write(f"# {k} = {_meta_str(v)}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(names)
        last = len(series.rows) - 1
        for i, r in enumerate(series.rows):
            out = [_fmt(r.get(c)) for c in names[:-1]]
            out.append(series.stop_reason if i == last else "")
            w.writerow(out)


def _meta_str(v) -> str:
    a = np.asarray(v)
    if a.ndim == 0:
        return str(v)
    if a.ndim == 1:
        return ", ".join(_fmt(x) for x in a)
    return "; ".join(", ".join(_fmt(x) for x in row) for row in a)


def _meta_parse(s: str):
    s = s.strip()
    if ";" in s:
        return np.array([[float(x) for x in row.split(",")] for row in s.split(";")])
    if "," in s:
        return np.array([float(x) for x in s.split(",")])
    try:
        return float(s)
    except ValueError:
        return s


def read_csv(path) -> TimeSeries:
    meta = {}
    body = []
    with Path(path).open(encoding="utf-8") as fh:
        for line in fh:
            if line.startswith("#"):
                if " = " in line:
                    k, v = line[1:].split(" = ", 1)
                    meta[k.strip()] = _meta_parse(v)
            else:
                body.append(line)
    reader = csv.reader(body)
    header = next(reader)
    n = sum(1 for c in header if c.startswith("mass_"))
    if header != columns(n):
        raise ConfigurationError(f"{path}: unexpected column layout")
    s = TimeSeries(n, meta)
    for rec in reader:
        if not rec:
            continue
        row = {c: float(x) for c, x in zip(header[:-1], rec[:-1])}
        s.rows.append(row)
        if rec[-1]:
            s.stop_reason = rec[-1]
    return s


def diagnostics_row(field: DensityField, A, t: float, dw2=None, margin: float | None = None) -> dict:
    """All per-state columns for one sample; ``dw2`` and ``margin`` are JKO-only."""
    n = field.n
    A = np.atleast_2d(np.asarray(A, dtype=float))
    pot = newtonian_potential(field) if A.any() else None
    e = free_energy(field, A, pot)
    m = mass(field)
    com = center_of_mass(field)
    dens_max = field.values.reshape(n, -1).max(axis=1)
    row = {"t": float(t), "com_x": com[0], "com_y": com[1], "M2": second_moment(field),
           "upsilon_1.5": upsilon_moment(field, UPSILON_P), "entropy": e.entropy,
           "entropy_positive": e.entropy_positive, "interaction": e.interaction,
           "free_energy": e.free_energy, "dissipation": e.dissipation, "fisher": e.fisher,
           "admissibility_margin": math.nan if margin is None else float(margin),
           "boundary_mass_fraction": boundary_mass_fraction(field)}
    d = np.full(n, math.nan) if dw2 is None else np.asarray(dw2, dtype=float)
    for i in range(n):
        row[f"mass_{i + 1}"] = m[i]
        row[f"dw2_{i + 1}"] = d[i]
        row[f"max_density_{i + 1}"] = dens_max[i]
    return row


def concentrated_species(field: DensityField, fraction: float = 0.25) -> np.ndarray:
    """Species holding at least ``fraction`` of their mass in one cell."""
    cell_max = field.values.reshape(field.n, -1).max(axis=1) * field.grid.cell_area
    return np.flatnonzero(cell_max >= fraction * field.target_mass)

"""CSV, PGM heatmap and raw snapshot emission."""

from __future__ import annotations

import re
from pathlib import Path

import numpy as np

from .errors import ConfigurationError
from .grid import DensityField, write_raw
from .series import TimeSeries, write_csv


def emit_csv(series: TimeSeries, path) -> None:
    write_csv(series, path)


def heatmap_bytes(values: np.ndarray) -> bytes:
    """8-bit binary PGM of one ``N x N`` field, linear in ``[0, max]``.

    Image rows run from high to low ``y`` and columns from low to high ``x``;
    the per-file maximum is stored in the comment line.
    """
    v = np.asarray(values, dtype=float)
    if v.ndim != 2:
        raise ConfigurationError("heatmap needs a 2-D field")
    vmax = float(v.max()) if v.size else 0.0
    img = v.T[::-1]
    if vmax > 0:
        pix = np.clip(np.rint(img / vmax * 255.0), 0, 255).astype(np.uint8)
    else:
        pix = np.zeros(img.shape, dtype=np.uint8)
    header = f"P5\n# max = {vmax:.17g}\n{img.shape[1]} {img.shape[0]}\n255\n".encode("ascii")
    return header + pix.tobytes()


def emit_heatmap(field: DensityField | np.ndarray, path, species: int = 0) -> None:
    values = field.values[species] if isinstance(field, DensityField) else field
    Path(path).write_bytes(heatmap_bytes(values))


def read_pgm(path) -> tuple[np.ndarray, float]:
    """Pixels (rows top to bottom) and the recorded maximum of a heatmap."""
    data = Path(path).read_bytes()
    m = re.match(rb"P5\n# max = (\S+)\n(\d+) (\d+)\n255\n", data)
    if not m:
        raise ConfigurationError(f"{path}: not a heatmap written by this package")
    w, h = int(m.group(2)), int(m.group(3))
    pix = np.frombuffer(data[m.end():], dtype=np.uint8)
    if pix.size != w * h:
        raise ConfigurationError(f"{path}: truncated image")
    return pix.reshape(h, w), float(m.group(1))


def emit_snapshot(field: DensityField, outdir, index: int, heatmaps: bool = True, raw: bool = False) -> list[Path]:
    """One heatmap per species and optionally a raw field file for snapshot ``index``."""
    outdir = Path(outdir)
    written = []
    if heatmaps:
        for i in range(field.n):
            p = outdir / f"heatmap_s{i + 1}_{index:05d}.pgm"
            emit_heatmap(field, p, i)
            written.append(p)
    if raw:
        p = outdir / f"field_{index:05d}.raw"
        write_raw(p, field)
        written.append(p)
    return written

"""File formats: camera JSON, PFM and 16-bit PNG maps, and small JSON/CSV helpers.

Missing estimates are NaN in memory and in PFM files. In 16-bit PNGs they are
stored as 0, with the value scale kept in a sidecar ``<name>.png.json``.
"""

from __future__ import annotations

import csv
import json
import re
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from PIL import Image

from .geometry import CameraModel


class DataError(ValueError):
    """Malformed or missing input data."""


# -- JSON ---------------------------------------------------------------------


def write_json(path: str | Path, data) -> None:
    """Stable JSON: sorted keys, fixed indentation, trailing newline."""
    Path(path).write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")


def read_json(path: str | Path):
    path = Path(path)
    if not path.is_file():
        raise DataError(f"missing file {path}")
    try:
        return json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: invalid JSON ({exc.msg} at line {exc.lineno})") from None


def write_camera(path: str | Path, cam: CameraModel) -> None:
    write_json(path, cam.to_dict())


def read_camera(path: str | Path) -> CameraModel:
    try:
        return CameraModel.from_dict(read_json(path))
    except (TypeError, ValueError) as exc:
        if isinstance(exc, DataError):
            raise
        raise DataError(f"{path}: {exc}") from None


# -- PFM ----------------------------------------------------------------------


def write_pfm(path: str | Path, data: np.ndarray) -> None:
    """Single-channel little-endian PFM (scale -1.0), rows stored bottom-up."""
    data = np.asarray(data)
    if data.ndim != 2:
        raise ValueError(f"PFM maps must be 2-D, got shape {data.shape}")
    h, w = data.shape
    header = f"Pf\n{w} {h}\n-1.0\n".encode("ascii")
    body = np.ascontiguousarray(np.flipud(data).astype("<f4")).tobytes()
    Path(path).write_bytes(header + body)


_PFM_HEADER = re.compile(rb"^(Pf|PF)\s+(\d+)\s+(\d+)\s+(\S+)\s")


def read_pfm(path: str | Path) -> np.ndarray:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"missing file {path}")
    raw = path.read_bytes()
    m = _PFM_HEADER.match(raw)
    if m is None:
        raise DataError(f"{path}: not a PFM file")
    kind, w, h, scale = m.group(1), int(m.group(2)), int(m.group(3)), float(m.group(4))
    if kind != b"Pf":
        raise DataError(f"{path}: only single-channel PFM is supported")
    dtype = "<f4" if scale < 0 else ">f4"
    body = raw[m.end() :]
    if len(body) != 4 * w * h:
        raise DataError(f"{path}: expected {w}x{h} floats, found {len(body)} bytes")
    arr = np.frombuffer(body, dtype=dtype).reshape(h, w)
    return np.flipud(arr).astype(np.float64)


# -- 16-bit PNG -----------------------------------------------------------------

PNG_MAX = 65535


def write_png16(path: str | Path, data: np.ndarray, scale: float | None = None) -> float:
    """Quantise ``data`` to uint16 with ``value = round(x / scale)``; 0 marks NaN.

    Values that would round to 0 are stored as 1 so they stay valid. The
    default scale maps the largest finite value to 65535. Returns the scale.
    """
    data = np.asarray(data, dtype=np.float64)
    if data.ndim != 2:
        raise ValueError(f"PNG maps must be 2-D, got shape {data.shape}")
    ok = np.isfinite(data)
    if np.any(data[ok] < 0):
        raise ValueError("16-bit PNG maps must be non-negative")
    if scale is None:
        top = float(data[ok].max()) if ok.any() else 1.0
        scale = top / PNG_MAX if top > 0 else 1.0
    if not scale > 0:
        raise ValueError("PNG scale must be positive")
    q = np.clip(np.rint(np.where(ok, data, 0.0) / scale), 1, PNG_MAX)
    q = np.where(ok, q, 0).astype(np.uint16)
    Image.fromarray(q).save(path, format="PNG")
    write_json(str(path) + ".json", {"scale": scale, "sentinel": 0})
    return scale


def read_png16(path: str | Path) -> np.ndarray:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"missing file {path}")
    meta = read_json(str(path) + ".json")
    if "scale" not in meta:
        raise DataError(f"{path}.json: missing scale")
    q = np.asarray(Image.open(path)).astype(np.float64)
    if q.ndim != 2:
        raise DataError(f"{path}: expected a single-channel image")
    return np.where(q == 0, np.nan, q * float(meta["scale"]))


def read_map(path: str | Path) -> np.ndarray:
    path = Path(path)
    if path.suffix.lower() == ".png":
        return read_png16(path)
    return read_pfm(path)


# -- CSV ------------------------------------------------------------------------


def fmt(value) -> str:
    """Fixed float formatting so CSV output is stable; ``None`` becomes ``NA``."""
    if value is None:
        return "NA"
    if isinstance(value, (bool, np.bool_)):
        return str(int(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        if not np.isfinite(value):
            return "nan" if np.isnan(value) else ("inf" if value > 0 else "-inf")
        return f"{float(value):.10g}"
    return str(value)


def write_csv(path: str | Path, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([fmt(v) for v in row])


def read_csv(path: str | Path) -> list[dict]:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"missing file {path}")
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))

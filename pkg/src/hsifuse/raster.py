"""Raster containers and their on-disk formats.

A cube lives in two files: a text header (``key=value`` lines) and a raw
little-endian float32 blob in band-sequential order (each band's full
row-major plane, one band after another). Label maps are plain text:
``width height num_classes`` on the first line, then row-major integers.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

HEADER_KEYS = ("width", "height", "bands", "dtype", "interleave", "byteorder")
RAW_DTYPE = np.dtype("<f4")


class RasterError(ValueError):
    """Malformed header, inconsistent raw file, or invalid raster values."""


@dataclass
class HsiCube:
    """Image cube of per-pixel spectra, shape (height, width, bands)."""

    data: np.ndarray

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim != 3:
            raise RasterError(f"cube data must be 3-D, got shape {self.data.shape}")
        h, w, b = self.data.shape
        if h < 1 or w < 1 or b < 1:
            raise RasterError(f"cube dimensions must be >= 1, got {h}x{w}x{b}")
        if not np.all(np.isfinite(self.data)):
            raise RasterError("cube contains non-finite values")

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def bands(self) -> int:
        return self.data.shape[2]

    def pixels(self) -> np.ndarray:
        """Flattened (height*width, bands) view, row-major pixel order."""
        return self.data.reshape(-1, self.bands)


@dataclass
class LabelMap:
    """Integer class raster; 0 marks unlabeled pixels, classes run 1..num_classes."""

    labels: np.ndarray
    num_classes: int

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int32)
        if self.labels.ndim != 2:
            raise RasterError(f"label map must be 2-D, got shape {self.labels.shape}")
        if self.num_classes < 1:
            raise RasterError("num_classes must be >= 1")
        if self.labels.min() < 0 or self.labels.max() > self.num_classes:
            raise RasterError(
                f"labels must lie in [0, {self.num_classes}], "
                f"got range [{self.labels.min()}, {self.labels.max()}]"
            )

    @property
    def height(self) -> int:
        return self.labels.shape[0]

    @property
    def width(self) -> int:
        return self.labels.shape[1]


# Per-pixel probability vectors may overshoot [0, 1] by at most this much
# (solver tolerance) before clamping; larger excursions are an error.
PROB_SLACK = 1e-6
PROB_SUM_TOL = 1e-5


@dataclass
class ProbStack:
    """Per-pixel class probabilities, shape (height, width, num_classes).

    Entries are validated to sit within PROB_SLACK of [0, 1] and to sum to
    one per pixel within PROB_SUM_TOL, then clamped onto [0, 1] exactly.
    """

    probs: np.ndarray

    def __post_init__(self):
        self.probs = np.asarray(self.probs, dtype=np.float64)
        if self.probs.ndim != 3:
            raise RasterError(f"probability stack must be 3-D, got {self.probs.shape}")
        if not np.all(np.isfinite(self.probs)):
            raise RasterError("probability stack contains non-finite values")
        lo, hi = self.probs.min(), self.probs.max()
        if lo < -PROB_SLACK or hi > 1.0 + PROB_SLACK:
            raise RasterError(f"probabilities outside [0,1] slack: min={lo}, max={hi}")
        sums = self.probs.sum(axis=2)
        worst = np.abs(sums - 1.0).max()
        if worst > PROB_SUM_TOL:
            raise RasterError(f"per-pixel probability sums deviate from 1 by {worst}")
        self.probs = np.clip(self.probs, 0.0, 1.0)

    @property
    def height(self) -> int:
        return self.probs.shape[0]

    @property
    def width(self) -> int:
        return self.probs.shape[1]

    @property
    def num_classes(self) -> int:
        return self.probs.shape[2]

    def to_cube(self) -> HsiCube:
        return HsiCube(self.probs.copy())

    @staticmethod
    def from_cube(cube: HsiCube) -> "ProbStack":
        return ProbStack(cube.data.copy())


def raw_path_for(header_path) -> Path:
    return Path(header_path).with_suffix(".raw")


def _parse_header(header_path: Path) -> dict:
    fields = {}
    for lineno, line in enumerate(header_path.read_text(encoding="utf-8").splitlines(), 1):
        line = line.strip()
        if not line:
            continue
        if "=" not in line:
            raise RasterError(f"{header_path}:{lineno}: expected key=value, got {line!r}")
        key, _, value = line.partition("=")
        fields[key.strip()] = value.strip()
    missing = [k for k in HEADER_KEYS if k not in fields]
    if missing:
        raise RasterError(f"{header_path}: missing header keys {missing}")
    unknown = [k for k in fields if k not in HEADER_KEYS]
    if unknown:
        raise RasterError(f"{header_path}: unknown header keys {unknown}")
    return fields


def load_cube(header_path) -> HsiCube:
    """Read a cube from its header file and companion .raw file.

    Values are returned untouched; no normalization happens at load time.
    """
    header_path = Path(header_path)
    if not header_path.is_file():
        raise RasterError(f"header file not found: {header_path}")
    raw_path = raw_path_for(header_path)
    if not raw_path.is_file():
        raise RasterError(f"raw file not found: {raw_path}")

    fields = _parse_header(header_path)
    if fields["dtype"] != "float32":
        raise RasterError(f"unsupported dtype {fields['dtype']!r} (only float32)")
    if fields["interleave"] != "bsq":
        raise RasterError(f"unsupported interleave {fields['interleave']!r} (only bsq)")
    if fields["byteorder"] != "little":
        raise RasterError(f"unsupported byteorder {fields['byteorder']!r} (only little)")
    try:
        width = int(fields["width"])
        height = int(fields["height"])
        bands = int(fields["bands"])
    except ValueError as exc:
        raise RasterError(f"{header_path}: non-integer dimension: {exc}") from exc
    if width < 1 or height < 1 or bands < 1:
        raise RasterError(f"{header_path}: dimensions must be >= 1")

    expected = height * width * bands * RAW_DTYPE.itemsize
    actual = os.path.getsize(raw_path)
    if actual != expected:
        raise RasterError(
            f"{raw_path}: size mismatch: header implies {expected} bytes, file has {actual}"
        )
    flat = np.fromfile(raw_path, dtype=RAW_DTYPE)
    planes = flat.reshape(bands, height, width)  # bsq: one full plane per band
    data = np.moveaxis(planes, 0, 2)
    if not np.all(np.isfinite(data)):
        raise RasterError(f"{raw_path}: non-finite values in raw data")
    return HsiCube(data)


def write_cube(cube: HsiCube, header_path) -> None:
    """Write a cube as header + raw float32 pair (inverse of load_cube)."""
    header_path = Path(header_path)
    lines = [
        f"width={cube.width}",
        f"height={cube.height}",
        f"bands={cube.bands}",
        "dtype=float32",
        "interleave=bsq",
        "byteorder=little",
    ]
    header_path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    planes = np.moveaxis(cube.data, 2, 0)
    planes.astype(RAW_DTYPE).tofile(raw_path_for(header_path))


def load_labels(path) -> LabelMap:
    path = Path(path)
    if not path.is_file():
        raise RasterError(f"label file not found: {path}")
    tokens = path.read_text(encoding="utf-8").split()
    if len(tokens) < 3:
        raise RasterError(f"{path}: label file too short")
    try:
        width, height, num_classes = (int(t) for t in tokens[:3])
        values = np.array([int(t) for t in tokens[3:]], dtype=np.int32)
    except ValueError as exc:
        raise RasterError(f"{path}: non-integer token: {exc}") from exc
    if values.size != width * height:
        raise RasterError(
            f"{path}: expected {width * height} labels, found {values.size}"
        )
    return LabelMap(values.reshape(height, width), num_classes)


def write_labels(labels: LabelMap, path) -> None:
    path = Path(path)
    rows = [f"{labels.width} {labels.height} {labels.num_classes}"]
    for row in labels.labels:
        rows.append(" ".join(str(int(v)) for v in row))
    path.write_text("\n".join(rows) + "\n", encoding="utf-8")


def normalize_bands(cube: HsiCube) -> HsiCube:
    """Affinely map each band to [0, 1] independently; constant bands go to zero."""
    data = cube.data
    lo = data.min(axis=(0, 1), keepdims=True)
    hi = data.max(axis=(0, 1), keepdims=True)
    span = hi - lo
    out = np.zeros_like(data)
    np.divide(data - lo, span, out=out, where=span > 0)
    return HsiCube(out)


def quantize32(cube_or_stack):
    """Round values through the float32 container precision.

    Applied at pipeline stage boundaries so an in-memory run and a run that
    persists/reloads every intermediate artifact produce identical results.
    """
    if isinstance(cube_or_stack, HsiCube):
        return HsiCube(cube_or_stack.data.astype(np.float32).astype(np.float64))
    if isinstance(cube_or_stack, ProbStack):
        return ProbStack(cube_or_stack.probs.astype(np.float32).astype(np.float64))
    arr = np.asarray(cube_or_stack)
    return arr.astype(np.float32).astype(np.float64)

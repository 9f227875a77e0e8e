"""Spectral dimension reduction by contiguous band-group averaging."""

from __future__ import annotations

import numpy as np

from .raster import HsiCube


def band_groups(bands: int, m: int) -> list[tuple[int, int]]:
    """Contiguous [start, stop) index ranges: size bands//m, remainder to the last."""
    if m < 1:
        raise ValueError("M must be >= 1")
    if m > bands:
        raise ValueError(f"M={m} exceeds band count {bands}")
    size = bands // m
    edges = [g * size for g in range(m)] + [bands]
    return [(edges[g], edges[g + 1]) for g in range(m)]


def reduce_bands(cube: HsiCube, m: int) -> HsiCube:
    """Average each contiguous band group into one output band, per pixel."""
    groups = band_groups(cube.bands, m)
    out = np.empty((cube.height, cube.width, m), dtype=np.float64)
    for g, (start, stop) in enumerate(groups):
        # fixed left-to-right sum keeps single-threaded results bit-stable
        out[:, :, g] = np.add.reduce(cube.data[:, :, start:stop], axis=2) / (stop - start)
    return HsiCube(out)

"""MAD-based despeckling and zonal damage-map aggregation.

The despeckler replaces only pixels deviating from the local median by more
than a MAD multiple (strict inequality, so constant regions never churn),
iterated a configurable number of times. Spatial mode filters each raster
over a square window; temporal mode treats each pixel independently across
a co-registered stack. Aggregation averages damage fractions over square
pixel boxes, bins boxes into log-spaced annuli around the epicenter and
keeps the top-percentile boxes per annulus.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .data import SarBox

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Raster:
    """Row-major grid; origin (x0, y0) is the outer corner of pixel (0, 0)
    and pixel centers sit at half-pixel offsets."""

    rows: int
    cols: int
    x0: float
    y0: float
    pixel_size_m: float
    values: np.ndarray

    def __post_init__(self) -> None:
        v = np.asarray(self.values, dtype=float)
        if v.shape != (self.rows, self.cols):
            raise ValueError(f"values shape {v.shape} != ({self.rows}, {self.cols})")
        if self.pixel_size_m <= 0:
            raise ValueError("pixel_size_m must be positive")
        object.__setattr__(self, "values", v)


def read_raster(path: str) -> Raster:
    """Plain-text format: header 'rows cols x0 y0 pixel_size', then the
    whitespace-separated row-major values."""
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().split()
        if len(header) != 5:
            raise ValueError(f"raster header must have 5 fields, got {len(header)}")
        rows, cols = int(header[0]), int(header[1])
        x0, y0, pix = float(header[2]), float(header[3]), float(header[4])
        body = np.loadtxt(fh, dtype=float).ravel()
    if body.size != rows * cols:
        raise ValueError(f"expected {rows * cols} values, got {body.size}")
    return Raster(rows, cols, x0, y0, pix, body.reshape(rows, cols))


def write_raster(raster: Raster, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"{raster.rows} {raster.cols} {raster.x0!r} {raster.y0!r} "
                 f"{raster.pixel_size_m!r}\n")
        for row in raster.values:
            fh.write(" ".join(repr(float(v)) for v in row) + "\n")


@dataclass(frozen=True)
class SpikeAdConfig:
    window: int = 11
    mad_threshold: float = 3.0
    iterations: int = 4
    mode: str = "spatial"  # or "temporal"

    def __post_init__(self) -> None:
        if self.window < 3 or self.window % 2 == 0:
            raise ValueError("window must be odd and at least 3")
        if self.iterations < 1:
            raise ValueError("iterations must be at least 1")
        if self.mode not in ("spatial", "temporal"):
            raise ValueError("mode must be 'spatial' or 'temporal'")


def _window_stack(a: np.ndarray, window: int) -> np.ndarray:
    """(rows, cols, window*window) neighborhoods, NaN-padded at the edges so
    border pixels see only their in-bounds sub-window."""
    half = window // 2
    padded = np.pad(a, half, mode="constant", constant_values=np.nan)
    view = np.lib.stride_tricks.sliding_window_view(padded, (window, window))
    return view.reshape(a.shape[0], a.shape[1], window * window)


def _despeckle_spatial_once(a: np.ndarray, window: int, threshold: float) -> np.ndarray:
    neigh = _window_stack(a, window)
    med = np.nanmedian(neigh, axis=2)
    mad = np.nanmedian(np.abs(neigh - med[..., None]), axis=2)
    out = a.copy()
    mask = np.abs(a - med) > threshold * mad
    out[mask] = med[mask]
    return out


def _despeckle_temporal_once(stack: np.ndarray, threshold: float) -> np.ndarray:
    med = np.median(stack, axis=0)
    mad = np.median(np.abs(stack - med[None]), axis=0)
    out = stack.copy()
    mask = np.abs(stack - med[None]) > threshold * mad[None]
    out[mask] = np.broadcast_to(med[None], stack.shape)[mask]
    return out


def spikead(stack: Sequence[Raster], cfg: SpikeAdConfig = SpikeAdConfig()
            ) -> list[Raster]:
    """Iterative selective median replacement; returns filtered rasters."""
    rasters = list(stack)
    if not rasters:
        raise ValueError("empty raster stack")
    if cfg.mode == "spatial":
        out = []
        for r in rasters:
            a = r.values
            for _ in range(cfg.iterations):
                a = _despeckle_spatial_once(a, cfg.window, cfg.mad_threshold)
            out.append(replace(r, values=a))
        return out
    if len(rasters) < 3:
        raise ValueError("temporal mode needs at least 3 co-registered rasters")
    shape = rasters[0].values.shape
    for r in rasters[1:]:
        if r.values.shape != shape:
            raise ValueError("temporal mode requires identical raster shapes")
    arr = np.stack([r.values for r in rasters])
    for _ in range(cfg.iterations):
        arr = _despeckle_temporal_once(arr, cfg.mad_threshold)
    return [replace(r, values=arr[i]) for i, r in enumerate(rasters)]


def composite(rasters: Sequence[Raster]) -> Raster:
    """Pixel-wise sum of co-registered damage maps, normalized by the
    maximum so the composite stays in [0, 1]."""
    if not rasters:
        raise ValueError("empty raster stack")
    shape = rasters[0].values.shape
    for r in rasters[1:]:
        if r.values.shape != shape:
            raise ValueError("composite requires identical raster shapes")
    total = np.sum([r.values for r in rasters], axis=0)
    peak = float(total.max())
    if peak <= 0:
        raise ValueError("composite has no positive damage signal")
    return replace(rasters[0], values=total / peak)


def zonal_aggregate(damage: Raster, epicenter: tuple[float, float],
                    box: int = 10, n_annuli: int = 15,
                    r_inner_m: float = 200.0, r_outer_m: float = 8000.0,
                    percentile: float = 95.0) -> list[SarBox]:
    """Box-average the damage raster, bin boxes into log-spaced annuli by
    center distance and keep each annulus's top-percentile boxes."""
    if not (0.0 <= percentile < 100.0):
        raise ValueError("percentile must lie in [0, 100)")
    if r_inner_m <= 0 or r_outer_m <= r_inner_m:
        raise ValueError("need 0 < r_inner_m < r_outer_m")
    vals = damage.values
    if vals.min() < 0.0 or vals.max() > 1.0:
        raise ValueError("damage raster values must be fractions in [0, 1]")
    ex, ey = epicenter
    pix = damage.pixel_size_m

    boxes = []  # (distance, damage_pct, tile_row, tile_col)
    for br in range(0, damage.rows, box):
        for bc in range(0, damage.cols, box):
            tile = vals[br:br + box, bc:bc + box]
            rr, cc = tile.shape
            cx = damage.x0 + (bc + cc / 2.0) * pix
            cy = damage.y0 + (br + rr / 2.0) * pix
            dist = math.hypot(cx - ex, cy - ey)
            boxes.append((dist, 100.0 * float(tile.mean()), br // box, bc // box))

    edges = np.geomspace(r_inner_m, r_outer_m, n_annuli + 1)
    retained: list[SarBox] = []
    empty = 0
    for k in range(n_annuli):
        members = [b for b in boxes if edges[k] <= b[0] < edges[k + 1]] \
            if k < n_annuli - 1 else \
            [b for b in boxes if edges[k] <= b[0] <= edges[k + 1]]
        if not members:
            empty += 1
            continue
        threshold = float(np.percentile([b[1] for b in members], percentile))
        keep = sorted((b for b in members if b[1] >= threshold),
                      key=lambda b: (b[2], b[3]))
        retained.extend(SarBox(range_m=b[0], damage_pct=b[1]) for b in keep)
    if empty:
        log.warning("zonal_aggregate: %d of %d annuli empty", empty, n_annuli)
    return retained

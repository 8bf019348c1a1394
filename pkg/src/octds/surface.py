"""Depth extraction from undistorted slices.

Each flattened slice is cropped below its glass border and reduced along
depth by a maximum intensity projection; the argmax row of every column is
the wall depth at that angle. Stacking the per-slice signals gives the
unrolled drill-hole surface.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from ._validation import check_image
from .acquisition import SineModel
from .exceptions import OctdsError, PixelRangeError, ValidationError
from .raw_io import BScanPolar, VolumeStack, write_stack
from .undistort import FitReport, unwarp


@dataclass
class SurfaceMap:
    """Unrolled surface over ``(slice, angle)``.

    ``depth`` is in depth samples measured from the catheter axis of the
    undistorted slice; multiply by ``depth_resolution`` for micrometres.
    """

    depth: np.ndarray
    intensity: np.ndarray
    valid: np.ndarray
    depth_resolution: float = 1.0
    pullback_step: float = 1.0

    def __post_init__(self):
        self.depth = np.asarray(self.depth, dtype=float)
        self.intensity = np.asarray(self.intensity)
        self.valid = np.asarray(self.valid, dtype=bool)
        if not (self.depth.shape == self.intensity.shape == self.valid.shape) or self.depth.ndim != 2:
            raise ValidationError("depth, intensity and valid must share one 2-D shape", field="depth")

    @property
    def shape(self):
        return self.depth.shape

    def depth_um(self):
        return self.depth * self.depth_resolution


@dataclass
class HollowCylinderVolume:
    """Unwarped, cropped slices stacked as ``voxels[s, u, v]``.

    Voxel ``(s, u, v)`` sits at ``z = axial_positions[s]``,
    ``theta = 2*pi*u/n_angles`` and ``r = (crop_start[s] + v) * depth_resolution``.
    """

    voxels: np.ndarray
    crop_start: np.ndarray
    axial_positions: np.ndarray
    depth_resolution: float
    pullback_step: float

    @property
    def inner_radius(self):
        return np.asarray(self.crop_start, dtype=float) * self.depth_resolution

    def cylindrical(self, s, u, v):
        n = self.voxels.shape[1]
        s = np.asarray(s)
        z = np.asarray(self.axial_positions)[s]
        theta = 2.0 * math.pi * np.asarray(u) / n
        r = (np.asarray(self.crop_start)[s] + np.asarray(v)) * self.depth_resolution
        return z, theta, r

    def meta(self):
        return {
            "cylindrical": {
                "axis": ["slice", "angle", "depth"],
                "z_um": [float(a) for a in self.axial_positions],
                "theta": "2*pi*u/n_angles",
                "r_um": "(crop_start[s] + v) * depth_resolution",
                "crop_start": [int(c) for c in self.crop_start],
                "inner_radius_um": [float(r) for r in self.inner_radius],
            }
        }


def _intensity(bscan):
    return bscan.intensity if isinstance(bscan, BScanPolar) else np.asarray(bscan)


def crop_start_row(D, margin):
    return int(round(float(D))) + int(margin)


def crop_below_border(bscan, D, margin=8):
    """Keep depth rows ``[round(D) + margin, depth_samples)``."""
    img = check_image(_intensity(bscan), "intensity")
    start = crop_start_row(D, margin)
    if start < 0 or start >= img.shape[1]:
        raise PixelRangeError(
            f"crop start row {start} leaves nothing of {img.shape[1]} depth samples", start=start
        )
    out = img[:, start:]
    if isinstance(bscan, BScanPolar):
        return BScanPolar(out, bscan.axial_position)
    return out


def default_min_peak(cropped):
    c = np.asarray(cropped, dtype=float)
    return float(c.mean() + 2.0 * c.std())


def extract_depth(bscan, min_peak=None):
    """Per-column MIP along depth.

    Returns ``(row, peak, valid)``; ties go to the shallower row and columns
    whose peak is below ``min_peak`` (default mean + 2 sd of the slice) are
    flagged invalid.
    """
    img = check_image(_intensity(bscan), "intensity")
    row = np.argmax(img, axis=1)
    peak = img[np.arange(img.shape[0]), row]
    if min_peak is None:
        min_peak = default_min_peak(img)
    valid = (peak >= min_peak) & (peak > 0)
    return row.astype(float), peak, valid


def _fill_row(depth, valid):
    n = depth.size
    idx = np.nonzero(valid)[0]
    if idx.size == 0:
        return None
    if idx.size == n:
        return depth
    x = np.arange(n)
    return np.interp(x, idx, depth[idx], period=n)


def stack_surface(signals, depth_resolution=1.0, pullback_step=1.0) -> SurfaceMap:
    """Stack per-slice ``(row, peak, valid)`` signals into a :class:`SurfaceMap`.

    Invalid columns are filled by periodic linear interpolation along the
    angle axis of their own slice; a slice with no valid column takes the
    median valid depth of the map.
    """
    signals = list(signals)
    if not signals:
        raise ValidationError("need at least one slice signal", field="signals")
    width = len(signals[0][0])
    for i, sig in enumerate(signals):
        if any(len(a) != width for a in sig):
            raise ValidationError(f"signal {i} width differs from {width}", field="signals")
    depth = np.array([np.asarray(s[0], dtype=float) for s in signals])
    inten = np.array([np.asarray(s[1]) for s in signals])
    valid = np.array([np.asarray(s[2], dtype=bool) for s in signals])
    filled = depth.copy()
    empty = []
    for s in range(depth.shape[0]):
        row = _fill_row(depth[s], valid[s])
        if row is None:
            empty.append(s)
        else:
            filled[s] = row
    if empty:
        fallback = float(np.median(depth[valid])) if valid.any() else 0.0
        filled[empty] = fallback
    # interpolation must not leak into valid columns
    filled[valid] = depth[valid]
    return SurfaceMap(filled, inten, valid, depth_resolution, pullback_step)


def slice_signal(bscan, model: SineModel, margin=8, min_peak=None, interpolation="linear"):
    """Unwarp, crop and project one raw slice; depth is in absolute rows."""
    flat = unwarp(bscan, model, interpolation)
    return flat_slice_signal(flat, model.D, margin, min_peak)


def flat_slice_signal(flat, D, margin=8, min_peak=None):
    cropped = crop_below_border(flat, D, margin)
    row, peak, valid = extract_depth(cropped, min_peak)
    return row + crop_start_row(D, margin), peak, valid


def _models_from(fits):
    models = []
    for f in fits:
        models.append(f.model if isinstance(f, FitReport) else f)
    return models


def check_fits(fits, allow_rejected=False):
    bad = []
    for i, f in enumerate(fits):
        if isinstance(f, FitReport):
            if f.model is None or (not f.accepted and f.fallback_slice is None and not allow_rejected):
                bad.append(i)
        elif f is None:
            bad.append(i)
    if bad:
        raise OctdsError(f"fit rejected for slices {bad}", slices=bad)
    return _models_from(fits)


def build_volume(stack: VolumeStack, fits, margin=8, allow_rejected=False, interpolation="linear"):
    """Unwarp every slice, crop at its own border and stack to a common depth."""
    fits = list(fits)
    if len(fits) != len(stack):
        raise ValidationError(f"{len(stack)} slices but {len(fits)} fits", field="fits")
    models = check_fits(fits, allow_rejected)
    nd = stack.shape[2]
    starts = np.array([crop_start_row(m.D, margin) for m in models])
    if np.any(starts < 0) or np.any(starts >= nd):
        raise PixelRangeError("a crop start lies outside the depth range", starts=starts.tolist())
    rows = int(nd - starts.max())
    vox = np.empty((len(stack), stack.shape[1], rows), dtype=np.uint16)
    for i, m in enumerate(models):
        flat = unwarp(stack.data[i], m, interpolation)
        vox[i] = flat[:, starts[i]:starts[i] + rows]
    return HollowCylinderVolume(vox, starts, stack.axial_positions.copy(), stack.depth_resolution,
                                stack.pullback_step_d)


def write_volume(volume: HollowCylinderVolume, path):
    stack = VolumeStack(volume.voxels, volume.pullback_step, volume.depth_resolution,
                        volume.axial_positions, volume.meta())
    write_stack(stack, path)


class SurfaceExtractor(TransformerMixin, BaseEstimator):
    """Turn an undistorted stack into a :class:`SurfaceMap`.

    Border rows come from ``border_rows`` or, when that is None, from
    ``stack.extra['border_rows']`` as written by :class:`SliceUndistorter`.
    """

    def __init__(self, crop_margin=8, min_peak=None, border_rows=None):
        self.crop_margin = crop_margin
        self.min_peak = min_peak
        self.border_rows = border_rows

    def fit(self, X, y=None):
        return self

    def transform(self, X):
        if not isinstance(X, VolumeStack):
            raise ValidationError("SurfaceExtractor expects a VolumeStack", field="X")
        rows = self.border_rows if self.border_rows is not None else X.extra.get("border_rows")
        if rows is None or len(rows) != len(X):
            raise ValidationError("border rows missing or of wrong length", field="border_rows")
        signals = [flat_slice_signal(X.data[i], rows[i], self.crop_margin, self.min_peak) for i in range(len(X))]
        return stack_surface(signals, X.depth_resolution, X.pullback_step_d)

"""Polar unrolling of annular endoscope frames and feed-motion stitching."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy import ndimage
from sklearn.base import BaseEstimator, TransformerMixin

from ._validation import check_positive
from .endoscope import AnnulusFrame
from .exceptions import ConfigurationError, ValidationError


@dataclass
class Panorama:
    """Stitched wall image, ``image[row, column]`` with rows along the feed."""

    image: np.ndarray
    um_per_row: float
    um_per_column: float = float("nan")
    z_origin: float = 0.0

    @property
    def intensity(self):
        return self.image

    def row_positions(self):
        return self.z_origin + np.arange(self.image.shape[0]) * self.um_per_row


def stripe_rows(frame: AnnulusFrame):
    return int(math.floor(frame.r_outer - frame.r_inner)) + 1


def unroll_frame(frame: AnnulusFrame, columns, rows=None):
    """Sample the annulus on a (radius x angle) grid with bilinear interpolation.

    Row ``i`` lies at radius ``r_inner + i*(r_outer - r_inner)/(rows - 1)``,
    column ``j`` at angle ``2*pi*j/columns`` measured from the +x image axis
    towards +y (image rows).
    """
    if columns < 2:
        raise ConfigurationError(f"columns must be >= 2, got {columns}")
    rows = stripe_rows(frame) if rows is None else int(rows)
    if rows < 2:
        raise ConfigurationError(f"rows must be >= 2, got {rows}")
    cx, cy = frame.center
    r = frame.r_inner + np.arange(rows) * (frame.r_outer - frame.r_inner) / (rows - 1)
    th = 2.0 * math.pi * np.arange(columns) / columns
    x = cx + r[:, None] * np.cos(th)[None, :]
    y = cy + r[:, None] * np.sin(th)[None, :]
    img = np.asarray(frame.image, dtype=float)
    out = ndimage.map_coordinates(img, [y.ravel(), x.ravel()], order=1, mode="nearest").reshape(rows, columns)
    if np.issubdtype(frame.image.dtype, np.integer):
        info = np.iinfo(frame.image.dtype)
        return np.clip(np.rint(out), info.min, info.max).astype(frame.image.dtype)
    return out


def stripe_um_per_row(frame: AnnulusFrame, rows=None):
    rows = stripe_rows(frame) if rows is None else int(rows)
    return frame.window / (rows - 1)


def stitch(stripes, feed_step, um_per_row, positions=None) -> Panorama:
    """Concatenate the central band of every stripe in feed order.

    Each band is ``round(feed_step / um_per_row)`` rows. Without
    ``positions`` the bands are stacked back to back; with the frame centres
    given, each band is placed at its own axial position and later frames
    overwrite earlier ones where they overlap.
    """
    stripes = [np.asarray(s) for s in stripes]
    if not stripes:
        raise ValidationError("no stripes to stitch", field="stripes")
    check_positive(feed_step, "feed_step")
    check_positive(um_per_row, "um_per_row")
    rows, cols = stripes[0].shape
    for i, s in enumerate(stripes):
        if s.shape[1] != cols:
            raise ValidationError(f"stripe {i} has {s.shape[1]} columns, expected {cols}", field="stripes")
        if s.shape[0] != rows:
            raise ValidationError(f"stripe {i} has {s.shape[0]} rows, expected {rows}", field="stripes")
    h = int(round(feed_step / um_per_row))
    b0 = rows // 2 - h // 2
    if h < 1 or b0 < 0 or b0 + h > rows:
        raise ConfigurationError(f"band of {h} rows does not fit in stripes of {rows} rows")
    bands = [s[b0:b0 + h] for s in stripes]
    if positions is None:
        return Panorama(np.concatenate(bands, axis=0), float(um_per_row),
                        z_origin=(b0 - (rows - 1) / 2.0) * um_per_row)
    positions = np.asarray(positions, dtype=float)
    if positions.shape != (len(stripes),):
        raise ValidationError("need one position per stripe", field="positions")
    band_z = positions + (b0 - (rows - 1) / 2.0) * um_per_row
    z0 = float(band_z[0])
    starts = np.rint((band_z - z0) / um_per_row).astype(int)
    total = int(starts.max() + h)
    pano = np.zeros((total, cols), dtype=stripes[0].dtype)
    for st, band in zip(starts, bands):
        pano[st:st + h] = band
    return Panorama(pano, float(um_per_row), z_origin=z0)


def normalized_cross_correlation(a, b):
    a = np.asarray(a, dtype=float).ravel()
    b = np.asarray(b, dtype=float).ravel()
    a = a - a.mean()
    b = b - b.mean()
    den = math.sqrt(float((a * a).sum() * (b * b).sum()))
    return float((a * b).sum() / den) if den > 0 else 0.0


class PanoramaStitcher(TransformerMixin, BaseEstimator):
    """Frames in, :class:`Panorama` out."""

    def __init__(self, columns=1024, feed_step=200.0, rows=None, use_positions=True):
        self.columns = columns
        self.feed_step = feed_step
        self.rows = rows
        self.use_positions = use_positions

    def fit(self, X, y=None):
        return self

    def transform(self, X):
        frames = list(X)
        if not frames:
            raise ValidationError("no frames", field="frames")
        stripes = [unroll_frame(f, self.columns, self.rows) for f in frames]
        upr = stripe_um_per_row(frames[0], self.rows)
        pos = [f.axial_position for f in frames] if self.use_positions else None
        pano = stitch(stripes, self.feed_step, upr, pos)
        return pano

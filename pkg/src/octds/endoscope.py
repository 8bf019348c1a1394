"""Cone-mirror endoscope frames rendered from a phantom.

The mirror maps an axial window of the wall onto an annulus: image radius
runs linearly from the near end of the window (``r_inner``) to the far end
(``r_outer``), and polar angle is the wall angle.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import List, Optional

import numpy as np

from ._validation import check_nonnegative, check_positive
from .exceptions import ConfigurationError, ValidationError
from .phantom import PhantomGeometry

MIN_FRAME_SIZE = 64


@dataclass
class AnnulusFrame:
    image: np.ndarray
    center: tuple
    r_inner: float
    r_outer: float
    axial_position: float
    window: float = 0.0

    def __post_init__(self):
        img = np.asarray(self.image)
        if img.ndim != 2 or img.shape[0] != img.shape[1]:
            raise ValidationError(f"frame must be square, got shape {img.shape}", field="image")
        size = img.shape[0]
        if not 0 < self.r_inner < self.r_outer <= size / 2.0:
            raise ValidationError(
                f"need 0 < r_inner < r_outer <= {size / 2}, got {self.r_inner}, {self.r_outer}", field="r_outer"
            )
        cx, cy = self.center
        if not (0 <= cx < size and 0 <= cy < size):
            raise ValidationError(f"center {self.center} outside the image", field="center")
        self.image = img

    @property
    def size(self):
        return self.image.shape[0]

    def to_meta(self):
        return {
            "center": [float(c) for c in self.center],
            "r_inner": float(self.r_inner),
            "r_outer": float(self.r_outer),
            "axial_position": float(self.axial_position),
            "window": float(self.window),
        }


def frame_positions(hole_length, feed_step):
    """Centres of ``ceil(L / feed)`` frames; the last is clamped to the hole end."""
    n = int(math.ceil(hole_length / feed_step - 1e-9))
    pos = [(k + 0.5) * feed_step for k in range(n)]
    if pos:
        pos[-1] = min(pos[-1], hole_length - 0.5 * feed_step)
    return pos


def render_frame(geom: PhantomGeometry, z_center, frame_size, window, r_inner, r_outer,
                 speckle_sigma=0.0, rng=None):
    size = int(frame_size)
    c = (size - 1) / 2.0
    yy, xx = np.mgrid[0:size, 0:size].astype(float)
    r = np.hypot(xx - c, yy - c)
    theta = np.mod(np.arctan2(yy - c, xx - c), 2.0 * math.pi)
    ring = (r >= r_inner) & (r <= r_outer)
    z = z_center + ((r[ring] - r_inner) / (r_outer - r_inner) - 0.5) * window
    refl = geom.surface_reflectivity(z, theta[ring])
    vals = 255.0 * refl
    if speckle_sigma > 0:
        vals = vals * np.exp(speckle_sigma * rng.standard_normal(vals.shape) - 0.5 * speckle_sigma**2)
    img = np.zeros((size, size), dtype=np.uint8)
    img[ring] = np.clip(np.rint(vals), 0, 255).astype(np.uint8)
    return AnnulusFrame(img, (c, c), float(r_inner), float(r_outer), float(z_center), float(window))


def simulate_endo_frames(geom: PhantomGeometry, feed_step, frame_size=256, window=None,
                         r_inner_frac=0.2, r_outer_frac=0.45, speckle_sigma=0.0) -> List[AnnulusFrame]:
    """Render the frames of one pass through the hole, in feed order.

    ``window`` is the axial extent imaged by the annulus (default two feed
    steps, so consecutive frames overlap).
    """
    check_positive(feed_step, "feed_step")
    check_nonnegative(speckle_sigma, "speckle_sigma")
    if frame_size < MIN_FRAME_SIZE:
        raise ConfigurationError(f"frame_size {frame_size} px cannot resolve the annulus (minimum {MIN_FRAME_SIZE})")
    if window is None:
        window = 2.0 * feed_step
    check_positive(window, "window")
    if not 0 < r_inner_frac < r_outer_frac <= 0.5:
        raise ConfigurationError("annulus fractions must satisfy 0 < inner < outer <= 0.5")
    r_in, r_out = r_inner_frac * frame_size, r_outer_frac * frame_size
    frames = []
    for k, z in enumerate(frame_positions(geom.model.hole_length, feed_step)):
        rng = np.random.default_rng([int(geom.model.rng_seed), 0xE4D0, k])
        frames.append(render_frame(geom, z, frame_size, window, r_in, r_out, speckle_sigma, rng))
    return frames

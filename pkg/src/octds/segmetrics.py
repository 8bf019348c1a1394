"""Mastoid-pattern segmentation and overlap metrics.

Thresholds come from Li's minimum cross-entropy criterion on a 256-bin
histogram. For a split after bin ``t`` (low class = bins ``0..t``) with grey
levels ``g = bin + 1``, the quantity minimized is::

    eta(t) = -m_lo * ln(mu_lo) - m_hi * ln(mu_hi)

where ``m`` is a class's first moment and ``mu`` its mean level. The
stationarity condition gives Li and Tam's fixed-point iteration
``t <- (mu_lo - mu_hi) / (ln mu_lo - ln mu_hi)``, which can settle in a
local minimum; the default scans all 255 splits instead.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import check_image, check_mask, check_same_shape
from .exceptions import DegenerateInputError, ValidationError

NBINS = 256
SOURCES = ("oct_depth", "oct_intensity", "endo", "ground_truth")

# difference-image labels
NEITHER, ONLY_A, ONLY_B, BOTH = 0, 1, 2, 3
LEGEND = {"0": "neither", "1": "only_a", "2": "only_b", "3": "both"}


@dataclass
class PatternMask:
    mask: np.ndarray
    source: str = "ground_truth"

    def __post_init__(self):
        self.mask = check_mask(self.mask)
        if self.source not in SOURCES:
            raise ValidationError(f"unknown mask source {self.source!r}", field="source")

    @property
    def shape(self):
        return self.mask.shape


@dataclass
class MetricsReport:
    jaccard: float
    intersection_px: int
    union_px: int
    a_px: int
    b_px: int
    threshold_used: Optional[float] = None

    def to_dict(self):
        return {
            "jaccard": self.jaccard,
            "intersection_px": self.intersection_px,
            "union_px": self.union_px,
            "a_px": self.a_px,
            "b_px": self.b_px,
            "threshold_used": self.threshold_used,
        }


# -- histogram ---------------------------------------------------------------

def quantize(image):
    """Map an image onto 256 bins; returns ``(bins, lo, width)``.

    uint8 images use their values as bins directly (``lo=None``). Anything
    else is split into 256 equal-width bins over ``[min, max]``; a constant
    image gets ``width=0``.
    """
    img = check_image(image, "image")
    if img.dtype == np.uint8:
        return img.astype(np.intp), None, 1.0
    f = img.astype(float)
    lo, hi = float(f.min()), float(f.max())
    if hi <= lo:
        return np.zeros(f.shape, dtype=np.intp), lo, 0.0
    w = (hi - lo) / NBINS
    return _to_bins(f, lo, w), lo, w


def _to_bins(values, lo, w):
    if lo is None:
        return np.asarray(values).astype(np.intp)
    b = np.floor((np.asarray(values, dtype=float) - lo) / w).astype(np.intp)
    return np.clip(b, 0, NBINS - 1)


def _level(b, lo, w):
    return float(b) if lo is None else lo + (b + 0.5) * w


def histogram(bins):
    return np.bincount(np.asarray(bins).ravel(), minlength=NBINS).astype(float)


def cross_entropy(hist, t):
    """``eta(t)`` for a split after bin ``t``; ``inf`` if a class is empty."""
    h = np.asarray(hist, dtype=float)
    g = np.arange(1, h.size + 1, dtype=float)
    n_lo, n_hi = h[: t + 1].sum(), h[t + 1:].sum()
    if n_lo == 0 or n_hi == 0:
        return math.inf
    m_lo = (h[: t + 1] * g[: t + 1]).sum()
    m_hi = (h[t + 1:] * g[t + 1:]).sum()
    return -m_lo * math.log(m_lo / n_lo) - m_hi * math.log(m_hi / n_hi)


def _class_means(hist, t_level):
    """Mean grey level below/at and above a continuous level."""
    g = np.arange(1, hist.size + 1, dtype=float)
    lo = g <= t_level
    n_lo, n_hi = hist[lo].sum(), hist[~lo].sum()
    if n_lo == 0 or n_hi == 0:
        return None
    return (hist[lo] * g[lo]).sum() / n_lo, (hist[~lo] * g[~lo]).sum() / n_hi


def cross_entropy_curve(hist):
    """``eta(t)`` for every split ``t = 0..254`` from cumulative moments."""
    h = np.asarray(hist, dtype=float)
    g = np.arange(1, h.size + 1, dtype=float)
    n_lo = np.cumsum(h)[:-1]
    m_lo = np.cumsum(h * g)[:-1]
    n_hi = h.sum() - n_lo
    m_hi = (h * g).sum() - m_lo
    eta = np.full(n_lo.shape, np.inf)
    ok = (n_lo > 0) & (n_hi > 0)
    eta[ok] = -m_lo[ok] * np.log(m_lo[ok] / n_lo[ok]) - m_hi[ok] * np.log(m_hi[ok] / n_hi[ok])
    return eta


def _li_iterate(h, tol, max_iter):
    g = np.arange(1, h.size + 1, dtype=float)
    t = float((h * g).sum() / h.sum())
    for _ in range(max_iter):
        means = _class_means(h, t)
        if means is None:
            break
        mu_lo, mu_hi = means
        t_new = (mu_lo - mu_hi) / (math.log(mu_lo) - math.log(mu_hi))
        done = abs(t_new - t) < tol
        t = t_new
        if done:
            break
    return t


def li_threshold_bin(hist, method="global", tol=0.5, max_iter=1000):
    """Split bin minimizing the cross-entropy of a 256-bin histogram.

    ``method='global'`` scans every split and returns the minimizer (lowest
    bin on ties). ``'iterative'`` runs the Li-Tam fixed point from the mean
    and polishes it by discrete descent; on multimodal histograms that can
    stop in a local minimum. Either way the result is the last populated
    bin of the low class.
    """
    h = np.asarray(hist, dtype=float)
    populated = np.nonzero(h)[0]
    if populated.size < 2:
        raise DegenerateInputError("histogram has fewer than two populated bins")
    if method == "global":
        return int(np.argmin(cross_entropy_curve(h)))
    if method != "iterative":
        raise ValidationError(f"method must be 'global' or 'iterative', got {method!r}", field="method")
    t = _li_iterate(h, tol, max_iter)
    # candidate splits are populated bins except the last
    cands = populated[:-1]
    t_bin = int(math.floor(t)) - 1          # levels g <= t  <=>  bins <= t - 1
    k = int(np.searchsorted(cands, t_bin, side="right")) - 1
    k = min(max(k, 0), cands.size - 1)
    cost = {}

    def eta(i):
        if i not in cost:
            cost[i] = cross_entropy(h, int(cands[i]))
        return cost[i]

    while True:
        best = k
        for j in (k - 1, k + 1):
            if 0 <= j < cands.size and eta(j) < eta(best):
                best = j
        if best == k:
            break
        k = best
    return int(cands[k])


def _fit(image, method="global"):
    bins, lo, w = quantize(image)
    h = histogram(bins)
    if w == 0 or np.count_nonzero(h) < 2:
        raise DegenerateInputError("image has fewer than two distinct levels")
    t = li_threshold_bin(h, method)
    nxt = int(np.nonzero(h[t + 1:])[0][0]) + t + 1
    return t, 0.5 * (_level(t, lo, w) + _level(nxt, lo, w)), lo, w


def li_threshold(image, method="global"):
    """Minimum cross-entropy threshold in the image's own units.

    The value lies halfway between the top level of the low class and the
    bottom level of the high class.
    """
    return _fit(image, method)[1]


class LiThreshold(TransformerMixin, BaseEstimator):
    """Fit a Li threshold on an image; ``transform`` returns the foreground mask.

    ``polarity='bright'`` marks pixels whose bin lies above the split,
    ``'dark'`` the rest. Bins use the quantization fitted on the training
    image, so the mask reproduces the histogram split exactly.
    """

    def __init__(self, polarity="bright", method="global"):
        self.polarity = polarity
        self.method = method

    def fit(self, X, y=None):
        self.bin_, self.threshold_, self.lo_, self.width_ = _fit(X, self.method)
        return self

    def transform(self, X):
        check_is_fitted(self, "threshold_")
        above = _to_bins(check_image(X, "image"), self.lo_, self.width_) > self.bin_
        if self.polarity == "bright":
            return above
        if self.polarity == "dark":
            return ~above
        raise ValidationError(f"polarity must be 'bright' or 'dark', got {self.polarity!r}", field="polarity")


def _channel(obj, channel):
    if channel in ("depth", "oct_depth"):
        arr = getattr(obj, "depth", None)
    elif channel in ("intensity", "oct_intensity", "endo"):
        arr = getattr(obj, "intensity", None)
        if arr is None:
            arr = getattr(obj, "image", None)
    else:
        raise ValidationError(f"unknown channel {channel!r}", field="channel")
    if arr is None:
        if isinstance(obj, np.ndarray):
            return obj
        raise ValidationError(f"input has no {channel} channel", field="channel")
    return np.asarray(arr)


def segment(surface, channel="depth", polarity=None):
    """Threshold one channel of a SurfaceMap, Panorama or bare array.

    Depth foreground is "deeper than the wall" (pockets). Intensity defaults
    to dark foreground, since pocket floors return less light. A constant
    channel yields an all-background mask. Returns ``(PatternMask, threshold)``.
    """
    arr = _channel(surface, channel)
    if polarity is None:
        polarity = "bright" if channel in ("depth", "oct_depth") else "dark"
    source = {"depth": "oct_depth", "oct_depth": "oct_depth", "intensity": "oct_intensity",
              "oct_intensity": "oct_intensity", "endo": "endo"}[channel]
    if source == "oct_intensity" and not hasattr(surface, "depth"):
        source = "endo"
    try:
        est = LiThreshold(polarity).fit(arr)
    except DegenerateInputError:
        return PatternMask(np.zeros(arr.shape, dtype=bool), source), float(np.asarray(arr).flat[0])
    return PatternMask(est.transform(arr), source), float(est.threshold_)


def _mask_of(m):
    return check_mask(m.mask if isinstance(m, PatternMask) else m)


def jaccard(a, b, threshold_used=None) -> MetricsReport:
    """``|A & B| / |A | B|``; two empty masks score 1."""
    A, B = _mask_of(a), _mask_of(b)
    check_same_shape(A, B)
    inter = int(np.count_nonzero(A & B))
    union = int(np.count_nonzero(A | B))
    j = inter / union if union else 1.0
    return MetricsReport(j, inter, union, int(A.sum()), int(B.sum()), threshold_used)


def difference_image(a, b):
    """Label array: 0 neither, 1 only in ``a``, 2 only in ``b``, 3 both."""
    A, B = _mask_of(a), _mask_of(b)
    check_same_shape(A, B)
    return (A.astype(np.uint8) * ONLY_A + B.astype(np.uint8) * ONLY_B).astype(np.uint8)


def resample_nearest(mask, shape):
    """Nearest-neighbour resampling of a mask onto another grid."""
    m = _mask_of(mask)
    rows = np.minimum((np.arange(shape[0]) + 0.5) * m.shape[0] / shape[0], m.shape[0] - 1).astype(int)
    cols = np.minimum((np.arange(shape[1]) + 0.5) * m.shape[1] / shape[1], m.shape[1] - 1).astype(int)
    return m[np.ix_(rows, cols)]

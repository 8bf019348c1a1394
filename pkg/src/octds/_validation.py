"""Input validation helpers used by the estimators and functional API."""

import math

import numpy as np
from sklearn.utils.validation import check_array

from .exceptions import ValidationError


def check_positive(value, field):
    if value is None or not math.isfinite(float(value)) or float(value) <= 0:
        raise ValidationError(f"{field} must be a positive finite number, got {value!r}", field=field)
    return value


def check_nonnegative(value, field):
    if value is None or not math.isfinite(float(value)) or float(value) < 0:
        raise ValidationError(f"{field} must be >= 0, got {value!r}", field=field)
    return value


def check_in_range(value, lo, hi, field, *, hi_open=False):
    v = float(value)
    bad = v < lo or (v >= hi if hi_open else v > hi) or not math.isfinite(v)
    if bad:
        bracket = ")" if hi_open else "]"
        raise ValidationError(f"{field} must lie in [{lo}, {hi}{bracket}, got {value!r}", field=field)
    return value


def check_image(image, name="image", *, dtype=None, ndim=2):
    """Return ``image`` as a non-empty finite array of the requested rank.

    Integer images keep their dtype unless ``dtype`` is given; this matters
    for the 8-bit thresholding path, which treats uint8 values as bins.
    """
    try:
        arr = check_array(
            np.asarray(image),
            dtype=dtype if dtype is not None else None,
            ensure_2d=ndim == 2,
            allow_nd=ndim != 2,
            ensure_all_finite=True,
            copy=False,
            input_name=name,
        )
    except ValueError as exc:
        raise ValidationError(str(exc), field=name) from exc
    if arr.ndim != ndim:
        raise ValidationError(f"{name} must be {ndim}-D, got shape {arr.shape}", field=name)
    if arr.size == 0:
        raise ValidationError(f"{name} is empty", field=name)
    return arr


def check_mask(mask, name="mask"):
    arr = np.asarray(mask)
    if arr.ndim != 2 or arr.size == 0:
        raise ValidationError(f"{name} must be a non-empty 2-D array, got shape {arr.shape}", field=name)
    if arr.dtype != bool:
        uniq = np.unique(arr)
        if not np.all(np.isin(uniq, (0, 1, 255))):
            raise ValidationError(f"{name} is not binary (values {uniq[:5]}...)", field=name)
        arr = arr != 0
    return arr


def check_same_shape(a, b, names=("a", "b")):
    if a.shape != b.shape:
        raise ValidationError(
            f"{names[0]} shape {a.shape} does not match {names[1]} shape {b.shape}",
            field=names[1],
        )


def check_points(points):
    """Coerce an ``(n, 2)`` array of ``(u, v)`` pixel coordinates to float."""
    pts = np.asarray(points, dtype=float)
    if pts.size == 0:
        return pts.reshape(0, 2)
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise ValidationError(f"points must have shape (n, 2), got {pts.shape}", field="points")
    if not np.all(np.isfinite(pts)):
        raise ValidationError("points contain non-finite coordinates", field="points")
    return pts

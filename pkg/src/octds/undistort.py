"""Sinusoid undistortion of unrolled B-scans.

Per slice: wavelet soft-threshold denoising and CLAHE, local mean+offset
binarization inside a border search band, RANSAC fit of
``A*sin(omega*x + phi) + D`` to the outer glass border, and a per-column
vertical shift that flattens the border to row ``D``.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Optional, Sequence

import numpy as np
import pywt
from scipy import ndimage
from skimage import exposure
from sklearn.base import BaseEstimator, RegressorMixin, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import check_image, check_points, check_positive
from .acquisition import SineModel, wrap_phase
from .exceptions import (
    ConfigurationError,
    FitRejectedError,
    InsufficientDataError,
    NoBorderCandidatesError,
    OctdsError,
    ValidationError,
)
from .raw_io import BScanPolar, VolumeStack

__all__ = [
    "EnhanceParams",
    "BinarizeParams",
    "RansacParams",
    "FitReport",
    "wavelet_denoise",
    "clahe",
    "enhance",
    "binarize_border",
    "fit_sine",
    "unwarp",
    "RansacSineRegressor",
    "SliceUndistorter",
]


@dataclass(frozen=True)
class EnhanceParams:
    wavelet: str = "haar"
    wavelet_level: int = 1
    clahe_tiles: tuple = (8, 8)
    clip_limit: float = 2.0
    nbins: int = 256

    def __post_init__(self):
        object.__setattr__(self, "clahe_tiles", tuple(int(t) for t in self.clahe_tiles))
        if len(self.clahe_tiles) != 2 or min(self.clahe_tiles) < 1:
            raise ConfigurationError(f"clahe_tiles must be two positive counts, got {self.clahe_tiles}")
        check_positive(self.clip_limit, "clip_limit")


@dataclass(frozen=True)
class BinarizeParams:
    """``offset`` is in 8-bit units of the enhanced image; a pixel is
    foreground when it exceeds its ``window`` x ``window`` mean by more than
    ``offset``. ``band=None`` searches the upper half of the depth range.

    A band whose foreground fraction exceeds ``max_foreground`` is treated as
    structureless: on pure noise the local threshold passes about half the
    pixels, while a slice with a glass border passes only a few percent.
    """

    window: int = 31
    offset: float = 5.0
    band: Optional[tuple] = None
    interface: str = "outer"
    min_run: int = 2
    max_foreground: float = 0.35

    def __post_init__(self):
        if self.window < 3 or self.window % 2 == 0:
            raise ConfigurationError(f"window must be an odd integer >= 3, got {self.window}")
        if self.interface not in ("outer", "all"):
            raise ConfigurationError(f"interface must be 'outer' or 'all', got {self.interface!r}")
        if self.band is not None:
            object.__setattr__(self, "band", tuple(int(b) for b in self.band))


@dataclass(frozen=True)
class RansacParams:
    tol_samples: float = 3.0
    max_iterations: int = 500
    min_inlier_fraction: float = 0.5
    omega_grid: int = 9
    omega_span: float = 0.02
    confidence: float = 0.999

    def __post_init__(self):
        check_positive(self.tol_samples, "tol_samples")
        if self.max_iterations < 1:
            raise ConfigurationError("max_iterations must be >= 1")
        if self.omega_grid < 1 or self.omega_grid % 2 == 0:
            raise ConfigurationError("omega_grid must be a positive odd count so 2*pi/width is on the grid")


@dataclass
class FitReport:
    model: Optional[SineModel]
    inlier_fraction: float
    residual_rms: float
    iterations_used: int
    n_points: int = 0
    accepted: bool = True
    fallback_slice: Optional[int] = None
    reason: Optional[str] = None

    def to_dict(self):
        return {
            "model": None if self.model is None else self.model.to_dict(),
            "inlier_fraction": self.inlier_fraction,
            "residual_rms": self.residual_rms,
            "iterations_used": self.iterations_used,
            "n_points": self.n_points,
            "accepted": self.accepted,
            "fallback_slice": self.fallback_slice,
            "reason": self.reason,
        }

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["model"] = None if d.get("model") is None else SineModel.from_dict(d["model"])
        return cls(**d)


# -- enhancement -------------------------------------------------------------

def wavelet_denoise(image, wavelet="haar", level=1, threshold=None):
    """Soft-threshold the detail coefficients with the universal threshold.

    The noise level is the median absolute finest diagonal coefficient
    divided by 0.6745.
    """
    img = np.asarray(image, dtype=float)
    h, w = img.shape
    coeffs = pywt.wavedec2(img, wavelet, level=level, mode="periodization")
    if threshold is None:
        sigma = np.median(np.abs(coeffs[-1][2])) / 0.6745
        threshold = sigma * math.sqrt(2.0 * math.log(img.size))
    if threshold <= 0:
        return img.copy()
    out = [coeffs[0]]
    for detail in coeffs[1:]:
        out.append(tuple(pywt.threshold(d, threshold, mode="soft") for d in detail))
    rec = pywt.waverec2(out, wavelet, mode="periodization")
    return rec[:h, :w]


def clahe(image, tiles=(8, 8), clip_limit=2.0, nbins=256):
    """CLAHE on a float image; returns values in ``[0, 1]``.

    ``clip_limit`` uses the common per-bin convention (multiples of the
    uniform bin height), so ``2.0`` with 256 bins equals skimage's 2/256.
    """
    img = np.asarray(image, dtype=float)
    ty, tx = tiles
    if ty > img.shape[0] or tx > img.shape[1]:
        raise ConfigurationError(
            f"CLAHE tile grid {tiles} needs tiles of at least one pixel; image is {img.shape}"
        )
    lo, hi = img.min(), img.max()
    if hi <= lo:
        return np.zeros_like(img)
    kernel = (int(math.ceil(img.shape[0] / ty)), int(math.ceil(img.shape[1] / tx)))
    scaled = (img - lo) / (hi - lo)
    return exposure.equalize_adapthist(scaled, kernel_size=kernel, clip_limit=clip_limit / nbins, nbins=nbins)


def enhance(bscan, params: EnhanceParams = EnhanceParams()):
    """Denoise then equalize; a constant slice comes back unchanged."""
    inten = _intensity(bscan)
    img = check_image(inten, "intensity")
    ty, tx = params.clahe_tiles
    if ty > img.shape[0] or tx > img.shape[1]:
        raise ConfigurationError(f"CLAHE tile grid {params.clahe_tiles} larger than image {img.shape}")
    if img.min() == img.max():
        out = img.astype(np.uint16, copy=True)
    else:
        den = wavelet_denoise(img, params.wavelet, params.wavelet_level)
        eq = clahe(den, params.clahe_tiles, params.clip_limit, params.nbins)
        out = np.clip(np.rint(eq * 65535.0), 0, 65535).astype(np.uint16)
    return _like(bscan, out)


# -- binarization ------------------------------------------------------------

def border_band(depth_samples, params: BinarizeParams):
    lo, hi = params.band if params.band is not None else (0, depth_samples // 2)
    lo, hi = max(0, lo), min(depth_samples, hi)
    if hi - lo < 2:
        raise ConfigurationError(f"border band [{lo}, {hi}) is empty for depth {depth_samples}")
    return lo, hi


def binarize_border(bscan, params: BinarizeParams = BinarizeParams()):
    """Foreground ``(u, v)`` coordinates of the glass border candidates.

    With ``interface='outer'`` only the deepest run of at least ``min_run``
    foreground pixels per column survives, which selects the outer glass
    interface over the inner one.
    """
    raw = check_image(_intensity(bscan), "intensity")
    img = raw.astype(float)
    if raw.dtype != np.uint8 and img.max() > 255:
        img = img / 257.0
    local = ndimage.uniform_filter(img, size=params.window, mode=("wrap", "reflect"))
    lo, hi = border_band(img.shape[1], params)
    fg = (img > local + params.offset)[:, lo:hi]
    ratio = float(fg.mean())
    if ratio > params.max_foreground:
        raise NoBorderCandidatesError(
            f"foreground fraction {ratio:.2f} in the search band shows no border structure",
            band=[lo, hi], foreground_ratio=ratio,
        )
    if params.interface == "outer":
        fg = _deepest_run(fg, params.min_run)
    u, v = np.nonzero(fg)
    if u.size == 0:
        raise NoBorderCandidatesError("no border candidates in the search band", band=[lo, hi])
    return np.column_stack([u, v + lo])


def _deepest_run(fg, min_run):
    n, b = fg.shape
    run = np.zeros((n, b), dtype=np.int32)
    acc = np.zeros(n, dtype=np.int32)
    for v in range(b):
        acc = np.where(fg[:, v], acc + 1, 0)
        run[:, v] = acc
    nxt = np.zeros_like(fg)
    nxt[:, :-1] = fg[:, 1:]
    ends = fg & ~nxt & (run >= min_run)
    has = ends.any(axis=1)
    last = b - 1 - np.argmax(ends[:, ::-1], axis=1)
    length = run[np.arange(n), last]
    rows = np.arange(b)[None, :]
    keep = has[:, None] & (rows <= last[:, None]) & (rows > (last - length)[:, None])
    return keep


# -- RANSAC sine fit -----------------------------------------------------------

def omega_grid(width, params: RansacParams):
    base = 2.0 * math.pi / width
    half = params.omega_grid // 2
    if half == 0:
        return np.array([base])
    return np.array([base * (1.0 + params.omega_span * k / half) for k in range(-half, half + 1)])


def _basis(x, omega):
    return np.stack([np.sin(omega * x), np.cos(omega * x), np.ones_like(x)], axis=-1)


def _lsq(x, y, omegas):
    """Least-squares ``(coef, omega, rms)`` minimizing rms over the grid;
    the earliest grid point wins ties."""
    best = None
    for om in omegas:
        B = _basis(x, om)
        coef, *_ = np.linalg.lstsq(B, y, rcond=None)
        rms = float(np.sqrt(np.mean((B @ coef - y) ** 2)))
        if best is None or rms < best[2] - 1e-12:
            best = (coef, om, rms)
    return best


def _to_model(coef, omega):
    a, b, c = coef
    # a*sin + b*cos == A*sin(wx + phi)
    A = math.hypot(a, b)
    phi = math.atan2(b, a) if A > 0 else 0.0
    return SineModel(float(A), float(omega), wrap_phase(phi), float(c))


def fit_sine(points, width, ransac: RansacParams = RansacParams(), seed=0) -> FitReport:
    """RANSAC fit of a one-period sine to ``(u, v)`` border points.

    Minimal 3-point samples are solved exactly for ``(A, phi, D)`` at every
    grid ``omega``; the consensus set is refit by least squares.
    """
    pts = check_points(points)
    n = pts.shape[0]
    if n < 4:
        raise InsufficientDataError(f"need at least 4 points, got {n}", n_points=n)
    check_positive(width, "width")
    x, y = pts[:, 0], pts[:, 1]
    omegas = omega_grid(width, ransac)
    rng = np.random.default_rng(seed)
    tol = ransac.tol_samples

    best_count, best_sse, best_inliers = -1, np.inf, None
    needed = ransac.max_iterations
    done = 0
    chunk = 50
    while done < min(needed, ransac.max_iterations):
        m = min(chunk, ransac.max_iterations - done)
        idx = np.stack([rng.choice(n, 3, replace=False) for _ in range(m)])
        done += m
        for om in omegas:
            M = _basis(x[idx], om)                      # (m, 3, 3)
            det = np.linalg.det(M)
            ok = np.abs(det) > 1e-9
            if not ok.any():
                continue
            coef = np.linalg.solve(M[ok], y[idx[ok]][..., None])[..., 0]
            pred = coef @ _basis(x, om).T                # (k, n)
            res = np.abs(pred - y[None, :])
            inl = res <= tol
            counts = inl.sum(axis=1)
            sse = np.where(inl, res**2, 0.0).sum(axis=1)
            for j in np.lexsort((sse, -counts))[:1]:
                if counts[j] > best_count or (counts[j] == best_count and sse[j] < best_sse - 1e-9):
                    best_count, best_sse, best_inliers = int(counts[j]), float(sse[j]), inl[j]
        w = best_count / n
        if 0 < w < 1:
            needed = int(math.ceil(math.log(1.0 - ransac.confidence) / math.log(1.0 - w**3)))
        elif w >= 1:
            needed = done

    if best_inliers is None or best_count < 3:
        report = FitReport(None, 0.0, float("inf"), done, n, accepted=False, reason="degenerate samples")
        raise FitRejectedError("no non-degenerate minimal sample", report)

    inliers = best_inliers
    for _ in range(5):
        coef, om, _ = _lsq(x[inliers], y[inliers], omegas)
        res = np.abs(_basis(x, om) @ coef - y)
        new = res <= tol
        if new.sum() < 3 or np.array_equal(new, inliers):
            break
        inliers = new
    coef, om, rms = _lsq(x[inliers], y[inliers], omegas)
    model = _to_model(coef, om)
    res = np.abs(model(x) - y)
    frac = float(np.mean(res <= tol))
    report = FitReport(model, frac, rms, done, n)
    if frac < ransac.min_inlier_fraction:
        report.accepted = False
        report.reason = "inlier fraction below minimum"
        raise FitRejectedError(
            f"inlier fraction {frac:.3f} below {ransac.min_inlier_fraction}", report
        )
    return report


# -- unwarp ------------------------------------------------------------------

def unwarp(bscan, model: SineModel, interpolation="linear"):
    """Shift column ``u`` by ``-(f(u) - D)`` rows; vacated rows become 0."""
    img = check_image(_intensity(bscan), "intensity")
    n, nd = img.shape
    shift = model(np.arange(n)) - model.D
    src = np.arange(nd, dtype=float)[None, :] + shift[:, None]
    inside = (src >= 0) & (src <= nd - 1)
    cols = np.arange(n)[:, None]
    if interpolation == "nearest":
        i = np.clip(np.rint(src).astype(np.int64), 0, nd - 1)
        out = np.where(inside, img[cols, i], 0)
    elif interpolation == "linear":
        i0 = np.clip(np.floor(src).astype(np.int64), 0, nd - 1)
        i1 = np.clip(i0 + 1, 0, nd - 1)
        w = np.clip(src - i0, 0.0, 1.0)
        f = img.astype(float)
        val = (1.0 - w) * f[cols, i0] + w * f[cols, i1]
        out = np.where(inside, np.rint(val), 0)
    else:
        raise ConfigurationError(f"interpolation must be 'linear' or 'nearest', got {interpolation!r}")
    return _like(bscan, out.astype(img.dtype))


def _intensity(bscan):
    return bscan.intensity if isinstance(bscan, BScanPolar) else np.asarray(bscan)


def _like(template, arr):
    if isinstance(template, BScanPolar):
        return BScanPolar(arr, template.axial_position)
    return arr


# -- estimators ----------------------------------------------------------------

class RansacSineRegressor(RegressorMixin, BaseEstimator):
    """Regressor view of :func:`fit_sine`: ``X`` holds angle columns, ``y`` rows.

    Examples
    --------
    >>> u = np.arange(1024.0)
    >>> reg = RansacSineRegressor(width=1024).fit(u[:, None], 10 * np.sin(2 * np.pi * u / 1024) + 300)
    >>> round(reg.model_.A, 6), round(reg.model_.D, 6)
    (10.0, 300.0)
    """

    def __init__(self, width=1024, tol_samples=3.0, max_iterations=500, min_inlier_fraction=0.5,
                 omega_grid=9, omega_span=0.02, random_state=0):
        self.width = width
        self.tol_samples = tol_samples
        self.max_iterations = max_iterations
        self.min_inlier_fraction = min_inlier_fraction
        self.omega_grid = omega_grid
        self.omega_span = omega_span
        self.random_state = random_state

    def _params(self):
        return RansacParams(self.tol_samples, self.max_iterations, self.min_inlier_fraction,
                            self.omega_grid, self.omega_span)

    def fit(self, X, y):
        X = np.asarray(X, dtype=float).reshape(len(y), -1)[:, 0]
        pts = np.column_stack([X, np.asarray(y, dtype=float)])
        self.report_ = fit_sine(pts, self.width, self._params(), self.random_state)
        self.model_ = self.report_.model
        inl = np.abs(self.model_(X) - pts[:, 1]) <= self.tol_samples
        self.inlier_mask_ = inl
        return self

    def predict(self, X):
        check_is_fitted(self, "model_")
        X = np.asarray(X, dtype=float)
        return self.model_(X.reshape(X.shape[0], -1)[:, 0])


class SliceUndistorter(TransformerMixin, BaseEstimator):
    """Fit one sine per slice of a :class:`VolumeStack` and flatten it.

    Slices whose fit is rejected borrow the model of the nearest accepted
    slice when ``fallback='neighbor'``; with ``fallback=None`` they keep no
    model and :meth:`transform` refuses the stack.
    """

    def __init__(self, enhance_params=None, binarize_params=None, ransac_params=None, random_state=0,
                 fallback="neighbor", interpolation="linear", n_jobs=1):
        self.enhance_params = enhance_params
        self.binarize_params = binarize_params
        self.ransac_params = ransac_params
        self.random_state = random_state
        self.fallback = fallback
        self.interpolation = interpolation
        self.n_jobs = n_jobs

    def fit_slice(self, bscan, index=0):
        ep = self.enhance_params or EnhanceParams()
        bp = self.binarize_params or BinarizeParams()
        rp = self.ransac_params or RansacParams()
        try:
            pts = binarize_border(enhance(bscan, ep), bp)
            report = fit_sine(pts, _intensity(bscan).shape[0], rp, seed=[int(self.random_state), int(index)])
        except FitRejectedError as exc:
            report = exc.report
        except (NoBorderCandidatesError, InsufficientDataError) as exc:
            report = FitReport(None, 0.0, float("inf"), 0, 0, accepted=False, reason=exc.kind)
        nd = _intensity(bscan).shape[1]
        if report.model is not None and report.accepted:
            lo = report.model.D - report.model.A
            hi = report.model.D + report.model.A
            if lo < 0 or hi >= nd:
                report.accepted = False
                report.reason = "model leaves the depth range"
        return report

    def fit(self, X, y=None):
        stack = _as_stack(X)
        idx = range(len(stack))
        if self.n_jobs and self.n_jobs > 1:
            with ThreadPoolExecutor(max_workers=self.n_jobs) as pool:
                reports = list(pool.map(lambda i: self.fit_slice(stack[i], i), idx))
        else:
            reports = [self.fit_slice(stack[i], i) for i in idx]
        self.reports_ = apply_fallback(reports) if self.fallback == "neighbor" else reports
        return self

    @property
    def models_(self):
        check_is_fitted(self, "reports_")
        return [r.model for r in self.reports_]

    def transform(self, X):
        check_is_fitted(self, "reports_")
        stack = _as_stack(X)
        if len(stack) != len(self.reports_):
            raise ValidationError(
                f"stack has {len(stack)} slices but {len(self.reports_)} fits", field="slices"
            )
        missing = [i for i, r in enumerate(self.reports_) if r.model is None]
        if missing:
            raise OctdsError(f"no usable sine model for slices {missing}", slices=missing)
        out = np.empty_like(stack.data)
        for i, r in enumerate(self.reports_):
            out[i] = unwarp(stack.data[i], r.model, self.interpolation)
        extra = dict(stack.extra)
        extra["border_rows"] = [float(r.model.D) for r in self.reports_]
        return VolumeStack(out, stack.pullback_step_d, stack.depth_resolution, stack.axial_positions, extra)


def apply_fallback(reports):
    """Give rejected slices the model of the nearest accepted one (lower index on ties)."""
    good = [i for i, r in enumerate(reports) if r.accepted and r.model is not None]
    if not good:
        return list(reports)
    out = []
    for i, r in enumerate(reports):
        if r.accepted:
            out.append(r)
            continue
        j = min(good, key=lambda g: (abs(g - i), g))
        out.append(replace(r, model=reports[j].model, fallback_slice=j))
    return out


def _as_stack(X):
    if isinstance(X, VolumeStack):
        return X
    arr = np.asarray(X)
    if arr.ndim == 2:
        arr = arr[None]
    return VolumeStack(arr.astype(np.uint16, copy=False), 1.0, 1.0)

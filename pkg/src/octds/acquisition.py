"""Catheter OCT pullback simulation.

Each A-scan is a sum of Gaussian interface peaks (inner and outer capillary
glass, bone surface) plus decaying subsurface scatter, multiplied by
log-normal speckle. The catheter sits at a lateral offset ``e`` from the
capillary axis, so the distance along a ray at angle ``theta`` to a surface of
radius ``rho`` is ``rho - e*cos(theta - psi)``: the glass border traces
exactly one sine period per rotation.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from typing import Iterator, List, Optional

import numpy as np
from scipy import ndimage

from ._validation import check_in_range, check_nonnegative, check_positive
from .exceptions import ConfigurationError, ValidationError
from .phantom import PhantomGeometry
from .raw_io import BScanPolar, VolumeStack

FULL_SCALE = 60000.0


@dataclass(frozen=True)
class NoiseConfig:
    speckle_sigma: float = 0.0
    nurd_amplitude: float = 0.0
    nurd_correlation: float = 32.0
    background_level: float = 0.0

    def __post_init__(self):
        check_nonnegative(self.speckle_sigma, "speckle_sigma")
        check_nonnegative(self.nurd_amplitude, "nurd_amplitude")
        check_positive(self.nurd_correlation, "nurd_correlation")
        check_in_range(self.background_level, 0.0, 1.0, "background_level", hi_open=True)


@dataclass(frozen=True)
class AcquisitionConfig:
    """Rotation/pullback geometry. Rates in Hz, lengths in micrometres.

    The capillary glass thickness and refractive index are free parameters;
    ``glass_index`` delays every echo beyond the glass by
    ``(glass_index - 1) * capillary_thickness``.
    """

    a_scan_rate: float = 91000.0 * 1024 / 14000
    rotation_rate: float = 6.5
    pullback_step_d: float = 200.0
    pullback_length: float = 8000.0
    depth_samples: int = 512
    depth_resolution: float = 6.0
    eccentricity_amplitude: float = 250.0
    eccentricity_phase: float = 0.0
    eccentricity_drift: float = 0.0
    eccentricity_phase_drift: float = 0.0
    catheter_radius: float = 450.0
    capillary_outer_radius: float = 1000.0
    capillary_thickness: float = 100.0
    glass_index: float = 1.0
    glass_reflectivity: float = 0.55
    subsurface_level: float = 0.25
    subsurface_decay: float = 150.0
    psf_sigma: float = 1.5
    noise: NoiseConfig = field(default_factory=NoiseConfig)

    def __post_init__(self):
        for name in ("a_scan_rate", "rotation_rate", "pullback_step_d", "pullback_length", "depth_resolution",
                     "catheter_radius", "capillary_outer_radius", "capillary_thickness", "psf_sigma",
                     "subsurface_decay"):
            check_positive(getattr(self, name), name)
        check_nonnegative(self.eccentricity_amplitude, "eccentricity_amplitude")
        check_in_range(self.glass_index, 1.0, 4.0, "glass_index")
        check_in_range(self.glass_reflectivity, 0.0, 1.0, "glass_reflectivity")
        check_in_range(self.subsurface_level, 0.0, 1.0, "subsurface_level")
        if int(self.depth_samples) != self.depth_samples or self.depth_samples < 8:
            raise ValidationError("depth_samples must be an integer >= 8", field="depth_samples")
        if self.capillary_thickness >= self.capillary_outer_radius:
            raise ValidationError("capillary_thickness must be below capillary_outer_radius", field="capillary_thickness")
        if isinstance(self.noise, dict):
            object.__setattr__(self, "noise", NoiseConfig(**self.noise))
        if self.slice_count < 1:
            raise ValidationError("pullback_length shorter than one pullback step", field="pullback_length")

    @property
    def a_scans_per_rotation(self) -> int:
        return int(round(self.a_scan_rate / self.rotation_rate))

    @property
    def slice_count(self) -> int:
        # the tiny epsilon absorbs float noise in e.g. 30000/200
        return int(math.floor(self.pullback_length / self.pullback_step_d + 1e-9))

    @property
    def capillary_inner_radius(self):
        return self.capillary_outer_radius - self.capillary_thickness

    @property
    def glass_delay(self):
        return (self.glass_index - 1.0) * self.capillary_thickness

    def eccentricity(self, s):
        """``(e, psi)`` of slice ``s`` including linear drift."""
        e = max(0.0, self.eccentricity_amplitude + self.eccentricity_drift * s)
        return e, self.eccentricity_phase + self.eccentricity_phase_drift * s

    def to_dict(self):
        d = asdict(self)
        d["a_scans_per_rotation"] = self.a_scans_per_rotation
        d["slice_count"] = self.slice_count
        return d

    @classmethod
    def from_dict(cls, d):
        d = {k: v for k, v in d.items() if k not in ("a_scans_per_rotation", "slice_count")}
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ValidationError(f"unknown acquisition field(s): {sorted(unknown)}", field=sorted(unknown)[0])
        if "noise" in d and isinstance(d["noise"], dict):
            d["noise"] = NoiseConfig(**d["noise"])
        return cls(**d)

    @classmethod
    def instrument_scale(cls, **overrides):
        """91 kHz A-scans at 390 rpm, 200 um steps over 30 mm."""
        base = dict(a_scan_rate=91000.0, rotation_rate=390.0 / 60.0, pullback_step_d=200.0, pullback_length=30000.0)
        base.update(overrides)
        return cls(**base)


@dataclass(frozen=True)
class SineModel:
    """``f(x) = A*sin(omega*x + phi) + D`` in depth rows over angle columns."""

    A: float
    omega: float
    phi: float
    D: float

    def __post_init__(self):
        if self.A < 0:
            raise ValidationError("A must be >= 0; negate via phase", field="A")
        if not self.omega > 0:
            raise ValidationError("omega must be positive", field="omega")
        object.__setattr__(self, "phi", wrap_phase(self.phi))

    @classmethod
    def canonical(cls, A, omega, phi, D):
        """Fold a negative amplitude into the phase."""
        if A < 0:
            A, phi = -A, phi + math.pi
        return cls(float(A), float(omega), float(phi), float(D))

    def __call__(self, x):
        return self.A * np.sin(self.omega * np.asarray(x, dtype=float) + self.phi) + self.D

    def inverse(self):
        """Model whose warp undoes this one's (same offset, opposite shift)."""
        return SineModel(self.A, self.omega, self.phi + math.pi, self.D)

    def to_dict(self):
        return {"A": self.A, "omega": self.omega, "phi": self.phi, "D": self.D}

    @classmethod
    def from_dict(cls, d):
        return cls(float(d["A"]), float(d["omega"]), float(d["phi"]), float(d["D"]))


def wrap_phase(phi):
    """Map to ``[-pi, pi)``."""
    out = (float(phi) + math.pi) % (2.0 * math.pi) - math.pi
    return -math.pi if out >= math.pi else out


@dataclass
class GroundTruth:
    """Exact reference for a simulated pullback.

    ``surface_depth`` is the wall radius in micrometres on the nominal angle
    grid ``theta_u = 2*pi*u/N``.
    """

    surface_depth: np.ndarray
    pattern_mask: np.ndarray
    sine_params_per_slice: List[SineModel]
    reflectivity: np.ndarray
    hole_radius: float
    depth_resolution: float

    def surface_depth_samples(self):
        return self.surface_depth / self.depth_resolution


def _slice_rng(seed, s):
    return np.random.default_rng([int(seed), 0x5C15, int(s)])


def _nurd_jitter(rng, n, amplitude, correlation):
    """Smooth periodic angular jitter with standard deviation ``amplitude``."""
    if amplitude <= 0:
        return np.zeros(n)
    w = rng.standard_normal(n)
    j = ndimage.gaussian_filter1d(w, sigma=correlation, mode="wrap")
    sd = j.std()
    return j * (amplitude / sd) if sd > 0 else j


def check_compatible(geom: PhantomGeometry, cfg: AcquisitionConfig):
    """Raise :class:`ConfigurationError` if the catheter cannot fit or the
    pullback leaves the hole."""
    R = geom.hole_radius
    e_max = max(cfg.eccentricity(0)[0], cfg.eccentricity(cfg.slice_count - 1)[0])
    if e_max + cfg.catheter_radius >= cfg.capillary_inner_radius:
        raise ConfigurationError(
            f"catheter (radius {cfg.catheter_radius} um) at eccentricity {e_max} um does not fit "
            f"inside the capillary (inner radius {cfg.capillary_inner_radius} um)"
        )
    if e_max + cfg.catheter_radius >= R or cfg.capillary_outer_radius >= R:
        raise ConfigurationError(f"catheter/capillary do not fit inside the hole (radius {R} um)")
    extent = (cfg.slice_count - 1) * cfg.pullback_step_d
    if extent > geom.model.hole_length + 1e-9:
        raise ConfigurationError(
            f"pullback extent {extent} um exceeds hole length {geom.model.hole_length} um"
        )


def ground_truth_sine(cfg: AcquisitionConfig, s: int) -> SineModel:
    """Outer-glass border of slice ``s`` as a sine in depth rows."""
    e, psi = cfg.eccentricity(s)
    n = cfg.a_scans_per_rotation
    # -e*cos(a) == e*sin(a - pi/2)
    return SineModel(
        A=e / cfg.depth_resolution,
        omega=2.0 * math.pi / n,
        phi=wrap_phase(-psi - math.pi / 2.0) if e > 0 else 0.0,
        D=(cfg.capillary_outer_radius + cfg.glass_delay) / cfg.depth_resolution,
    )


def render_slice(geom: PhantomGeometry, cfg: AcquisitionConfig, s: int):
    """Render slice ``s``; returns ``(BScanPolar, wall_um, mask_row, reflectivity)``.

    The ground-truth arrays are evaluated on the nominal angle grid, while
    the image is rendered at the jittered (NURD) angles.
    """
    n = cfg.a_scans_per_rotation
    nd = int(cfg.depth_samples)
    res = cfg.depth_resolution
    R = geom.hole_radius
    z = s * cfg.pullback_step_d
    rng = _slice_rng(geom.model.rng_seed, s)
    nominal = 2.0 * math.pi * np.arange(n) / n
    noise = cfg.noise
    theta = nominal + _nurd_jitter(rng, n, noise.nurd_amplitude, noise.nurd_correlation)
    e, psi = cfg.eccentricity(s)
    offset = e * np.cos(theta - psi)

    zz = np.full(n, float(z))
    intervals = geom.pocket_intervals(zz, theta)
    wall = geom.wall_radius(zz, theta, intervals)
    refl = geom.surface_reflectivity(zz, theta, wall)

    rows = np.arange(nd, dtype=float)[None, :]
    sig2 = 2.0 * cfg.psf_sigma**2
    delay = cfg.glass_delay
    img = np.zeros((n, nd))
    for rho, amp in ((cfg.capillary_inner_radius, cfg.glass_reflectivity),
                     (cfg.capillary_outer_radius + delay, cfg.glass_reflectivity)):
        centre = ((rho - offset) / res)[:, None]
        img += amp * np.exp(-((rows - centre) ** 2) / sig2)
    has_wall = wall < geom.model.block_radius
    wall_row = ((wall + delay - offset) / res)[:, None]
    img += np.where(has_wall, refl, 0.0)[:, None] * np.exp(-((rows - wall_row) ** 2) / sig2)

    # subsurface scatter: smooth onset after the surface, scaled by the local
    # surface reflectivity, decaying with depth and removed inside pockets (air)
    depth_um = (rows - wall_row) * res
    onset = 0.5 * (1.0 + np.tanh((depth_um / res - 2.0 * cfg.psf_sigma) / cfg.psf_sigma))
    sub = cfg.subsurface_level * refl[:, None] * onset * np.exp(-np.maximum(depth_um, 0.0) / cfg.subsurface_decay)
    if intervals:
        radial_um = rows * res + offset[:, None] - delay
        air = np.zeros((n, nd), dtype=bool)
        for t0, t1 in intervals:
            air |= (radial_um >= t0[:, None]) & (radial_um < t1[:, None])
        sub = np.where(air, 0.0, sub)
    img += np.where(has_wall[:, None], sub, 0.0)

    img += noise.background_level
    if noise.speckle_sigma > 0:
        sg = noise.speckle_sigma
        img *= np.exp(sg * rng.standard_normal(img.shape) - 0.5 * sg * sg)
    raw = np.clip(np.rint(img * FULL_SCALE), 0, 65535).astype(np.uint16)

    wall_nom = geom.wall_radius(zz, nominal)
    refl_nom = geom.surface_reflectivity(zz, nominal, wall_nom)
    mask_row = wall_nom > R + res
    return BScanPolar(raw, float(z)), wall_nom, mask_row, refl_nom


def iter_slices(geom: PhantomGeometry, cfg: AcquisitionConfig, parallel: int = 1) -> Iterator[tuple]:
    """Yield rendered slices in acquisition order; parallel rendering keeps order."""
    check_compatible(geom, cfg)
    count = cfg.slice_count
    if parallel <= 1:
        for s in range(count):
            yield render_slice(geom, cfg, s)
        return
    with ThreadPoolExecutor(max_workers=parallel) as pool:
        chunk = max(parallel * 2, 1)
        for start in range(0, count, chunk):
            idx = range(start, min(count, start + chunk))
            yield from pool.map(lambda s: render_slice(geom, cfg, s), idx)


def simulate_oct(geom: PhantomGeometry, cfg: AcquisitionConfig, parallel: int = 1):
    """Simulate the full pullback; returns ``(VolumeStack, GroundTruth)``."""
    slices, walls, masks, refls = [], [], [], []
    for bscan, wall, mask_row, refl in iter_slices(geom, cfg, parallel):
        slices.append(bscan)
        walls.append(wall)
        masks.append(mask_row)
        refls.append(refl)
    stack = VolumeStack.from_slices(
        slices, cfg.pullback_step_d, cfg.depth_resolution,
        extra={"seed": int(geom.model.rng_seed)},
    )
    truth = GroundTruth(
        surface_depth=np.array(walls),
        pattern_mask=np.array(masks),
        sine_params_per_slice=[ground_truth_sine(cfg, s) for s in range(cfg.slice_count)],
        reflectivity=np.array(refls),
        hole_radius=geom.hole_radius,
        depth_resolution=cfg.depth_resolution,
    )
    return stack, truth

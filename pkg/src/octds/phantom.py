"""Parametric mastoid phantom: a drilled cylinder with spherical and
cylindrical air pockets.

Coordinates are Cartesian micrometres with ``z`` along the drill-hole axis.
A ray ``(z, theta)`` starts on the axis and travels radially at angle
``theta``; :meth:`PhantomGeometry.wall_radius` returns the distance to the
first bone it meets.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import ndimage

from ._validation import check_in_range, check_nonnegative, check_positive
from .exceptions import ValidationError

_EPS = 1e-12


@dataclass(frozen=True)
class Pocket:
    """One air pocket.

    ``center`` is the sphere centre or the midpoint of the cylinder axis;
    ``direction`` is only meaningful for cylinders. A cylinder with
    ``length=None`` is infinite.
    """

    kind: str
    center: tuple
    radius: float
    direction: tuple = (0.0, 0.0, 1.0)
    length: Optional[float] = None

    def __post_init__(self):
        if self.kind not in ("sphere", "cylinder"):
            raise ValidationError(f"pocket kind must be 'sphere' or 'cylinder', got {self.kind!r}", field="kind")
        check_positive(self.radius, "radius")
        if len(self.center) != 3 or len(self.direction) != 3:
            raise ValidationError("center and direction must be 3-vectors", field="center")
        norm = math.sqrt(sum(float(c) ** 2 for c in self.direction))
        if abs(norm - 1.0) > 1e-9:
            raise ValidationError(f"direction must have unit norm, got |d|={norm!r}", field="direction")
        if self.length is not None:
            check_positive(self.length, "length")
        object.__setattr__(self, "center", tuple(float(c) for c in self.center))
        object.__setattr__(self, "direction", tuple(float(c) for c in self.direction))

    @classmethod
    def at_wall(cls, kind, z, theta, radius, hole_radius, offset=0.0, tilt=(0.0, 0.0), length=None):
        """Place a pocket relative to the wall point at ``(z, theta)``.

        ``offset`` moves the centre radially outward from the wall surface.
        For cylinders the axis is radial, tilted by ``tilt = (axial, angular)``
        radians.
        """
        rho = hole_radius + offset
        center = (rho * math.cos(theta), rho * math.sin(theta), z)
        ta, tt = tilt
        radial = np.array([math.cos(theta), math.sin(theta), 0.0])
        tangent = np.array([-math.sin(theta), math.cos(theta), 0.0])
        d = radial * math.cos(ta) * math.cos(tt) + tangent * math.sin(tt) * math.cos(ta)
        d = d + np.array([0.0, 0.0, math.sin(ta)])
        d = d / np.linalg.norm(d)
        return cls(kind=kind, center=center, radius=radius, direction=tuple(d), length=length)

    def to_dict(self):
        return {
            "kind": self.kind,
            "center": list(self.center),
            "radius": self.radius,
            "direction": list(self.direction),
            "length": self.length,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            kind=d["kind"],
            center=tuple(d["center"]),
            radius=float(d["radius"]),
            direction=tuple(d.get("direction", (0.0, 0.0, 1.0))),
            length=d.get("length"),
        )

    def ray_interval(self, z, theta):
        """Entry/exit distances of the rays ``(z, theta)`` through this pocket.

        Broadcasts ``z`` against ``theta``; rays that miss get ``(inf, inf)``.
        """
        z = np.asarray(z, dtype=float)
        theta = np.asarray(theta, dtype=float)
        dx, dy = np.cos(theta), np.sin(theta)
        cx, cy, cz = self.center
        if self.kind == "sphere":
            b = dx * cx + dy * cy
            c = cx * cx + cy * cy + (cz - z) ** 2 - self.radius**2
            disc = b * b - c
            hit = disc >= 0
            root = np.sqrt(np.where(hit, disc, 0.0))
            t0 = np.where(hit, b - root, np.inf)
            t1 = np.where(hit, b + root, np.inf)
            return np.broadcast_arrays(t0, t1)
        shape = np.broadcast_shapes(z.shape, theta.shape)
        t0, t1 = self._cylinder_interval(np.atleast_1d(z), np.atleast_1d(dx), np.atleast_1d(dy))
        return t0.reshape(shape), t1.reshape(shape)

    def _cylinder_interval(self, z, dx, dy):
        ax, ay, az = self.direction
        cx, cy, cz = self.center
        # ray origin o = (0, 0, z), w = o - c
        wx, wy, wz = -cx + 0.0 * z, -cy + 0.0 * z, z - cz
        d_a = dx * ax + dy * ay
        w_a = wx * ax + wy * ay + wz * az
        dpx, dpy, dpz = dx - d_a * ax, dy - d_a * ay, -d_a * az
        wpx, wpy, wpz = wx - w_a * ax, wy - w_a * ay, wz - w_a * az
        qa = dpx**2 + dpy**2 + dpz**2
        qb = wpx * dpx + wpy * dpy + wpz * dpz
        qc = wpx**2 + wpy**2 + wpz**2 - self.radius**2
        qa, qb, qc, d_a, w_a = np.broadcast_arrays(qa, qb, qc, d_a, w_a)
        t0 = np.full(qa.shape, -np.inf)
        t1 = np.full(qa.shape, np.inf)
        par = qa < _EPS
        outside_par = par & (qc >= 0)
        t0[outside_par] = np.inf
        t1[outside_par] = np.inf
        np_ = ~par
        disc = qb[np_] ** 2 - qa[np_] * qc[np_]
        hit = disc >= 0
        root = np.sqrt(np.where(hit, disc, 0.0))
        s0 = np.where(hit, (-qb[np_] - root) / qa[np_], np.inf)
        s1 = np.where(hit, (-qb[np_] + root) / qa[np_], np.inf)
        t0[np_], t1[np_] = s0, s1
        if self.length is not None:
            half = self.length / 2.0
            # slab |w_a + t d_a| <= half
            flat = np.abs(d_a) < _EPS
            lo = np.full(qa.shape, -np.inf)
            hi = np.full(qa.shape, np.inf)
            outside = flat & (np.abs(w_a) > half)
            lo[outside] = np.inf
            hi[outside] = np.inf
            nf = ~flat
            ta = (-half - w_a[nf]) / d_a[nf]
            tb = (half - w_a[nf]) / d_a[nf]
            lo[nf] = np.minimum(ta, tb)
            hi[nf] = np.maximum(ta, tb)
            t0 = np.maximum(t0, lo)
            t1 = np.minimum(t1, hi)
            empty = t0 >= t1
            t0[empty] = np.inf
            t1[empty] = np.inf
        return t0, t1


@dataclass(frozen=True)
class PhantomModel:
    """Drill-hole phantom description; all lengths in micrometres.

    ``texture_contrast`` modulates wall reflectivity with a seeded smooth
    random field; ``shade_length`` darkens pocket floors with depth, which is
    what makes cavities visible in the endoscope and intensity channels.
    """

    hole_radius: float
    hole_length: float
    pockets: tuple = ()
    scatter_base: float = 0.7
    rng_seed: int = 0
    texture_contrast: float = 0.25
    texture_scale: float = 100.0
    shade_length: float = 400.0
    block_radius: Optional[float] = None

    def __post_init__(self):
        check_positive(self.hole_radius, "hole_radius")
        check_positive(self.hole_length, "hole_length")
        check_in_range(self.scatter_base, 0.0, 1.0, "scatter_base")
        check_nonnegative(self.texture_contrast, "texture_contrast")
        check_positive(self.texture_scale, "texture_scale")
        check_positive(self.shade_length, "shade_length")
        if not 0 <= int(self.rng_seed) < 2**64:
            raise ValidationError("rng_seed must be an unsigned 64-bit integer", field="rng_seed")
        pockets = tuple(p if isinstance(p, Pocket) else Pocket.from_dict(p) for p in self.pockets)
        object.__setattr__(self, "pockets", pockets)
        if self.block_radius is None:
            object.__setattr__(self, "block_radius", 3.0 * self.hole_radius)
        elif self.block_radius <= self.hole_radius:
            raise ValidationError("block_radius must exceed hole_radius", field="block_radius")

    @classmethod
    def random(
        cls,
        seed,
        n_pockets=10,
        hole_radius=2000.0,
        hole_length=8000.0,
        radius_range=(250.0, 550.0),
        max_depth=600.0,
        **kwargs,
    ):
        """Draw a phantom with ``n_pockets`` pockets breaching the wall.

        Pocket floors stay within ``max_depth`` of the wall so they remain
        inside a typical imaging range.
        """
        rng = np.random.default_rng(seed)
        pockets = []
        for _ in range(n_pockets):
            kind = "sphere" if rng.random() < 0.5 else "cylinder"
            r = float(rng.uniform(*radius_range))
            z = float(rng.uniform(0.1 * hole_length, 0.9 * hole_length))
            theta = float(rng.uniform(0.0, 2.0 * math.pi))
            if kind == "sphere":
                r = min(r, max_depth / 1.6)
                offset = float(rng.uniform(0.35, 0.6)) * r
                pockets.append(Pocket.at_wall("sphere", z, theta, r, hole_radius, offset=offset))
            else:
                length = float(rng.uniform(0.6, 1.0)) * max_depth + r
                tilt = (float(rng.uniform(-0.5, 0.5)), float(rng.uniform(-0.4, 0.4)))
                # axis midpoint sits so the near cap is inside the hole
                offset = length / 2.0 - r
                pockets.append(
                    Pocket.at_wall("cylinder", z, theta, r, hole_radius, offset=offset, tilt=tilt, length=length)
                )
        return cls(
            hole_radius=hole_radius,
            hole_length=hole_length,
            pockets=tuple(pockets),
            rng_seed=int(seed),
            **kwargs,
        )

    def to_dict(self):
        return {
            "hole_radius": self.hole_radius,
            "hole_length": self.hole_length,
            "pockets": [p.to_dict() for p in self.pockets],
            "scatter_base": self.scatter_base,
            "rng_seed": int(self.rng_seed),
            "texture_contrast": self.texture_contrast,
            "texture_scale": self.texture_scale,
            "shade_length": self.shade_length,
            "block_radius": self.block_radius,
        }

    @classmethod
    def from_dict(cls, d):
        """Build from the JSON schema; ``random_pockets`` draws pockets from the seed."""
        d = dict(d)
        rp = d.pop("random_pockets", None)
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValidationError(f"unknown phantom field(s): {sorted(unknown)}", field=sorted(unknown)[0])
        for key in ("hole_radius", "hole_length"):
            if key not in d:
                raise ValidationError(f"phantom spec is missing {key}", field=key)
        if rp:
            rp = dict(rp)
            seed = int(d.get("rng_seed", 0))
            n = int(rp.pop("count", 10))
            base = cls.random(seed, n, hole_radius=float(d["hole_radius"]), hole_length=float(d["hole_length"]), **rp)
            d["pockets"] = list(base.pockets) + [Pocket.from_dict(p) for p in d.get("pockets", [])]
        d["pockets"] = tuple(p if isinstance(p, Pocket) else Pocket.from_dict(p) for p in d.get("pockets", []))
        return cls(**d)


class PhantomGeometry:
    """Queryable geometry built from a :class:`PhantomModel`."""

    def __init__(self, model: PhantomModel):
        self.model = model
        self._texture = self._make_texture()

    @property
    def hole_radius(self):
        return self.model.hole_radius

    def _make_texture(self):
        m = self.model
        nz = max(8, int(math.ceil(m.hole_length / m.texture_scale)) + 1)
        ntheta = 360
        rng = np.random.default_rng([int(m.rng_seed), 0x7E47])
        field_ = rng.standard_normal((nz, ntheta))
        field_ = ndimage.gaussian_filter(field_, sigma=1.5, mode=("nearest", "wrap"))
        field_ -= field_.mean()
        sd = field_.std()
        if sd > 0:
            field_ /= sd
        # bounded so the wall never turns fully dark
        return np.tanh(field_)

    def pocket_intervals(self, z, theta):
        """List of ``(t_in, t_out)`` arrays, one per pocket."""
        return [p.ray_interval(z, theta) for p in self.model.pockets]

    def wall_radius(self, z, theta, intervals=None):
        """Distance from the hole axis to the first bone along each ray.

        Starts at the hole radius and hops over every pocket the current
        point lies inside. Rays that leave the block are clamped to
        ``block_radius``.
        """
        z = np.asarray(z, dtype=float)
        theta = np.asarray(theta, dtype=float)
        shape = np.broadcast_shapes(z.shape, theta.shape)
        t = np.full(shape, float(self.model.hole_radius))
        if intervals is None:
            intervals = self.pocket_intervals(z, theta)
        for _ in range(len(intervals) + 1):
            moved = False
            for t0, t1 in intervals:
                inside = (t0 <= t) & (t < t1)
                if inside.any():
                    t = np.where(inside, t1, t)
                    moved = True
            if not moved:
                break
        return np.minimum(t, self.model.block_radius)

    def surface_reflectivity(self, z, theta, wall=None):
        """Reflectivity of the first bone surface seen along each ray."""
        m = self.model
        z = np.asarray(z, dtype=float)
        theta = np.asarray(theta, dtype=float)
        if wall is None:
            wall = self.wall_radius(z, theta)
        nz, nt = self._texture.shape
        zi = np.clip(z / m.texture_scale, 0.0, nz - 1.0)
        ti = np.mod(theta, 2.0 * math.pi) / (2.0 * math.pi) * nt
        zi, ti = np.broadcast_arrays(zi, ti)
        tex = ndimage.map_coordinates(self._texture, [zi.ravel(), ti.ravel()], order=1, mode="grid-wrap")
        tex = tex.reshape(zi.shape)
        base = np.clip(m.scatter_base * (1.0 + m.texture_contrast * tex), 0.0, 1.0)
        shade = np.exp(-np.maximum(wall - m.hole_radius, 0.0) / m.shade_length)
        out = base * shade
        return np.where(wall >= m.block_radius, 0.0, out)


def build_phantom(spec: PhantomModel | dict) -> PhantomGeometry:
    """Validate ``spec`` and return its queryable geometry."""
    if isinstance(spec, dict):
        spec = PhantomModel.from_dict(spec)
    return PhantomGeometry(spec)

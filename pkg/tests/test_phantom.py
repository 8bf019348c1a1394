import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from octds.exceptions import ValidationError
from octds.phantom import PhantomModel, Pocket, build_phantom

R = 2000.0


def plain(**kw):
    return PhantomModel(hole_radius=R, hole_length=8000.0, **kw)


def test_no_pockets_wall_is_hole_radius():
    g = build_phantom(plain())
    z = np.linspace(0, 8000, 17)[:, None]
    th = np.linspace(0, 2 * math.pi, 64)[None, :]
    assert np.all(g.wall_radius(z, th) == R)


@pytest.mark.parametrize("theta0", [0.0, 1.0, 3.5])
def test_sphere_on_wall_adds_its_radius(theta0):
    r = 400.0
    p = Pocket.at_wall("sphere", 3000.0, theta0, r, R)
    g = build_phantom(plain(pockets=(p,)))
    # the on-axis ray exits the sphere at |c| + r
    assert g.wall_radius(3000.0, theta0) == pytest.approx(R + r, abs=1e-9)


def test_disjoint_pocket_leaves_wall_unchanged():
    p = Pocket("sphere", (R + 900.0, 0.0, 4000.0), 500.0)
    g = build_phantom(plain(pockets=(p,)))
    z = np.linspace(3000, 5000, 41)[:, None]
    th = np.linspace(-0.5, 0.5, 41)[None, :]
    assert np.all(g.wall_radius(z, th) == R)


def test_sphere_interval_matches_chord_formula():
    # ray at the centre height, hitting a sphere whose centre is off the ray by h
    c = (R, 0.0, 1000.0)
    p = Pocket("sphere", c, 300.0)
    theta = math.atan2(120.0, R)
    t0, t1 = p.ray_interval(1000.0, theta)
    h = R * math.sin(theta)       # perpendicular distance from centre to ray
    mid = R * math.cos(theta)
    half = math.sqrt(300.0**2 - h**2)
    assert float(t0) == pytest.approx(mid - half, rel=1e-12)
    assert float(t1) == pytest.approx(mid + half, rel=1e-12)


def test_radial_cylinder_breach_depth():
    length = 800.0
    p = Pocket.at_wall("cylinder", 4000.0, 0.7, 200.0, R, offset=length / 2 - 200.0, length=length)
    g = build_phantom(plain(pockets=(p,)))
    # far cap sits at |c| + length/2
    assert g.wall_radius(4000.0, 0.7) == pytest.approx(R - 200.0 + length, abs=1e-6)


def test_infinite_cylinder_along_axis_is_clamped_to_block():
    p = Pocket.at_wall("cylinder", 4000.0, 0.0, 200.0, R)
    g = build_phantom(plain(pockets=(p,)))
    assert g.wall_radius(4000.0, 0.0) == pytest.approx(3 * R)
    assert g.surface_reflectivity(4000.0, 0.0) == 0.0


def test_nested_pockets_hop_through_chain():
    a = Pocket("sphere", (R + 100.0, 0.0, 0.0), 200.0)      # exits at R+300
    b = Pocket("sphere", (R + 400.0, 0.0, 0.0), 150.0)      # covers R+250..R+550
    g = build_phantom(plain(pockets=(a, b)))
    assert g.wall_radius(0.0, 0.0) == pytest.approx(R + 550.0)


def test_pocket_validation_names_fields():
    with pytest.raises(ValidationError) as exc:
        Pocket("sphere", (0, 0, 0), -1.0)
    assert exc.value.field == "radius"
    with pytest.raises(ValidationError) as exc:
        Pocket("cylinder", (0, 0, 0), 1.0, direction=(1.0, 1.0, 0.0))
    assert exc.value.field == "direction"
    with pytest.raises(ValidationError):
        Pocket("cube", (0, 0, 0), 1.0)


@pytest.mark.parametrize("field,value", [("hole_radius", 0.0), ("hole_length", -5.0)])
def test_model_validation_names_fields(field, value):
    kw = {"hole_radius": R, "hole_length": 8000.0, field: value}
    with pytest.raises(ValidationError) as exc:
        PhantomModel(**kw)
    assert exc.value.field == field


def test_random_model_is_seed_deterministic():
    a = PhantomModel.random(11, n_pockets=12)
    b = PhantomModel.random(11, n_pockets=12)
    c = PhantomModel.random(12, n_pockets=12)
    assert a == b
    assert a != c


def test_random_pockets_breach_within_max_depth():
    m = PhantomModel.random(5, n_pockets=20, max_depth=600.0)
    g = build_phantom(m)
    z = np.linspace(0, m.hole_length, 200)[:, None]
    th = np.linspace(0, 2 * math.pi, 720, endpoint=False)[None, :]
    w = g.wall_radius(z, th)
    assert w.max() > R + 100
    # tilted cylinder caps can add a little beyond the nominal depth
    assert w.max() <= R + 1.5 * 600.0


def test_dict_round_trip_and_random_section():
    m = PhantomModel.random(4, n_pockets=3)
    assert PhantomModel.from_dict(m.to_dict()) == m
    d = {"hole_radius": R, "hole_length": 8000.0, "rng_seed": 4, "random_pockets": {"count": 3}}
    assert PhantomModel.from_dict(d).pockets == m.pockets


def test_from_dict_rejects_unknown_and_missing():
    with pytest.raises(ValidationError) as exc:
        PhantomModel.from_dict({"hole_radius": R, "hole_length": 1.0, "colour": 1})
    assert exc.value.field == "colour"
    with pytest.raises(ValidationError) as exc:
        PhantomModel.from_dict({"hole_radius": R})
    assert exc.value.field == "hole_length"


def test_reflectivity_darkens_with_depth_and_is_bounded():
    p = Pocket.at_wall("sphere", 4000.0, 1.0, 500.0, R)
    g = build_phantom(plain(pockets=(p,), texture_contrast=0.0))
    flat = g.surface_reflectivity(4000.0, 3.0)
    deep = g.surface_reflectivity(4000.0, 1.0)
    assert flat == pytest.approx(0.7)
    assert deep == pytest.approx(0.7 * math.exp(-500.0 / 400.0))
    th = np.linspace(0, 2 * math.pi, 100)
    r = g.surface_reflectivity(np.linspace(0, 8000, 100)[:, None], th[None, :])
    assert r.min() >= 0 and r.max() <= 1


@settings(max_examples=40, deadline=None)
@given(
    theta=st.floats(0, 2 * math.pi),
    z=st.floats(500, 7500),
    radius=st.floats(100, 700),
    offset=st.floats(-0.9, 0.9),
)
def test_sphere_on_axis_ray_closed_form(theta, z, radius, offset):
    p = Pocket.at_wall("sphere", z, theta, radius, R, offset=offset * radius)
    g = build_phantom(plain(pockets=(p,)))
    # ray through the centre exits at |c| + r, and |c| - r < R always holds here
    assert g.wall_radius(z, theta) == pytest.approx(R + offset * radius + radius, rel=1e-9)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32), z=st.floats(0, 8000), theta=st.floats(-10, 10))
def test_wall_never_inside_hole_and_angle_periodic(seed, z, theta):
    g = build_phantom(PhantomModel.random(seed, n_pockets=6))
    w = g.wall_radius(z, theta)
    assert R <= w <= 3 * R
    assert g.wall_radius(z, theta + 2 * math.pi) == pytest.approx(w, abs=1e-6)

import math

import numpy as np
import pytest

from conftest import desk_model
from octds.acquisition import (
    AcquisitionConfig, NoiseConfig, SineModel, check_compatible, ground_truth_sine, render_slice,
    simulate_oct, wrap_phase,
)
from octds.exceptions import ConfigurationError, ValidationError
from octds.phantom import PhantomModel, build_phantom


def small(**kw):
    base = dict(pullback_length=1000.0)
    base.update(kw)
    return AcquisitionConfig(**base)


def test_instrument_scale_counts():
    cfg = AcquisitionConfig.instrument_scale()
    assert cfg.a_scans_per_rotation == 14000
    assert cfg.slice_count == 150


def test_desk_defaults():
    cfg = AcquisitionConfig()
    assert (cfg.a_scans_per_rotation, cfg.depth_samples, cfg.slice_count) == (1024, 512, 40)


@pytest.mark.parametrize("field", ["a_scan_rate", "rotation_rate", "pullback_step_d", "depth_resolution"])
def test_positive_fields_are_validated(field):
    with pytest.raises(ValidationError) as exc:
        AcquisitionConfig(**{field: 0.0})
    assert exc.value.field == field


def test_noise_ranges():
    with pytest.raises(ValidationError):
        NoiseConfig(speckle_sigma=-0.1)
    with pytest.raises(ValidationError):
        NoiseConfig(background_level=1.0)
    with pytest.raises(ValidationError):
        NoiseConfig(nurd_correlation=0.0)


def test_from_dict_nested_noise_and_unknown_field():
    cfg = AcquisitionConfig.from_dict({"noise": {"speckle_sigma": 0.2}, "eccentricity_amplitude": 10.0})
    assert cfg.noise.speckle_sigma == 0.2
    assert AcquisitionConfig.from_dict(cfg.to_dict()) == cfg
    with pytest.raises(ValidationError):
        AcquisitionConfig.from_dict({"speed": 1})


def test_catheter_must_fit():
    g = build_phantom(PhantomModel(hole_radius=2000.0, hole_length=8000.0))
    with pytest.raises(ConfigurationError):
        check_compatible(g, AcquisitionConfig(eccentricity_amplitude=1500.0))
    with pytest.raises(ConfigurationError):
        check_compatible(g, AcquisitionConfig(pullback_length=20000.0))
    tight = build_phantom(PhantomModel(hole_radius=900.0, hole_length=8000.0))
    with pytest.raises(ConfigurationError):
        simulate_oct(tight, small())


def test_sine_model_canonical_and_wrap():
    m = SineModel.canonical(-3.0, 0.1, 0.2, 50.0)
    assert m.A == 3.0
    x = np.linspace(0, 100, 7)
    assert np.allclose(m(x), -3.0 * np.sin(0.1 * x + 0.2) + 50.0)
    assert wrap_phase(math.pi) == pytest.approx(-math.pi)
    assert -math.pi <= wrap_phase(123.4) < math.pi
    assert SineModel.from_dict(m.to_dict()) == m
    with pytest.raises(ValidationError):
        SineModel(-1.0, 0.1, 0.0, 1.0)


def test_concentric_slice_has_flat_surface_and_zero_amplitude():
    g = build_phantom(PhantomModel(hole_radius=2000.0, hole_length=8000.0, texture_contrast=0.0))
    cfg = small(eccentricity_amplitude=0.0)
    stack, truth = simulate_oct(g, cfg)
    assert all(m.A == 0.0 for m in truth.sine_params_per_slice)
    tail = stack.data[:, :, 280:].astype(float)
    rows = np.argmax(tail, axis=2) + 280
    assert np.all(rows == rows[0, 0])
    assert rows[0, 0] == round(2000.0 / 6.0)


def test_surface_row_tracks_wall_minus_offset(desk_geom):
    cfg = AcquisitionConfig(eccentricity_amplitude=300.0, eccentricity_phase=0.4)
    s = 12
    bscan, wall, _, _ = render_slice(desk_geom, cfg, s)
    e, psi = cfg.eccentricity(s)
    theta = 2 * math.pi * np.arange(1024) / 1024
    expect = np.rint((wall - e * np.cos(theta - psi)) / cfg.depth_resolution)
    start = int(math.ceil((cfg.capillary_outer_radius + e) / cfg.depth_resolution)) + 6
    got = np.argmax(bscan.intensity[:, start:], axis=1) + start
    keep = wall < desk_geom.model.block_radius
    assert np.all(np.abs(got - expect)[keep] <= 1)


def test_glass_border_is_the_ground_truth_sine(desk_geom):
    cfg = AcquisitionConfig(eccentricity_amplitude=350.0, eccentricity_phase=-2.0)
    bscan, *_ = render_slice(desk_geom, cfg, 3)
    truth = ground_truth_sine(cfg, 3)
    u = np.arange(1024)
    # search a few rows around the model; the inner glass face is 16 rows shallower
    rows = []
    for i in u:
        lo = int(round(truth(i))) - 5
        rows.append(lo + np.argmax(bscan.intensity[i, lo:lo + 11]))
    rows = np.array(rows)
    assert truth.omega == pytest.approx(2 * math.pi / 1024)
    assert np.max(np.abs(rows - truth(u))) < 1.0


def test_pattern_mask_consistent_with_depth(desk_geom):
    stack, truth = simulate_oct(desk_geom, small())
    assert truth.surface_depth.shape == truth.pattern_mask.shape == (5, 1024)
    assert np.array_equal(truth.pattern_mask, truth.surface_depth > truth.hole_radius + truth.depth_resolution)
    assert stack.shape == (5, 1024, 512)
    assert stack.axial_positions.tolist() == [0.0, 200.0, 400.0, 600.0, 800.0]


def test_simulation_is_deterministic_and_parallel_invariant():
    g = build_phantom(desk_model(9))
    cfg = small(noise=NoiseConfig(speckle_sigma=0.2, nurd_amplitude=0.01, background_level=0.05))
    a, ta = simulate_oct(g, cfg, parallel=1)
    b, tb = simulate_oct(g, cfg, parallel=4)
    assert np.array_equal(a.data, b.data)
    assert np.array_equal(ta.surface_depth, tb.surface_depth)
    other, _ = simulate_oct(build_phantom(desk_model(10)), cfg)
    assert not np.array_equal(a.data, other.data)


def test_nurd_only_changes_the_image_not_the_truth(desk_geom):
    cfg0 = small()
    cfg1 = small(noise=NoiseConfig(nurd_amplitude=0.02))
    a, ta = simulate_oct(desk_geom, cfg0)
    b, tb = simulate_oct(desk_geom, cfg1)
    assert np.array_equal(ta.surface_depth, tb.surface_depth)
    assert not np.array_equal(a.data, b.data)


def test_speckle_is_multiplicative_with_unit_mean(desk_geom):
    cfg0 = small(pullback_length=200.0, noise=NoiseConfig(background_level=0.1))
    cfg1 = small(pullback_length=200.0, noise=NoiseConfig(speckle_sigma=0.3, background_level=0.1))
    a = simulate_oct(desk_geom, cfg0)[0].data.astype(float)
    b = simulate_oct(desk_geom, cfg1)[0].data.astype(float)
    assert b.mean() / a.mean() == pytest.approx(1.0, abs=0.01)

import numpy as np
import pytest
from scipy.signal import argrelmin

from revlab.errors import GeometryInfeasible
from revlab.profile import (
    CollarSpec,
    SnowmanSpec,
    cylinder_profile,
    smooth_step,
    snowman_profile,
    sphere_profile,
)


@pytest.fixture(scope="module")
def snowman():
    return snowman_profile(SnowmanSpec())


def test_arclength_parameterization(snowman):
    # (dr/dt)^2 + (dz/dt)^2 = 1 to 1e-10 everywhere, including blends
    ts = np.linspace(1e-6, snowman.total_length - 1e-6, 5001)
    ev = snowman.eval(ts)
    assert np.max(np.abs(ev["rt"] ** 2 + ev["zt"] ** 2 - 1.0)) < 1e-10


def test_two_interior_neck_minima(snowman):
    lm = snowman.landmarks
    for name in ("lower_neck_waist", "upper_neck_waist"):
        t = lm[name]
        assert abs(snowman.r_of(t)[0] - 0.3) < 1e-8
        # locally minimal
        assert snowman.r_of(t - 0.05)[0] > 0.3
        assert snowman.r_of(t + 0.05)[0] > 0.3
    # no other minima at that depth besides the collars
    ts = np.linspace(1e-4, snowman.total_length - 1e-4, 20001)
    r = snowman.r_of(ts)
    mins = argrelmin(r, order=5)[0]
    near_03 = np.abs(r[mins] - 0.3) < 1e-4
    assert near_03.sum() == 2


def test_poles_close_on_axis(snowman):
    assert abs(snowman.r_of(0.0)[0]) < 1e-12
    assert abs(snowman.r_of(snowman.total_length)[0]) < 1e-12


def test_equator_is_unit_circle_at_z0(snowman):
    t_eq = snowman.landmarks["equator"]
    assert abs(snowman.r_of(t_eq)[0] - 1.0) < 1e-10
    assert abs(snowman.z_of(t_eq)[0]) < 1e-10
    assert abs(snowman.drdt(t_eq)[0]) < 1e-10


def test_equator_reflection_symmetry(snowman):
    # z is odd and r is even about the middle-sphere equator (equal radii)
    t_eq = snowman.landmarks["equator"]
    d = np.linspace(0.0, 1.2, 200)
    up = snowman.eval(t_eq + d)
    dn = snowman.eval(t_eq - d)
    assert np.max(np.abs(up["r"] - dn["r"])) < 1e-9
    assert np.max(np.abs(up["z"] + dn["z"])) < 1e-9


def test_sphere_regions_have_unit_curvature(snowman):
    t_eq = snowman.landmarks["equator"]
    for dt in (-0.4, -0.2, 0.0, 0.2, 0.4):
        assert abs(snowman.K_of(t_eq + dt)[0] - 1.0) < 1e-9


def test_neck_waist_has_negative_curvature(snowman):
    for name in ("lower_neck_waist", "upper_neck_waist"):
        assert snowman.K_of(snowman.landmarks[name])[0] < 0


def test_single_sphere_degenerate():
    prof = sphere_profile(1.0)
    ts = np.linspace(1e-3, np.pi - 1e-3, 500)
    assert np.max(np.abs(prof.K_of(ts) - 1.0)) < 1e-12
    assert np.max(np.abs(prof.r_of(ts) - np.sin(ts))) < 1e-12


def test_cylinder_profile_flat():
    prof = cylinder_profile(radius=1.0, height=5.0)
    ts = np.linspace(0.0, 5.0, 100)
    assert np.max(np.abs(prof.K_of(ts))) < 1e-14
    assert np.max(np.abs(prof.r_of(ts) - 1.0)) < 1e-14
    assert not prof.has_poles


def test_infeasible_neck_radius():
    with pytest.raises(GeometryInfeasible):
        snowman_profile(SnowmanSpec(radii=(1.0, 1.0, 1.0), neck_radius=1.2))


def test_blend_overlap_rejected():
    # blend width wider than the neck piece
    with pytest.raises(GeometryInfeasible):
        snowman_profile(SnowmanSpec(neck_half_width=0.1, blend_width=0.25))


def test_no_collar_variant():
    prof = snowman_profile(SnowmanSpec(collar=None))
    assert "south_collar_waist" not in prof.landmarks
    assert abs(prof.r_of(0.0)[0]) < 1e-12
    ts = np.linspace(1e-4, prof.total_length - 1e-4, 10001)
    r = prof.r_of(ts)
    mins = argrelmin(r, order=5)[0]
    assert len(mins) == 2


def test_smooth_step_saturates():
    x = np.array([-2.0, -1.0, 1.0, 3.0])
    assert np.allclose(smooth_step(x), [0, 0, 1, 1], atol=1e-15)
    mid = smooth_step(np.array([0.0]))[0]
    assert 0.45 < mid < 0.55

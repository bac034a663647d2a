import numpy as np
import pytest

from revlab.errors import NoConvergence, NoNeck, PoleHit
from revlab.geodesics import (
    classify_crossing,
    close_up,
    connect,
    equator_crossings,
    limiting_angle,
    shoot,
    shoot_batch,
)
from revlab.profile import SnowmanSpec, cylinder_profile, sphere_profile
from revlab.surface import (
    RadialPerturbation,
    SurfaceMetric,
    add_perturbation,
    build_snowman,
)


@pytest.fixture(scope="module")
def sphere():
    return SurfaceMetric(sphere_profile(1.0))


@pytest.fixture(scope="module")
def cylinder():
    return SurfaceMetric(cylinder_profile(1.0, 12.0))


@pytest.fixture(scope="module")
def snow():
    return build_snowman()


def test_sphere_equator_closes(sphere):
    path, _ = shoot(sphere, (np.pi / 2, 0.0), np.pi / 2, 2 * np.pi)
    assert abs(path.t[-1] - np.pi / 2) < 1e-8
    assert abs(path.theta[-1] - 2 * np.pi) < 1e-8
    assert abs(path.alpha[-1] - np.pi / 2) < 1e-8
    assert path.residual < 1e-6


def test_cylinder_helix_clairaut(cylinder):
    path, _ = shoot(cylinder, (3.0, 0.0), np.pi / 4, 4.0)
    assert np.ptp(path.alpha) < 1e-12
    assert path.clairaut_drift() < 1e-12
    assert abs(path.clairaut[0] - np.sin(np.pi / 4)) < 1e-12
    assert path.residual < 1e-6


def test_snowman_above_limit_stays_in_middle(snow):
    t_eq, _ = snow.equator()
    alpha0 = np.arcsin(0.3)
    path, _ = shoot(snow, (t_eq, 0.0), alpha0 + 0.2, 30.0)
    # z oscillates: t stays strictly between the neck waists
    assert np.all(path.t > snow.landmarks["lower_neck_waist"])
    assert np.all(path.t < snow.landmarks["upper_neck_waist"])
    # periodic turning points
    turns = np.flatnonzero(np.diff(np.sign(np.cos(path.alpha))))
    assert len(turns) >= 4


def test_clairaut_drift_long(snow):
    rng = np.random.default_rng(7)
    t_eq, _ = snow.equator()
    n = 5
    ts = t_eq + rng.uniform(-0.5, 0.5, n)
    als = rng.uniform(0.3, 1.3, n)
    out = shoot_batch(snow, ts, np.zeros(n), als, 100.0, n_samples=2001)
    for ci in out["clairaut"]:
        assert np.max(np.abs(ci - ci.mean())) < 1e-8 * (1 + abs(ci.mean()))


def test_reversibility(snow):
    t_eq, _ = snow.equator()
    fwd, _ = shoot(snow, (t_eq, 0.0), 0.7, 5.0, check_residual=False)
    back, _ = shoot(snow, (fwd.t[-1], fwd.theta[-1]),
                    fwd.alpha[-1] + np.pi, 5.0, check_residual=False)
    # retraces within 1e-6 pointwise
    tb, thb = back.at(5.0 - fwd.s)
    assert np.max(np.abs(tb - fwd.t)) < 1e-6
    dth = np.mod(thb - fwd.theta + np.pi, 2 * np.pi) - np.pi
    assert np.max(np.abs(dth)) < 1e-6


def test_rotational_equivariance(snow):
    t_eq, _ = snow.equator()
    delta = 0.83
    p1, _ = shoot(snow, (t_eq + 0.2, 0.3), 0.9, 8.0, check_residual=False)
    p2, _ = shoot(snow, (t_eq + 0.2, 0.3 + delta), 0.9, 8.0,
                  check_residual=False)
    assert np.max(np.abs(p1.t - p2.t)) < 1e-10
    assert np.max(np.abs((p2.theta - p1.theta) - delta)) < 1e-10


def test_length_additivity(snow):
    t_eq, _ = snow.equator()
    whole, _ = shoot(snow, (t_eq, 0.0), 1.1, 6.0, check_residual=False)
    first, _ = shoot(snow, (t_eq, 0.0), 1.1, 2.5, check_residual=False)
    second, _ = shoot(snow, (first.t[-1], first.theta[-1]),
                      first.alpha[-1], 3.5, check_residual=False)
    assert abs(first.length + second.length - whole.length) < 1e-9
    assert abs(second.t[-1] - whole.t[-1]) < 1e-8


@pytest.mark.parametrize("r_neck", [0.3])
def test_limiting_angle_matches_clairaut(r_neck):
    m = build_snowman(SnowmanSpec(neck_radius=r_neck))
    a0 = limiting_angle(m)
    assert abs(a0 - np.arcsin(r_neck)) < 1e-7


def test_limiting_angle_requires_neck(sphere):
    with pytest.raises(NoNeck):
        limiting_angle(sphere)


def test_classify_crossing(snow):
    t_eq, _ = snow.equator()
    alpha0 = np.arcsin(0.3)
    above, _ = shoot(snow, (t_eq, 0.0), alpha0 + 1e-3, 25.0,
                     check_residual=False)
    assert classify_crossing(snow, above) == "periodic-z"
    below, _ = shoot(snow, (t_eq, 0.0), alpha0 - 1e-3, 25.0,
                     check_residual=False)
    assert classify_crossing(snow, below) == "enters-spheres"
    near, _ = shoot(snow, (t_eq, 0.0), alpha0 + 1e-5, 25.0,
                    check_residual=False)
    assert classify_crossing(snow, near) == "asymptotic"


def test_pole_hit_raised(snow):
    # a meridian launch from the middle sphere runs into a pole region
    t_eq, _ = snow.equator()
    with pytest.raises(PoleHit):
        shoot(snow, (t_eq, 0.0), 0.0, 30.0, check_residual=False)


def test_connect_sphere_equator_arc(sphere):
    path = connect(sphere, (np.pi / 2, 0.0), (np.pi / 2, 1.0),
                   hint=(np.pi / 2 - 0.3, np.pi / 2 + 0.3))
    assert abs(path.length - 1.0) < 1e-7
    assert np.max(np.abs(path.t - np.pi / 2)) < 1e-9


def test_connect_cylinder_helix(cylinder):
    # delta theta = pi, delta z = 1  ->  length sqrt(pi^2 + 1)
    path = connect(cylinder, (5.0, 0.0), (6.0, np.pi),
                   hint=(0.9, 1.5))
    assert abs(path.length - np.hypot(np.pi, 1.0)) < 1e-7


def test_connect_bends_away_from_bump(snow):
    t_eq, _ = snow.equator()
    m = add_perturbation(snow, RadialPerturbation((t_eq, 0.0), rho=0.4,
                                                  amplitude=0.1))
    p = (t_eq - 0.35, -0.1)
    q = (t_eq + 0.35, 0.1)
    base = connect(snow, p, q, hint=(0.1, 0.6))
    bent = connect(m, p, q, hint=(0.1, 0.6))
    assert bent.length > base.length  # bump lengthens nearby connections
    # dense shooting-sweep oracle: no shot in the family beats the solution
    alphas = np.linspace(0.1, 0.6, 41)
    out = shoot_batch(m, np.full(41, p[0]), np.full(41, p[1]), alphas, 2.0,
                      n_samples=801)
    r_q = float(m.profile.r_of(q[0])[0])
    d2 = (out["t"] - q[0]) ** 2 + ((out["theta"] - q[1]) * r_q) ** 2
    best = np.sqrt(d2.min())
    assert bent.length <= 2.0 and best < 0.05


def test_bumped_equator_still_geodesic(snow):
    t_eq, _ = snow.equator()
    # a bump centered on the equator has zero t-gradient along it, so the
    # equator stays a geodesic; the certificate must confirm that even
    # though the path runs straight through the support
    m = add_perturbation(snow, RadialPerturbation((t_eq, 0.0), rho=0.3,
                                                  amplitude=0.05))
    path, _ = shoot(m, (t_eq, 0.0), np.pi / 2, 6.3)
    assert path.residual < 1e-6
    assert np.max(np.abs(path.t - t_eq)) < 1e-9


def test_close_up_bumped_equator(snow):
    t_eq, _ = snow.equator()
    # the bump splits the middle sphere's degenerate family of great
    # circles; Newton from a slightly offset guess must land on a certified
    # closed geodesic near the equator (not necessarily the equator itself)
    m = add_perturbation(snow, RadialPerturbation((t_eq, 0.0), rho=0.3,
                                                  amplitude=0.05))
    path = close_up(m, t_eq + 4e-3, 0.9, np.pi / 2 + 2e-3, 6.3, winding=1)
    assert path.closed
    assert path.residual < 1e-6
    assert np.max(np.abs(path.t - t_eq)) < 5e-3
    # length is conformally weighted and exceeds the bare equator length
    assert path.length > 2 * np.pi

import numpy as np
import pytest

from revlab.errors import (
    Overcrowded,
    PoleProximity,
    SupportOverlap,
    WaistNotStable,
)
from revlab.profile import SnowmanSpec, cylinder_profile, sphere_profile
from revlab.surface import (
    RadialPerturbation,
    SurfaceMetric,
    add_perturbation,
    build_snowman,
    bump_shape,
    normalize_alpha,
    place_equator_bumps,
)


@pytest.fixture(scope="module")
def snow():
    return build_snowman()


@pytest.fixture(scope="module")
def bumped(snow):
    t_eq, _ = snow.equator()
    pert = RadialPerturbation(center=(t_eq, 0.0), rho=0.4, amplitude=0.05)
    return add_perturbation(snow, pert), pert


def brioschi_fd(metric, t, th, h=1e-3):
    """Finite-difference curvature oracle for the conformal metric:
    K = (K0 - Laplacian_base u) * exp(-2u), with u differentiated by
    4th-order central stencils (large h keeps cancellation error small)."""
    def u(tt, hh):
        return metric.fields(np.array([tt]), np.array([hh]))["u"][0]

    def d2(g):
        return (-g(2 * h) + 16 * g(h) - 30 * g(0.0) + 16 * g(-h)
                - g(-2 * h)) / (12 * h ** 2)

    def d1(g):
        return (-g(2 * h) + 8 * g(h) - 8 * g(-h) + g(-2 * h)) / (12 * h)

    ev = metric.profile.eval(np.array([t]))
    r, rt, K0 = ev["r"][0], ev["rt"][0], ev["K"][0]
    utt = d2(lambda e: u(t + e, th))
    ut = d1(lambda e: u(t + e, th))
    uthth = d2(lambda e: u(t, th + e))
    lap = utt + (rt / r) * ut + uthth / r ** 2
    return (K0 - lap) / np.exp(2 * u(t, th))


def test_round_sphere_curvature():
    m = SurfaceMetric(sphere_profile(1.0))
    for t in (0.4, np.pi / 2, 2.2):
        assert abs(m.curvature_at((t, 1.0)) - 1.0) < 1e-9


def test_cylinder_curvature():
    m = SurfaceMetric(cylinder_profile(1.0, 8.0))
    assert abs(m.curvature_at((4.0, 0.5))) < 1e-9


def test_bump_raises_curvature_at_center(snow, bumped):
    m2, pert = bumped
    t_eq, _ = snow.equator()
    K0 = snow.curvature_at((t_eq, 0.0))
    K1 = m2.curvature_at((t_eq, 0.0))
    assert K1 > K0


def test_curvature_matches_fd_oracle(bumped):
    m2, pert = bumped
    t0 = pert.center[0]
    for (t, th) in [(t0, 0.0), (t0 + 0.07, 0.05), (t0 - 0.11, -0.06),
                    (t0 + 0.15, 0.02)]:
        Ka = m2.curvature_at((t, th))
        Kb = brioschi_fd(m2, t, th)
        assert abs(Ka - Kb) <= 1e-5 * max(1.0, abs(Kb))


def test_unchanged_outside_support(snow, bumped):
    m2, pert = bumped
    t_eq, _ = snow.equator()
    pts_t = np.array([t_eq, t_eq + 0.5, t_eq - 0.9])
    pts_th = np.array([np.pi, 0.0, 2.0])
    f0 = snow.fields(pts_t, pts_th)
    f1 = m2.fields(pts_t, pts_th)
    assert np.array_equal(f0["conf"], f1["conf"])
    assert np.all(f1["u"] == 0.0)


def test_zero_amplitude_identity(snow):
    t_eq, _ = snow.equator()
    m2 = add_perturbation(snow, RadialPerturbation(
        center=(t_eq, 1.0), rho=0.3, amplitude=0.0))
    ts = np.linspace(t_eq - 0.2, t_eq + 0.2, 31)
    f0 = snow.fields(ts, np.ones_like(ts))
    f1 = m2.fields(ts, np.ones_like(ts))
    assert np.allclose(f0["conf"], f1["conf"], rtol=0, atol=0)


def test_conformality(bumped):
    m2, pert = bumped
    t0 = pert.center[0]
    ts = t0 + np.linspace(-0.15, 0.15, 21)
    ths = np.linspace(-0.1, 0.1, 21)
    g_tt, g_thth = m2.metric_coeffs(ts, ths)
    r = m2.fields(ts, ths)["r"]
    # perturbed metric is a scalar multiple of the base at every point
    assert np.max(np.abs(g_thth / g_tt - r ** 2)) < 1e-12


def test_rotational_symmetry_of_base(snow):
    rng = np.random.default_rng(3)
    ts = rng.uniform(1.5, 9.5, 40)
    th1, th2 = rng.uniform(0, 2 * np.pi, (2, 40))
    f1 = snow.fields(ts, th1, second=True)
    f2 = snow.fields(ts, th2, second=True)
    for key in ("r", "K", "conf"):
        assert np.max(np.abs(f1[key] - f2[key])) < 1e-12


def test_bump_shape_monotone():
    x = np.linspace(0.0, 0.499, 400)
    f, fp, _ = bump_shape(x)
    assert f[0] == pytest.approx(1.0)
    assert np.all(fp[1:] < 0)
    assert bump_shape(np.array([0.5, 0.7]))[0].max() == 0.0


def test_support_overlap_rejected(snow):
    t_eq, _ = snow.equator()
    m2 = add_perturbation(snow, RadialPerturbation((t_eq, 0.0), 0.3,
                                                   amplitude=0.01))
    with pytest.raises(SupportOverlap):
        add_perturbation(m2, RadialPerturbation((t_eq, 0.05), 0.3,
                                                amplitude=0.01))


def test_pole_margin_rejected(snow):
    with pytest.raises(SupportOverlap):
        add_perturbation(snow, RadialPerturbation((0.05, 0.0), 0.2,
                                                  amplitude=0.01))
    with pytest.raises(PoleProximity):
        snow.curvature_at((1e-5, 0.0))


def test_place_equator_bumps(snow):
    m = place_equator_bumps(snow, 4, rho0=0.05, amplitude=0.02)
    assert len(m.perturbations) == 4
    radii = [p.rho for p in m.perturbations]
    assert radii == [0.05 * 2.0 ** -j for j in range(4)]
    # supports disjoint: every center sees zero exponent from the others
    for i, p in enumerate(m.perturbations):
        for j, q in enumerate(m.perturbations):
            if i != j:
                d = m.charts[j].distance(np.array([p.center[0]]),
                                         np.array([p.center[1]]))[0]
                assert d > q.support_radius


def test_place_equator_bumps_zero(snow):
    assert place_equator_bumps(snow, 0) is snow


def test_overcrowded(snow):
    with pytest.raises(Overcrowded):
        place_equator_bumps(snow, 40, rho0=0.3, schedule="equal")


def test_nose_waist_certified(snow):
    t_eq, _ = snow.equator()
    m = add_perturbation(snow, RadialPerturbation(
        (t_eq - 0.5, 2.0), rho=0.6, kind="nose-waist"))
    info = m.nose_info[0]
    assert info["K_waist"] < 0
    assert info["lambda1"] > 0
    assert 0 < info["waist_d"] < 0.3


def test_nose_infeasible_amplitude(snow):
    t_eq, _ = snow.equator()
    with pytest.raises(WaistNotStable):
        add_perturbation(snow, RadialPerturbation(
            (t_eq - 0.5, 2.0), rho=0.6, kind="nose-waist", amplitude=1e-6))


def test_normalize_alpha_range():
    a = normalize_alpha(np.array([-np.pi, np.pi, 3 * np.pi, -2.5 * np.pi]))
    assert np.all(a > -np.pi - 1e-15)
    assert np.all(a <= np.pi + 1e-15)

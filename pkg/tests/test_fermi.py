import dataclasses

import numpy as np
import pytest

from revlab.errors import (
    ChartEdge,
    EscapedTube,
    FocalOverlap,
    NotAGeodesic,
    NotStrictlyStable,
)
from revlab.fermi import (
    ConvexityProfile,
    build_fermi_chart,
    certify_convex_tube,
    dump_chart_csv,
    first_eigen,
    gradient_F,
    hessian_F,
    persist_geodesic,
    validate_tube,
    write_certificate,
    _hessian_components,
)
from revlab.geodesics import close_up, shoot
from revlab.profile import cylinder_profile, sphere_profile
from revlab.spectrum import PotentialTrace, potential_along
from revlab.surface import (
    RadialPerturbation,
    SurfaceMetric,
    add_perturbation,
    build_snowman,
    waist_circle,
)

TWO_PI = 2.0 * np.pi


@pytest.fixture(scope="module")
def snow():
    return build_snowman()


@pytest.fixture(scope="module")
def neck_geodesic(snow):
    t_up = snow.landmarks["upper_neck_waist"]
    path, _ = shoot(snow, (t_up, 0.0), np.pi / 2, TWO_PI * 0.3)
    path.closed = True
    return path


@pytest.fixture(scope="module")
def neck_cert(snow, neck_geodesic):
    return certify_convex_tube(snow, neck_geodesic, s_max=0.25)


@pytest.fixture(scope="module")
def nosed(snow):
    t_eq, _ = snow.equator()
    return add_perturbation(snow, RadialPerturbation(
        (t_eq - 0.5, 2.0), rho=0.6, kind="nose-waist"))


@pytest.fixture(scope="module")
def nose_geodesic(nosed):
    wc = waist_circle(nosed, 0)
    return close_up(nosed, wc["t"][0], wc["theta"][0], wc["alpha"][0],
                    wc["length"], winding=0)


@pytest.fixture(scope="module")
def nose_chart(nosed, nose_geodesic):
    return build_fermi_chart(nosed, nose_geodesic, 0.05, n_s=161,
                             n_theta=64)


def constant_profile(period, alpha=2.0, lam1=1.0, n=128):
    theta = np.arange(n) * (period / n)
    return ConvexityProfile(alpha=alpha, theta=theta, phi=np.ones(n),
                            phi_t=np.zeros(n), phi_tt=np.zeros(n),
                            lam1=lam1, period=period)


def wavy_profile(period, alpha=2.0, k=2, eps=0.3, n=256):
    # any smooth positive phi is admissible for the convexity function;
    # analytic derivatives keep the cross-check independent of FFT noise
    theta = np.arange(n) * (period / n)
    w = TWO_PI * k / period
    phi = 1.0 - 0.5 * eps * (1.0 - np.cos(w * theta))
    return ConvexityProfile(alpha=alpha, theta=theta, phi=phi,
                            phi_t=-0.5 * eps * w * np.sin(w * theta),
                            phi_tt=-0.5 * eps * w * w * np.cos(w * theta),
                            lam1=1.0, period=period)


# ----------------------------------------------------------------------
# chart construction
# ----------------------------------------------------------------------

def test_sphere_chart_is_cosine():
    m = SurfaceMetric(sphere_profile(1.0))
    p, _ = shoot(m, (np.pi / 2, 0.0), np.pi / 2, TWO_PI)
    p.closed = True
    ch = build_fermi_chart(m, p, 0.5)
    assert np.max(np.abs(ch.f - np.cos(ch.s)[:, None])) < 1e-6
    # theta-independence
    assert np.max(np.ptp(ch.f, axis=1)) < 1e-9
    assert np.max(np.abs(ch.f[(len(ch.s) - 1) // 2] - 1.0)) < 1e-8
    assert np.max(np.abs(ch.f_s[(len(ch.s) - 1) // 2])) < 1e-8
    assert ch.jacobi_defect < 1e-5
    assert ch.spread_defect < 1e-8


def test_cylinder_chart_is_flat():
    m = SurfaceMetric(cylinder_profile(1.0, 12.0))
    p, _ = shoot(m, (6.0, 0.0), np.pi / 2, TWO_PI)
    p.closed = True
    ch = build_fermi_chart(m, p, 0.5)
    assert np.max(np.abs(ch.f - 1.0)) < 1e-10
    assert ch.jacobi_defect < 1e-10


def test_chart_rejects_bad_reference():
    m = SurfaceMetric(sphere_profile(1.0))
    p, _ = shoot(m, (np.pi / 2, 0.0), np.pi / 2, TWO_PI)
    with pytest.raises(NotAGeodesic):
        build_fermi_chart(m, p, 0.3)          # not marked closed
    p.closed = True
    p.residual = 1e-3
    with pytest.raises(NotAGeodesic):
        build_fermi_chart(m, p, 0.3)


def test_focal_overlap_on_sphere():
    # the equator's normal rays focus at the poles, distance pi/2
    m = SurfaceMetric(sphere_profile(1.0))
    p, _ = shoot(m, (np.pi / 2, 0.0), np.pi / 2, TWO_PI)
    p.closed = True
    with pytest.raises(FocalOverlap):
        build_fermi_chart(m, p, 1.6)


def test_nose_chart_negative_curvature_ring(nose_chart):
    # the waist of a nose sits in a negatively curved ring, so the Jacobi
    # coefficient is convex at the core: f_ss(0, .) = -K(0, .) > 0
    mid = (len(nose_chart.s) - 1) // 2
    assert np.all(nose_chart.K[mid] < 0.0)
    assert nose_chart.spread_defect < 1e-6
    # curvature reaches the hundreds here, so the s-stencil identity is
    # only good to ~1e-4 relative in double precision
    assert nose_chart.jacobi_defect < 1e-3


# ----------------------------------------------------------------------
# first eigenpair
# ----------------------------------------------------------------------

def test_first_eigen_constant_negative_curvature():
    trace = PotentialTrace(K=np.full(512, -1.0), length=2.0, closed=True)
    prof = first_eigen(trace)
    assert abs(prof.lam1 - 1.0) < 1e-6
    assert np.ptp(prof.phi) < 1e-8
    assert np.max(prof.phi) == pytest.approx(1.0)


def test_first_eigen_rejects_nullity_and_instability():
    flat = PotentialTrace(K=np.zeros(512), length=5.0, closed=True)
    with pytest.raises(NotStrictlyStable):
        first_eigen(flat)
    unstable = PotentialTrace(K=np.ones(512), length=TWO_PI, closed=True)
    with pytest.raises(NotStrictlyStable):
        first_eigen(unstable)


def test_first_eigen_nose_waist(nosed, nose_geodesic):
    prof = first_eigen(potential_along(nosed, nose_geodesic))
    assert prof.lam1 > 0.0
    assert np.min(prof.phi) > 0.0


# ----------------------------------------------------------------------
# the convexity function
# ----------------------------------------------------------------------

def test_hessian_closed_forms_constant_phi():
    m = SurfaceMetric(cylinder_profile(1.0, 12.0))
    p, _ = shoot(m, (6.0, 0.0), np.pi / 2, TWO_PI)
    p.closed = True
    ch = build_fermi_chart(m, p, 0.4)
    prof = constant_profile(ch.period, alpha=2.0)
    H = hessian_F(ch, prof, (0.1, 1.0))
    # ss-component alpha (alpha - 1) s^(alpha-2) = 2; mixed term vanishes
    assert abs(H[0, 0] - 2.0) < 1e-10
    assert abs(H[0, 1]) < 1e-12
    # alpha = 1 boundary: the ss factor alpha (alpha - 1) is zero
    H1 = hessian_F(ch, prof.with_alpha(1.0), (0.1, 1.0))
    assert abs(H1[0, 0]) < 1e-12


def test_hessian_matches_finite_differences(nose_chart):
    prof = wavy_profile(nose_chart.period, alpha=4.0)
    a = prof.alpha

    def F(s, th):
        phi, _, _ = prof.at(th)
        return s ** a / phi ** a

    rng = np.random.default_rng(3)
    h = 1e-5
    for _ in range(40):
        s = rng.uniform(0.01, nose_chart.s_max)
        th = rng.uniform(0.0, nose_chart.period)
        Fs = (F(s + h, th) - F(s - h, th)) / (2 * h)
        Fth = (F(s, th + h) - F(s, th - h)) / (2 * h)
        Fss = (F(s + h, th) - 2 * F(s, th) + F(s - h, th)) / h ** 2
        Fst = (F(s + h, th + h) - F(s + h, th - h)
               - F(s - h, th + h) + F(s - h, th - h)) / (4 * h ** 2)
        Ftt = (F(s, th + h) - 2 * F(s, th) + F(s, th - h)) / h ** 2
        v = nose_chart.values(s, th)
        f, fs, fth = v["f"], v["f_s"], v["f_th"]
        # covariant Hessian through the tube metric ds^2 + f^2 dtheta^2
        fd = np.array([Fss,
                       Fst - (fs / f) * Fth,
                       Ftt + f * fs * Fs - (fth / f) * Fth])
        H = hessian_F(nose_chart, prof, (s, th))
        got = np.array([H[0, 0], H[0, 1], H[1, 1]])
        scale = np.max(np.abs(fd))
        assert np.max(np.abs(got - fd)) < 1e-4 * scale
        g = gradient_F(nose_chart, prof, (s, th))
        gfd = np.array([Fs, Fth / f ** 2])
        assert np.max(np.abs(g - gfd)) < 1e-6 * max(np.max(np.abs(gfd)),
                                                    1e-12)


def test_theta_component_positive_at_small_s(nosed, nose_geodesic,
                                             nose_chart):
    # with lam1 > 0 the theta-theta component is dominated by
    # alpha s^alpha lam1 / phi^alpha > 0 near the core: the convexity
    # mechanism
    prof = first_eigen(potential_along(nosed, nose_geodesic))
    for th in np.linspace(0.0, nose_chart.period, 9):
        H = hessian_F(nose_chart, prof, (0.01, th))
        assert H[1, 1] > 0.0


def test_hessian_domain_checks(nose_chart):
    prof = constant_profile(nose_chart.period)
    with pytest.raises(ChartEdge):
        hessian_F(nose_chart, prof, (0.2, 0.0))
    with pytest.raises(ValueError):
        hessian_F(nose_chart, prof, (0.0, 0.0))


# ----------------------------------------------------------------------
# tube certification
# ----------------------------------------------------------------------

def test_certify_neck_waist(snow, neck_geodesic, neck_cert):
    alpha, s_star, cert = neck_cert
    assert alpha == 2.0           # every Hessian term positive already
    assert cert.min_eig > 0.0
    assert s_star == cert.s_star


def test_certificate_survives_doubling(neck_cert):
    # invariance of the schedule: (2 alpha*, s*/2) also certifies
    alpha, s_star, cert = neck_cert
    mineig, worst, _ = validate_tube(cert.chart, cert.profile,
                                     2 * alpha, s_star / 2)
    assert mineig > 0.0


def test_certify_nose_waist(nosed, nose_geodesic, nose_chart):
    prof = first_eigen(potential_along(nosed, nose_geodesic))
    alpha, s_star, cert = certify_convex_tube(
        nosed, nose_geodesic, chart=nose_chart, prof=prof)
    assert cert.min_eig > 0.0
    assert np.all(cert.min_eig_table > 0.0)


def test_certify_requires_strict_stability():
    m = SurfaceMetric(cylinder_profile(1.0, 12.0))
    p, _ = shoot(m, (6.0, 0.0), np.pi / 2, TWO_PI)
    p.closed = True
    with pytest.raises(NotStrictlyStable):
        certify_convex_tube(m, p, s_max=0.3)


# ----------------------------------------------------------------------
# persistence
# ----------------------------------------------------------------------

def test_persist_identity(snow, neck_geodesic, neck_cert):
    res = persist_geodesic(snow, snow, neck_geodesic, cert=neck_cert[2])
    assert res.distance < 1e-8
    assert res.limit_spread < 1e-6
    assert res.lam1 > 0.0


def test_persist_untouched_tube(snow, neck_geodesic, neck_cert):
    # a bump far from the tube leaves the metric there unchanged, so the
    # persisted geodesic is the original one
    t_eq, _ = snow.equator()
    far = add_perturbation(snow, RadialPerturbation((t_eq, 1.0), rho=0.2,
                                                    amplitude=0.02))
    res = persist_geodesic(snow, far, neck_geodesic, cert=neck_cert[2])
    assert res.distance < 1e-8


def test_persist_contraction_sweep(snow, neck_geodesic, neck_cert):
    t_up = snow.landmarks["upper_neck_waist"]
    amps = [0.02, 0.01, 0.005, 0.0025]
    dists = []
    for amp in amps:
        near = add_perturbation(snow, RadialPerturbation(
            (t_up + 0.05, 1.0), rho=0.2, amplitude=amp))
        res = persist_geodesic(snow, near, neck_geodesic,
                               cert=neck_cert[2])
        assert res.path.residual < 1e-6
        assert res.lam1 > 0.0
        dists.append(res.distance)
    # displacement decreases with the perturbation and is linearly
    # controlled by its amplitude
    assert all(np.diff(dists) < 0.0)
    ratios = np.array(dists) / np.array(amps)
    assert np.all(ratios < 0.2)
    assert np.ptp(ratios) < 0.05 * np.max(ratios) + 0.01


def test_persist_escaped_tube(snow, neck_geodesic, neck_cert):
    # shrink the certified half-width below the displacement the bump
    # causes: the constrained minimizer pins to the wall
    t_up = snow.landmarks["upper_neck_waist"]
    near = add_perturbation(snow, RadialPerturbation(
        (t_up + 0.05, 1.0), rho=0.2, amplitude=0.02))
    tight = dataclasses.replace(neck_cert[2], s_star=5e-4)
    with pytest.raises(EscapedTube):
        persist_geodesic(snow, near, neck_geodesic, cert=tight)


# ----------------------------------------------------------------------
# artifacts
# ----------------------------------------------------------------------

def test_artifact_dumps(tmp_path, neck_cert):
    alpha, s_star, cert = neck_cert
    cpath = tmp_path / "tube.txt"
    write_certificate(cert, cpath)
    text = cpath.read_text()
    assert "alpha = 2.0" in text
    assert "min_hessian_eigenvalue" in text
    dpath = tmp_path / "chart.csv"
    dump_chart_csv(cert.chart, dpath)
    header = dpath.read_text().splitlines()[0]
    assert header == "s,theta,f,f_s,f_theta"

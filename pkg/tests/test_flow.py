import numpy as np
import pytest

from revlab.errors import Collapsed, SimplicityLost
from revlab.flow import (
    Barrier,
    ClosedCurve,
    curve_from_path,
    intersection_count,
    is_locally_convex,
    shorten,
    waist_barrier,
)
from revlab.geodesics import shoot
from revlab.surface import RadialPerturbation, add_perturbation, build_snowman


@pytest.fixture(scope="module")
def snow():
    return build_snowman()


@pytest.fixture(scope="module")
def nosed(snow):
    t_eq, _ = snow.equator()
    return add_perturbation(snow, RadialPerturbation(
        (t_eq - 0.5, 2.0), rho=0.6, kind="nose-waist"))


def latitude(t0, n=128):
    th = np.linspace(0.0, 2.0 * np.pi, n, endpoint=False)
    return ClosedCurve(np.full(n, t0), th)


def small_loop(tc, thc, r_t, r_th, n=96, phase=0.013):
    phi = np.linspace(0.0, 2.0 * np.pi, n, endpoint=False) + phase
    return ClosedCurve(tc + r_t * np.cos(phi), thc + r_th * np.sin(phi))


# ----------------------------------------------------------------------
# curves and intersections
# ----------------------------------------------------------------------

def test_curve_basic_properties(snow):
    c = latitude(snow.equator()[0])
    assert c.winding == 1
    assert c.is_simple()
    # equator latitude has the bare equator length 2 pi
    assert abs(c.length(snow) - 2.0 * np.pi) < 1e-3


def test_figure_eight_not_simple():
    phi = np.linspace(0.0, 2.0 * np.pi, 100, endpoint=False) + 0.013
    c = ClosedCurve(5.5 + 0.2 * np.sin(phi), 1.0 + 0.1 * np.sin(2 * phi))
    assert not c.is_simple()


def test_intersection_counts(snow):
    t_eq, _ = snow.equator()
    assert intersection_count(latitude(t_eq), latitude(t_eq + 0.4)) == 0
    # a tilted wave dipping below the equator crosses it twice
    n = 128
    th = np.linspace(0.0, 2.0 * np.pi, n, endpoint=False)
    wave = ClosedCurve(t_eq + 0.15 + 0.25 * np.sin(th), th)
    assert intersection_count(wave, latitude(t_eq)) == 2
    # a contractible loop pierced by a latitude circle
    loop = small_loop(t_eq, 2.0, 0.15, 0.2)
    assert loop.winding == 0
    assert intersection_count(loop, latitude(t_eq)) == 2
    assert intersection_count(latitude(t_eq), loop) == 2


def test_resample_preserves_shape(snow):
    t_eq, _ = snow.equator()
    c = small_loop(t_eq + 0.6, 1.0, 0.2, 0.25, n=60)
    r = c.resampled(snow, 120)
    assert r.n == 120
    assert abs(r.length(snow) - c.length(snow)) < 1e-3
    assert r.is_simple()


# ----------------------------------------------------------------------
# the flow
# ----------------------------------------------------------------------

def test_flow_slides_to_neck_waist(snow):
    t_eq, _ = snow.equator()
    t_up = snow.landmarks["upper_neck_waist"]
    c = latitude(0.5 * (t_eq + t_up) + 0.3)
    eq = latitude(t_eq)
    out, cert = shorten(snow, c, stop=1e-4, references={"equator": eq})
    assert cert.converged
    assert cert.sup_kappa < 1e-4
    # the limit is the upper neck waist circle, length 2 pi r_neck
    assert abs(out.length(snow) - 2.0 * np.pi * 0.3) < 1e-5
    assert np.max(np.abs(out.t - t_up)) < 1e-4
    lh = cert.length_history()
    assert np.all(np.diff(lh) <= 1e-12 * np.maximum(lh[:-1], 1.0))
    assert max(cert.intersection_history["equator"]) == 0


def test_geodesic_is_fixed_point(snow):
    t_up = snow.landmarks["upper_neck_waist"]
    c = latitude(t_up)
    out, cert = shorten(snow, c, stop=1e-6)
    assert cert.converged
    assert cert.steps <= 1
    assert np.max(np.abs(out.t - t_up)) < 1e-8


def test_equator_crossings_never_increase(snow):
    t_eq, _ = snow.equator()
    n = 128
    th = np.linspace(0.0, 2.0 * np.pi, n, endpoint=False)
    wave = ClosedCurve(t_eq + 0.15 + 0.25 * np.sin(th), th)
    eq = latitude(t_eq)
    out, cert = shorten(snow, wave, stop=1e-4, references={"equator": eq})
    hist = cert.intersection_history["equator"]
    assert hist[0] == 2
    assert np.all(np.diff(hist) <= 0)
    assert cert.converged


def test_contractible_loop_collapses(snow):
    t_eq, _ = snow.equator()
    loop = small_loop(t_eq + 0.3, 2.0, 0.12, 0.15)
    with pytest.raises(Collapsed):
        shorten(snow, loop, stop=1e-12, max_steps=100000)


def test_nonsimple_input_rejected(snow):
    phi = np.linspace(0.0, 2.0 * np.pi, 100, endpoint=False) + 0.013
    c = ClosedCurve(5.5 + 0.2 * np.sin(phi), 1.0 + 0.1 * np.sin(2 * phi))
    with pytest.raises(SimplicityLost):
        shorten(snow, c, stop=1e-4)


def test_barrier_traps_loop(nosed):
    # a contractible loop around the nose cannot collapse: the waist
    # barrier catches it and it settles onto the waist circle
    info = nosed.nose_info[0]
    b = waist_barrier(nosed, 0)
    assert b.certificate.index == 0 and b.certificate.nullity == 0
    chart = nosed.charts[0]
    psi = np.linspace(0.0, 2.0 * np.pi, 128, endpoint=False)
    t, th, _ = chart.forward(np.full(128, 2.5 * info["waist_d"]), psi)
    loop = ClosedCurve(np.asarray(t), np.unwrap(np.asarray(th)))
    out, cert = shorten(nosed, loop, barriers=[b], stop=1e-3,
                        max_steps=20000)
    assert cert.min_barrier_distance >= 0.0
    assert abs(out.length(nosed) - info["length"]) < 1e-2
    # the limit hugs the barrier: every vertex within 1e-3 of the waist
    assert np.max(b.signed_distance(out.t, out.theta)) < 1e-3


def test_barrier_projection_pushes_points_out(nosed):
    info = nosed.nose_info[0]
    b = waist_barrier(nosed, 0)
    chart = nosed.charts[0]
    psi = np.linspace(0.0, 2.0 * np.pi, 32, endpoint=False)
    t, th, _ = chart.forward(np.full(32, 0.5 * info["waist_d"]), psi)
    t = np.asarray(t)
    th = np.unwrap(np.asarray(th))
    assert np.all(b.signed_distance(t, th) < 0.0)
    tp, thp, moved = b.project_out(t, th, offset=1e-6)
    assert moved == 32
    d = b.signed_distance(tp, thp)
    assert np.all(d >= 0.0)
    assert np.max(d) < 1e-4
    # points already outside are untouched
    t2, th2, _ = chart.forward(np.full(8, 3.0 * info["waist_d"]),
                               psi[:8])
    t2 = np.asarray(t2)
    th2 = np.unwrap(np.asarray(th2))
    t2p, th2p, moved2 = b.project_out(t2, th2, offset=1e-6)
    assert moved2 == 0
    assert np.array_equal(t2p, t2) and np.array_equal(th2p, th2)


def test_flow_determinism(snow):
    t_eq, _ = snow.equator()
    t_up = snow.landmarks["upper_neck_waist"]
    c = latitude(0.5 * (t_eq + t_up) + 0.3, n=64)
    out1, cert1 = shorten(snow, c, stop=1e-3)
    out2, cert2 = shorten(snow, c, stop=1e-3)
    assert np.array_equal(out1.t, out2.t)
    assert np.array_equal(out1.theta, out2.theta)
    assert cert1.lengths == cert2.lengths


# ----------------------------------------------------------------------
# local convexity
# ----------------------------------------------------------------------

def test_annulus_between_waists_locally_convex(snow):
    pieces = []
    for which in ("lower", "upper"):
        t_n = snow.landmarks[f"{which}_neck_waist"]
        path, _ = shoot(snow, (t_n, 0.0), np.pi / 2, 2.0 * np.pi * 0.3)
        path.closed = True
        pieces.append({"path": path})
    assert is_locally_convex(snow, pieces)


def test_reflex_corner_not_convex(snow):
    class Arc:
        def __init__(self, t, theta, alpha):
            self.t = np.asarray(t, float)
            self.theta = np.asarray(theta, float)
            self.alpha = np.asarray(alpha, float)
            self.residual = 0.0
            self.closed = False

    # two geodesic arcs meeting at interior angle 1.2 pi (a left turn of
    # -0.2 pi relative to straight): reflex corner
    a = Arc([5.0, 5.5], [0.0, 0.0], [0.0, 0.0])
    b = Arc([5.5, 5.2], [0.0, 0.3], [-0.2 * np.pi, -0.2 * np.pi])
    assert not is_locally_convex(snow, [{"path": a}, {"path": b}])


def test_curved_piece_not_convex(snow):
    t_eq, _ = snow.equator()
    path, _ = shoot(snow, (t_eq, 0.0), np.pi / 2, 2.0 * np.pi)
    path.closed = True
    assert not is_locally_convex(
        snow, [{"path": path, "kappa_max": 0.5}])


def test_curve_from_path_roundtrip(snow):
    t_up = snow.landmarks["upper_neck_waist"]
    path, _ = shoot(snow, (t_up, 0.0), np.pi / 2, 2.0 * np.pi * 0.3)
    path.closed = True
    c = curve_from_path(path)
    assert c.winding == 1
    assert abs(c.length(snow) - path.length) < 1e-4

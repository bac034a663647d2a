import numpy as np
import pytest

from revlab.errors import GridCapExceeded, NotAGeodesic
from revlab.geodesics import shoot
from revlab.profile import cylinder_profile, sphere_profile
from revlab.spectrum import (
    JacobiSpectrum,
    PotentialTrace,
    closed_eigenpair,
    closed_index,
    conjugate_zero_count,
    dirichlet_eigenpair,
    grid_size,
    potential_along,
    segment_index,
    stability_integrals,
)
from revlab.surface import SurfaceMetric


def great_circle_trace(n=1024):
    return PotentialTrace(K=np.ones(n), length=2.0 * np.pi, closed=True)


def test_sphere_great_circle_spectrum():
    spec = closed_index(great_circle_trace())
    assert spec.index == 1
    assert spec.nullity == 2
    # -u'' - u on the circle: eigenvalues n^2 - 1 (double for n >= 1)
    expect = np.array([-1.0, 0.0, 0.0, 3.0, 3.0])
    assert np.max(np.abs(spec.eigenvalues[:5] - expect)) < 1e-3


def test_flat_circle_spectrum():
    L = 5.0
    trace = PotentialTrace(K=np.zeros(1024), length=L, closed=True)
    spec = closed_index(trace)
    assert spec.index == 0
    assert spec.nullity == 1
    expect = (2.0 * np.pi / L) ** 2 * np.array([0, 1, 1, 4, 4], dtype=float)
    assert np.max(np.abs(spec.eigenvalues[:5] - expect)) < 1e-2


def test_spectral_convergence_order():
    # eigenvalue error is O(h^2): halving the grid spacing shrinks the
    # defect by a factor in [3, 5]
    exact = np.array([-1.0, 0.0, 0.0, 3.0, 3.0])
    e_coarse = closed_index(great_circle_trace(512)).eigenvalues[:5] - exact
    e_fine = closed_index(great_circle_trace(1024)).eigenvalues[:5] - exact
    for c, f in zip(e_coarse, e_fine):
        if abs(c) < 1e-9:
            # the constant mode is exact for the discrete operator; only
            # roundoff remains, so no order can be measured
            assert abs(f) < 1e-9
        else:
            assert 3.0 <= c / f <= 5.0


def test_eigenvalue_monotonicity_in_potential():
    # raising K pointwise lowers every eigenvalue (min-max)
    rng = np.random.default_rng(11)
    base = rng.uniform(-0.5, 0.5, 512)
    lift = rng.uniform(0.0, 0.4, 512)
    t1 = PotentialTrace(K=base, length=4.0, closed=True)
    t2 = PotentialTrace(K=base + lift, length=4.0, closed=True)
    s1 = closed_index(t1)
    s2 = closed_index(t2)
    assert np.all(s2.eigenvalues <= s1.eigenvalues + 1e-10)
    assert s2.index >= s1.index


def test_dirichlet_sphere_arcs():
    # first conjugate point of a unit-sphere arc sits at length pi
    short = PotentialTrace(K=np.ones(512), length=0.9 * np.pi, closed=False)
    long = PotentialTrace(K=np.ones(512), length=1.5 * np.pi, closed=False)
    s_short = segment_index(short)
    s_long = segment_index(long)
    assert s_short.index == 0
    assert s_long.index == 1
    # analytic Dirichlet eigenvalues (n pi / L)^2 - 1
    L = 1.5 * np.pi
    expect = (np.arange(1, 4) * np.pi / L) ** 2 - 1.0
    assert np.max(np.abs(s_long.eigenvalues[:3] - expect)) < 1e-3


def test_conjugate_zero_count_matches_analytic():
    for L, zeros in [(0.9 * np.pi, 0), (1.5 * np.pi, 1), (2.5 * np.pi, 2)]:
        trace = PotentialTrace(K=np.ones(512), length=L, closed=False)
        assert conjugate_zero_count(trace) == zeros


def test_random_morse_cross_checks():
    # random smooth bounded potentials: Dirichlet eigen-count must equal
    # the Jacobi conjugate-point count, exactly, every time
    rng = np.random.default_rng(23)
    for _ in range(12):
        L = rng.uniform(2.0, 9.0)
        n = grid_size(L)
        modes = rng.normal(0.0, 0.6, 4)
        s = np.arange(1, n + 1) * (L / (n + 1))
        K = sum(a * np.sin((j + 1) * np.pi * s / L)
                for j, a in enumerate(modes)) + rng.uniform(-0.3, 0.8)
        trace = PotentialTrace(K=K, length=L, closed=False)
        spec = segment_index(trace)
        assert spec.index == conjugate_zero_count(trace)


def test_potential_along_great_circle():
    m = SurfaceMetric(sphere_profile(1.0))
    path, _ = shoot(m, (np.pi / 2, 0.0), np.pi / 2, 2.0 * np.pi)
    path.closed = True
    trace = potential_along(m, path)
    assert trace.closed
    assert abs(trace.length - 2.0 * np.pi) < 1e-9
    assert np.max(np.abs(trace.K - 1.0)) < 1e-8
    spec = closed_index(trace)
    assert (spec.index, spec.nullity) == (1, 2)


def test_potential_along_rejects_bad_residual():
    m = SurfaceMetric(cylinder_profile(1.0, 10.0))
    path, _ = shoot(m, (5.0, 0.0), np.pi / 2, 2.0 * np.pi)
    path.residual = 1e-3
    with pytest.raises(NotAGeodesic):
        potential_along(m, path)


def test_grid_size_and_cap():
    assert grid_size(2.0 * np.pi) == 2048
    assert grid_size(0.001) == 2
    with pytest.raises(GridCapExceeded):
        grid_size(100.0)


def test_stability_integrals_great_circle():
    intK, meanKp, prod = stability_integrals(great_circle_trace())
    assert abs(intK - 2.0 * np.pi) < 1e-9
    assert abs(meanKp - 1.0) < 1e-9
    assert abs(prod - (2.0 * np.pi) ** 2) < 1e-6


def test_eigenpairs_match_counts():
    trace = great_circle_trace(512)
    lam0, vec0 = closed_eigenpair(trace, 0)
    assert abs(lam0 + 1.0) < 1e-3
    # ground state of a constant potential is constant
    assert np.ptp(vec0) < 1e-8
    dtrace = PotentialTrace(K=np.ones(512), length=1.5 * np.pi, closed=False)
    lam, vec = dirichlet_eigenpair(dtrace, 0)
    assert lam < 0
    assert np.all(vec > -1e-12)  # sign-normalized ground state


def test_positive_count_partition():
    spec = closed_index(great_circle_trace(256))
    assert isinstance(spec, JacobiSpectrum)
    assert spec.index + spec.nullity + spec.positive_count == spec.n

"""Morse index and nullity of geodesics via the Jacobi operator u'' + K u.

The eigenvalue convention: lambda is an eigenvalue when
-u'' - K u = lambda u with periodic (closed geodesics) or Dirichlet
(segments) boundary conditions; the Morse index is the number of negative
eigenvalues, the nullity the number inside the +-eps_null band.

Index and nullity are computed from inertia counts of the shifted cyclic
tridiagonal discretization (LDL^T pivot signs with last-row fill-in), so
they never depend on eigenvector accuracy; reported eigenvalues come from
bisection on the same inertia function.  Segment indices are cross-checked
against conjugate-point counts of the Jacobi ODE.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.integrate import solve_ivp
from scipy.interpolate import CubicSpline
from scipy.linalg import eigh_tridiagonal, eigvalsh_tridiagonal

from .errors import (
    CrossCheckMismatch,
    GridCapExceeded,
    NotAGeodesic,
    UnresolvedNullity,
)

__all__ = [
    "PotentialTrace",
    "JacobiSpectrum",
    "potential_along",
    "closed_index",
    "segment_index",
    "stability_integrals",
    "grid_size",
]

BASE_PER_UNIT = 256
GRID_CAP = 16384
RESIDUAL_TOL = 1e-6


# ----------------------------------------------------------------------
# traces and spectra
# ----------------------------------------------------------------------

@dataclass(frozen=True)
class PotentialTrace:
    """Uniform arclength samples of the Gaussian curvature along a geodesic.

    closed: K sampled at s_i = i*h, i = 0..n-1, h = length/n.
    open (Dirichlet): K sampled at interior nodes s_i = i*h, i = 1..n,
    h = length/(n+1).
    """
    K: np.ndarray
    length: float
    closed: bool

    def __post_init__(self):
        object.__setattr__(self, "K", np.asarray(self.K, dtype=float))
        if self.length <= 0:
            raise ValueError("trace length must be positive")

    @property
    def n(self):
        return len(self.K)

    @property
    def h(self):
        return self.length / (self.n if self.closed else self.n + 1)

    def refined(self):
        """Trace at doubled grid by (periodic) cubic interpolation."""
        n = self.n
        if self.closed:
            s = np.arange(n + 1) * self.h
            spl = CubicSpline(s, np.append(self.K, self.K[0]),
                              bc_type="periodic")
            s2 = np.arange(2 * n) * (self.length / (2 * n))
        else:
            s = np.arange(n + 2) * self.h
            # natural-extrapolated endpoint values for the open case
            Kfull = np.concatenate([[self.K[0]], self.K, [self.K[-1]]])
            spl = CubicSpline(s, Kfull)
            h2 = self.length / (2 * n + 2)
            s2 = np.arange(1, 2 * n + 2) * h2
        return PotentialTrace(spl(s2), self.length, self.closed)


@dataclass(frozen=True)
class JacobiSpectrum:
    boundary: str            # "periodic" | "dirichlet"
    n: int
    eigenvalues: np.ndarray  # lowest few, sorted ascending
    index: int
    nullity: int
    eps_null: float

    @property
    def positive_count(self):
        return self.n - self.index - self.nullity


def grid_size(length, per_unit=BASE_PER_UNIT):
    """Power-of-two grid size at the base resolution; hard cap enforced."""
    n = 1 << int(np.ceil(np.log2(max(2.0, per_unit * length))))
    if n > GRID_CAP:
        raise GridCapExceeded(f"grid {n} exceeds cap {GRID_CAP} "
                              f"(length {length:.3g})")
    return n


def eps_null_for(n):
    """Nullity band: 10x the discretization error of the first positive
    eigenvalue (= 3) of the unit-sphere great-circle problem at grid n."""
    h = 2.0 * np.pi / n
    return 10.0 * abs(4.0 - 4.0 * (np.sin(h) / h) ** 2)


# ----------------------------------------------------------------------
# inertia counting for the periodic (cyclic tridiagonal) operator
# ----------------------------------------------------------------------

def _cyclic_inertia(diag, off, sigmas):
    """Number of eigenvalues < sigma of the cyclic tridiagonal matrix with
    constant off-diagonal/corner `off`, vectorized over sigmas.

    LDL^T elimination tracking the fill-in of the last column; pivot signs
    give the inertia (Sylvester).
    """
    sig = np.atleast_1d(np.asarray(sigmas, dtype=float))
    n = len(diag)
    tiny = 1e-300
    neg = np.zeros(sig.shape, dtype=int)
    delta = diag[0] - sig
    delta = np.where(np.abs(delta) < tiny, -tiny, delta)
    fill = np.full(sig.shape, off)        # A[0, n-1] corner
    last = diag[n - 1] - sig - fill * fill / delta
    neg += (delta < 0)
    for i in range(1, n - 1):
        t_i = off if i == n - 2 else 0.0
        l = off / delta
        new_delta = diag[i] - sig - off * l
        new_fill = t_i - l * fill
        delta = np.where(np.abs(new_delta) < tiny, -tiny, new_delta)
        last = last - new_fill * new_fill / delta
        neg += (delta < 0)
        fill = new_fill
    neg += (last < 0)
    return neg if np.ndim(sigmas) else int(neg[0])


def _periodic_counts(trace, eps):
    h = trace.h
    diag = 2.0 / h ** 2 - trace.K
    off = -1.0 / h ** 2
    below, upto = _cyclic_inertia(diag, off, np.array([-eps, eps]))
    return int(below), int(upto - below)  # (index, nullity)


def _periodic_eigenvalues(trace, m):
    """Lowest m eigenvalues by lockstep bisection on the inertia count."""
    h = trace.h
    diag = 2.0 / h ** 2 - trace.K
    off = -1.0 / h ** 2
    m = min(m, trace.n)
    lo = np.full(m, float(np.min(-trace.K)) - 1e-6)
    hi = np.full(m, float(np.max(diag)) + 2.0 / h ** 2 + 1.0)
    target = np.arange(1, m + 1)
    for _ in range(90):
        mid = 0.5 * (lo + hi)
        cnt = _cyclic_inertia(diag, off, mid)
        ge = cnt >= target
        hi = np.where(ge, mid, hi)
        lo = np.where(ge, lo, mid)
        if np.max(hi - lo) < 1e-13 * max(1.0, np.max(np.abs(mid))):
            break
    return 0.5 * (lo + hi)


def closed_eigenpair(trace, which=0):
    """(lambda_k, eigenvector) of the periodic problem via a dense solve.

    Only for modest grids (the nose-waist circles the suite certifies);
    counts never depend on this path.
    """
    n = trace.n
    if n > 4096:
        raise GridCapExceeded("dense eigenvector solve capped at 4096")
    h = trace.h
    A = np.zeros((n, n))
    idx = np.arange(n)
    A[idx, idx] = 2.0 / h ** 2 - trace.K
    A[idx, (idx + 1) % n] = -1.0 / h ** 2
    A[idx, (idx - 1) % n] = -1.0 / h ** 2
    w, v = np.linalg.eigh(A)
    vec = v[:, which]
    if vec[np.argmax(np.abs(vec))] < 0:
        vec = -vec
    return float(w[which]), vec


# ----------------------------------------------------------------------
# public operations
# ----------------------------------------------------------------------

def potential_along(metric, path, per_unit=BASE_PER_UNIT):
    """Resample the perturbed Gaussian curvature uniformly by arclength
    along a geodesic path."""
    if path.residual > RESIDUAL_TOL:
        raise NotAGeodesic(f"residual {path.residual:.2e} above "
                           f"{RESIDUAL_TOL:.0e}")
    n = grid_size(path.length, per_unit)
    closed = bool(path.closed)
    if closed:
        s = np.arange(n) * (path.length / n)
    else:
        s = np.arange(1, n + 1) * (path.length / (n + 1))
    t, theta = path.at(s)
    K = metric.fields(t, theta, second=True)["K"]
    return PotentialTrace(K=K, length=path.length, closed=closed)


def closed_index(trace: PotentialTrace, n_report=8) -> JacobiSpectrum:
    """Index/nullity of a closed geodesic with grid-doubling confirmation."""
    if not trace.closed:
        raise ValueError("closed_index requires a closed trace")
    eps = eps_null_for(trace.n)
    index, nullity = _periodic_counts(trace, eps)
    fine = trace.refined()
    index2, nullity2 = _periodic_counts(fine, eps_null_for(fine.n))
    if index2 != index or nullity2 != nullity:
        raise UnresolvedNullity(
            f"refinement moved (index, nullity) from ({index}, {nullity}) "
            f"to ({index2}, {nullity2})")
    if nullity > 2:
        raise UnresolvedNullity(f"nullity {nullity} exceeds the surface "
                                "bound 2 after refinement")
    eigs = _periodic_eigenvalues(trace, n_report)
    return JacobiSpectrum("periodic", trace.n, eigs, index, nullity, eps)


def conjugate_zero_count(trace: PotentialTrace):
    """Conjugate points of the segment counted by integrating the Jacobi
    field u'' + K u = 0, u(0) = 0, u'(0) = 1, over the open interval."""
    n = trace.n
    s_nodes = np.arange(n + 2) * trace.h
    Kfull = np.concatenate([[trace.K[0]], trace.K, [trace.K[-1]]])
    Kspl = CubicSpline(s_nodes, Kfull)

    def rhs(s, y):
        return [y[1], -Kspl(s) * y[0]]

    sol = solve_ivp(rhs, (0.0, trace.length), [0.0, 1.0], method="DOP853",
                    rtol=1e-10, atol=1e-12, dense_output=True)
    s = np.linspace(0.0, trace.length, 8 * n + 1)[1:-1]
    u = sol.sol(s)[0]
    signs = np.sign(u)
    return int(np.sum(signs[:-1] * signs[1:] < 0))


def segment_index(trace: PotentialTrace) -> JacobiSpectrum:
    """Dirichlet index of a geodesic segment, cross-checked against the
    Morse index theorem (conjugate-point count)."""
    if trace.closed:
        raise ValueError("segment_index requires an open trace")
    h = trace.h
    diag = 2.0 / h ** 2 - trace.K
    off = np.full(trace.n - 1, -1.0 / h ** 2)
    eps = eps_null_for(trace.n)
    w = eigvalsh_tridiagonal(diag, off)
    index = int(np.sum(w < -eps))
    nullity = int(np.sum(np.abs(w) <= eps))
    zeros = conjugate_zero_count(trace)
    if zeros != index:
        fine = trace.refined()
        hf = fine.h
        wf = eigvalsh_tridiagonal(2.0 / hf ** 2 - fine.K,
                                  np.full(fine.n - 1, -1.0 / hf ** 2))
        index_f = int(np.sum(wf < -eps_null_for(fine.n)))
        if index_f != zeros:
            raise CrossCheckMismatch(
                f"Dirichlet count {index} (refined {index_f}) vs "
                f"conjugate-point count {zeros}")
        index = index_f
    return JacobiSpectrum("dirichlet", trace.n, np.sort(w)[:8], index,
                          nullity, eps)


def dirichlet_eigenpair(trace: PotentialTrace, which=0):
    h = trace.h
    diag = 2.0 / h ** 2 - trace.K
    off = np.full(trace.n - 1, -1.0 / h ** 2)
    w, v = eigh_tridiagonal(diag, off, select="i",
                            select_range=(which, which))
    vec = v[:, 0]
    if vec[np.argmax(np.abs(vec))] < 0:
        vec = -vec
    return float(w[0]), vec


def stability_integrals(trace: PotentialTrace):
    """(integral of K, mean of max(K,0), length * integral of max(K,0))."""
    K = trace.K
    if trace.closed:
        intK = float(np.sum(K) * trace.h)
        intKp = float(np.sum(np.maximum(K, 0.0)) * trace.h)
    else:
        intK = float(np.trapezoid(np.concatenate([[K[0]], K, [K[-1]]]),
                                  dx=trace.h))
        intKp = float(np.trapezoid(
            np.maximum(np.concatenate([[K[0]], K, [K[-1]]]), 0.0),
            dx=trace.h))
    return intK, intKp / trace.length, trace.length * intKp

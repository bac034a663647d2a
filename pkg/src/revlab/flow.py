"""Discrete curve-shortening flow on closed polylines.

Curves live in the (t, theta) coordinates of a SurfaceMetric with theta
kept unwrapped (the winding around the axis is part of the state).  The
flow moves vertices along the discrete curvature vector (the metric
gradient of polyline length), with adaptive step acceptance that enforces
at runtime what the continuum theory guarantees: length monotonicity,
preservation of simplicity, non-increasing intersection counts with
registered reference curves, and strict barrier avoidance by projection.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import splu

from .errors import (
    BarrierContact,
    Collapsed,
    DegeneratePosition,
    MaxStepsExceeded,
    NotStrictlyStable,
    SimplicityLost,
)
from .surface import normalize_theta

__all__ = [
    "ClosedCurve",
    "Barrier",
    "shorten",
    "intersection_count",
    "is_locally_convex",
    "curve_from_path",
    "waist_barrier",
    "CapBarrier",
    "collar_barrier",
]

TWO_PI = 2.0 * np.pi


# ----------------------------------------------------------------------
# curves
# ----------------------------------------------------------------------

@dataclass
class ClosedCurve:
    """Oriented closed polyline in (t, theta) with unwrapped theta.

    Vertices are stored without the duplicated endpoint; the closing edge
    runs from the last vertex back to the first shifted by 2*pi*winding.
    """
    t: np.ndarray
    theta: np.ndarray

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=float)
        self.theta = np.asarray(self.theta, dtype=float)
        if self.t.shape != self.theta.shape or self.t.ndim != 1:
            raise ValueError("curve needs matching 1-d vertex arrays")
        if len(self.t) < 4:
            raise ValueError("closed curve needs at least 4 vertices")

    @property
    def n(self):
        return len(self.t)

    @property
    def winding(self):
        # theta advance over the closing edge, in whole turns
        return int(round((self.theta[-1] - self.theta[0]) / TWO_PI))

    def vertices_closed(self):
        """(n+1)-vertex arrays with the closing vertex appended."""
        tc = np.append(self.t, self.t[0])
        thc = np.append(self.theta, self.theta[0] + TWO_PI * self.winding)
        return tc, thc

    def edge_segments(self):
        """Segment endpoint arrays (x0, y0, x1, y1) with x = theta, y = t."""
        tc, thc = self.vertices_closed()
        return thc[:-1], tc[:-1], thc[1:], tc[1:]

    def length(self, metric):
        return float(np.sum(_edge_lengths(metric, *self.vertices_closed())))

    def is_simple(self):
        """Exact transverse segment-pair test on the cylinder.

        The unwrapped polyline is compared against itself shifted by every
        relevant multiple of 2*pi (universal-cover copies)."""
        x0, y0, x1, y1 = self.edge_segments()
        span = self.theta.max() - self.theta.min()
        kmax = int(np.ceil(span / TWO_PI)) + 1
        n = self.n
        for k in range(0, kmax + 1):
            sx0, sx1 = x0 + k * TWO_PI, x1 + k * TWO_PI
            hits = _segment_crossings(x0, y0, x1, y1, sx0, y0, sx1, y1,
                                      same_curve=(k == 0))
            if k == 0:
                # adjacent edges share a vertex; mask those pairs
                i, j = hits
                keep = (np.abs(i - j) > 1) & (np.abs(i - j) != n - 1)
                if np.any(keep):
                    return False
            elif len(hits[0]):
                return False
        return True

    def resampled(self, metric, n=None, weight=None):
        """Near-uniform redistribution of vertices by metric arclength.

        weight: optional callable (t, theta) -> positive multiplier,
        evaluated at edge midpoints; regions with weight w receive
        vertices w times denser than the uniform allocation (used to
        resolve tight wraps around barriers).
        """
        n = n or self.n
        tc, thc = self.vertices_closed()
        ell = _edge_lengths(metric, tc, thc)
        if weight is not None:
            w = np.asarray(weight(0.5 * (tc[:-1] + tc[1:]),
                                  0.5 * (thc[:-1] + thc[1:])), float)
            ell = ell * np.maximum(w, 1e-12)
        s = np.concatenate([[0.0], np.cumsum(ell)])
        total = s[-1]
        sq = np.linspace(0.0, total, n, endpoint=False)
        tn = np.interp(sq, s, tc)
        thn = np.interp(sq, s, thc)
        return ClosedCurve(tn, thn)

    def copy(self):
        return ClosedCurve(self.t.copy(), self.theta.copy())


def curve_from_path(path):
    """ClosedCurve from a closed GeodesicPath (drops the repeated end)."""
    return ClosedCurve(path.t[:-1].copy(), path.theta[:-1].copy())


def _edge_lengths(metric, tc, thc, fv=None, fm=None):
    """Simpson-rule metric lengths of the polyline edges.

    A midpoint rule systematically under-measures edges in regions where
    the conformal factor varies, which rewards vertex clustering during
    gradient descent; Simpson quadrature (both endpoints plus the chord
    midpoint) removes that spurious descent direction.

    fv, fm: optional precomputed metric fields at the n vertices and the
    n chord midpoints.
    """
    dt = np.diff(tc)
    dth = np.diff(thc)
    if fv is None:
        fv = metric.fields(tc[:-1], thc[:-1])
    if fm is None:
        fm = metric.fields(0.5 * (tc[:-1] + tc[1:]),
                           0.5 * (thc[:-1] + thc[1:]))
    g0 = np.exp(fv["u"]) * np.hypot(dt, fv["r"] * dth)
    gm = np.exp(fm["u"]) * np.hypot(dt, fm["r"] * dth)
    r1 = np.roll(fv["r"], -1)
    u1 = np.roll(fv["u"], -1)
    g1 = np.exp(u1) * np.hypot(dt, r1 * dth)
    return (g0 + 4.0 * gm + g1) / 6.0


# ----------------------------------------------------------------------
# intersections
# ----------------------------------------------------------------------

def _segment_crossings(ax0, ay0, ax1, ay1, bx0, by0, bx1, by1,
                       same_curve=False):
    """Index pairs (i, j) of strictly crossing segment pairs (vectorized
    orientation tests; touching endpoints count as degenerate, not
    crossing)."""
    AX0, BX0 = np.meshgrid(ax0, bx0, indexing="ij")
    AY0, BY0 = np.meshgrid(ay0, by0, indexing="ij")
    AX1, BX1 = np.meshgrid(ax1, bx1, indexing="ij")
    AY1, BY1 = np.meshgrid(ay1, by1, indexing="ij")

    def orient(px, py, qx, qy, rx, ry):
        return (qx - px) * (ry - py) - (qy - py) * (rx - px)

    d1 = orient(AX0, AY0, AX1, AY1, BX0, BY0)
    d2 = orient(AX0, AY0, AX1, AY1, BX1, BY1)
    d3 = orient(BX0, BY0, BX1, BY1, AX0, AY0)
    d4 = orient(BX0, BY0, BX1, BY1, AX1, AY1)
    cross = (d1 * d2 < 0) & (d3 * d4 < 0)
    if same_curve:
        cross = np.triu(cross, 1)
    return np.nonzero(cross)


def _has_degenerate_touch(ax0, ay0, ax1, ay1, bx0, by0, bx1, by1):
    """True if any segment endpoint of one family lies exactly on a
    segment of the other (a tangency the crossing test cannot classify)."""
    for (px, py) in ((bx0, by0), (bx1, by1)):
        PX, PY = np.meshgrid(ax0, px, indexing="ij")[1], \
            np.meshgrid(ay0, py, indexing="ij")[1]
        AX0, _ = np.meshgrid(ax0, px, indexing="ij")
        AY0 = np.meshgrid(ay0, py, indexing="ij")[0]
        AX1 = np.meshgrid(ax1, px, indexing="ij")[0]
        AY1 = np.meshgrid(ay1, py, indexing="ij")[0]
        d = (AX1 - AX0) * (PY - AY0) - (AY1 - AY0) * (PX - AX0)
        inside = (np.minimum(AX0, AX1) - 1e-300 <= PX) \
            & (PX <= np.maximum(AX0, AX1) + 1e-300) \
            & (np.minimum(AY0, AY1) - 1e-300 <= PY) \
            & (PY <= np.maximum(AY0, AY1) + 1e-300)
        if np.any((d == 0.0) & inside):
            return True
    return False


def intersection_count(c1: ClosedCurve, c2: ClosedCurve, jitter_seed=0):
    """Exact transverse crossing count of two closed curves on the
    cylinder (theta treated modulo 2*pi via universal-cover copies).

    Curves in degenerate position are jittered once by 1e-10 (recorded via
    the returned count only); if the tangency persists the operation
    refuses."""
    for attempt in range(2):
        cc1, cc2 = c1, c2
        if attempt == 1:
            rng = np.random.default_rng(jitter_seed)
            cc2 = ClosedCurve(c2.t + rng.uniform(-1e-10, 1e-10, c2.n),
                              c2.theta + rng.uniform(-1e-10, 1e-10, c2.n))
        a = cc1.edge_segments()
        b = cc2.edge_segments()
        # bring both to a common fundamental domain and compare against
        # shifted copies covering the combined theta span
        base = np.floor((b[0].min() - a[0].min()) / TWO_PI)
        span = (a[0].max() - a[0].min()) + (b[0].max() - b[0].min())
        kspan = int(np.ceil(span / TWO_PI)) + 1
        total = 0
        degenerate = False
        for k in range(-kspan, kspan + 1):
            shift = (base + k) * TWO_PI
            bx0, bx1 = b[0] - shift, b[2] - shift
            if bx0.min() > a[0].max() or bx1.max() < a[0].min():
                continue
            if _has_degenerate_touch(a[0], a[1], a[2], a[3],
                                     bx0, b[1], bx1, b[3]):
                degenerate = True
                break
            hits = _segment_crossings(a[0], a[1], a[2], a[3],
                                      bx0, b[1], bx1, b[3])
            total += len(hits[0])
        if not degenerate:
            return total
    raise DegeneratePosition("curves remain tangent after jitter")


# ----------------------------------------------------------------------
# barriers
# ----------------------------------------------------------------------

@dataclass
class Barrier:
    """A certified closed geodesic circle bounding a forbidden disk.

    Realized through the polar chart of a perturbation: the forbidden
    region is chart distance < radius around the chart center."""
    chart: object            # PolarChart of the owning perturbation
    radius: float            # chart radius of the barrier circle
    certificate: object = None  # JacobiSpectrum of the circle (index 0)
    label: str = "barrier"

    def signed_distance(self, t, theta):
        """Chart distance minus radius; +inf far outside the chart."""
        d = self.chart.distance(np.asarray(t, float),
                                np.asarray(theta, float))
        return np.where(np.isfinite(d), d - self.radius, np.inf)

    def project_out(self, t, theta, offset):
        """Push points inside the forbidden disk out to radius + offset."""
        t = np.asarray(t, float).copy()
        theta = np.asarray(theta, float).copy()
        inv = self.chart.invert(t, theta)
        bad = np.flatnonzero(inv["d"] < self.radius + offset)
        if len(bad) == 0:
            return t, theta, 0
        tn, thn, _ = self.chart.forward(
            np.full(len(bad), self.radius + offset), inv["psi"][bad])
        # keep the unwrapped branch closest to the original theta
        thn = theta[bad] + np.asarray(
            np.mod(thn - theta[bad] + np.pi, TWO_PI) - np.pi)
        t[bad] = tn
        theta[bad] = thn
        return t, theta, len(bad)

    def as_curve(self, n=256):
        psi = np.linspace(0.0, TWO_PI, n, endpoint=False)
        t, th, _ = self.chart.forward(np.full(n, self.radius), psi)
        th = np.unwrap(np.asarray(th))
        return ClosedCurve(np.asarray(t), th)


@dataclass
class CapBarrier:
    """A certified stable latitude circle bounding a forbidden polar cap.

    side "south" forbids t < t_waist; side "north" forbids t > t_waist.
    The waist circles of the polar collars are exact geodesics (r' = 0)
    and strictly stable (r'' > 0), so they block the flow like any other
    barrier circle."""
    t_waist: float
    side: str                 # "south" | "north"
    certificate: object = None
    label: str = "cap"

    def signed_distance(self, t, theta):
        t = np.asarray(t, float)
        if self.side == "south":
            return t - self.t_waist
        return self.t_waist - t

    def project_out(self, t, theta, offset):
        t = np.asarray(t, float).copy()
        theta = np.asarray(theta, float).copy()
        d = self.signed_distance(t, theta)
        bad = np.flatnonzero(d < offset)
        if len(bad) == 0:
            return t, theta, 0
        t[bad] = self.t_waist + (offset if self.side == "south" else -offset)
        return t, theta, len(bad)

    def as_curve(self, n=256):
        th = np.linspace(0.0, TWO_PI, n, endpoint=False)
        return ClosedCurve(np.full(n, self.t_waist), th)


def collar_barrier(metric, which, label=None):
    """CapBarrier on a polar collar waist, re-certifying strict stability
    of the waist circle (constant curvature by rotational symmetry)."""
    from .spectrum import PotentialTrace, closed_index

    t_c = metric.landmarks[f"{which}_collar_waist"]
    if not metric.is_unperturbed(np.array([t_c]), np.array([0.0])):
        raise DegeneratePosition("collar waist lies inside a perturbation "
                                 "support; its circle need not be geodesic")
    r_c = float(metric.profile.r_of(t_c)[0])
    K_c = float(metric.profile.K_of(t_c)[0])
    trace = PotentialTrace(K=np.full(512, K_c),
                           length=TWO_PI * r_c, closed=True)
    cert = closed_index(trace)
    if cert.index != 0 or cert.nullity != 0:
        raise NotStrictlyStable(f"{which} collar waist: index "
                                f"{cert.index}, nullity {cert.nullity}")
    return CapBarrier(t_waist=t_c, side=which, certificate=cert,
                      label=label or f"{which}-collar")


def waist_barrier(metric, pert_index, label=None):
    """Barrier on the certified waist circle of a nose perturbation,
    re-certifying strict stability of the circle."""
    from .spectrum import PotentialTrace, closed_index

    info = metric.nose_info[pert_index]
    trace = PotentialTrace(K=np.full(512, info["K_waist"]),
                           length=info["length"], closed=True)
    cert = closed_index(trace)
    if cert.index != 0 or cert.nullity != 0:
        raise NotStrictlyStable(f"nose {pert_index} waist: index "
                                f"{cert.index}, nullity {cert.nullity}")
    return Barrier(chart=metric.charts[pert_index], radius=info["waist_d"],
                   certificate=cert, label=label or f"nose-{pert_index}")


# ----------------------------------------------------------------------
# the flow
# ----------------------------------------------------------------------

def _length_gradient(metric, curve):
    """Metric gradient of polyline length per vertex, and edge lengths.

    Differentiates the same Simpson-quadrature length that
    :func:`_edge_lengths` measures, so acceptance tests and the descent
    direction agree.  d(length)/d(vertex) with the index raised by the
    inverse metric, so a descent step is motion along the (inward)
    curvature vector plus a tangential reparameterization component."""
    tc, thc = curve.vertices_closed()
    tm = 0.5 * (tc[:-1] + tc[1:])
    thm = 0.5 * (thc[:-1] + thc[1:])
    fm = metric.fields(tm, thm)
    fv = metric.fields(curve.t, curve.theta)
    dt = np.diff(tc)
    dth = np.diff(thc)
    n = curve.n
    g_t = np.zeros(n)
    g_th = np.zeros(n)
    idx0 = np.arange(n)          # edge i starts at vertex i
    idx1 = (idx0 + 1) % n        # and ends at vertex i+1

    def node(fields_at, tau, weight):
        """Gradient contributions of the quadrature node at X(tau) on
        every edge; tau is the position along the chord."""
        r, rt = fields_at["r"], fields_at["rt"]
        u, ut, uth = fields_at["u"], fields_at["ut"], fields_at["uth"]
        q = np.maximum(np.hypot(dt, r * dth), 1e-300)
        eu = np.exp(u)
        # d/d(endpoint) of  e^u(X) * q  with X = P0 + tau (P1 - P0)
        base_t = eu * (ut * q + r * rt * dth ** 2 / q)   # via X
        base_th = eu * uth * q
        dq_t = eu * dt / q                                # via dt, dth
        dq_th = eu * r ** 2 * dth / q
        np.add.at(g_t, idx0, weight * ((1.0 - tau) * base_t - dq_t))
        np.add.at(g_t, idx1, weight * (tau * base_t + dq_t))
        np.add.at(g_th, idx0, weight * ((1.0 - tau) * base_th - dq_th))
        np.add.at(g_th, idx1, weight * (tau * base_th + dq_th))
        return eu * q

    fv0 = {k: fv[k] for k in ("r", "rt", "u", "ut", "uth")}
    fv1 = {k: np.roll(fv[k], -1) for k in ("r", "rt", "u", "ut", "uth")}
    g0 = node(fv0, 0.0, 1.0 / 6.0)
    gm = node(fm, 0.5, 4.0 / 6.0)
    g1 = node(fv1, 1.0, 1.0 / 6.0)
    ell = (g0 + 4.0 * gm + g1) / 6.0
    # raise the index: inverse metric diag(e^-2u, e^-2u / r^2) at vertices
    conf = fv["conf"]
    rv = fv["r"]
    v_t = g_t / conf
    v_th = g_th / (conf * rv ** 2)
    eu_mid = np.exp(fm["u"])
    q_mid = np.maximum(np.hypot(dt, fm["r"] * dth), 1e-300)
    return v_t, v_th, ell, fv, (eu_mid, q_mid, fm["r"])


def _curvature_vector(v_t, v_th, ell, fv):
    """Curvature vector and its metric norm per vertex.

    The length gradient at a vertex equals (curvature vector) x (vertex
    mass = half the adjacent edge lengths); dividing by the mass recovers
    kappa_g up to the discretization error of the polyline."""
    mass = 0.5 * (ell + np.roll(ell, 1))
    mass = np.maximum(mass, 1e-300)
    kt = v_t / mass
    kth = v_th / mass
    conf = fv["conf"]
    r = fv["r"]
    norm = np.sqrt(conf * (kt ** 2 + r ** 2 * kth ** 2))
    return kt, kth, norm


def _semi_implicit_step(cur, kt, kth, ell, fv, tm_fields, dtau):
    """One backward-Euler step on the stiff (arclength-Laplacian) part of
    the curvature vector, explicit on the metric remainder.

    The stiff part of kappa at vertex i is the tangential second
    difference  B x = [b_i (x_i - x_{i+1}) + a_i (x_i - x_{i-1})] with
    positive weights from the current edge lengths; solving
    (I + dtau B) x_new = x - dtau (kappa - B x)  is unconditionally stable
    in dtau for that part, so the step can scale with the edge length
    rather than its square."""
    n = cur.n
    mass = 0.5 * (ell + np.roll(ell, 1))
    mass = np.maximum(mass, 1e-300)
    eu_mid, q, r_mid = tm_fields
    conf = fv["conf"]
    rv = fv["r"]
    w = TWO_PI * cur.winding
    out = []
    for x, kap, scale_next, scale_prev, wrap in (
        (cur.t, kt,
         eu_mid / q,
         np.roll(eu_mid / q, 1), 0.0),
        (cur.theta, kth,
         eu_mid * r_mid ** 2 / q / rv ** 2,
         np.roll(eu_mid * r_mid ** 2 / q, 1) / rv ** 2, w),
    ):
        b = scale_next / (conf * mass)      # weight toward vertex i+1
        a = scale_prev / (conf * mass)      # weight toward vertex i-1
        # the closing edge advances theta by 2*pi*winding; the cyclic
        # operator sees the stored values, so correct the seam rows
        c = np.zeros(n)
        c[0] = a[0] * wrap
        c[-1] = -b[-1] * wrap
        Bx = (a + b) * x - b * np.roll(x, -1) - a * np.roll(x, 1)
        rem = kap - (Bx + c)
        rhs = x - dtau * (rem + c)
        # solve (I + dtau B) y = rhs; B is cyclic tridiagonal
        diag = 1.0 + dtau * (a + b)
        upper = -dtau * b           # coupling to vertex i+1
        lower = -dtau * a           # coupling to vertex i-1
        A = sparse.csc_matrix(
            sparse.diags([diag, upper[:-1], lower[1:],
                          np.array([upper[-1]]), np.array([lower[0]])],
                         [0, 1, -1, -(n - 1), n - 1]))
        out.append(splu(A).solve(rhs))
    return ClosedCurve(out[0], out[1])


@dataclass
class FlowCertificate:
    steps: int = 0
    lengths: list = field(default_factory=list)
    sup_kappa: float = np.inf
    projections: int = 0
    min_barrier_distance: float = np.inf
    intersection_history: dict = field(default_factory=dict)
    converged: bool = False

    def length_history(self):
        return np.asarray(self.lengths)


def shorten(metric, curve: ClosedCurve, barriers=(), stop=1e-4,
            references=None, max_steps=200000, offset=1e-6,
            resample_every=25, floor_factor=1e-3, record_every=1,
            on_max="raise"):
    """Shorten a simple closed curve to a low-curvature limit.

    references: optional dict name -> ClosedCurve; the transverse crossing
    count with each is asserted non-increasing across accepted steps.
    on_max: "raise" raises MaxStepsExceeded when the step budget runs out
    before sup|kappa| <= stop; "return" hands back the best-effort curve
    with certificate.converged == False.
    Returns (curve, FlowCertificate).
    """
    if not curve.is_simple():
        raise SimplicityLost("initial curve is not simple")

    if barriers:
        def _resample_weight(t, th):
            # vertices several times denser near barriers, where curves
            # wrap tightly and uniform spacing would cut corners into
            # the barrier disk
            w = np.ones_like(np.asarray(t, float))
            for b in barriers:
                d = np.maximum(b.signed_distance(t, th), 0.0)
                w = np.maximum(w, 1.0 + 5.0 * np.exp(-(d / 0.2) ** 2))
            return w
    else:
        _resample_weight = None

    cur = curve.resampled(metric, curve.n, weight=_resample_weight)
    if not cur.is_simple():
        cur = curve.copy()
    refs = dict(references or {})
    cert = FlowCertificate()
    counts = {k: intersection_count(cur, rc) for k, rc in refs.items()}
    cert.intersection_history = {k: [v] for k, v in counts.items()}
    L0 = cur.length(metric)
    floor = floor_factor * L0
    cert.lengths.append(L0)
    L = L0
    cfl = 0.2
    for step in range(1, max_steps + 1):
        v_t, v_th, ell, fv, mid = _length_gradient(metric, cur)
        kt, kth, kappa = _curvature_vector(v_t, v_th, ell, fv)
        cert.sup_kappa = float(np.max(kappa))
        if cert.sup_kappa <= stop:
            cert.converged = True
            break
        min_ell = float(np.min(ell))
        # move at most a fraction of an edge per step; the implicit
        # Laplacian part keeps this stable well beyond the explicit CFL
        dtau = cfl * min_ell / max(cert.sup_kappa, 1e-300)
        accepted = False
        for _ in range(30):
            cand = _semi_implicit_step(cur, kt, kth, ell, fv, mid, dtau)
            nproj = 0
            for b in barriers:
                ct, cth, np_ = b.project_out(cand.t, cand.theta, offset)
                cand = ClosedCurve(ct, cth)
                nproj += np_
            L_new = cand.length(metric)
            if L_new > L * (1.0 + 1e-12):
                dtau *= 0.5
                continue
            if not cand.is_simple():
                dtau *= 0.5
                continue
            ok = True
            new_counts = {}
            for k, rc in refs.items():
                c = intersection_count(cand, rc)
                if c > counts[k]:
                    ok = False
                    break
                new_counts[k] = c
            if not ok:
                dtau *= 0.5
                continue
            accepted = True
            break
        if not accepted:
            # cannot decrease length while keeping the constraints: treat
            # as converged only if the curvature target was effectively met
            cert.converged = cert.sup_kappa <= 10 * stop
            break
        cur = cand
        L = L_new
        counts.update(new_counts)
        cert.steps = step
        cert.projections += nproj
        if barriers:
            dmin = min(float(np.min(b.signed_distance(cur.t, cur.theta)))
                       for b in barriers)
            cert.min_barrier_distance = min(cert.min_barrier_distance, dmin)
            if dmin < 0.0:
                raise BarrierContact("curve penetrated a barrier despite "
                                     "projection")
        if step % record_every == 0:
            cert.lengths.append(L)
            for k in refs:
                cert.intersection_history[k].append(counts[k])
        if L < floor:
            raise Collapsed(f"length {L:.3e} fell below the perimeter "
                            f"floor {floor:.3e}")
        need_resample = (resample_every and step % resample_every == 0)
        if not need_resample and min_ell < 0.05 * L / cur.n:
            # an edge has collapsed far below the mean spacing; without a
            # redistribution dtau underflows and the flow stalls
            need_resample = True
        if need_resample:
            res = cur.resampled(metric, cur.n, weight=_resample_weight)
            # coarse resampled edges can cut inside a barrier where the
            # conformal factor is large; push them back out before judging
            for b in barriers:
                rt_, rth_, _ = b.project_out(res.t, res.theta, offset)
                res = ClosedCurve(rt_, rth_)
            if res.is_simple():
                L_res = res.length(metric)
                if L_res <= L * (1.0 + 1e-12):
                    new_counts = {k: intersection_count(res, rc)
                                  for k, rc in refs.items()}
                    if all(new_counts[k] <= counts[k] for k in refs):
                        cur = res
                        L = L_res
                        counts = new_counts
    else:
        if on_max == "raise":
            raise MaxStepsExceeded(f"flow did not reach sup|kappa| <= "
                                   f"{stop} in {max_steps} steps")
    cert.lengths.append(L)
    return cur, cert


# ----------------------------------------------------------------------
# local convexity audit
# ----------------------------------------------------------------------

def is_locally_convex(metric, pieces, kappa_tol=1e-6, corner_tol=1e-9):
    """Audit a domain boundary given as oriented pieces.

    pieces: list of dicts with keys
      - "path": GeodesicPath (or object with t/theta/alpha arrays)
      - "kappa_max": optional precomputed sup of geodesic curvature
        signed toward the exterior (defaults to the path residual)
    Consecutive pieces must chain end-to-start; the interior is to the
    left of the orientation.  True iff every smooth piece curves toward
    the exterior by at most kappa_tol and every corner has interior angle
    <= pi (+ tolerance)."""
    m = len(pieces)
    for piece in pieces:
        kap = piece.get("kappa_max")
        if kap is None:
            kap = getattr(piece["path"], "residual", np.inf)
        if kap > kappa_tol:
            return False
    for i in range(m):
        a = pieces[i]["path"]
        b = pieces[(i + 1) % m]["path"]
        gap = np.hypot(a.t[-1] - b.t[0],
                       normalize_theta(a.theta[-1]) -
                       normalize_theta(b.theta[0]))
        if gap > 1e-6 and m > 1:
            continue  # disconnected boundary components: no corner
        if m == 1 and not getattr(a, "closed", False):
            return False
        if gap <= 1e-6:
            # interior angle at the corner: pi minus the left turn from
            # the incoming to the outgoing tangent
            turn = _angle_diff(b.alpha[0], a.alpha[-1])
            interior = np.pi - turn
            if interior > np.pi + corner_tol:
                return False
    return True


def _angle_diff(a, b):
    return float(np.mod(a - b + np.pi, TWO_PI) - np.pi)

"""End-to-end experiment scenarios on the snowman stage.

This module wires the primitive layers together: it builds the standard
stage (snowman with three certified nose barriers), constructs the named
families of initial curves, shortens them to geodesics, polishes the
results by multiple shooting, and certifies index/nullity and curvature
integrals.  Every scenario returns a :class:`ScenarioReport` whose
serialized content is a pure function of the configuration.

Coordinate conventions: all curves live in the (t, theta) parameter
plane with theta stored unwrapped; the "gap" is the corridor between the
two bottom noses, centered on theta = pi.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.optimize import least_squares

from .errors import (
    Collapsed,
    GeometryInfeasible,
    MaxStepsExceeded,
    NoConvergence,
    RhoTooLarge,
    SweepDegenerate,
)
from .flow import (
    Barrier,
    CapBarrier,
    ClosedCurve,
    collar_barrier,
    curve_from_path,
    intersection_count,
    shorten,
    waist_barrier,
)
from .geodesics import (
    GeodesicPath,
    connect,
    equator_crossings,
    geodesic_residual,
    limiting_angle,
    shoot,
)
from .spectrum import (
    closed_index,
    potential_along,
    segment_index,
    stability_integrals,
)
from .surface import (
    RadialPerturbation,
    SurfaceMetric,
    add_perturbation,
    build_snowman,
    normalize_theta,
    place_equator_bumps,
)

__all__ = [
    "LabConfig",
    "ScenarioReport",
    "Stage",
    "StrandBook",
    "build_stage",
    "bump_deflection_test",
    "certify_closed",
    "equator_index_sweep",
    "eta_initial_curve",
    "gamma_initial_curve",
    "holds_eta_test",
    "lamination_leaves",
    "minimax_m1",
    "refine_closed_geodesic",
    "scenario_eta_n",
    "scenario_gamma_m",
    "scenario_sphere_sanity",
]

TWO_PI = 2.0 * np.pi


# ----------------------------------------------------------------------
# configuration
# ----------------------------------------------------------------------

@dataclass
class LabConfig:
    """Numerical knobs shared by the scenarios."""

    nose_rho: float = 0.6            # support radius of the three noses
    gap_half_width: float = 0.7      # corridor half-width between noses
    c0: float = 0.2                  # claimed floor for mean max{K, 0}
    flow_stop: float = 3e-3          # sup|kappa| target for coarse flows
    flow_stop_exact: float = 1e-4    # target when the flow itself is audited
    flow_max_steps: int = 200000
    point_spacing: float = 0.09      # metric resampling density of flows
    refine_tol: float = 1e-9         # matching-gap target, multiple shooting
    residual_tol: float = 1e-6       # geodesic residual certificate bound
    seed: int = 0

    def as_dict(self):
        return {k: getattr(self, k) for k in (
            "nose_rho", "gap_half_width", "c0", "flow_stop",
            "flow_stop_exact", "flow_max_steps", "point_spacing",
            "refine_tol", "residual_tol", "seed")}


# ----------------------------------------------------------------------
# reports and crossing bookkeeping
# ----------------------------------------------------------------------

@dataclass
class ScenarioReport:
    """Structured result of one scenario run.

    Everything except ``wall_clock`` is a pure function of the scenario
    configuration; serialization excludes the clock so identical configs
    yield byte-identical reports.
    """

    scenario: str
    config: dict = field(default_factory=dict)
    curves: dict = field(default_factory=dict)       # id -> (t, theta) arrays
    records: dict = field(default_factory=dict)      # id -> scalar / list
    geodesics: dict = field(default_factory=dict)    # id -> certificate dict
    assertions: list = field(default_factory=list)   # (name, bool, detail)
    wall_clock: float = 0.0

    def add_curve(self, cid, curve):
        self.curves[cid] = (np.asarray(curve.t, float).tolist(),
                            np.asarray(curve.theta, float).tolist())

    def add_path(self, cid, path):
        self.curves[cid] = (np.asarray(path.t, float).tolist(),
                            np.asarray(path.theta, float).tolist())

    def check(self, name, ok, detail=""):
        self.assertions.append((name, bool(ok), str(detail)))
        return bool(ok)

    @property
    def passed(self):
        return all(ok for _, ok, _ in self.assertions)

    def content(self):
        """Deterministic content (excludes wall_clock and raw curves)."""
        return {
            "scenario": self.scenario,
            "config": {k: self.config[k] for k in sorted(self.config)},
            "records": {k: self.records[k] for k in sorted(self.records)},
            "geodesics": {k: {kk: self.geodesics[k][kk]
                              for kk in sorted(self.geodesics[k])}
                          for k in sorted(self.geodesics)},
            "assertions": list(self.assertions),
        }

    def rows(self):
        """Flatten the content into (key, value) rows for CSV emission."""
        out = []

        def emit(prefix, val):
            if isinstance(val, dict):
                for k in sorted(val):
                    emit(f"{prefix}.{k}", val[k])
            elif isinstance(val, (list, tuple)):
                if all(isinstance(v, (int, float, np.floating, np.integer))
                       for v in val):
                    for i, v in enumerate(val):
                        out.append((f"{prefix}[{i}]", v))
                else:
                    for i, v in enumerate(val):
                        emit(f"{prefix}[{i}]", v)
            else:
                out.append((prefix, val))

        content = self.content()
        out.append(("scenario", content["scenario"]))
        emit("config", content["config"])
        emit("record", content["records"])
        emit("geodesic", content["geodesics"])
        for name, ok, detail in content["assertions"]:
            out.append((f"assert.{name}", "pass" if ok else f"FAIL {detail}"))
        return out


class StrandBook:
    """Crossing-count bookkeeping against registered reference curves."""

    def __init__(self, metric):
        self.metric = metric
        self.references = {}

    def register(self, name, curve):
        self.references[name] = curve

    def crossings(self, curve):
        return {name: intersection_count(curve, ref)
                for name, ref in self.references.items()}

    def parity_ok(self, curve):
        """Transverse crossings with any closed reference come in pairs."""
        return all(c % 2 == 0 for c in self.crossings(curve).values())

    def equator_strand_sides(self, path, centers):
        """For each equator crossing of a geodesic, record which side of
        each bump center theta it passes (by signed theta difference)."""
        t_eq = self.metric.landmarks["equator"]
        sides = []
        for s, _alpha in equator_crossings(self.metric, path):
            t, th = path.at(float(s))
            rec = {}
            for name, thc in centers.items():
                d = normalize_theta(th - thc)
                rec[name] = "R" if d > 0 else "L"
            sides.append(rec)
        return sides


# ----------------------------------------------------------------------
# the stage
# ----------------------------------------------------------------------

@dataclass
class Stage:
    """Snowman with three certified noses and the standard barrier set."""

    metric: SurfaceMetric
    plain: SurfaceMetric              # same snowman without the noses
    noses: dict                       # name -> (t, theta, pert_index)
    barriers: list                    # nose waists + both collar caps
    nose_barriers: list
    book: StrandBook

    @property
    def t_eq(self):
        return self.metric.landmarks["equator"]

    @property
    def t_top(self):
        return self.metric.landmarks["top_equator"]

    @property
    def t_bot(self):
        return self.metric.landmarks["bottom_equator"]


def build_stage(config: LabConfig | None = None) -> Stage:
    config = config or LabConfig()
    plain = build_snowman()
    lm = plain.landmarks
    t_T, t_B = lm["top_equator"], lm["bottom_equator"]
    positions = {
        "T": (t_T, np.pi),
        "B": (t_B, np.pi - 1.0),
        "C": (t_B, np.pi + 1.0),
    }
    metric = plain
    noses = {}
    for i, (name, (t, th)) in enumerate(positions.items()):
        metric = add_perturbation(metric, RadialPerturbation(
            (t, th), rho=config.nose_rho, kind="nose-waist"))
        noses[name] = (t, th, i)
    nose_barriers = [waist_barrier(metric, i) for i in range(3)]
    barriers = list(nose_barriers)
    barriers.append(collar_barrier(metric, "south"))
    barriers.append(collar_barrier(metric, "north"))
    book = StrandBook(metric)
    t_eq = lm["equator"]
    th = np.linspace(0.0, TWO_PI, 256, endpoint=False)
    book.register("equator", ClosedCurve(np.full(256, t_eq), th))
    book.register("nose_latitude", ClosedCurve(np.full(256, t_B), th))
    for b in nose_barriers:
        book.register(b.label, b.as_curve())
    return Stage(metric=metric, plain=plain, noses=noses, barriers=barriers,
                 nose_barriers=nose_barriers, book=book)


# ----------------------------------------------------------------------
# polyline helpers
# ----------------------------------------------------------------------

def _densify(points, h=0.04):
    """Piecewise-linear interpolation with parameter-plane spacing <= h."""
    pts = [np.asarray(p, float) for p in points]
    out = [pts[0]]
    for a, b in zip(pts, pts[1:]):
        seg = float(np.hypot(*(b - a)))
        if seg < 1e-12:
            continue
        k = max(1, int(math.ceil(seg / h)))
        for j in range(1, k + 1):
            out.append(a + (b - a) * (j / k))
    return np.array(out)


def _polyline_curve(points, h=0.04, smooth=6):
    """Closed curve through the waypoints with lightly rounded corners.

    Only winding-zero curves are supported (theta is treated as a plain
    periodic coordinate during smoothing).
    """
    pts = _densify(list(points) + [points[0]], h)
    if np.hypot(*(pts[-1] - pts[0])) < 1e-12:
        pts = pts[:-1]
    t, th = pts[:, 0].copy(), pts[:, 1].copy()
    for _ in range(smooth):
        t = t + 0.25 * (np.roll(t, 1) + np.roll(t, -1) - 2.0 * t)
        th = th + 0.25 * (np.roll(th, 1) + np.roll(th, -1) - 2.0 * th)
    return ClosedCurve(t, th)


def _min_barrier_clearance(curve, barriers):
    return min(float(np.min(b.signed_distance(curve.t, curve.theta)))
               for b in barriers)


# ----------------------------------------------------------------------
# gamma_m initial curves
# ----------------------------------------------------------------------

def _gamma_layout(stage, m):
    """Slot positions, per-strand layers, and hook shapes for gamma_m.

    The curve consists of 2m vertical strands through the corridor
    between the bottom noses, m nested hooks over the top nose, one hook
    around the west bottom nose, and m-1 nested hooks around the east
    bottom nose.  Horizontal runs connect strand ends to hook ports at
    distinct layers ordered so that no run crosses a foreign strand
    (runs with wider spans travel at more extreme layers).
    """
    if not 1 <= m <= 4:
        raise ValueError("m must be in 1..4")
    t_T, t_B = stage.t_top, stage.t_bot
    th_B, th_C = stage.noses["B"][1], stage.noses["C"][1]
    n = 2 * m
    h = 1.1 / (n - 1)
    slots = np.pi + np.linspace(-0.55, 0.55, n)          # x_1..x_2m
    delta = np.abs(slots[:m] - np.pi)                     # outer..inner
    # --- top hooks: stadium k has half-width W_k, roof t_T + C_k,
    # ports at layer t_T - B_k
    W = np.zeros(m)
    W[m - 1] = max(delta[m - 1] / 2.0, 0.18)
    for k in range(m - 2, -1, -1):
        W[k] = max(W[k + 1] + 0.08, 0.5 * (delta[k] + delta[k + 1]))
    Bk = 0.30 + 0.13 * np.arange(m)
    Ck = 0.60 - 0.11 * np.arange(m)
    # --- bottom layers per strand (relative to the nose latitude)
    L = np.zeros(n)
    L[0] = 0.12                                  # strand 1: exits the B hook
    L[1] = -0.16                                 # strand 2: enters the B hook
    for i in range(2, n):
        v = -0.44 + 0.12 * (i - 2)
        # keep run layers clear of the nose latitude itself
        L[i] = v + 0.2 if v >= -0.1 else v
    # --- bottom hook shapes
    b_hook = {"E": 0.34, "Wd": 0.34, "N": 0.34, "S": 0.40}
    c_hooks = []
    for j in range(m - 1):
        c_hooks.append({
            "X": 0.38 - 0.07 * j,                # west extent (ported side)
            "E": 0.60 - 0.13 * j,
            "N": 0.60 - 0.13 * j,
            "S": 0.60 - 0.13 * j,
            "pair": (2 + j, n - 1 - j),          # 0-based strand indices
        })
    return {
        "slots": slots, "h": h, "L": L, "W": W, "Bk": Bk, "Ck": Ck,
        "b_hook": b_hook, "c_hooks": c_hooks,
        "t_T": t_T, "t_B": t_B, "th_B": th_B, "th_C": th_C,
    }


def gamma_initial_curve(stage, m, h=0.05):
    """The m-strand initial curve held by the three nose barriers.

    Simple closed curve crossing the equator exactly 2m times: every arc
    above the equator wraps the top nose, every arc below wraps a bottom
    nose, so no crossing pair can cancel under the shortening flow.
    """
    lay = _gamma_layout(stage, m)
    n = 2 * m
    slots, L = lay["slots"], lay["L"]
    t_T, t_B = lay["t_T"], lay["t_B"]
    th_B, th_C = lay["th_B"], lay["th_C"]

    def top_pair(i):
        return min(i, n - 1 - i)

    # bottom partner map: B hook pairs strands (0,1); C hook j pairs
    # lay["c_hooks"][j]["pair"]
    bottom_partner = {0: 1, 1: 0}
    for ch in lay["c_hooks"]:
        a, b = ch["pair"]
        bottom_partner[a] = b
        bottom_partner[b] = a

    def top_hook_points(k, enter_west):
        Wk, Bk, Ck = lay["W"][k], lay["Bk"][k], lay["Ck"][k]
        west = [(np.pi - Wk, t_T - Bk), (np.pi - Wk, t_T + Ck)]
        east = [(np.pi + Wk, t_T + Ck), (np.pi + Wk, t_T - Bk)]
        pts = west + east
        return pts if enter_west else pts[::-1]

    def b_hook_points(entering):
        # ports on the east side at layers L[1] (entry) and L[0] (exit)
        bh = lay["b_hook"]
        e, w = th_B + bh["E"], th_B - bh["Wd"]
        lo, hi = t_B - bh["S"], t_B + bh["N"]
        pts = [(e, t_B + L[1]), (e, lo), (w, lo), (w, hi), (e, hi),
               (e, t_B + L[0])]
        return pts if entering == 1 else pts[::-1]

    def c_hook_points(j, entering):
        ch = lay["c_hooks"][j]
        a, b = ch["pair"]                    # a west slot, b east slot
        w, e = th_C - ch["X"], th_C + ch["E"]
        lo, hi = t_B - ch["S"], t_B + ch["N"]
        # entry port at the east strand's layer, exit at the west one
        pts = [(w, t_B + L[b]), (w, hi), (e, hi), (e, lo), (w, lo),
               (w, t_B + L[a])]
        return pts if entering == b else pts[::-1]

    way = []                   # waypoints as (theta, t)
    up_strands = set()
    down_strands = set()
    i = 0                      # current strand (0-based), traversed upward
    for _ in range(n):
        if i in up_strands:
            break
        up_strands.add(i)
        k = top_pair(i)
        way += [(slots[i], t_B + L[i]), (slots[i], t_T - lay["Bk"][k])]
        way += top_hook_points(k, enter_west=(i < m))
        j = n - 1 - i
        down_strands.add(j)
        way += [(slots[j], t_T - lay["Bk"][k]), (slots[j], t_B + L[j])]
        p = bottom_partner[j]
        if {j, p} == {0, 1}:
            way += b_hook_points(entering=j)
        else:
            cj = next(jj for jj, ch in enumerate(lay["c_hooks"])
                      if set(ch["pair"]) == {j, p})
            way += c_hook_points(cj, entering=j)
        way += [(slots[p], t_B + L[p])]
        i = p
    if i != 0 or up_strands | down_strands != set(range(n)):
        raise GeometryInfeasible("gamma walk failed to close through "
                                   "all strands")
    curve = _polyline_curve([(t, th) for th, t in way], h=h, smooth=8)
    if not curve.is_simple():
        raise GeometryInfeasible(f"gamma_{m} initial curve is not simple")
    if curve.winding != 0:
        raise GeometryInfeasible("gamma initial curve should not wind")
    eq = stage.book.references["equator"]
    if intersection_count(curve, eq) != 2 * m:
        raise GeometryInfeasible("gamma initial curve has wrong equator "
                                   "crossing count")
    if _min_barrier_clearance(curve, stage.barriers) <= 0.0:
        raise GeometryInfeasible("gamma initial curve touches a barrier")
    return curve


# ----------------------------------------------------------------------
# eta_n initial curves
# ----------------------------------------------------------------------

def eta_initial_curve(stage, n_wind, h=0.05):
    """Initial curve for eta_n: a loop around both bottom noses joined by
    two parallel spiral strands (advancing 2*pi*n around the axis) to a
    hook over the top nose.  Crosses the equator exactly twice."""
    if not 1 <= n_wind <= 4:
        raise ValueError("n must be in 1..4")
    t_T, t_B = stage.t_top, stage.t_bot
    th_B, th_C = stage.noses["B"][1], stage.noses["C"][1]
    g, g2 = 0.25, 0.25                       # gap offsets of the two strands
    t_ov = t_B + 0.6                         # oval roof
    H = t_T - 0.35                           # top hook port layer
    a1 = H - 0.45                            # east spiral upper end
    sigma = (a1 - t_ov) / (TWO_PI * n_wind)  # common spiral slope
    b0 = t_ov + 0.45
    th_hook = np.pi + TWO_PI * n_wind        # lifted hook center
    Wh, Chh = 0.35, 0.50
    # traversal: start at the oval roof, ascend the east spiral, stub up
    # to the hook layer, traverse the hook over the lifted top nose,
    # descend the west spiral, stub down, close along the oval.
    way = [(t_ov, np.pi + g),
           (a1, th_hook + g),
           (H, th_hook + g),
           (H, th_hook + Wh),
           (t_T + Chh, th_hook + Wh),
           (t_T + Chh, th_hook - Wh),
           (H, th_hook - Wh),
           (H, th_hook - g2),
           (b0, np.pi - g2),
           (t_ov, np.pi - g2),
           (t_ov, th_B - 0.6),
           (t_B - 0.6, th_B - 0.6),
           (t_B - 0.6, th_C + 0.6),
           (t_ov, th_C + 0.6)]
    curve = _polyline_curve(way, h=h, smooth=8)
    if not curve.is_simple():
        raise GeometryInfeasible(f"eta_{n_wind} initial curve not simple")
    if curve.winding != 0:
        raise GeometryInfeasible("eta initial curve should not wind")
    eq = stage.book.references["equator"]
    if intersection_count(curve, eq) != 2:
        raise GeometryInfeasible("eta initial curve must cross the "
                                   "equator exactly twice")
    if _min_barrier_clearance(curve, stage.barriers) <= 0.0:
        raise GeometryInfeasible("eta initial curve touches a barrier")
    return curve


# ----------------------------------------------------------------------
# closed-geodesic polishing by multiple shooting
# ----------------------------------------------------------------------

def _edge_angles(metric, t, theta):
    """Direction angle (from the meridian) of each polygon edge."""
    dt = np.diff(t)
    dth = np.diff(theta)
    r = metric.profile.r_of(0.5 * (t[:-1] + t[1:]))
    return np.arctan2(r * dth, dt)


def _rk4_batch(metric, t, th, al, ell, nsteps, record=None):
    """Integrate all segments simultaneously with fixed-step RK4.

    State per segment: (t, theta, alpha); independent variable is the
    normalized arclength fraction, step ell/nsteps each.  When
    ``record`` is a (T, TH, AL) triple of (nsteps+1, n) arrays the full
    trajectory is written into it (row 0 must be pre-filled).
    """
    hseg = ell / nsteps
    margin = 0.05
    t_hi = metric.profile.total_length - margin

    def rhs(tt, thh, aa):
        # clamp to the chart interior so off-surface trial states from
        # the optimizer cannot poison the residuals with NaNs
        f = metric.fields(np.clip(tt, margin, t_hi), thh)
        r, rt = f["r"], f["rt"]
        emu = np.exp(-f["u"])
        ca, sa = np.cos(aa), np.sin(aa)
        dt = emu * ca
        dth = emu * sa / r
        dal = emu * (-(rt / r) * sa - f["ut"] * sa + f["uth"] * ca / r)
        return np.array([dt, dth, dal])

    for k in range(nsteps):
        k1 = rhs(t, th, al)
        k2 = rhs(t + 0.5 * hseg * k1[0], th + 0.5 * hseg * k1[1],
                 al + 0.5 * hseg * k1[2])
        k3 = rhs(t + 0.5 * hseg * k2[0], th + 0.5 * hseg * k2[1],
                 al + 0.5 * hseg * k2[2])
        k4 = rhs(t + hseg * k3[0], th + hseg * k3[1], al + hseg * k3[2])
        incr = (hseg / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        t = t + incr[0]
        th = th + incr[1]
        al = al + incr[2]
        if record is not None:
            record[0][k + 1] = t
            record[1][k + 1] = th
            record[2][k + 1] = al
    return t, th, al


def refine_closed_geodesic(metric, curve, tol=1e-9, nodes_per_unit=3.0,
                           max_nodes=120):
    """Polish a near-geodesic closed curve into a certified geodesic.

    Multiple shooting: nodes are distributed along the curve; unknowns
    are the node states (t, theta, alpha) plus the total length, and the
    residuals are the segment matching gaps (with seam corrections for
    winding and total turning).  Returns a closed GeodesicPath.
    """
    cur = curve.resampled(metric, max(64, curve.n))
    Ltot = cur.length(metric)
    M = int(min(max_nodes, max(12, math.ceil(Ltot * nodes_per_unit))))
    samp = cur.resampled(metric, M)
    t0 = np.asarray(samp.t, float)
    th0 = np.asarray(samp.theta, float)
    wind = curve.winding
    # edge direction angles of the closed polygon, unwrapped; the last
    # entry is the closing edge back to node 0
    tt = np.r_[t0, t0[0]]
    hh = np.r_[th0, th0[0] + TWO_PI * wind]
    beta = np.unwrap(_edge_angles(metric, tt, hh))
    # turning number: continue the unwrap from the closing edge back to
    # edge 0; the alpha seam must advance by 2*pi*turn per loop
    d0 = (beta[0] - beta[-1] + np.pi) % TWO_PI - np.pi
    turn = int(round((beta[-1] + d0 - beta[0]) / TWO_PI))
    al0 = beta

    def unpack(z):
        return z[:M], z[M:2 * M], z[2 * M:3 * M], z[3 * M]

    def residuals(z, nsteps):
        t, th, al, L = unpack(z)
        ell = L / M
        te, the, ale = _rk4_batch(metric, t, th, al, ell, nsteps)
        rt = te - np.roll(t, -1)
        rth = the - np.roll(th, -1)
        ral = ale - np.roll(al, -1)
        rth[-1] -= TWO_PI * wind
        ral[-1] -= TWO_PI * turn
        return np.r_[rt, rth, ral]

    eps = 1e-7

    def residuals_and_jacobian(z, nsteps):
        """One batched integration of the base states plus the four
        finite-difference directions (t, theta, alpha, length) gives the
        residual vector and the full multiple-shooting Jacobian."""
        t, th, al, L = unpack(z)
        ell = L / M
        # 5 copies: base, t+eps, th+eps, al+eps, and base again at
        # ell+eps/M (length direction)
        T = np.concatenate([t, t + eps, t, t, t])
        TH = np.concatenate([th, th, th + eps, th, th])
        AL = np.concatenate([al, al, al, al + eps, al])
        ELL = np.concatenate([np.full(4 * M, ell),
                              np.full(M, ell + eps / M)])
        te, the, ale = _rk4_batch(metric, T, TH, AL, ELL, nsteps)
        ends = np.stack([te, the, ale]).reshape(3, 5, M)
        base = ends[:, 0, :]                       # (3, M) endpoints
        cols = (ends[:, 1:, :] - base[:, None, :]) / eps   # (3, 4, M)
        rt = base[0] - np.roll(t, -1)
        rth = base[1] - np.roll(th, -1)
        ral = base[2] - np.roll(al, -1)
        rth[-1] -= TWO_PI * wind
        ral[-1] -= TWO_PI * turn
        r = np.r_[rt, rth, ral]
        # sparse Jacobian: block row (comp, i) has d(end comp_i)/d(node i
        # state) from cols, -1 at (comp, i+1), and the L column
        rows, cc, vals = [], [], []
        idx = np.arange(M)
        nxt = (idx + 1) % M
        for comp in range(3):
            rr = comp * M + idx
            for var in range(3):
                rows.append(rr)
                cc.append(var * M + idx)
                vals.append(cols[comp, var, :])
            rows.append(rr)
            cc.append(comp * M + nxt)
            vals.append(np.full(M, -1.0))
            rows.append(rr)
            cc.append(np.full(M, 3 * M))
            # the length copy perturbed ell by eps/M, so cols[:, 3] is
            # already the derivative with respect to the total length L
            vals.append(cols[comp, 3, :])
        J = sparse.csr_matrix(
            (np.concatenate(vals),
             (np.concatenate(rows), np.concatenate(cc))),
            shape=(3 * M, 3 * M + 1))
        return r, J

    from scipy.sparse.linalg import lsmr

    z0 = np.r_[t0, th0, al0, Ltot]
    for nsteps, iters in ((16, 30), (64, 20), (192, 30), (512, 6)):
        for _ in range(iters):
            r, J = residuals_and_jacobian(z0, nsteps)
            rn = float(np.linalg.norm(r))
            if not np.isfinite(rn):
                raise NoConvergence("multiple shooting produced "
                                    "non-finite residuals")
            if np.max(np.abs(r)) < 0.01 * tol:
                break
            delta = lsmr(J, -r, damp=1e-12, atol=1e-14, btol=1e-14)[0]
            step = 1.0
            for _ in range(12):
                z_try = z0 + step * delta
                r_try = residuals(z_try, nsteps)
                if (np.all(np.isfinite(r_try))
                        and np.linalg.norm(r_try) < rn):
                    z0 = z_try
                    break
                step *= 0.5
            else:
                break   # no improvement at this rung; go to the next
    gap = float(np.max(np.abs(residuals(z0, 1024))))
    if gap > max(tol, 1e-8) * 100:
        raise NoConvergence(
            f"multiple shooting stalled with matching gap {gap:.3e}")
    t, th, al, L = unpack(z0)
    # final assembly: re-integrate all segments with a fine fixed step
    # (sampling density matters here -- the residual estimator second-
    # differences the samples, which amplifies any interpolation wiggle
    # near high-curvature regions), then blend away the tiny node
    # mismatches with a C^1 correction
    ell = L / M
    seg_samples = max(24, int(math.ceil(ell / 3e-4)))
    traj = (np.empty((seg_samples + 1, M)), np.empty((seg_samples + 1, M)),
            np.empty((seg_samples + 1, M)))
    traj[0][0], traj[1][0], traj[2][0] = t, th, al
    _rk4_batch(metric, t, th, al, ell, seg_samples, record=traj)
    nxt_t = np.roll(t, -1)
    nxt_th = np.roll(th, -1).copy()
    nxt_al = np.roll(al, -1).copy()
    nxt_th[-1] += TWO_PI * wind
    nxt_al[-1] += TWO_PI * turn
    w = np.linspace(0.0, 1.0, seg_samples + 1)[:, None]
    # quintic smoothstep: zero first AND second derivatives at both
    # ends, so the correction leaves no curvature kink at the nodes
    blend = w ** 3 * (10.0 + w * (-15.0 + 6.0 * w))
    pt = traj[0] + blend * (nxt_t - traj[0][-1])
    pth = traj[1] + blend * (nxt_th - traj[1][-1])
    pal = traj[2] + blend * (nxt_al - traj[2][-1])
    # drop the duplicated segment-end rows, close the loop explicitly
    sg = np.linspace(0.0, ell, seg_samples + 1)[:-1]
    s = np.r_[(sg[:, None] + ell * np.arange(M)).T.ravel(), M * ell]
    t_all = np.r_[pt[:-1].T.ravel(), t[0]]
    th_all = np.r_[pth[:-1].T.ravel(), th[0] + TWO_PI * wind]
    al_all = np.r_[pal[:-1].T.ravel(), al[0] + TWO_PI * turn]
    res_est = geodesic_residual(metric, s, t_all, th_all)
    f = metric.fields(t_all, th_all)
    return GeodesicPath(s=s, t=t_all, theta=th_all, alpha=al_all,
                        length=float(M * ell), closed=True,
                        residual=float(max(res_est, gap)),
                        clairaut=f["r"] * np.sin(al_all),
                        unperturbed=(f["u"] == 0.0))


def certify_closed(metric, path, per_unit=None):
    """Residual + spectrum + curvature-integral certificate dict."""
    if per_unit is None:
        per_unit = int(min(256, max(64, 16000 // max(1, int(path.length)))))
    trace = potential_along(metric, path, per_unit=per_unit)
    spec = closed_index(trace)
    intK, mean_kplus, lk = stability_integrals(trace)
    return {
        "length": float(path.length),
        "residual": float(path.residual),
        "index": int(spec.index),
        "nullity": int(spec.nullity),
        "eigenvalues": [float(e) for e in spec.eigenvalues[:5]],
        "int_K": float(intK),
        "mean_K_plus": float(mean_kplus),
        "length_times_int_K_plus": float(lk),
    }


def _flow_and_refine(stage, curve, config, stop=None, references=None,
                     barriers=None, coarse_steps=2500, polish_stop=None,
                     polish_steps=6000):
    """Locate a closed geodesic: coarse flow, multiple-shooting polish,
    and an optional final flow stage for a low-curvature certificate.

    The coarse flow is best-effort (the homotopy slot is fixed after a
    few hundred steps); the refiner then solves the geodesic equation to
    machine accuracy.  When ``polish_stop`` is set, a second flow is run
    from the refined geodesic down to that curvature bound, and the
    concatenated length history is checked monotone.
    Returns (final_curve, certificates, path).
    """
    metric = stage.metric
    n = max(192, int(curve.length(metric) / config.point_spacing))
    cur = curve.resampled(metric, n)
    if not cur.is_simple():
        cur = curve
    refs = dict(references if references is not None
                else {"equator": stage.book.references["equator"]})
    bars = stage.barriers if barriers is None else barriers
    out, cert = shorten(metric, cur, barriers=bars,
                        stop=stop if stop is not None else config.flow_stop,
                        references=refs, max_steps=coarse_steps,
                        on_max="return")
    path = refine_closed_geodesic(metric, out, tol=config.refine_tol)
    certs = [cert]
    final = out
    if polish_stop is not None:
        start = curve_from_path(path).resampled(metric, out.n)
        final, cert2 = shorten(metric, start, barriers=bars,
                               stop=polish_stop, references=refs,
                               max_steps=polish_steps, on_max="return")
        certs.append(cert2)
    return final, certs, path


# ----------------------------------------------------------------------
# measurement helpers
# ----------------------------------------------------------------------

def _path_is_simple(path):
    cur = curve_from_path(path)
    return cur.is_simple()


def _latitude_crossings(t, theta, t_level, th_lo=None, th_hi=None):
    """Transversal crossings of the latitude t = t_level, optionally
    restricted to theta in (th_lo, th_hi) (normalized window)."""
    t = np.asarray(t, float)
    theta = np.asarray(theta, float)
    d = t - t_level
    sign = np.sign(d)
    flips = np.nonzero(sign[:-1] * sign[1:] < 0)[0]
    if th_lo is None:
        return len(flips)
    cnt = 0
    for i in flips:
        w = d[i] / (d[i] - d[i + 1])
        th = normalize_theta(theta[i] + w * (theta[i + 1] - theta[i]))
        lo = normalize_theta(th_lo)
        hi = normalize_theta(th_hi)
        span = (hi - lo) % TWO_PI
        if (th - lo) % TWO_PI < span:
            cnt += 1
    return cnt


def _equator_path(metric, n=4096):
    """The equator circle as a closed GeodesicPath of the given metric.

    Valid whenever every perturbation is symmetric across the equator
    (the residual certificate is computed, not assumed)."""
    t_eq, r_eq = metric.equator()
    th = np.linspace(0.0, TWO_PI, n + 1)
    tt = np.full(n + 1, t_eq)
    f = metric.fields(tt, th)
    dens = np.exp(f["u"]) * f["r"]
    s_cum = np.concatenate(
        [[0.0], np.cumsum(0.5 * (dens[1:] + dens[:-1]) * np.diff(th))])
    L = float(s_cum[-1])
    s_u = np.linspace(0.0, L, n + 1)
    th_u = np.interp(s_u, s_cum, th)
    tt_u = np.full(n + 1, t_eq)
    fu = metric.fields(tt_u, th_u)
    res = geodesic_residual(metric, s_u, tt_u, th_u)
    return GeodesicPath(s=s_u, t=tt_u, theta=th_u,
                        alpha=np.full(n + 1, 0.5 * np.pi),
                        length=L, closed=True, residual=float(res),
                        clairaut=fu["r"] * 1.0,
                        unperturbed=(fu["u"] == 0.0))


def _counts_never_increase(history):
    return all(all(b <= a for a, b in zip(v, v[1:]))
               for v in history.values())


def _lengths_monotone(lengths, rel_tol=1e-12):
    lh = np.asarray(lengths, float)
    return bool(np.all(np.diff(lh) <= rel_tol * lh[0]))


# ----------------------------------------------------------------------
# scenarios
# ----------------------------------------------------------------------

def scenario_sphere_sanity(config: LabConfig | None = None,
                           grid=1024) -> ScenarioReport:
    """Closed-spectrum sanity check on the unit-sphere great circle."""
    config = config or LabConfig()
    t0 = time.monotonic()
    rep = ScenarioReport("sphere-sanity", config=config.as_dict())
    trace = PotentialTrace(K=np.ones(grid), length=TWO_PI, closed=True)
    spec = closed_index(trace)
    eigs = [float(e) for e in spec.eigenvalues[:5]]
    rep.records["eigenvalues"] = eigs
    rep.records["index"] = int(spec.index)
    rep.records["nullity"] = int(spec.nullity)
    rep.check("index_is_1", spec.index == 1, f"index={spec.index}")
    rep.check("nullity_is_2", spec.nullity == 2, f"nullity={spec.nullity}")
    target = [-1.0, 0.0, 0.0, 3.0, 3.0]
    err = max(abs(a - b) for a, b in zip(eigs, target))
    rep.records["max_eigenvalue_error"] = err
    rep.check("eigenvalues_match", err < 1e-3, f"max err {err:.2e}")
    rep.wall_clock = time.monotonic() - t0
    return rep


def _certify_into(rep, rid, stage, path, config):
    """Certify a closed geodesic and record the standard assertions."""
    cert = certify_closed(stage.metric, path)
    rep.geodesics[rid] = cert
    rep.add_path(rid, path)
    rep.check(f"{rid}_residual", cert["residual"] < config.residual_tol,
              f"residual {cert['residual']:.2e}")
    rep.check(f"{rid}_simple", _path_is_simple(path), "self-intersection")
    cur = curve_from_path(path)
    counts = stage.book.crossings(cur)
    rep.records[f"{rid}_crossings"] = {k: int(v) for k, v in counts.items()}
    rep.check(f"{rid}_parity", all(c % 2 == 0 for c in counts.values()),
              f"odd crossing count: {counts}")
    if cert["index"] == 0:
        rep.check(f"{rid}_stability_inequality", cert["int_K"] <= 1e-6,
                  f"int K = {cert['int_K']:.3e}")
    return cert


def scenario_gamma_m(m, config: LabConfig | None = None) -> ScenarioReport:
    """The m-loop stable geodesic in the nose-barrier domain."""
    if not 1 <= int(m) <= 4:
        raise ValueError("m must be in 1..4")
    m = int(m)
    config = config or LabConfig()
    t0 = time.monotonic()
    stage = build_stage(config)
    rep = ScenarioReport(f"gamma-{m}",
                         config={**config.as_dict(), "m": m})
    curve = gamma_initial_curve(stage, m)
    rep.add_curve("initial", curve)
    eq = stage.book.references["equator"]
    rep.check("initial_equator_crossings",
              intersection_count(curve, eq) == 2 * m,
              "wrong homotopy slot")

    refs = dict(stage.book.references)
    out, certs, path = _flow_and_refine(stage, curve, config,
                                        references=refs)
    flow_cert = certs[0]
    rep.records["flow_steps"] = int(flow_cert.steps)
    rep.records["flow_sup_kappa"] = float(flow_cert.sup_kappa)
    rep.records["flow_min_barrier_distance"] = float(
        flow_cert.min_barrier_distance)
    rep.check("flow_counts_never_increase",
              _counts_never_increase(flow_cert.intersection_history))
    rep.check("flow_lengths_monotone",
              _lengths_monotone(flow_cert.lengths))

    cert = _certify_into(rep, "gamma", stage, path, config)
    rep.check("gamma_index_0", cert["index"] == 0,
              f"index {cert['index']}")
    rep.check("gamma_mean_K_plus", cert["mean_K_plus"] >= config.c0,
              f"mean max(K,0) = {cert['mean_K_plus']:.4f} < {config.c0}")
    # crossing conventions: positive-curvature crossings are counted at
    # the equator (2m per loop); the bottom-corridor and full-latitude
    # counts are reported alongside
    n_eq = _latitude_crossings(path.t, path.theta, stage.t_eq)
    th_B = stage.noses["B"][1]
    th_C = stage.noses["C"][1]
    n_cor = _latitude_crossings(path.t, path.theta, stage.t_bot,
                                th_lo=th_B + 0.2, th_hi=th_C - 0.2)
    n_lat = _latitude_crossings(path.t, path.theta, stage.t_bot)
    rep.records["positive_curvature_crossings"] = int(n_eq)
    rep.records["corridor_crossings"] = int(n_cor)
    rep.records["bottom_latitude_crossings"] = int(n_lat)
    rep.records["crossing_convention"] = (
        "positive-curvature crossings = transversal equator crossings "
        "(2 per loop, total 2m); corridor = bottom latitude between "
        "the nose barriers")
    rep.check("gamma_equator_crossings", n_eq == 2 * m,
              f"{n_eq} != {2 * m}")

    # control: with the noses (and so the barriers) removed, the same
    # initial curve has no homotopy content and the flow collapses
    collapsed = False
    try:
        shorten(stage.plain, curve.resampled(stage.plain, curve.n),
                barriers=(), stop=config.flow_stop, max_steps=20000,
                on_max="return")
    except Collapsed:
        collapsed = True
    rep.records["control_collapsed"] = bool(collapsed)
    rep.check("control_no_barriers_collapses", collapsed,
              "flow survived without barriers")
    rep.wall_clock = time.monotonic() - t0
    return rep


def scenario_eta_n(n, config: LabConfig | None = None) -> ScenarioReport:
    """The wrap-n spiral geodesic and its equator-crossing angles."""
    if not 1 <= int(n) <= 4:
        raise ValueError("n must be in 1..4")
    n = int(n)
    config = config or LabConfig()
    t0 = time.monotonic()
    stage = build_stage(config)
    metric = stage.metric
    rep = ScenarioReport(f"eta-{n}", config={**config.as_dict(), "n": n})
    curve = eta_initial_curve(stage, n)
    rep.add_curve("initial", curve)

    refs = dict(stage.book.references)
    out, certs, path = _flow_and_refine(
        stage, curve, config, references=refs,
        polish_stop=config.flow_stop_exact)
    all_lengths = [x for c in certs for x in c.lengths]
    rep.records["flow_steps"] = int(sum(c.steps for c in certs))
    rep.records["flow_sup_kappa"] = float(certs[-1].sup_kappa)
    rep.records["flow_converged"] = bool(certs[-1].converged)
    rep.check("flow_counts_never_increase",
              all(_counts_never_increase(c.intersection_history)
                  for c in certs))
    rep.check("flow_lengths_monotone", _lengths_monotone(all_lengths))
    rep.check("flow_final_sup_kappa",
              certs[-1].sup_kappa < config.flow_stop_exact,
              f"sup kappa {certs[-1].sup_kappa:.2e}")

    cert = _certify_into(rep, "eta", stage, path, config)
    crossings = equator_crossings(metric, path)
    rep.check("eta_two_equator_crossings", len(crossings) == 2,
              f"{len(crossings)} crossings")
    alpha0 = limiting_angle(metric, "upper")
    rep.records["alpha_0"] = float(alpha0)
    angles = []
    thetas = []
    for s, alpha in crossings:
        _, th = path.at(float(s))
        angles.append(float(alpha))
        thetas.append(float(normalize_theta(th)))
    rep.records["alpha_plus"] = max(angles) if angles else None
    rep.records["alpha_minus"] = min(angles) if angles else None
    rep.records["alpha_gaps"] = [abs(abs(a) - alpha0) for a in angles]
    if len(thetas) == 2:
        _, r_eq = metric.equator()
        dth = abs(thetas[0] - thetas[1])
        dth = min(dth, TWO_PI - dth)
        width = r_eq * dth
        rep.records["width_E"] = float(width)
        rep.records["width_convention"] = (
            "metric length of the shorter equator arc between the two "
            "crossing points")
        rep.check("width_positive", width > 0.0)
    rep.wall_clock = time.monotonic() - t0
    return rep


def equator_index_sweep(k_list=(0, 1, 2, 4), amplitude_list=(0.1, 0.2, 0.4),
                        rho0=0.25, config: LabConfig | None = None
                        ) -> ScenarioReport:
    """Morse index of the equator under symmetric bump placement."""
    config = config or LabConfig()
    t0 = time.monotonic()
    rep = ScenarioReport("index-sweep",
                         config={**config.as_dict(),
                                 "k_list": list(map(int, k_list)),
                                 "amplitude_list": list(map(float,
                                                            amplitude_list)),
                                 "rho0": float(rho0)})
    base = build_snowman()
    table = {}
    for k in k_list:
        for amp in amplitude_list:
            metric = place_equator_bumps(base, int(k), rho0=rho0,
                                         schedule="equal",
                                         amplitude=float(amp))
            path = _equator_path(metric)
            if path.residual >= config.residual_tol:
                raise SweepDegenerate(
                    f"equator no longer geodesic at k={k}, amp={amp}: "
                    f"residual {path.residual:.2e}")
            trace = potential_along(metric, path)
            spec = closed_index(trace)
            table[(int(k), float(amp))] = (int(spec.index),
                                           int(spec.nullity))
    rep.records["table"] = {f"k={k},a={a:g}": list(v)
                            for (k, a), v in sorted(table.items())}
    base_index = table[(0, float(amplitude_list[0]))][0]
    rep.records["baseline_index"] = base_index
    rep.check("baseline_index_1", base_index == 1, f"{base_index}")
    ok_amp = all(
        table[(k, a1)][0] <= table[(k, a2)][0]
        for k in map(int, k_list)
        for a1, a2 in zip(amplitude_list, amplitude_list[1:]))
    ok_k = all(
        table[(k1, a)][0] <= table[(k2, a)][0]
        for a in map(float, amplitude_list)
        for k1, k2 in zip(k_list, k_list[1:]))
    rep.check("index_nondecreasing_in_amplitude", ok_amp)
    rep.check("index_nondecreasing_in_k", ok_k)
    top = max(v[0] for v in table.values())
    rep.records["max_index"] = int(top)
    rep.check("some_pair_index_ge_3", top >= 3, f"max index {top}")
    rep.wall_clock = time.monotonic() - t0
    return rep

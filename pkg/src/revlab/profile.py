"""Arclength-parameterized profile curves for surfaces of revolution.

A profile is a planar curve (r(t), z(t)) with r > 0 away from poles; the
surface metric is dt^2 + r(t)^2 dtheta^2.  Profiles are assembled from
analytic pieces (circle arcs, neck cores, straight runs) glued by C-infinity
blend windows, then presented under a single global arclength parameter t.

The snowman is the connected sum of three round spheres through two
equal-radius necks, optionally with small polar "collar" necks to tiny caps
at both ends; each collar waist is a strictly stable circle used as a flow
barrier near the poles.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import CubicSpline, PchipInterpolator
from scipy.optimize import brentq

from .errors import GeometryInfeasible

__all__ = [
    "SnowmanSpec",
    "CollarSpec",
    "ProfileCurve",
    "snowman_profile",
    "sphere_profile",
    "cylinder_profile",
]


# ----------------------------------------------------------------------
# smooth shape helpers
# ----------------------------------------------------------------------

def _bump(x):
    """C-infinity bump exp(-1/(1-x^2)) on (-1, 1), zero outside."""
    x = np.asarray(x, dtype=float)
    out = np.zeros_like(x)
    inside = np.abs(x) < 1.0
    xi = x[inside]
    out[inside] = np.exp(-1.0 / (1.0 - xi * xi))
    return out


_STEP_NODES = np.linspace(-1.0, 1.0, 4001)
_STEP_CDF = CubicSpline(_STEP_NODES, _bump(_STEP_NODES)).antiderivative()
_STEP_TOTAL = float(_STEP_CDF(1.0))


def smooth_step(x):
    """C-infinity step: 0 for x <= -1, 1 for x >= 1, strictly monotone between."""
    x = np.asarray(x, dtype=float)
    return _STEP_CDF(np.clip(x, -1.0, 1.0)) / _STEP_TOTAL


def smooth_step_d(x, order=1):
    """Derivatives of smooth_step (order 1 or 2)."""
    x = np.asarray(x, dtype=float)
    der = _STEP_CDF.derivative(order)(np.clip(x, -1.0, 1.0)) / _STEP_TOTAL
    return np.where(np.abs(x) < 1.0, der, 0.0)


def odd_saturating(x):
    """C-infinity odd function: -1 for x <= -1, +1 for x >= 1."""
    return 2.0 * smooth_step(np.asarray(x, dtype=float)) - 1.0


def odd_saturating_d(x, order=1):
    return 2.0 * smooth_step_d(x, order)


# ----------------------------------------------------------------------
# analytic pieces
# ----------------------------------------------------------------------

class _Piece:
    """A planar curve segment c(p) with derivatives up to second order."""

    unit_speed = False

    def eval(self, p, order=2):
        """Return (pos, d1, d2) arrays of shape (n, 2)."""
        raise NotImplementedError


class CircleArc(_Piece):
    """Arc of curvature 1/R traversed with increasing tangent angle.

    Parameterized by arclength: phi(p) = phi0 + p/R,
    pos = (rc + R sin phi, zc - R cos phi).
    """

    unit_speed = True

    def __init__(self, rc, zc, R, phi0, length):
        self.rc, self.zc, self.R = float(rc), float(zc), float(R)
        self.phi0, self.length = float(phi0), float(length)

    def eval(self, p, order=2):
        p = np.atleast_1d(np.asarray(p, dtype=float))
        phi = self.phi0 + p / self.R
        pos = np.stack([self.rc + self.R * np.sin(phi),
                        self.zc - self.R * np.cos(phi)], axis=-1)
        d1 = np.stack([np.cos(phi), np.sin(phi)], axis=-1)
        d2 = np.stack([-np.sin(phi), np.cos(phi)], axis=-1) / self.R
        return pos, d1, d2


class StraightRun(_Piece):
    """Straight segment at fixed tangent angle phi."""

    unit_speed = True

    def __init__(self, r0, z0, phi, length):
        self.r0, self.z0 = float(r0), float(z0)
        self.phi, self.length = float(phi), float(length)

    def eval(self, p, order=2):
        p = np.atleast_1d(np.asarray(p, dtype=float))
        c, s = np.cos(self.phi), np.sin(self.phi)
        pos = np.stack([self.r0 + c * p, self.z0 + s * p], axis=-1)
        d1 = np.broadcast_to(np.array([c, s]), pos.shape).copy()
        d2 = np.zeros_like(pos)
        return pos, d1, d2


class NeckCore(_Piece):
    """Symmetric-by-default neck: tangent angle phi(s) = pi/2 - g(s).

    g(s) = A(s) * S(s/(sat*w)) with S odd and saturating, so the tangent
    angle is exactly constant for |s| >= sat*w and the piece continues as a
    straight run beyond its nominal ends (used by blend windows).  A(s)
    interpolates smoothly from A_minus to A_plus across the waist; the two
    agree when the adjacent sphere radii are equal, which makes the neck
    exactly symmetric about the horizontal waist plane.

    Native parameter p in [0, 2w] maps to s = p - w; unit speed by
    construction.  r(0-waist) = waist_radius exactly.
    """

    unit_speed = True
    SAT = 0.8  # fraction of half-width where the angle saturates

    def __init__(self, waist_radius, z_waist, half_width, a_minus, a_plus,
                 pad=0.5):
        self.r_w = float(waist_radius)
        self.z_w = float(z_waist)
        self.w = float(half_width)
        self.a_minus = float(a_minus)
        self.a_plus = float(a_plus)
        self.length = 2.0 * self.w
        # high-accuracy antiderivatives of (sin g, cos g) over a padded range
        lo, hi = -self.w * (1 + pad), self.w * (1 + pad)
        s = np.linspace(lo, hi, 6001)
        g = self._g(s)
        self._r_int = CubicSpline(s, np.sin(g)).antiderivative()
        self._z_int = CubicSpline(s, np.cos(g)).antiderivative()
        self._r_off = float(self._r_int(0.0))
        self._z_off = float(self._z_int(0.0))

    def _amp(self, s):
        return self.a_minus + (self.a_plus - self.a_minus) * smooth_step(
            s / (self.SAT * self.w))

    def _amp_d(self, s, order=1):
        scale = (self.SAT * self.w) ** order
        return (self.a_plus - self.a_minus) * smooth_step_d(
            s / (self.SAT * self.w), order) / scale

    def _g(self, s):
        s = np.asarray(s, dtype=float)
        return self._amp(s) * odd_saturating(s / (self.SAT * self.w))

    def _g_d(self, s):
        x = s / (self.SAT * self.w)
        S = odd_saturating(x)
        Sd = odd_saturating_d(x, 1) / (self.SAT * self.w)
        return self._amp_d(s, 1) * S + self._amp(s) * Sd

    def arm_integrals(self):
        """(r(-w) - r_w, r(w) - r_w) radial gains of the two arms."""
        rm = float(self._r_int(-self.w)) - self._r_off
        rp = float(self._r_int(self.w)) - self._r_off
        return rm, rp

    def eval(self, p, order=2):
        p = np.atleast_1d(np.asarray(p, dtype=float))
        s = p - self.w
        g = self._g(s)
        pos = np.stack([self.r_w + (self._r_int(s) - self._r_off),
                        self.z_w + (self._z_int(s) - self._z_off)], axis=-1)
        d1 = np.stack([np.sin(g), np.cos(g)], axis=-1)
        gd = self._g_d(s)
        d2 = np.stack([np.cos(g) * gd, -np.sin(g) * gd], axis=-1)
        return pos, d1, d2


class BlendWindow(_Piece):
    """C-infinity convex blend of two overlapping pieces.

    Over q in [0, L] evaluates left at pL0+q and right at pR0+q and mixes
    with a step that is flat (all derivatives zero) at both ends, so the
    assembled curve coincides with the raw pieces outside the window.
    Not unit speed.
    """

    unit_speed = False

    def __init__(self, left, pL0, right, pR0, length):
        self.left, self.pL0 = left, float(pL0)
        self.right, self.pR0 = right, float(pR0)
        self.length = float(length)

    def eval(self, p, order=2):
        p = np.atleast_1d(np.asarray(p, dtype=float))
        x = 2.0 * p / self.length - 1.0
        w = smooth_step(x)[:, None]
        w1 = (smooth_step_d(x, 1) * 2.0 / self.length)[:, None]
        w2 = (smooth_step_d(x, 2) * (2.0 / self.length) ** 2)[:, None]
        cL, dL, eL = self.left.eval(self.pL0 + p)
        cR, dR, eR = self.right.eval(self.pR0 + p)
        diff = cR - cL
        pos = cL + w * diff
        d1 = dL + w * (dR - dL) + w1 * diff
        d2 = eL + w * (eR - eL) + 2.0 * w1 * (dR - dL) + w2 * diff
        return pos, d1, d2


# ----------------------------------------------------------------------
# assembled profile
# ----------------------------------------------------------------------

@dataclass
class _Segment:
    piece: _Piece
    p0: float           # native parameter at segment start
    s0: float           # global arclength at segment start
    s_len: float        # arclength extent
    inv: object = None  # arclength -> native parameter (blends only)


class ProfileCurve:
    """Globally arclength-parameterized profile with exact derivatives.

    Evaluation routes each query to its segment; unit-speed segments map
    arclength to native parameter exactly, blend windows through a dense
    monotone interpolant refined by Newton steps on the quadrature-accurate
    arclength map.
    """

    def __init__(self, segments, landmarks=None, has_poles=True,
                 n_samples=2048):
        self._segs = segments
        self.total_length = segments[-1].s0 + segments[-1].s_len
        self.landmarks = dict(landmarks or {})
        self.has_poles = has_poles
        self.z_offset = 0.0
        self._bounds = np.array([seg.s0 for seg in segments]
                                + [self.total_length])
        self._n_samples = n_samples
        self.resample()

    def resample(self):
        ts = np.linspace(0.0, self.total_length, self._n_samples)
        ev = self.eval(ts)
        self.samples = np.stack([ts, ev["r"], ev["z"]], axis=-1)

    # -- construction helper ------------------------------------------

    @staticmethod
    def assemble(pieces, joins_blend, blend_width, landmarks_native,
                 has_poles=True):
        """Glue consecutive unit-speed pieces, blending selected joins.

        pieces: ordered list of unit-speed pieces (native params [0, length]).
        joins_blend: iterable of bools, one per interior join.
        landmarks_native: {name: (piece_index, native_p)} resolved to global
        arclength after assembly.
        """
        half = blend_width / 2.0
        segs = []
        s = 0.0
        n = len(pieces)
        cuts = []  # per piece: (native start, native end) actually used
        for i, pc in enumerate(pieces):
            a = half if (i > 0 and joins_blend[i - 1]) else 0.0
            b = pc.length - (half if (i < n - 1 and joins_blend[i]) else 0.0)
            if b - a <= blend_width:
                raise GeometryInfeasible(
                    f"piece {i} too short for blend width {blend_width}")
            cuts.append((a, b))
        for i, pc in enumerate(pieces):
            a, b = cuts[i]
            segs.append(_Segment(pc, a, s, b - a))
            s += b - a
            if i < n - 1 and joins_blend[i]:
                bw = BlendWindow(pc, pc.length - half,
                                 pieces[i + 1], -half, blend_width)
                # quadrature arclength map over the window
                q = np.linspace(0.0, blend_width, 257)
                _, d1, _ = bw.eval(q)
                speed = np.hypot(d1[:, 0], d1[:, 1])
                arc = CubicSpline(q, speed).antiderivative()
                s_of_q = arc(q)
                inv = PchipInterpolator(s_of_q, q)
                segs.append(_Segment(bw, 0.0, s, float(s_of_q[-1]), inv=inv))
                s += float(s_of_q[-1])
        landmarks = {}
        for name, (idx, pnat) in landmarks_native.items():
            a, _ = cuts[idx]
            base = next(g for g in segs if g.piece is pieces[idx])
            landmarks[name] = base.s0 + (pnat - a)
        return ProfileCurve(segs, landmarks, has_poles)

    # -- evaluation ----------------------------------------------------

    def eval(self, t, order=2):
        """Evaluate r, z, tangent angle phi, and Gaussian curvature K at t.

        Returns dict of arrays: r, z, rt (= dr/dt), zt, kappa (profile
        curvature dphi/dt) and K (Gaussian curvature of the surface of
        revolution).
        """
        t = np.atleast_1d(np.asarray(t, dtype=float))
        t = np.clip(t, 0.0, self.total_length)
        idx = np.clip(np.searchsorted(self._bounds, t, side="right") - 1,
                      0, len(self._segs) - 1)
        r = np.empty_like(t)
        z = np.empty_like(t)
        rt = np.empty_like(t)
        zt = np.empty_like(t)
        kap = np.empty_like(t)
        for k in np.unique(idx):
            seg = self._segs[k]
            m = idx == k
            tl = t[m] - seg.s0
            if seg.inv is None:
                p = seg.p0 + tl
            else:
                p = seg.p0 + seg.inv(tl)
            pos, d1, d2 = seg.piece.eval(p)
            sp2 = d1[:, 0] ** 2 + d1[:, 1] ** 2
            sp = np.sqrt(sp2)
            r[m] = pos[:, 0]
            z[m] = pos[:, 1] + self.z_offset
            rt[m] = d1[:, 0] / sp
            zt[m] = d1[:, 1] / sp
            kap[m] = (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]) / (sp2 * sp)
        K = np.where(r > 1e-8, kap * zt / np.maximum(r, 1e-300), kap ** 2)
        return {"r": r, "z": z, "rt": rt, "zt": zt, "kappa": kap, "K": K}

    def r_of(self, t):
        return self.eval(t)["r"]

    def z_of(self, t):
        return self.eval(t)["z"]

    def drdt(self, t):
        return self.eval(t)["rt"]

    def phi_of(self, t):
        ev = self.eval(t)
        return np.arctan2(ev["zt"], ev["rt"])

    def K_of(self, t):
        return self.eval(t)["K"]


# ----------------------------------------------------------------------
# snowman construction
# ----------------------------------------------------------------------

@dataclass
class CollarSpec:
    """Small polar cap joined by a stable collar neck (flow barrier)."""
    cap_radius: float = 0.45
    waist_radius: float = 0.18
    half_width: float = 0.28


@dataclass
class SnowmanSpec:
    radii: tuple = (1.0, 1.0, 1.0)
    neck_radius: float = 0.3
    neck_half_width: float = 0.35
    blend_width: float = 0.08
    collar: CollarSpec | None = field(default_factory=CollarSpec)


def _solve_neck(r_left, r_right, waist, half_width):
    """Amplitudes (a_minus, a_plus) so both neck arms meet their spheres.

    Conditions: r(-w) = R_left cos(a_minus), r(w) = R_right cos(a_plus).
    Solved by alternating 1-d bracketed root finds (the coupling through the
    amplitude crossfade is weak); exact after the first pass when the radii
    are equal.
    """
    if waist >= min(r_left, r_right):
        raise GeometryInfeasible("neck waist radius must be below adjacent "
                                 "sphere radii")

    def arms(am, ap):
        core = NeckCore(waist, 0.0, half_width, am, ap)
        return core.arm_integrals()

    def solve_side(fixed_other, side):
        def fun(a):
            am, ap = (a, fixed_other) if side == "m" else (fixed_other, a)
            rm, rp = arms(am, ap)
            if side == "m":
                return waist + rm - r_left * np.cos(a)
            return waist + rp - r_right * np.cos(a)
        lo, hi = 1e-3, 1.45
        flo, fhi = fun(lo), fun(hi)
        if flo * fhi > 0:
            raise GeometryInfeasible(
                "no neck amplitude matches the sphere cut; adjust the neck "
                "half-width or waist radius")
        return brentq(fun, lo, hi, xtol=1e-13)

    am = ap = 0.5
    for _ in range(12):
        am_new = solve_side(ap, "m")
        ap_new = solve_side(am_new, "p")
        if abs(am_new - am) + abs(ap_new - ap) < 1e-14:
            am, ap = am_new, ap_new
            break
        am, ap = am_new, ap_new
    return am, ap


def _arc_between(r_prev_end, z_prev_end, R, phi_in, phi_out):
    """Circle arc of radius R entering at (r,z) with angle phi_in."""
    zc = z_prev_end + R * np.cos(phi_in)
    rc = r_prev_end - R * np.sin(phi_in)
    if abs(rc) > 1e-9:
        raise GeometryInfeasible("sphere arc does not close onto the axis "
                                 f"(offset {rc:.3e})")
    return CircleArc(0.0, zc, R, phi_in, R * (phi_out - phi_in))


def snowman_profile(spec: SnowmanSpec) -> ProfileCurve:
    """Profile of the three-sphere snowman (with optional polar collars).

    Walks the pieces from the south pole: [cap, collar], bottom sphere,
    neck, middle sphere, neck, top sphere, [collar, cap]; every interior
    join is blended over spec.blend_width.  The middle-sphere equator is
    placed at z = 0.
    """
    R1, R2, R3 = spec.radii
    for R in (R1, R2, R3):
        if spec.neck_radius >= R:
            raise GeometryInfeasible("neck radius must be below every "
                                     "sphere radius it joins")
    if not 0 < spec.neck_radius < R2:
        raise GeometryInfeasible("need 0 < neck radius < middle radius")

    pieces = []
    landmarks_native = {}

    def add_landmark(name, pnat):
        landmarks_native[name] = (len(pieces) - 1, pnat)

    # south end
    if spec.collar is not None:
        col = spec.collar
        am_c, ap_c = _solve_neck(col.cap_radius, R1, col.waist_radius,
                                 col.half_width)
        cap = CircleArc(0.0, 0.0, col.cap_radius, 0.0,
                        col.cap_radius * (np.pi / 2 + am_c))
        pieces.append(cap)
        add_landmark("south_pole", 0.0)
        end = cap.eval(cap.length)[0][0]
        neck_s = NeckCore(col.waist_radius, 0.0, col.half_width, am_c, ap_c)
        zoff = end[1] - neck_s.eval(0.0)[0][0, 1]
        neck_s = NeckCore(col.waist_radius, neck_s.z_w + zoff,
                          col.half_width, am_c, ap_c)
        pieces.append(neck_s)
        add_landmark("south_collar_waist", col.half_width)
        end = neck_s.eval(neck_s.length)[0][0]
        phi_in = np.pi / 2 - ap_c
    else:
        end = None
        phi_in = 0.0

    # bottom sphere
    am1, ap1 = _solve_neck(R1, R2, spec.neck_radius, spec.neck_half_width)
    phi_out = np.pi / 2 + am1
    if end is None:
        arc1 = CircleArc(0.0, 0.0, R1, 0.0, R1 * phi_out)
        pieces.append(arc1)
        add_landmark("south_pole", 0.0)
    else:
        arc1 = _arc_between(end[0], end[1], R1, phi_in, phi_out)
        pieces.append(arc1)
    add_landmark("bottom_equator", R1 * (np.pi / 2 - arc1.phi0))
    end = arc1.eval(arc1.length)[0][0]

    # lower neck
    neck1 = NeckCore(spec.neck_radius, 0.0, spec.neck_half_width, am1, ap1)
    zoff = end[1] - neck1.eval(0.0)[0][0, 1]
    neck1 = NeckCore(spec.neck_radius, zoff, spec.neck_half_width, am1, ap1)
    pieces.append(neck1)
    add_landmark("lower_neck_waist", spec.neck_half_width)
    end = neck1.eval(neck1.length)[0][0]

    # middle sphere
    am2, ap2 = _solve_neck(R2, R3, spec.neck_radius, spec.neck_half_width)
    arc2 = _arc_between(end[0], end[1], R2, np.pi / 2 - ap1, np.pi / 2 + am2)
    pieces.append(arc2)
    add_landmark("equator", R2 * (np.pi / 2 - arc2.phi0))
    end = arc2.eval(arc2.length)[0][0]

    # upper neck
    neck2 = NeckCore(spec.neck_radius, 0.0, spec.neck_half_width, am2, ap2)
    zoff = end[1] - neck2.eval(0.0)[0][0, 1]
    neck2 = NeckCore(spec.neck_radius, zoff, spec.neck_half_width, am2, ap2)
    pieces.append(neck2)
    add_landmark("upper_neck_waist", spec.neck_half_width)
    end = neck2.eval(neck2.length)[0][0]

    # top sphere (and optional north collar)
    if spec.collar is not None:
        col = spec.collar
        am_n, ap_n = _solve_neck(R3, col.cap_radius, col.waist_radius,
                                 col.half_width)
        arc3 = _arc_between(end[0], end[1], R3, np.pi / 2 - ap2,
                            np.pi / 2 + am_n)
        pieces.append(arc3)
        add_landmark("top_equator", R3 * (np.pi / 2 - arc3.phi0))
        end = arc3.eval(arc3.length)[0][0]
        neck_n = NeckCore(col.waist_radius, 0.0, col.half_width, am_n, ap_n)
        zoff = end[1] - neck_n.eval(0.0)[0][0, 1]
        neck_n = NeckCore(col.waist_radius, zoff, col.half_width, am_n, ap_n)
        pieces.append(neck_n)
        add_landmark("north_collar_waist", col.half_width)
        end = neck_n.eval(neck_n.length)[0][0]
        cap_n = _arc_between(end[0], end[1], col.cap_radius,
                             np.pi / 2 - ap_n, np.pi)
        pieces.append(cap_n)
        add_landmark("north_pole", cap_n.length)
    else:
        arc3 = _arc_between(end[0], end[1], R3, np.pi / 2 - ap2, np.pi)
        pieces.append(arc3)
        add_landmark("top_equator", R3 * (np.pi / 2 - arc3.phi0))
        add_landmark("north_pole", arc3.length)

    joins = [True] * (len(pieces) - 1)
    prof = ProfileCurve.assemble(pieces, joins, spec.blend_width,
                                 landmarks_native)
    # put the middle equator at z = 0
    prof.z_offset = -float(prof.z_of(prof.landmarks["equator"])[0])
    prof.resample()
    prof.landmarks["removable_below"] = prof.landmarks.get(
        "south_collar_waist", 0.0)
    return prof


def sphere_profile(R=1.0) -> ProfileCurve:
    """Round sphere of radius R (degenerate snowman)."""
    arc = CircleArc(0.0, 0.0, R, 0.0, np.pi * R)
    seg = _Segment(arc, 0.0, 0.0, arc.length)
    return ProfileCurve([seg], {"south_pole": 0.0,
                                "equator": np.pi * R / 2,
                                "north_pole": np.pi * R})


def cylinder_profile(radius=1.0, height=10.0) -> ProfileCurve:
    """Flat cylinder r == radius, t in [0, height]; no poles."""
    run = StraightRun(radius, 0.0, np.pi / 2, height)
    seg = _Segment(run, 0.0, 0.0, run.length)
    return ProfileCurve([seg], {"equator": height / 2}, has_poles=False)

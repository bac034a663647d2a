"""Geodesic integration on perturbed revolution metrics.

State is (t, dtheta, alpha): profile arclength, axis angle relative to the
launch point, and the tangent angle alpha measured from the meridian.  For
the conformal metric e^{2u}(dt^2 + r^2 dtheta^2), with s the perturbed
arclength:

    dt/ds     = e^-u cos(alpha)
    dtheta/ds = e^-u sin(alpha) / r
    dalpha/ds = e^-u [ -(r'/r) sin(alpha) - u_t sin(alpha) + u_theta cos(alpha)/r ]

(the last line is the conformal geodesic-curvature relation kappa_g =
du/dn).  Integrating dtheta rather than theta keeps the system independent
of the launch theta, which makes rotational equivariance exact to the bit
on unperturbed metrics.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.integrate import solve_ivp
from scipy.interpolate import make_interp_spline
from scipy.optimize import brentq

from .errors import (
    ConjugateDegeneracy,
    NoConvergence,
    NoCrossing,
    NoNeck,
    PoleHit,
)
from .surface import SurfaceMetric, SurfacePoint, TangentDirection, \
    normalize_alpha, normalize_theta

__all__ = [
    "GeodesicPath",
    "shoot",
    "shoot_batch",
    "limiting_angle",
    "classify_crossing",
    "connect",
    "close_up",
    "geodesic_residual",
]

RTOL = 1e-12
ATOL = 1e-12
POLE_EVENT_MARGIN = 2e-2


# ----------------------------------------------------------------------
# paths
# ----------------------------------------------------------------------

@dataclass
class GeodesicPath:
    """Arclength-sampled geodesic with Clairaut records."""
    s: np.ndarray
    t: np.ndarray
    theta: np.ndarray       # unwrapped (continuous) axis angle
    alpha: np.ndarray       # unwrapped tangent angle
    length: float
    closed: bool
    residual: float
    clairaut: np.ndarray    # r sin(alpha), exact invariant where u == 0
    unperturbed: np.ndarray  # mask: metric untouched at the sample

    def __post_init__(self):
        self._spl_t = make_interp_spline(self.s, self.t, k=3)
        self._spl_th = make_interp_spline(self.s, self.theta, k=3)
        self._spl_a = make_interp_spline(self.s, self.alpha, k=3)

    def at(self, s):
        s = np.asarray(s, dtype=float)
        return self._spl_t(s), normalize_theta(self._spl_th(s))

    def alpha_at(self, s):
        return self._spl_a(np.asarray(s, dtype=float))

    @property
    def winding(self):
        return (self.theta[-1] - self.theta[0]) / (2.0 * np.pi)

    @property
    def start(self):
        return SurfacePoint(float(self.t[0]), float(self.theta[0]))

    @property
    def end(self):
        return SurfacePoint(float(self.t[-1]), float(self.theta[-1]))

    def clairaut_drift(self):
        """Max relative drift of r sin(alpha) over maximal unperturbed runs."""
        worst = 0.0
        m = self.unperturbed
        edges = np.flatnonzero(np.diff(m.astype(int)) != 0) + 1
        for a, b in zip(np.r_[0, edges], np.r_[edges, len(m)]):
            if not m[a] or b - a < 2:
                continue
            c = self.clairaut[a:b]
            cbar = float(np.mean(c))
            worst = max(worst, float(np.max(np.abs(c - cbar)))
                        / (1.0 + abs(cbar)))
        return worst


# ----------------------------------------------------------------------
# the ODE
# ----------------------------------------------------------------------

def _rhs_factory(metric: SurfaceMetric, theta0):
    def rhs(s, y):
        n = y.size // 3
        t, dth, al = y.reshape(3, n)
        f = metric.fields(t, theta0 + dth)
        r, rt = f["r"], f["rt"]
        eu = np.exp(-f["u"])
        sa, ca = np.sin(al), np.cos(al)
        dt = eu * ca
        dthds = eu * sa / r
        dal = eu * (-(rt / r) * sa - f["ut"] * sa + f["uth"] * ca / r)
        return np.concatenate([dt, dthds, dal])
    return rhs


def _pole_events(metric):
    if not metric.profile.has_poles:
        return []
    T = metric.total_length

    def south(s, y):
        return y[0] - POLE_EVENT_MARGIN
    south.terminal = True

    def north(s, y):
        return (T - POLE_EVENT_MARGIN) - y[0]
    north.terminal = True
    return [south, north]


def _christoffel_defect(metric, s, t, theta, sq):
    """Max geodesic-equation defect at query points sq, from quintic-spline
    second derivatives of a uniformly sampled (s, t, theta) path piece."""
    spl_t = make_interp_spline(s, t, k=5)
    spl_th = make_interp_spline(s, theta, k=5)
    td, th_d = spl_t(sq, 1), spl_th(sq, 1)
    tdd, th_dd = spl_t(sq, 2), spl_th(sq, 2)
    f = metric.fields(spl_t(sq), spl_th(sq))
    r, rt, ut, uth = f["r"], f["rt"], f["ut"], f["uth"]
    # Christoffels of e^{2u}(dt^2 + r^2 dtheta^2)
    res_t = tdd + ut * td ** 2 + 2 * uth * td * th_d \
        - (r * rt + r * r * ut) * th_d ** 2
    res_th = th_dd - (uth / r ** 2) * td ** 2 \
        + 2 * (rt / r + ut) * td * th_d + uth * th_d ** 2
    return float(np.max(np.abs(res_t) + r * np.abs(res_th)))


def geodesic_residual(metric, s, t, theta, n_check=800):
    """Independent residual: quintic-spline second derivatives of the
    sampled path against the Christoffel terms of the conformal metric.
    Requires a uniformly sampled path; returns the max acceleration defect
    (dimensionally per unit length)."""
    if len(s) < 8:
        return np.inf
    lo, hi = s[0] + 3 * (s[1] - s[0]), s[-1] - 3 * (s[-1] - s[-2])
    if hi <= lo:
        return np.inf
    sq = np.linspace(lo, hi, min(n_check, len(s)))
    return _christoffel_defect(metric, s, t, theta, sq)


def _window_rho(metric, t, theta):
    """Smallest support radius among perturbations active at the samples."""
    rho = np.inf
    for p, ch in zip(metric.perturbations, metric.charts):
        d = ch.distance(t, theta)
        if np.any(d < p.support_radius):
            rho = min(rho, p.rho)
    return rho


def _residual_from_dense(metric, rhs, sol_eval, s_end, theta0, ds=2e-3,
                         n_check=800):
    """Residual for a freshly integrated path given its dense evaluator.

    Coarse uniform grid everywhere, checked away from perturbation
    supports.  Each support crossing is certified separately: the window
    is re-integrated at a small max_step (the long-path dense interpolant
    carries per-step wiggle that second differences would amplify) and
    checked on its own fine uniform grid sized to the bump scale.  The
    re-integrated window is required to agree with the original solution
    to 1e-9 pointwise, so the certificate speaks for the returned path."""
    n = max(int(np.ceil(s_end / ds)) + 1, 8)
    sc = np.linspace(0.0, s_end, n)
    t, dth, _ = sol_eval(sc)
    theta = theta0 + dth
    u = metric.fields(t, theta)["u"]
    hot = np.flatnonzero(u != 0.0)
    lo, hi = sc[3], sc[-4]
    sq = np.linspace(lo, hi, min(n_check, n))
    spans = []
    if len(hot):
        # exclude coarse checks near supports (spline pollution zone)
        bad = np.zeros(len(sq), dtype=bool)
        spans = np.split(hot, np.flatnonzero(np.diff(hot) > 1) + 1)
        for g in spans:
            a, b = sc[g[0]] - 8 * ds, sc[g[-1]] + 8 * ds
            bad |= (sq >= a) & (sq <= b)
        sq = sq[~bad]
    res = _christoffel_defect(metric, sc, t, theta, sq) if len(sq) else 0.0
    for g in spans:
        rho = _window_rho(metric, t[g], theta[g])
        ds_f = float(np.clip(rho / 600.0, 2e-5, ds))
        a = max(sc[g[0]] - 20 * ds_f, 0.0)
        b = min(sc[g[-1]] + 20 * ds_f, s_end)
        y_a = sol_eval(np.array([a]))[:, 0]
        win = solve_ivp(rhs, (a, b), y_a, method="DOP853", rtol=RTOL,
                        atol=ATOL, dense_output=True,
                        max_step=float(np.clip(rho / 150.0, 2e-4, 2e-3)))
        if not win.success:
            return np.inf
        m = max(int(np.ceil((b - a) / ds_f)) + 1, 16)
        sw = np.linspace(a, b, m)
        yw = win.sol(sw)
        if np.max(np.abs(yw - sol_eval(sw))) > 1e-9:
            return np.inf
        res = max(res, _christoffel_defect(metric, sw, yw[0],
                                           theta0 + yw[1], sw[6:-6]))
    return res


def _make_path(metric, sol_s, t, dth, al, theta0, residual, closed=False):
    theta = theta0 + dth
    f = metric.fields(t, theta)
    clair = f["r"] * np.sin(al)
    unpert = f["u"] == 0.0
    return GeodesicPath(s=sol_s, t=t, theta=theta, alpha=al,
                        length=float(sol_s[-1] - sol_s[0]), closed=closed,
                        residual=residual, clairaut=clair, unperturbed=unpert)


def shoot(metric, start, direction, length, events=None, ds=None,
          check_residual=True, rtol=RTOL, atol=ATOL):
    """Integrate a single geodesic.  start may be a SurfacePoint or (t,
    theta); direction a TangentDirection or angle.  Extra event functions
    receive (s, (t, theta, alpha)) and terminate on zero crossing.

    Returns (GeodesicPath, triggered_event_index_or_None).
    """
    t0, theta0 = (start.t, start.theta) if isinstance(start, SurfacePoint) \
        else (float(start[0]), float(start[1]))
    a0 = direction.alpha if isinstance(direction, TangentDirection) \
        else float(direction)
    rhs = _rhs_factory(metric, theta0)
    evs = _pole_events(metric)
    n_pole = len(evs)
    user = []
    for e in (events or []):
        def wrapped(s, y, e=e):
            return e(s, (y[0], theta0 + y[1], y[2]))
        wrapped.terminal = getattr(e, "terminal", True)
        wrapped.direction = getattr(e, "direction", 0)
        user.append(wrapped)
    evs = evs + user
    if ds is None:
        ds = 2e-3
    # bound the step when a residual certificate is requested: the dense
    # interpolant is lower order than the solver and its per-step wiggle
    # gets amplified by the second-difference residual check
    max_step = 0.02 if check_residual else np.inf
    sol = solve_ivp(rhs, (0.0, length), [t0, 0.0, a0], method="DOP853",
                    rtol=rtol, atol=atol, dense_output=True, events=evs,
                    max_step=max_step)
    if sol.status == 1:  # event
        hit = [i for i, te in enumerate(sol.t_events) if len(te)]
        s_end = float(min(sol.t_events[i][0] for i in hit))
        which = hit[0]
        if which < n_pole:
            raise PoleHit("geodesic entered the pole margin at "
                          f"s = {s_end:.4f}")
        triggered = which - n_pole
    elif sol.status == 0:
        s_end, triggered = length, None
    else:
        raise NoConvergence(f"integrator failed: {sol.message}")
    n = max(int(np.ceil(s_end / ds)) + 1, 8)
    ss = np.linspace(0.0, s_end, n)
    t, dth, al = sol.sol(ss)
    res = _residual_from_dense(metric, rhs, sol.sol, s_end, theta0) \
        if check_residual else 0.0
    path = _make_path(metric, ss, t, dth, al, theta0, res)
    return path, triggered


def shoot_batch(metric, t0, theta0, alpha0, length, n_samples=2001):
    """Integrate many geodesics in one DOP853 solve (no events).

    Returns dict of (n_samples, n_traj) arrays s, t, theta, alpha,
    clairaut, unperturbed.
    """
    t0 = np.atleast_1d(np.asarray(t0, dtype=float))
    theta0 = np.broadcast_to(np.asarray(theta0, dtype=float), t0.shape)
    alpha0 = np.broadcast_to(np.asarray(alpha0, dtype=float), t0.shape)
    rhs = _rhs_factory(metric, theta0)
    y0 = np.concatenate([t0, np.zeros_like(t0), alpha0])
    ss = np.linspace(0.0, length, n_samples)
    sol = solve_ivp(rhs, (0.0, length), y0, method="DOP853",
                    rtol=RTOL, atol=ATOL, t_eval=ss)
    if not sol.success:
        raise NoConvergence(sol.message)
    n = len(t0)
    t, dth, al = sol.y.reshape(3, n, -1)
    theta = theta0[:, None] + dth
    f = metric.fields(t.ravel(), theta.ravel())
    r = f["r"].reshape(t.shape)
    u = f["u"].reshape(t.shape)
    return {"s": ss, "t": t, "theta": theta, "alpha": al,
            "clairaut": r * np.sin(al), "unperturbed": u == 0.0}


# ----------------------------------------------------------------------
# snowman-specific operations
# ----------------------------------------------------------------------

def _require_neck(metric, which):
    try:
        t_n, r_n = metric.neck(which)
    except KeyError as exc:
        raise NoNeck("metric has no neck structure") from exc
    return t_n, r_n


def limiting_angle(metric, which="upper", theta0=0.0, tol=1e-9,
                   max_length=60.0):
    """Equator crossing angle of geodesics asymptotic to a neck, by
    iterated bisection on the shooting angle between "crosses the waist"
    and "turns back" behaviors."""
    t_eq, r_eq = metric.equator()
    t_n, r_n = _require_neck(metric, which)
    sgn = 1.0 if t_n > t_eq else -1.0

    def outcome(alpha):
        # +1 if the geodesic crosses the waist, -1 if it turns back
        def cross(s, p):
            return sgn * (p[0] - t_n)
        cross.terminal = True
        cross.direction = 1

        def turn(s, p):
            return np.cos(p[2])
        turn.terminal = True
        turn.direction = -1
        path, ev = shoot(metric, (t_eq, theta0), alpha, max_length,
                         events=[cross, turn], check_residual=False,
                         rtol=1e-11, atol=1e-11, ds=2e-2)
        if ev == 0:
            return 1
        if ev == 1:
            return -1
        raise NoConvergence("geodesic neither crossed the waist nor "
                            "turned back within the length budget")

    lo, hi = 0.05, np.pi / 2 - 0.05
    if outcome(lo) != 1 or outcome(hi) != -1:
        raise NoNeck("shooting bracket does not show neck behavior")
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if outcome(mid) == 1:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def equator_crossings(metric, path):
    """(s, alpha) at each transverse crossing of the middle-sphere equator."""
    t_eq, _ = metric.equator()
    d = path.t - t_eq
    idx = np.flatnonzero(d[:-1] * d[1:] < 0)
    out = []
    for i in idx:
        w = d[i] / (d[i] - d[i + 1])
        s = path.s[i] + w * (path.s[i + 1] - path.s[i])
        out.append((float(s), float(path.alpha_at(s))))
    return out


def classify_crossing(metric, path, band=1e-4):
    """'enters-spheres' | 'periodic-z' | 'asymptotic' by comparing equator
    crossing angles with the limiting angle."""
    crossings = equator_crossings(metric, path)
    if not crossings:
        raise NoCrossing("path never crosses the equator")
    _, r_eq = metric.equator()
    _, r_n = _require_neck(metric, "upper")
    alpha0 = np.arcsin(r_n / r_eq)
    # effective meridian angle in [0, pi/2] regardless of travel direction
    a = min(float(np.arcsin(min(1.0, abs(np.sin(al)))))
            for _, al in crossings)
    if abs(a - alpha0) < band:
        return "asymptotic"
    return "enters-spheres" if a < alpha0 else "periodic-z"


# ----------------------------------------------------------------------
# two-point connection and closed-geodesic polishing
# ----------------------------------------------------------------------

def connect(metric, p, q, hint, length_cap=50.0):
    """Geodesic from p to q found by shooting: root-find on the signed
    lateral miss at closest approach over the hint bracket (alpha_lo,
    alpha_hi)."""
    tp, thp = (p.t, p.theta) if isinstance(p, SurfacePoint) else p
    tq, thq = (q.t, q.theta) if isinstance(q, SurfacePoint) else q
    dth_q = normalize_alpha(thq - thp)
    r_q = float(metric.profile.r_of(tq)[0])

    def closest(alpha):
        path, _ = shoot(metric, (tp, thp), alpha, length_cap,
                        check_residual=False)
        dth = path.theta - thp
        # chart distance to q, theta scaled by local radius
        dx = path.t - tq
        dy = (dth - dth_q) * r_q
        d2 = dx * dx + dy * dy
        i = int(np.argmin(d2))
        s_star = path.s[i]
        # refine within neighboring samples
        lo = path.s[max(i - 1, 0)]
        hi = path.s[min(i + 1, len(path.s) - 1)]
        for _ in range(40):
            s1 = lo + (hi - lo) / 3
            s2 = hi - (hi - lo) / 3
            def dist(sv):
                tt, _ = path.at(sv)
                th = path._spl_th(sv)
                return np.hypot(tt - tq, (th - thp - dth_q) * r_q)
            if dist(s1) < dist(s2):
                hi = s2
            else:
                lo = s1
        s_star = 0.5 * (lo + hi)
        tt = float(path._spl_t(s_star))
        th = float(path._spl_th(s_star))
        al = float(path._spl_a(s_star))
        # signed lateral miss: cross product of tangent with offset to q
        ex, ey = np.cos(al), np.sin(al)
        mx, my = tq - tt, (thp + dth_q - th) * r_q
        miss = ex * my - ey * mx
        return miss, s_star, path

    a_lo, a_hi = hint
    m_lo = closest(a_lo)[0]
    m_hi = closest(a_hi)[0]
    if m_lo * m_hi > 0:
        raise NoConvergence("hint bracket does not straddle the target")
    alpha = brentq(lambda a: closest(a)[0], a_lo, a_hi, xtol=1e-13)
    miss, s_star, _ = closest(alpha)
    path, _ = shoot(metric, (tp, thp), alpha, s_star)
    et, eth = path.t[-1], path.theta[-1]
    err = np.hypot(et - tq, (eth - thp - dth_q) * r_q)
    if err > 1e-7:
        raise NoConvergence(f"endpoint misses target by {err:.2e}")
    return path


def close_up(metric, t0, theta0, alpha0, L0, winding=None, tol=1e-10,
             max_iter=40):
    """Newton-polish (t0, alpha0, L) so the geodesic closes up smoothly at
    fixed start theta.  winding: target total theta advance in turns
    (default: nearest to the initial guess's advance).

    For geodesics with fast-growing Jacobi fields the closure defect cannot
    be evaluated below roundoff times the growth factor; callers facing
    that raise `tol`, and the final re-shot gap check scales with it.

    Returns a closed GeodesicPath.
    """
    def F(x):
        t_s, a_s, L = x
        path, _ = shoot(metric, (t_s, theta0), a_s, L,
                        check_residual=False, ds=max(L / 2000, 5e-4))
        dth_tot = path.theta[-1] - theta0
        return path, np.array([path.t[-1] - t_s,
                               dth_tot - 2.0 * np.pi * W,
                               normalize_alpha(path.alpha[-1] - a_s)])

    x = np.array([t0, alpha0, L0], dtype=float)
    path0, _ = shoot(metric, (t0, theta0), alpha0, L0, check_residual=False)
    W = winding if winding is not None else int(round(path0.winding))
    scale = np.array([1e-7, 1e-7, 1e-7])
    for _ in range(max_iter):
        path, f = F(x)
        if np.max(np.abs(f)) < tol:
            break
        Jm = np.empty((3, 3))
        for j in range(3):
            xp = x.copy()
            xp[j] += scale[j]
            _, fp = F(xp)
            Jm[:, j] = (fp - f) / scale[j]
        try:
            dx = np.linalg.solve(Jm, -f)
        except np.linalg.LinAlgError as exc:
            raise ConjugateDegeneracy("singular shooting Jacobian") from exc
        # damped update
        step = 1.0
        for _ in range(8):
            _, f_new = F(x + step * dx)
            if np.max(np.abs(f_new)) < np.max(np.abs(f)):
                break
            step *= 0.5
        x = x + step * dx
    else:
        raise NoConvergence("closed-geodesic Newton did not converge")
    t_s, a_s, L = x
    path, _ = shoot(metric, (t_s, theta0), a_s, L)
    gap = max(abs(path.t[-1] - t_s),
              abs(normalize_alpha(path.alpha[-1] - a_s)))
    if gap > max(1e-8, 100.0 * tol):
        raise NoConvergence(f"closure gap {gap:.2e}")
    path.closed = True
    return path

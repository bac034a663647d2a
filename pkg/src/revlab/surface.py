"""Surface metrics: profile-based revolution metrics plus radial conformal
perturbations ("bumps" and "nose waists").

The metric is  e^{2u} (dt^2 + r(t)^2 dtheta^2)  where u is a sum of
compactly supported functions of base-metric geodesic distance to the
perturbation centers.  Distances are evaluated through cached geodesic
polar coordinates: radial geodesics shot from each center with the Jacobi
circumference factor integrated along the rays, inverted by a vectorized
Newton iteration.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy.interpolate import RectBivariateSpline

from .errors import (
    GeometryInfeasible,
    OutOfChart,
    PoleProximity,
    SupportOverlap,
    WaistNotStable,
)
from .profile import ProfileCurve, SnowmanSpec, snowman_profile

__all__ = [
    "RadialPerturbation",
    "SurfacePoint",
    "TangentDirection",
    "SurfaceMetric",
    "build_snowman",
    "add_perturbation",
    "place_equator_bumps",
]

POLE_MARGIN = 1e-3


# ----------------------------------------------------------------------
# points and directions
# ----------------------------------------------------------------------

def normalize_theta(theta):
    return np.mod(theta, 2.0 * np.pi)


def normalize_alpha(alpha):
    """Wrap an angle to (-pi, pi]."""
    a = np.mod(np.asarray(alpha, dtype=float) + np.pi, 2.0 * np.pi) - np.pi
    return np.where(a == -np.pi, np.pi, a)


@dataclass(frozen=True)
class SurfacePoint:
    t: float
    theta: float

    def __post_init__(self):
        object.__setattr__(self, "theta", float(normalize_theta(self.theta)))


@dataclass(frozen=True)
class TangentDirection:
    """Direction angle alpha measured from the meridian (+t direction)."""
    alpha: float

    def __post_init__(self):
        object.__setattr__(self, "alpha", float(normalize_alpha(self.alpha)))


# ----------------------------------------------------------------------
# radial conformal perturbations
# ----------------------------------------------------------------------

def bump_shape(x):
    """Monotone bump f(x) = exp(-x^2/(1/4 - x^2)), supported on [0, 1/2).

    Returns (f, f', f'') with respect to x, all zero for x >= 1/2.
    """
    x = np.asarray(x, dtype=float)
    f = np.zeros_like(x)
    fp = np.zeros_like(x)
    fpp = np.zeros_like(x)
    m = np.abs(x) < 0.5 - 1e-12
    xi = x[m]
    den = 0.25 - xi * xi
    q = xi * xi / den
    qp = 0.5 * xi / den ** 2
    qpp = 0.5 * (0.25 + 3.0 * xi * xi) / den ** 3
    fm = np.exp(-q)
    f[m] = fm
    fp[m] = -qp * fm
    fpp[m] = (qp * qp - qpp) * fm
    return f, fp, fpp


def annular_well_shape(x, xc=0.30, xw=0.18):
    """Negative annular well of depth 1 centered at xc, supported in
    [xc - xw, xc + xw] (subset of (0, 1/2) for the defaults)."""
    x = np.asarray(x, dtype=float)
    w = np.zeros_like(x)
    wp = np.zeros_like(x)
    wpp = np.zeros_like(x)
    y = (x - xc) / xw
    m = np.abs(y) < 1.0 - 1e-12
    ym = y[m]
    one = 1.0 - ym * ym
    p = 1.0 / one
    pp = 2.0 * ym / one ** 2
    ppp = (2.0 + 6.0 * ym * ym) / one ** 3
    B = np.exp(1.0 - p)
    w[m] = -B
    wp[m] = pp * B / xw
    wpp[m] = -(pp * pp - ppp) * B / xw ** 2
    return w, wp, wpp


@dataclass(frozen=True)
class RadialPerturbation:
    """Radial conformal perturbation: conformal factor 1 + a * shape(d/rho)
    as a function of base-metric distance d to the center.

    amplitude None means the reference schedule a = exp(-1/rho).
    """
    center: tuple          # (t0, theta0)
    rho: float
    amplitude: float | None = None
    kind: str = "bump"     # "bump" | "nose-waist"
    well_center: float = 0.30
    well_width: float = 0.18

    @property
    def a(self):
        if self.amplitude is None:
            return float(np.exp(-1.0 / self.rho))
        return float(self.amplitude)

    @property
    def support_radius(self):
        return 0.5 * self.rho

    def shape(self, x):
        if self.kind == "bump":
            return bump_shape(x)
        return annular_well_shape(x, self.well_center, self.well_width)

    def exponent(self, d):
        """u(d), u'(d), u''(d) for the conformal exponent u = log(1+a*shape)/2."""
        d = np.asarray(d, dtype=float)
        x = d / self.rho
        f, fp, fpp = self.shape(x)
        F = self.a * f
        Fp = self.a * fp / self.rho
        Fpp = self.a * fpp / self.rho ** 2
        omega2 = 1.0 + F
        if np.any(omega2 <= 0):
            raise GeometryInfeasible("conformal factor is not positive; "
                                     "perturbation amplitude too deep")
        u = 0.5 * np.log1p(F)
        up = Fp / (2.0 * omega2)
        upp = (Fpp * omega2 - Fp * Fp) / (2.0 * omega2 ** 2)
        return u, up, upp


# ----------------------------------------------------------------------
# geodesic polar chart around a perturbation center
# ----------------------------------------------------------------------

class PolarChart:
    """Base-metric geodesic polar coordinates (d, psi) around a center.

    Built once by shooting radial geodesics with the Jacobi circumference
    factor J (J'' = -K0 J, J(0)=0, J'(0)=1); forward tables are splined
    over (d, psi) and inverted by Newton iteration with a flat-chart guess.
    """

    def __init__(self, profile: ProfileCurve, center, extent,
                 n_r=96, n_psi=192, substeps=6):
        self.t0, self.theta0 = float(center[0]), float(center[1])
        self.extent = float(extent)
        r0 = float(profile.r_of(self.t0)[0])
        if r0 <= 10 * POLE_MARGIN:
            raise PoleProximity("perturbation center too close to a pole")
        self.r0 = r0

        psi = np.linspace(0.0, 2.0 * np.pi, n_psi, endpoint=False)
        d_nodes = np.linspace(0.0, self.extent, n_r)
        h = d_nodes[1] / substeps

        # state per ray: t, dtheta, alpha, J, Jp
        y = np.stack([np.full(n_psi, self.t0), np.zeros(n_psi),
                      psi.copy(), np.zeros(n_psi), np.ones(n_psi)])
        tab = np.empty((5, n_r, n_psi))
        tab[:, 0] = y

        def rhs(y):
            ev = profile.eval(y[0])
            r, rt, K = ev["r"], ev["rt"], ev["K"]
            sa, ca = np.sin(y[2]), np.cos(y[2])
            return np.stack([ca, sa / r, -(rt / r) * sa, y[4], -K * y[3]])

        for i in range(1, n_r):
            for _ in range(substeps):
                k1 = rhs(y)
                k2 = rhs(y + 0.5 * h * k1)
                k3 = rhs(y + 0.5 * h * k2)
                k4 = rhs(y + h * k3)
                y = y + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
            tab[:, i] = y
        if np.any(tab[3, 1:] <= 0):
            raise GeometryInfeasible("conjugate point inside polar chart; "
                                     "perturbation radius too large")

        # store the ray-angle deviation alpha - psi: unlike alpha itself it
        # is periodic in psi (no 2 pi jump at the wrap), so the padded
        # spline below stays smooth; psi is added back on evaluation
        tab[2] -= psi[None, :]

        # periodic padding in psi for smooth spline interpolation; the
        # tables are analytic in psi, so a quintic spline is effectively
        # exact and keeps second-difference oracles clean
        pad = 8
        psi_p = np.concatenate([psi[-pad:] - 2 * np.pi, psi,
                                psi[:pad] + 2 * np.pi])
        self._psi_lo, self._psi_hi = psi_p[0], psi_p[-1]

        def padded(row):
            return np.concatenate([row[:, -pad:], row, row[:, :pad]], axis=1)

        self._S = {}
        for name, row in zip(("t", "dth", "alpha", "J", "Jp"), tab):
            self._S[name] = RectBivariateSpline(d_nodes, psi_p, padded(row),
                                                kx=5, ky=5)

    def _wrap_psi(self, psi):
        return np.mod(psi, 2.0 * np.pi)

    def invert(self, t, theta):
        """Map surface points to (d, psi, alpha_ray, J, Jp).

        Points beyond the chart extent get d = +inf (and NaN chart data);
        callers treat them as unperturbed.
        """
        t = np.asarray(t, dtype=float)
        dth = normalize_alpha(np.asarray(theta, dtype=float) - self.theta0)
        x = t - self.t0
        y = self.r0 * dth
        d = np.hypot(x, y)
        psi = self._wrap_psi(np.arctan2(y, x))
        out = np.full(t.shape, np.inf)
        nan = np.full(t.shape, np.nan)
        res = {"d": out.copy(), "psi": nan.copy(), "alpha": nan.copy(),
               "J": nan.copy(), "Jp": nan.copy()}
        active = d < 0.92 * self.extent
        if not np.any(active):
            return res
        da = np.clip(d[active], 1e-9, 0.95 * self.extent)
        pa = psi[active]
        ta, dtha = t[active], dth[active]
        St, Sd = self._S["t"], self._S["dth"]
        for _ in range(25):
            F1 = St.ev(da, pa) - ta
            F2 = Sd.ev(da, pa) - dtha
            J11 = St.ev(da, pa, dx=1)
            J12 = St.ev(da, pa, dy=1)
            J21 = Sd.ev(da, pa, dx=1)
            J22 = Sd.ev(da, pa, dy=1)
            det = J11 * J22 - J12 * J21
            det = np.where(np.abs(det) < 1e-300, 1e-300, det)
            dd = (F1 * J22 - F2 * J12) / det
            dp = (F2 * J11 - F1 * J21) / det
            # damp near the center where the chart degenerates
            step = np.hypot(dd, dp * da)
            lim = 0.25 * self.extent
            with np.errstate(divide="ignore", invalid="ignore"):
                scale = np.where(step > lim, lim / np.maximum(step, 1e-300),
                                 1.0)
            da = np.clip(da - scale * dd, 1e-9, 0.98 * self.extent)
            pa = pa - scale * dp
            if np.max(np.abs(F1)) < 1e-13 and np.max(np.abs(F2) * self.r0) < 1e-13:
                break
        err = np.hypot(St.ev(da, pa) - ta, (Sd.ev(da, pa) - dtha) * self.r0)
        if np.any(err > 1e-8):
            raise OutOfChart("polar chart inversion did not converge")
        res["d"][active] = da
        res["psi"][active] = self._wrap_psi(pa)
        res["alpha"][active] = pa + self._S["alpha"].ev(da, pa)
        res["J"][active] = self._S["J"].ev(da, pa)
        res["Jp"][active] = self._S["Jp"].ev(da, pa)
        return res

    def forward(self, d, psi):
        """Map chart coordinates to surface points (t, theta, alpha_ray)."""
        d = np.asarray(d, dtype=float)
        psi = self._wrap_psi(np.asarray(psi, dtype=float))
        t = self._S["t"].ev(d, psi)
        theta = normalize_theta(self.theta0 + self._S["dth"].ev(d, psi))
        alpha = psi + self._S["alpha"].ev(d, psi)
        return t, theta, alpha

    def circumference(self, d, psi=None):
        if psi is None:
            psi = np.zeros_like(np.asarray(d, dtype=float))
        return self._S["J"].ev(d, psi), self._S["Jp"].ev(d, psi)

    def distance(self, t, theta):
        return self.invert(t, theta)["d"]


# ----------------------------------------------------------------------
# the metric
# ----------------------------------------------------------------------

class SurfaceMetric:
    """Immutable revolution metric with radial conformal perturbations.

    All evaluation is vectorized and pure; polar charts are built eagerly
    at construction.
    """

    CHART_EXTENT_FACTOR = 1.05  # chart radius = factor * rho

    def __init__(self, profile: ProfileCurve, perturbations=(), _charts=None,
                 nose_info=None):
        self.profile = profile
        self.perturbations = tuple(perturbations)
        self.nose_info = dict(nose_info or {})
        if _charts is not None:
            self.charts = list(_charts)
        else:
            self.charts = [self._build_chart(p) for p in self.perturbations]
        # Dense spline cache for the hot path (ODE right-hand sides).
        # r' is the exact derivative of the splined r, which keeps the
        # Clairaut invariant exactly conserved by the integrated system.
        from scipy.interpolate import make_interp_spline
        grid = np.linspace(0.0, profile.total_length, 8193)
        ev = profile.eval(grid)
        self._fast_r = make_interp_spline(grid, ev["r"], k=5)
        self._fast_rt = self._fast_r.derivative()
        self._fast_K = make_interp_spline(grid, ev["K"], k=5)

    def _build_chart(self, pert):
        return PolarChart(self.profile, pert.center,
                          self.CHART_EXTENT_FACTOR * pert.rho)

    # -- structure -----------------------------------------------------

    @property
    def total_length(self):
        return self.profile.total_length

    @property
    def landmarks(self):
        return self.profile.landmarks

    def equator(self):
        t = self.landmarks["equator"]
        return t, float(self.profile.r_of(t)[0])

    def neck(self, which="upper"):
        t = self.landmarks[f"{which}_neck_waist"]
        return t, float(self.profile.r_of(t)[0])

    # -- evaluation ------------------------------------------------------

    def fields(self, t, theta, second=False):
        """Metric data at points: base r, dr/dt, base curvature K0, the
        conformal exponent u with first derivatives (u_t, u_theta), and the
        perturbed Gaussian curvature K (requires second=True)."""
        t = np.atleast_1d(np.asarray(t, dtype=float))
        theta = np.broadcast_to(np.asarray(theta, dtype=float), t.shape)
        tc = np.clip(t, 0.0, self.profile.total_length)
        r = self._fast_r(tc)
        rt = self._fast_rt(tc)
        K0 = self._fast_K(tc)
        u = np.zeros_like(t)
        ut = np.zeros_like(t)
        uth = np.zeros_like(t)
        lap = np.zeros_like(t) if second else None
        for pert, chart in zip(self.perturbations, self.charts):
            # cheap prefilter: flat over-estimate of chart membership
            dth = normalize_alpha(theta - pert.center[1])
            near = (np.abs(t - pert.center[0]) < chart.extent) \
                & (np.abs(dth) * chart.r0 < 1.3 * chart.extent)
            if not np.any(near):
                continue
            inv = chart.invert(t[near], theta[near])
            d = inv["d"]
            inside = d < pert.support_radius
            if not np.any(inside):
                continue
            uu, up, upp = pert.exponent(np.where(np.isfinite(d), d, 1e9))
            idx = np.flatnonzero(near)
            u[idx] += uu
            # gradient of distance is the unit radial direction
            ca, sa = np.cos(inv["alpha"]), np.sin(inv["alpha"])
            ut[idx] += np.where(inside, up * ca, 0.0)
            uth[idx] += np.where(inside, up * sa * r[idx], 0.0)
            if second:
                JpJ = np.where(d > 1e-4, inv["Jp"] / np.maximum(inv["J"], 1e-300),
                               0.0)
                l = np.where(d > 1e-4, upp + JpJ * up, 2.0 * upp)
                lap[idx] += np.where(inside, l, 0.0)
        out = {"r": r, "rt": rt, "K0": K0, "u": u, "ut": ut, "uth": uth,
               "conf": np.exp(2.0 * u)}
        if second:
            out["K"] = (K0 - lap) / out["conf"]
        return out

    def metric_coeffs(self, t, theta):
        """(g_tt, g_theta_theta) of the perturbed metric."""
        f = self.fields(t, theta)
        return f["conf"], f["conf"] * f["r"] ** 2

    def _check_margin(self, t):
        t = np.atleast_1d(np.asarray(t, dtype=float))
        if self.profile.has_poles and (np.any(t < POLE_MARGIN) or
                                       np.any(t > self.total_length - POLE_MARGIN)):
            raise PoleProximity("query within the pole margin")

    def curvature_at(self, p):
        """Gaussian curvature of the perturbed metric at p = (t, theta)."""
        t, theta = (p.t, p.theta) if isinstance(p, SurfacePoint) else p
        self._check_margin(t)
        return float(self.fields(t, theta, second=True)["K"][0])

    def conformal_exponent(self, t, theta):
        return self.fields(t, theta)["u"]

    def is_unperturbed(self, t, theta):
        return self.fields(t, theta)["u"] == 0.0

    # -- construction ----------------------------------------------------

    def with_perturbation(self, pert):
        return add_perturbation(self, pert)


def build_snowman(spec: SnowmanSpec | None = None) -> SurfaceMetric:
    """Snowman metric: connected sum of three round spheres (plus the polar
    collar barriers used by the flow scenarios)."""
    return SurfaceMetric(snowman_profile(spec or SnowmanSpec()))


# ----------------------------------------------------------------------
# adding perturbations
# ----------------------------------------------------------------------

def _center_distance(metric, chart_new, pert_new, pert_old, chart_old):
    d1 = float(chart_new.distance(np.array([pert_old.center[0]]),
                                  np.array([pert_old.center[1]]))[0])
    if np.isfinite(d1):
        return d1
    d2 = float(chart_old.distance(np.array([pert_new.center[0]]),
                                  np.array([pert_new.center[1]]))[0])
    if np.isfinite(d2):
        return d2
    return np.inf  # beyond both chart extents: farther than either support


def add_perturbation(metric: SurfaceMetric, pert: RadialPerturbation
                     ) -> SurfaceMetric:
    """Return a new metric with the perturbation added.

    Checks support disjointness from existing perturbations and pole
    margins; for nose-waist perturbations locates the waist circle and
    certifies its strict stability (searching the amplitude if not given).
    """
    prof = metric.profile
    if prof.has_poles:
        t0 = pert.center[0]
        if min(t0, prof.total_length - t0) < pert.support_radius + 50 * POLE_MARGIN:
            raise SupportOverlap("perturbation support touches a pole margin")
    chart = metric._build_chart(pert)
    for old, old_chart in zip(metric.perturbations, metric.charts):
        d = _center_distance(metric, chart, pert, old, old_chart)
        if d <= pert.support_radius + old.support_radius:
            raise SupportOverlap("perturbation supports intersect")
    nose_info = dict(metric.nose_info)
    if pert.kind == "nose-waist":
        pert, info = _certify_nose(metric, pert, chart)
        nose_info[len(metric.perturbations)] = info
    new = SurfaceMetric(prof, metric.perturbations + (pert,),
                        _charts=metric.charts + [chart],
                        nose_info=nose_info)
    return new


def _certify_nose(metric, pert, chart):
    """Find the waist circle radius and an amplitude making it strictly
    stable; certify via the periodic Jacobi spectrum (constant potential
    along the waist by rotational symmetry of the perturbation)."""
    from .spectrum import PotentialTrace, closed_index  # late import: no cycle

    d = np.linspace(1e-4, pert.support_radius * 0.999, 2000)
    J, Jp = chart.circumference(d)

    def waist_of(a):
        p = replace(pert, amplitude=a)
        u, up, upp = p.exponent(d)
        # circumference of the circle at radius d is 2*pi*e^u*J;
        # waist = strict local minimum of R = e^u * J
        dR = np.exp(u) * (up * J + Jp)
        sign = np.sign(dR)
        mins = np.flatnonzero((sign[:-1] < 0) & (sign[1:] > 0))
        if len(mins) == 0:
            return None
        i = mins[0]
        # refine by bisection on dR
        lo, hi = d[i], d[i + 1]
        for _ in range(60):
            mid = 0.5 * (lo + hi)
            um, upm, _ = p.exponent(np.array([mid]))
            Jm, Jpm = chart.circumference(np.array([mid]))
            val = upm[0] * Jm[0] + Jpm[0]
            if val < 0:
                lo = mid
            else:
                hi = mid
        dw = 0.5 * (lo + hi)
        uw, upw, uppw = (v[0] for v in p.exponent(np.array([dw])))
        Jw, Jpw = (v[0] for v in chart.circumference(np.array([dw])))
        # Gaussian curvature of the perturbed metric on the waist circle
        tw, thw, aw = chart.forward(np.array([dw]), np.array([0.0]))
        K0w = float(metric.profile.K_of(tw)[0])
        Khat = (K0w - (uppw + (Jpw / Jw) * upw)) / np.exp(2 * uw)
        length = 2.0 * np.pi * Jw * np.exp(uw)
        return {"waist_d": dw, "K_waist": Khat, "length": float(length),
                "amplitude": a}

    if pert.amplitude is not None:
        schedule = [pert.amplitude]
    else:
        schedule = [0.3, 0.5, 0.7, 0.85, 0.92, 0.97]
    for a in schedule:
        info = waist_of(a)
        if info is None or info["K_waist"] >= 0:
            continue
        n = 512
        trace = PotentialTrace(
            K=np.full(n, info["K_waist"]), length=info["length"],
            closed=True)
        spec = closed_index(trace)
        if spec.index == 0 and spec.nullity == 0 and spec.eigenvalues[0] > 0:
            info["lambda1"] = float(spec.eigenvalues[0])
            return replace(pert, amplitude=a), info
    raise WaistNotStable("no amplitude in the schedule yields a strictly "
                         "stable waist circle")


def waist_circle(metric: SurfaceMetric, pert_index: int, n=512):
    """Sample the certified nose-waist geodesic circle: arrays (s, t, theta,
    alpha) with s the perturbed-metric arclength."""
    info = metric.nose_info[pert_index]
    chart = metric.charts[pert_index]
    psi = np.linspace(0.0, 2.0 * np.pi, n, endpoint=False)
    d = np.full(n, info["waist_d"])
    t, theta, a_ray = chart.forward(d, psi)
    alpha = normalize_alpha(a_ray + np.pi / 2.0)
    s = info["length"] * psi / (2.0 * np.pi)
    return {"s": s, "t": t, "theta": theta, "alpha": alpha,
            "length": info["length"], "K": info["K_waist"]}


# ----------------------------------------------------------------------
# equator bump placement
# ----------------------------------------------------------------------

def place_equator_bumps(metric: SurfaceMetric, k, rho0=0.05,
                        schedule="geometric", amplitude=None,
                        corridor=None) -> SurfaceMetric:
    """Place k disjoint bumps centered on the middle-sphere equator.

    schedule "geometric": rho_j = rho0 * 2^(-j); "equal": all rho0.
    Bumps are spread uniformly in theta; between adjacent supports a
    crossing corridor of width >= corridor (default one support radius)
    must remain, else Overcrowded.
    """
    from .errors import Overcrowded

    if k == 0:
        return metric
    t_eq, r_eq = metric.equator()
    radii = [rho0 * (2.0 ** -j) if schedule == "geometric" else rho0
             for j in range(k)]
    corridor = corridor if corridor is not None else 0.5 * rho0
    arc = 2.0 * np.pi * r_eq
    used = sum(r for r in radii) + k * corridor  # support diameters + gaps
    if used >= arc:
        raise Overcrowded("bump supports plus corridors exceed the equator")
    thetas = np.linspace(0.0, 2.0 * np.pi, k, endpoint=False)
    m = metric
    for theta_j, rho_j in zip(thetas, radii):
        m = add_perturbation(m, RadialPerturbation(
            center=(t_eq, float(theta_j)), rho=rho_j, amplitude=amplitude,
            kind="bump"))
    return m

"""Normal-coordinate tubes around closed geodesics.

Around a simple closed geodesic the metric can be written as
ds^2 + f^2(s, theta) dtheta^2, where theta is arclength along the geodesic,
s is signed normal distance, and f is the Jacobi coefficient transported
along the normal rays (f(0, .) = 1, f_s(0, .) = 0, f_ss = -K f).

For a strictly stable geodesic with first eigenfunction phi > 0 and
eigenvalue lam1 > 0, the function F(s, theta) = s^alpha phi^(-alpha) is
convex on a thin tube once alpha is large enough; its covariant Hessian has
closed-form components in these coordinates.  This module builds the
charts, evaluates the Hessian, certifies convex tubes by dense sampling,
and uses a certified tube to track the unique nearby closed geodesic of a
perturbed metric.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.interpolate import CubicSpline, RectBivariateSpline
from scipy.optimize import minimize

from .errors import (
    CertificationFailed,
    ChartEdge,
    EscapedTube,
    FocalOverlap,
    MultipleLimits,
    NotAGeodesic,
    NotStrictlyStable,
)
from .geodesics import close_up
from .spectrum import (
    closed_eigenpair,
    closed_index,
    eps_null_for,
    potential_along,
)

__all__ = [
    "FermiChart",
    "ConvexityProfile",
    "TubeCertificate",
    "PersistenceResult",
    "build_fermi_chart",
    "first_eigen",
    "gradient_F",
    "hessian_F",
    "validate_tube",
    "certify_convex_tube",
    "persist_geodesic",
    "dump_chart_csv",
    "write_certificate",
]

TWO_PI = 2.0 * np.pi
RESIDUAL_TOL = 1e-6

ALPHA_SCHEDULE = (2, 4, 8, 16, 32)
SHRINK_STEPS = 7          # s* = s_max * 2^-j, j = 0..6
FOCAL_FLOOR = 1e-2        # Jacobi coefficient below this => focal trouble


# ----------------------------------------------------------------------
# chart
# ----------------------------------------------------------------------

@dataclass
class FermiChart:
    """Grid chart of the tube metric ds^2 + f^2 dtheta^2 around a closed
    geodesic, plus the map back to surface coordinates."""
    gamma: object                 # reference closed GeodesicPath
    s_max: float
    s: np.ndarray                 # (n_s,) signed normal distances
    theta: np.ndarray             # (n_th,) arclength along gamma in [0, L)
    f: np.ndarray                 # (n_s, n_th) metric coefficient
    f_s: np.ndarray
    f_th: np.ndarray
    K: np.ndarray                 # Gaussian curvature at the grid nodes
    T: np.ndarray                 # surface t at the grid nodes
    TH: np.ndarray                # surface theta (unwrapped) at the nodes
    period: float                 # length of gamma
    winding: int
    jacobi_defect: float = 0.0    # max |K f + f_ss| / (1 + |K f|), FD in s
    spread_defect: float = 0.0    # max |f - |d(map)/dtheta|| / (1 + f)

    def __post_init__(self):
        pad = 4
        th_ext = np.concatenate([self.theta[-pad:] - self.period,
                                 self.theta,
                                 self.theta[:pad] + self.period])
        slope = TWO_PI * self.winding / self.period
        dev = self.TH - slope * self.theta[None, :]

        def spline(grid):
            g = np.concatenate([grid[:, -pad:], grid, grid[:, :pad]], axis=1)
            return RectBivariateSpline(self.s, th_ext, g, kx=3, ky=3)

        self._slope = slope
        self._S = {"f": spline(self.f), "f_s": spline(self.f_s),
                   "f_th": spline(self.f_th), "T": spline(self.T),
                   "dev": spline(dev)}

    def _wrap(self, theta):
        return np.mod(theta, self.period)

    def values(self, s, theta):
        s = np.asarray(s, dtype=float)
        w = self._wrap(np.asarray(theta, dtype=float))
        return {k: self._S[k].ev(s, w) for k in ("f", "f_s", "f_th")}

    def surface_point(self, s, theta):
        """Map chart coordinates to surface (t, theta), theta unwrapped
        consistently with the reference geodesic."""
        s = np.asarray(s, dtype=float)
        theta = np.asarray(theta, dtype=float)
        w = self._wrap(theta)
        t = self._S["T"].ev(s, w)
        th = self._S["dev"].ev(s, w) + self._slope * theta
        return t, th

    def jacobian(self, s, theta):
        """Partials of the chart-to-surface map: (t_s, t_th, th_s, th_th)."""
        s = np.asarray(s, dtype=float)
        w = self._wrap(np.asarray(theta, dtype=float))
        t_s = self._S["T"].ev(s, w, dx=1)
        t_th = self._S["T"].ev(s, w, dy=1)
        th_s = self._S["dev"].ev(s, w, dx=1)
        th_th = self._S["dev"].ev(s, w, dy=1) + self._slope
        return t_s, t_th, th_s, th_th


def _ray_rhs(metric, y):
    """RHS of the normal-ray system: unit-speed geodesic (t, theta, a)
    plus the Jacobi pair (f, f') with f'' = -K f."""
    t, th, a, f, fp = y
    fl = metric.fields(t, th, second=True)
    eu = np.exp(-fl["u"])
    sa, ca = np.sin(a), np.cos(a)
    r, rt = fl["r"], fl["rt"]
    return np.stack([
        eu * ca,
        eu * sa / r,
        eu * (-(rt / r + fl["ut"]) * sa + fl["uth"] * ca / r),
        fp,
        -fl["K"] * f,
    ])


def build_fermi_chart(metric, gamma, s_max, n_s=81, n_theta=128,
                      substeps=6) -> FermiChart:
    """Shoot normal geodesics from arclength samples of a closed geodesic
    and transport the Jacobi coefficient to populate the tube chart."""
    if not getattr(gamma, "closed", False):
        raise NotAGeodesic("chart reference must be a closed geodesic")
    if gamma.residual > RESIDUAL_TOL:
        raise NotAGeodesic(f"residual {gamma.residual:.2e} above "
                           f"{RESIDUAL_TOL:.0e}")
    if n_s % 2 == 0:
        n_s += 1
    L = float(gamma.length)
    theta = np.arange(n_theta) * (L / n_theta)
    t0 = gamma._spl_t(theta)
    th0 = gamma._spl_th(theta)
    a0 = gamma._spl_a(theta)

    half = (n_s - 1) // 2
    s = np.linspace(-s_max, s_max, n_s)
    shape = (n_s, n_theta)
    T = np.empty(shape)
    TH = np.empty(shape)
    F = np.empty(shape)
    FS = np.empty(shape)
    h = (s_max / half) / substeps

    for sign, normal in ((1, a0 + np.pi / 2.0), (-1, a0 - np.pi / 2.0)):
        y = np.stack([t0, th0, normal,
                      np.ones(n_theta), np.zeros(n_theta)])
        T[half], TH[half] = t0, th0
        F[half], FS[half] = 1.0, 0.0
        for i in range(1, half + 1):
            with np.errstate(divide="ignore", invalid="ignore"):
                for _ in range(substeps):
                    k1 = _ray_rhs(metric, y)
                    k2 = _ray_rhs(metric, y + 0.5 * h * k1)
                    k3 = _ray_rhs(metric, y + 0.5 * h * k2)
                    k4 = _ray_rhs(metric, y + h * k3)
                    y = y + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
            row = half + sign * i
            if not np.all(np.isfinite(y)) \
                    or np.min(y[3]) <= FOCAL_FLOOR:
                fin = y[3][np.isfinite(y[3])]
                low = float(np.min(fin)) if fin.size else float("nan")
                raise FocalOverlap(
                    f"Jacobi coefficient dropped to {low:.3f} at "
                    f"|s| = {abs(s[row]):.3f}: normal rays (nearly) "
                    f"cross inside the half-width")
            T[row], TH[row] = y[0], y[1]
            F[row] = y[3]
            FS[row] = sign * y[4]   # f_s is odd under the ray reversal

    fl = metric.fields(T.ravel(), TH.ravel(), second=True)
    K = fl["K"].reshape(shape)

    # spectral theta-derivative of f (rows are periodic in theta)
    freq = np.fft.rfftfreq(n_theta, d=L / n_theta) * TWO_PI
    FTH = np.fft.irfft(1j * freq[None, :] * np.fft.rfft(F, axis=1),
                       n=n_theta, axis=1)

    # consistency of curvature and Jacobi transport: K f = -f_ss,
    # fourth-order five-point stencil on the uniform s grid, measured
    # relative to the local curvature scale
    hs = s[1] - s[0]
    fss = (-F[4:] + 16 * F[3:-1] - 30 * F[2:-2]
           + 16 * F[1:-3] - F[:-4]) / (12.0 * hs ** 2)
    kf = K[2:-2] * F[2:-2]
    defect = float(np.max(np.abs(kf + fss) / (1.0 + np.abs(kf))))

    # independent route to f: the metric speed of the chart map in the
    # theta direction must reproduce the transported Jacobi coefficient
    winding = int(round(gamma.winding))
    slope = TWO_PI * winding / L
    dev = TH - slope * theta[None, :]
    t_th = np.fft.irfft(1j * freq[None, :] * np.fft.rfft(T, axis=1),
                        n=n_theta, axis=1)
    th_th = np.fft.irfft(1j * freq[None, :] * np.fft.rfft(dev, axis=1),
                         n=n_theta, axis=1) + slope
    conf = fl["conf"].reshape(shape)
    r = fl["r"].reshape(shape)
    f_geom = np.sqrt(conf * (t_th ** 2 + r ** 2 * th_th ** 2))
    spread = float(np.max(np.abs(F - f_geom) / (1.0 + np.abs(F))))

    chart = FermiChart(gamma=gamma, s_max=float(s_max), s=s, theta=theta,
                       f=F, f_s=FS, f_th=FTH, K=K, T=T, TH=TH, period=L,
                       winding=winding, jacobi_defect=defect,
                       spread_defect=spread)
    if np.max(np.abs(F[half] - 1.0)) > 1e-8 or np.max(np.abs(FS[half])) > 1e-8:
        raise NotAGeodesic("normalization f(0,.) = 1, f_s(0,.) = 0 violated")
    return chart


# ----------------------------------------------------------------------
# first eigenpair of the stability operator
# ----------------------------------------------------------------------

@dataclass
class ConvexityProfile:
    """Positive first eigenfunction of -d^2/dtheta^2 - K along the
    geodesic, with its eigenvalue and spectral derivatives."""
    alpha: float
    theta: np.ndarray
    phi: np.ndarray
    phi_t: np.ndarray
    phi_tt: np.ndarray
    lam1: float
    period: float

    def __post_init__(self):
        if np.min(self.phi) <= 0.0:
            raise NotStrictlyStable("eigenfunction is not strictly positive")
        if self.lam1 <= 0.0:
            raise NotStrictlyStable(f"lambda_1 = {self.lam1:.3e} <= 0")
        grid = np.append(self.theta, self.period)
        self._spl = {
            "phi": CubicSpline(grid, np.append(self.phi, self.phi[0]),
                               bc_type="periodic"),
            "phi_t": CubicSpline(grid, np.append(self.phi_t, self.phi_t[0]),
                                 bc_type="periodic"),
            "phi_tt": CubicSpline(grid, np.append(self.phi_tt,
                                                  self.phi_tt[0]),
                                  bc_type="periodic"),
        }

    def at(self, theta):
        w = np.mod(np.asarray(theta, dtype=float), self.period)
        return (self._spl["phi"](w), self._spl["phi_t"](w),
                self._spl["phi_tt"](w))

    def with_alpha(self, alpha):
        return replace(self, alpha=float(alpha))


def first_eigen(trace, alpha=2.0) -> ConvexityProfile:
    """Ground eigenpair of the periodic stability operator, packaged for
    the convexity function; requires strict stability."""
    spec = closed_index(trace)
    if spec.index != 0 or spec.nullity != 0:
        raise NotStrictlyStable(
            f"index {spec.index}, nullity {spec.nullity}: not strictly "
            f"stable")
    lam1, vec = closed_eigenpair(trace, 0)
    if lam1 <= eps_null_for(trace.n):
        raise NotStrictlyStable(f"lambda_1 = {lam1:.3e} within the "
                                f"nullity margin")
    phi = vec / np.max(vec)       # normalize max phi = 1
    n = trace.n
    L = trace.length
    freq = np.fft.rfftfreq(n, d=L / n) * TWO_PI
    ph = np.fft.rfft(phi)
    phi_t = np.fft.irfft(1j * freq * ph, n=n)
    phi_tt = np.fft.irfft(-(freq ** 2) * ph, n=n)
    theta = np.arange(n) * (L / n)
    return ConvexityProfile(alpha=float(alpha), theta=theta, phi=phi,
                            phi_t=phi_t, phi_tt=phi_tt, lam1=float(lam1),
                            period=L)


# ----------------------------------------------------------------------
# the convexity function F = s^alpha phi^(-alpha)
# ----------------------------------------------------------------------

def _hessian_components(chart, prof, s, theta):
    """Covariant Hessian of F in the coordinate basis (d/ds, d/dtheta),
    vectorized; valid for signed s when alpha is an even integer."""
    v = chart.values(s, theta)
    f, fs, fth = v["f"], v["f_s"], v["f_th"]
    phi, pt, ptt = prof.at(theta)
    a = prof.alpha
    s = np.asarray(s, dtype=float)
    hss = a * (a - 1.0) * s ** (a - 2.0) / phi ** a
    hst = a * (pt / phi ** (a + 1.0)) * s ** (a - 1.0) * (s * fs / f - a)
    htt = (a * s ** (a - 1.0) * f * fs / phi ** a
           - a * s ** a * ptt / phi ** (a + 1.0)
           + a * (a + 1.0) * s ** a * pt ** 2 / phi ** (a + 2.0)
           + a * s ** a * (pt / phi ** (a + 1.0)) * (fth / f))
    return hss, hst, htt


def hessian_F(chart: FermiChart, prof: ConvexityProfile, p):
    """Symmetric 2x2 covariant Hessian of F at p = (s, theta), 0 < s."""
    s, theta = p
    if not s > 0.0:
        raise ValueError("hessian_F requires s > 0")
    if s > chart.s_max:
        raise ChartEdge(f"s = {s:.4f} beyond half-width {chart.s_max:.4f}")
    hss, hst, htt = _hessian_components(chart, prof, s, theta)
    return np.array([[float(hss), float(hst)], [float(hst), float(htt)]])


def gradient_F(chart: FermiChart, prof: ConvexityProfile, p):
    """Gradient of F in the coordinate basis: (F_s, F_theta / f^2)."""
    s, theta = p
    if not s > 0.0:
        raise ValueError("gradient_F requires s > 0")
    if s > chart.s_max:
        raise ChartEdge(f"s = {s:.4f} beyond half-width {chart.s_max:.4f}")
    f = chart.values(s, theta)["f"]
    phi, pt, _ = prof.at(theta)
    a = prof.alpha
    return np.array([
        float(a * s ** (a - 1.0) / phi ** a),
        float(-a * s ** a * pt / (phi ** (a + 1.0) * f ** 2)),
    ])


# ----------------------------------------------------------------------
# convex-tube certification
# ----------------------------------------------------------------------

@dataclass
class TubeCertificate:
    alpha: float
    s_star: float
    n_s: int
    n_theta: int
    min_eig: float
    worst: tuple                  # (s, theta, min eigenvalue) of worst sample
    min_eig_table: np.ndarray = field(repr=False)
    chart: FermiChart = field(repr=False, default=None)
    profile: ConvexityProfile = field(repr=False, default=None)


def validate_tube(chart, prof, alpha, s_star, n=64):
    """Minimum Hessian eigenvalue of F over a dense (s, theta) sample of
    the tube 0 < |s| <= s_star; alpha must be an even integer so the
    closed-form components extend to signed s."""
    if int(alpha) != alpha or int(alpha) % 2:
        raise ValueError("tube validation needs an even integer alpha")
    p = prof.with_alpha(alpha)
    s_half = np.linspace(s_star / n, s_star, n)
    s_lin = np.concatenate([-s_half[::-1], s_half])
    th_lin = np.arange(n) * (chart.period / n)
    S, TH = np.meshgrid(s_lin, th_lin, indexing="ij")
    hss, hst, htt = _hessian_components(chart, p, S.ravel(), TH.ravel())
    half_tr = 0.5 * (hss + htt)
    disc = np.sqrt((0.5 * (hss - htt)) ** 2 + hst ** 2)
    mineig = (half_tr - disc).reshape(S.shape)
    k = int(np.argmin(mineig))
    i, j = np.unravel_index(k, mineig.shape)
    worst = (float(S[i, j]), float(TH[i, j]), float(mineig[i, j]))
    return float(mineig[i, j]), worst, mineig


def certify_convex_tube(metric, gamma, s_max=0.35, n=64, chart=None,
                        prof=None):
    """Search exponents (doubling) and half-widths (shrinking) until the
    Hessian of F is strictly positive definite on a dense tube sample.

    Returns (alpha*, s*, TubeCertificate).
    """
    if chart is None:
        for _ in range(4):
            try:
                chart = build_fermi_chart(metric, gamma, s_max)
                break
            except FocalOverlap:
                s_max *= 0.5
        else:
            chart = build_fermi_chart(metric, gamma, s_max)
    if prof is None:
        prof = first_eigen(potential_along(metric, gamma))

    best = None
    for alpha in ALPHA_SCHEDULE:
        for j in range(SHRINK_STEPS):
            s_star = chart.s_max * 2.0 ** (-j)
            mineig, worst, table = validate_tube(chart, prof, alpha, s_star,
                                                 n=n)
            if best is None or mineig > best[0]:
                best = (mineig, worst, alpha, s_star)
            if mineig > 0.0:
                cert = TubeCertificate(
                    alpha=float(alpha), s_star=float(s_star), n_s=2 * n,
                    n_theta=n, min_eig=mineig, worst=worst,
                    min_eig_table=table, chart=chart, profile=prof)
                return float(alpha), float(s_star), cert
    mineig, worst, alpha, s_star = best
    raise CertificationFailed(
        f"schedule exhausted; best attempt alpha={alpha}, s*={s_star:.4f} "
        f"has min eigenvalue {mineig:.3e} at s={worst[0]:.4f}, "
        f"theta={worst[1]:.4f}")


# ----------------------------------------------------------------------
# persistence of a strictly stable geodesic under metric perturbation
# ----------------------------------------------------------------------

@dataclass
class PersistenceResult:
    path: object                  # certified closed geodesic of the new metric
    s_graph: np.ndarray           # its normal-offset graph over theta
    theta: np.ndarray
    distance: float               # max |s|: Fermi distance to the reference
    limit_spread: float           # worst pairwise gap of the multi-start runs
    lam1: float                   # first eigenvalue of the new geodesic


def _graph_machinery(chart, metric_tilde, n):
    """Length of a normal-offset graph s(theta) in the perturbed metric,
    with its gradient; both vectorized over the n graph nodes."""
    L = chart.period
    h = L / n
    theta = np.arange(n) * h
    th_mid = theta + 0.5 * h

    def edges(a, b):
        s_mid = 0.5 * (a + b)
        dsdth = (b - a) / h
        t, th = chart.surface_point(s_mid, th_mid)
        t_s, t_th, th_s, th_th = chart.jacobian(s_mid, th_mid)
        vt = t_s * dsdth + t_th
        vth = th_s * dsdth + th_th
        fl = metric_tilde.fields(t, th)
        return np.sqrt(fl["conf"] * (vt ** 2 + fl["r"] ** 2 * vth ** 2)) * h

    def length(sv):
        return float(np.sum(edges(sv, np.roll(sv, -1))))

    def grad(sv, delta=1e-6):
        b = np.roll(sv, -1)
        dA = (edges(sv + delta, b) - edges(sv - delta, b)) / (2 * delta)
        dB = (edges(sv, b + delta) - edges(sv, b - delta)) / (2 * delta)
        return dA + np.roll(dB, 1)

    return theta, length, grad


def persist_geodesic(metric, metric_tilde, gamma, cert=None, n=192,
                     tol=1e-6):
    """Locate the unique closed geodesic of the perturbed metric inside a
    certified convex tube around a strictly stable geodesic.

    Shortens normal-offset graphs from several distinct tube
    initializations; the limits must coincide pairwise within `tol`
    (MultipleLimits otherwise), stay off the tube wall (EscapedTube), and
    the polished geodesic must again be strictly stable.
    """
    if cert is None:
        _, _, cert = certify_convex_tube(metric, gamma)
    chart, s_star = cert.chart, cert.s_star
    theta, length, grad = _graph_machinery(chart, metric_tilde, n)
    bound = s_star * (1.0 - 1e-9)
    starts = [np.zeros(n),
              np.full(n, 0.4 * s_star),
              np.full(n, -0.4 * s_star),
              0.3 * s_star * np.sin(TWO_PI * theta / chart.period)]
    limits = []
    for s0 in starts:
        res = minimize(length, s0, jac=grad, method="L-BFGS-B",
                       bounds=[(-bound, bound)] * n,
                       options={"maxiter": 3000, "ftol": 1e-16,
                                "gtol": 1e-12})
        limits.append(res.x)
        if np.max(np.abs(res.x)) >= s_star * (1.0 - 1e-6):
            raise EscapedTube(
                f"graph minimizer pinned to the tube wall |s| = "
                f"{np.max(np.abs(res.x)):.4f} (s* = {s_star:.4f})")
    spread = max(float(np.max(np.abs(a - b)))
                 for i, a in enumerate(limits) for b in limits[i + 1:])
    if spread > tol:
        raise MultipleLimits(
            f"multi-start limits differ by {spread:.2e} > {tol:.0e}")
    s_fin = limits[0]

    # polish the discrete limit into a residual-certified closed geodesic;
    # the Newton tolerance allows for Jacobi-field growth around a strictly
    # stable geodesic (roundoff in the start state amplifies exponentially
    # into the closure defect)
    t_c, th_c = chart.surface_point(s_fin[:1], theta[:1])
    dsdth = (s_fin[1] - s_fin[-1]) / (2.0 * chart.period / n)
    t_s, t_th, th_s, th_th = chart.jacobian(s_fin[:1], theta[:1])
    vt = float(t_s[0] * dsdth + t_th[0])
    vth = float(th_s[0] * dsdth + th_th[0])
    r0 = float(metric_tilde.fields(t_c, th_c)["r"][0])
    alpha0 = float(np.arctan2(r0 * vth, vt))
    growth = float(np.exp(chart.period
                          * np.sqrt(max(-np.min(chart.K), 0.0))))
    newton_tol = max(1e-10, 10.0 * 1e-13 * growth)
    path = close_up(metric_tilde, float(t_c[0]), float(th_c[0]), alpha0,
                    length(s_fin), winding=chart.winding, tol=newton_tol)
    if path.residual > RESIDUAL_TOL:
        raise NotAGeodesic(f"polished path residual {path.residual:.2e}")

    # the polished path must trace the in-tube graph, not a remote geodesic
    tg, thg = chart.surface_point(s_fin, theta)
    rbar = float(np.mean(metric_tilde.fields(tg, thg)["r"]))
    d2 = ((path.t[:, None] - tg[None, :]) ** 2
          + ((path.theta[:, None] - thg[None, :]) * rbar) ** 2)
    gap = float(np.max(np.sqrt(d2.min(axis=1))))
    if gap > max(0.2 * s_star, 5.0 * chart.period / n):
        raise EscapedTube(f"polished geodesic strays {gap:.2e} from the "
                          f"tube graph")

    trace = potential_along(metric_tilde, path)
    prof = first_eigen(trace)     # raises NotStrictlyStable if unstable
    return PersistenceResult(path=path, s_graph=s_fin, theta=theta,
                             distance=float(np.max(np.abs(s_fin))),
                             limit_spread=spread, lam1=prof.lam1)


# ----------------------------------------------------------------------
# artifacts
# ----------------------------------------------------------------------

def dump_chart_csv(chart: FermiChart, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["s", "theta", "f", "f_s", "f_theta"])
        for i, si in enumerate(chart.s):
            for j, tj in enumerate(chart.theta):
                w.writerow([f"{si:.12g}", f"{tj:.12g}",
                            f"{chart.f[i, j]:.12g}",
                            f"{chart.f_s[i, j]:.12g}",
                            f"{chart.f_th[i, j]:.12g}"])


def write_certificate(cert: TubeCertificate, path):
    with open(path, "w") as fh:
        fh.write("convex-tube certificate\n")
        fh.write(f"alpha = {cert.alpha}\n")
        fh.write(f"s_star = {cert.s_star:.12g}\n")
        fh.write(f"grid = {cert.n_s} x {cert.n_theta}\n")
        fh.write(f"min_hessian_eigenvalue = {cert.min_eig:.12g}\n")
        s, th, ev = cert.worst
        fh.write(f"worst_sample = s {s:.12g}, theta {th:.12g}, "
                 f"eig {ev:.12g}\n")
        fh.write("min-eigenvalue table (rows s, columns theta):\n")
        np.savetxt(fh, cert.min_eig_table, fmt="%.6e")

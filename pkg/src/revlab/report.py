"""Deterministic emission of run artifacts: CSV tables, SVG charts, and
JSON reports/failure manifests.

Conventions
-----------
* CSV: one ``key,value`` pair per line, floats serialized with ``%.12g``;
  the file opens with comment lines carrying the config hash and the
  artifact version, so identical (scene, seed) runs are byte-identical.
* SVG: the (theta, z) chart — theta horizontal (unwrapped where a curve
  winds), z = profile height vertical.  Background layers (equator,
  necks, barriers, bumps) are emitted as named ``<g>`` groups below the
  curve layers.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .errors import IoError, NotFound

SVG_W, SVG_H, SVG_PAD = 900.0, 560.0, 40.0

_LAYER_STYLE = {
    "equator": 'stroke="#888" stroke-width="1.5" stroke-dasharray="6,3"',
    "necks": 'stroke="#bbb" stroke-width="1" stroke-dasharray="2,3"',
    "barriers": 'stroke="#c33" stroke-width="1.2" fill="none"',
    "bumps": 'stroke="#39c" stroke-width="1" fill="none"',
    "curves": 'stroke="#000" stroke-width="1.6" fill="none"',
}

_CURVE_COLORS = ("#000000", "#1f77b4", "#d62728", "#2ca02c", "#9467bd",
                 "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf")


def format_value(v):
    """Canonical scalar serialization used by every CSV cell."""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return "%.12g" % float(v)
    return str(v)


def csv_text(rows, config_hash, version):
    lines = [f"# revlab {version}", f"# config {config_hash}"]
    lines += [f"{key},{format_value(val)}" for key, val in rows]
    return "\n".join(lines) + "\n"


def curve_csv_text(cid, t, theta, config_hash, version):
    lines = [f"# revlab {version}", f"# config {config_hash}",
             f"# curve {cid}", "t,theta"]
    lines += ["%.12g,%.12g" % (float(a), float(b))
              for a, b in zip(t, theta)]
    return "\n".join(lines) + "\n"


def report_json_text(report, config_hash, version):
    doc = {"revlab": version, "config": config_hash,
           "passed": report.passed, "content": report.content()}
    return json.dumps(doc, sort_keys=True, indent=1,
                      default=_json_default) + "\n"


def _json_default(v):
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (np.floating,)):
        return float(v)
    if isinstance(v, np.ndarray):
        return v.tolist()
    raise TypeError(f"not serializable: {type(v).__name__}")


def failure_manifest(report, config_hash, version):
    """Machine-readable description of every failed assertion."""
    return {
        "revlab": version,
        "config": config_hash,
        "scenario": report.scenario,
        "failed": [{"name": name, "detail": detail}
                   for name, ok, detail in report.assertions if not ok],
    }


# ----------------------------------------------------------------------
# SVG chart
# ----------------------------------------------------------------------

def _chart_transform(th_lo, th_hi, z_lo, z_hi):
    sw = (SVG_W - 2 * SVG_PAD) / max(th_hi - th_lo, 1e-9)
    sh = (SVG_H - 2 * SVG_PAD) / max(z_hi - z_lo, 1e-9)

    def to_xy(th, z):
        x = SVG_PAD + (np.asarray(th, float) - th_lo) * sw
        y = SVG_H - SVG_PAD - (np.asarray(z, float) - z_lo) * sh
        return x, y

    return to_xy


def _poly(to_xy, th, z, style, closed=False):
    x, y = to_xy(th, z)
    pts = " ".join("%.2f,%.2f" % (a, b) for a, b in zip(x, y))
    tag = "polygon" if closed else "polyline"
    return f'<{tag} points="{pts}" fill="none" {style} />'


def svg_document(metric, curves=None, bumps=None):
    """Render curves over the standard background layers.

    curves: dict id -> (t, theta) arrays; theta is used as given
    (already unwrapped by the producer when the curve winds).
    bumps: optional list of (t, theta, radius) chart disks.
    """
    curves = dict(curves or {})
    lm = metric.landmarks
    z_of = metric.profile.z_of

    th_lo, th_hi = 0.0, 2.0 * np.pi
    for t, th in curves.values():
        th = np.asarray(th, float)
        th_lo = min(th_lo, float(th.min()) - 0.2)
        th_hi = max(th_hi, float(th.max()) + 0.2)
    total = metric.profile.total_length
    tg = np.linspace(0.0, total, 257)
    zg = z_of(tg)
    to_xy = _chart_transform(th_lo, th_hi, float(zg.min()), float(zg.max()))

    def hline(t_val, style):
        z = float(z_of(np.array([t_val]))[0])
        return _poly(to_xy, np.array([th_lo, th_hi]), np.array([z, z]), style)

    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" '
             f'width="{SVG_W:.0f}" height="{SVG_H:.0f}" '
             f'viewBox="0 0 {SVG_W:.0f} {SVG_H:.0f}">',
             f'<rect width="{SVG_W:.0f}" height="{SVG_H:.0f}" fill="#fff"/>']

    parts.append(f'<g id="equator" {_LAYER_STYLE["equator"]}>')
    parts.append(hline(lm["equator"], ""))
    parts.append("</g>")

    parts.append(f'<g id="necks" {_LAYER_STYLE["necks"]}>')
    for name in ("upper_neck_waist", "lower_neck_waist",
                 "south_collar_waist", "north_collar_waist"):
        if name in lm:
            parts.append(hline(lm[name], ""))
    parts.append("</g>")

    parts.append(f'<g id="barriers" {_LAYER_STYLE["barriers"]}>')
    for chart, info in zip(getattr(metric, "charts", []),
                           [metric.nose_info.get(i)
                            for i in range(len(getattr(metric, "charts", [])))]):
        if info is None:
            continue
        psi = np.linspace(0.0, 2.0 * np.pi, 97)
        tb = chart.t0 + info["waist_d"] * np.cos(psi)
        thb = chart.theta0 + info["waist_d"] * np.sin(psi) / chart.r0
        parts.append(_poly(to_xy, thb, z_of(tb), "", closed=True))
    parts.append("</g>")

    parts.append(f'<g id="bumps" {_LAYER_STYLE["bumps"]}>')
    for (tb0, thb0, rad) in (bumps or []):
        psi = np.linspace(0.0, 2.0 * np.pi, 49)
        r0 = float(metric.profile.r_of(np.array([tb0]))[0])
        tb = tb0 + rad * np.cos(psi)
        thb = thb0 + rad * np.sin(psi) / r0
        parts.append(_poly(to_xy, thb, z_of(tb), "", closed=True))
    parts.append("</g>")

    parts.append(f'<g id="curves" {_LAYER_STYLE["curves"]}>')
    for i, cid in enumerate(sorted(curves)):
        t, th = curves[cid]
        color = _CURVE_COLORS[i % len(_CURVE_COLORS)]
        parts.append(f'<g id="curve-{cid}" stroke="{color}">')
        parts.append(_poly(to_xy, np.asarray(th, float),
                           z_of(np.asarray(t, float)), ""))
        parts.append("</g>")
    parts.append("</g>")
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


# ----------------------------------------------------------------------
# bundle emission
# ----------------------------------------------------------------------

def write_bundle(report, config, metric=None, bumps=None):
    """Write the selected artifacts for one scenario run.

    Returns the list of written paths.  ``config`` is a RunConfig; the
    config hash and artifact version go into every file header.
    """
    from .scene import ARTIFACT_VERSION

    chash = config.hash()
    out = config.out_dir / f"{report.scenario}-{chash}"
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise IoError(f"cannot create output directory {out}: {exc}") from exc
    written = []

    def emit(name, text):
        path = out / name
        path.write_text(text)
        written.append(path)

    if "csv" in config.emit:
        emit(f"{report.scenario}.csv",
             csv_text(report.rows(), chash, ARTIFACT_VERSION))
        for cid in sorted(report.curves):
            t, th = report.curves[cid]
            emit(f"curve-{cid}.csv",
                 curve_csv_text(cid, t, th, chash, ARTIFACT_VERSION))
    if "report" in config.emit:
        emit(f"{report.scenario}.report.json",
             report_json_text(report, chash, ARTIFACT_VERSION))
    if "svg" in config.emit and metric is not None:
        emit(f"{report.scenario}.svg",
             f"<!-- revlab {ARTIFACT_VERSION} config {chash} -->\n"
             + svg_document(metric, report.curves, bumps=bumps))
    if not report.passed:
        emit("failures.json",
             json.dumps(failure_manifest(report, chash, ARTIFACT_VERSION),
                        sort_keys=True, indent=1) + "\n")
    return written


def render(run_dir, artifact_id):
    """Locate an emitted artifact by id inside a run directory."""
    run_dir = Path(run_dir)
    if not run_dir.is_dir():
        raise NotFound(f"run directory {run_dir} does not exist")
    for suffix in (".svg", ".csv", ".report.json"):
        cand = run_dir / f"{artifact_id}{suffix}"
        if cand.exists():
            return cand
    cand = run_dir / f"curve-{artifact_id}.csv"
    if cand.exists():
        return cand
    raise NotFound(f"artifact '{artifact_id}' not found in {run_dir}")

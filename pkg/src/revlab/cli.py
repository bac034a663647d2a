"""Command-line entry point: scenario dispatch and artifact emission.

Exit codes: 0 all scenario assertions pass; 1 assertion failure (a
failure manifest is written); 2 configuration error; 3 numerical failure
(flow collapse, refinement divergence — also with a manifest).
"""

from __future__ import annotations

import argparse
import json
import sys

from .errors import (
    ConfigError,
    IoError,
    NotFound,
    RevlabError,
)
from .scene import ARTIFACT_VERSION, EMIT_CHOICES, RunConfig, config_from_args
from . import report as report_mod


def _parse_tol(pairs):
    tol = {}
    for item in pairs or []:
        if "=" not in item:
            raise ConfigError(f"--tol expects name=value, got '{item}'")
        name, _, val = item.partition("=")
        try:
            tol[name.strip()] = float(val)
        except ValueError as exc:
            raise ConfigError(f"--tol {name}: '{val}' is not a number") \
                from exc
    return tol


def build_parser():
    p = argparse.ArgumentParser(
        prog="revlab",
        description="Geodesic experiments on snowman surfaces of revolution")
    p.add_argument("--scene", default=None, help="scene file (YAML)")
    p.add_argument("--scenario", default="sphere-sanity",
                   help="scenario id (see `revlab --list`)")
    p.add_argument("--seed", type=int, default=None, help="RNG seed")
    p.add_argument("--out", default="runs", help="output directory")
    p.add_argument("--emit", default="csv,report",
                   help="comma-separated artifact kinds: "
                        + ",".join(EMIT_CHOICES))
    p.add_argument("--tol", action="append", metavar="NAME=VALUE",
                   help="tolerance override (repeatable)")
    p.add_argument("--list", action="store_true",
                   help="list scenario ids and exit")
    return p


def scenario_table():
    """Scenario id -> callable(RunConfig) -> ScenarioReport."""
    from . import lab

    def _lab(config):
        return config.effective_lab()

    def sphere_sanity(config):
        return lab.scenario_sphere_sanity(_lab(config))

    def gamma(config):
        m = int(config.scenario_args.get("m", 1))
        return lab.scenario_gamma_m(m, _lab(config))

    def eta(config):
        n = int(config.scenario_args.get("n", 1))
        return lab.scenario_eta_n(n, _lab(config))

    def deflection(config):
        rho = float(config.scenario_args.get("rho", 0.05))
        offset = float(config.scenario_args.get("offset", rho / 4.0))
        return lab.bump_deflection_test(rho, offset, _lab(config))

    def lamination(config):
        return lab.lamination_leaves(_lab(config))

    def minimax(config):
        n = int(config.scenario_args.get("n", 1))
        return lab.minimax_m1(n, _lab(config))

    def index_sweep(config):
        return lab.equator_index_sweep(config=_lab(config))

    return {
        "sphere-sanity": sphere_sanity,
        "gamma": gamma,
        "eta": eta,
        "deflection": deflection,
        "lamination": lamination,
        "minimax": minimax,
        "index-sweep": index_sweep,
    }


def run(config: RunConfig) -> int:
    """Execute the selected scenario and write artifacts."""
    table = scenario_table()
    if config.scenario not in table:
        raise ConfigError(f"unknown scenario '{config.scenario}'; expected "
                          f"one of: {', '.join(sorted(table))}")
    try:
        result = table[config.scenario](config)
    except (ConfigError, IoError):
        raise
    except RevlabError as exc:
        _write_numerical_manifest(config, exc)
        return 3
    report = result[0] if isinstance(result, tuple) else result
    metric = getattr(result[1], "metric", None) \
        if isinstance(result, tuple) and len(result) > 1 else None
    report_mod.write_bundle(report, config, metric=metric)
    return 0 if report.passed else 1


def _write_numerical_manifest(config, exc):
    chash = config.hash()
    out = config.out_dir / f"{config.scenario}-{chash}"
    try:
        out.mkdir(parents=True, exist_ok=True)
        manifest = {
            "revlab": ARTIFACT_VERSION,
            "config": chash,
            "scenario": config.scenario,
            "failed": [{"name": f"numerical:{type(exc).__name__}",
                        "detail": str(exc)}],
        }
        (out / "failures.json").write_text(
            json.dumps(manifest, sort_keys=True, indent=1) + "\n")
    except OSError:
        pass


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.list:
        for sid in sorted(scenario_table()):
            print(sid)
        return 0
    try:
        config = config_from_args(
            scene=args.scene, scenario=args.scenario, seed=args.seed,
            out=args.out, emit=tuple(e for e in args.emit.split(",") if e),
            tol=_parse_tol(args.tol))
        return run(config)
    except (ConfigError,) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (IoError, NotFound) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

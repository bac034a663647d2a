"""Run configuration: scene files, tolerance overrides, config hashing.

A *scene file* is a single YAML document describing the stage and the
per-scenario parameters of a run.  Recognized top-level keys:

``lab``
    Overrides for :class:`revlab.lab.LabConfig` fields (numbers only).
``seed``
    Default RNG seed (overridden by ``--seed``).
``scenarios``
    Mapping ``scenario id -> {parameter: value}`` consumed by the
    scenario dispatcher.

Unknown keys anywhere in the tree raise :class:`ConfigError` naming the
offending field (with a best-effort line number).  The resolved
configuration is fully serializable; its canonical JSON serialization is
hashed and the hash is embedded in every output file header.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .errors import ConfigError, IoError
from .lab import LabConfig

ARTIFACT_VERSION = "0.1.0"

EMIT_CHOICES = ("csv", "svg", "report")

_LAB_FIELDS = {f.name: f.type for f in dataclasses.fields(LabConfig)}

#: tolerance names accepted by ``--tol name=value``
TOL_NAMES = ("residual_tol", "refine_tol", "flow_stop", "flow_stop_exact")

_TOP_KEYS = ("lab", "seed", "scenarios")


def _line_of(text: str, key: str):
    """Best-effort 1-based line number of a mapping key in YAML text."""
    for i, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0]
        if stripped.strip().startswith(f"{key}:"):
            return i
    return None


def _reject_unknown(mapping, allowed, where, text):
    for key in mapping:
        if key not in allowed:
            line = _line_of(text, str(key))
            at = f" (line {line})" if line else ""
            raise ConfigError(f"unknown key '{where}{key}'{at}; "
                              f"expected one of: {', '.join(sorted(allowed))}")


def load_scene(path):
    """Parse and validate a scene file.

    Returns a plain dict with keys ``lab`` (LabConfig), ``seed`` (int),
    ``scenarios`` (dict of per-scenario parameter dicts).
    """
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise IoError(f"cannot read scene file {p}: {exc}") from exc
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"scene file {p} is not valid YAML: {exc}") from exc
    if doc is None:
        doc = {}
    if not isinstance(doc, dict):
        raise ConfigError(f"scene file {p} must be a mapping at top level, "
                          f"got {type(doc).__name__}")
    _reject_unknown(doc, _TOP_KEYS, "", text)

    lab_over = doc.get("lab") or {}
    if not isinstance(lab_over, dict):
        raise ConfigError("'lab' must be a mapping of LabConfig overrides")
    _reject_unknown(lab_over, set(_LAB_FIELDS), "lab.", text)
    for key, val in lab_over.items():
        if not isinstance(val, (int, float)) or isinstance(val, bool):
            raise ConfigError(f"lab.{key} must be a number, "
                              f"got {type(val).__name__}")
    lab = LabConfig(**lab_over)

    seed = doc.get("seed", lab.seed)
    if not isinstance(seed, int) or isinstance(seed, bool) or seed < 0:
        raise ConfigError(f"seed must be a non-negative integer, got {seed!r}")

    scen = doc.get("scenarios") or {}
    if not isinstance(scen, dict):
        raise ConfigError("'scenarios' must be a mapping scenario -> params")
    for sid, params in scen.items():
        if params is None:
            scen[sid] = {}
        elif not isinstance(params, dict):
            raise ConfigError(f"scenarios.{sid} must be a mapping of "
                              f"parameters")
    return {"lab": lab, "seed": int(seed), "scenarios": dict(scen)}


@dataclass(frozen=True)
class RunConfig:
    """Resolved configuration of one run; fully serializable."""

    scene: str | None = None
    scenario: str = "sphere-sanity"
    seed: int = 0
    out: str = "runs"
    emit: tuple = ("csv", "report")
    tol: dict = field(default_factory=dict)
    scenario_args: dict = field(default_factory=dict)
    lab: LabConfig = field(default_factory=LabConfig)

    def __post_init__(self):
        for e in self.emit:
            if e not in EMIT_CHOICES:
                raise ConfigError(f"unknown emit target '{e}'; expected "
                                  f"one of: {', '.join(EMIT_CHOICES)}")
        for name, val in self.tol.items():
            if name not in TOL_NAMES:
                raise ConfigError(f"unknown tolerance '{name}'; expected "
                                  f"one of: {', '.join(TOL_NAMES)}")
            if not isinstance(val, (int, float)) or val <= 0:
                raise ConfigError(f"tolerance {name} must be a positive "
                                  f"number, got {val!r}")

    def effective_lab(self) -> LabConfig:
        """LabConfig with tolerance overrides and the run seed applied."""
        over = dict(self.tol)
        over["seed"] = self.seed
        return dataclasses.replace(self.lab, **over)

    def resolved(self) -> dict:
        """Serializable tree embedding everything that affects outputs."""
        return {
            "artifact_version": ARTIFACT_VERSION,
            "scenario": self.scenario,
            "seed": self.seed,
            "emit": sorted(self.emit),
            "tol": {k: float(v) for k, v in sorted(self.tol.items())},
            "scenario_args": {k: self.scenario_args[k]
                              for k in sorted(self.scenario_args)},
            "lab": self.effective_lab().as_dict(),
        }

    def hash(self) -> str:
        blob = json.dumps(self.resolved(), sort_keys=True,
                          separators=(",", ":")).encode()
        return hashlib.sha256(blob).hexdigest()[:12]

    @property
    def out_dir(self) -> Path:
        # the only environment override: output directory
        return Path(os.environ.get("REVLAB_OUT", self.out))


def config_from_args(scene=None, scenario="sphere-sanity", seed=None,
                     out="runs", emit=("csv", "report"), tol=None,
                     scenario_args=None) -> RunConfig:
    """Merge a scene file (if given) with command-line style overrides."""
    lab = LabConfig()
    merged_args = {}
    if scene is not None:
        loaded = load_scene(scene)
        lab = loaded["lab"]
        if seed is None:
            seed = loaded["seed"]
        merged_args.update(loaded["scenarios"].get(scenario, {}))
    if seed is None:
        seed = lab.seed
    if scenario_args:
        merged_args.update(scenario_args)
    return RunConfig(scene=None if scene is None else str(scene),
                     scenario=scenario, seed=int(seed), out=str(out),
                     emit=tuple(emit), tol=dict(tol or {}),
                     scenario_args=merged_args, lab=lab)

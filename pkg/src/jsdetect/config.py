"""Experiment configuration: YAML in, validated dataclasses out.

Validation errors carry the line of the offending key, e.g.
``exp.yaml:14: detectors[0].T must be a positive integer``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any

import numpy as np
import yaml

from jsdetect.attacks import KINDS, AttackScenario
from jsdetect.linsys import SystemModel
from jsdetect.quantizer import MAX_ITERS, REL_TOL

DETECTOR_KINDS = ("js", "npi", "so")


class ConfigError(ValueError):
    def __init__(self, message: str, source: str = "<config>", line: int | None = None):
        self.source = source
        self.line = line
        where = f"{source}:{line}" if line is not None else source
        super().__init__(f"{where}: {message}")


# ---------------------------------------------------------------------------
# YAML with line numbers


def _build(node, path: tuple, lines: dict):
    lines[path] = node.start_mark.line + 1
    if isinstance(node, yaml.MappingNode):
        out = {}
        for key_node, value_node in node.value:
            key = key_node.value
            if key in out:
                raise ConfigError(f"duplicate key {'.'.join(map(str, path + (key,)))}", line=key_node.start_mark.line + 1)
            out[key] = _build(value_node, path + (key,), lines)
            lines[path + (key,)] = key_node.start_mark.line + 1
        return out
    if isinstance(node, yaml.SequenceNode):
        return [_build(item, path + (i,), lines) for i, item in enumerate(node.value)]
    return yaml.SafeLoader(" ").construct_object(node, deep=True)


def load_yaml(text: str, source: str = "<config>"):
    try:
        root = yaml.compose(text, Loader=yaml.SafeLoader)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        raise ConfigError(f"invalid YAML: {getattr(exc, 'problem', exc)}", source, mark.line + 1 if mark else None) from None
    if root is None:
        return {}, {}
    lines: dict = {}
    try:
        data = _build(root, (), lines)
    except ConfigError as exc:
        raise ConfigError(str(exc).split(": ", 1)[1], source, exc.line) from None
    return data, lines


# ---------------------------------------------------------------------------
# typed config


@dataclass(frozen=True)
class LloydParams:
    sample_count: int | None = None
    max_iters: int = MAX_ITERS
    rel_tol: float = REL_TOL


@dataclass(frozen=True)
class DetectorSpec:
    kind: str
    name: str
    alpha: float
    L: int = 0
    I: int = 0
    T: int = 0
    lloyd: LloydParams = LloydParams()
    grid_cache: Path | None = None
    literal: bool = False


@dataclass(frozen=True)
class Seeds:
    plant: int = 1
    attack: int = 2
    lloyd: int = 3


@dataclass(frozen=True)
class ExperimentConfig:
    model: SystemModel
    scenario: AttackScenario
    detectors: tuple
    horizon: int
    seeds: Seeds = Seeds()
    output: Path = Path("out")
    source: str = "<config>"

    @property
    def onset(self) -> int | None:
        return None if self.scenario.kind == "none" else self.scenario.onset

    def with_overrides(self, out=None, seed_plant=None, seed_attack=None, seed_lloyd=None) -> "ExperimentConfig":
        seeds = Seeds(
            plant=self.seeds.plant if seed_plant is None else seed_plant,
            attack=self.seeds.attack if seed_attack is None else seed_attack,
            lloyd=self.seeds.lloyd if seed_lloyd is None else seed_lloyd,
        )
        scenario = replace(self.scenario, seed=seeds.attack)
        return replace(self, seeds=seeds, scenario=scenario, output=self.output if out is None else Path(out))


class _Reader:
    """Typed access to the raw mapping, raising line-anchored errors."""

    def __init__(self, data: dict, lines: dict, source: str):
        self.data = data
        self.lines = lines
        self.source = source

    def error(self, path: tuple, message: str) -> ConfigError:
        p = path
        while p and p not in self.lines:
            p = p[:-1]
        return ConfigError(f"{_dotted(path)} {message}", self.source, self.lines.get(p))

    def get(self, path: tuple, default: Any = ..., ):
        node = self.data
        for k in path:
            if isinstance(node, dict) and k in node:
                node = node[k]
            elif isinstance(node, list) and isinstance(k, int) and k < len(node):
                node = node[k]
            else:
                if default is ...:
                    raise self.error(path, "is required")
                return default
        return node

    def integer(self, path, default=..., minimum=None) -> int:
        value = self.get(path, default)
        if value is None:
            return value
        if isinstance(value, bool) or not isinstance(value, int):
            raise self.error(path, f"must be an integer, got {value!r}")
        if minimum is not None and value < minimum:
            raise self.error(path, f"must be >= {minimum}, got {value}")
        return value

    def real(self, path, default=..., lo=None, hi=None) -> float:
        value = self.get(path, default)
        if isinstance(value, bool) or not isinstance(value, (int, float)) or not math.isfinite(value):
            raise self.error(path, f"must be a finite number, got {value!r}")
        if (lo is not None and value < lo) or (hi is not None and value > hi):
            raise self.error(path, f"must lie in [{lo}, {hi}], got {value}")
        return float(value)

    def matrix(self, path) -> np.ndarray:
        value = self.get(path)
        if isinstance(value, (int, float)) and not isinstance(value, bool):
            value = [[value]]
        try:
            m = np.array(value, dtype=float)
        except (TypeError, ValueError):
            raise self.error(path, "must be a matrix given as row-major nested lists") from None
        if m.ndim == 1:
            m = m[None, :]
        if m.ndim != 2:
            raise self.error(path, "must be a matrix given as row-major nested lists")
        return m

    def choice(self, path, options, default=...) -> str:
        value = self.get(path, default)
        if value not in options:
            raise self.error(path, f"must be one of {list(options)}, got {value!r}")
        return value


def _dotted(path: tuple) -> str:
    out = ""
    for k in path:
        out += f"[{k}]" if isinstance(k, int) else (f".{k}" if out else str(k))
    return out


def parse_config(data: dict, lines: dict | None = None, source: str = "<config>", base_dir: Path | None = None) -> ExperimentConfig:
    r = _Reader(data if isinstance(data, dict) else {}, lines or {}, source)
    if not isinstance(data, dict):
        raise ConfigError("top level must be a mapping", source, 1)
    base_dir = Path(".") if base_dir is None else base_dir

    known = {"model", "scenario", "detectors", "horizon", "seeds", "output"}
    for key in data:
        if key not in known:
            raise r.error((key,), f"is not a recognized section (expected one of {sorted(known)})")

    try:
        model = SystemModel(*(r.matrix(("model", k)) for k in ("A", "C", "Q", "R")))
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise r.error(("model",), f"is invalid: {exc}") from None

    horizon = r.integer(("horizon",), minimum=1)
    seeds = Seeds(
        plant=r.integer(("seeds", "plant"), 1, minimum=0),
        attack=r.integer(("seeds", "attack"), 2, minimum=0),
        lloyd=r.integer(("seeds", "lloyd"), 3, minimum=0),
    )

    kind = r.choice(("scenario", "kind"), KINDS, "none")
    onset = r.integer(("scenario", "onset"), 0 if kind == "none" else ..., minimum=0)
    if kind != "none" and onset >= horizon:
        raise r.error(("scenario", "onset"), f"must be smaller than horizon ({horizon})")
    sc = {"kind": kind, "onset": onset, "seed": seeds.attack}
    if kind == "uncorrelated":
        sc["tau"] = r.integer(("scenario", "tau"), 1, minimum=1)
        sc["upsilon"] = r.real(("scenario", "upsilon"), 2**-0.5)
        if not 0.0 < sc["upsilon"] < 1.0:
            raise r.error(("scenario", "upsilon"), "must lie strictly between 0 and 1")
        sc["gamma"] = r.choice(("scenario", "gamma"), ("sign", "binary"), "sign")
    elif kind == "pairwise" and model.meas_dim != 1:
        raise r.error(("scenario", "kind"), "pairwise attack requires a scalar measurement (C with one row)")
    elif kind == "bias":
        off = r.get(("scenario", "offset"))
        off = np.atleast_1d(np.asarray(off, dtype=float))
        if off.size not in (1, model.meas_dim):
            raise r.error(("scenario", "offset"), f"must be a scalar or a {model.meas_dim}-vector")
        sc["offset"] = tuple(float(v) for v in off)
    elif kind == "replay":
        sc["window"] = r.integer(("scenario", "window"), minimum=1)
        if sc["window"] > onset:
            raise r.error(("scenario", "window"), f"capture window must fit before the onset ({onset})")
    scenario = AttackScenario(**sc)

    raw_dets = r.get(("detectors",))
    if not isinstance(raw_dets, list) or not raw_dets:
        raise r.error(("detectors",), "must be a non-empty list")
    detectors = []
    names = set()
    for i in range(len(raw_dets)):
        p = ("detectors", i)
        dk = r.choice(p + ("kind",), DETECTOR_KINDS)
        name = r.get(p + ("name",), dk)
        if not isinstance(name, str) or not name.replace("_", "").replace("-", "").isalnum():
            raise r.error(p + ("name",), "must be a simple identifier (letters, digits, '-', '_')")
        if name in names:
            raise r.error(p + ("name",), f"duplicates detector name {name!r}")
        names.add(name)
        alpha = r.real(p + ("alpha",), 0.99, lo=0.0, hi=1.0)
        if dk == "so":
            literal = r.get(p + ("literal",), False)
            if not isinstance(literal, bool):
                raise r.error(p + ("literal",), "must be true or false")
            detectors.append(DetectorSpec(kind=dk, name=name, alpha=alpha, literal=literal))
            continue
        L = r.integer(p + ("L",), minimum=2 if dk == "npi" else 1)
        I = r.integer(p + ("I",), minimum=1)
        T = r.integer(p + ("T",), minimum=1)
        if T + L - 2 >= horizon:
            raise r.error(p + ("T",), f"window T + L - 1 = {T + L - 1} leaves no rows within horizon {horizon}")
        sample_count = r.integer(p + ("lloyd", "sample_count"), None, minimum=I + 1)
        lloyd = LloydParams(
            sample_count=sample_count,
            max_iters=r.integer(p + ("lloyd", "max_iters"), MAX_ITERS, minimum=1),
            rel_tol=r.real(p + ("lloyd", "rel_tol"), REL_TOL, lo=0.0),
        )
        cache = r.get(p + ("grid_cache",), None)
        if cache is not None and not isinstance(cache, str):
            raise r.error(p + ("grid_cache",), "must be a directory path")
        detectors.append(
            DetectorSpec(
                kind=dk, name=name, alpha=alpha, L=L, I=I, T=T, lloyd=lloyd,
                grid_cache=None if cache is None else base_dir / cache,
            )
        )

    output = r.get(("output",), "out")
    if not isinstance(output, str):
        raise r.error(("output",), "must be a directory path")

    return ExperimentConfig(
        model=model,
        scenario=scenario,
        detectors=tuple(detectors),
        horizon=horizon,
        seeds=seeds,
        output=base_dir / output,
        source=source,
    )


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    text = path.read_text()
    data, lines = load_yaml(text, str(path))
    return parse_config(data, lines, str(path), path.parent)

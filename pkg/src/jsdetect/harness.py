"""Experiment pipeline: simulate -> attack -> whiten -> detect -> write traces."""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from jsdetect import attacks, linsys
from jsdetect.config import DetectorSpec, ExperimentConfig
from jsdetect.detectors import JsDetector, NpiDetector, SoDetector, Trace
from jsdetect.quantizer import cached_lloyd_grid, lloyd_grid

log = logging.getLogger(__name__)

FLOAT_FMT = "{:.9g}"


def _grid(spec, L, seed, default_cache, D=1):
    """``(grid, cache_path_or_None, cache_hit)``; NPI grids live on pairs (L = 2)."""
    cache = spec.grid_cache or default_cache
    lp = spec.lloyd
    if cache is None:
        return lloyd_grid(L, D, spec.I, lp.sample_count, seed, lp.max_iters, lp.rel_tol), None, False
    return cached_lloyd_grid(cache, L, D, spec.I, lp.sample_count, seed, lp.max_iters, lp.rel_tol)


def build_detector(spec: DetectorSpec, cfg: ExperimentConfig, steady: linsys.SteadyState, cache: Path | None = None):
    D = cfg.model.meas_dim
    if spec.kind == "so":
        return SoDetector(steady.Gamma, spec.alpha, literal=spec.literal, name=spec.name), None
    L = spec.L if spec.kind == "js" else 2
    grid, path, hit = _grid(spec, L, cfg.seeds.lloyd, cache, D)
    if spec.kind == "js":
        return JsDetector(grid, spec.T, spec.alpha, name=spec.name), grid
    return NpiDetector(grid, spec.L, spec.T, spec.alpha, name=spec.name), grid


@dataclass
class RunResult:
    traces: dict
    summary: dict
    files: list


def detect(cfg: ExperimentConfig, cache: Path | None = None):
    """Run the whole pipeline in memory; returns ``(traces, z, zcheck)``."""
    model = cfg.model
    steady = linsys.SteadyState.from_model(model)
    _, y = linsys.simulate(model, steady, cfg.horizon, seed=cfg.seeds.plant)
    z = attacks.apply_scenario(model, steady, cfg.scenario, y)
    zcheck = linsys.whiten(model, steady, z)
    innov = linsys.innovations(model, steady, z)
    traces = {}
    for spec in cfg.detectors:
        det, _ = build_detector(spec, cfg, steady, cache)
        traces[spec.name] = det.run(innov if spec.kind == "so" else zcheck)
    return traces, z, zcheck


def summarize(trace: Trace, onset: int | None) -> dict:
    pre = trace.t < onset if onset is not None else np.ones(len(trace), dtype=bool)
    out = {
        "kind": trace.kind,
        "rows": len(trace),
        "pre_onset_rows": int(pre.sum()),
        "false_alarms": int(trace.alarm[pre].sum()),
        "false_alarm_rate": trace.false_alarm_rate(onset),
        "detection_delay": trace.detection_delay(onset),
        "mean_v_pre": _jsonable(trace.mean_v(hi=onset)),
        "mean_v_post": _jsonable(trace.mean_v(lo=onset)) if onset is not None else None,
    }
    if trace.lags:
        out["lags"] = list(trace.lags)
    return out


def _jsonable(x):
    if isinstance(x, np.ndarray):
        return [_jsonable(v) for v in x]
    x = float(x)
    return None if not np.isfinite(x) else x


def write_trace(path: Path, trace: Trace) -> None:
    f = FLOAT_FMT.format
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if trace.lags:
            header = ["t"]
            for l in trace.lags:
                header += [f"v_{l}", f"psi_{l}", f"alarm_{l}"]
            w.writerow(header + ["alarm"])
            for k in range(len(trace)):
                row = [int(trace.t[k])]
                for j in range(len(trace.lags)):
                    row += [f(trace.v[k, j]), f(trace.psi[k, j]), int(trace.lag_alarm[k, j])]
                w.writerow(row + [int(trace.alarm[k])])
        else:
            w.writerow(["t", "v", "psi", "alarm"])
            for t, v, psi, a in zip(trace.t, trace.v, trace.psi, trace.alarm):
                w.writerow([int(t), f(v), f(psi), int(a)])


def run_experiment(cfg: ExperimentConfig) -> RunResult:
    """Run the experiment and write ``<name>.csv`` per detector plus ``summary.json``."""
    out = Path(cfg.output)
    out.mkdir(parents=True, exist_ok=True)
    traces, _, _ = detect(cfg, cache=out / "grids")
    onset = cfg.onset
    files = []
    summary = {
        "horizon": cfg.horizon,
        "scenario": cfg.scenario.kind,
        "onset": onset,
        "seeds": {"plant": cfg.seeds.plant, "attack": cfg.seeds.attack, "lloyd": cfg.seeds.lloyd},
        "detectors": {},
    }
    for name, trace in traces.items():
        path = out / f"{name}.csv"
        write_trace(path, trace)
        files.append(path)
        summary["detectors"][name] = summarize(trace, onset)
        log.info("%s: %d rows -> %s", name, len(trace), path)
    spath = out / "summary.json"
    spath.write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    files.append(spath)
    return RunResult(traces, summary, files)


def build_grids(cfg: ExperimentConfig) -> list[dict]:
    """Build (or load) the grid of every JS/NPI detector; one report dict per grid."""
    reports = []
    default_cache = Path(cfg.output) / "grids"
    for spec in cfg.detectors:
        if spec.kind == "so":
            continue
        L = spec.L if spec.kind == "js" else 2
        grid, path, hit = _grid(spec, L, cfg.seeds.lloyd, default_cache, cfg.model.meas_dim)
        reports.append(
            {
                "detector": spec.name,
                "L": grid.L,
                "D": grid.D,
                "I": grid.I,
                "distortion": grid.distortion,
                "iterations": grid.iterations,
                "converged": grid.converged,
                "cache": str(path),
                "cache_hit": hit,
            }
        )
    return reports


def plot_traces(out_dir, image_dir=None) -> list[Path]:
    """One PNG per trace CSV in ``out_dir`` (v against t, onset marked if known)."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    out_dir = Path(out_dir)
    image_dir = out_dir if image_dir is None else Path(image_dir)
    image_dir.mkdir(parents=True, exist_ok=True)
    onset = None
    spath = out_dir / "summary.json"
    if spath.exists():
        onset = json.loads(spath.read_text()).get("onset")
    written = []
    for path in sorted(out_dir.glob("*.csv")):
        with open(path) as fh:
            rows = list(csv.DictReader(fh))
        if not rows:
            continue
        t = np.array([int(r["t"]) for r in rows])
        cols = [c for c in rows[0] if c == "v" or c.startswith("v_")]
        fig, ax = plt.subplots(figsize=(8, 3))
        for c in cols:
            ax.plot(t, [float(r[c]) for r in rows], lw=0.5, label=c)
        if onset is not None:
            ax.axvline(onset, color="k", ls="--", lw=0.8)
        ax.set_xlabel("t")
        ax.set_ylabel("v")
        ax.set_title(path.stem)
        if len(cols) > 1:
            ax.legend(loc="upper left")
        fig.tight_layout()
        img = image_dir / f"{path.stem}.png"
        fig.savefig(img, dpi=120)
        plt.close(fig)
        written.append(img)
    return written

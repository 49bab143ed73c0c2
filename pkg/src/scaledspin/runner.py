"""Configuration-driven sweeps over (delta, tau) with caching and plot tables.

A run expands the config into independent cells, executes them in order
(optionally in worker processes, each pinned to one BLAS thread) and writes
one CSV plus one JSON record per cell. Cells whose stored config matches are
reused unless ``force`` is set.
"""

from __future__ import annotations

import copy
import csv
import hashlib
import io
import json
import logging
import os
import tempfile
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import jsonschema
import numpy as np
from threadpoolctl import threadpool_limits

from . import __version__
from . import analysis
from .protocols import (
    SequenceConfig,
    SignalCurve,
    loschmidt_echo,
    magnetization_decay,
    mqc_series,
    self_time_collapse,
    spin_count,
)
from .sequences import ErrorModel, SequenceError
from .spin_core import check_capacity, make_system

log = logging.getLogger(__name__)

WORKERS_ENV = "SCALEDSPIN_WORKERS"
PROTOCOLS = ("decay", "echo", "mqc")


class ConfigError(ValueError):
    """Config failed schema or semantic validation."""


CONFIG_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "required": ["system", "sequence", "protocol", "time_grid"],
    "additionalProperties": False,
    "properties": {
        "name": {"type": "string"},
        "system": {
            "type": "object",
            "required": ["geometry", "n_spins", "scale"],
            "additionalProperties": False,
            "properties": {
                "geometry": {"enum": ["pair", "chain", "cubic", "random"]},
                "n_spins": {"type": "integer", "minimum": 1},
                "scale": {"type": "number", "exclusiveMinimum": 0},
                "rule": {"enum": ["isotropic_r3", "dipolar_angular"]},
                "seed": {"type": "integer", "minimum": 0},
            },
        },
        "sequence": {
            "type": "object",
            "required": ["kind", "deltas", "taus"],
            "additionalProperties": False,
            "properties": {
                "kind": {"enum": ["P8", "P16", "magic_echo", "free"]},
                "deltas": {"type": "array", "minItems": 1, "items": {"type": "number"}},
                "taus": {"type": "array", "minItems": 1,
                         "items": {"type": "number", "exclusiveMinimum": 0}},
                "direction": {"enum": ["F", "B"]},
                "mode": {"enum": ["pulsed", "ideal"]},
                "min_separation": {"type": "number", "minimum": 0},
                "errors": {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {
                        "flip_error": {"type": "number"},
                        "phase_error": {"type": "number"},
                        "pulse_width": {"type": "number", "minimum": 0},
                        "zeeman_offsets": {"type": "array", "items": {"type": "number"}},
                    },
                },
            },
        },
        "protocol": {"enum": list(PROTOCOLS)},
        "time_grid": {
            "type": "object",
            "required": ["n_points"],
            "additionalProperties": False,
            "properties": {
                "n_points": {"type": "integer", "minimum": 2},
                "t_max": {"type": "number", "exclusiveMinimum": 0},
                "self_time_max": {"type": "number", "exclusiveMinimum": 0},
            },
            "oneOf": [{"required": ["t_max"]}, {"required": ["self_time_max"]}],
        },
        "Q": {"type": "integer", "minimum": 2, "multipleOf": 2},
        "output": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"dir": {"type": "string"}},
        },
    },
}


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def config_hash(obj) -> str:
    """sha256 of canonical JSON; independent of key order."""
    return hashlib.sha256(canonical_json(obj).encode()).hexdigest()


def validate_config(config: dict) -> dict:
    """Schema-validate and fill defaults. Raises :class:`ConfigError`."""
    validator = jsonschema.Draft202012Validator(CONFIG_SCHEMA)
    errors = sorted(validator.iter_errors(config), key=lambda e: list(e.absolute_path))
    if errors:
        e = errors[0]
        where = "/".join(str(p) for p in e.absolute_path) or "<root>"
        raise ConfigError(f"config invalid at {where}: {e.message}")
    cfg = copy.deepcopy(config)
    cfg["system"].setdefault("rule", "dipolar_angular")
    cfg["system"].setdefault("seed", 0)
    seq = cfg["sequence"]
    seq.setdefault("direction", "F")
    seq.setdefault("mode", "pulsed")
    seq.setdefault("min_separation", 1e-6)
    seq.setdefault("errors", {})
    cfg.setdefault("Q", 64)
    try:
        check_capacity(cfg["system"]["n_spins"])
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    if "self_time_max" in cfg["time_grid"] and any(d == 0 for d in seq["deltas"]) \
            and seq["kind"] in ("P8", "P16"):
        raise ConfigError("time_grid/self_time_max: self-time is undefined for delta = 0; use t_max")
    return cfg


def load_config(path) -> dict:
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    return validate_config(raw)


# ----------------------------------------------------------------------------
# cells


@dataclass(frozen=True)
class Cell:
    index: int
    spec: dict

    @property
    def hash(self) -> str:
        return config_hash(self.spec)

    @property
    def stem(self) -> str:
        s = self.spec
        return (f"{s['protocol']}_{s['sequence']['kind']}_{s['sequence']['direction']}"
                f"_d{s['sequence']['delta']:g}_tau{s['sequence']['tau']:g}_{self.hash[:10]}")


def expand_cells(cfg: dict) -> list[Cell]:
    seq = cfg["sequence"]
    cells = []
    for delta in seq["deltas"]:
        for tau in seq["taus"]:
            spec = {
                "system": cfg["system"],
                "protocol": cfg["protocol"],
                "time_grid": cfg["time_grid"],
                "Q": cfg["Q"],
                "sequence": {
                    "kind": seq["kind"], "delta": float(delta), "tau": float(tau),
                    "direction": seq["direction"], "mode": seq["mode"],
                    "min_separation": seq["min_separation"], "errors": seq["errors"],
                },
                "tool_version": __version__,
            }
            cells.append(Cell(len(cells), spec))
    return cells


def _error_model(d: dict) -> ErrorModel:
    offs = d.get("zeeman_offsets")
    return ErrorModel(d.get("flip_error", 0.0), d.get("phase_error", 0.0), d.get("pulse_width", 0.0),
                      tuple(offs) if offs is not None else None)


def _sequence_config(spec: dict) -> SequenceConfig:
    s = spec["sequence"]
    return SequenceConfig(s["kind"], s["delta"], s["tau"], s["mode"], _error_model(s["errors"]),
                          s["min_separation"])


def _system(spec: dict):
    s = spec["system"]
    return make_system(s["geometry"], s["n_spins"], s["scale"], s["rule"], s["seed"])


def _directions(spec: dict) -> tuple:
    if spec["protocol"] == "decay":
        return (spec["sequence"]["direction"],)
    return ("F", "B")


def validate_cell(spec: dict) -> None:
    """Surface sequence-bound violations before any work is scheduled."""
    sc = _sequence_config(spec)
    for d in _directions(spec):
        if sc.kind in ("P8", "P16"):
            if sc.mode == "pulsed":
                sc.sequence(d)
            elif d == "B" and sc.delta > 0.5:
                raise SequenceError("backward scaling exceeds 1/2")
            elif not 0 <= sc.delta < 1:
                raise SequenceError("forward scaling must satisfy 0 <= delta < 1")
        elif d == "B" and sc.mode == "pulsed":
            raise SequenceError(f"no pulsed backward block for {sc.kind}")
        else:
            sc.sequence("F")


def cell_times(spec: dict, system=None) -> np.ndarray:
    """Lab-time sample points; pulsed runs snap to whole cycles."""
    grid = spec["time_grid"]
    sc = _sequence_config(spec)
    n = grid["n_points"]
    if "t_max" in grid:
        t_max = grid["t_max"]
    else:
        system = system or _system(spec)
        scale = abs(sc.scaling) or 1.0
        t_max = grid["self_time_max"] / system.local_coupling_rms() / scale
    times = np.linspace(0.0, t_max, n)
    if sc.mode == "pulsed":
        t_c = sc.cycle_time()
        cycles = np.unique(np.rint(times / t_c).astype(int))
        times = cycles * t_c
    return times


def execute_cell(spec: dict) -> dict:
    """Run one cell; returns the CSV text and a JSON-ready summary."""
    with threadpool_limits(limits=1):
        t0 = time.perf_counter()
        system = _system(spec)
        sc = _sequence_config(spec)
        times = cell_times(spec, system)
        summary: dict = {"d_bar": system.local_coupling_rms(), "cycle_time": None}
        if sc.mode == "pulsed":
            summary["cycle_time"] = sc.cycle_time()
        proto = spec["protocol"]
        if proto == "decay":
            curve = magnetization_decay(system, sc, times, spec["sequence"]["direction"])
            text = curve.to_csv()
            summary["metadata"] = curve.metadata
        elif proto == "echo":
            curve = loschmidt_echo(system, sc, times)
            text = curve.to_csv()
            summary["metadata"] = curve.metadata
        else:
            text, meta = _mqc_table(system, sc, times, spec["Q"])
            summary["metadata"] = meta
        summary["wall_clock_s"] = time.perf_counter() - t0
    return {"csv": text, "summary": summary}


def _mqc_table(system, sc, times, Q) -> tuple[str, dict]:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["time_s", "self_time_s", "q", "S_q", "Q2", "N"])
    meta = None
    for t, spec in zip(times, mqc_series(system, sc, times, Q)):
        meta = meta or dict(spec.metadata)
        q2, n = spec.second_moment, spin_count(spec)
        st = abs(sc.scaling) * t
        for q, s in zip(spec.orders, spec.S_q):
            w.writerow([repr(float(t)), repr(float(st)), int(q), repr(float(s)), repr(q2), repr(n)])
    meta.pop("max_order", None)
    return buf.getvalue(), meta


# ----------------------------------------------------------------------------
# run


def resolve_workers(workers: Optional[int] = None) -> int:
    if workers is None:
        env = os.environ.get(WORKERS_ENV)
        workers = int(env) if env else (os.cpu_count() or 1)
    if workers < 1:
        raise ConfigError("workers must be >= 1")
    return workers


def _atomic_write(path: Path, text: str) -> None:
    fd, tmp = tempfile.mkstemp(dir=path.parent, suffix=".tmp")
    with os.fdopen(fd, "w", newline="") as fh:
        fh.write(text)
    os.replace(tmp, path)


def run(config: dict, out: Optional[os.PathLike] = None, force: bool = False,
        workers: Optional[int] = None, seed: Optional[int] = None) -> dict:
    """Execute a sweep and write results; returns the run record."""
    cfg = validate_config(config)
    if seed is not None:
        cfg["system"]["seed"] = int(seed)
    out_dir = Path(out or cfg.get("output", {}).get("dir", "results"))
    out_dir.mkdir(parents=True, exist_ok=True)
    cells = expand_cells(cfg)
    for c in cells:
        validate_cell(c.spec)

    todo = []
    for c in cells:
        rec_path = out_dir / f"{c.stem}.json"
        if rec_path.exists() and not force:
            stored = json.loads(rec_path.read_text())
            if stored.get("cell_hash") == c.hash:
                if canonical_json(stored.get("cell")) != canonical_json(c.spec):
                    raise RuntimeError(f"hash collision on cell {c.stem}: stored config differs")
                if (out_dir / f"{c.stem}.csv").exists():
                    log.info("cached: %s", c.stem)
                    continue
        todo.append(c)

    n_workers = min(resolve_workers(workers), max(len(todo), 1))
    t0 = time.perf_counter()
    specs = [c.spec for c in todo]
    if n_workers == 1:
        results = [execute_cell(s) for s in specs]
    else:
        with ProcessPoolExecutor(max_workers=n_workers) as pool:
            results = list(pool.map(execute_cell, specs))
    for c, res in zip(todo, results):
        _atomic_write(out_dir / f"{c.stem}.csv", res["csv"])
        rec = {"cell_hash": c.hash, "cell": c.spec, "csv": f"{c.stem}.csv",
               "tool_version": __version__, **res["summary"]}
        _atomic_write(out_dir / f"{c.stem}.json", json.dumps(rec, indent=2, sort_keys=True))

    record = {
        "config_hash": config_hash(cfg),
        "config": cfg,
        "tool_version": __version__,
        "cells": [{"index": c.index, "stem": c.stem, "cell_hash": c.hash,
                   "csv": f"{c.stem}.csv", "cached": c not in todo} for c in cells],
        "wall_clock_s": time.perf_counter() - t0,
    }
    if cfg["protocol"] == "decay" and len(cells) >= 2:
        curves = [load_curve(out_dir, c.stem) for c in cells]
        try:
            record["collapse"] = self_time_collapse(curves).to_dict()
        except ValueError as exc:
            record["collapse"] = {"error": str(exc)}
    _atomic_write(out_dir / "record.json", json.dumps(record, indent=2, sort_keys=True))
    return record


def load_curve(out_dir, stem: str) -> SignalCurve:
    out_dir = Path(out_dir)
    rec = json.loads((out_dir / f"{stem}.json").read_text())
    return SignalCurve.from_csv((out_dir / f"{stem}.csv").read_text(), rec.get("metadata", {}))


def load_results(paths: Sequence) -> list[dict]:
    """Every cell record (with its CSV path) under the given result dirs."""
    cells = []
    for p in paths:
        p = Path(p)
        rec = p / "record.json"
        if not rec.exists():
            continue
        for c in json.loads(rec.read_text())["cells"]:
            cr = json.loads((p / f"{c['stem']}.json").read_text())
            cr["dir"] = str(p)
            cr["stem"] = c["stem"]
            cells.append(cr)
    return cells


def load_mqc(cell: dict) -> dict:
    """``{t: (orders, S_q)}`` from an MQC cell CSV."""
    rows = list(csv.DictReader(open(Path(cell["dir"]) / cell["csv"])))
    out: dict = {}
    for r in rows:
        out.setdefault(float(r["time_s"]), ([], []))
        out[float(r["time_s"])][0].append(int(r["q"]))
        out[float(r["time_s"])][1].append(float(r["S_q"]))
    return {t: (np.array(q), np.array(s)) for t, (q, s) in out.items()}


# ----------------------------------------------------------------------------
# analyze


CURVE_MODELS = {
    "abragam": analysis.fit_abragam,
    "flambaum_izrailev": analysis.fit_flambaum_izrailev,
    "boltzmann": analysis.fit_boltzmann,
}
SPECTRUM_MODELS = ("gaussian_mqc", "power_law")
MODELS = tuple(CURVE_MODELS) + SPECTRUM_MODELS


def analyze(paths: Sequence, models: Sequence[str], out: Optional[os.PathLike] = None) -> list[Path]:
    """Fit every matching curve; writes one FitResult JSON per (cell, model)."""
    unknown = [m for m in models if m not in MODELS]
    if unknown:
        raise ConfigError(f"unknown model(s) {unknown}; choose from {list(MODELS)}")
    written = []
    for cell in load_results(paths):
        proto = cell["cell"]["protocol"]
        dest = Path(out or cell["dir"])
        dest.mkdir(parents=True, exist_ok=True)
        for m in models:
            if m in CURVE_MODELS and proto != "mqc":
                curve = load_curve(cell["dir"], cell["stem"])
                results = [CURVE_MODELS[m](curve)]
            elif m == "gaussian_mqc" and proto == "mqc":
                spectra = load_mqc(cell)
                results = [analysis.GaussianMQCFit().fit(q, s).result() for t, (q, s) in spectra.items() if t > 0]
                for (t, _), r in zip([kv for kv in spectra.items() if kv[0] > 0], results):
                    r.derived["time_s"] = t
            elif m == "power_law" and proto == "mqc":
                pts = _spin_count_points(cell)
                results = [analysis.fit_power_law(pts[:, 0], pts[:, 1])]
            else:
                continue
            path = dest / f"{cell['stem']}.fit_{m}.json"
            payload = {"source": cell["csv"], "model": m, "results": [r.to_dict() for r in results]}
            _atomic_write(path, json.dumps(payload, indent=2, sort_keys=True))
            written.append(path)
    if not written:
        raise LookupError(f"no curves matched models {list(models)}")
    return written


def _spin_count_points(cell: dict) -> np.ndarray:
    rows = list(csv.DictReader(open(Path(cell["dir"]) / cell["csv"])))
    seen = {}
    for r in rows:
        st = float(r["self_time_s"])
        if st > 0:
            seen[st] = float(r["N"])
    return np.array(sorted(seen.items()))


# ----------------------------------------------------------------------------
# plot data


def _write_table(path: Path, header: list, rows: list) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([repr(float(x)) if isinstance(x, (float, np.floating)) else x for x in r])
    _atomic_write(path, buf.getvalue())


def plotdata(paths: Sequence, out: os.PathLike, svg: bool = False) -> list[Path]:
    """Figure-ready tables from one or more result directories."""
    cells = load_results(paths)
    if not cells:
        raise LookupError("no curves matched: no result records found")
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []
    decay = [c for c in cells if c["cell"]["protocol"] == "decay"]
    echo = [c for c in cells if c["cell"]["protocol"] == "echo"]
    mqc = [c for c in cells if c["cell"]["protocol"] == "mqc"]

    if decay:
        rows = []
        for c in decay:
            cv = load_curve(c["dir"], c["stem"])
            d_bar = c["d_bar"]
            for t, st, v in zip(cv.times, cv.self_times, cv.values):
                rows.append([cv.delta, c["cell"]["sequence"]["tau"], t, st, st * d_bar, v])
        p = out / "fig2_selftime.csv"
        _write_table(p, ["delta", "tau_s", "time_s", "self_time_s", "self_time_dbar", "P"], rows)
        written.append(p)

    le0 = [c for c in echo if c["cell"]["sequence"]["delta"] == 0]
    if le0:
        rows = []
        for c in le0:
            cv = load_curve(c["dir"], c["stem"])
            rows += [[c["cell"]["sequence"]["tau"], t, v] for t, v in zip(cv.times, cv.values)]
        p = out / "fig_appendix_le0.csv"
        _write_table(p, ["tau_s", "time_s", "M0"], rows)
        written.append(p)

    if mqc:
        rows, spec_rows = [], []
        for c in mqc:
            delta = c["metadata"]["delta"]
            for r in csv.DictReader(open(Path(c["dir"]) / c["csv"])):
                spec_rows.append([delta, float(r["time_s"]), int(r["q"]), float(r["S_q"])])
            for st, n in _spin_count_points(c):
                rows.append([delta, st / delta if delta else st, st, n])
        p = out / "fig3_spincount.csv"
        _write_table(p, ["delta", "time_s", "self_time_s", "N"], rows)
        written.append(p)
        p = out / "mqc_spectra.csv"
        _write_table(p, ["delta", "time_s", "q", "S_q"], spec_rows)
        written.append(p)

    sat = _saturation_rows(decay, echo, le0)
    if sat:
        p = out / "fig4_saturation.csv"
        _write_table(p, ["delta", "T2_s", "T3_s", "T_sigma_s", "T2_over_Tsigma", "T2_over_T3"], sat)
        written.append(p)

    if svg:
        written += _render_svg(out, written)
    return written


def _saturation_rows(decay, echo, le0) -> list:
    if not (decay and le0):
        return []
    ref = load_curve(le0[0]["dir"], le0[0]["stem"])
    t_sigma = analysis.half_max_time(ref.times, ref.values)
    if t_sigma.censored:
        return []
    rows = []
    for c in decay:
        delta = c["cell"]["sequence"]["delta"]
        match = [e for e in echo if e["cell"]["sequence"]["delta"] == delta and delta > 0]
        if not match:
            continue
        try:
            t2 = analysis.fit_abragam(load_curve(c["dir"], c["stem"])).derived["T2"]
        except (analysis.FitError, ValueError):
            continue
        ec = load_curve(match[0]["dir"], match[0]["stem"])
        t3 = analysis.half_max_time(ec.times, ec.values)
        if t3.censored:
            continue
        rows.append([delta, t2, t3.time, t_sigma.time, t2 / t_sigma.time, t2 / t3.time])
    return rows


def _render_svg(out: Path, tables: list[Path]) -> list[Path]:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    written = []
    for p in tables:
        rows = list(csv.DictReader(open(p)))
        if not rows:
            continue
        cols = list(rows[0])
        x_col, y_col = {
            "fig2_selftime.csv": ("self_time_dbar", "P"),
            "fig3_spincount.csv": ("self_time_s", "N"),
            "fig4_saturation.csv": ("T2_over_Tsigma", "T2_over_T3"),
            "fig_appendix_le0.csv": ("time_s", "M0"),
            "mqc_spectra.csv": ("q", "S_q"),
        }.get(p.name, (cols[0], cols[-1]))
        fig, ax = plt.subplots(figsize=(4.5, 3.2))
        groups: dict = {}
        for r in rows:
            groups.setdefault(r[cols[0]], []).append((float(r[x_col]), float(r[y_col])))
        for key, pts in groups.items():
            xs, ys = zip(*pts)
            ax.plot(xs, ys, ".-" if p.name != "mqc_spectra.csv" else ".", label=f"{cols[0]}={key}", ms=3)
        ax.set_xlabel(x_col)
        ax.set_ylabel(y_col)
        if len(groups) <= 8:
            ax.legend(fontsize=6)
        fig.tight_layout()
        svg_path = p.with_suffix(".svg")
        fig.savefig(svg_path, format="svg", metadata={"Date": None})
        plt.close(fig)
        written.append(svg_path)
    return written

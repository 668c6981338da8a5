"""Scenario orchestration: single runs, offset sweeps, accuracy sweeps.

Every sweep cell is persisted as its own JSON file named by the cell key;
re-running a sweep skips cells whose files already exist, so interrupted
sweeps resume without recomputation.  Cells execute on a process pool when
``workers > 1``; results are written by the parent only.
"""

from __future__ import annotations

import json
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .config import ScenarioConfig, config_hash
from .errors import MnpError
from .fields import MU0, axis_in_plane, neel_params, sinusoidal_sequence
from .observables import export_trace_csv, induced_voltage
from .odes import IntegratorConfig
from .simulate import precession_comparison, run_simulation

logger = logging.getLogger(__name__)

__all__ = ["RunReport", "simulate_scenario", "run_offset_sweep", "run_accuracy_sweep",
           "offset_vectors"]


@dataclass
class RunReport:
    """Status and bookkeeping of one solver run."""

    status: str  # ok | stiffness-failure | divergence | unphysical
    wall_time: float
    config_hash: str
    mass_drift: float | None = None
    accepted_steps: int | None = None
    matrix_assemblies: int | None = None
    lu_factorizations: int | None = None
    detail: str = ""

    def to_json(self) -> dict:
        return asdict(self)


def _integrator(cfg: ScenarioConfig) -> IntegratorConfig:
    return IntegratorConfig(rtol=cfg.solver.rtol, atol=cfg.solver.atol)


def simulate_scenario(cfg: ScenarioConfig, out_dir: str | Path) -> RunReport:
    """Run the configured scenario and write trace CSV, report, and config."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    chash = config_hash(cfg)
    model = cfg.particle_model()
    sequence = cfg.field_sequence()
    start = time.perf_counter()
    try:
        result = run_simulation(
            cfg.solver.disc, sequence, model, _integrator(cfg),
            n_samples=cfg.solver.n_samples, precession=cfg.solver.precession,
            mesh_cache=cfg.solver.mesh_cache,
        )
    except MnpError as exc:
        report = RunReport(status=_status_of(exc), wall_time=time.perf_counter() - start,
                           config_hash=chash, detail=str(exc))
        (out / "report.json").write_text(json.dumps(report.to_json(), indent=2))
        return report

    voltage = induced_voltage(result.moment, np.eye(3))
    metadata = {
        "config_hash": chash,
        "disc": str(result.disc),
        "mass_drift": result.mass_drift,
        "stats": asdict(result.stats),
        "wall_time": result.wall_time,
    }
    export_trace_csv(result.moment, out / "trace.csv", voltage=voltage, metadata=metadata)
    report = RunReport(
        status="unphysical" if result.unphysical else "ok",
        wall_time=result.wall_time,
        config_hash=chash,
        mass_drift=result.mass_drift,
        accepted_steps=result.stats.accepted_steps,
        matrix_assemblies=result.stats.matrix_assemblies,
        lu_factorizations=result.stats.lu_factorizations,
    )
    (out / "report.json").write_text(json.dumps(report.to_json(), indent=2))
    return report


def _status_of(exc: MnpError) -> str:
    name = type(exc).__name__
    if name == "StiffnessError":
        return "stiffness-failure"
    if name == "DivergenceError":
        return "divergence"
    return "error"


def offset_vectors(pixels_mm, gradient_t_per_m: float) -> list[tuple[tuple[int, int], np.ndarray]]:
    """Selection-field offsets ``Q_G x`` for a 2D pixel grid in the z=0 plane.

    ``Q_G = G diag(-1/2, -1/2, 1)``; pixel coordinates are offsets from the
    field-of-view center in mm.
    """
    g = gradient_t_per_m / MU0
    out = []
    for i, x in enumerate(pixels_mm):
        for j, y in enumerate(pixels_mm):
            pos = np.array([x * 1e-3, y * 1e-3, 0.0])
            out.append(((i, j), g * np.array([-0.5, -0.5, 1.0]) * pos))
    return out


def _offset_cell(args) -> dict:
    (key, h_s, k_anis, cfg_dict) = args
    model = neel_params(m_s=cfg_dict["m_s"], k_anis=k_anis,
                        d_core=cfg_dict["d_core"], t_b=cfg_dict["t_b"])
    seq = sinusoidal_sequence(cfg_dict["amplitude"], cfg_dict["frequency"],
                              h_s=np.asarray(h_s),
                              easy_axis=axis_in_plane(cfg_dict["axis_rad"]))
    config = IntegratorConfig(rtol=cfg_dict["rtol"], atol=cfg_dict["atol"])
    try:
        cmp = precession_comparison(cfg_dict["disc"], seq, model, config,
                                    n_samples=cfg_dict["n_samples"])
        return {
            "key": list(key), "k_anis": k_anis,
            "offset_norm": float(np.linalg.norm(h_s)),
            "status": "ok",
            "relative_error": cmp.relative_error,
            "runtime_ratio": cmp.runtime_ratio,
            "t_full": cmp.full.wall_time,
            "t_reduced": cmp.reduced.wall_time,
            "unphysical": bool(cmp.full.unphysical or cmp.reduced.unphysical),
        }
    except MnpError as exc:
        return {"key": list(key), "k_anis": k_anis,
                "offset_norm": float(np.linalg.norm(h_s)),
                "status": _status_of(exc), "detail": str(exc)}


def run_offset_sweep(cfg: ScenarioConfig, out_dir: str | Path) -> list[dict]:
    """Precession-neglect study over a pixel-offset grid and anisotropy list.

    One full-versus-reduced comparison per (offset, anisotropy) cell;
    individual failures are recorded and the sweep continues.
    """
    out = Path(out_dir)
    cells_dir = out / "cells"
    cells_dir.mkdir(parents=True, exist_ok=True)
    cfg_dict = {
        "m_s": cfg.particle.m_s, "d_core": cfg.particle.d_core_nm * 1e-9,
        "t_b": cfg.particle.t_b,
        "amplitude": cfg.field_.amplitude_mt * 1e-3 / MU0,
        "frequency": cfg.field_.frequency_hz,
        "axis_rad": np.radians(cfg.field_.easy_axis_deg),
        "disc": cfg.solver.disc, "rtol": cfg.solver.rtol, "atol": cfg.solver.atol,
        "n_samples": cfg.solver.n_samples,
    }
    tasks = []
    results = []
    for key, h_s in offset_vectors(cfg.sweep.pixels_mm, cfg.sweep.gradient_t_per_m):
        for k_anis in cfg.sweep.anisotropies:
            cell_file = cells_dir / f"offset_{key[0]}_{key[1]}_K{k_anis:g}.json"
            if cell_file.is_file():
                results.append(json.loads(cell_file.read_text()))
                continue
            tasks.append((cell_file, (key, tuple(h_s), k_anis, cfg_dict)))

    if cfg.sweep.workers > 1 and tasks:
        with ProcessPoolExecutor(max_workers=cfg.sweep.workers) as pool:
            fresh = list(pool.map(_offset_cell, [t[1] for t in tasks]))
    else:
        fresh = [_offset_cell(t[1]) for t in tasks]
    for (cell_file, _), record in zip(tasks, fresh):
        cell_file.write_text(json.dumps(record, indent=2))
        results.append(record)

    results.sort(key=lambda r: (r["k_anis"], r["offset_norm"]))
    _write_sweep_csv(out / "offset_sweep.csv", results,
                     ["k_anis", "offset_norm", "relative_error", "runtime_ratio",
                      "t_full", "t_reduced", "status"])
    (out / "sweep_report.json").write_text(json.dumps(
        {"config_hash": config_hash(cfg), "cells": results}, indent=2))
    return results


def _accuracy_cell(args) -> dict:
    (d_nm, k_anis, disc, ref_disc, cfg_dict) = args
    model = neel_params(m_s=cfg_dict["m_s"], k_anis=k_anis, d_core=d_nm * 1e-9,
                        t_b=cfg_dict["t_b"])
    seq = sinusoidal_sequence(cfg_dict["amplitude"], cfg_dict["frequency"],
                              easy_axis=axis_in_plane(cfg_dict["axis_rad"]))
    config = IntegratorConfig(rtol=cfg_dict["rtol"], atol=cfg_dict["atol"])
    record = {"d_nm": d_nm, "k_anis": k_anis, "disc": disc, "reference": ref_disc}
    try:
        res = run_simulation(disc, seq, model, config,
                             n_samples=cfg_dict["n_samples"],
                             precession=cfg_dict["precession"])
        ref = run_simulation(ref_disc, seq, model, config,
                             n_samples=cfg_dict["n_samples"],
                             precession=cfg_dict["precession"])
        denom = np.linalg.norm(ref.moment.moment)
        record["relative_error"] = float(
            np.linalg.norm(res.moment.moment - ref.moment.moment) / denom
        ) if denom > 0 else 0.0
        record["status"] = "unphysical" if (res.unphysical or ref.unphysical) else "ok"
        record["t_solve"] = res.wall_time
    except MnpError as exc:
        record["status"] = _status_of(exc)
        record["detail"] = str(exc)
    return record


def run_accuracy_sweep(cfg: ScenarioConfig, out_dir: str | Path) -> list[dict]:
    """Relative trajectory errors over a (diameter, anisotropy) grid.

    Each cell compares the configured discretization against the reference
    discretization; failed or unphysical cells stay in the table with their
    status, mirroring blank cells in accuracy maps.
    """
    out = Path(out_dir)
    cells_dir = out / "cells"
    cells_dir.mkdir(parents=True, exist_ok=True)
    cfg_dict = {
        "m_s": cfg.particle.m_s, "t_b": cfg.particle.t_b,
        "amplitude": cfg.field_.amplitude_mt * 1e-3 / MU0,
        "frequency": cfg.field_.frequency_hz,
        "axis_rad": np.radians(cfg.field_.easy_axis_deg),
        "rtol": cfg.solver.rtol, "atol": cfg.solver.atol,
        "n_samples": cfg.solver.n_samples, "precession": cfg.solver.precession,
    }
    tasks, results = [], []
    for d_nm in cfg.sweep.diameters_nm:
        for k_anis in cfg.sweep.anisotropies:
            cell_file = cells_dir / f"acc_D{d_nm:g}_K{k_anis:g}.json"
            if cell_file.is_file():
                results.append(json.loads(cell_file.read_text()))
                continue
            tasks.append((cell_file,
                          (d_nm, k_anis, cfg.solver.disc, cfg.sweep.reference_disc, cfg_dict)))
    if cfg.sweep.workers > 1 and tasks:
        with ProcessPoolExecutor(max_workers=cfg.sweep.workers) as pool:
            fresh = list(pool.map(_accuracy_cell, [t[1] for t in tasks]))
    else:
        fresh = [_accuracy_cell(t[1]) for t in tasks]
    for (cell_file, _), record in zip(tasks, fresh):
        cell_file.write_text(json.dumps(record, indent=2))
        results.append(record)
    results.sort(key=lambda r: (r["d_nm"], r["k_anis"]))
    _write_sweep_csv(out / "accuracy_sweep.csv", results,
                     ["d_nm", "k_anis", "relative_error", "t_solve", "status"])
    (out / "sweep_report.json").write_text(json.dumps(
        {"config_hash": config_hash(cfg), "cells": results}, indent=2))
    return results


def _write_sweep_csv(path: Path, records: list[dict], columns: list[str]) -> None:
    with open(path, "w") as fh:
        fh.write(",".join(columns) + "\n")
        for r in records:
            fh.write(",".join(str(r.get(c, "")) for c in columns) + "\n")

"""Polydisperse dictionary synthesis and nonnegative sparse fitting.

A dictionary column is the simulated one-channel voltage signal of a
monodisperse ensemble at one (diameter, anisotropy, axis-offset) grid
point, stacked over the reference orientations of the sample.  A measured
(or synthetic) signal is then explained as a nonnegative weighted sum of
columns by minimizing

    sum_j || A^(j) w - v^(j) ||^2 + beta ||w||_1,   w >= 0,

with an accelerated projected proximal-gradient iteration.  The sensitivity
constant and sample volume only rescale the weights, so they are fixed to
one here and the weights are determined up to that overall scale.
"""

from __future__ import annotations

import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import InvalidInputError, InvalidParameterError, MnpError
from .fields import MU0, axis_in_plane, neel_params, sinusoidal_sequence
from .odes import IntegratorConfig
from .simulate import DiscSpec, parse_disc, run_simulation

logger = logging.getLogger(__name__)

__all__ = [
    "ParameterGrid",
    "E1Excitation",
    "Dictionary",
    "WeightFit",
    "build_dictionary",
    "nn_lasso",
    "auto_beta",
    "marginals",
    "save_dictionary",
    "load_dictionary",
]

DEFAULT_PHI_REFS = (0.0, math.pi / 4, math.pi / 2)


@dataclass(frozen=True)
class ParameterGrid:
    """Cartesian (diameter, anisotropy, axis offset) grid, one column each."""

    diameters: tuple[float, ...]  # m
    anisotropies: tuple[float, ...]  # J/m^3
    delta_phis: tuple[float, ...] = (0.0,)  # rad
    phi_refs: tuple[float, ...] = DEFAULT_PHI_REFS  # rad

    def __post_init__(self):
        for name in ("diameters", "anisotropies", "delta_phis"):
            values = getattr(self, name)
            if len(values) == 0:
                raise InvalidParameterError(f"{name} must be non-empty")
            if any(b <= a for a, b in zip(values, values[1:])):
                raise InvalidParameterError(f"{name} must be strictly increasing")
        neg = sorted(-d for d in self.delta_phis if d < 0)
        pos = [d for d in self.delta_phis if d > 0]
        if neg and neg != pos:
            raise InvalidParameterError("delta_phi grid must be symmetric about zero")

    @property
    def shape(self) -> tuple[int, int, int]:
        return (len(self.diameters), len(self.anisotropies), len(self.delta_phis))

    @property
    def n_columns(self) -> int:
        return int(np.prod(self.shape))

    def points(self):
        for i, d in enumerate(self.diameters):
            for j, k in enumerate(self.anisotropies):
                for l, dphi in enumerate(self.delta_phis):
                    yield (i, j, l), (d, k, dphi)


@dataclass(frozen=True)
class E1Excitation:
    """Spectrometer drive plus the material constants shared by all columns."""

    frequency: float = 125e6 / 4800  # Hz
    amplitude: float = 0.02 / MU0  # A/m
    m_s: float = 474000.0
    t_b: float = 293.0
    gamma: float | None = None
    alpha: float | None = None
    precession: bool = False


@dataclass
class Dictionary:
    """Simulated signal matrix with one column per grid point."""

    matrix: np.ndarray  # (n_refs * n_times, n_columns)
    grid: ParameterGrid
    times: np.ndarray  # (n_times,)
    excitation: E1Excitation
    columns: list[dict] = field(default_factory=list)  # provenance per column
    failed: list[dict] = field(default_factory=list)
    symmetrized: bool = True

    @property
    def n_refs(self) -> int:
        return len(self.grid.phi_refs)

    def blocks(self, stacked: np.ndarray) -> list[np.ndarray]:
        """Split a stacked row vector into the per-reference-angle blocks."""
        n_t = self.times.size
        return [stacked[j * n_t : (j + 1) * n_t] for j in range(self.n_refs)]


def _column_signal(args) -> tuple[int, np.ndarray | None, str]:
    """Simulate one column; module-level so a process pool can run it."""
    (col, d_core, k_anis, dphi, phi_refs, excitation, disc, cfg_dict,
     n_times, symmetrize) = args
    kwargs = {}
    if excitation.gamma is not None:
        kwargs["gamma"] = excitation.gamma
    if excitation.alpha is not None:
        kwargs["alpha"] = excitation.alpha
    model = neel_params(m_s=excitation.m_s, k_anis=k_anis, d_core=d_core,
                        t_b=excitation.t_b, **kwargs)
    config = IntegratorConfig(**cfg_dict)
    period = 1.0 / excitation.frequency
    times = np.linspace(0.0, period, n_times)
    offsets = (dphi, -dphi) if (symmetrize and dphi != 0.0) else (dphi,)
    try:
        stacked = []
        for phi_ref in phi_refs:
            signal = np.zeros(n_times)
            for off in offsets:
                seq = sinusoidal_sequence(
                    excitation.amplitude, excitation.frequency,
                    easy_axis=axis_in_plane(phi_ref + off),
                )
                res = run_simulation(disc, seq, model, config,
                                     sample_times=times,
                                     precession=excitation.precession)
                signal += -MU0 * res.moment.derivative[:, 0]
            stacked.append(signal / len(offsets))
        return col, np.concatenate(stacked), ""
    except MnpError as exc:
        return col, None, f"{type(exc).__name__}: {exc}"


def build_dictionary(
    grid: ParameterGrid,
    excitation: E1Excitation | None = None,
    disc: DiscSpec | str = "fv:4:0.2",
    config: IntegratorConfig | None = None,
    n_times: int = 1000,
    symmetrize: bool = True,
    workers: int = 1,
) -> Dictionary:
    """Simulate every grid point and assemble the signal matrix.

    Columns stack the per-reference-angle signals; with ``symmetrize`` each
    column averages the two signals at ``phi_ref +- delta_phi``.  Grid points
    whose solve fails are excluded and listed in ``failed``.
    """
    excitation = excitation or E1Excitation()
    if isinstance(disc, str):
        disc = parse_disc(disc)
    config = config or IntegratorConfig()
    cfg_dict = {"rtol": config.rtol, "atol": config.atol,
                "first_step": config.first_step, "max_step": config.max_step}

    period = 1.0 / excitation.frequency
    times = np.linspace(0.0, period, n_times)
    tasks = []
    meta = []
    for (i, j, l), (d, k, dphi) in grid.points():
        col = len(tasks)
        tasks.append((col, d, k, dphi, tuple(grid.phi_refs), excitation, disc,
                      cfg_dict, n_times, symmetrize))
        meta.append({"column": col, "d_core": d, "k_anis": k, "delta_phi": dphi,
                     "grid_index": [i, j, l]})

    matrix = np.zeros((len(grid.phi_refs) * n_times, len(tasks)))
    failed = []
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_column_signal, tasks))
    else:
        results = [_column_signal(t) for t in tasks]
    for col, signal, error in results:
        if signal is None:
            failed.append({**meta[col], "error": error})
            logger.warning("dictionary column %d failed: %s", col, error)
        else:
            matrix[:, col] = signal

    keep = [c for c in range(len(tasks)) if not any(f["column"] == c for f in failed)]
    if len(keep) < len(tasks):
        matrix = matrix[:, keep]
        meta = [meta[c] for c in keep]
    if matrix.size and np.any(np.all(matrix == 0.0, axis=0)):
        raise InvalidInputError("dictionary contains an all-zero column")
    return Dictionary(matrix=matrix, grid=grid, times=times, excitation=excitation,
                      columns=meta, failed=failed, symmetrized=symmetrize)


# ---------------------------------------------------------------------------
# Nonnegative l1-penalized least squares
# ---------------------------------------------------------------------------


@dataclass
class WeightFit:
    """Result of the sparse fit."""

    weights: np.ndarray
    beta: float
    objective_history: np.ndarray
    residual_norms: list[float]  # per reference-angle block
    converged: bool
    iterations: int
    debiased: bool = False


def _objective(a, v, w, beta) -> float:
    r = a @ w - v
    return float(r @ r + beta * np.sum(w))


def nn_lasso(
    dictionary,
    signals,
    beta: float,
    max_iter: int = 20000,
    tol: float = 1e-10,
    debias: bool = False,
) -> WeightFit:
    """Minimize ``||A w - v||^2 + beta ||w||_1`` over ``w >= 0``.

    Accelerated proximal gradient with backtracking on the smooth-part
    curvature and a monotone safeguard (momentum restarts whenever a step
    would increase the objective, falling back to the plain proximal step
    which is a guaranteed descent).  Convergence is declared when the
    relative objective decrease drops below ``tol``; hitting ``max_iter``
    returns the best iterate flagged as non-converged.

    ``debias`` re-solves an unpenalized nonnegative least-squares problem
    restricted to the recovered support, removing the shrinkage bias.
    """
    a = dictionary.matrix if isinstance(dictionary, Dictionary) else np.asarray(dictionary)
    if isinstance(signals, (list, tuple)):
        v = np.concatenate([np.asarray(s, dtype=float).ravel() for s in signals])
    else:
        v = np.asarray(signals, dtype=float).ravel()
    if a.shape[0] != v.shape[0]:
        raise InvalidInputError(
            f"dictionary has {a.shape[0]} rows but the stacked signal has {v.shape[0]}"
        )
    if beta < 0:
        raise InvalidParameterError("beta must be non-negative")

    n = a.shape[1]
    w = np.zeros(n)
    y = w.copy()
    t_acc = 1.0
    # curvature estimate of grad f = 2 A^T(Aw - v) by power iteration
    rng = np.random.default_rng(0)
    z = rng.standard_normal(n)
    for _ in range(20):
        z = a.T @ (a @ z)
        nz = np.linalg.norm(z)
        if nz == 0:
            break
        z /= nz
    lips = 2.0 * max(np.linalg.norm(a.T @ (a @ z)), 1e-300)

    history = [_objective(a, v, w, beta)]
    converged = False
    iterations = 0
    for iterations in range(1, max_iter + 1):
        grad_y = 2.0 * (a.T @ (a @ y - v))
        fy = float(np.sum((a @ y - v) ** 2))
        while True:
            step = 1.0 / lips
            w_new = np.maximum(y - step * grad_y - step * beta, 0.0)
            d = w_new - y
            f_new = float(np.sum((a @ w_new - v) ** 2))
            if f_new <= fy + grad_y @ d + 0.5 * lips * (d @ d) + 1e-18:
                break
            lips *= 2.0
        obj_new = f_new + beta * float(np.sum(w_new))
        if obj_new > history[-1]:
            # restart momentum; plain proximal step from the last iterate
            t_acc = 1.0
            grad_w = 2.0 * (a.T @ (a @ w - v))
            w_new = np.maximum(w - grad_w / lips - beta / lips, 0.0)
            obj_new = _objective(a, v, w_new, beta)
            y = w_new.copy()
        else:
            t_next = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * t_acc * t_acc))
            y = w_new + (t_acc - 1.0) / t_next * (w_new - w)
            t_acc = t_next
        delta = history[-1] - obj_new
        history.append(min(obj_new, history[-1]))
        w = w_new
        if history[-2] > 0 and abs(delta) / max(history[-2], 1e-300) < tol:
            converged = True
            break

    debiased = False
    if debias and np.any(w > 0):
        support = np.nonzero(w > 0)[0]
        sub = a[:, support]
        ls, *_ = np.linalg.lstsq(sub, v, rcond=None)
        if np.all(ls >= 0):
            w = np.zeros(n)
            w[support] = ls
            debiased = True

    residuals = []
    if isinstance(dictionary, Dictionary):
        r = a @ w - v
        for block in dictionary.blocks(r):
            residuals.append(float(np.linalg.norm(block)))
    else:
        residuals.append(float(np.linalg.norm(a @ w - v)))
    return WeightFit(weights=w, beta=beta, objective_history=np.array(history),
                     residual_norms=residuals, converged=converged,
                     iterations=iterations, debiased=debiased)


def auto_beta(
    a: np.ndarray,
    v: np.ndarray,
    noise_norm: float | None = None,
    n_grid: int = 13,
    margin: float = 1.2,
) -> float:
    """Pick a penalty from a log grid spanning ``1e-4 .. 1e2 x ||A^T v||_inf``.

    With a known noise level the discrepancy rule selects the largest beta
    whose residual stays below ``margin x noise_norm``; otherwise the corner
    of the residual-versus-sparsity trade-off curve is used.
    """
    scale = float(np.abs(a.T @ v).max())
    betas = scale * np.logspace(-4, 2, n_grid)
    fits = [nn_lasso(a, v, b, max_iter=4000, tol=1e-9) for b in betas]
    residuals = np.array([np.linalg.norm(a @ f.weights - v) for f in fits])
    if noise_norm is not None:
        ok = residuals <= margin * noise_norm
        if np.any(ok):
            return float(betas[np.nonzero(ok)[0].max()])
        return float(betas[int(np.argmin(residuals))])
    l1 = np.array([np.sum(f.weights) for f in fits])
    # corner: maximal curvature of the log-log trade-off, interior points only
    lr = np.log10(np.maximum(residuals, 1e-300))
    ln = np.log10(np.maximum(l1, 1e-300))
    curvature = np.zeros(len(betas))
    for i in range(1, len(betas) - 1):
        v1 = np.array([lr[i] - lr[i - 1], ln[i] - ln[i - 1]])
        v2 = np.array([lr[i + 1] - lr[i], ln[i + 1] - ln[i]])
        cross = v1[0] * v2[1] - v1[1] * v2[0]
        curvature[i] = cross / (np.linalg.norm(v1) * np.linalg.norm(v2) + 1e-300)
    return float(betas[int(np.argmax(curvature))])


def marginals(fit: WeightFit, grid: ParameterGrid, columns: list[dict] | None = None):
    """Weight mass per diameter and per anisotropy value.

    Returns ``(per_diameter, per_anisotropy)``; each sums to the total
    weight.  ``columns`` maps weight entries to grid indices when failed
    columns were dropped from the dictionary.
    """
    nd, nk, nl = grid.shape
    cube = np.zeros((nd, nk, nl))
    if columns is None:
        if fit.weights.size != grid.n_columns:
            raise InvalidInputError("weight vector does not match the grid")
        cube = fit.weights.reshape(nd, nk, nl)
    else:
        for w, colmeta in zip(fit.weights, columns):
            i, j, l = colmeta["grid_index"]
            cube[i, j, l] += w
    return cube.sum(axis=(1, 2)), cube.sum(axis=(0, 2))


# ---------------------------------------------------------------------------
# Persistence: binary matrix + JSON manifest
# ---------------------------------------------------------------------------


def save_dictionary(dictionary: Dictionary, directory: str | Path) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    np.save(directory / "dictionary.npy", dictionary.matrix)
    manifest = {
        "times": dictionary.times.tolist(),
        "grid": {
            "diameters": list(dictionary.grid.diameters),
            "anisotropies": list(dictionary.grid.anisotropies),
            "delta_phis": list(dictionary.grid.delta_phis),
            "phi_refs": list(dictionary.grid.phi_refs),
        },
        "excitation": {
            "frequency": dictionary.excitation.frequency,
            "amplitude": dictionary.excitation.amplitude,
            "m_s": dictionary.excitation.m_s,
            "t_b": dictionary.excitation.t_b,
            "gamma": dictionary.excitation.gamma,
            "alpha": dictionary.excitation.alpha,
            "precession": dictionary.excitation.precession,
        },
        "columns": dictionary.columns,
        "failed": dictionary.failed,
        "symmetrized": dictionary.symmetrized,
    }
    (directory / "manifest.json").write_text(json.dumps(manifest, indent=2))


def load_dictionary(directory: str | Path) -> Dictionary:
    directory = Path(directory)
    matrix = np.load(directory / "dictionary.npy")
    manifest = json.loads((directory / "manifest.json").read_text())
    grid = ParameterGrid(
        diameters=tuple(manifest["grid"]["diameters"]),
        anisotropies=tuple(manifest["grid"]["anisotropies"]),
        delta_phis=tuple(manifest["grid"]["delta_phis"]),
        phi_refs=tuple(manifest["grid"]["phi_refs"]),
    )
    exc = E1Excitation(**manifest["excitation"])
    return Dictionary(
        matrix=matrix,
        grid=grid,
        times=np.array(manifest["times"]),
        excitation=exc,
        columns=manifest["columns"],
        failed=manifest["failed"],
        symmetrized=manifest["symmetrized"],
    )

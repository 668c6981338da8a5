"""Adaptive implicit integration of ``xi'(t) = M(t) xi(t)``.

The engine is the variable-order BDF stepper from :mod:`scipy.integrate`
with the system matrix supplied as the (exact) Jacobian, so each Newton
iteration amounts to one sparse triangular solve against a reused LU
factorization.  Complex-valued systems are integrated through the standard
real embedding ``[Re; Im]`` with the block matrix
``[[Re M, -Im M], [Im M, Re M]]``, which is observationally identical to
the complex flow.

Drive discontinuities are honored by restarting the stepper at caller
supplied breakpoints; for piecewise-constant drives the operator is frozen
per segment, which also keeps the factorization valid across the segment.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.integrate import BDF

from .errors import DivergenceError, InvalidParameterError, SteadyStateError, StiffnessError

logger = logging.getLogger(__name__)

__all__ = ["IntegratorConfig", "StepStats", "Trajectory", "integrate", "steady_state"]


@dataclass(frozen=True)
class IntegratorConfig:
    """Tolerances and stepping limits for one integration run.

    ``max_order`` documents the order bound of the multistep family; the
    backend implements orders 1 through 5.
    """

    rtol: float = 1e-6
    atol: float = 1e-9
    first_step: float | None = None
    max_step: float = np.inf
    max_order: int = 5

    def __post_init__(self):
        if self.rtol <= 0 or self.atol <= 0:
            raise InvalidParameterError("tolerances must be positive")
        if not 1 <= self.max_order <= 5:
            raise InvalidParameterError("the implicit multistep family supports orders 1..5")


@dataclass
class StepStats:
    """Work counters accumulated over all segments of a run.

    ``rhs_evals`` doubles as the Newton-iteration count of the implicit
    engine (one triangular solve per right-hand-side evaluation).
    """

    accepted_steps: int = 0
    matrix_assemblies: int = 0
    rhs_evals: int = 0
    jacobian_evals: int = 0
    lu_factorizations: int = 0

    def merge(self, other: "StepStats") -> None:
        self.accepted_steps += other.accepted_steps
        self.matrix_assemblies += other.matrix_assemblies
        self.rhs_evals += other.rhs_evals
        self.jacobian_evals += other.jacobian_evals
        self.lu_factorizations += other.lu_factorizations


@dataclass
class Trajectory:
    """Dense-output snapshots on the requested sample grid."""

    times: np.ndarray
    states: np.ndarray  # (n_samples, dim)
    final_time: float
    final_state: np.ndarray
    stats: StepStats = field(default_factory=StepStats)


class _CachedProvider:
    """Memoizes the most recent operator; Newton re-queries the same time."""

    def __init__(self, provider: Callable[[float], sp.spmatrix], to_real: bool):
        self._provider = provider
        self._to_real = to_real
        self._t = None
        self._matrix = None
        self.assemblies = 0

    def __call__(self, t: float) -> sp.spmatrix:
        if self._t is None or t != self._t:
            m = self._provider(t)
            if self._to_real:
                m = _real_embedding(m)
            self._matrix = sp.csr_matrix(m)
            self._t = t
            self.assemblies += 1
        return self._matrix


def _real_embedding(m: sp.spmatrix) -> sp.csr_matrix:
    mr = m.real
    mi = m.imag
    return sp.bmat([[mr, -mi], [mi, mr]], format="csr")


def _split_segments(t0: float, t1: float, breakpoints) -> list[tuple[float, float]]:
    if breakpoints is None:
        return [(t0, t1)]
    pts = np.asarray(breakpoints, dtype=float)
    pts = np.unique(pts[(pts > t0) & (pts < t1)])
    edges = np.concatenate([[t0], pts, [t1]])
    return [(edges[i], edges[i + 1]) for i in range(len(edges) - 1)]


def integrate(
    matrix_provider: Callable[[float], sp.spmatrix],
    y0: np.ndarray,
    t_span: tuple[float, float],
    samples: Sequence[float],
    config: IntegratorConfig | None = None,
    breakpoints=None,
    piecewise_constant: bool = False,
) -> Trajectory:
    """Integrate the linear system and interpolate onto ``samples``.

    Raises :class:`StiffnessError` when the step size underflows (carrying
    the failure time) and :class:`DivergenceError` when the state leaves the
    finite range.
    """
    config = config or IntegratorConfig()
    t0, t1 = float(t_span[0]), float(t_span[1])
    samples = np.asarray(samples, dtype=float)
    if samples.size and (np.any(np.diff(samples) <= 0)):
        raise InvalidParameterError("sample grid must be strictly increasing")
    if samples.size and (samples[0] < t0 or samples[-1] > t1):
        raise InvalidParameterError("sample grid must lie within the integration span")

    y0 = np.asarray(y0)
    if not np.all(np.isfinite(y0)):
        raise InvalidParameterError("initial state must be finite")
    is_complex = np.iscomplexobj(y0)
    dim = y0.shape[0]
    y = np.concatenate([y0.real, y0.imag]) if is_complex else y0.astype(float).copy()

    cached = _CachedProvider(matrix_provider, to_real=is_complex)
    stats = StepStats()
    out = np.empty((samples.size, dim), dtype=complex if is_complex else float)
    cursor = 0
    while cursor < samples.size and samples[cursor] <= t0:
        out[cursor] = y0
        cursor += 1

    for a, b in _split_segments(t0, t1, breakpoints):
        if piecewise_constant:
            frozen = cached(0.5 * (a + b))
            fun = lambda t, z: frozen @ z  # noqa: E731
            jac = lambda t, z: frozen  # noqa: E731
        else:
            fun = lambda t, z: cached(t) @ z  # noqa: E731
            jac = lambda t, z: cached(t)  # noqa: E731
        solver = BDF(
            fun, a, y, b,
            rtol=config.rtol, atol=config.atol,
            max_step=config.max_step, first_step=config.first_step,
            jac=jac,
        )
        while solver.status == "running":
            message = solver.step()
            if solver.status == "failed":
                raise StiffnessError(
                    f"implicit stepper failed at t={solver.t:.6e}: {message}", solver.t
                )
            stats.accepted_steps += 1
            if not np.all(np.isfinite(solver.y)):
                raise DivergenceError(f"state became non-finite at t={solver.t:.6e}")
            if cursor < samples.size and samples[cursor] <= solver.t:
                dense = solver.dense_output()
                while cursor < samples.size and samples[cursor] <= solver.t:
                    z = dense(samples[cursor])
                    out[cursor] = z[:dim] + 1j * z[dim:] if is_complex else z
                    cursor += 1
        stats.rhs_evals += solver.nfev
        stats.jacobian_evals += solver.njev
        stats.lu_factorizations += solver.nlu
        y = solver.y

    stats.matrix_assemblies = cached.assemblies
    final = y[:dim] + 1j * y[dim:] if is_complex else y
    while cursor < samples.size:  # samples at exactly t1
        out[cursor] = final
        cursor += 1
    return Trajectory(times=samples.copy(), states=out, final_time=t1,
                      final_state=final, stats=stats)


def steady_state(
    matrix_provider: Callable[[float], sp.spmatrix],
    mass_weights: np.ndarray,
    total: float = 1.0,
    t: float = 0.0,
    residual_tol: float = 1e-10,
) -> np.ndarray:
    """Stationary state of a static operator with the mass functional pinned.

    Solves ``M x = 0`` subject to ``mass_weights . x = total`` by replacing
    the row of the largest weight with the constraint (the operator has the
    weighted column-sum identity, so its rank deficiency is exactly one).
    The residual is checked relative to the operator scale
    ``||M||_inf ||x||``; non-convergence raises :class:`SteadyStateError`.
    """
    m = sp.csr_matrix(matrix_provider(t))
    n = m.shape[0]
    weights = np.asarray(mass_weights)
    k = int(np.argmax(np.abs(weights)))
    a = m.tolil()
    a[k, :] = weights
    rhs = np.zeros(n, dtype=a.dtype)
    rhs[k] = total
    x = spla.splu(a.tocsc()).solve(rhs)

    scale = spla.norm(m, np.inf) * np.linalg.norm(x, np.inf)
    residual = np.linalg.norm(m @ x, np.inf)
    if scale > 0 and residual > residual_tol * scale:
        raise SteadyStateError(
            f"stationary residual {residual:.3e} exceeds {residual_tol:.1e} x scale {scale:.3e}"
        )
    if abs(weights @ x - total) > 1e-9 * abs(total):
        raise SteadyStateError("mass constraint violated in stationary solve")
    return x

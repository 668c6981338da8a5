"""Physical observables: mean moment, its time derivative, induced voltage."""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import InvalidInputError
from .fields import MU0
from .fv import FvState, fv_moment_weights
from .mesh import TriMesh
from .sh import ShState, sh_dimension, sh_index

__all__ = [
    "MomentTrajectory",
    "VoltageTrace",
    "sh_moment_matrix",
    "fv_moment_matrix",
    "mean_moment_sh",
    "mean_moment_fv",
    "induced_voltage",
    "apply_periodic_filter",
    "export_trace_csv",
    "precession_comparison",
]


@dataclass
class MomentTrajectory:
    """Sampled mean magnetic moment (A m^2) and optional time derivative."""

    times: np.ndarray
    moment: np.ndarray  # (n, 3)
    m0: float
    derivative: np.ndarray | None = None  # (n, 3)

    def max_magnitude(self) -> float:
        return float(np.linalg.norm(self.moment, axis=1).max())

    def unphysical(self, slack: float = 1e-6) -> bool:
        """True when the ensemble average exceeds the single-particle moment."""
        return self.max_magnitude() > self.m0 * (1.0 + slack)


@dataclass
class VoltageTrace:
    """Induced voltage per receive channel at the moment sample times."""

    times: np.ndarray
    voltage: np.ndarray  # (n, n_channels)
    receive_profiles: np.ndarray  # (n_channels, 3)
    concentration_volume: float
    filter_kernel: np.ndarray | None = None


def sh_moment_matrix(n_max: int) -> np.ndarray:
    """(3, dim) complex map from coefficients to the (unscaled) mean moment.

    The moment of the density is carried entirely by the degree-1 modes of
    the non-normalized basis: ``m_z = (4 pi / 3) C_1^0`` while the transverse
    components mix ``C_1^{+-1}``.  Multiply the (real part of the) result by
    ``m0``.
    """
    r = np.zeros((3, sh_dimension(n_max)), dtype=complex)
    if n_max < 1:
        warnings.warn("truncation below degree 1 cannot represent a moment", stacklevel=2)
        return r
    i_m1, i_0, i_p1 = sh_index(1, -1), sh_index(1, 0), sh_index(1, 1)
    r[0, i_m1] = 2.0 * np.pi / 3.0
    r[0, i_p1] = -4.0 * np.pi / 3.0
    r[1, i_m1] = -2.0j * np.pi / 3.0
    r[1, i_p1] = -4.0j * np.pi / 3.0
    r[2, i_0] = 4.0 * np.pi / 3.0
    return r


def fv_moment_matrix(mesh: TriMesh) -> np.ndarray:
    """(3, T) map from cell averages to the (unscaled) mean moment."""
    return fv_moment_weights(mesh).T


def mean_moment_sh(state: ShState, m0: float) -> np.ndarray:
    """Mean moment of a spectral state, in A m^2."""
    return m0 * np.real(sh_moment_matrix(state.n_max) @ state.coeffs)


def mean_moment_fv(state: FvState, m0: float) -> np.ndarray:
    """Mean moment of a cell-average state, in A m^2."""
    return m0 * (fv_moment_matrix(state.mesh) @ state.u)


def apply_periodic_filter(values: np.ndarray, kernel: np.ndarray, dt: float) -> np.ndarray:
    """Circular convolution with a sampled periodic filter kernel.

    ``kernel`` must be sampled on the same uniform grid as ``values``; the
    product with ``dt`` makes the discrete sum approximate the convolution
    integral over one period.
    """
    if kernel.shape[0] != values.shape[0]:
        raise InvalidInputError("filter kernel and signal must share the sample grid")
    out = np.empty_like(values)
    kh = np.fft.rfft(kernel) * dt
    for ch in range(values.shape[1]):
        out[:, ch] = np.fft.irfft(np.fft.rfft(values[:, ch]) * kh, n=values.shape[0])
    return out


def induced_voltage(
    moment: MomentTrajectory,
    receive_profiles,
    concentration_volume: float = 1.0,
    filter_kernel: np.ndarray | None = None,
) -> VoltageTrace:
    """Receive-coil voltage ``a * (-mu0 cV p_R . dm/dt)`` per channel.

    When the trajectory carries no derivative it is formed by central
    differences on the sample grid.  The default filter is the identity;
    a sampled periodic kernel may be supplied for analog-chain modeling.
    """
    profiles = np.atleast_2d(np.asarray(receive_profiles, dtype=float))
    if moment.derivative is not None:
        dm = moment.derivative
    else:
        if moment.times.size < 2:
            raise InvalidInputError("need at least two samples to differentiate")
        dm = np.gradient(moment.moment, moment.times, axis=0)
    v = -MU0 * concentration_volume * (dm @ profiles.T)
    if filter_kernel is not None:
        dt = float(moment.times[1] - moment.times[0])
        if not np.allclose(np.diff(moment.times), dt, rtol=1e-10):
            raise InvalidInputError("filtering requires a uniform sample grid")
        v = apply_periodic_filter(v, np.asarray(filter_kernel, dtype=float), dt)
    return VoltageTrace(
        times=moment.times,
        voltage=v,
        receive_profiles=profiles,
        concentration_volume=concentration_volume,
        filter_kernel=filter_kernel,
    )


def export_trace_csv(
    moment: MomentTrajectory,
    path: str | Path,
    voltage: VoltageTrace | None = None,
    metadata: dict | None = None,
) -> None:
    """Write ``t, mx, my, mz, dmx, dmy, dmz, v_ch*`` plus a JSON sidecar."""
    path = Path(path)
    dm = moment.derivative
    if dm is None:
        dm = np.gradient(moment.moment, moment.times, axis=0)
    columns = [moment.times, *moment.moment.T, *dm.T]
    header = ["t", "mx", "my", "mz", "dmx", "dmy", "dmz"]
    if voltage is not None:
        for ch in range(voltage.voltage.shape[1]):
            header.append(f"v_ch{ch + 1}")
            columns.append(voltage.voltage[:, ch])
    table = np.column_stack(columns)
    np.savetxt(path, table, delimiter=",", header=",".join(header), comments="")
    if metadata is not None:
        sidecar = path.with_suffix(path.suffix + ".json")
        sidecar.write_text(json.dumps(metadata, indent=2, sort_keys=True))


def precession_comparison(disc, sequence, model, config=None, n_samples: int = 1000):
    """Relative moment-derivative error and runtime ratio of dropping the
    precession terms; see :func:`mnp.simulate.precession_comparison`."""
    from . import simulate  # runtime import keeps the module graph acyclic

    return simulate.precession_comparison(disc, sequence, model, config, n_samples)

"""Physical parameterization and time-dependent applied-field sequences.

Fields are carried in A/m throughout; when a magnitude is quoted in tesla
(e.g. a 20 mT drive) the caller divides by ``MU0`` once at configuration
time.  The vacuum permeability enters the rotation rates only through the
advection constants ``p1``/``p2``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Callable

import numpy as np

from .errors import InvalidParameterError

MU0 = 4.0e-7 * math.pi  # H/m
KB = 1.38064852e-23  # J/K

# Not fixed by the reference parameter set; configurable, flagged in docs.
GAMMA_DEFAULT = 1.75e11  # rad/(s T)
ALPHA_DAMPING_DEFAULT = 0.1


@dataclass(frozen=True)
class ParticleModel:
    """Material constants and the derived advection/diffusion parameters.

    ``p1``/``p3`` generate precession of the moment around the field and the
    easy axis; ``p2``/``p4`` drive the alignment.  ``tau`` is the rotational
    relaxation time; the diffusion constant of the transport equation is
    ``1/(2 tau)``.
    """

    mode: str  # "neel" | "brown"
    m_s: float  # saturation magnetization, A/m
    k_anis: float  # uniaxial anisotropy constant, J/m^3
    d_core: float  # core diameter, m
    d_hydro: float  # hydrodynamic diameter, m
    eta: float  # dynamic viscosity, Pa s
    t_b: float  # temperature, K
    gamma: float  # gyromagnetic ratio, rad/(s T)
    alpha: float  # damping constant
    k_b: float = KB
    mu0: float = MU0
    p1: float = 0.0
    p2: float = 0.0
    p3: float = 0.0
    p4: float = 0.0
    tau: float = 0.0

    @property
    def v_c(self) -> float:
        """Core volume ``pi D^3 / 6`` in m^3."""
        return math.pi * self.d_core**3 / 6.0

    @property
    def v_h(self) -> float:
        """Hydrodynamic volume in m^3."""
        return math.pi * self.d_hydro**3 / 6.0

    @property
    def m0(self) -> float:
        """Magnetic moment magnitude ``M_S V_C`` of one particle, A m^2."""
        return self.m_s * self.v_c

    @property
    def p(self) -> np.ndarray:
        return np.array([self.p1, self.p2, self.p3, self.p4])

    def without_precession(self) -> "ParticleModel":
        """Copy with the precession constants ``p1`` and ``p3`` zeroed."""
        return replace(self, p1=0.0, p3=0.0)


def _check_positive(**values: float) -> None:
    for name, value in values.items():
        if not (value > 0.0) or not math.isfinite(value):
            raise InvalidParameterError(f"{name} must be positive and finite, got {value!r}")


def neel_params(
    m_s: float,
    k_anis: float,
    d_core: float,
    t_b: float,
    gamma: float = GAMMA_DEFAULT,
    alpha: float = ALPHA_DAMPING_DEFAULT,
    d_hydro: float | None = None,
    eta: float = 1.0e-5,
) -> ParticleModel:
    """Internal-rotation parameter set.

    With ``g = gamma / (1 + alpha^2)``:
    ``p1 = g mu0``, ``p2 = g alpha mu0``, ``p3 = 2 g K / M_S``,
    ``p4 = 2 g alpha K / M_S`` and ``tau = V_C M_S / (2 kB T g alpha)``.
    ``alpha -> 0`` is rejected because the relaxation time diverges.
    """
    _check_positive(m_s=m_s, d_core=d_core, t_b=t_b, gamma=gamma, alpha=alpha)
    if k_anis < 0.0 or not math.isfinite(k_anis):
        raise InvalidParameterError(f"k_anis must be non-negative, got {k_anis!r}")
    d_hydro = d_core if d_hydro is None else d_hydro
    if d_hydro < d_core:
        raise InvalidParameterError("hydrodynamic diameter cannot be below the core diameter")
    g = gamma / (1.0 + alpha**2)
    v_c = math.pi * d_core**3 / 6.0
    return ParticleModel(
        mode="neel",
        m_s=m_s,
        k_anis=k_anis,
        d_core=d_core,
        d_hydro=d_hydro,
        eta=eta,
        t_b=t_b,
        gamma=gamma,
        alpha=alpha,
        p1=g * MU0,
        p2=g * alpha * MU0,
        p3=2.0 * g * k_anis / m_s,
        p4=2.0 * g * alpha * k_anis / m_s,
        tau=v_c * m_s / (2.0 * KB * t_b * g * alpha),
    )


def brown_params(
    m_s: float,
    d_core: float,
    d_hydro: float,
    eta: float,
    t_b: float,
    gamma: float = GAMMA_DEFAULT,
    alpha: float = ALPHA_DAMPING_DEFAULT,
) -> ParticleModel:
    """Rigid-body rotation parameter set.

    ``p2 = mu0 V_C M_S / (6 eta V_H)``, ``p1 = p3 = p4 = 0`` and
    ``tau = 3 V_H eta / (kB T)``.
    """
    _check_positive(m_s=m_s, d_core=d_core, d_hydro=d_hydro, eta=eta, t_b=t_b)
    if d_hydro < d_core:
        raise InvalidParameterError("hydrodynamic diameter cannot be below the core diameter")
    v_c = math.pi * d_core**3 / 6.0
    v_h = math.pi * d_hydro**3 / 6.0
    return ParticleModel(
        mode="brown",
        m_s=m_s,
        k_anis=0.0,
        d_core=d_core,
        d_hydro=d_hydro,
        eta=eta,
        t_b=t_b,
        gamma=gamma,
        alpha=alpha,
        p2=MU0 * v_c * m_s / (6.0 * eta * v_h),
        tau=3.0 * v_h * eta / (KB * t_b),
    )


def advection_field(m, h, n, model: ParticleModel) -> np.ndarray:
    """Drift velocity on the sphere at moment direction(s) ``m``.

    ``b = p1 H x m + p2 (m x H) x m + p3 (n.m) n x m + p4 (n.m) (m x n) x m``.
    Broadcasts over leading axes of ``m``; the result is tangent to the
    sphere at ``m``.
    """
    m = np.asarray(m, dtype=float)
    h = np.broadcast_to(np.asarray(h, dtype=float), m.shape)
    n = np.broadcast_to(np.asarray(n, dtype=float), m.shape)
    out = np.zeros(m.shape)
    if model.p1 != 0.0:
        out += model.p1 * np.cross(h, m)
    if model.p2 != 0.0:
        out += model.p2 * np.cross(np.cross(m, h), m)
    if model.p3 != 0.0 or model.p4 != 0.0:
        ndotm = np.sum(n * m, axis=-1)[..., None]
        if model.p3 != 0.0:
            out += model.p3 * ndotm * np.cross(n, m)
        if model.p4 != 0.0:
            out += model.p4 * ndotm * np.cross(np.cross(m, n), m)
    return out


# ---------------------------------------------------------------------------
# Excitation sequences
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SineSpec:
    amplitude: float  # A/m
    frequency: float  # Hz
    direction: tuple[float, float, float]


@dataclass(frozen=True)
class PulseSpec:
    amplitude: float  # staircase amplitude, A/m
    amplitude_pulsed: float  # square-wave amplitude, A/m
    frequency_pulsed: float  # Hz
    n_steps: int
    delta_t: float  # s


@dataclass(frozen=True)
class FieldSequence:
    """Drive field, static offset, and easy-axis evolution on ``[0, horizon]``.

    ``drive(t)`` accepts scalar or array times and returns shape ``t + (3,)``;
    the applied field is ``drive(t) + h_s``.  ``breakpoints`` lists the times
    where the drive is discontinuous (pulsed sequences), which integrators
    use to restart; ``piecewise_constant`` marks drives that are constant
    between consecutive breakpoints.
    """

    drive: Callable[[np.ndarray], np.ndarray]
    h_s: np.ndarray
    easy_axis: Callable[[np.ndarray], np.ndarray]
    period: float
    horizon: float
    breakpoints: np.ndarray
    piecewise_constant: bool = False
    sine: SineSpec | None = None
    pulse: PulseSpec | None = None

    def applied_field(self, t) -> np.ndarray:
        return self.drive(np.asarray(t, dtype=float)) + self.h_s

    def axis(self, t) -> np.ndarray:
        return self.easy_axis(np.asarray(t, dtype=float))


def fixed_axis(n) -> Callable[[np.ndarray], np.ndarray]:
    """Constant easy axis; the input is normalized once."""
    n = np.asarray(n, dtype=float)
    norm = np.linalg.norm(n)
    if norm <= 0:
        raise InvalidParameterError("easy axis must be a nonzero vector")
    n = n / norm
    def axis(t):
        t = np.asarray(t, dtype=float)
        return np.broadcast_to(n, t.shape + (3,))
    return axis


def axis_in_plane(phi: float) -> Callable[[np.ndarray], np.ndarray]:
    """Easy axis ``(cos phi, sin phi, 0)`` in the drive plane."""
    return fixed_axis([math.cos(phi), math.sin(phi), 0.0])


def staircase(t, a: float, b: float, period: float, n_steps: int, delta_t: float):
    """Stepping profile ``(b-a)/(N-1) * floor((t - delta_t)/T) + a``."""
    t = np.asarray(t, dtype=float)
    return (b - a) / (n_steps - 1) * np.floor((t - delta_t) / period) + a


def sinusoidal_sequence(
    amplitude: float,
    frequency: float,
    h_s=(0.0, 0.0, 0.0),
    direction=(1.0, 0.0, 0.0),
    easy_axis=None,
    n_periods: float = 1.0,
) -> FieldSequence:
    """Drive ``A sin(2 pi f t)`` along ``direction`` plus a static offset."""
    _check_positive(amplitude=amplitude, frequency=frequency, n_periods=n_periods)
    e = np.asarray(direction, dtype=float)
    e = e / np.linalg.norm(e)
    axis = easy_axis if easy_axis is not None else fixed_axis([1.0, 0.0, 0.0])

    def drive(t):
        t = np.asarray(t, dtype=float)
        return amplitude * np.sin(2.0 * math.pi * frequency * t)[..., None] * e

    return FieldSequence(
        drive=drive,
        h_s=np.asarray(h_s, dtype=float),
        easy_axis=axis,
        period=1.0 / frequency,
        horizon=n_periods / frequency,
        breakpoints=np.empty(0),
        sine=SineSpec(amplitude, frequency, tuple(e)),
    )


def pulsed_sequence(
    amplitude: float,
    amplitude_pulsed: float,
    frequency_pulsed: float,
    n_steps: int,
    delta_t: float | None = None,
    h_s=(0.0, 0.0, 0.0),
    easy_axis=None,
) -> FieldSequence:
    """Staircase drive along e1 with a fast square wave along e2.

    The staircase visits ``n_steps`` equidistant levels in ``[-A, A]``,
    advancing once per square-wave period ``T = 1/f_pulsed`` and holding its
    end values outside the sweep.  ``delta_t`` (default ``T/4``) offsets the
    staircase so level changes never coincide with square-wave sign flips;
    the square wave uses ``sign(0) = +1``.  Breakpoints enumerate every
    discontinuity of either component.
    """
    _check_positive(
        amplitude=amplitude,
        amplitude_pulsed=amplitude_pulsed,
        frequency_pulsed=frequency_pulsed,
    )
    if n_steps < 2:
        raise InvalidParameterError("a staircase needs at least 2 levels")
    t_pulsed = 1.0 / frequency_pulsed
    if delta_t is None:
        delta_t = t_pulsed / 4.0
    if not (0.0 < delta_t < t_pulsed):
        raise InvalidParameterError("delta_t must lie strictly inside one pulse period")
    axis = easy_axis if easy_axis is not None else fixed_axis([1.0, 0.0, 0.0])
    horizon = delta_t + n_steps * t_pulsed

    def drive(t):
        t = np.asarray(t, dtype=float)
        step = np.clip(np.floor((t - delta_t) / t_pulsed), 0, n_steps - 1)
        level = 2.0 / (n_steps - 1) * step - 1.0
        square = np.where(np.sin(2.0 * math.pi * frequency_pulsed * t) >= 0.0, 1.0, -1.0)
        out = np.zeros(t.shape + (3,))
        out[..., 0] = amplitude * level
        out[..., 1] = amplitude_pulsed * square
        return out

    x_jumps = delta_t + t_pulsed * np.arange(1, n_steps)
    y_jumps = 0.5 * t_pulsed * np.arange(1, int(np.floor(horizon / (0.5 * t_pulsed))) + 1)
    breakpoints = np.unique(np.concatenate([x_jumps, y_jumps]))
    breakpoints = breakpoints[(breakpoints > 0.0) & (breakpoints < horizon)]

    return FieldSequence(
        drive=drive,
        h_s=np.asarray(h_s, dtype=float),
        easy_axis=axis,
        period=t_pulsed,
        horizon=horizon,
        breakpoints=breakpoints,
        piecewise_constant=True,
        pulse=PulseSpec(amplitude, amplitude_pulsed, frequency_pulsed, n_steps, delta_t),
    )

"""Spectral Galerkin discretization of the rotation transport equation.

The probability density on the sphere is expanded in non-normalized complex
spherical harmonics ``Y_r^q = P_r^q(cos theta) e^{i q phi}`` (Ferrers
functions with Condon-Shortley phase, negative orders scaled by
``(-1)^q (r-q)!/(r+q)!``).  In this basis the advection-diffusion operator
is a banded matrix coupling ``|dr| <= 2`` and ``|dq| <= 2``, with closed-form
entries: the rotational diffusion contributes ``-r(r+1)/(2 tau)`` on the
diagonal, the field terms are linear in the applied field components, and
the uniaxial-anisotropy terms are quadratic forms in the easy-axis
components.

:class:`ShAssembler` precomputes the sparsity pattern and the field/axis
independent rational factors once per truncation degree; assembling the
operator for one time point then reduces to a single dense
(scalars x factor-table) product scattered into a fixed CSR layout.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
import scipy.sparse as sp
from scipy.special import gammaln

from .errors import InvalidParameterError
from .fields import FieldSequence, ParticleModel

__all__ = [
    "sh_index",
    "sh_unindex",
    "sh_dimension",
    "ShState",
    "ShAssembler",
    "sh_initial_uniform",
    "sh_matrix_provider",
    "mass",
    "degree_energies",
    "truncation_fraction",
    "conjugate_state",
    "reality_defect",
]


def sh_dimension(n_max: int) -> int:
    return (n_max + 1) ** 2


def sh_index(r: int, q: int) -> int:
    """Flat position of coefficient ``(r, q)``: degree-major, order ascending."""
    if r < 0 or abs(q) > r:
        raise InvalidParameterError(f"invalid quantum numbers (r={r}, q={q})")
    return r * r + r + q


def sh_unindex(index: int) -> tuple[int, int]:
    """Inverse of :func:`sh_index`."""
    if index < 0:
        raise InvalidParameterError(f"index must be non-negative, got {index}")
    r = int(math.isqrt(index))
    q = index - r * r - r
    return r, q


@dataclass
class ShState:
    """Coefficient vector of a density, flat in the :func:`sh_index` order."""

    n_max: int
    coeffs: np.ndarray  # complex, length (n_max + 1)^2

    def copy(self) -> "ShState":
        return ShState(self.n_max, self.coeffs.copy())


def sh_initial_uniform(n_max: int) -> ShState:
    """Uniform density: only the constant mode, ``C_0^0 = 1/(4 pi)``."""
    if n_max < 0:
        raise InvalidParameterError("n_max must be non-negative")
    coeffs = np.zeros(sh_dimension(n_max), dtype=complex)
    coeffs[0] = 1.0 / (4.0 * np.pi)
    return ShState(n_max, coeffs)


def mass(state: ShState) -> float:
    """Total probability ``4 pi C_0^0`` (conserved by the flow)."""
    return 4.0 * np.pi * state.coeffs[0].real


def _mode_weights(n_max: int) -> np.ndarray:
    """L2 norms ``int |Y_r^q|^2`` of the basis functions, flat order."""
    dim = sh_dimension(n_max)
    idx = np.arange(dim)
    r = np.floor(np.sqrt(idx)).astype(int)
    q = idx - r * r - r
    aq = np.abs(q)
    log_ratio = np.where(
        q >= 0,
        gammaln(r + aq + 1) - gammaln(r - aq + 1),
        gammaln(r - aq + 1) - gammaln(r + aq + 1),
    )
    return 4.0 * np.pi / (2 * r + 1) * np.exp(log_ratio)


def degree_energies(state: ShState) -> np.ndarray:
    """L2 energy per degree r, ``sum_q |C_r^q|^2 int |Y_r^q|^2``."""
    w = _mode_weights(state.n_max)
    e = w * np.abs(state.coeffs) ** 2
    out = np.zeros(state.n_max + 1)
    for r in range(state.n_max + 1):
        out[r] = np.sum(e[r * r : (r + 1) * (r + 1)])
    return out


def truncation_fraction(state: ShState) -> float:
    """Energy share of the two highest degrees; > 1e-6 signals truncation."""
    e = degree_energies(state)
    total = e.sum()
    if total == 0.0 or state.n_max < 2:
        return 0.0
    return float(e[-2:].sum() / total)


def conjugate_state(coeffs: np.ndarray, n_max: int) -> np.ndarray:
    """Coefficients of the complex conjugate density.

    With the scaled negative orders of this basis,
    ``conj(f)`` has coefficients ``(-1)^q (r-q)!/(r+q)! conj(C_r^{-q})``;
    densities of real functions are exactly the fixed points of this
    antilinear reflection.
    """
    out = np.empty_like(coeffs)
    for r in range(n_max + 1):
        base = r * r + r
        for q in range(-r, r + 1):
            ratio = math.exp(gammaln(r - q + 1) - gammaln(r + q + 1))
            out[base + q] = (-1.0) ** q * ratio * np.conj(coeffs[base - q])
    return out


def reality_defect(state: ShState) -> float:
    """Relative L2 distance between the density and its complex conjugate."""
    w = _mode_weights(state.n_max)
    diff = state.coeffs - conjugate_state(state.coeffs, state.n_max)
    norm = np.sqrt(np.sum(w * np.abs(state.coeffs) ** 2))
    if norm == 0.0:
        return 0.0
    return float(np.sqrt(np.sum(w * np.abs(diff) ** 2)) / norm)


# ---------------------------------------------------------------------------
# Operator assembly
# ---------------------------------------------------------------------------

# One term = (scalar key, target offset (dr, dq), factor(l, m)).  The factor
# tables are rational in the row quantum numbers; every denominator below is
# an odd integer, nonzero for all l once invalid targets are masked.

def _field_terms():
    return [
        # precession around the applied field
        ("p1_plus", 0, +1, lambda l, m: (l - m) * (l + m + 1.0)),
        ("p1_minus", 0, -1, lambda l, m: np.ones_like(l, dtype=float)),
        ("p1_z", 0, 0, lambda l, m: m.astype(float)),
        # alignment with the applied field
        ("p2_z", -1, 0, lambda l, m: (l + 1.0) * (l - m) / (2 * l - 1.0)),
        ("p2_z", +1, 0, lambda l, m: -l * (l + m + 1.0) / (2 * l + 3.0)),
        ("p2_plus", -1, +1, lambda l, m: (l + 1.0) * (l - m) * (l - m - 1.0) / (4 * l - 2.0)),
        ("p2_plus", +1, +1, lambda l, m: l * (l + m + 1.0) * (l + m + 2.0) / (4 * l + 6.0)),
        ("p2_minus", -1, -1, lambda l, m: -(l + 1.0) / (4 * l - 2.0)),
        ("p2_minus", +1, -1, lambda l, m: -l / (4 * l + 6.0)),
    ]


def _axis_terms():
    i = 1.0j
    return [
        # easy-axis precession, degree-odd coupling
        ("p3_mm", -1, -2, lambda l, m: i / (4 * (2 * l - 1.0)) + 0.0 * l),
        ("p3_mm", +1, -2, lambda l, m: -i / (4 * (2 * l + 3.0)) + 0.0 * l),
        ("p3_zm", -1, -1, lambda l, m: i * (2 * m - l - 1.0) / (2 * (2 * l - 1.0))),
        ("p3_zm", +1, -1, lambda l, m: -i * (2 * m + l) / (2 * (2 * l + 3.0))),
        ("p3_d", -1, 0, lambda l, m: i * m * (l - m) / (2 * (2 * l - 1.0))),
        ("p3_d", +1, 0, lambda l, m: i * m * (l + m + 1.0) / (2 * (2 * l + 3.0))),
        ("p3_zp", -1, +1, lambda l, m: -i * (l - m) * (l - m - 1.0) * (2 * m + l + 1.0) / (2 * (2 * l - 1.0))),
        ("p3_zp", +1, +1, lambda l, m: i * (2 * m - l) * (l + m + 1.0) * (l + m + 2.0) / (2 * (2 * l + 3.0))),
        ("p3_pp", -1, +2, lambda l, m: -i * (l - m) * (l - m - 1.0) * (l - m - 2.0) * (l + m + 1.0) / (4 * (2 * l - 1.0))),
        ("p3_pp", +1, +2, lambda l, m: i * (l - m) * (l + m + 1.0) * (l + m + 2.0) * (l + m + 3.0) / (4 * (2 * l + 3.0))),
        # easy-axis alignment, degree-even coupling
        ("p4_mm", -2, -2, lambda l, m: (l + 1.0) / (4 * (2 * l - 3.0) * (2 * l - 1.0))),
        ("p4_mm", 0, -2, lambda l, m: -3.0 / (4 * (2 * l - 1.0) * (2 * l + 3.0)) + 0.0 * l),
        ("p4_mm", +2, -2, lambda l, m: -l / (4 * (2 * l + 3.0) * (2 * l + 5.0))),
        ("p4_zm", -2, -1, lambda l, m: -(l + 1.0) * (l - m) / ((2 * l - 3.0) * (2 * l - 1.0))),
        ("p4_zm", 0, -1, lambda l, m: -3.0 * (2 * m - 1.0) / (2 * (2 * l - 1.0) * (2 * l + 3.0))),
        ("p4_zm", +2, -1, lambda l, m: -l * (l + m + 1.0) / ((2 * l + 3.0) * (2 * l + 5.0))),
        ("p4_d", -2, 0, lambda l, m: -(l + 1.0) * (l - m) * (l - m - 1.0) / (2 * (2 * l - 3.0) * (2 * l - 1.0))),
        ("p4_d", 0, 0, lambda l, m: -(l * (l + 1.0) - 3.0 * m**2) / (2 * (2 * l - 1.0) * (2 * l + 3.0))),
        ("p4_d", +2, 0, lambda l, m: l * (l + m + 1.0) * (l + m + 2.0) / (2 * (2 * l + 3.0) * (2 * l + 5.0))),
        ("p4_zp", -2, +1, lambda l, m: (l + 1.0) * (l - m) * (l - m - 2.0) * (l - m - 1.0) / ((2 * l - 3.0) * (2 * l - 1.0))),
        ("p4_zp", 0, +1, lambda l, m: -3.0 * (2 * m + 1.0) * (l - m) * (l + m + 1.0) / (2 * (2 * l - 1.0) * (2 * l + 3.0))),
        ("p4_zp", +2, +1, lambda l, m: l * (l + m + 1.0) * (l + m + 2.0) * (l + m + 3.0) / ((2 * l + 3.0) * (2 * l + 5.0))),
        ("p4_pp", -2, +2, lambda l, m: (l + 1.0) * (l - m) * (l - m - 3.0) * (l - m - 2.0) * (l - m - 1.0) / (4 * (2 * l - 3.0) * (2 * l - 1.0))),
        ("p4_pp", 0, +2, lambda l, m: -3.0 * (l - m) * (l - m - 1.0) * (l + m + 1.0) * (l + m + 2.0) / (4 * (2 * l - 1.0) * (2 * l + 3.0))),
        ("p4_pp", +2, +2, lambda l, m: -l * (l + m + 1.0) * (l + m + 2.0) * (l + m + 3.0) * (l + m + 4.0) / (4 * (2 * l + 3.0) * (2 * l + 5.0))),
    ]


_SCALAR_KEYS = (
    "diffusion",
    "p1_plus", "p1_minus", "p1_z",
    "p2_z", "p2_plus", "p2_minus",
    "p3_mm", "p3_zm", "p3_d", "p3_zp", "p3_pp",
    "p4_mm", "p4_zm", "p4_d", "p4_zp", "p4_pp",
)


class ShAssembler:
    """Banded operator factory for a fixed truncation degree.

    Parameters
    ----------
    n_max : int
        Highest retained degree, at least 2.

    Notes
    -----
    The assembled matrix row of the constant mode is identically zero, which
    makes the total probability an exact invariant of the semidiscrete flow.
    """

    def __init__(self, n_max: int):
        if n_max < 2:
            raise InvalidParameterError("n_max must be at least 2")
        self.n_max = n_max
        self.dim = sh_dimension(n_max)

        idx = np.arange(self.dim)
        l = np.floor(np.sqrt(idx)).astype(np.int64)
        m = idx - l * l - l

        rows_all: list[np.ndarray] = []
        cols_all: list[np.ndarray] = []
        vals_all: list[np.ndarray] = []
        term_all: list[np.ndarray] = []

        terms = [("diffusion", 0, 0, lambda l, m: -l * (l + 1.0))]
        terms += _field_terms()
        terms += _axis_terms()
        for key, dr, dq, factor in terms:
            tgt_l = l + dr
            tgt_m = m + dq
            valid = (tgt_l >= 0) & (tgt_l <= n_max) & (np.abs(tgt_m) <= tgt_l)
            vals = np.asarray(factor(l.astype(float), m.astype(float)), dtype=complex)
            vals = np.broadcast_to(vals, l.shape).copy()
            keep = valid & (vals != 0.0)
            rows_all.append(idx[keep])
            cols_all.append(tgt_l[keep] ** 2 + tgt_l[keep] + tgt_m[keep])
            vals_all.append(vals[keep])
            term_all.append(np.full(keep.sum(), _SCALAR_KEYS.index(key), dtype=np.int64))

        rows = np.concatenate(rows_all)
        cols = np.concatenate(cols_all)
        vals = np.concatenate(vals_all)
        term = np.concatenate(term_all)

        # canonical CSR layout shared by every assembly
        order = np.lexsort((cols, rows))
        rows, cols, vals, term = rows[order], cols[order], vals[order], term[order]
        pattern = rows.astype(np.int64) * self.dim + cols
        unique, slot = np.unique(pattern, return_inverse=True)
        self._indices = (unique % self.dim).astype(np.int32)
        counts = np.bincount((unique // self.dim).astype(np.int64), minlength=self.dim)
        self._indptr = np.concatenate([[0], np.cumsum(counts)]).astype(np.int32)

        self._factors = np.zeros((len(_SCALAR_KEYS), unique.size), dtype=complex)
        np.add.at(self._factors, (term, slot), vals)

    def scalars(self, h, n, model: ParticleModel, precession: bool = True) -> np.ndarray:
        """Per-term prefactors for one applied field and easy axis."""
        h1, h2, h3 = (float(x) for x in np.asarray(h, dtype=float))
        n1, n2, n3 = (float(x) for x in np.asarray(n, dtype=float))
        p1 = model.p1 if precession else 0.0
        p2 = model.p2
        p3 = model.p3 if precession else 0.0
        p4 = model.p4
        hp = h1 + 1j * h2
        hm = h1 - 1j * h2
        npl = n1 + 1j * n2
        nmi = n1 - 1j * n2
        forms = np.array([nmi * nmi, n3 * nmi, n1 * n1 + n2 * n2 - 2.0 * n3 * n3,
                          n3 * npl, npl * npl])
        return np.concatenate([
            [1.0 / (2.0 * model.tau), -0.5j * p1 * hp, -0.5j * p1 * hm, -1j * p1 * h3,
             p2 * h3, p2 * hp, p2 * hm],
            p3 * forms,
            p4 * forms,
        ])

    def matrix(self, h, n, model: ParticleModel, precession: bool = True) -> sp.csr_matrix:
        """Operator for one applied field (A/m) and easy axis (unit vector)."""
        data = self.scalars(h, n, model, precession) @ self._factors
        return sp.csr_matrix((data, self._indices, self._indptr),
                             shape=(self.dim, self.dim))


def sh_matrix_provider(
    assembler: ShAssembler,
    sequence: FieldSequence,
    model: ParticleModel,
    precession: bool = True,
) -> Callable[[float], sp.csr_matrix]:
    """Time-dependent operator ``t -> M(t)`` for a field sequence."""

    def provider(t: float) -> sp.csr_matrix:
        h = sequence.applied_field(t)
        n = sequence.axis(t)
        return assembler.matrix(h, n, model, precession)

    return provider

"""Independent numerical oracles used by the test suite and ``mnp validate``.

Everything in this module is implemented from first principles (statistical
mechanics, quadrature, brute-force convolution) so it shares no numerical
kernels with the solver modules it checks.  In particular the spherical
harmonics here are synthesized through :func:`scipy.special.lpmv` and
differentiated by finite differences, while the solvers use closed-form
coupling coefficients.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln, lpmv

__all__ = [
    "langevin",
    "langevin_moment",
    "boltzmann_moment",
    "adiabatic_kernel",
    "SphereGrid",
    "sphere_grid",
    "sphere_integrate",
    "sphere_moment",
    "sph_harm_nonnorm",
    "synthesize",
    "quadrature_coefficient_rates",
    "circular_convolve",
]


def langevin(x: float) -> float:
    """Langevin function ``L(x) = coth(x) - 1/x``.

    The removable singularity at the origin is handled by the series
    ``x/3 - x^3/45 + 2 x^5/945`` which is accurate to better than 1e-16
    for ``|x| < 1e-2``.
    """
    x = float(x)
    if abs(x) < 1e-2:
        return x / 3.0 - x**3 / 45.0 + 2.0 * x**5 / 945.0
    return 1.0 / math.tanh(x) - 1.0 / x


def langevin_moment(h_magnitude: float, model) -> float:
    """Equilibrium mean moment along a static field of magnitude ``h`` (A/m).

    Valid for vanishing anisotropy, where the stationary distribution of the
    rotation dynamics is the Boltzmann distribution and the ensemble average
    reduces to ``m0 * L(mu0 * m0 * h / (kB * T))``.
    """
    xi = model.mu0 * model.m0 * h_magnitude / (model.k_b * model.t_b)
    return model.m0 * langevin(xi)


def adiabatic_kernel(offsets: np.ndarray, model, gradient: float) -> np.ndarray:
    """Instant-relaxation x-space point spread, ``L'(a u)`` up to scale.

    ``offsets`` are spatial distances from the field-free point (m) and
    ``gradient`` the drive-direction selection gradient (A/m per m), i.e.
    ``G/2`` for the transverse channels of ``Q_G = G diag(-1/2,-1/2,1)``.
    The returned profile is normalized to unit peak.
    """
    a = model.mu0 * model.m0 * gradient / (model.k_b * model.t_b)
    x = a * np.asarray(offsets, dtype=float)
    small = np.abs(x) < 1e-4
    out = np.empty_like(x)
    out[small] = 1.0 / 3.0 - x[small] ** 2 / 15.0
    xs = x[~small]
    out[~small] = 1.0 / xs**2 - 1.0 / np.sinh(xs) ** 2
    return out / out.max()


# ---------------------------------------------------------------------------
# Sphere quadrature (Gauss-Legendre x uniform azimuth product rule)
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SphereGrid:
    """Product quadrature grid on S^2 with per-node solid-angle weights."""

    theta: np.ndarray  # (n_theta,)
    phi: np.ndarray  # (n_phi,)
    weights: np.ndarray  # (n_theta, n_phi), sums to 4*pi
    points: np.ndarray  # (n_theta, n_phi, 3) unit vectors


def sphere_grid(n_theta: int = 64, n_phi: int = 128) -> SphereGrid:
    """Gauss-Legendre nodes in cos(theta) crossed with a uniform phi grid.

    Exact for spherical-harmonic expansions of degree <= n_theta - 2 once the
    azimuthal order is below n_phi/2 (uniform sums integrate trigonometric
    polynomials exactly).
    """
    x, wx = np.polynomial.legendre.leggauss(n_theta)
    theta = np.arccos(x[::-1])
    wx = wx[::-1]
    phi = np.arange(n_phi) * (2.0 * np.pi / n_phi)
    weights = np.outer(wx, np.full(n_phi, 2.0 * np.pi / n_phi))
    st = np.sin(theta)[:, None]
    points = np.stack(
        [
            st * np.cos(phi)[None, :],
            st * np.sin(phi)[None, :],
            np.broadcast_to(np.cos(theta)[:, None], (n_theta, n_phi)),
        ],
        axis=-1,
    )
    return SphereGrid(theta=theta, phi=phi, weights=weights, points=points)


def sphere_integrate(values: np.ndarray, grid: SphereGrid):
    """Integrate node values over the sphere."""
    return np.sum(values * grid.weights, axis=(-2, -1))


def sphere_moment(values: np.ndarray, grid: SphereGrid) -> np.ndarray:
    """First moment ``integral of m f(m) dm`` of a density sampled on the grid."""
    return np.array(
        [sphere_integrate(values * grid.points[..., k], grid) for k in range(3)]
    )


# ---------------------------------------------------------------------------
# Non-normalized spherical harmonics
# ---------------------------------------------------------------------------


def _assoc_legendre(l: int, m: int, x: np.ndarray) -> np.ndarray:
    """Ferrers function P_l^m with Condon-Shortley phase, any integer order.

    Negative orders follow P_l^{-m} = (-1)^m (l-m)!/(l+m)! P_l^m, which is the
    unique extension consistent with the orthogonality relation
    ``int Y_l^m Y_L^{-M} = 4 pi (-1)^M / (2L+1) delta delta``.
    """
    if abs(m) > l:
        return np.zeros_like(x)
    if m >= 0:
        return lpmv(m, l, x)
    k = -m
    scale = (-1.0) ** k * math.exp(gammaln(l - k + 1) - gammaln(l + k + 1))
    return scale * lpmv(k, l, x)


def sph_harm_nonnorm(l: int, m: int, theta: np.ndarray, phi: np.ndarray) -> np.ndarray:
    """Non-normalized spherical harmonic ``P_l^m(cos theta) e^{i m phi}``."""
    return _assoc_legendre(l, m, np.cos(theta)) * np.exp(1j * m * np.asarray(phi))


def _theta_derivative(l: int, m: int, theta: np.ndarray) -> np.ndarray:
    """d/dtheta of P_l^m(cos theta) by 5-point central differences."""
    h = 5e-4
    stencil = (
        _assoc_legendre(l, m, np.cos(theta - 2 * h))
        - 8.0 * _assoc_legendre(l, m, np.cos(theta - h))
        + 8.0 * _assoc_legendre(l, m, np.cos(theta + h))
        - _assoc_legendre(l, m, np.cos(theta + 2 * h))
    )
    return stencil / (12.0 * h)


def synthesize(coeffs: np.ndarray, n_max: int, grid: SphereGrid) -> np.ndarray:
    """Evaluate ``sum_{r,q} C_r^q Y_r^q`` on the grid.

    ``coeffs`` is flat in the row-major ordering ``index = r^2 + r + q``.
    """
    out = np.zeros(grid.weights.shape, dtype=complex)
    for r in range(n_max + 1):
        for q in range(-r, r + 1):
            c = coeffs[r * r + r + q]
            if c != 0.0:
                p = _assoc_legendre(r, q, np.cos(grid.theta))
                out += c * p[:, None] * np.exp(1j * q * grid.phi)[None, :]
    return out


def _advection_on_grid(points, h_field, n_axis, p) -> np.ndarray:
    """Rotation-model velocity field evaluated node-wise (kept inline here)."""
    m = points
    h = np.asarray(h_field, dtype=float)
    n = np.asarray(n_axis, dtype=float)
    hxm = np.cross(np.broadcast_to(h, m.shape), m)
    mxh_xm = np.cross(np.cross(m, np.broadcast_to(h, m.shape)), m)
    ndotm = m @ n
    nxm = np.cross(np.broadcast_to(n, m.shape), m)
    mxn_xm = np.cross(np.cross(m, np.broadcast_to(n, m.shape)), m)
    return (
        p[0] * hxm
        + p[1] * mxh_xm
        + p[2] * ndotm[..., None] * nxm
        + p[3] * ndotm[..., None] * mxn_xm
    )


def quadrature_coefficient_rates(
    coeffs: np.ndarray,
    n_max: int,
    h_field,
    n_axis,
    p,
    tau: float,
    grid: SphereGrid | None = None,
) -> np.ndarray:
    """Time derivative of every SH coefficient of a band-limited density.

    Projects the advection-diffusion right-hand side onto the non-normalized
    basis by quadrature,

        dC_r^q/dt = (2r+1)/(4 pi (-1)^q) *
                    [ -r(r+1)/(2 tau) <f, Y_r^{-q}> + <f, b . grad Y_r^{-q}> ],

    where the advection part comes from integration by parts and the gradient
    of each test harmonic is assembled from finite-difference theta
    derivatives and the analytic azimuthal derivative.  Serves as an oracle
    for the coupling-coefficient assembly: it never touches those closed
    forms.
    """
    if grid is None:
        grid = sphere_grid(2 * n_max + 12, 4 * n_max + 24)
    f = synthesize(coeffs, n_max, grid)
    b = _advection_on_grid(grid.points, h_field, n_axis, np.asarray(p, dtype=float))

    theta = grid.theta
    st = np.sin(theta)
    ct = np.cos(theta)
    cp, sp = np.cos(grid.phi), np.sin(grid.phi)
    # unit vectors of the spherical frame at each node
    theta_hat = np.stack(
        [
            np.outer(ct, cp),
            np.outer(ct, sp),
            np.broadcast_to((-st)[:, None], grid.weights.shape).copy(),
        ],
        axis=-1,
    )
    phi_hat = np.stack(
        [
            np.broadcast_to(-sp[None, :], grid.weights.shape).copy(),
            np.broadcast_to(cp[None, :], grid.weights.shape).copy(),
            np.zeros(grid.weights.shape),
        ],
        axis=-1,
    )
    b_theta = np.sum(b * theta_hat, axis=-1)
    b_phi = np.sum(b * phi_hat, axis=-1)

    rates = np.zeros((n_max + 1) ** 2, dtype=complex)
    for r in range(n_max + 1):
        for q in range(-r, r + 1):
            exp_mq = np.exp(-1j * q * grid.phi)[None, :]
            y_conj_like = _assoc_legendre(r, -q, ct)[:, None] * exp_mq
            dtheta = _theta_derivative(r, -q, theta)[:, None] * exp_mq
            dphi_over_sin = (
                (-1j * q) * _assoc_legendre(r, -q, ct) / st
            )[:, None] * exp_mq
            integrand = f * (b_theta * dtheta + b_phi * dphi_over_sin)
            adv = sphere_integrate(integrand, grid)
            diff = -r * (r + 1) / (2.0 * tau) * sphere_integrate(f * y_conj_like, grid)
            rates[r * r + r + q] = (2 * r + 1) / (4.0 * np.pi * (-1.0) ** q) * (
                adv + diff
            )
    return rates


def boltzmann_moment(h_field, k_anis: float, n_axis, model, n_theta: int = 200) -> np.ndarray:
    """Equilibrium mean moment by direct quadrature of the Gibbs density.

    Stationary density ``exp(xi m.h_hat + sigma (n.m)^2)/Z`` with
    ``xi = mu0 m0 |H| / (kB T)`` and ``sigma = K V_C / (kB T)``; holds for
    both rotation mechanisms because the drift of each balances the
    rotational diffusion against exactly this potential.
    """
    grid = sphere_grid(n_theta, 2 * n_theta)
    h = np.asarray(h_field, dtype=float)
    hn = np.linalg.norm(h)
    xi = model.mu0 * model.m0 * hn / (model.k_b * model.t_b)
    sigma = k_anis * model.v_c / (model.k_b * model.t_b)
    energy = np.zeros(grid.weights.shape)
    if hn > 0:
        energy = energy + xi * (grid.points @ (h / hn))
    if k_anis != 0.0:
        n = np.asarray(n_axis, dtype=float)
        energy = energy + sigma * (grid.points @ n) ** 2
    density = np.exp(energy - energy.max())
    density /= sphere_integrate(density, grid)
    return model.m0 * sphere_moment(density, grid)


def circular_convolve(c: np.ndarray, k: np.ndarray) -> np.ndarray:
    """Direct O(N^2) circular convolution, the oracle for spectral products."""
    c = np.asarray(c, dtype=float)
    k = np.asarray(k, dtype=float)
    n = len(c)
    out = np.zeros(n)
    for shift in range(n):
        out[shift] = np.sum(c * k[(shift - np.arange(n)) % n])
    return out

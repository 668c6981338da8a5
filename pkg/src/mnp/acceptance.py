"""Release gate: every check below must pass at its stated tolerance.

Each criterion is a standalone function returning a :class:`CriterionResult`
so the checks can run both under pytest (``tests/test_acceptance.py``) and
through ``mnp validate``, which emits one pass/fail line per criterion plus
a JSON summary.  Expensive artifacts (the identification dictionary) are
cached on disk keyed by their configuration hash.
"""

from __future__ import annotations

import hashlib
import json
import time
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dictionary import (
    E1Excitation,
    ParameterGrid,
    auto_beta,
    build_dictionary,
    load_dictionary,
    marginals,
    nn_lasso,
    save_dictionary,
)
from .fields import MU0, axis_in_plane, brown_params, neel_params, sinusoidal_sequence
from .fv import fv_operator
from .mesh import build_icosphere
from .observables import fv_moment_matrix, sh_moment_matrix
from .odes import IntegratorConfig, integrate, steady_state
from .runner import offset_vectors
from .sh import ShAssembler, conjugate_state, sh_dimension
from .simulate import precession_comparison, run_simulation
from .validation import (
    circular_convolve,
    langevin_moment,
    quadrature_coefficient_rates,
)
from .xspace import estimate_kernel, kernel_study

E1_FREQUENCY = 125e6 / 4800
E1_AMPLITUDE = 0.02 / MU0


@dataclass
class CriterionResult:
    index: int
    name: str
    passed: bool
    runtime: float
    budget: float
    details: dict = field(default_factory=dict)

    def line(self) -> str:
        flag = "PASS" if self.passed else "FAIL"
        return (f"{flag} criterion {self.index} ({self.name}): "
                f"{self.details.get('summary', '')} [{self.runtime:.1f}s / budget {self.budget:.0f}s]")


def _result(index, name, budget, start, passed, **details) -> CriterionResult:
    return CriterionResult(index=index, name=name, passed=bool(passed),
                           runtime=time.perf_counter() - start, budget=budget,
                           details=details)


def criterion_langevin_equilibrium(**_) -> CriterionResult:
    """1: stationary moment along a static field against the closed form."""
    start = time.perf_counter()
    model = brown_params(m_s=474000.0, d_core=20e-9, d_hydro=20e-9, eta=1e-5, t_b=293.0)
    direction = np.array([1.0, 2.0, 2.0]) / 3.0
    tol = 1e-4
    worst = 0.0
    rows = []

    assembler = ShAssembler(20)
    sh_weights = np.zeros(sh_dimension(20))
    sh_weights[0] = 4.0 * np.pi
    sh_map = sh_moment_matrix(20)

    mesh = build_icosphere(5)
    op = fv_operator(mesh)
    fv_map = fv_moment_matrix(mesh)

    for xi in (0.1, 1.0, 5.0, 20.0):
        h_mag = xi * model.k_b * model.t_b / (model.mu0 * model.m0)
        h = h_mag * direction
        reference = langevin_moment(h_mag, model)

        x_sh = steady_state(lambda t: assembler.matrix(h, [0, 0, 1.0], model), sh_weights)
        along_sh = float(np.real(sh_map @ x_sh) @ direction) * model.m0
        err_sh = abs(along_sh - reference) / abs(reference)

        x_fv = steady_state(lambda t: op.matrix(h, [0, 0, 1.0], model, beta=0.0),
                            mesh.area)
        along_fv = float((fv_map @ x_fv) @ direction) * model.m0
        err_fv = abs(along_fv - reference) / abs(reference)

        worst = max(worst, err_sh, err_fv)
        rows.append({"xi": xi, "err_sh": err_sh, "err_fv": err_fv})

    return _result(1, "langevin-equilibrium", 30.0, start, worst < tol,
                   summary=f"worst rel err {worst:.2e} < {tol:.0e}",
                   rows=rows, tolerance=tol)


def _e1_scenario(k_anis=625.0, d_core=20e-9):
    model = neel_params(m_s=474000.0, k_anis=k_anis, d_core=d_core, t_b=293.0)
    seq = sinusoidal_sequence(E1_AMPLITUDE, E1_FREQUENCY, easy_axis=axis_in_plane(np.pi / 4))
    return model, seq


def criterion_mass_conservation(**_) -> CriterionResult:
    """2: probability mass stays within 1e-7 over one drive period."""
    start = time.perf_counter()
    model, seq = _e1_scenario()
    cfg = IntegratorConfig()
    res_sh = run_simulation("sh:20", seq, model, cfg, n_samples=400, precession=False)
    res_fv = run_simulation("fv:3:0.2", seq, model, cfg, n_samples=400, precession=False)
    tol = 1e-7
    ok = res_sh.mass_drift < tol and res_fv.mass_drift < tol
    return _result(2, "mass-conservation", 60.0, start, ok,
                   summary=f"drift sh {res_sh.mass_drift:.2e}, fv {res_fv.mass_drift:.2e} < {tol:.0e}",
                   sh=res_sh.mass_drift, fv=res_fv.mass_drift, tolerance=tol)


def criterion_cross_method(**_) -> CriterionResult:
    """3: spectral and finite-volume mean moments agree within 1 percent."""
    start = time.perf_counter()
    model, seq = _e1_scenario()
    cfg = IntegratorConfig()
    res_sh = run_simulation("sh:40", seq, model, cfg, n_samples=1000, precession=False)
    res_fv = run_simulation("fv:5:0.0", seq, model, cfg, n_samples=1000, precession=False)
    err = float(
        np.linalg.norm(res_sh.moment.moment - res_fv.moment.moment)
        / np.linalg.norm(res_sh.moment.moment)
    )
    return _result(3, "cross-method", 600.0, start, err < 0.01,
                   summary=f"rel L2 {err:.2e} < 1e-2",
                   error=err, t_sh=res_sh.wall_time, t_fv=res_fv.wall_time)


def criterion_precession_study(**_) -> CriterionResult:
    """4: neglect error falls with offset magnitude, grows with anisotropy."""
    start = time.perf_counter()
    cfg = IntegratorConfig()
    anisotropies = (625.0, 1250.0, 2500.0)
    offsets = offset_vectors((0.0, 2.0, 4.0), 7.0)
    table = {k: {} for k in anisotropies}  # k -> offset_norm -> [errors]
    ratios = []
    for k_anis in anisotropies:
        model = neel_params(m_s=474000.0, k_anis=k_anis, d_core=20e-9, t_b=293.0)
        for _, h_s in offsets:
            seq = sinusoidal_sequence(E1_AMPLITUDE, E1_FREQUENCY, h_s=h_s,
                                      easy_axis=axis_in_plane(np.pi / 4))
            cmp = precession_comparison("fv:3:0.2", seq, model, cfg, n_samples=400)
            norm = round(float(np.linalg.norm(h_s)), 6)
            table[k_anis].setdefault(norm, []).append(cmp.relative_error)
            ratios.append(cmp.runtime_ratio)

    monotone_offset = True
    grouped = {}
    for k_anis, by_norm in table.items():
        norms = sorted(by_norm)
        means = [float(np.mean(by_norm[n])) for n in norms]
        grouped[k_anis] = dict(zip(map(str, norms), means))
        monotone_offset &= all(b < a for a, b in zip(means, means[1:]))
    norms = sorted(table[anisotropies[0]])
    monotone_k = all(
        np.mean(table[k1][n]) < np.mean(table[k2][n])
        for n in norms for k1, k2 in zip(anisotropies, anisotropies[1:])
    )
    mean_ratio = float(np.mean(ratios))
    ok = monotone_offset and monotone_k and mean_ratio < 0.8
    return _result(4, "precession-neglect", 1200.0, start, ok,
                   summary=(f"offset-monotone {monotone_offset}, K-monotone {monotone_k}, "
                            f"mean runtime ratio {mean_ratio:.3f} < 0.8"),
                   errors=grouped, mean_ratio=mean_ratio)


def criterion_fv_structure(**_) -> CriterionResult:
    """5: conservation telescopes to 1e-10 and full upwinding is sign-safe."""
    start = time.perf_counter()
    mesh = build_icosphere(3)
    op = fv_operator(mesh)
    rng = np.random.default_rng(42)
    worst_drift = 0.0
    min_offdiag = np.inf
    for _ in range(100):
        d_core = rng.uniform(15e-9, 50e-9)
        k_anis = rng.uniform(0.0, 5000.0)
        if rng.random() < 0.5:
            model = neel_params(m_s=474000.0, k_anis=k_anis, d_core=d_core, t_b=293.0)
        else:
            model = brown_params(m_s=474000.0, d_core=d_core,
                                 d_hydro=d_core * rng.uniform(1.0, 2.0),
                                 eta=1e-5, t_b=293.0)
        h = rng.normal(size=3) * 0.03 / MU0
        n = rng.normal(size=3)
        n /= np.linalg.norm(n)
        beta = rng.random()
        u = rng.random(op.n_cells)

        m = op.matrix(h, n, model, beta=beta)
        drift = abs(np.dot(mesh.area, m @ u))
        gross = np.dot(mesh.area, np.abs(m) @ np.abs(u))
        worst_drift = max(worst_drift, drift / gross if gross > 0 else 0.0)

        adv = op.advection(h, n, model, beta=1.0)
        off = adv - __import__("scipy.sparse", fromlist=["diags"]).diags(adv.diagonal())
        if off.nnz:
            min_offdiag = min(min_offdiag, float(off.data.min()))
    ok = worst_drift < 1e-10 and min_offdiag >= 0.0
    return _result(5, "fv-structure", 60.0, start, ok,
                   summary=(f"worst mass-rate residual {worst_drift:.2e} < 1e-10 "
                            f"(relative to gross flux), min upwind off-diagonal {min_offdiag:.2e} >= 0"),
                   worst_drift=worst_drift, min_offdiag=min_offdiag)


def criterion_sh_action(**_) -> CriterionResult:
    """6: operator action matches direct quadrature of the transport terms."""
    start = time.perf_counter()
    n_max = 10
    assembler = ShAssembler(n_max)
    rng = np.random.default_rng(7)
    worst = 0.0
    for _ in range(20):
        raw = rng.normal(size=sh_dimension(n_max)) + 1j * rng.normal(size=sh_dimension(n_max))
        coeffs = 0.5 * (raw + conjugate_state(raw, n_max))  # density of a real function
        d_core = rng.uniform(15e-9, 40e-9)
        k_anis = rng.uniform(0.0, 3000.0)
        model = neel_params(m_s=474000.0, k_anis=k_anis, d_core=d_core, t_b=293.0)
        h = rng.normal(size=3) * 0.03 / MU0
        n = rng.normal(size=3)
        n /= np.linalg.norm(n)
        rates = assembler.matrix(h, n, model) @ coeffs
        oracle = quadrature_coefficient_rates(coeffs, n_max, h, n, model.p, model.tau)
        worst = max(worst, float(np.linalg.norm(rates - oracle) / np.linalg.norm(oracle)))
    return _result(6, "sh-quadrature", 120.0, start, worst < 1e-6,
                   summary=f"worst rel deviation {worst:.2e} < 1e-6", worst=worst)


def _dictionary_cache_key(grid: ParameterGrid, excitation: E1Excitation, disc, n_times) -> str:
    blob = json.dumps([list(grid.diameters), list(grid.anisotropies),
                       list(grid.delta_phis), list(grid.phi_refs),
                       excitation.frequency, excitation.amplitude, excitation.m_s,
                       excitation.t_b, excitation.precession, str(disc), n_times],
                      sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def acceptance_dictionary(cache_dir: str | Path, workers: int = 1):
    """The dictionary used by criterion 7, built once and cached on disk."""
    grid = ParameterGrid(
        diameters=tuple(np.arange(16e-9, 58.1e-9, 6e-9)),
        anisotropies=tuple(np.arange(500.0, 6001.0, 500.0)),
        delta_phis=(0.0,),
    )
    excitation = E1Excitation()
    disc = "fv:3:0.2"
    key = _dictionary_cache_key(grid, excitation, disc, 1000)
    directory = Path(cache_dir) / f"dict_{key}"
    if (directory / "manifest.json").is_file():
        return load_dictionary(directory), True
    dictionary = build_dictionary(grid, excitation, disc=disc, n_times=1000,
                                  workers=workers)
    save_dictionary(dictionary, directory)
    return dictionary, False


def criterion_dictionary_recovery(cache_dir=".mnp_cache", workers: int = 2, **_) -> CriterionResult:
    """7: a known sparse composition is recovered from its noisy signal."""
    start = time.perf_counter()
    dictionary, cached = acceptance_dictionary(cache_dir, workers)
    a = dictionary.matrix
    by_point = {(c["d_core"], c["k_anis"]): c["column"] for c in dictionary.columns}
    planted = [
        (by_point[(22e-9, 1500.0)], 1.0),
        (by_point[(34e-9, 3000.0)], 0.7),
        (by_point[(46e-9, 1000.0)], 0.4),
    ]
    w_true = np.zeros(a.shape[1])
    for col, weight in planted:
        w_true[col] = weight
    clean = a @ w_true
    rng = np.random.default_rng(11)
    noise = rng.standard_normal(clean.size)
    noise *= 0.01 * np.linalg.norm(clean) / np.linalg.norm(noise)
    signal = clean + noise

    beta = auto_beta(a, signal, noise_norm=float(np.linalg.norm(noise)))
    fit = nn_lasso(dictionary, signal, beta, debias=True)
    support_true = set(np.nonzero(w_true)[0])
    support_fit = set(np.nonzero(fit.weights)[0])
    support_ok = support_fit == support_true
    weight_err = float(np.max(np.abs(fit.weights[list(support_true)]
                                     - w_true[list(support_true)])
                              / w_true[list(support_true)])) if support_ok else np.inf
    per_d, per_k = marginals(fit, dictionary.grid, dictionary.columns)
    ok = support_ok and weight_err < 0.10
    return _result(7, "dictionary-recovery", 1800.0, start, ok,
                   summary=(f"support exact {support_ok}, worst weight err "
                            f"{weight_err:.2%} < 10% (beta {beta:.3e}, cached {cached})"),
                   support_ok=support_ok, weight_error=weight_err, beta=beta,
                   cached=cached, marginal_d=per_d.tolist(), marginal_k=per_k.tolist())


def criterion_xspace_pipeline(**_) -> CriterionResult:
    """8: exact spectral recovery plus kernel sharpening and shifting trends."""
    start = time.perf_counter()
    rng = np.random.default_rng(3)
    n = 64
    kern = np.exp(-0.5 * ((np.arange(n) - 20.0) / 4.0) ** 2)
    phantoms = [rng.random(n) for _ in range(3)]
    signals = [circular_convolve(c, kern) for c in phantoms]
    est = estimate_kernel(phantoms, signals)
    rec_err = float(np.linalg.norm(np.fft.ifftshift(est.kernel) - kern)
                    / np.linalg.norm(kern))

    cfg = IntegratorConfig(rtol=1e-7, atol=1e-14)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        pulsed = kernel_study("pulsed", [20e-9, 25e-9, 30e-9], disc="fv:3:0.2", config=cfg)
        sinus = kernel_study("sin", [20e-9, 40e-9, 60e-9], d_core_fixed=20e-9,
                             disc="fv:3:0.2", config=cfg)
    fwhms = [e.fwhm_m for e in pulsed]
    shifts = [e.peak_offset_m for e in sinus]
    fwhm_ok = all(b < a for a, b in zip(fwhms, fwhms[1:]))
    shift_ok = all(b > a for a, b in zip(shifts, shifts[1:]))
    ok = rec_err < 1e-10 and fwhm_ok and shift_ok
    return _result(8, "xspace-kernels", 1200.0, start, ok,
                   summary=(f"recovery {rec_err:.2e} < 1e-10, pulsed FWHM decreasing {fwhm_ok} "
                            f"{[round(f*1e3,3) for f in fwhms]} mm, "
                            f"sin shift increasing {shift_ok} {[round(s*1e3,3) for s in shifts]} mm"),
                   recovery=rec_err, fwhm_mm=[f * 1e3 for f in fwhms],
                   shift_mm=[s * 1e3 for s in shifts])


def criterion_stiff_integration(**_) -> CriterionResult:
    """9: analytic stiff problems at rtol 1e-6 within the step budget."""
    import scipy.sparse as sp

    start = time.perf_counter()
    cfg = IntegratorConfig(rtol=1e-6, atol=1e-9)

    traj = integrate(lambda t: sp.csr_matrix(np.array([[-1.0]])),
                     np.array([1.0]), (0.0, 1.0), [1.0], cfg)
    decay_err = abs(traj.final_state[0] - np.exp(-1.0)) / np.exp(-1.0)

    w = 2.0 * np.pi
    skew = sp.csr_matrix(np.array([[0.0, -w], [w, 0.0]]))
    traj = integrate(lambda t: skew, np.array([1.0, 0.0]), (0.0, 1.0), [1.0],
                     IntegratorConfig(rtol=1e-6, atol=1e-12))
    norm_drift = abs(np.linalg.norm(traj.final_state) - 1.0)

    stiff = sp.csr_matrix(sp.diags([-1e6, -1.0]))
    traj = integrate(lambda t: stiff, np.array([1.0, 1.0]), (0.0, 1.0), [1.0], cfg)
    exact = np.array([np.exp(-1e6), np.exp(-1.0)])
    stiff_err = float(np.linalg.norm(traj.final_state - exact) / np.linalg.norm(exact))
    steps = traj.stats.accepted_steps

    ok = decay_err < 10 * cfg.rtol and norm_drift < 1e-5 and stiff_err < 1e-5 and steps <= 200
    return _result(9, "stiff-integration", 10.0, start, ok,
                   summary=(f"decay {decay_err:.2e}, skew norm drift {norm_drift:.2e} < 1e-5, "
                            f"stiff {stiff_err:.2e} < 1e-5 in {steps} <= 200 steps"),
                   decay=decay_err, skew=norm_drift, stiff=stiff_err, steps=steps)


ALL_CRITERIA = (
    criterion_langevin_equilibrium,
    criterion_mass_conservation,
    criterion_cross_method,
    criterion_precession_study,
    criterion_fv_structure,
    criterion_sh_action,
    criterion_dictionary_recovery,
    criterion_xspace_pipeline,
    criterion_stiff_integration,
)


def run_all(cache_dir=".mnp_cache", workers: int = 2, echo=print) -> list[CriterionResult]:
    """Run every criterion, printing one pass/fail line each."""
    results = []
    for fn in ALL_CRITERIA:
        res = fn(cache_dir=cache_dir, workers=workers)
        results.append(res)
        if echo:
            echo(res.line())
    return results

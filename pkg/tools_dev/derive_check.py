"""Dev script: re-derive SH coupling coefficients via exact ladder algebra
and diff them against the assembler's closed-form tables."""

import numpy as np
import sympy as sy

from mnp.sh import ShAssembler
from mnp.fields import ParticleModel

I = sy.I


def add(d, key, val):
    if key in d:
        d[key] = sy.simplify(d[key] + val)
    else:
        d[key] = val


def valid(l, m):
    return l >= 0 and abs(m) <= l


# ladder operators on a single basis function (l, m) -> {(l', m'): coeff}
def E1(l, m):
    return {(l, m + 1): sy.Integer(1)}

def E2(l, m):
    return {(l, m - 1): sy.Integer((l + m) * (l - m + 1))}

def E3(l, m):
    return {(l - 1, m + 1): sy.Rational(l + 1, 2 * l + 1),
            (l + 1, m + 1): sy.Rational(l, 2 * l + 1)}

def E4(l, m):
    return {(l - 1, m - 1): sy.Rational(l * (l - m + 1) * (l + m - 1), 2 * l + 1)
            + sy.Integer(m * (l + m - 1)),
            (l + 1, m - 1): sy.Rational(l * (l - m + 1) * (l - m + 2), 2 * l + 1)}

def DPHI(l, m):
    return {(l, m): I * m}

def SINDTH(l, m):
    return {(l + 1, m): sy.Rational(l * (l - m + 1), 2 * l + 1),
            (l - 1, m): -sy.Rational((l + 1) * (l + m), 2 * l + 1)}

def COS(l, m):
    return {(l - 1, m): sy.Rational(l + m, 2 * l + 1),
            (l + 1, m): sy.Rational(l + 1 - m, 2 * l + 1)}

def COSPHISIN(l, m):
    c = sy.Rational(1, 2 * (2 * l + 1))
    return {(l - 1, m + 1): c, (l + 1, m + 1): -c,
            (l + 1, m - 1): c * (l - m + 1) * (l - m + 2),
            (l - 1, m - 1): -c * (l + m - 1) * (l + m)}

def SINPHISIN(l, m):
    c = I * sy.Rational(1, 2 * (2 * l + 1))
    return {(l + 1, m + 1): c, (l - 1, m + 1): -c,
            (l + 1, m - 1): c * (l - m + 1) * (l - m + 2),
            (l - 1, m - 1): -c * (l + m - 1) * (l + m)}


def field_dot_grad(l, m, f1, f2, f3):
    """(F x m).grad Y and ((m x F) x m).grad Y expansions for field F."""
    prec = {}
    for (k, v) in E1(l, m).items():
        add(prec, k, sy.Rational(1, 2) * (f2 + I * f1) * v)
    for (k, v) in E2(l, m).items():
        add(prec, k, -sy.Rational(1, 2) * (f2 - I * f1) * v)
    for (k, v) in DPHI(l, m).items():
        add(prec, k, f3 * v)
    align = {}
    for (k, v) in E3(l, m).items():
        add(align, k, sy.Rational(1, 2) * (f1 - I * f2) * v)
    for (k, v) in E4(l, m).items():
        add(align, k, -sy.Rational(1, 2) * (f1 + I * f2) * v)
    for (k, v) in SINDTH(l, m).items():
        add(align, k, -f3 * v)
    return prec, align


def ndotm_apply(expansion, n1, n2, n3):
    out = {}
    for (l, m), coeff in expansion.items():
        if not valid(l, m):
            continue
        for op, nk in ((COSPHISIN, n1), (SINPHISIN, n2), (COS, n3)):
            for (k, v) in op(l, m).items():
                add(out, k, nk * coeff * v)
    return out


def derived_rate_coefficients(r, q, H, n, p, n_max):
    """gamma^{q,q'}_{r,r'} for all sources, from the ladder chain."""
    prec_h, align_h = field_dot_grad(r, -q, *H)
    prec_n, align_n = field_dot_grad(r, -q, *n)
    full = {}
    for d, w in ((prec_h, p[0]), (align_h, p[1])):
        for k, v in d.items():
            if valid(*k):
                add(full, k, w * v)
    for d, w in ((ndotm_apply(prec_n, *n), p[2]), (ndotm_apply(align_n, *n), p[3])):
        for k, v in d.items():
            if valid(*k):
                add(full, k, w * v)
    gam = {}
    for (lp, mp), a in full.items():
        if lp > n_max or not valid(lp, mp):
            continue
        g = a * sy.Integer(-1) ** (mp + q) * sy.Rational(2 * r + 1, 2 * lp + 1)
        add(gam, (lp, -mp), g)  # source coefficient C_{lp}^{-mp}
    return gam


def main():
    n_max = 6
    H = (sy.Rational(2, 3), sy.Rational(-1, 5), sy.Rational(7, 11))
    n = (sy.Rational(3, 13), sy.Rational(-4, 13), sy.Rational(12, 13))
    p = (sy.Rational(5, 7), sy.Rational(3, 11), sy.Rational(9, 4), sy.Rational(8, 13))

    model = ParticleModel(
        mode="neel", m_s=1.0, k_anis=1.0, d_core=1.0, d_hydro=1.0, eta=1.0,
        t_b=1.0, gamma=1.0, alpha=1.0,
        p1=float(p[0]), p2=float(p[1]), p3=float(p[2]), p4=float(p[3]), tau=1.0,
    )
    asm = ShAssembler(n_max)
    M = asm.matrix([float(x) for x in H], [float(x) for x in n], model).toarray()
    # remove diffusion (not re-derived here)
    for idx in range(asm.dim):
        r = int(np.floor(np.sqrt(idx)))
        M[idx, idx] += r * (r + 1) / 2.0

    worst = 0.0
    bad = []
    for r in range(n_max + 1):
        for q in range(-r, r + 1):
            row = r * r + r + q
            gam = derived_rate_coefficients(r, q, H, n, p, n_max)
            ref = np.zeros(asm.dim, dtype=complex)
            for (lp, qp), g in gam.items():
                ref[lp * lp + lp + qp] += complex(sy.nsimplify(g).evalf(20))
            err = np.abs(M[row] - ref)
            scale = max(1.0, np.abs(ref).max())
            if err.max() / scale > 1e-12:
                for col in np.nonzero(err / scale > 1e-12)[0]:
                    rc = int(np.floor(np.sqrt(col)))
                    qc = col - rc * rc - rc
                    bad.append(((r, q), (rc, qc), M[row, col], ref[col]))
            worst = max(worst, err.max() / scale)
    print(f"max relative deviation: {worst:.3e}")
    for item in bad[:40]:
        print("MISMATCH row (r,q)=%s src (r',q')=%s table=%s derived=%s" % item)
    print("OK" if not bad else f"{len(bad)} mismatching entries")


if __name__ == "__main__":
    main()

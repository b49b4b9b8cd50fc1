"""Shared generators and finite-difference checks for the test-suite."""

from __future__ import annotations

import itertools

import numpy as np
import sympy as sp

from gammaz import exprdsl


def random_poly(rng: np.random.Generator, names, max_deg: int = 4, terms: int = 6):
    """(text, sympy expression) of a random integer-coefficient polynomial."""
    syms = sp.symbols(names)
    parts, total = [], sp.Integer(0)
    for _ in range(terms):
        c = int(rng.integers(-5, 6)) or 1
        exps = rng.integers(0, max_deg + 1, size=len(names))
        while exps.sum() > max_deg:
            exps[rng.integers(len(names))] -= 1
            exps = np.maximum(exps, 0)
        mono = [f"{n}^{int(k)}" for n, k in zip(names, exps) if k > 0]
        parts.append("*".join([str(c)] + mono))
        total += c * sp.Mul(*[s ** int(k) for s, k in zip(syms, exps)])
    text = " + ".join(f"({p})" for p in parts)
    return text, total


_SAFE_UNARY = [
    "sin({})",
    "cos({})",
    "exp({}/3)",
    "tanh({})",
    "log(2 + ({})^2)",
    "sqrt(1 + ({})^2)",
    "({})^2",
    "({})^3",
    "-({})",
]
_SAFE_BINARY = ["({}) + ({})", "({}) - ({})", "({}) * ({})", "({}) / (2 + cos({}))"]


def random_expr(rng: np.random.Generator, names, depth: int = 3) -> str:
    """A random smooth expression, finite everywhere on [-1,1]^d."""
    if depth == 0 or rng.random() < 0.2:
        if rng.random() < 0.7:
            return str(names[rng.integers(len(names))])
        return f"{rng.integers(1, 5)}/{rng.integers(1, 4)}"
    if rng.random() < 0.5:
        return _SAFE_UNARY[rng.integers(len(_SAFE_UNARY))].format(random_expr(rng, names, depth - 1))
    tmpl = _SAFE_BINARY[rng.integers(len(_SAFE_BINARY))]
    return tmpl.format(random_expr(rng, names, depth - 1), random_expr(rng, names, depth - 1))


def fd_check_jet(expr, point, h: float = 1e-4):
    """Largest scaled mismatch between jet partials and central differences.

    Order-k partials are compared with central differences of the exact
    order-(k-1) partials, so rounding stays at eps/h.  Each entry's error is
    divided by max(1, |reference|).
    """
    p = np.asarray(point, dtype=float)
    d = p.size
    J = exprdsl.eval_jet(expr, p, 3)
    worst = 0.0
    for i in range(d):
        e = np.zeros(d)
        e[i] = h
        jp = exprdsl.eval_jet(expr, p + e, 2)
        jm = exprdsl.eval_jet(expr, p - e, 2)
        for got, ref in (
            (J.g[i], (jp.v - jm.v) / (2 * h)),
            (J.h[i], (jp.g - jm.g) / (2 * h)),
            (J.t[i], (jp.h - jm.h) / (2 * h)),
        ):
            err = np.abs(np.asarray(got) - ref) / np.maximum(1.0, np.abs(ref))
            worst = max(worst, float(np.max(err)))
    return worst


def sympy_partials(expr_sym, syms, point):
    """All partials of order 0..3 at a point, as dense arrays."""
    sub = dict(zip(syms, point))
    d = len(syms)
    v = float(expr_sym.subs(sub))
    g = np.array([float(sp.diff(expr_sym, s).subs(sub)) for s in syms])
    H = np.zeros((d, d))
    T = np.zeros((d, d, d))
    for i, j in itertools.product(range(d), repeat=2):
        H[i, j] = float(sp.diff(expr_sym, syms[i], syms[j]).subs(sub))
    for i, j, k in itertools.product(range(d), repeat=3):
        T[i, j, k] = float(sp.diff(expr_sym, syms[i], syms[j], syms[k]).subs(sub))
    return v, g, H, T

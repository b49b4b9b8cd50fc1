"""Sub-Riemannian structures (a, z, V, log Vol) and their primitive fields.

Conventions: coordinates x_1..x_N with N = n + m.  The structure stores the
transposed matrices aT (n x N) and zT (m x N), i.e. the horizontal vector
fields are the rows of aT.  The generator is

    L f = div(a a^T grad f) - <a (x) grad a, grad f> - <grad V, a a^T grad f>

and the invariant density is rho* ~ exp(-V) Vol, which only ever enters
through grad log rho* = -grad V + grad log Vol.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from . import exprdsl
from .exprdsl import Expression
from .jets import Jet

ExprLike = Union[str, Expression]


@dataclass(frozen=True)
class SubRiemannianStructure:
    name: str
    coords: Tuple[str, ...]
    n: int
    m: int
    aT: Tuple[Tuple[Expression, ...], ...]
    zT: Tuple[Tuple[Expression, ...], ...]
    V: Expression
    log_vol: Expression
    params: Mapping[str, float] = field(default_factory=dict)
    sources: Mapping[str, object] = field(default_factory=dict)

    @property
    def dim(self) -> int:
        return self.n + self.m


def build(
    coords: Sequence[str],
    aT: Sequence[Sequence[ExprLike]],
    zT: Sequence[Sequence[ExprLike]],
    V: ExprLike = "0",
    log_vol: ExprLike = "0",
    params: Optional[Mapping[str, object]] = None,
    name: str = "custom",
) -> SubRiemannianStructure:
    """Assemble a structure from expression text.

    `params` values may be numbers or expression strings over the coordinates;
    string parameters are parsed first and spliced wherever they are named.
    """
    coords = tuple(coords)
    N = len(coords)
    if len(set(coords)) != N:
        raise ValueError("duplicate coordinate names")
    num: Dict[str, float] = {}
    fields: Dict[str, str] = {}
    for k, v in (params or {}).items():
        if isinstance(v, str):
            try:
                num[k] = float(v)
            except ValueError:
                fields[k] = v
        else:
            num[k] = float(v)
    bound: Dict[str, object] = dict(num)
    for k, txt in fields.items():
        bound[k] = exprdsl.parse(txt, coords, num)

    def P(e: ExprLike) -> Expression:
        if isinstance(e, Expression):
            if e.coords != coords:
                raise ValueError("expression bound to different coordinates")
            return e
        return exprdsl.parse(str(e), coords, bound)

    rows_a = tuple(tuple(P(e) for e in row) for row in aT)
    rows_z = tuple(tuple(P(e) for e in row) for row in zT)
    n, m = len(rows_a), len(rows_z)
    if n == 0:
        raise ValueError("at least one horizontal direction is required")
    if n + m != N:
        raise ValueError(f"n + m = {n + m} must equal the number of coordinates {N}")
    for r in rows_a + rows_z:
        if len(r) != N:
            raise ValueError(f"matrix rows must have {N} entries")
    src = {
        "coords": list(coords),
        "aT": [[str(e) for e in r] for r in aT],
        "zT": [[str(e) for e in r] for r in zT],
        "V": str(V),
        "log_vol": str(log_vol),
        "params": {k: (v if isinstance(v, str) else float(v)) for k, v in (params or {}).items()},
    }
    return SubRiemannianStructure(
        name, coords, n, m, rows_a, rows_z, P(V), P(log_vol), num, src
    )


# presets ---------------------------------------------------------------------

PRESETS = ("heisenberg", "se2", "martinet", "ou1d")


def preset(
    name: str,
    V: ExprLike = "0",
    params: Optional[Mapping[str, object]] = None,
) -> SubRiemannianStructure:
    """Built-in structures.  The potential V is always supplied by the caller."""
    params = dict(params or {})
    if name == "heisenberg":
        s = build(
            ("x", "y", "z"),
            [["1", "0", "-y/2"], ["0", "1", "x/2"]],
            [["0", "0", "1"]],
            V, "0", params, name,
        )
    elif name == "se2":
        params.setdefault("beta", 1.0)
        params.setdefault("g", "beta")
        s = build(
            ("theta", "x", "y"),
            [["1", "0", "0"], ["0", "exp(beta*theta)", "1"]],
            [["0", "0", "-g"]],
            V, "0", params, name,
        )
    elif name == "martinet":
        s = build(
            ("x", "y", "z"),
            [["1", "0", "y^2/2"], ["0", "1", "0"]],
            [["0", "0", "1"]],
            V, "-y^2/2", params, name,
        )
    elif name == "ou1d":
        s = build(("x",), [["1"]], [], V, "0", params, name)
    else:
        raise KeyError(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}")
    return s


# point evaluation ------------------------------------------------------------


def _matrix_jet(rows, pts: np.ndarray, order: int, N: int) -> Jet:
    B = pts.shape[:-1]
    if len(rows) == 0:
        p = [np.zeros(B + (0, N) + (N,) * k) for k in range(3)]
        return Jet(p[0], p[1], p[2], order=2, d=N).truncate(order)
    from .jets import stack

    return stack(
        [stack([exprdsl.eval_jet(e, pts, order) for e in r], axis=-1) for r in rows],
        axis=-2,
    )


@dataclass
class PointEval:
    """Jets (order 2 by default) of every structure field at a batch of points."""

    points: np.ndarray
    aT: Jet
    zT: Jet
    V: Jet
    log_vol: Jet

    @property
    def N(self) -> int:
        return self.points.shape[-1]

    def aaT(self) -> Jet:
        return _gram(self.aT)

    def zzT(self) -> Jet:
        return _gram(self.zT)

    def grad_log_rho(self) -> np.ndarray:
        return -self.V.g + self.log_vol.g

    def a_otimes_nabla_a(self) -> Jet:
        # sum_k a_{hat k, k} * sum_k' d_{k'} aT_{k, k'}
        div = _row_divergence(self.aT)
        a = self.aT.truncate(div.order)
        return (a * div.expand(-1)).sum(-2)


def _gram(M: Jet) -> Jet:
    # (M^T M)_ij = sum_k M_ki M_kj over the second-to-last batch axis
    return (M.expand(-1) * M.expand(-2)).sum(-3)


def _row_divergence(M: Jet) -> Jet:
    N = M.shape[-1]
    r = np.arange(N)
    G = M.grad()
    return G[(slice(None),) * (G.v.ndim - 2) + (r, r)].sum(-1)


def evaluate(s: SubRiemannianStructure, points, order: int = 2) -> PointEval:
    pts = np.asarray(points, dtype=float)
    if pts.shape[-1] != s.dim:
        raise ValueError(f"point dimension {pts.shape[-1]} != {s.dim}")
    N = s.dim
    return PointEval(
        pts,
        _matrix_jet(s.aT, pts, order, N),
        _matrix_jet(s.zT, pts, order, N),
        exprdsl.eval_jet(s.V, pts, order),
        exprdsl.eval_jet(s.log_vol, pts, order),
    )


def _as_jet(s: SubRiemannianStructure, f, x, order: int) -> Jet:
    if isinstance(f, Jet):
        return f
    if isinstance(f, str):
        f = exprdsl.parse(f, s.coords, s.params)
    return exprdsl.eval_jet(f, x, order)


# primitive fields ------------------------------------------------------------


def horizontal_gradient(s: SubRiemannianStructure, f, x) -> np.ndarray:
    """(a^T grad f)(x), shape (..., n)."""
    pe = evaluate(s, x, order=0)
    fj = _as_jet(s, f, x, 1)
    return np.einsum("...kp,...p->...k", pe.aT.v, fj.g)


def vertical_gradient(s: SubRiemannianStructure, f, x) -> np.ndarray:
    """(z^T grad f)(x), shape (..., m)."""
    pe = evaluate(s, x, order=0)
    fj = _as_jet(s, f, x, 1)
    return np.einsum("...kp,...p->...k", pe.zT.v, fj.g)


def a_otimes_nabla_a(s: SubRiemannianStructure, x) -> np.ndarray:
    return evaluate(s, x, order=1).a_otimes_nabla_a().v


def check_invariant_measure(s: SubRiemannianStructure, points) -> float:
    """max over points of |a (x) grad a + a a^T grad log Vol|_inf."""
    pe = evaluate(s, points, order=1)
    c = pe.a_otimes_nabla_a().v
    r = c + np.einsum("...ij,...j->...i", pe.aaT().v, pe.log_vol.g)
    return float(np.max(np.abs(r))) if r.size else 0.0


def drift_b(s: SubRiemannianStructure, x) -> np.ndarray:
    """b = -1/2 a a^T grad V."""
    pe = evaluate(s, x, order=1)
    return -0.5 * np.einsum("...ij,...j->...i", pe.aaT().v, pe.V.g)


def generator_drift(pe: PointEval) -> Jet:
    """First-order coefficient w of L = w.grad + aa^T : Hess, as a jet (order - 1)."""
    A = pe.aaT()
    divA = _row_divergence(A)  # sum_i d_i A_ij  (A symmetric)
    c = pe.a_otimes_nabla_a()
    Vg = pe.V.grad()
    AdV = (A.truncate(Vg.order) * Vg.expand(-2)).sum(-1)
    return divA - c - AdV


def apply_L(pe: PointEval, h: Jet) -> Jet:
    """Jet of L h; the result has order min(h.order, structure order) - 2 (or 0)."""
    A = pe.aaT()
    w = generator_drift(pe)
    dh = h.grad()
    d2h = dh.grad()
    first = (w * dh).sum(-1)
    second = (A * d2h).sum(-1).sum(-1)
    return first + second


def generator_L(s: SubRiemannianStructure, f, x) -> np.ndarray:
    pe = evaluate(s, x, order=2)
    fj = _as_jet(s, f, x, 2)
    out = apply_L(pe, fj).v
    return out if out.ndim else float(out)

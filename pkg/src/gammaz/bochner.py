"""z-Bochner decomposition: frame vectors, shift vectors Lambda, tensors and the matrix A.

Index conventions (0-based).  N = n + m.  The Hessian X of f is flattened
row-major, X[ih*N + kh] = d_ih d_kh f.  A "grad-linear field" is stored as a
coefficient array c of shape (..., L, N) with value c @ grad f; quadratic
forms in grad f are symmetric (..., N, N) arrays.

    Q[i*n + k, ih*N + kh] = aT[i, ih] aT[k, kh]          (n^2 rows)
    P[j*n + k, ih*N + kh] = zT[j, ih] aT[k, kh]          (n m rows, z index major)
    D[i*n + k]            = (a_i . grad aT[k, :]) . grad f
    E[j*n + k]            = (a_k . grad zT[j, :]) . grad f

so that QX + D and PX + E are the horizontal-horizontal and
vertical-horizontal second derivatives (a_i.grad)(a_k.grad f) and
(a_k.grad)(z_j.grad f).  For m = 1 the E ordering coincides with the usual
(i, k) enumeration.

The decomposition reads

    Gamma2 + Gamma2z = |QX + D|^2 + |PX + E|^2 + 2 (C + F + G).X + R_ab + R_zb + R_rho
                     = |Hess|^2 + R^G + R_ab + R_zb + R_rho

where the second line holds for any (Lambda1, Lambda2) solving

    Sym[Q^TQ Lambda1 + P^TP Lambda2] = Sym[F + C + G + Q^TD + P^TE],

Sym averaging the (ih, kh) and (kh, ih) slots (X is symmetric).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import structure as st
from .jets import Jet
from .structure import PointEval, SubRiemannianStructure

LAMBDA_TOL = 1e-9
SINGULAR_TOL = 1e-12


class AssumptionUnsatisfied(ArithmeticError):
    """No shift vectors satisfy the completing-the-square constraint at a point."""

    def __init__(self, residual: float, where=None):
        self.residual = residual
        self.where = where
        msg = f"shift-vector system residual {residual:.3e} exceeds {LAMBDA_TOL:g}"
        if where is not None:
            msg += f" at {np.asarray(where).tolist()}"
        super().__init__(msg)


class SingularFrame(ArithmeticError):
    """The matrix [a | z] is (numerically) singular at a point."""

    def __init__(self, det: float, where=None):
        self.det = det
        self.where = where
        msg = f"|det [a | z]| = {abs(det):.3e} below {SINGULAR_TOL:g}"
        if where is not None:
            msg += f" at {np.asarray(where).tolist()}"
        super().__init__(msg)


def apply(field: np.ndarray, df: np.ndarray) -> np.ndarray:
    """Value of a grad-linear field at grad f."""
    return np.einsum("...lq,...q->...l", field, df)


def quad(form: np.ndarray, df: np.ndarray) -> np.ndarray:
    return np.einsum("...p,...pq,...q->...", df, form, df)


def _sym(M: np.ndarray) -> np.ndarray:
    return 0.5 * (M + np.swapaxes(M, -1, -2))


@dataclass
class BochnerFrame:
    pe: PointEval
    n: int
    m: int
    Q: np.ndarray
    P: np.ndarray
    C: np.ndarray
    D: np.ndarray
    E: np.ndarray
    F: np.ndarray
    G: np.ndarray

    @property
    def N(self) -> int:
        return self.n + self.m

    @property
    def points(self) -> np.ndarray:
        return self.pe.points


def frame_from_eval(pe: PointEval) -> BochnerFrame:
    aT, daT = pe.aT.v, pe.aT.g
    zT, dzT = pe.zT.v, pe.zT.g
    n, N = aT.shape[-2], aT.shape[-1]
    m = zT.shape[-2]
    B = aT.shape[:-2]
    e = lambda sig, *ops: np.einsum(sig, *ops, optimize=True)  # noqa: E731

    Q = e("...ia,...kb->...ikab", aT, aT).reshape(B + (n * n, N * N))
    P = e("...ja,...kb->...jkab", zT, aT).reshape(B + (m * n, N * N))
    D = e("...ia,...kqa->...ikq", aT, daT).reshape(B + (n * n, N))
    E = e("...ka,...jqa->...jkq", aT, dzT).reshape(B + (m * n, N))

    C = e("...ia,...ir,...khr,...kq->...ahq", aT, aT, daT, aT) - e(
        "...kr,...ih,...iar,...kq->...ahq", aT, aT, daT, aT
    )
    F = e("...ia,...ir,...khr,...kq->...ahq", aT, aT, dzT, zT) - e(
        "...kr,...ih,...iar,...kq->...ahq", zT, aT, daT, zT
    )
    G = (
        e("...jh,...jp,...iap,...iq->...ahq", zT, zT, daT, aT)
        + e("...jh,...jp,...iqp,...ia->...ahq", zT, zT, daT, aT)
        - e("...ia,...ir,...jhr,...jq->...ahq", aT, aT, dzT, zT)
        - e("...ia,...ir,...jqr,...jh->...ahq", aT, aT, dzT, zT)
    )
    shape = B + (N * N, N)
    return BochnerFrame(pe, n, m, Q, P, C.reshape(shape), D, E, F.reshape(shape), G.reshape(shape))


def build_frame(s: SubRiemannianStructure, x) -> BochnerFrame:
    return frame_from_eval(st.evaluate(s, x, order=2))


# shift vectors -----------------------------------------------------------------


@dataclass
class LambdaPair:
    L1: np.ndarray  # (..., N^2, N)
    L2: np.ndarray
    residual: np.ndarray  # relative, per point
    mode: str


def _swap(N: int) -> np.ndarray:
    S = np.zeros((N * N, N * N))
    for i in range(N):
        for k in range(N):
            S[i * N + k, k * N + i] = 1.0
    return 0.5 * (np.eye(N * N) + S)


def constraint(fr: BochnerFrame):
    """(Sym[Q^TQ | P^TP], Sym[F + C + G + Q^TD + P^TE]) per point."""
    Qt = np.swapaxes(fr.Q, -1, -2)
    Pt = np.swapaxes(fr.P, -1, -2)
    S = _swap(fr.N)
    lhs = np.concatenate([Qt @ fr.Q, Pt @ fr.P], axis=-1)
    rhs = fr.F + fr.C + fr.G + Qt @ fr.D + Pt @ fr.E
    return S @ lhs, S @ rhs


def lambda_residual(fr: BochnerFrame, L1: np.ndarray, L2: np.ndarray) -> np.ndarray:
    lhs, rhs = constraint(fr)
    r = lhs @ np.concatenate([L1, L2], axis=-2) - rhs
    scale = np.maximum(
        np.linalg.norm(rhs, axis=(-2, -1)), 1e-12 * (1.0 + np.linalg.norm(lhs, axis=(-2, -1)))
    )
    return np.linalg.norm(r, axis=(-2, -1)) / scale


def _lstsq_lambda(fr: BochnerFrame):
    lhs, rhs = constraint(fr)
    sol = np.linalg.pinv(lhs, rcond=1e-12) @ rhs
    NN = fr.N * fr.N
    return sol[..., :NN, :], sol[..., NN:, :]


def preset_lambda(s: SubRiemannianStructure, fr: BochnerFrame, tabulated: bool = False):
    """Closed-form shift vectors for the built-in structures.

    For heisenberg the literature choice Lambda1 = (0, -f_z, 0, -f_z, 0, ...)
    does not satisfy the constraint; the default returns Lambda1 = 0, which
    does and yields the same R^G = -Gamma1 + Gamma1z/2.  `tabulated=True`
    returns the literature vector unchanged (for comparison only).
    """
    N = fr.N
    B = fr.points.shape[:-1]
    L1 = np.zeros(B + (N * N, N))
    L2 = np.zeros(B + (N * N, N))
    aT = fr.pe.aT.v
    p = fr.points
    if s.name == "heisenberg":
        if tabulated:
            L1[..., 1, 2] = -1.0
            L1[..., 3, 2] = -1.0
        L2[..., 6, :] = aT[..., 1, :]
        L2[..., 7, :] = -aT[..., 0, :]
    elif s.name == "martinet":
        y = p[..., 1]
        L1[..., 1, 2] = y / 2
        L1[..., 3, 2] = y / 2
        L2[..., 6, 1] = -y
        L2[..., 7, 2] = y**3 / 2
        L2[..., 7, 0] = y
    elif s.name == "se2":
        beta = float(s.params.get("beta", 1.0))
        g = -fr.pe.zT.v[..., 0, 2]
        # coordinates (theta, x, y) -> df indices 0, 1, 2
        L1[..., 1, 1] = beta
        L1[..., 2, 2] = beta / 2
        L1[..., 3, 1] = beta
        L1[..., 6, 2] = beta / 2
        L1[..., 8, 0] = -beta
        L2[..., 6, :] = -beta * aT[..., 1, :] / (g * g)[..., None]
        L2[..., 8, 0] = beta / (g * g)
    elif s.name == "ou1d":
        pass
    else:
        raise ValueError(f"no closed-form shift vectors for structure {s.name!r}")
    return L1, L2


def solve_lambda(
    fr: BochnerFrame,
    mode: str = "least_squares",
    s: Optional[SubRiemannianStructure] = None,
    check: bool = True,
) -> LambdaPair:
    if mode == "least_squares":
        L1, L2 = _lstsq_lambda(fr)
    elif mode == "preset":
        if s is None:
            raise ValueError("preset mode needs the structure")
        L1, L2 = preset_lambda(s, fr)
    else:
        raise ValueError(f"unknown mode {mode!r}")
    res = lambda_residual(fr, L1, L2)
    if check and np.any(res > LAMBDA_TOL):
        k = int(np.argmax(res))
        raise AssumptionUnsatisfied(float(np.max(res)), fr.points.reshape(-1, fr.N)[k])
    return LambdaPair(L1, L2, res, mode)


# Hessian and tensors -------------------------------------------------------------


def hess_and_RG(fr: BochnerFrame, lam: LambdaPair, fj: Jet):
    """(|Hess|^2 value, R^G quadratic form) for an order >= 2 jet of f."""
    df = fj.g
    X = fj.h.reshape(fj.h.shape[:-2] + (fr.N * fr.N,))
    v1 = np.einsum("...lr,...r->...l", fr.Q, X + apply(lam.L1, df))
    v2 = np.einsum("...lr,...r->...l", fr.P, X + apply(lam.L2, df))
    hess = (v1 * v1).sum(-1) + (v2 * v2).sum(-1)
    return hess, RG_form(fr, lam)


def RG_form(fr: BochnerFrame, lam: LambdaPair) -> np.ndarray:
    QL = fr.Q @ lam.L1
    PL = fr.P @ lam.L2
    t = np.swapaxes
    RG = -t(QL, -1, -2) @ QL - t(PL, -1, -2) @ PL + t(fr.D, -1, -2) @ fr.D + t(fr.E, -1, -2) @ fr.E
    return _sym(RG)


def _drift_grad(pe: PointEval):
    # b = -1/2 aa^T grad V and its Jacobian db[h, a] = d_a b_h
    A = pe.aaT()
    b = -0.5 * np.einsum("...ij,...j->...i", A.v, pe.V.g)
    db = -0.5 * (
        np.einsum("...ija,...j->...ia", A.g, pe.V.g) + np.einsum("...ij,...ja->...ia", A.v, pe.V.h)
    )
    return b, db


def _R_frame(pe: PointEval, BT: Jet, b, db) -> np.ndarray:
    aT, daT, d2aT = pe.aT.v, pe.aT.g, pe.aT.h
    bt, dbt, d2bt = BT.v, BT.g, BT.h
    e = lambda sig, *ops: np.einsum(sig, *ops, optimize=True)  # noqa: E731
    K = (
        e("...ip,...iap,...kha,...kq->...hq", aT, daT, dbt, bt)
        + e("...ip,...ia,...khpa,...kq->...hq", aT, aT, d2bt, bt)
        - e("...kh,...iph,...iap,...kq->...aq", bt, daT, daT, bt)
        - e("...kh,...ip,...iahp,...kq->...aq", bt, aT, d2aT, bt)
        - 2.0 * e("...ia,...ha,...iq->...hq", bt, db, bt)
        + 2.0 * e("...h,...iah,...iq->...aq", b, dbt, bt)
    )
    return _sym(K)


def _R_rho_part(AT: Jet, BT: Jet, bl: np.ndarray) -> np.ndarray:
    at, dat, d2at = AT.v, AT.g, AT.h
    bt, dbt = BT.v, BT.g
    e = lambda sig, *ops: np.einsum(sig, *ops, optimize=True)  # noqa: E731
    K = (
        e("...kpp,...kh,...iah,...ic->...ac", dbt, bt, dat, at)
        + e("...kp,...khp,...iah,...ic->...ac", bt, dbt, dat, at)
        + e("...kp,...kh,...iaph,...ic->...ac", bt, bt, d2at, at)
        + e("...kp,...kh,...iah,...icp->...ac", bt, bt, dat, dat)
        + e("...k,...kh,...iah,...ic->...ac", bl, bt, dat, at)
    )
    return _sym(2.0 * K)


@dataclass
class Tensors:
    RG: np.ndarray
    R_ab: np.ndarray
    R_zb: np.ndarray
    R_rho: np.ndarray

    @property
    def total(self) -> np.ndarray:
        return self.RG + self.R_ab + self.R_zb + self.R_rho


def tensor_forms(fr: BochnerFrame, lam: LambdaPair) -> Tensors:
    """All curvature quadratic forms in grad f, shape (..., N, N)."""
    pe = fr.pe
    b, db = _drift_grad(pe)
    R_ab = _R_frame(pe, pe.aT, b, db)
    R_zb = _R_frame(pe, pe.zT, b, db)
    glr = pe.grad_log_rho()
    zl = np.einsum("...kp,...p->...k", pe.zT.v, glr)
    al = np.einsum("...kp,...p->...k", pe.aT.v, glr)
    R_rho = _R_rho_part(pe.aT, pe.zT, zl) - _R_rho_part(pe.zT, pe.aT, al)
    return Tensors(RG_form(fr, lam), R_ab, R_zb, R_rho)


def curvature_tensors(fr: BochnerFrame, lam: LambdaPair, fj: Jet):
    """(R_ab, R_zb, R_rho) evaluated at grad f."""
    T = tensor_forms(fr, lam)
    df = fj.g
    return quad(T.R_ab, df), quad(T.R_zb, df), quad(T.R_rho, df)


def square_form(fr: BochnerFrame, fj: Jet) -> np.ndarray:
    """|QX + D|^2 + |PX + E|^2 + 2 (C + F + G).X, before completing squares."""
    df = fj.g
    X = fj.h.reshape(fj.h.shape[:-2] + (fr.N * fr.N,))
    v1 = np.einsum("...lr,...r->...l", fr.Q, X) + apply(fr.D, df)
    v2 = np.einsum("...lr,...r->...l", fr.P, X) + apply(fr.E, df)
    lin = apply(fr.C + fr.F + fr.G, df)
    return (v1 * v1).sum(-1) + (v2 * v2).sum(-1) + 2.0 * (lin * X).sum(-1)


# curvature matrix ------------------------------------------------------------------


@dataclass
class CurvatureMatrix:
    points: np.ndarray
    A: np.ndarray
    RG_ab: np.ndarray
    R_zb: np.ndarray
    R_rho: np.ndarray
    RG: np.ndarray
    R_ab: np.ndarray
    forms: Tensors
    lam: LambdaPair
    det: np.ndarray
    singular: np.ndarray


def frame_matrix(pe: PointEval) -> np.ndarray:
    """T = [aT; zT], so that U = (a^T grad f, z^T grad f) = T grad f."""
    return np.concatenate([pe.aT.v, pe.zT.v], axis=-2)


def to_U_basis(form: np.ndarray, T: np.ndarray) -> np.ndarray:
    Ti = np.linalg.inv(T)
    return _sym(np.swapaxes(Ti, -1, -2) @ form @ Ti)


def extract_A_frame(
    fr: BochnerFrame,
    mode: str = "least_squares",
    s: Optional[SubRiemannianStructure] = None,
    allow_singular: bool = False,
) -> CurvatureMatrix:
    lam = solve_lambda(fr, mode, s)
    T = frame_matrix(fr.pe)
    det = np.linalg.det(T)
    singular = np.abs(det) < SINGULAR_TOL
    if np.any(singular) and not allow_singular:
        k = int(np.argmax(singular.reshape(-1)))
        raise SingularFrame(float(det.reshape(-1)[k]), fr.points.reshape(-1, fr.N)[k])
    Tsafe = np.where(singular[..., None, None], np.eye(fr.N), T)
    forms = tensor_forms(fr, lam)
    conv = lambda M: np.where(singular[..., None, None], np.nan, to_U_basis(M, Tsafe))  # noqa: E731
    RG, R_ab = conv(forms.RG), conv(forms.R_ab)
    R_zb, R_rho = conv(forms.R_zb), conv(forms.R_rho)
    A = conv(forms.total)
    return CurvatureMatrix(fr.points, A, RG + R_ab, R_zb, R_rho, RG, R_ab, forms, lam, det, singular)


def extract_A(s: SubRiemannianStructure, x, mode: str = "least_squares") -> CurvatureMatrix:
    return extract_A_frame(build_frame(s, x), mode, s)


# the identity --------------------------------------------------------------------


@dataclass
class BochnerCheck:
    lhs: np.ndarray
    rhs: np.ndarray
    hess: np.ndarray
    RG: np.ndarray
    R_ab: np.ndarray
    R_zb: np.ndarray
    R_rho: np.ndarray

    @property
    def residual(self) -> np.ndarray:
        return np.abs(self.lhs - self.rhs) / (1.0 + np.abs(self.lhs))


def bochner_terms(
    pe: PointEval,
    fj: Jet,
    mode: str = "least_squares",
    s: Optional[SubRiemannianStructure] = None,
    check: bool = True,
) -> BochnerCheck:
    """Both sides of the identity.  With check=False a shift that misses the
    constraint is used anyway, so the failure shows up in the residual."""
    from . import gamma

    fr = frame_from_eval(pe)
    lam = solve_lambda(fr, mode, s, check=check)
    hess, RGf = hess_and_RG(fr, lam, fj)
    T = tensor_forms(fr, lam)
    df = fj.g
    RG, Rab, Rzb, Rrho = quad(RGf, df), quad(T.R_ab, df), quad(T.R_zb, df), quad(T.R_rho, df)
    lhs = gamma.gamma_all(pe, fj).lhs
    return BochnerCheck(lhs, hess + RG + Rab + Rzb + Rrho, hess, RG, Rab, Rzb, Rrho)


def verify_bochner(s: SubRiemannianStructure, f, x, mode: str = "least_squares"):
    """|LHS - RHS| / (1 + |LHS|) of the decomposition at x."""
    pe = st.evaluate(s, x, order=2)
    fj = st._as_jet(s, f, x, 3)
    r = bochner_terms(pe, fj, mode, s).residual
    return float(r) if np.ndim(r) == 0 else r


def random_cubics(rng: np.random.Generator, points: np.ndarray) -> Jet:
    """Exact order-3 jets of random cubic polynomials, one per point.

    Coefficients (about the origin) are standard normal, then symmetrized.
    """
    from itertools import permutations

    from .jets import from_taylor

    pts = np.asarray(points, dtype=float)
    B, N = pts.shape[:-1], pts.shape[-1]
    c0 = rng.normal(size=B)
    c1 = rng.normal(size=B + (N,))
    c2 = rng.normal(size=B + (N, N))
    c2 = 0.5 * (c2 + np.swapaxes(c2, -1, -2))
    c3 = rng.normal(size=B + (N, N, N))
    k = len(B)
    c3 = sum(np.transpose(c3, tuple(range(k)) + tuple(k + q for q in perm)) for perm in permutations(range(3))) / 6.0
    return from_taylor(c0, c1, c2, c3, pts)

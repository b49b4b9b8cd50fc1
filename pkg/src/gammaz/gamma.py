"""Gamma-one / Gamma-two forms and their z-corrected variants, straight from the definitions.

    Gamma1(f,g)   = <a^T grad f, a^T grad g>
    Gamma1z(f,g)  = <z^T grad f, z^T grad g>
    Gamma2(f,f)   = 1/2 L Gamma1(f,f) - Gamma1(L f, f)
    Gamma2z(f,f)  = 1/2 L Gamma1z(f,f) - Gamma1z(L f, f)
                    + div_z^rho( Gamma_{1,grad(aa^T)}(f,f) )
                    - div_a^rho( Gamma_{1,grad(zz^T)}(f,f) )

with Gamma_{1,grad(M)}(f,f)_k = <grad f, d_k M grad f> and
div_M^rho(F) = div(M F) + <grad log rho*, M F>.

Nothing here knows about the Bochner decomposition; L is applied to jets of
Gamma1(f,f) directly, so this module is the independent left-hand side.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import structure as st
from .jets import Jet
from .structure import PointEval, SubRiemannianStructure


@dataclass
class GammaEval:
    points: np.ndarray
    gamma1: np.ndarray
    gamma1_z: np.ndarray
    gamma2: np.ndarray
    gamma2_z_rho: np.ndarray
    corr_z: np.ndarray  # div_z^rho(Gamma_{1,grad(aa^T)})
    corr_a: np.ndarray  # div_a^rho(Gamma_{1,grad(zz^T)})

    @property
    def lhs(self) -> np.ndarray:
        return self.gamma2 + self.gamma2_z_rho


def _frame_sq(M: Jet, df: Jet) -> Jet:
    # |M grad f|^2 as a jet, M of shape (..., r, N), df of shape (..., N)
    U = (M.truncate(df.order) * df.expand(-2)).sum(-1)
    return (U * U).sum(-1)


def _bilinear_value(M: np.ndarray, u: np.ndarray, w: np.ndarray) -> np.ndarray:
    return np.einsum("...kp,...p,...kq,...q->...", M, u, M, w)


def _grad_form(Mgrad: Jet, df: Jet) -> Jet:
    # F_k = <grad f, d_k M grad f>;  Mgrad has shape (..., N, N, N) [i, j, k]
    o = min(Mgrad.order, df.order)
    left = df.truncate(o).expand(-1).expand(-1)  # (..., N, 1, 1)
    right = df.truncate(o).expand(-2).expand(-1)  # (..., 1, N, 1)
    return (left * Mgrad.truncate(o) * right).sum(-3).sum(-2)


def _weighted_div(M: Jet, F: Jet, grad_log_rho: np.ndarray) -> np.ndarray:
    # div(M F) + <grad log rho, M F>, value only; M, F order >= 1
    MF = (M.truncate(F.order) * F.expand(-2)).sum(-1)
    r = np.arange(MF.shape[-1])
    div = MF.g[..., r, r].sum(-1)
    return div + np.einsum("...i,...i->...", grad_log_rho, MF.v)


def gamma_all(pe: PointEval, fj: Jet) -> GammaEval:
    """Every left-hand-side quantity for an order-3 jet of f at the points of pe."""
    if fj.order < 3:
        raise ValueError("Gamma2 needs an order-3 jet of f")
    df = fj.grad()  # order 2, shape (..., N)
    G1 = _frame_sq(pe.aT, df)  # order 2
    G1z = _frame_sq(pe.zT, df)
    Lf = st.apply_L(pe, fj)  # order 1
    LG1 = st.apply_L(pe, G1).v
    LG1z = st.apply_L(pe, G1z).v
    g1_Lf = _bilinear_value(pe.aT.v, Lf.g, df.v)
    g1z_Lf = _bilinear_value(pe.zT.v, Lf.g, df.v)
    gamma2 = 0.5 * LG1 - g1_Lf

    A = pe.aaT()
    Z = pe.zzT()
    glr = pe.grad_log_rho()
    Fa = _grad_form(A.grad(), df)
    Fz = _grad_form(Z.grad(), df)
    corr_z = _weighted_div(Z, Fa, glr)
    corr_a = _weighted_div(A, Fz, glr)
    gamma2z = 0.5 * LG1z - g1z_Lf + corr_z - corr_a
    return GammaEval(pe.points, G1.v, G1z.v, gamma2, gamma2z, corr_z, corr_a)


def _prep(s: SubRiemannianStructure, f, x, order: int):
    pe = st.evaluate(s, x, order=2)
    fj = st._as_jet(s, f, x, order)
    return pe, fj


def _scalar(v):
    v = np.asarray(v)
    return float(v) if v.ndim == 0 else v


def gamma1(s: SubRiemannianStructure, f, g, x):
    fg = st._as_jet(s, f, x, 1).g
    gg = st._as_jet(s, g, x, 1).g
    pe = st.evaluate(s, x, order=0)
    return _scalar(_bilinear_value(pe.aT.v, fg, gg))


def gamma1_z(s: SubRiemannianStructure, f, g, x):
    fg = st._as_jet(s, f, x, 1).g
    gg = st._as_jet(s, g, x, 1).g
    pe = st.evaluate(s, x, order=0)
    return _scalar(_bilinear_value(pe.zT.v, fg, gg))


def gamma2(s: SubRiemannianStructure, f, x):
    pe, fj = _prep(s, f, x, 3)
    return _scalar(gamma_all(pe, fj).gamma2)


def gamma2_z_rho(s: SubRiemannianStructure, f, x):
    pe, fj = _prep(s, f, x, 3)
    return _scalar(gamma_all(pe, fj).gamma2_z_rho)


def evaluate(s: SubRiemannianStructure, f, x) -> GammaEval:
    pe, fj = _prep(s, f, x, 3)
    return gamma_all(pe, fj)

"""Region-level constants from pointwise curvature matrices."""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from . import bochner as bo
from . import structure as st
from .jets import DomainError
from .structure import SubRiemannianStructure

CHUNK = 4096


class NonpositiveKappa(ValueError):
    pass


def lambda_min(A) -> np.ndarray:
    """Smallest eigenvalue of (a batch of) symmetric matrices."""
    A = np.asarray(A, dtype=float)
    A = 0.5 * (A + np.swapaxes(A, -1, -2))
    w = np.linalg.eigvalsh(A)[..., 0]
    return float(w) if w.ndim == 0 else w


@dataclass
class ScanResult:
    region: List[Tuple[float, float]]
    shape: Tuple[int, ...]
    points: np.ndarray  # (cells, N), row-major
    lambda_min: np.ndarray  # (cells,), NaN at holes
    A: Optional[np.ndarray]  # (cells, N, N)
    kappa: float
    argmin: int
    holes: int
    hole_reasons: dict = field(default_factory=dict)

    @property
    def argmin_point(self) -> Optional[List[float]]:
        return None if self.argmin < 0 else self.points[self.argmin].tolist()

    @property
    def kappa_max(self) -> float:
        v = self.lambda_min
        return float(np.nanmax(v)) if np.any(np.isfinite(v)) else math.nan

    def summary(self) -> dict:
        return {
            "kappa": self.kappa,
            "argmin": self.argmin_point,
            "argmin_index": self.argmin,
            "max_lambda_min": self.kappa_max,
            "cells": int(self.points.shape[0]),
            "shape": list(self.shape),
            "holes": self.holes,
            "hole_reasons": self.hole_reasons,
        }


def grid_points(region: Sequence[Tuple[float, float]], shape: Sequence[int]) -> np.ndarray:
    """Row-major grid; an axis with one node sits at lo (lo == hi expected)."""
    if len(region) != len(shape):
        raise ValueError("region and grid have different dimensions")
    axes = []
    for (lo, hi), k in zip(region, shape):
        if k < 1:
            raise ValueError("grid sizes must be positive")
        if k == 1:
            if lo != hi:
                raise ValueError(f"single-node axis needs lo == hi, got {lo}:{hi}")
            axes.append(np.array([float(lo)]))
        else:
            axes.append(np.linspace(lo, hi, k))
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.reshape(-1) for m in mesh], axis=-1)


def _chunk(s: SubRiemannianStructure, pts: np.ndarray, mode: str):
    # returns (A, reasons); A is NaN at holes
    N = s.dim
    try:
        fr = bo.build_frame(s, pts)
        cm = bo.extract_A_frame(fr, mode, s, allow_singular=True)
        reasons = ["singular_frame" if b else "" for b in cm.singular]
        return cm.A, reasons
    except (DomainError, bo.AssumptionUnsatisfied, np.linalg.LinAlgError):
        if len(pts) == 1:
            return np.full((1, N, N), np.nan), ["degenerate"]
    As, reasons = [], []
    for p in pts:
        A, r = _chunk(s, p[None, :], mode)
        As.append(A)
        reasons += r
    return np.concatenate(As, axis=0), reasons


def scan_region(
    s: SubRiemannianStructure,
    region: Sequence[Tuple[float, float]],
    shape: Sequence[int],
    mode: str = "least_squares",
    keep_A: bool = True,
    threads: int = 1,
) -> ScanResult:
    pts = grid_points(region, shape)
    chunks = [pts[i : i + CHUNK] for i in range(0, len(pts), CHUNK)]
    if threads > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            parts = list(ex.map(lambda c: _chunk(s, c, mode), chunks))
    else:
        parts = [_chunk(s, c, mode) for c in chunks]
    A = np.concatenate([p[0] for p in parts], axis=0)
    reasons = [r for p in parts for r in p[1]]
    ok = np.all(np.isfinite(A), axis=(-2, -1))
    lam = np.full(len(pts), np.nan)
    if np.any(ok):
        lam[ok] = lambda_min(A[ok])
    if np.any(ok):
        k = int(np.nanargmin(lam))
        kappa = float(lam[k])
    else:
        k, kappa = -1, math.nan
    counts: dict = {}
    for r, good in zip(reasons, ok):
        if not good:
            key = r or "non_finite"
            counts[key] = counts.get(key, 0) + 1
    return ScanResult(
        [(float(a), float(b)) for a, b in region],
        tuple(int(x) for x in shape),
        pts,
        lam,
        A if keep_A else None,
        kappa,
        k,
        int((~ok).sum()),
        counts,
    )


def cd_verdict(A, kappa: float, tol: float = 1e-12) -> np.ndarray:
    """True where A - kappa I is positive semidefinite (up to tol)."""
    A = np.asarray(A, dtype=float)
    return lambda_min(A - kappa * np.eye(A.shape[-1])) >= -tol


def zlsi_constant(kappa: float) -> float:
    """Constant 1/(2 kappa) of the z-log-Sobolev inequality."""
    if not kappa > 0:
        raise NonpositiveKappa(f"kappa = {kappa} is not positive; the bounds do not apply")
    return 1.0 / (2.0 * kappa)


def decay_envelope(kappa: float, I0: float, t) -> Tuple[np.ndarray, np.ndarray]:
    """(KL bound, L1 bound) = (I0 e^{-2 kappa t} / (2 kappa), sqrt(I0 / kappa) e^{-kappa t})."""
    if not kappa > 0:
        raise NonpositiveKappa(f"kappa = {kappa} is not positive; the bounds do not apply")
    if I0 < 0:
        raise ValueError("I0 must be nonnegative")
    t = np.asarray(t, dtype=float)
    kl = I0 / (2.0 * kappa) * np.exp(-2.0 * kappa * t)
    l1 = math.sqrt(I0 / kappa) * np.exp(-kappa * t)
    if t.ndim == 0:
        return float(kl), float(l1)
    return kl, l1


def write_scan_csv(res: ScanResult, path, with_A: bool = True) -> None:
    """Columns x1..xN, lambda_min and, optionally, the upper triangle A11, A12, ..."""
    N = res.points.shape[1]
    cols = [f"x{i + 1}" for i in range(N)] + ["lambda_min"]
    if with_A and res.A is not None:
        cols += [f"A{i + 1}{j + 1}" for i in range(N) for j in range(i, N)]
    iu = np.triu_indices(N)
    with open(path, "w", newline="\n") as fh:
        fh.write("# gammaz scan v1\n")
        fh.write(",".join(cols) + "\n")
        for c in range(res.points.shape[0]):
            row = [repr(float(v)) for v in res.points[c]]
            row.append(repr(float(res.lambda_min[c])))
            if with_A and res.A is not None:
                row += [repr(float(v)) for v in res.A[c][iu]]
            fh.write(",".join(row) + "\n")

"""Degenerate Fokker-Planck evolution, entropy diagnostics and particle sampling.

The density solves d_t rho = div(rho aa^T grad log(rho / rho*)) on a box with
zero normal flux.  Cells are uniform; face fluxes are

    J = mean(rho) * (aa^T at the face centre) * grad_face(log rho - log rho*)

where the normal component of the gradient is the two-cell difference and
the tangential ones average the cell-centred differences of the two
neighbours.  Since every face flux is shared by two cells, mass telescopes.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np

from . import bound
from . import structure as st
from .structure import SubRiemannianStructure

log = logging.getLogger(__name__)

LOG_FLOOR = 1e-300


class Unstable(FloatingPointError):
    pass


class BadInitial(ValueError):
    pass


@dataclass
class DensityGrid:
    box: List[Tuple[float, float]]
    shape: Tuple[int, ...]
    rho: np.ndarray

    @property
    def h(self) -> np.ndarray:
        return np.array([(b - a) / k for (a, b), k in zip(self.box, self.shape)])

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.h))

    @property
    def mass(self) -> float:
        return float(self.rho.sum() * self.cell_volume)

    def centers(self) -> np.ndarray:
        return cell_centers(self.box, self.shape)

    def copy(self) -> "DensityGrid":
        return DensityGrid(list(self.box), tuple(self.shape), self.rho.copy())

    def save(self, path: str) -> None:
        """Little-endian float64 values (row-major) plus a JSON sidecar."""
        self.rho.astype("<f8").tofile(path)
        with open(path + ".json", "w") as fh:
            json.dump({"box": [list(b) for b in self.box], "shape": list(self.shape), "dtype": "<f8"}, fh)

    @classmethod
    def load(cls, path: str) -> "DensityGrid":
        with open(path + ".json") as fh:
            meta = json.load(fh)
        rho = np.fromfile(path, dtype="<f8").reshape(meta["shape"])
        return cls([tuple(b) for b in meta["box"]], tuple(meta["shape"]), rho)


def cell_centers(box, shape) -> np.ndarray:
    axes = [a + (np.arange(k) + 0.5) * (b - a) / k for (a, b), k in zip(box, shape)]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack(mesh, axis=-1)


def log_rho_star(s: SubRiemannianStructure, box, shape) -> np.ndarray:
    """log of the grid-normalized invariant density exp(-V) Vol."""
    c = cell_centers(box, shape)
    from . import exprdsl

    lr = -exprdsl.eval_jet(s.V, c, 0).v + exprdsl.eval_jet(s.log_vol, c, 0).v
    h = np.array([(b - a) / k for (a, b), k in zip(box, shape)])
    mx = lr.max()
    Z = np.exp(lr - mx).sum() * np.prod(h)
    return lr - mx - math.log(Z)


def rho_star(s: SubRiemannianStructure, box, shape) -> DensityGrid:
    return DensityGrid(list(box), tuple(shape), np.exp(log_rho_star(s, box, shape)))


def from_function(box, shape, fn) -> DensityGrid:
    """Density proportional to fn(centres), normalized on the grid."""
    c = cell_centers(box, shape)
    rho = np.asarray(fn(c), dtype=float)
    g = DensityGrid(list(box), tuple(shape), rho)
    if not (np.isfinite(g.mass) and g.mass > 0):
        raise BadInitial(f"initial density has mass {g.mass!r} on the box")
    g.rho = rho / g.mass
    return g


# diagnostics -----------------------------------------------------------------


def _phi(rho: np.ndarray, lrs: np.ndarray) -> np.ndarray:
    return np.log(np.maximum(rho, LOG_FLOOR)) - lrs


def _cell_gradient(phi: np.ndarray, h: np.ndarray) -> List[np.ndarray]:
    # central differences inside, one-sided at the walls
    if phi.ndim == 1:
        return [np.gradient(phi, h[0], edge_order=1)]
    return list(np.gradient(phi, *h, edge_order=1))


def _kl(rho: np.ndarray, lrs: np.ndarray, dv: float) -> float:
    pos = rho > 0
    return float(np.sum(rho[pos] * (np.log(rho[pos]) - lrs[pos])) * dv)


def kl_divergence(rho: DensityGrid, s: SubRiemannianStructure) -> float:
    return _kl(rho.rho, log_rho_star(s, rho.box, rho.shape), rho.cell_volume)


def l1_distance(rho: DensityGrid, s: SubRiemannianStructure) -> float:
    rs = np.exp(log_rho_star(s, rho.box, rho.shape))
    return float(np.abs(rho.rho - rs).sum() * rho.cell_volume)


def _metric_cells(s: SubRiemannianStructure, box, shape) -> np.ndarray:
    pe = st.evaluate(s, cell_centers(box, shape), order=0)
    return pe.aaT().v + pe.zzT().v


def _fisher(rho, lrs, K, h, dv) -> float:
    g = np.stack(_cell_gradient(_phi(rho, lrs), h), axis=-1)
    return float(np.sum(rho * np.einsum("...i,...ij,...j->...", g, K, g)) * dv)


def fisher_az(rho: DensityGrid, s: SubRiemannianStructure) -> float:
    """Grid version of int <grad log(rho/rho*), (aa^T + zz^T) grad log(rho/rho*)> rho."""
    lrs = log_rho_star(s, rho.box, rho.shape)
    K = _metric_cells(s, rho.box, rho.shape)
    return _fisher(rho.rho, lrs, K, rho.h, rho.cell_volume)


@dataclass
class Diagnostics:
    t: List[float] = field(default_factory=list)
    kl: List[float] = field(default_factory=list)
    fisher_az: List[float] = field(default_factory=list)
    l1: List[float] = field(default_factory=list)
    mass: List[float] = field(default_factory=list)
    steps: int = 0
    dt: float = 0.0
    clip_events: int = 0
    clipped_cells: int = 0
    cells: int = 0
    max_step_kl_increase: float = -math.inf  # over every step, not just samples
    max_step_mass_drift: float = 0.0  # relative

    def write_csv(self, path: str) -> None:
        with open(path, "w", newline="\n") as fh:
            fh.write("# gammaz dissipate v1\n")
            fh.write("t,kl,fisher_az,l1\n")
            for row in zip(self.t, self.kl, self.fisher_az, self.l1):
                fh.write(",".join(repr(float(v)) for v in row) + "\n")


# solver ------------------------------------------------------------------------


class _FluxOperator:
    """Precomputed face metrics for one structure on one grid."""

    def __init__(self, s: SubRiemannianStructure, box, shape):
        self.d = len(shape)
        self.h = np.array([(b - a) / k for (a, b), k in zip(box, shape)])
        centers = cell_centers(box, shape)
        self.rows = []
        lam = 0.0
        for i in range(self.d):
            sl = [slice(None)] * self.d
            sl[i] = slice(0, -1)
            face = centers[tuple(sl)].copy()
            face[..., i] += 0.5 * self.h[i]
            if face.size:
                A = st.evaluate(s, face, order=0).aaT().v
                lam = max(lam, float(np.linalg.eigvalsh(A.reshape(-1, self.d, self.d))[:, -1].max()))
            else:
                A = np.zeros(face.shape[:-1] + (self.d, self.d))
            self.rows.append(A[..., i, :])
        Ac = st.evaluate(s, centers, order=0).aaT().v
        lam = max(lam, float(np.linalg.eigvalsh(Ac.reshape(-1, self.d, self.d))[:, -1].max()))
        self.lam_max = lam

    def auto_dt(self) -> float:
        return 0.2 * float(np.min(self.h) ** 2) / max(self.lam_max, 1e-300)

    def rate(self, rho: np.ndarray, phi: np.ndarray) -> np.ndarray:
        d, h = self.d, self.h
        grads = _cell_gradient(phi, h)
        out = np.zeros_like(rho)
        for i in range(d):
            if rho.shape[i] < 2:
                continue
            lo = [slice(None)] * d
            hi = [slice(None)] * d
            lo[i] = slice(0, -1)
            hi[i] = slice(1, None)
            lo, hi = tuple(lo), tuple(hi)
            K = self.rows[i]
            flux = K[..., i] * (phi[hi] - phi[lo]) / h[i]
            for j in range(d):
                if j != i:
                    flux = flux + K[..., j] * 0.5 * (grads[j][lo] + grads[j][hi])
            flux = 0.5 * (rho[lo] + rho[hi]) * flux
            pad = [(0, 0)] * d
            pad[i] = (1, 1)
            J = np.pad(flux, pad)
            a = [slice(None)] * d
            b = [slice(None)] * d
            a[i] = slice(1, None)
            b[i] = slice(0, -1)
            out += (J[tuple(a)] - J[tuple(b)]) / h[i]
        return out


def fp_run(
    s: SubRiemannianStructure,
    rho0: DensityGrid,
    t_end: float,
    dt: Union[str, float] = "auto",
    samples: int = 101,
    record_every: Optional[int] = None,
) -> Tuple[DensityGrid, Diagnostics]:
    """Explicit Euler finite-volume evolution with no-flux walls."""
    if not t_end > 0:
        raise ValueError("t_end must be positive")
    rho = np.array(rho0.rho, dtype=float)
    if not np.all(np.isfinite(rho)) or np.any(rho <= 0):
        raise BadInitial("initial density must be finite and strictly positive")
    box, shape = list(rho0.box), tuple(rho0.shape)
    op = _FluxOperator(s, box, shape)
    lrs = log_rho_star(s, box, shape)
    K = _metric_cells(s, box, shape)
    dv = float(np.prod(op.h))
    step = op.auto_dt() if dt == "auto" else float(dt)
    if not step > 0:
        raise ValueError("dt must be positive")
    nsteps = max(1, int(math.ceil(t_end / step - 1e-12)))
    step = t_end / nsteps
    if record_every is None:
        record_every = max(1, nsteps // max(1, samples - 1))
    rs = np.exp(lrs)
    mass0 = float(rho.sum() * dv)
    diag = Diagnostics(dt=step, cells=rho.size)

    def record(t: float) -> None:
        diag.t.append(t)
        diag.kl.append(_kl(rho, lrs, dv))
        diag.fisher_az.append(_fisher(rho, lrs, K, op.h, dv))
        diag.l1.append(float(np.abs(rho - rs).sum() * dv))
        diag.mass.append(float(rho.sum() * dv))

    record(0.0)
    kl_prev = diag.kl[0]
    for k in range(1, nsteps + 1):
        m_before = rho.sum()
        rho = rho + step * op.rate(rho, _phi(rho, lrs))
        total = rho.sum()
        if not (np.all(np.isfinite(rho)) and np.isfinite(total)):
            raise Unstable(f"non-finite density after step {k} (dt = {step:g})")
        diag.max_step_mass_drift = max(diag.max_step_mass_drift, abs(total / m_before - 1.0))
        neg = rho < 0
        if np.any(neg):
            diag.clip_events += 1
            diag.clipped_cells += int(neg.sum())
            rho[neg] = 0.0
            kept = rho.sum() * dv
            if not (np.isfinite(kept) and kept > 0):
                raise Unstable(f"mass lost in clipping at step {k} (dt = {step:g})")
            rho *= mass0 / kept
            log.info("step %d: clipped %d negative cells", k, int(neg.sum()))
        kl_now = _kl(rho, lrs, dv)
        diag.max_step_kl_increase = max(diag.max_step_kl_increase, kl_now - kl_prev)
        kl_prev = kl_now
        if k % record_every == 0 or k == nsteps:
            record(k * step)
    diag.steps = nsteps
    return DensityGrid(box, shape, rho), diag


# particles ---------------------------------------------------------------------


def ito_drift(s: SubRiemannianStructure, x: np.ndarray) -> np.ndarray:
    """mu = div(aa^T) - a (x) grad a - aa^T grad V (reproduces the generator exactly)."""
    pe = st.evaluate(s, x, order=1)
    A = pe.aaT()
    divA = np.einsum("...ijj->...i", A.g)
    c = pe.a_otimes_nabla_a().v
    return divA - c - np.einsum("...ij,...j->...i", A.v, pe.V.g)


def em_particles(
    s: SubRiemannianStructure,
    x0: np.ndarray,
    t_end: float,
    dt: float,
    seed: int = 0,
) -> np.ndarray:
    """Euler-Maruyama for dX = mu dt + sqrt(2) a(X) dB (Ito form)."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    rng = np.random.default_rng(seed)
    x = np.array(x0, dtype=float, copy=True)
    nsteps = max(1, int(round(t_end / dt)))
    h = t_end / nsteps
    for _ in range(nsteps):
        pe = st.evaluate(s, x, order=0)
        dB = rng.normal(scale=math.sqrt(h), size=x.shape[:-1] + (s.n,))
        x = x + ito_drift(s, x) * h + math.sqrt(2.0) * np.einsum("...kp,...k->...p", pe.aT.v, dB)
    return x


# envelope check ------------------------------------------------------------------


@dataclass
class DissipationReport:
    kappa: float
    rate: float
    kl_monotone: bool
    kl_envelope: List[bool]
    l1_envelope: List[bool]
    pinsker: List[bool]
    max_kl_increase: float
    envelopes_apply: bool

    @property
    def ok(self) -> bool:
        env = (all(self.kl_envelope) and all(self.l1_envelope)) if self.envelopes_apply else True
        return self.kl_monotone and all(self.pinsker) and env

    def to_dict(self) -> dict:
        return {
            "kappa": self.kappa,
            "measured_rate": self.rate,
            "kl_monotone": self.kl_monotone,
            "max_kl_increase": self.max_kl_increase,
            "envelopes_apply": self.envelopes_apply,
            "kl_envelope_all": all(self.kl_envelope),
            "l1_envelope_all": all(self.l1_envelope),
            "pinsker_all": all(self.pinsker),
            "ok": self.ok,
        }


def decay_rate(t: Sequence[float], kl: Sequence[float]) -> float:
    """Slope of -log KL against t over the second half of the samples."""
    t = np.asarray(t, dtype=float)
    kl = np.asarray(kl, dtype=float)
    half = len(t) // 2
    tt, kk = t[half:], kl[half:]
    good = kk > 0
    if good.sum() < 2:
        return math.nan
    slope = np.polyfit(tt[good], np.log(kk[good]), 1)[0]
    return float(-slope)


def verify_dissipation(diag: Diagnostics, kappa: float, tol: float = 1e-12) -> DissipationReport:
    t = np.asarray(diag.t)
    kl = np.asarray(diag.kl)
    l1 = np.asarray(diag.l1)
    inc = np.diff(kl)
    max_inc = float(inc.max()) if inc.size else 0.0
    monotone = bool(np.all(inc <= tol))
    pinsker = [bool(a <= math.sqrt(2.0 * max(b, 0.0)) + 1e-10) for a, b in zip(l1, kl)]
    applies = kappa > 0
    if applies:
        kl_b, l1_b = bound.decay_envelope(kappa, diag.fisher_az[0], t)
        kl_env = [bool(a <= b) for a, b in zip(kl, kl_b)]
        l1_env = [bool(a <= b) for a, b in zip(l1, l1_b)]
    else:
        kl_env, l1_env = [], []
    rate = decay_rate(t, kl) if len(t) > 2 else math.nan
    return DissipationReport(kappa, rate, monotone, kl_env, l1_env, pinsker, max_inc, applies)

"""Order-3 truncated Taylor jets (forward-mode AD) over a handful of variables.

A jet stores the value of a scalar field together with all of its partial
derivatives up to a runtime order (0..3).  Partials are kept as dense,
fully symmetric arrays, which is the cheapest layout for d <= 8.

Every array carries arbitrary leading "batch" axes followed by the derivative
axes, so a single Jet can hold many evaluation points (or a whole matrix of
fields) at once:

    v : batch
    g : batch + (d,)
    h : batch + (d, d)
    t : batch + (d, d, d)

Arithmetic broadcasts over the batch axes exactly like numpy does.
"""

from __future__ import annotations

from typing import Optional, Sequence, Tuple

import numpy as np

MAX_ORDER = 3


class DomainError(ArithmeticError):
    """An elementary function was evaluated outside its domain."""


def _sym3(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    # a_i b_jk + a_j b_ik + a_k b_ij
    x = a[..., :, None, None] * b[..., None, :, :]
    return x + np.swapaxes(x, -3, -2) + np.swapaxes(x, -3, -1)


class Jet:
    """Truncated Taylor expansion of a (batched) scalar field."""

    __slots__ = ("order", "d", "v", "g", "h", "t")

    def __init__(
        self,
        v: np.ndarray,
        g: Optional[np.ndarray] = None,
        h: Optional[np.ndarray] = None,
        t: Optional[np.ndarray] = None,
        order: Optional[int] = None,
        d: Optional[int] = None,
    ):
        v = np.asarray(v, dtype=float)
        if order is None:
            order = 0 if g is None else 1 if h is None else 2 if t is None else 3
        if d is None:
            if g is None:
                raise ValueError("dimension required for an order-0 jet")
            d = np.shape(g)[-1]
        self.order = order
        self.d = d
        self.v = v
        self.g = None if order < 1 else np.asarray(g, dtype=float)
        self.h = None if order < 2 else np.asarray(h, dtype=float)
        self.t = None if order < 3 else np.asarray(t, dtype=float)

    # construction ----------------------------------------------------------

    @classmethod
    def constant(cls, value, d: int, order: int = MAX_ORDER) -> "Jet":
        v = np.asarray(value, dtype=float)
        z = np.zeros(v.shape + (d,) * MAX_ORDER)
        return cls(
            v,
            z[(...,) + (0,) * 2] if order >= 1 else None,
            z[(...,) + (0,)] if order >= 2 else None,
            z if order >= 3 else None,
            order=order,
            d=d,
        )

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.v.shape

    def parts(self):
        return [p for p in (self.v, self.g, self.h, self.t)[: self.order + 1]]

    def truncate(self, order: int) -> "Jet":
        order = min(order, self.order)
        p = self.parts()[: order + 1] + [None] * (3 - order)
        return Jet(p[0], p[1], p[2], p[3], order=order, d=self.d)

    def __repr__(self) -> str:
        return f"Jet(order={self.order}, d={self.d}, shape={self.shape})"

    # batch-axis manipulation -----------------------------------------------

    def _map(self, fn) -> "Jet":
        # fn acts on leading (batch) axes; derivative axes trail and ride along
        p = [fn(a) for a in self.parts()] + [None] * (3 - self.order)
        return Jet(p[0], p[1], p[2], p[3], order=self.order, d=self.d)

    def __getitem__(self, idx) -> "Jet":
        if not isinstance(idx, tuple):
            idx = (idx,)
        if any(i is Ellipsis for i in idx):
            raise IndexError("Ellipsis indexing is not supported on jets")
        return self._map(lambda a: a[idx])

    def sum(self, axis: int) -> "Jet":
        nb = self.v.ndim
        ax = axis % nb
        return self._map(lambda a: a.sum(axis=ax))

    def expand(self, axis: int) -> "Jet":
        nb = self.v.ndim
        ax = axis % (nb + 1)
        return self._map(lambda a: np.expand_dims(a, ax))

    # calculus --------------------------------------------------------------

    def deriv(self, i: int) -> "Jet":
        """Jet of the partial derivative along variable i (order drops by one)."""
        if self.order < 1:
            raise ValueError("cannot differentiate an order-0 jet")
        o = self.order - 1
        return Jet(
            self.g[..., i],
            self.h[..., i, :] if o >= 1 else None,
            self.t[..., i, :, :] if o >= 2 else None,
            order=o,
            d=self.d,
        )

    def grad(self) -> "Jet":
        """Jet of the whole gradient; a new trailing batch axis of length d."""
        if self.order < 1:
            raise ValueError("cannot differentiate an order-0 jet")
        o = self.order - 1
        return Jet(
            self.g,
            self.h if o >= 1 else None,
            self.t if o >= 2 else None,
            order=o,
            d=self.d,
        )

    # arithmetic ------------------------------------------------------------

    def _coerce(self, other) -> "Jet":
        if isinstance(other, Jet):
            if other.d != self.d:
                raise ValueError("jet dimension mismatch")
            return other
        return Jet.constant(other, self.d, self.order)

    def __add__(self, other) -> "Jet":
        o = self._coerce(other)
        k = min(self.order, o.order)
        p = [a + b for a, b in zip(self.parts()[: k + 1], o.parts()[: k + 1])]
        p += [None] * (3 - k)
        return Jet(p[0], p[1], p[2], p[3], order=k, d=self.d)

    __radd__ = __add__

    def __neg__(self) -> "Jet":
        p = [-a for a in self.parts()] + [None] * (3 - self.order)
        return Jet(p[0], p[1], p[2], p[3], order=self.order, d=self.d)

    def __sub__(self, other) -> "Jet":
        return self + (-self._coerce(other))

    def __rsub__(self, other) -> "Jet":
        return self._coerce(other) + (-self)

    def __mul__(self, other) -> "Jet":
        if not isinstance(other, Jet):
            c = np.asarray(other, dtype=float)
            p = [a * _lift(c, k) for k, a in enumerate(self.parts())]
            p += [None] * (3 - self.order)
            return Jet(p[0], p[1], p[2], p[3], order=self.order, d=self.d)
        o = self._coerce(other)
        k = min(self.order, o.order)
        f, g = self, o
        v = f.v * g.v
        gr = h = t = None
        if k >= 1:
            gr = f.g * g.v[..., None] + f.v[..., None] * g.g
        if k >= 2:
            h = (
                f.h * g.v[..., None, None]
                + f.v[..., None, None] * g.h
                + f.g[..., :, None] * g.g[..., None, :]
                + g.g[..., :, None] * f.g[..., None, :]
            )
        if k >= 3:
            t = (
                f.t * g.v[..., None, None, None]
                + f.v[..., None, None, None] * g.t
                + _sym3(f.g, g.h)
                + _sym3(g.g, f.h)
            )
        return Jet(v, gr, h, t, order=k, d=self.d)

    __rmul__ = __mul__

    def __truediv__(self, other) -> "Jet":
        if not isinstance(other, Jet):
            c = np.asarray(other, dtype=float)
            if np.any(c == 0):
                raise DomainError("division by zero")
            return self * (1.0 / c)
        return self * reciprocal(other)

    def __rtruediv__(self, other) -> "Jet":
        return reciprocal(self) * other

    def __pow__(self, p) -> "Jet":
        return power(self, p)


def _lift(c: np.ndarray, k: int) -> np.ndarray:
    # broadcast a batch-shaped constant against an array with k derivative axes
    return c.reshape(c.shape + (1,) * k) if c.ndim else c


# construction helpers --------------------------------------------------------


def variable(index: int, value, d: int, order: int = MAX_ORDER) -> Jet:
    """Jet of the coordinate x_index evaluated at `value` (scalar or batch)."""
    if not 0 <= index < d:
        raise ValueError(f"variable index {index} out of range for d={d}")
    j = Jet.constant(value, d, order)
    if order >= 1:
        g = np.zeros(j.v.shape + (d,))
        g[..., index] = 1.0
        j.g = g
    return j


def variables(point, order: int = MAX_ORDER) -> list:
    """Coordinate jets for a point of shape (d,) or a batch of shape (B, d)."""
    p = np.asarray(point, dtype=float)
    d = p.shape[-1]
    return [variable(i, p[..., i], d, order) for i in range(d)]


def from_taylor(c0, c1, c2, c3, point) -> Jet:
    """Order-3 jet at `point` of the cubic c0 + c1.x + c2[x,x]/2 + c3[x,x,x]/6.

    `c2` and `c3` must be symmetric.  All coefficient arrays may carry the
    same leading batch axes as `point`.
    """
    p = np.asarray(point, dtype=float)
    c1 = np.asarray(c1, dtype=float)
    c2 = np.asarray(c2, dtype=float)
    c3 = np.asarray(c3, dtype=float)
    t3p = np.einsum("...ijk,...k->...ij", c3, p)
    h = c2 + t3p
    g = c1 + np.einsum("...ij,...j->...i", c2, p) + 0.5 * np.einsum("...ij,...j->...i", t3p, p)
    v = (
        np.asarray(c0, dtype=float)
        + np.einsum("...i,...i->...", c1, p)
        + 0.5 * np.einsum("...i,...ij,...j->...", p, c2, p)
        + np.einsum("...ij,...i,...j->...", t3p, p, p) / 6.0
    )
    return Jet(v, g, h, np.broadcast_to(c3, h.shape + (p.shape[-1],)).copy(), order=3)


def stack(jets: Sequence[Jet], axis: int = 0) -> Jet:
    """Stack jets with equal batch shapes along a new batch axis."""
    k = min(j.order for j in jets)
    d = jets[0].d
    nb = jets[0].v.ndim
    ax = axis % (nb + 1)
    p = [np.stack([j.parts()[i] for j in jets], axis=ax) for i in range(k + 1)]
    p += [None] * (3 - k)
    return Jet(p[0], p[1], p[2], p[3], order=k, d=d)


# composition -----------------------------------------------------------------


def compose(c: Sequence[np.ndarray], inner: Jet) -> Jet:
    """Faa di Bruno: jet of phi(inner) from phi's derivatives c = (phi, phi', phi'', phi''').

    The c_k are the derivatives of the outer function evaluated at inner.v
    (batch-shaped arrays), not Taylor coefficients divided by k!.
    """
    k = inner.order
    c = [np.asarray(ci, dtype=float) for ci in c]
    f = inner
    v = c[0]
    g = h = t = None
    if k >= 1:
        g = c[1][..., None] * f.g
    if k >= 2:
        h = c[1][..., None, None] * f.h + c[2][..., None, None] * (
            f.g[..., :, None] * f.g[..., None, :]
        )
    if k >= 3:
        t = (
            c[1][..., None, None, None] * f.t
            + c[2][..., None, None, None] * _sym3(f.g, f.h)
            + c[3][..., None, None, None]
            * (f.g[..., :, None, None] * f.g[..., None, :, None] * f.g[..., None, None, :])
        )
    return Jet(v, g, h, t, order=k, d=f.d)


def _check(cond: np.ndarray, msg: str) -> None:
    if np.any(cond):
        raise DomainError(msg)


def exp(x: Jet) -> Jet:
    e = np.exp(x.v)
    return compose((e, e, e, e), x)


def log(x: Jet) -> Jet:
    u = x.v
    _check(~(u > 0), "log of a nonpositive value")
    r = 1.0 / u
    return compose((np.log(u), r, -r * r, 2.0 * r**3), x)


def sqrt(x: Jet) -> Jet:
    u = x.v
    _check(~(u > 0), "sqrt of a nonpositive value")
    s = np.sqrt(u)
    return compose((s, 0.5 / s, -0.25 / (s * u), 0.375 / (s * u * u)), x)


def sin(x: Jet) -> Jet:
    s, c = np.sin(x.v), np.cos(x.v)
    return compose((s, c, -s, -c), x)


def cos(x: Jet) -> Jet:
    s, c = np.sin(x.v), np.cos(x.v)
    return compose((c, -s, -c, s), x)


def tanh(x: Jet) -> Jet:
    th = np.tanh(x.v)
    s = 1.0 - th * th
    return compose((th, s, -2.0 * th * s, s * (6.0 * th * th - 2.0)), x)


def reciprocal(x: Jet) -> Jet:
    u = x.v
    _check(u == 0, "division by zero")
    r = 1.0 / u
    return compose((r, -r * r, 2.0 * r**3, -6.0 * r**4), x)


def power(x: Jet, p) -> Jet:
    """x**p.  Integer p uses repeated multiplication; real p needs x > 0."""
    if isinstance(p, Jet):
        return exp(p * log(x))
    pf = float(p)
    if pf.is_integer() and abs(pf) <= 64:
        n = int(pf)
        if n == 0:
            return Jet.constant(np.ones_like(x.v), x.d, x.order)
        base = x if n > 0 else reciprocal(x)
        n = abs(n)
        out = None
        sq = base
        while n:
            if n & 1:
                out = sq if out is None else out * sq
            n >>= 1
            if n:
                sq = sq * sq
        return out
    u = x.v
    _check(~(u > 0), "non-integer power of a nonpositive value")
    up = u**pf
    return compose(
        (
            up,
            pf * up / u,
            pf * (pf - 1.0) * up / (u * u),
            pf * (pf - 1.0) * (pf - 2.0) * up / (u**3),
        ),
        x,
    )


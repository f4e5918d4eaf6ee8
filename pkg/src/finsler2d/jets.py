"""Truncated multivariate Taylor (jet) arithmetic.

A jet carries the value and the partial derivatives of a scalar function of
``(x1, x2, u)`` at a base point, truncated per variable: mixed x-derivatives
up to total order ``max_x_order`` and u-derivatives up to ``max_u_order``.
Addition and multiplication are the truncated Cauchy-product ring, and the
elementary functions act by univariate Taylor composition, so evaluating a
composed expression on jets yields machine-accurate derivatives of the
composite with no step-size tuning.

Coefficients are stored Taylor-normalized (divided by factorials) in a dense
flat vector.  Every operation broadcasts over leading batch axes of the
coefficient array, so one pipeline pass can process thousands of sample
points at numpy speed.

Derivative extraction by coefficient shift (:func:`du`, :func:`dx1`,
:func:`dx2`) is exact for all slots below the corresponding cap; the slot at
the cap itself is zero-filled and must not be read downstream.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

__all__ = [
    "JetSpec",
    "Jet",
    "JetError",
    "JetDomainError",
    "SingularDivisionError",
    "CapError",
    "BaseMismatchError",
    "permissive",
    "jet_constant",
    "lift_variable",
    "lift_scalar",
    "extract",
    "value",
    "du",
    "dx1",
    "dx2",
    "compose_univariate",
    "exp",
    "ln",
    "sqrt",
    "powf",
    "sin",
    "cos",
    "tan",
    "atan",
    "atanh_ext",
    "abs_sign",
]


class JetError(Exception):
    """Base class for jet arithmetic failures."""


class JetDomainError(JetError):
    """Constant term outside the real domain of an elementary function."""


class SingularDivisionError(JetDomainError):
    """Division by a jet whose constant term vanishes."""


class CapError(JetError):
    """Derivative index beyond the truncation caps of the spec."""


class BaseMismatchError(JetError):
    """Binary operation between jets with different specs or base points."""


# Strict mode raises on domain violations; permissive mode writes NaN into the
# offending batch slots instead, so grid sweeps can mask bad samples.
_PERMISSIVE_DEPTH = 0


class permissive:
    """Context manager: turn jet domain errors into NaN coefficients."""

    def __enter__(self):
        global _PERMISSIVE_DEPTH
        _PERMISSIVE_DEPTH += 1
        return self

    def __exit__(self, exc_type, exc, tb):
        global _PERMISSIVE_DEPTH
        _PERMISSIVE_DEPTH -= 1
        return False


def _strict() -> bool:
    return _PERMISSIVE_DEPTH == 0


@dataclass(frozen=True)
class JetSpec:
    """Truncation caps of the jet ring.

    ``max_u_order`` must be at least 5 when third u-derivatives of the spray
    functions are consumed downstream, and ``max_x_order`` at least 2 when
    curvature is requested; the defaults satisfy both.
    """

    max_u_order: int = 6
    max_x_order: int = 2

    def __post_init__(self):
        if self.max_u_order < 0 or self.max_x_order < 0:
            raise ValueError("jet truncation orders must be nonnegative")

    @property
    def nilpotency(self) -> int:
        return self.max_u_order + self.max_x_order


class _Tables:
    """Precomputed index tables for one (max_x_order, max_u_order) pair."""

    def __init__(self, mx: int, mu: int):
        self.mx = mx
        self.mu = mu
        self.pairs = [(a, s - a) for s in range(mx + 1) for a in range(s, -1, -1)]
        self.pair_index = {p: i for i, p in enumerate(self.pairs)}
        self.n = len(self.pairs) * (mu + 1)

        mult_i1, mult_i2, mult_out = [], [], []
        for pi, (a, b) in enumerate(self.pairs):
            for a1 in range(a + 1):
                for b1 in range(b + 1):
                    p1 = self.pair_index[(a1, b1)]
                    p2 = self.pair_index[(a - a1, b - b1)]
                    for k in range(mu + 1):
                        for k1 in range(k + 1):
                            mult_out.append(self.flat(pi, k))
                            mult_i1.append(self.flat(p1, k1))
                            mult_i2.append(self.flat(p2, k - k1))
        self.mult_i1 = np.asarray(mult_i1)
        self.mult_i2 = np.asarray(mult_i2)
        scatter = np.zeros((len(mult_out), self.n))
        scatter[np.arange(len(mult_out)), mult_out] = 1.0
        self.mult_mat = scatter

        self.fact = np.empty(self.n)
        for pi, (a, b) in enumerate(self.pairs):
            for k in range(mu + 1):
                self.fact[self.flat(pi, k)] = (
                    math.factorial(a) * math.factorial(b) * math.factorial(k)
                )

        self.shift_u = self._shift(lambda a, b, k: (a, b, k + 1), lambda a, b, k: k + 1)
        self.shift_x1 = self._shift(lambda a, b, k: (a + 1, b, k), lambda a, b, k: a + 1)
        self.shift_x2 = self._shift(lambda a, b, k: (a, b + 1, k), lambda a, b, k: b + 1)

    def flat(self, pair_idx: int, k: int) -> int:
        return pair_idx * (self.mu + 1) + k

    def index(self, a: int, b: int, k: int) -> int:
        if (a, b) not in self.pair_index or not 0 <= k <= self.mu:
            raise CapError(
                f"derivative order ({a},{b},{k}) beyond caps "
                f"(x-total {self.mx}, u {self.mu})"
            )
        return self.flat(self.pair_index[(a, b)], k)

    def _shift(self, src_fn, fac_fn):
        dst, src, fac = [], [], []
        for pi, (a, b) in enumerate(self.pairs):
            for k in range(self.mu + 1):
                s = src_fn(a, b, k)
                sp = (s[0], s[1])
                if sp in self.pair_index and s[2] <= self.mu:
                    dst.append(self.flat(pi, k))
                    src.append(self.flat(self.pair_index[sp], s[2]))
                    fac.append(float(fac_fn(a, b, k)))
        return np.asarray(dst), np.asarray(src), np.asarray(fac)


@lru_cache(maxsize=None)
def _tables(mx: int, mu: int) -> _Tables:
    return _Tables(mx, mu)


def _as_base(base) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    x1, x2, u = base
    return (
        np.asarray(x1, dtype=float),
        np.asarray(x2, dtype=float),
        np.asarray(u, dtype=float),
    )


@dataclass(frozen=True)
class Jet:
    """Dense truncated Taylor expansion at a base point.

    ``coeffs`` has shape ``(..., n)`` where the trailing axis enumerates the
    multi-indices of the spec and leading axes are broadcastable batch axes.
    Jets are immutable values; all operations are pure.
    """

    spec: JetSpec
    base: tuple[np.ndarray, np.ndarray, np.ndarray]
    coeffs: np.ndarray

    # -- ring operations ---------------------------------------------------

    def _check_mate(self, other: "Jet") -> None:
        if self.spec != other.spec:
            raise BaseMismatchError("jets have different specs")
        for p, q in zip(self.base, other.base):
            if p.shape == q.shape:
                if not np.array_equal(p, q, equal_nan=True):
                    raise BaseMismatchError("jets have different base points")
            elif not np.array_equal(*np.broadcast_arrays(p, q), equal_nan=True):
                raise BaseMismatchError("jets have different base points")

    def _tab(self) -> _Tables:
        return _tables(self.spec.max_x_order, self.spec.max_u_order)

    def __add__(self, other):
        if isinstance(other, Jet):
            self._check_mate(other)
            return Jet(self.spec, self.base, self.coeffs + other.coeffs)
        c = self.coeffs.copy()
        c[..., 0] = c[..., 0] + np.asarray(other, dtype=float)
        return Jet(self.spec, self.base, c)

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, Jet):
            self._check_mate(other)
            return Jet(self.spec, self.base, self.coeffs - other.coeffs)
        return self + (-np.asarray(other, dtype=float))

    def __rsub__(self, other):
        return (-self) + other

    def __neg__(self):
        return Jet(self.spec, self.base, -self.coeffs)

    def __mul__(self, other):
        if isinstance(other, Jet):
            self._check_mate(other)
            t = self._tab()
            prod = self.coeffs[..., t.mult_i1] * other.coeffs[..., t.mult_i2]
            return Jet(self.spec, self.base, prod @ t.mult_mat)
        v = np.asarray(other, dtype=float)
        return Jet(self.spec, self.base, self.coeffs * v[..., None])

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Jet):
            return self * other.reciprocal()
        v = np.asarray(other, dtype=float)
        return Jet(self.spec, self.base, self.coeffs / v[..., None])

    def __rtruediv__(self, other):
        return self.reciprocal() * other

    def __pow__(self, p):
        if isinstance(p, (int, np.integer)) or (
            isinstance(p, float) and p.is_integer()
        ):
            n = int(p)
            if n < 0:
                return self.reciprocal() ** (-n)
            out = jet_constant(self.spec, self.base, np.ones(self.coeffs.shape[:-1]))
            acc = self
            while n:
                if n & 1:
                    out = out * acc
                n >>= 1
                if n:
                    acc = acc * acc
            return out
        return powf(self, float(p))

    def reciprocal(self) -> "Jet":
        v = self.coeffs[..., 0]
        bad = ~(v != 0)
        if np.any(bad) and _strict():
            raise SingularDivisionError("division by jet with zero constant term")
        with np.errstate(all="ignore"):
            s = self.coeffs / v[..., None]
            s[..., 0] = 0.0
            sj = Jet(self.spec, self.base, s)
            # 1/(v(1+s)) via the truncated geometric series in the nilpotent part
            r = jet_constant(self.spec, self.base, np.ones(v.shape))
            for _ in range(self.spec.nilpotency):
                r = 1.0 - sj * r
            out = r.coeffs / v[..., None]
        if np.any(bad):
            out = np.where(bad[..., None], np.nan, out)
        return Jet(self.spec, self.base, out)

    # -- inspection ----------------------------------------------------------

    def value(self) -> np.ndarray:
        return self.coeffs[..., 0]

    def extract(self, a: int, b: int, k: int) -> np.ndarray:
        """Derivative d^a_x1 d^b_x2 d^k_u at the base point."""
        t = self._tab()
        i = t.index(a, b, k)
        return self.coeffs[..., i] * t.fact[i]

    def nilpotent(self) -> "Jet":
        c = self.coeffs.copy()
        c[..., 0] = 0.0
        return Jet(self.spec, self.base, c)


def jet_constant(spec: JetSpec, base, val) -> Jet:
    base = _as_base(base)
    val = np.asarray(val, dtype=float)
    t = _tables(spec.max_x_order, spec.max_u_order)
    c = np.zeros(val.shape + (t.n,))
    c[..., 0] = val
    return Jet(spec, base, c)


def lift_variable(which: str, base, spec: JetSpec = JetSpec()) -> Jet:
    """Jet of a coordinate function: value at the base, own first-order slot 1."""
    base = _as_base(base)
    t = _tables(spec.max_x_order, spec.max_u_order)
    idx = {"x1": (1, 0, 0), "x2": (0, 1, 0), "u": (0, 0, 1)}
    if which not in idx:
        raise ValueError(f"unknown variable {which!r}")
    val = base[("x1", "x2", "u").index(which)]
    shape = np.broadcast_shapes(*(p.shape for p in base))
    c = np.zeros(shape + (t.n,))
    c[..., 0] = val
    a, b, k = idx[which]
    if (a, b) in t.pair_index and k <= t.mu:
        c[..., t.index(a, b, k)] = 1.0
    return Jet(spec, base, c)


def lift_scalar(tval, order: int) -> Jet:
    """Univariate jet of the identity in the u slot; used for t-line work."""
    tval = np.asarray(tval, dtype=float)
    spec = JetSpec(max_u_order=order, max_x_order=0)
    z = np.zeros_like(tval)
    return lift_variable("u", (z, z, tval), spec)


def value(j: Jet) -> np.ndarray:
    return j.value()


def extract(j: Jet, a: int, b: int, k: int) -> np.ndarray:
    return j.extract(a, b, k)


def _shifted(j: Jet, table_attr: str) -> Jet:
    t = j._tab()
    dst, src, fac = getattr(t, table_attr)
    c = np.zeros_like(j.coeffs)
    c[..., dst] = j.coeffs[..., src] * fac
    return Jet(j.spec, j.base, c)


def du(j: Jet) -> Jet:
    """u-derivative by coefficient shift; top u-order slot becomes invalid."""
    return _shifted(j, "shift_u")


def dx1(j: Jet) -> Jet:
    return _shifted(j, "shift_x1")


def dx2(j: Jet) -> Jet:
    return _shifted(j, "shift_x2")


# -- elementary functions ----------------------------------------------------


def _nan_out(jet: Jet, bad: np.ndarray) -> Jet:
    if np.any(bad):
        return Jet(jet.spec, jet.base, np.where(bad[..., None], np.nan, jet.coeffs))
    return jet


def _domain(bad: np.ndarray, msg: str) -> None:
    if np.any(bad) and _strict():
        raise JetDomainError(msg)


def compose_univariate(inner: Jet, outer: np.ndarray) -> Jet:
    """Compose an outer univariate Taylor series with an inner jet.

    ``outer[..., m]`` is the m-th Taylor coefficient (derivative over m!) of
    the outer function at the inner jet's constant term, for m up to at least
    the spec's nilpotency order.
    """
    m_top = inner.spec.nilpotency
    outer = np.asarray(outer, dtype=float)
    s = inner.nilpotent()
    res = jet_constant(inner.spec, inner.base, outer[..., m_top] * np.ones(inner.value().shape))
    for m in range(m_top - 1, -1, -1):
        res = res * s + outer[..., m]
    return res


def _poly_reciprocal(p0, p1, p2, order: int) -> np.ndarray:
    """Series 1/(p0 + p1 z + p2 z^2) to the given order, batched over p's."""
    with np.errstate(all="ignore"):
        r = [1.0 / p0]
        for m in range(1, order + 1):
            acc = p1 * r[m - 1]
            if m >= 2:
                acc = acc + p2 * r[m - 2]
            r.append(-acc / p0)
    return np.stack(r, axis=-1)


def exp(j):
    if not isinstance(j, Jet):
        return np.exp(j)
    v = j.value()
    m_top = j.spec.nilpotency
    with np.errstate(all="ignore"):
        e = np.exp(v)
        outer = np.stack([e / math.factorial(m) for m in range(m_top + 1)], axis=-1)
        out = compose_univariate(j, outer)
    return out


def ln(j):
    if not isinstance(j, Jet):
        return np.log(j)
    v = j.value()
    bad = ~(v > 0)
    _domain(bad, "ln of a jet with nonpositive constant term")
    m_top = j.spec.nilpotency
    with np.errstate(all="ignore"):
        coeffs = [np.log(v)]
        for m in range(1, m_top + 1):
            coeffs.append((-1.0) ** (m - 1) / (m * v**m))
        out = compose_univariate(j, np.stack(coeffs, axis=-1))
    return _nan_out(out, bad)


def _binomial_outer(v: np.ndarray, p: float, m_top: int) -> np.ndarray:
    coeffs = [v**p]
    b = np.ones_like(v)
    for m in range(1, m_top + 1):
        b = b * (p - (m - 1)) / m
        coeffs.append(b * v ** (p - m))
    return np.stack(coeffs, axis=-1)


def sqrt(j):
    if not isinstance(j, Jet):
        return np.sqrt(j)
    v = j.value()
    bad = ~(v > 0)
    _domain(bad, "sqrt of a jet with nonpositive constant term")
    with np.errstate(all="ignore"):
        out = compose_univariate(j, _binomial_outer(v, 0.5, j.spec.nilpotency))
    return _nan_out(out, bad)


def powf(j: Jet, p: float) -> Jet:
    """Real power with non-integer exponent; needs a positive constant term."""
    v = j.value()
    bad = ~(v > 0)
    _domain(bad, f"jet**{p} with nonpositive constant term")
    with np.errstate(all="ignore"):
        out = compose_univariate(j, _binomial_outer(v, p, j.spec.nilpotency))
    return _nan_out(out, bad)


def sin(j):
    if not isinstance(j, Jet):
        return np.sin(j)
    v = j.value()
    cycle = (np.sin(v), np.cos(v), -np.sin(v), -np.cos(v))
    outer = np.stack(
        [cycle[m % 4] / math.factorial(m) for m in range(j.spec.nilpotency + 1)],
        axis=-1,
    )
    return compose_univariate(j, outer)


def cos(j):
    if not isinstance(j, Jet):
        return np.cos(j)
    v = j.value()
    cycle = (np.cos(v), -np.sin(v), -np.cos(v), np.sin(v))
    outer = np.stack(
        [cycle[m % 4] / math.factorial(m) for m in range(j.spec.nilpotency + 1)],
        axis=-1,
    )
    return compose_univariate(j, outer)


def tan(j):
    if not isinstance(j, Jet):
        return np.tan(j)
    c = cos(j)
    bad = ~(c.value() != 0)
    _domain(bad, "tan of a jet at a pole of tan")
    return _nan_out(sin(j) * c.reciprocal(), bad)


def atan(j):
    if not isinstance(j, Jet):
        return np.arctan(j)
    v = j.value()
    m_top = j.spec.nilpotency
    # integrate the series of 1/(1+(v+z)^2) in z
    r = _poly_reciprocal(1.0 + v * v, 2.0 * v, np.ones_like(v), max(m_top - 1, 0))
    coeffs = [np.arctan(v)]
    for m in range(1, m_top + 1):
        coeffs.append(r[..., m - 1] / m)
    return compose_univariate(j, np.stack(coeffs, axis=-1))


def atanh_ext(j):
    """Real-log extension z -> ln|(1+z)/(1-z)|/2, defined for |z| != 1.

    Coincides with arctanh on (-1, 1) and continues it smoothly outside,
    where closed-form metric families routinely land.
    """
    if not isinstance(j, Jet):
        v = np.asarray(j, dtype=float)
        with np.errstate(all="ignore"):
            return 0.5 * np.log(np.abs((1.0 + v) / (1.0 - v)))
    v = j.value()
    bad = ~(np.abs(1.0 - v * v) > 0)
    _domain(bad, "atanh_ext at |z| = 1")
    m_top = j.spec.nilpotency
    with np.errstate(all="ignore"):
        # derivative is 1/(1 - (v+z)^2) on every branch
        r = _poly_reciprocal(1.0 - v * v, -2.0 * v, -np.ones_like(v), max(m_top - 1, 0))
        coeffs = [0.5 * np.log(np.abs((1.0 + v) / (1.0 - v)))]
        for m in range(1, m_top + 1):
            coeffs.append(r[..., m - 1] / m)
        out = compose_univariate(j, np.stack(coeffs, axis=-1))
    return _nan_out(out, bad)


def abs_sign(j):
    """|j| with the sign frozen from the constant term, never differentiated."""
    if not isinstance(j, Jet):
        return np.abs(j)
    s = np.sign(j.value())
    bad = s == 0
    _domain(bad, "abs_sign of a jet with zero constant term")
    out = j * np.where(bad, np.nan, s)
    return out

"""Finite-difference derivative oracle.

Central-difference stencils applied per variable and combined as tensor
products for mixed partials, with Richardson extrapolation across nested
step sizes.  The oracle only ever calls a plain scalar evaluator, so it is
independent of the jet engine it cross-checks.

The arithmetic is type-generic: stencil weights are exact integers and all
combinations use ring operations of whatever scalar type ``fn`` consumes, so
feeding it an ``mpmath`` evaluator (see :func:`expr.evaluate_mp`) removes the
rounding floor entirely and leaves only the O(h^4) truncation term, which a
step of 1e-3 pushes far below every verification tolerance, even for mixed
seventh-order derivatives.
"""

from __future__ import annotations

import math
from itertools import product

__all__ = ["fd_derivative", "fd_jet_slots", "max_relative_error"]


def _stencil(order: int):
    offs = [order / 2.0 - j for j in range(order + 1)]
    coef = [(-1) ** j * math.comb(order, j) for j in range(order + 1)]
    return offs, coef


def _plain(fn, point, orders, steps):
    """One multi-variable central difference at the given per-variable steps."""
    stencils = [_stencil(n) for n in orders]
    total = None
    for combo in product(*(range(n + 1) for n in orders)):
        shifted = [
            p + stencils[i][0][j] * steps[i]
            for i, (p, j) in enumerate(zip(point, combo))
        ]
        w = math.prod(stencils[i][1][j] for i, j in enumerate(combo))
        term = w * fn(*shifted)
        total = term if total is None else total + term
    denom = math.prod(
        steps[i] ** orders[i] for i in range(len(orders)) if orders[i] > 0
    )
    return total / denom


def fd_derivative(fn, point, orders, h0=1e-3, levels: int = 2, one=1.0):
    """Mixed partial derivative of ``fn`` at ``point`` by Richardson FD.

    ``orders`` gives the derivative order per variable; order-0 variables are
    held fixed.  Steps scale with the coordinate magnitude.  ``one`` sets the
    scalar type of the computation (e.g. ``mpmath.mpf(1)``); the default runs
    in doubles.
    """
    orders = tuple(int(n) for n in orders)
    if sum(orders) == 0:
        return fn(*[one * p for p in point])
    steps0 = [
        one * h0 * (1.0 + abs(float(p))) if n > 0 else one * 0
        for p, n in zip(point, orders)
    ]
    point = [one * p for p in point]
    d = [
        _plain(fn, point, orders, [s / 2**lvl for s in steps0])
        for lvl in range(levels)
    ]
    for k in range(1, levels):
        w = 4**k
        d = [(w * d[i + 1] - d[i]) / (w - 1) for i in range(len(d) - 1)]
    return d[0]


def fd_jet_slots(fn, point, max_x_order: int = 2, max_u_order: int = 5, **kw):
    """All mixed derivatives up to the caps as a dict ``(a, b, k) -> value``."""
    out = {}
    for a in range(max_x_order + 1):
        for b in range(max_x_order + 1 - a):
            for k in range(max_u_order + 1):
                out[(a, b, k)] = fd_derivative(fn, point, (a, b, k), **kw)
    return out


def max_relative_error(got: dict, want: dict) -> float:
    """Worst slot-wise error, relative to magnitudes floored at 1."""
    worst = 0.0
    for key, w in want.items():
        g, w = float(got[key]), float(w)
        err = abs(g - w) / max(1.0, abs(g), abs(w))
        worst = max(worst, err)
    return worst

"""Tensor pipeline for two-dimensional Finsler metrics in chart form.

A metric is given as ``F = |y1| f(x1, x2, eps*u)`` with ``u = y2/y1`` and
``eps = sgn(y1)`` fixed per chart.  From one jet of ``f`` at a sample the
pipeline produces the spray functions ``f1, f2`` (as jets, so their
u-derivatives and first x-derivatives remain available), the spray
coefficients ``G^i = f_i (y1)^2``, the nonlinear connection ``N^i_j``, the
Berwald connection ``G^h_{jk}``, the curvature components ``R^i_{12}``, the
Berwald curvature tensor, the Landsberg tensor with the scalar residual of
the Landsberg condition ``f1''' l1 + f2''' l2 = 0``, the metric tensor, and
the metricity defect of the spray.

Everything is batched: samples may be arrays of any shape and the report
fields mirror that shape.  Residuals come both raw and normalized by the
magnitude of their constituent terms, so thresholds are scale-free.
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from typing import Callable

import numpy as np

from . import jets
from .expr import Expression, evaluate, parse
from .jets import Jet, JetSpec, du, dx1, dx2, lift_variable

__all__ = [
    "GeometryError",
    "ChartError",
    "PositivityError",
    "DegenerateMetricError",
    "TangentSample",
    "MetricModel",
    "GeometryReport",
    "DEFAULT_SPEC",
    "BUILTIN_METRICS",
    "builtin_metric",
    "f_jet",
    "spray_f1f2",
    "spray_coefficients",
    "hilbert_components",
    "nonlinear_connection",
    "berwald_connection",
    "curvature",
    "berwald_tensor",
    "landsberg_tensor",
    "metric_tensor",
    "metricity_residual",
    "jacobi_endomorphism",
    "compute_report",
]

DEFAULT_SPEC = JetSpec(max_u_order=6, max_x_order=2)
WEDGE_RATIO = 1e-6


class GeometryError(Exception):
    """Base class for pipeline failures."""


class ChartError(GeometryError):
    """Sample direction incompatible with the y1-chart."""


class PositivityError(GeometryError):
    """Metric function f is not strictly positive at a sample."""


class DegenerateMetricError(GeometryError):
    """f'' vanishes where spray coefficients are required."""


@dataclass(frozen=True)
class TangentSample:
    """Point(s) on the slit tangent bundle; fields broadcast together.

    Directions too close to the y1 = 0 line are rejected outright: the
    pipeline is single-chart and does not switch to the y2-chart.
    """

    x1: np.ndarray
    x2: np.ndarray
    y1: np.ndarray
    y2: np.ndarray

    def __post_init__(self):
        for name in ("x1", "x2", "y1", "y2"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))
        norm = np.hypot(self.y1, self.y2)
        bad = ~(np.abs(self.y1) > WEDGE_RATIO * norm)
        if np.any(bad):
            raise ChartError(
                f"{int(np.sum(bad))} sample(s) with |y1| <= {WEDGE_RATIO} * |y|"
            )

    @property
    def u(self) -> np.ndarray:
        return self.y2 / self.y1

    @property
    def epsilon(self) -> np.ndarray:
        return np.sign(self.y1)

    @property
    def shape(self):
        return np.broadcast_shapes(
            self.x1.shape, self.x2.shape, self.y1.shape, self.y2.shape
        )

    def scaled(self, lam: float) -> "TangentSample":
        return TangentSample(self.x1, self.x2, lam * self.y1, lam * self.y2)


@dataclass(frozen=True)
class MetricModel:
    """Evaluator for f plus chart metadata.

    ``f_expr`` is the user expression in (x1, x2, u); programmatically
    assembled metrics (quadrature-built families) supply ``f_fn`` taking the
    three lifted jets instead.
    """

    f_expr: Expression | None
    epsilon: int = 1
    label: str = ""
    f_fn: Callable[[Jet, Jet, Jet], Jet] | None = None

    def __post_init__(self):
        if self.epsilon not in (1, -1):
            raise ValueError("epsilon must be +1 or -1")
        if (self.f_expr is None) == (self.f_fn is None):
            raise ValueError("exactly one of f_expr / f_fn must be given")

    @classmethod
    def from_expression(cls, source, epsilon: int = 1, label: str | None = None):
        e = source if isinstance(source, Expression) else parse(source)
        return cls(f_expr=e, epsilon=epsilon, label=label if label is not None else e.source)

    @classmethod
    def from_callable(cls, fn, epsilon: int = 1, label: str = ""):
        return cls(f_expr=None, f_fn=fn, epsilon=epsilon, label=label)

    def describe(self) -> str:
        return self.f_expr.source if self.f_expr is not None else (self.label or "<callable>")


def f_jet(model: MetricModel, sample: TangentSample, spec: JetSpec = DEFAULT_SPEC) -> Jet:
    """Jet of u -> f(x, eps*u) at the sample's (x1, x2, u).

    The chart sign is folded into the inner variable, so the u-derivative
    slots of the result are exactly the primed quantities of the pipeline.
    """
    if not np.all(sample.epsilon == model.epsilon):
        raise ChartError("sample direction lies in the opposite chart half-plane")
    base = (sample.x1, sample.x2, sample.u)
    x1j = lift_variable("x1", base, spec)
    x2j = lift_variable("x2", base, spec)
    wj = lift_variable("u", base, spec) * float(model.epsilon)
    if model.f_expr is not None:
        fj = evaluate(model.f_expr, {"x1": x1j, "x2": x2j, "u": wj})
    else:
        fj = model.f_fn(x1j, x2j, wj)
    bad = ~(fj.value() > 0)
    if np.any(bad) and jets._strict():
        raise PositivityError(
            f"f <= 0 at {int(np.sum(bad))} sample(s); metric not positive there"
        )
    return fj


def spray_f1f2(fj: Jet) -> tuple[Jet, Jet]:
    """Spray functions f1, f2 as jets (valid to u-order 4, x-order 1).

    Solves the metricity system for the geodesic spray of F; requires f > 0
    and f'' != 0 at the base points.
    """
    fpp_val = fj.extract(0, 0, 2)
    bad = ~(fpp_val != 0)
    if np.any(bad) and jets._strict():
        raise DegenerateMetricError(
            f"f'' = 0 at {int(np.sum(bad))} sample(s); spray undefined"
        )
    uu = lift_variable("u", fj.base, fj.spec)
    fp = du(fj)
    fpp = du(fp)
    d1f, d2f = dx1(fj), dx2(fj)
    d1fp, d2fp = dx1(fp), dx2(fp)
    adv = d1f + uu * d2f
    mix = d1fp + uu * d2fp - d2f
    den = (2.0 * fj * fpp).reciprocal()
    f1 = (adv * fpp - mix * fp) * den
    f2 = (uu * adv * fpp + mix * (fj - uu * fp)) * den
    return f1, f2


def spray_coefficients(f1: Jet, f2: Jet, sample: TangentSample):
    """G^1 = f1 (y1)^2, G^2 = f2 (y1)^2 at the sample."""
    y1sq = sample.y1**2
    return f1.value() * y1sq, f2.value() * y1sq


def hilbert_components(fj: Jet, epsilon) -> tuple[np.ndarray, np.ndarray]:
    """Hilbert one-form components l1 = eps (f - u f'), l2 = eps f'."""
    f = fj.value()
    fp = fj.extract(0, 0, 1)
    u = fj.base[2]
    return epsilon * (f - u * fp), epsilon * fp


def nonlinear_connection(f1: Jet, f2: Jet, sample: TangentSample) -> dict[str, np.ndarray]:
    """The four components N^i_j of the canonical nonlinear connection."""
    y1, y2 = sample.y1, sample.y2
    v1, v2 = f1.value(), f2.value()
    p1, p2 = f1.extract(0, 0, 1), f2.extract(0, 0, 1)
    return {
        "N11": 2.0 * y1 * v1 - y2 * p1,
        "N12": y1 * p1,
        "N21": 2.0 * y1 * v2 - y2 * p2,
        "N22": y1 * p2,
    }


def berwald_connection(f1: Jet, f2: Jet, u) -> dict[str, np.ndarray]:
    """The six independent Berwald connection coefficients G^h_{jk}."""
    out = {}
    for h, fh in (("1", f1), ("2", f2)):
        v = fh.value()
        p = fh.extract(0, 0, 1)
        pp = fh.extract(0, 0, 2)
        out[f"G{h}_11"] = 2.0 * v - 2.0 * u * p + u**2 * pp
        out[f"G{h}_12"] = p - u * pp
        out[f"G{h}_22"] = pp
    return out


def curvature(f1: Jet, f2: Jet, sample: TangentSample) -> tuple[np.ndarray, np.ndarray]:
    """Curvature components (R^1_12, R^2_12) of the nonlinear connection."""
    y1, u = sample.y1, sample.u
    v1, v2 = f1.value(), f2.value()
    p1, p2 = f1.extract(0, 0, 1), f2.extract(0, 0, 1)
    pp1, pp2 = f1.extract(0, 0, 2), f2.extract(0, 0, 2)
    d2f1 = f1.extract(0, 1, 0)
    d2f2 = f2.extract(0, 1, 0)
    d1f1p = f1.extract(1, 0, 1)
    d2f1p = f1.extract(0, 1, 1)
    d1f2p = f2.extract(1, 0, 1)
    d2f2p = f2.extract(0, 1, 1)
    r112 = y1 * (
        u * p1**2 - p1 * p2 - 2.0 * u * v1 * pp1 + 2.0 * v2 * pp1
        - u * d2f1p + 2.0 * d2f1 - d1f1p
    )
    r212 = y1 * (
        -2.0 * u * v1 * pp2 + 2.0 * v2 * pp2 + u * p1 * p2 - 2.0 * v2 * p1
        + 2.0 * v1 * p2 - p2**2 - u * d2f2p + 2.0 * d2f2 - d1f2p
    )
    return r112, r212


def berwald_tensor(f1: Jet, f2: Jet, sample: TangentSample) -> dict[str, np.ndarray]:
    """The eight Berwald curvature components G^h_{ijk}; all carry f_h'''."""
    y1, u = sample.y1, sample.u
    u2 = u * u
    u3 = u2 * u
    out = {}
    for h, fh in (("1", f1), ("2", f2)):
        t = fh.extract(0, 0, 3)
        out[f"B{h}_111"] = -u3 * t / y1
        out[f"B{h}_211"] = u2 * t / y1
        out[f"B{h}_221"] = -u * t / y1
        out[f"B{h}_222"] = t / y1
    return out


def landsberg_tensor(f1: Jet, f2: Jet, fj: Jet, l1, l2, sample: TangentSample):
    """Landsberg components and the scalar residual of the Landsberg condition.

    Returns ``(components, residual, normalized_residual)`` where the
    residual is ``f1''' l1 + f2''' l2`` and its normalized form divides by
    one plus the magnitudes of the two terms.
    """
    u = sample.u
    f = fj.value()
    t1 = f1.extract(0, 0, 3) * l1
    t2 = f2.extract(0, 0, 3) * l2
    r = t1 + t2
    rhat = np.abs(r) / (1.0 + np.abs(t1) + np.abs(t2))
    half = 0.5 * f * r
    comps = {
        "L111": u**3 * half,
        "L112": -(u**2) * half,
        "L122": -u * half,
        "L222": -half,
    }
    return comps, r, rhat


def metric_tensor(fj: Jet, sample: TangentSample):
    """Fundamental tensor entries g11, g12, g22 and det g = f^3 f''."""
    f = fj.value()
    fp = fj.extract(0, 0, 1)
    fpp = fj.extract(0, 0, 2)
    u = sample.u
    a = f - u * fp
    g11 = a**2 + u**2 * f * fpp
    g12 = fp * a - u * f * fpp
    g22 = fp**2 + f * fpp
    det = g11 * g22 - g12**2
    return g11, g12, g22, det


def metricity_residual(
    model: MetricModel,
    sample: TangentSample,
    spec: JetSpec = DEFAULT_SPEC,
    spray_model: MetricModel | None = None,
) -> np.ndarray:
    """Horizontal derivative defect max_i |d_i F - N^h_i dot d_h F| / F.

    With ``spray_model`` set, the connection is taken from that model's
    spray instead, which breaks metricity for mismatched pairs and is the
    negative control.
    """
    fj = f_jet(model, sample, spec)
    src = fj if spray_model is None else f_jet(spray_model, sample, spec)
    f1, f2 = spray_f1f2(src)
    n = nonlinear_connection(f1, f2, sample)
    l1, l2 = hilbert_components(fj, sample.epsilon)
    absy1 = np.abs(sample.y1)
    big_f = absy1 * fj.value()
    d1 = absy1 * fj.extract(1, 0, 0) - n["N11"] * l1 - n["N21"] * l2
    d2 = absy1 * fj.extract(0, 1, 0) - n["N12"] * l1 - n["N22"] * l2
    return np.maximum(np.abs(d1), np.abs(d2)) / big_f


def jacobi_endomorphism(r112, r212, sample: TangentSample) -> dict[str, np.ndarray]:
    """Jacobi endomorphism R^i_j as the y-contraction of the curvature.

    Sign convention fixed against the second-derivative spray formula
    (cross-checked by finite differences in the test suite):
    R^i_1 = -y2 R^i_12, R^i_2 = y1 R^i_12.
    """
    y1, y2 = sample.y1, sample.y2
    return {
        "R1_1": -y2 * r112,
        "R1_2": y1 * r112,
        "R2_1": -y2 * r212,
        "R2_2": y1 * r212,
    }


@dataclass
class GeometryReport:
    """Every pipeline quantity at the sample points (arrays batch-shaped)."""

    F: np.ndarray
    f: np.ndarray
    f_u: np.ndarray
    f_uu: np.ndarray
    f1: np.ndarray
    f2: np.ndarray
    f1_u: np.ndarray
    f2_u: np.ndarray
    f1_uu: np.ndarray
    f2_uu: np.ndarray
    f1_uuu: np.ndarray
    f2_uuu: np.ndarray
    G1: np.ndarray
    G2: np.ndarray
    N11: np.ndarray
    N12: np.ndarray
    N21: np.ndarray
    N22: np.ndarray
    Gc1_11: np.ndarray
    Gc1_12: np.ndarray
    Gc1_22: np.ndarray
    Gc2_11: np.ndarray
    Gc2_12: np.ndarray
    Gc2_22: np.ndarray
    R112: np.ndarray
    R212: np.ndarray
    RJ1_1: np.ndarray
    RJ1_2: np.ndarray
    RJ2_1: np.ndarray
    RJ2_2: np.ndarray
    B1_111: np.ndarray
    B1_211: np.ndarray
    B1_221: np.ndarray
    B1_222: np.ndarray
    B2_111: np.ndarray
    B2_211: np.ndarray
    B2_221: np.ndarray
    B2_222: np.ndarray
    L111: np.ndarray
    L112: np.ndarray
    L122: np.ndarray
    L222: np.ndarray
    l1: np.ndarray
    l2: np.ndarray
    g11: np.ndarray
    g12: np.ndarray
    g22: np.ndarray
    det_g: np.ndarray
    landsberg_residual: np.ndarray
    landsberg_normalized: np.ndarray
    berwald_sup: np.ndarray
    berwald_normalized: np.ndarray
    metricity: np.ndarray

    def as_dict(self) -> dict[str, np.ndarray]:
        return {f.name: getattr(self, f.name) for f in fields(self)}


def _berwald_norms(f1: Jet, f2: Jet, sample: TangentSample, bt: dict):
    """Sup over components, raw and relative to the spray-derivative ladder."""
    sup = np.max(np.stack([np.abs(v) for v in bt.values()]), axis=0)
    u, y1 = sample.u, sample.y1
    kappa = np.maximum(1.0, np.abs(u) ** 3) / np.abs(y1)
    ladder = sum(
        np.abs(fh.extract(0, 0, k)) for fh in (f1, f2) for k in range(4)
    )
    return sup, sup / (1.0 + kappa * ladder)


def compute_report(
    model: MetricModel, sample: TangentSample, spec: JetSpec = DEFAULT_SPEC
) -> GeometryReport:
    """Run the whole pipeline once and collect every quantity."""
    fj = f_jet(model, sample, spec)
    f1, f2 = spray_f1f2(fj)
    g1, g2 = spray_coefficients(f1, f2, sample)
    l1, l2 = hilbert_components(fj, sample.epsilon)
    n = nonlinear_connection(f1, f2, sample)
    gc = berwald_connection(f1, f2, sample.u)
    r112, r212 = curvature(f1, f2, sample)
    rj = jacobi_endomorphism(r112, r212, sample)
    bt = berwald_tensor(f1, f2, sample)
    lt, lres, lhat = landsberg_tensor(f1, f2, fj, l1, l2, sample)
    g11, g12, g22, det = metric_tensor(fj, sample)
    bsup, bhat = _berwald_norms(f1, f2, sample, bt)

    absy1 = np.abs(sample.y1)
    big_f = absy1 * fj.value()
    d1 = absy1 * fj.extract(1, 0, 0) - n["N11"] * l1 - n["N21"] * l2
    d2 = absy1 * fj.extract(0, 1, 0) - n["N12"] * l1 - n["N22"] * l2
    with np.errstate(all="ignore"):
        metr = np.maximum(np.abs(d1), np.abs(d2)) / big_f

    return GeometryReport(
        F=big_f,
        f=fj.value(),
        f_u=fj.extract(0, 0, 1),
        f_uu=fj.extract(0, 0, 2),
        f1=f1.value(),
        f2=f2.value(),
        f1_u=f1.extract(0, 0, 1),
        f2_u=f2.extract(0, 0, 1),
        f1_uu=f1.extract(0, 0, 2),
        f2_uu=f2.extract(0, 0, 2),
        f1_uuu=f1.extract(0, 0, 3),
        f2_uuu=f2.extract(0, 0, 3),
        G1=g1,
        G2=g2,
        N11=n["N11"],
        N12=n["N12"],
        N21=n["N21"],
        N22=n["N22"],
        Gc1_11=gc["G1_11"],
        Gc1_12=gc["G1_12"],
        Gc1_22=gc["G1_22"],
        Gc2_11=gc["G2_11"],
        Gc2_12=gc["G2_12"],
        Gc2_22=gc["G2_22"],
        R112=r112,
        R212=r212,
        RJ1_1=rj["R1_1"],
        RJ1_2=rj["R1_2"],
        RJ2_1=rj["R2_1"],
        RJ2_2=rj["R2_2"],
        B1_111=bt["B1_111"],
        B1_211=bt["B1_211"],
        B1_221=bt["B1_221"],
        B1_222=bt["B1_222"],
        B2_111=bt["B2_111"],
        B2_211=bt["B2_211"],
        B2_221=bt["B2_221"],
        B2_222=bt["B2_222"],
        L111=lt["L111"],
        L112=lt["L112"],
        L122=lt["L122"],
        L222=lt["L222"],
        l1=l1,
        l2=l2,
        g11=g11,
        g12=g12,
        g22=g22,
        det_g=det,
        landsberg_residual=lres,
        landsberg_normalized=lhat,
        berwald_sup=bsup,
        berwald_normalized=bhat,
        metricity=metr,
    )


# Ready-made metric expressions; the perturbed one is the non-Landsberg
# negative control.
BUILTIN_METRICS = {
    "euclidean": "sqrt(1 + u^2)",
    "exp-x2": "sqrt(exp(x2) + u^2)",
    "shifted": "sqrt(1 + u^2) + 0.3",
    "drift": "sqrt(1 + u^2) + 0.3*u",
    "aniso": "sqrt(exp(x1) + exp(x2)*u^2)",
    "minkowski-exp": "exp(u/2)",
    "perturbed": "sqrt(exp(x2) + u^2) + 0.1*x1*u^3/(1 + u^2)",
}


def builtin_metric(name: str, epsilon: int = 1) -> MetricModel:
    try:
        src = BUILTIN_METRICS[name]
    except KeyError:
        raise KeyError(
            f"unknown builtin metric {name!r}; choices: {sorted(BUILTIN_METRICS)}"
        ) from None
    return MetricModel.from_expression(src, epsilon=epsilon, label=name)

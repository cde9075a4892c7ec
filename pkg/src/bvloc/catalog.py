"""Built-in geometries with closed-form fields and known answers.

Spheres are described by embeddings into R^3.  Every chart function (metric,
action, Hamiltonian, Poisson bivector) is derived from the embedding, so the
same formulas serve the spherical integration chart and the stereographic
charts centred at the poles, where fixed-point data is evaluated.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable, NamedTuple

import jax
import jax.numpy as jnp
import numpy as np

from .calculus import EquivariantElement, exp_field, master_equation_residuals, hamiltonian_residual
from .errors import PreconditionError, UnknownEntryError
from .exterior import FORM, VECTOR
from .geometry import (
    Chart,
    CircleAction,
    EquivariantMap,
    FixedLocus,
    Geometry,
    check_equivariance,
    validate_geometry,
)
from .jets import JetField

TWO_PI = 2.0 * math.pi
DH_VALUE = TWO_PI * (math.e - 1.0 / math.e)
SPHERE_AREA = 4.0 * math.pi


# ---------------------------------------------------------------------------
# sphere charts


def _sph_embed(u):
    th, ps = u[0], u[1]
    return jnp.stack([jnp.sin(th) * jnp.cos(ps), jnp.sin(th) * jnp.sin(ps), jnp.cos(th)])


def _sph_from(x):
    return np.array([math.acos(max(-1.0, min(1.0, x[2]))), math.atan2(x[1], x[0]) % TWO_PI])


def _stereo_embed(sign):
    def embed(u):
        a, b = u[0], u[1]
        r2 = a * a + b * b
        return jnp.stack([2 * a, 2 * b, sign * (1 - r2)]) / (1 + r2)

    return embed


def _stereo_from(sign):
    def inv(x):
        d = 1 + sign * x[2]
        return np.array([x[0] / d, x[1] / d])

    return inv


# name -> (embed, inverse, box, orientation relative to the outward normal)
SPHERE_CHARTS = {
    "sph": (_sph_embed, _sph_from, ((0.0, 0.0), (math.pi, TWO_PI)), 1, (True, True)),
    "stN": (_stereo_embed(1.0), _stereo_from(1.0), ((-1.5, -1.5), (1.5, 1.5)), 1, ()),
    "stS": (_stereo_embed(-1.0), _stereo_from(-1.0), ((-1.5, -1.5), (1.5, 1.5)), -1, ()),
}


def _product_chart(parts):
    """Chart of a product of spheres from factor chart names."""
    name = "|".join(parts)
    embeds = [SPHERE_CHARTS[p][0] for p in parts]
    invs = [SPHERE_CHARTS[p][1] for p in parts]

    def embed(u):
        return jnp.concatenate([e(u[2 * i: 2 * i + 2]) for i, e in enumerate(embeds)])

    def from_ambient(x):
        return np.concatenate([f(np.asarray(x[3 * i: 3 * i + 3])) for i, f in enumerate(invs)])

    lo = sum((SPHERE_CHARTS[p][2][0] for p in parts), ())
    hi = sum((SPHERE_CHARTS[p][2][1] for p in parts), ())
    vanish = sum((SPHERE_CHARTS[p][4] for p in parts), ())
    orient = int(np.prod([SPHERE_CHARTS[p][3] for p in parts]))
    return Chart(name, 2 * len(parts), lo, hi, embed, from_ambient, vanish), orient


@dataclass(frozen=True)
class SphereModel:
    """Chart-independent recipe for fields on a product of unit spheres.

    The circle rotates the first factor about the z-axis with speed ``k``.
    ``conformal`` perturbs the metric by ``1 + conformal * x``, which breaks
    invariance (used for fault injection).
    """

    factors: int
    k: float = 1.0
    conformal: float = 0.0

    def metric(self, embed):
        jac = jax.jacfwd(embed)

        def g(u):
            J = jac(u)
            G = J.T @ J
            if self.conformal:
                G = G * (1 + self.conformal * embed(u)[0])
            return G

        return g

    def vector(self, embed):
        jac = jax.jacfwd(embed)
        g = self.metric(embed)

        def X(u):
            x = embed(u)
            V = jnp.zeros_like(x).at[0].set(-self.k * x[1]).at[1].set(self.k * x[0])
            J = jac(u)
            G = J.T @ J
            return jnp.linalg.solve(G, J.T @ V)

        return X

    def first_area(self, embed, orient):
        """Signed area density of the first factor in these coordinates."""
        jac = jax.jacfwd(embed)

        def a(u):
            J = jac(u)[:3, :2]
            return orient * jnp.sqrt(jnp.linalg.det(J.T @ J))

        return a

    def poisson(self, embed, orient, scale=None):
        """``k`` times the inverse of the first factor's area form, lifted."""
        area = self.first_area(embed, orient)
        n = 2 * self.factors
        size = n * (n - 1) // 2

        def pi(u):
            c = -self.k / area(u)
            if scale is not None:
                c = c * scale(embed(u))
            return {2: jnp.zeros(size).at[0].set(c)}

        return pi


class Built(NamedTuple):
    geometry: Geometry
    fields: dict
    expected: dict
    params: dict


@dataclass(frozen=True)
class CatalogEntry:
    id: str
    description: str
    evaluators: tuple
    expected: dict
    constructor: Callable
    defaults: dict = field(default_factory=dict)


def _sphere_geometry(name, chart_sets, integration, model, loci, order):
    charts, orient = {}, {}
    for parts in chart_sets:
        c, o = _product_chart(parts)
        charts[c.name] = c
        orient[c.name] = o
    n = 2 * model.factors
    metric = JetField({c: model.metric(ch.embed) for c, ch in charts.items()}, n, None, "g")
    X = JetField({c: _as_vector(model.vector(ch.embed)) for c, ch in charts.items()}, n, VECTOR, "X")
    return Geometry(name, charts, integration, metric, orient, CircleAction(X, tuple(loci)), order)


def _as_vector(fn):
    return lambda u: {1: fn(u)}


def _height(geom):
    return JetField({c: (lambda e: lambda u: e(u)[2])(ch.embed) for c, ch in geom.charts.items()},
                    geom.n, None, "h")


def _poisson(geom, model, scale=None, name="pi"):
    return JetField(
        {c: model.poisson(ch.embed, geom.orientation[c], scale) for c, ch in geom.charts.items()},
        geom.n, VECTOR, name,
    )


def _x_flat(geom):
    def build(c):
        g, X = geom.metric.fn(c), geom.X.fn(c)
        return lambda u: {1: g(u) @ X(u)[1]}

    return JetField({c: build(c) for c in geom.charts}, geom.n, FORM, "X_flat")


def _norm2(geom):
    def build(c):
        g, X = geom.metric.fn(c), geom.X.fn(c)
        return lambda u: X(u)[1] @ g(u) @ X(u)[1]

    return JetField({c: build(c) for c in geom.charts}, geom.n, None, "g(X,X)")


def _bv_family(h, pi, name="exp(h+phi pi)"):
    return EquivariantElement(lambda phi: exp_field(h, pi, phi), name)


_S2_CHARTS = (("sph",), ("stN",), ("stS",))
_S2_LOCI = (
    FixedLocus("stN", "point", coords=(0.0, 0.0), name="N"),
    FixedLocus("stS", "point", coords=(0.0, 0.0), name="S"),
)
# critical set of g(X, X) = k^2 sin^2: the poles (minima) and the equator (maxima)
_EQUATOR = FixedLocus(
    "sph", "patch", param=lambda v: jnp.stack([jnp.pi / 2 + 0.0 * v[0], v[0]]), lo=(0.0,), hi=(TWO_PI,),
    name="equator",
)


def _sphere_common(params, scale=None):
    k = float(params["k"])
    model = SphereModel(1, k, float(params.get("metric_perturbation", 0.0)))
    geom = _sphere_geometry("S2", _S2_CHARTS, "sph", model, _S2_LOCI, int(params["order"]))
    h = _height(geom)
    pi = _poisson(geom, model, scale)
    fields = {
        "h": h,
        "pi": pi,
        "P": _bv_family(h, pi),
        "P_open": _bv_family(h, None, "exp(h)"),
        "gamma": _x_flat(geom),
        "S_phase": _norm2(geom),
        "S_phase_crit": _S2_LOCI + (_EQUATOR,),
    }
    return geom, model, fields


def _sample_points(geom, count=4, seed=1):
    chart = geom.charts[geom.integration_chart]
    lo, hi = np.asarray(chart.lo), np.asarray(chart.hi)
    rng = np.random.default_rng(seed)
    return [lo + (hi - lo) * t for t in rng.uniform(0.1, 0.9, size=(count, chart.n))]


def check_master_equations(geom, h, pi, tol=1e-8, points=None):
    """Raise ``PreconditionError`` naming the first failing equation."""
    for u in points if points is not None else _sample_points(geom):
        r = master_equation_residuals(h, pi, geom, u)
        for label, val in zip(("quantum master equation", "action equation", "Poisson equation"), r):
            if val > tol:
                raise PreconditionError(f"{label} residual {val:.2e} at {u}", check=label)
        ham = hamiltonian_residual(h, pi, geom, None, u)
        if ham > tol:
            raise PreconditionError(f"Hamiltonian residual {ham:.2e} at {u}", check="hamiltonian")


def _build_sphere_dh(params, validate):
    geom, model, fields = _sphere_common(params)
    if validate:
        validate_geometry(geom)
        check_master_equations(geom, fields["h"], fields["pi"])
    return geom, fields


def _build_sphere_cohft(params, validate):
    geom, model, fields = _sphere_common(params)
    w = params.get("weight")
    weight = int(round(model.k)) if w is None else int(w)

    def F(c):
        e = geom.charts[c].embed
        return lambda u: e(u)[:2]

    fmap = EquivariantMap((weight,), JetField({c: F(c) for c in geom.charts}, 2, None, "F"), _S2_LOCI)
    fields["F"] = fmap
    if validate:
        validate_geometry(geom)
        check_equivariance(fmap, geom)
    return geom, fields


def _build_degenerate_pi(params, validate):
    geom, model, fields = _sphere_common(params, scale=lambda x: (1 + x[2]) / 2)
    fields["P"] = _bv_family(fields["h"], fields["pi"])
    if validate:
        validate_geometry(geom)
    return geom, fields


def _build_s2xs2(params, validate):
    k = float(params["k"])
    model = SphereModel(2, k, float(params.get("metric_perturbation", 0.0)))
    box = ((0.0, 0.0), (math.pi, TWO_PI))

    def lift(v):
        return jnp.concatenate([jnp.zeros(2), v])

    loci = (
        FixedLocus("stN|sph", "patch", param=lift, lo=box[0], hi=box[1], name="N x S2"),
        FixedLocus("stS|sph", "patch", param=lift, lo=box[0], hi=box[1], name="S x S2"),
    )
    geom = _sphere_geometry(
        "S2xS2", (("sph", "sph"), ("stN", "sph"), ("stS", "sph")), "sph|sph", model, loci, int(params["order"])
    )
    h = _height(geom)
    pi = _poisson(geom, model)
    fields = {"h": h, "pi": pi, "P": _bv_family(h, pi), "gamma": _x_flat(geom), "S_phase": _norm2(geom)}
    if validate:
        validate_geometry(geom)
        check_master_equations(geom, h, pi)
    return geom, fields


def _build_free_control(params, validate):
    chart = Chart("flat", 2, (0.0, 0.0), (TWO_PI, TWO_PI))
    metric = JetField({"flat": lambda u: jnp.eye(2) + 0.0 * u[0]}, 2, None, "g")
    X = JetField({"flat": lambda u: {1: jnp.array([1.0, 0.0]) + 0.0 * u}}, 2, VECTOR, "X")
    geom = Geometry("T2", {"flat": chart}, "flat", metric, {"flat": 1}, CircleAction(X, ()), int(params["order"]))
    f = JetField({"flat": lambda u: jnp.sin(u[0]) + 0.5 * jnp.cos(u[1])}, 2, None, "f")
    fields = {
        "f": f,
        "P_open": EquivariantElement(lambda phi: exp_field(f), "exp(f)"),
        "gamma": _x_flat(geom),
    }
    if validate:
        validate_geometry(geom)
    return geom, fields


def interval_geometry(half_width=5.0, order=24) -> Geometry:
    """The line segment ``(-L, L)`` with the Euclidean metric and trivial action."""
    chart = Chart("line", 1, (-half_width,), (half_width,))
    metric = JetField({"line": lambda u: jnp.eye(1) + 0.0 * u[0]}, 1, None, "g")
    X = JetField({"line": lambda u: {1: 0.0 * u}}, 1, VECTOR, "X")
    return Geometry("interval", {"line": chart}, "line", metric, {"line": 1}, CircleAction(X, ()), order)


_DH_NOTE = "analytic: 2 pi int_0^pi e^cos(t) sin(t) dt = 2 pi (e - 1/e)"

REGISTRY = {
    e.id: e
    for e in (
        CatalogEntry(
            "sphere_dh",
            "unit S2, rotation at speed k, h = z, pi = k omega^-1",
            ("direct", "berline_vergne", "atiyah_bott", "dh_poisson", "sweep", "rank", "stationary_phase"),
            {"direct": (DH_VALUE, _DH_NOTE), "area": (SPHERE_AREA, "closed-form area")},
            _build_sphere_dh,
            {"k": 1, "order": 24},
        ),
        CatalogEntry(
            "sphere_cohft",
            "sphere_dh with F = x + iy of weight k",
            ("direct", "berline_vergne", "cohft", "weights"),
            {"direct": (DH_VALUE, _DH_NOTE)},
            _build_sphere_cohft,
            {"k": 1, "order": 24, "weight": None},
        ),
        CatalogEntry(
            "s2xs2_bott",
            "S2 x S2, rotation of the first factor, fixed locus {N,S} x S2",
            ("direct", "atiyah_bott"),
            {"direct": (DH_VALUE * SPHERE_AREA, "product of the S2 value and the area 4 pi")},
            _build_s2xs2,
            {"k": 1, "order": 24},
        ),
        CatalogEntry(
            "free_control",
            "flat torus, free translation, P = exp(f) not closed",
            ("sweep", "zeros"),
            {"fixed_points": (0, "free action")},
            _build_free_control,
            {"order": 24},
        ),
        CatalogEntry(
            "degenerate_pi",
            "S2 with pi scaled by (1 + z)/2, vanishing at the south pole",
            ("rank",),
            {"rank": ({"N": 2, "S": 0}, "pi nondegenerate away from the south pole")},
            _build_degenerate_pi,
            {"k": 1, "order": 24},
        ),
    )
}


def entries(evaluator: str | None = None):
    return [e for e in REGISTRY.values() if evaluator is None or evaluator in e.evaluators]


_BUILT: dict = {}


def build(entry_id: str, params: dict | None = None, validate: bool = True) -> Built:
    """Instantiate a registry entry; construction checks run unless disabled.

    Entries are immutable, so identical requests share one instance (and its
    compiled kernels).
    """
    try:
        entry = REGISTRY[entry_id]
    except KeyError:
        raise UnknownEntryError(f"unknown catalog entry {entry_id!r}; known: {sorted(REGISTRY)}") from None
    merged = dict(entry.defaults)
    merged.update({k: v for k, v in (params or {}).items() if v is not None})
    key = (entry_id, json.dumps(merged, sort_keys=True, default=str), validate)
    if key not in _BUILT:
        geom, fields = entry.constructor(merged, validate)
        _BUILT[key] = Built(geom, fields, dict(entry.expected), merged)
    return _BUILT[key]

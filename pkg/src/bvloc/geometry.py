"""Charts, metrics, Levi-Civita data, volume forms and circle actions."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Callable, Mapping, Sequence

import jax
import jax.numpy as jnp
import numpy as np

from .errors import (
    DegenerateMetricError,
    EquivarianceError,
    InvalidOperandError,
    MorseBottViolationError,
    NonIsolatedFixedPointError,
    NonKillingFieldError,
    PreconditionError,
)
from .exterior import FORM, VECTOR, GradedCoefficients, matrix_to_two_form, pfaffian
from .jets import JetField

KILLING_TOL = 1e-8
FIXED_TOL = 1e-12
NONDEGENERATE_TOL = 1e-10


@dataclass(frozen=True)
class Chart:
    """Axis-aligned coordinate box.

    ``embed`` maps coordinates to a common ambient space and ``from_ambient``
    inverts it; both are only needed to move points between charts.
    """

    name: str
    n: int
    lo: tuple
    hi: tuple
    embed: Callable | None = None
    from_ambient: Callable | None = None
    boundary_measure_vanishes: tuple = ()

    def __post_init__(self):
        if len(self.lo) != self.n or len(self.hi) != self.n:
            raise InvalidOperandError(f"chart {self.name}: box does not match n={self.n}")
        if any(b <= a for a, b in zip(self.lo, self.hi)):
            raise InvalidOperandError(f"chart {self.name}: degenerate box")

    @property
    def box_volume(self) -> float:
        return float(np.prod(np.subtract(self.hi, self.lo)))

    def contains(self, u, margin=0.0) -> bool:
        u = np.asarray(u)
        return bool(np.all(u >= np.asarray(self.lo) - margin) and np.all(u <= np.asarray(self.hi) + margin))

    def ambient(self, u) -> np.ndarray:
        if self.embed is None:
            return np.asarray(u, dtype=float)
        return np.asarray(self.embed(jnp.asarray(u, dtype=float)))


@dataclass(frozen=True)
class FixedLocus:
    """An isolated point or a parametrized patch, both living in one chart."""

    chart: str
    kind: str
    coords: tuple | None = None
    param: Callable | None = None
    lo: tuple = ()
    hi: tuple = ()
    name: str = ""

    def __post_init__(self):
        if self.kind == "point" and self.coords is None:
            raise InvalidOperandError("isolated-point locus needs coords")
        if self.kind == "patch" and (self.param is None or len(self.lo) != len(self.hi)):
            raise InvalidOperandError("patch locus needs a parametrization and a box")
        if self.kind not in ("point", "patch"):
            raise InvalidOperandError(f"unknown locus kind {self.kind!r}")

    @property
    def dim(self) -> int:
        return 0 if self.kind == "point" else len(self.lo)

    @property
    def isolated(self) -> bool:
        return self.kind == "point"

    def point(self, v=None) -> np.ndarray:
        if self.kind == "point":
            return np.asarray(self.coords, dtype=float)
        return np.asarray(self.param(jnp.asarray(v, dtype=float)))

    def tangents(self, v) -> np.ndarray:
        """Columns are the locus tangent vectors ``d point / d v_j``."""
        if self.kind == "point":
            return np.zeros((0, 0))
        return np.asarray(jax.jacfwd(self.param)(jnp.asarray(v, dtype=float)))


@dataclass(frozen=True)
class CircleAction:
    X: JetField
    fixed_loci: tuple = ()


@dataclass(frozen=True)
class EquivariantMap:
    """``F = (F^1, ..., F^k)`` into ``C^k``; ``F`` returns ``(Re F^1, Im F^1, ...)``."""

    weights: tuple
    F: JetField
    zero_locus: tuple = ()

    @property
    def k(self) -> int:
        return len(self.weights)


@dataclass(frozen=True)
class Geometry:
    name: str
    charts: Mapping[str, Chart]
    integration_chart: str
    metric: JetField
    orientation: Mapping[str, int]
    action: CircleAction
    quadrature_order: int = 24
    vol_field: JetField | None = None

    @property
    def n(self) -> int:
        return self.charts[self.integration_chart].n

    @cached_property
    def vol(self) -> JetField:
        """Volume form: the supplied one, else ``orientation * sqrt(det g)``."""
        if self.vol_field is not None:
            return self.vol_field
        n = self.n

        def build(c):
            g = self.metric.fn(c)
            o = float(self.orientation[c])
            return lambda u: {n: jnp.reshape(o * jnp.sqrt(jnp.linalg.det(g(u))), (1,))}

        return JetField({c: build(c) for c in self.charts}, n, FORM, "vol")

    @property
    def X(self) -> JetField:
        return self.action.X

    @property
    def fixed_loci(self):
        return self.action.fixed_loci

    def flipped(self) -> "Geometry":
        """Same manifold with the opposite orientation."""
        vol = None
        if self.vol_field is not None:
            vol = self.vol_field.map(lambda p: {k: -v for k, v in p.items()})
        return replace(self, orientation={c: -o for c, o in self.orientation.items()}, vol_field=vol)

    def with_action(self, action: CircleAction) -> "Geometry":
        return replace(self, action=action)

    def resolve(self, point):
        """Accept ``u`` (integration chart) or ``(chart_name, u)``."""
        if isinstance(point, tuple) and len(point) == 2 and isinstance(point[0], str):
            return point[0], np.asarray(point[1], dtype=float)
        return self.integration_chart, np.asarray(point, dtype=float)


# ---------------------------------------------------------------------------
# jax building blocks (chart-local)


def metric_fn(geom: Geometry, chart: str):
    return geom.metric.fn(chart)


def vector_fn(geom: Geometry, chart: str):
    X = geom.X.fn(chart)
    return lambda u: X(u)[1]


def christoffel_fn(geom: Geometry, chart: str):
    g = metric_fn(geom, chart)
    dg = jax.jacfwd(g)

    def gamma(u):
        gi = jnp.linalg.inv(g(u))
        d = dg(u)  # d[r, v, m] = d_m g_rv
        t = jnp.transpose(d, (0, 2, 1)) + d - jnp.transpose(d, (2, 0, 1))
        # t[r, m, v] = d_m g_rv + d_v g_rm - d_r g_mv
        return 0.5 * jnp.einsum("lr,rmv->lmv", gi, t)

    return gamma


def xflat_fn(geom: Geometry, chart: str):
    g = metric_fn(geom, chart)
    X = vector_fn(geom, chart)
    return lambda u: g(u) @ X(u)


def nabla_xflat_fn(geom: Geometry, chart: str):
    """``u -> N[m, v] = (nabla_m X^flat)_v``."""
    xf = xflat_fn(geom, chart)
    dxf = jax.jacfwd(xf)
    gam = christoffel_fn(geom, chart)
    return lambda u: dxf(u).T - jnp.einsum("lmv,l->mv", gam(u), xf(u))


def norm2_fn(geom: Geometry, chart: str):
    g = metric_fn(geom, chart)
    X = vector_fn(geom, chart)
    return lambda u: X(u) @ g(u) @ X(u)


def lie_metric_fn(geom: Geometry, chart: str):
    """``Lie_X g`` in coordinates."""
    g = metric_fn(geom, chart)
    X = vector_fn(geom, chart)
    dg = jax.jacfwd(g)
    dX = jax.jacfwd(X)

    def lie(u):
        G, x, J = g(u), X(u), dX(u)  # J[l, m] = d_m X^l
        return jnp.einsum("mvl,l->mv", dg(u), x) + G @ J + J.T @ G

    return lie


_COMPILED: dict = {}


def _compiled(geom, chart, key, builder):
    k = (id(geom), chart, key)
    hit = _COMPILED.get(k)
    if hit is None or hit[0] is not geom:
        hit = (geom, jax.jit(builder(geom, chart)))
        _COMPILED[k] = hit
    return hit[1]


def _eval(geom, point, key, builder):
    chart, u = geom.resolve(point)
    return chart, np.asarray(_compiled(geom, chart, key, builder)(jnp.asarray(u)))


# ---------------------------------------------------------------------------
# operations


def metric_at(geom: Geometry, point) -> np.ndarray:
    chart, u = geom.resolve(point)
    g = np.asarray(geom.metric.value(chart, u))
    if not np.all(np.isfinite(g)) or np.linalg.eigvalsh(g).min() <= 0:
        raise DegenerateMetricError(f"metric not positive definite at {chart}:{u}")
    return g


def christoffel(geom: Geometry, chart: str, point) -> np.ndarray:
    """``Gamma[l, m, v]`` of the Levi-Civita connection."""
    metric_at(geom, (chart, point))
    return _eval(geom, (chart, point), "christoffel", christoffel_fn)[1]


def volume_form(geom: Geometry, point) -> GradedCoefficients:
    chart, u = geom.resolve(point)
    if geom.vol_field is None:
        metric_at(geom, (chart, u))
    v = geom.vol.value(chart, u)[geom.n]
    if not np.all(np.isfinite(v)) or abs(v[0]) == 0:
        raise DegenerateMetricError(f"degenerate volume form at {chart}:{u}")
    return GradedCoefficients(geom.n, geom.n, FORM, v)


def killing_residual(geom: Geometry, point) -> float:
    return float(np.max(np.abs(_eval(geom, point, "lie_g", lie_metric_fn)[1]), initial=0.0))


def nabla_covector(geom: Geometry, point, tol=KILLING_TOL) -> GradedCoefficients:
    """The 2-form ``nabla X^flat = sum_{m,v} (nabla_m X_v) dx^m ^ dx^v``.

    Reduced coefficients are ``N_mv - N_vm``; for a Killing field ``N`` is
    antisymmetric and this equals ``2 N_mv``.
    """
    chart, N = _eval(geom, point, "nabla_xflat", nabla_xflat_fn)
    sym = np.max(np.abs(N + N.T), initial=0.0) / 2
    if sym > tol:
        raise NonKillingFieldError(f"symmetric part of nabla X^flat is {sym:.2e}", check="killing")
    return GradedCoefficients(geom.n, 2, FORM, matrix_to_two_form(N - N.T, geom.n))


def oriented_frame(g: np.ndarray, orientation: int) -> np.ndarray:
    """Columns form a g-orthonormal basis, positively oriented."""
    L = np.linalg.cholesky(g)
    E = np.linalg.inv(L).T
    if np.sign(np.linalg.det(E)) != np.sign(orientation):
        E[:, -1] *= -1
    return E


@dataclass(frozen=True)
class Weights:
    magnitudes: tuple
    sign: int
    product: float


def _locus_point(geom, p):
    if isinstance(p, FixedLocus):
        if not p.isolated:
            raise NonIsolatedFixedPointError(f"locus {p.name or p.chart} is not a point")
        return p.chart, p.point()
    return geom.resolve(p)


def weights_at_fixed_point(geom: Geometry, p, tol=1e-8) -> Weights:
    """Weights of the linearized action at an isolated fixed point.

    In an oriented orthonormal frame ``A_ab = (nabla_a X^flat)_b`` is skew;
    its Pfaffian is the signed weight product, so that
    ``(nabla X^flat)^m = 2^m m! (lambda_1 ... lambda_m) vol``.
    """
    chart, u = _locus_point(geom, p)
    n = geom.n
    if n % 2:
        raise NonIsolatedFixedPointError(f"odd dimension {n} has no isolated fixed points")
    g = metric_at(geom, (chart, u))
    x = np.asarray(geom.X.value(chart, u)[1])
    if x @ g @ x > 1e-10:
        raise NonIsolatedFixedPointError(f"X does not vanish at {chart}:{u}")
    nabla_covector(geom, (chart, u))
    N = _eval(geom, (chart, u), "nabla_xflat", nabla_xflat_fn)[1]
    E = oriented_frame(g, geom.orientation[chart])
    A = E.T @ N @ E
    A = (A - A.T) / 2
    sv = np.sort(np.linalg.svd(A, compute_uv=False))[::-1]
    mags = tuple(float(s) for s in sv[::2])
    if min(mags) < tol:
        raise NonIsolatedFixedPointError(f"degenerate linearization at {chart}:{u}")
    pf = pfaffian(A)
    return Weights(mags, int(np.sign(pf)), float(pf))


@dataclass(frozen=True)
class NormalHessian:
    matrix: np.ndarray
    det: float
    signature: int
    normal_frame: np.ndarray
    tangent_density: float
    point: np.ndarray


def _gram_schmidt(vectors, g, tol=1e-8):
    basis = []
    for v in vectors:
        w = np.array(v, dtype=float)
        for b in basis:
            w = w - (b @ g @ w) * b
        nrm = math.sqrt(max(w @ g @ w, 0.0))
        if nrm > tol:
            basis.append(w / nrm)
    return basis


def _scalar_hessian(fn, u):
    return np.asarray(jax.hessian(fn)(jnp.asarray(u))), np.asarray(jax.grad(fn)(jnp.asarray(u)))


def hessian_normal(geom: Geometry, locus: FixedLocus, point=None, scalar: JetField | None = None,
                   tol=NONDEGENERATE_TOL) -> NormalHessian:
    """Hessian of ``g(X, X)`` (or of ``scalar``) on the normal space of a locus.

    ``point`` is the patch parameter for a patch locus and ignored for points.
    The result is expressed in a g-orthonormal normal frame obtained by
    Gram-Schmidt against the locus tangents.
    """
    chart = locus.chart
    u = locus.point(point)
    g = metric_at(geom, (chart, u))
    fn = norm2_fn(geom, chart) if scalar is None else (lambda w, f=scalar.fn(chart): jnp.reshape(f(w), ()))
    key = (id(geom), chart, None if scalar is None else id(scalar))
    hit = _HESS_CACHE.get(key)
    if hit is None or hit[0] is not geom or hit[1] is not scalar:
        hit = (geom, scalar, jax.jit(jax.hessian(fn)), jax.jit(jax.grad(fn)))
        _HESS_CACHE[key] = hit
    hf, gf = hit[2], hit[3]
    H = np.asarray(hf(jnp.asarray(u)))
    grad = np.asarray(gf(jnp.asarray(u)))
    if np.max(np.abs(grad)) > 1e-6:
        raise MorseBottViolationError(f"point {chart}:{u} is not critical (|grad|={np.max(np.abs(grad)):.2e})")
    T = locus.tangents(point) if locus.kind == "patch" else np.zeros((geom.n, 0))
    basis = _gram_schmidt(list(T.T) + list(np.eye(geom.n)), g)
    d = T.shape[1]
    if len(basis) != geom.n:
        raise DegenerateMetricError("could not complete an orthonormal frame")
    Nf = np.array(basis[d:]).T
    M = Nf.T @ H @ Nf
    M = (M + M.T) / 2
    det = float(np.linalg.det(M)) if M.size else 1.0
    if abs(det) < tol:
        raise MorseBottViolationError(f"normal Hessian degenerate at {chart}:{u} (det={det:.2e})", check="morse-bott")
    ev = np.linalg.eigvalsh(M) if M.size else np.zeros(0)
    dens = math.sqrt(max(np.linalg.det(T.T @ g @ T), 0.0)) if d else 1.0
    return NormalHessian(M, det, int(np.sum(ev > 0) - np.sum(ev < 0)), Nf, dens, u)


_HESS_CACHE: dict = {}


@dataclass(frozen=True)
class Zero:
    chart: str
    u: np.ndarray
    ambient: np.ndarray
    isolated: bool


def find_zeros(geom: Geometry, tolerance=1e-8, seeds_per_axis=6, iterations=60) -> list[Zero]:
    """Multi-start damped Newton on ``X = 0`` from Gauss-Legendre seeds in every chart."""
    found: list[Zero] = []
    for cname, chart in geom.charts.items():
        X = vector_fn(geom, cname)
        g = metric_fn(geom, cname)
        f = jax.jit(jax.vmap(X))
        J = jax.jit(jax.vmap(jax.jacfwd(X)))
        G = jax.jit(jax.vmap(g))
        x1, _ = np.polynomial.legendre.leggauss(seeds_per_axis)
        axes = [0.5 * (a + b) + 0.5 * (b - a) * x1 for a, b in zip(chart.lo, chart.hi)]
        U = np.stack(np.meshgrid(*axes, indexing="ij"), -1).reshape(-1, chart.n)
        lo, hi = np.asarray(chart.lo), np.asarray(chart.hi)
        span = float(np.max(hi - lo))
        for _ in range(iterations):
            F = np.asarray(f(U))
            Jm = np.asarray(J(U))
            step = np.einsum("bij,bj->bi", np.linalg.pinv(Jm, rcond=1e-12), F)
            nrm = np.linalg.norm(step, axis=1, keepdims=True)
            step = step * np.minimum(1.0, 0.25 * span / np.maximum(nrm, 1e-300))
            U = np.clip(U - step, lo, hi)
        F = np.asarray(f(U))
        Gm = np.asarray(G(U))
        res = np.sqrt(np.abs(np.einsum("bi,bij,bj->b", F, Gm, F)))
        Jm = np.asarray(J(U))
        for u, r, jm in zip(U, res, Jm):
            if not np.isfinite(r) or r > tolerance:
                continue
            if not chart.contains(u) or np.any(u <= lo) or np.any(u >= hi):
                # boundary points are seen from another chart's interior
                continue
            amb = chart.ambient(u)
            if any(np.linalg.norm(amb - z.ambient) < max(tolerance, 1e-6) for z in found):
                continue
            isolated = bool(np.linalg.matrix_rank(jm, tol=1e-8) == chart.n)
            found.append(Zero(cname, u, amb, isolated))
    return found


def validate_geometry(geom: Geometry, samples=8, seed=0):
    """Construction-time checks; raises on the first violation.

    Positive-definite metric at quadrature-type sample points, Killing
    identity, and vanishing of X on every declared fixed locus.
    """
    rng = np.random.default_rng(seed)
    for cname, chart in geom.charts.items():
        lo, hi = np.asarray(chart.lo), np.asarray(chart.hi)
        U = lo + (hi - lo) * rng.uniform(0.05, 0.95, size=(samples, chart.n))
        g, lie = metric_fn(geom, cname), lie_metric_fn(geom, cname)
        probe = jax.jit(jax.vmap(lambda u: (jnp.linalg.eigvalsh(g(u))[0], jnp.max(jnp.abs(lie(u))))))
        emin, res = (np.asarray(a) for a in probe(jnp.asarray(U)))
        for u, e, r in zip(U, emin, res):
            if not e > 0:
                raise DegenerateMetricError(f"metric not positive definite at {cname}:{u}")
            if r > KILLING_TOL:
                raise NonKillingFieldError(f"Lie_X g = {r:.2e} at {cname}:{u}", check="killing")
    for loc in geom.fixed_loci:
        for v in _locus_samples(loc):
            u = loc.point(v)
            x = np.asarray(geom.X.value(loc.chart, u)[1])
            g = metric_at(geom, (loc.chart, u))
            if x @ g @ x > FIXED_TOL:
                raise PreconditionError(f"X does not vanish on declared locus {loc.name}", check="fixed-locus")


def _locus_samples(loc, count=3):
    if loc.isolated:
        return [None]
    lo, hi = np.asarray(loc.lo), np.asarray(loc.hi)
    return [lo + (hi - lo) * t for t in np.linspace(0.1, 0.9, count)]


def equivariance_residual(F: EquivariantMap, geom: Geometry, point) -> float:
    """``max_l |X(F^l) - i w_l F^l|``."""
    chart, u = geom.resolve(point)
    val, grad, _ = F.F.jet(chart, u)
    x = np.asarray(geom.X.value(chart, u)[1])
    XF = grad @ x
    z = val[0::2] + 1j * val[1::2]
    Xz = XF[0::2] + 1j * XF[1::2]
    w = np.asarray(F.weights, dtype=float)
    return float(np.max(np.abs(Xz - 1j * w * z)))


def check_equivariance(F: EquivariantMap, geom: Geometry, samples=8, seed=0, tol=1e-8):
    rng = np.random.default_rng(seed)
    for cname, chart in geom.charts.items():
        lo, hi = np.asarray(chart.lo), np.asarray(chart.hi)
        for u in lo + (hi - lo) * rng.uniform(0.05, 0.95, size=(samples, chart.n)):
            r = equivariance_residual(F, geom, (cname, u))
            if r > tol:
                raise EquivarianceError(
                    f"X(F) - i w F = {r:.2e} at {cname}:{u}; weights {F.weights} do not match the action",
                    check="equivariance",
                )

"""Invariant suites and acceptance checks shared by the CLI and the tests.

Every check returns :class:`Outcome` records with a measured value and the
limit it is held to.  Output is formatted with fixed precision and contains
no timings, so repeated runs produce identical bytes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import jax
import jax.numpy as jnp
import numpy as np

from . import calculus as C
from . import catalog
from . import exterior as E
from . import geometry as G
from . import localization as L
from . import quadrature as Q
from .errors import BVLocError
from .jets import JetField

PHIS = (0.5, 1.0, 2.0)
MODULES = ("exterior_algebra", "geometry", "bv_calculus", "quadrature", "localization", "catalog")


@dataclass(frozen=True)
class Outcome:
    criterion: str
    label: str
    value: float
    limit: float
    passed: bool
    relation: str = "<="

    def line(self) -> str:
        mark = "PASS" if self.passed else "FAIL"
        return f"[{mark}] {self.criterion}: {self.label} = {self.value:.3e} ({self.relation} {self.limit:.1e})"


def at_most(criterion, label, value, limit):
    value = float(value)
    return Outcome(criterion, label, value, limit, bool(np.isfinite(value) and value <= limit))


def at_least(criterion, label, value, limit):
    value = float(value)
    return Outcome(criterion, label, value, limit, bool(np.isfinite(value) and value >= limit), ">=")


def holds(criterion, label, ok):
    return Outcome(criterion, label, 1.0 if ok else 0.0, 1.0, bool(ok), "==")


# ---------------------------------------------------------------------------
# random test data


def random_graded(rng, n, k, variance):
    return E.GradedCoefficients(n, k, variance, rng.normal(size=math.comb(n, k)))


def _flat_geometry(n=3):
    """Cube with a non-constant volume density, for operator identities."""
    chart = G.Chart("cube", n, (-1.0,) * n, (1.0,) * n)
    metric = JetField({"cube": lambda u: jnp.eye(n) + 0.0 * u[0]}, n, None, "g")
    X = JetField({"cube": lambda u: {1: 0.0 * u}}, n, E.VECTOR, "X")
    vol = JetField({"cube": lambda u: {n: jnp.reshape(jnp.exp(0.3 * u[0] - 0.2 * u[1] * u[-1]), (1,))}},
                   n, E.FORM, "vol")
    return G.Geometry("cube", {"cube": chart}, "cube", metric, {"cube": 1}, G.CircleAction(X, ()), 8, vol)


def random_field(rng, n, degrees, chart="cube", variance=E.VECTOR, name="R"):
    """Smooth multivector field with random quadratic-plus-trigonometric coefficients."""
    coefs = {}
    for k in degrees:
        size = math.comb(n, k)
        coefs[k] = (rng.normal(size=size), rng.normal(size=(size, n)), rng.normal(size=(size, n, n)) / 2,
                   rng.normal(size=(size, n)))

    def fn(u):
        out = {}
        for k, (a, b, c, w) in coefs.items():
            out[k] = a + b @ u + jnp.einsum("imn,m,n->i", c, u, u) + 0.3 * jnp.sin(w @ u)
        return out

    return JetField({chart: fn}, n, variance, name)


def invariant_sphere_field(rng, degrees, k=1.0, name="Q"):
    """Field on the spherical chart with psi-independent coefficients (hence invariant)."""
    coefs = {d: rng.normal(size=(math.comb(2, d), 3)) for d in degrees}

    def fn(u):
        th = u[0]
        basis = jnp.stack([jnp.ones_like(th), jnp.cos(th), jnp.sin(th) ** 2])
        out = {}
        for d, c in coefs.items():
            coeff = c @ basis
            if d == 2:
                coeff = coeff / jnp.sin(th)  # bounded multiples of the Poisson bivector
            out[d] = coeff
        return out

    return JetField({"sph": fn}, 2, E.VECTOR, name)


def _batch_norm(field, chart, U):
    vals = field.batch(chart, U)
    leaves = jax.tree_util.tree_leaves(vals)
    return max((float(np.max(np.abs(v), initial=0.0)) for v in leaves), default=0.0)


def _sphere_points(rng, count):
    return np.column_stack([rng.uniform(0.2, math.pi - 0.2, count), rng.uniform(0.1, 2 * math.pi - 0.1, count)])


# ---------------------------------------------------------------------------
# criterion 1: BV-algebra axioms


def criterion_1(samples=100, seed=11):
    cid = "C1 BV-algebra axioms"
    rng = np.random.default_rng(seed)
    out = []

    worst = 0.0
    for _ in range(samples):
        n = int(rng.integers(2, 7))
        k, l = (int(x) for x in rng.integers(0, n + 1, size=2))
        if k + l > n:
            l = n - k
        a, b = random_graded(rng, n, k, E.FORM), random_graded(rng, n, l, E.FORM)
        d = E.wedge(a, b).coeffs - (-1) ** (k * l) * E.wedge(b, a).coeffs
        worst = max(worst, float(np.max(np.abs(d), initial=0.0)))
    out.append(at_most(cid, "graded commutativity", worst, 1e-12))

    worst = 0.0
    for n in range(1, 5):
        for ka in range(n + 1):
            for kp in range(ka + 1):
                for I in E.combos(n, ka):
                    alpha = E.GradedCoefficients.basis(n, I, E.FORM)
                    for J in E.combos(n, kp):
                        P = E.GradedCoefficients.basis(n, J, E.VECTOR)
                        right = E.contract_right(alpha, P)
                        left = E.contract_left(P, alpha)
                        for K in E.combos(n, ka - kp):
                            Qb = E.GradedCoefficients.basis(n, K, E.VECTOR)
                            rhs = E.pair(alpha, E.wedge(P, Qb))
                            worst = max(worst, abs(E.pair(right, Qb) - rhs),
                                        abs(E.pair(left, Qb) - E.reversal_sign(kp) * rhs))
    out.append(at_most(cid, "contraction adjunction (exhaustive, n<=4)", worst, 1e-12))

    worst = 0.0
    for _ in range(samples):
        n = int(rng.integers(2, 7))
        kp, kq = (int(x) for x in rng.integers(0, n // 2 + 1, size=2))
        ka = int(rng.integers(kp + kq, n + 1))
        P, Qv = random_graded(rng, n, kp, E.VECTOR), random_graded(rng, n, kq, E.VECTOR)
        a = random_graded(rng, n, ka, E.FORM)
        d = E.contract_left(E.wedge(P, Qv), a).coeffs - E.contract_left(P, E.contract_left(Qv, a)).coeffs
        worst = max(worst, float(np.max(np.abs(d), initial=0.0)))
    out.append(at_most(cid, "contraction composition", worst, 1e-11))

    geom = _flat_geometry(3)
    U = rng.uniform(-0.9, 0.9, size=(samples, 3))
    triples = [((1,), (2,), (1,)), ((2,), (1,), (2,)), ((0, 1), (1, 2), (2,))]
    jac, leib, gen, dd = 0.0, 0.0, 0.0, 0.0
    for degs in triples:
        P, Qf, R = (random_field(rng, 3, d, name=nm) for d, nm in zip(degs, "PQR"))
        p, q = degs[0][-1], degs[1][-1]
        if len(degs[0]) == 1 and len(degs[1]) == 1:
            # {P,{Q,R}} = {{P,Q},R} + (-1)^((p-1)(q-1)) {Q,{P,R}}
            jfield = C.add_fields(
                C.add_fields(C.schouten_field(P, C.schouten_field(Qf, R)), C.schouten_field(C.schouten_field(P, Qf), R), -1.0),
                C.schouten_field(Qf, C.schouten_field(P, R)), -(-1.0) ** ((p - 1) * (q - 1)),
            )
            jac = max(jac, _batch_norm(jfield, "cube", U))
            # {P, Q ^ R} = {P,Q} ^ R + (-1)^((p-1) q) Q ^ {P,R}
            lfield = C.add_fields(
                C.add_fields(C.schouten_field(P, C.wedge_field(Qf, R)), C.wedge_field(C.schouten_field(P, Qf), R), -1.0),
                C.wedge_field(Qf, C.schouten_field(P, R)), -(-1.0) ** ((p - 1) * q),
            )
            leib = max(leib, _batch_norm(lfield, "cube", U))
            # Delta(P^Q) = Delta P ^ Q + (-1)^p P ^ Delta Q - (-1)^p {P,Q}
            gfield = C.add_fields(
                C.add_fields(
                    C.add_fields(C.laplacian_field(C.wedge_field(P, Qf), geom),
                                 C.wedge_field(C.laplacian_field(P, geom), Qf), -1.0),
                    C.wedge_field(P, C.laplacian_field(Qf, geom)), -(-1.0) ** p),
                C.schouten_field(P, Qf), (-1.0) ** p,
            )
            gen = max(gen, _batch_norm(gfield, "cube", U))
        dd = max(dd, _batch_norm(C.laplacian_field(C.laplacian_field(P, geom), geom), "cube", U))
    out.append(at_most(cid, "graded Jacobi", jac, 1e-7))
    out.append(at_most(cid, "Leibniz rule", leib, 1e-7))
    out.append(at_most(cid, "generator identity", gen, 1e-7))

    built = catalog.build("sphere_dh")
    sg = built.geometry
    S = _sphere_points(rng, samples)
    for fld in (built.fields["pi"], built.fields["P"](1.0)):
        dd = max(dd, _batch_norm(C.laplacian_field(C.laplacian_field(fld, sg), sg), "sph", S))
    out.append(at_most(cid, "Delta^2 = 0", dd, 1e-7))
    return out


# ---------------------------------------------------------------------------
# criterion 2: equivariant structure


def criterion_2(samples=30, seed=12):
    cid = "C2 equivariant structure"
    rng = np.random.default_rng(seed)
    built = catalog.build("sphere_dh")
    geom = built.geometry
    S = _sphere_points(rng, samples)
    X = geom.X
    square, signed, duality, divergence = 0.0, 0.0, 0.0, 0.0
    Pinv = invariant_sphere_field(rng, (0, 1, 2), name="P")
    Pgen = random_field(rng, 2, (0, 1, 2), chart="sph", name="R")
    for phi in PHIS:
        sq = C.equivariant_delta_field(C.equivariant_delta_field(Pinv, geom, phi), geom, phi)
        square = max(square, _batch_norm(C.add_fields(sq, C.lie_multivector_field(X, Pinv), -phi), "sph", S))
        sq = C.equivariant_delta_field(C.equivariant_delta_field(Pgen, geom, phi), geom, phi)
        signed = max(signed, _batch_norm(C.add_fields(sq, C.lie_multivector_field(X, Pgen), phi), "sph", S))
        lhs = C.equivariant_d_field(C.contract_field(Pgen, geom.vol), geom, phi)
        rhs = C.contract_field(C.equivariant_delta_field(Pgen, geom, phi), geom.vol)
        duality = max(duality, _batch_norm(C.add_fields(lhs, rhs, -1.0), "sph", S))
        Qf = invariant_sphere_field(rng, (0, 1, 2), name="Q")
        divergence = max(divergence, abs(Q.integrate_multivector(C.equivariant_delta_field(Qf, geom, phi), geom)))
    return [
        at_most(cid, "Delta_phi^2 P - phi Lie_X P (invariant P)", square, 1e-7),
        at_most(cid, "Delta_phi^2 P + phi Lie_X P (any P)", signed, 1e-7),
        at_most(cid, "d_phi(P |_ vol) - (Delta_phi P) |_ vol", duality, 1e-7),
        at_most(cid, "int Delta_phi Q", divergence, 1e-6),
    ]


# ---------------------------------------------------------------------------
# criterion 3: localization-principle sweep


def t_grid(t_max=5.0, steps=26):
    return np.linspace(0.0, t_max, steps)


def criterion_3(phi=1.0, t_max=5.0, steps=26):
    cid = "C3 t-sweep"
    built = catalog.build("sphere_dh")
    geom = built.geometry
    grid = t_grid(t_max, steps)
    closed = Q.z_gamma_sweep(built.fields["P"], built.fields["gamma"], geom, phi, grid)
    import warnings

    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        open_ = Q.z_gamma_sweep(built.fields["P_open"], built.fields["gamma"], geom, phi, grid)
        free = catalog.build("free_control")
        torus = Q.z_gamma_sweep(free.fields["P_open"], free.fields["gamma"], free.geometry, phi, grid)
    return [
        at_most(cid, "closed input max |Z(t) - Z(0)|", closed.max_deviation, 1e-6),
        at_least(cid, "exp(h) control max |Z(t) - Z(0)|", open_.max_deviation, 1e-2),
        at_least(cid, "free_control max |Z(t) - Z(0)|", torus.max_deviation, 1e-2),
    ]


# ---------------------------------------------------------------------------
# criteria 4-6, 8: localization formulas


def criterion_4():
    cid = "C4 Duistermaat-Heckman"
    out = []
    for k in (1, 2):
        b = catalog.build("sphere_dh", {"k": k, "order": 24})
        rep = L.dh_poisson(b.fields["h"], b.fields["pi"], b.geometry)
        oracle = catalog.DH_VALUE
        out.append(at_most(cid, f"k={k} direct vs 2 pi (e - 1/e)", abs(rep.direct_value - oracle) / oracle, 1e-6))
        out.append(at_most(cid, f"k={k} fixed-point sum vs 2 pi (e - 1/e)", abs(rep.localized_value - oracle) / oracle, 1e-6))
    return out


def criterion_5():
    cid = "C5 evaluator agreement"
    out = []
    for k in (1, 2):
        b = catalog.build("sphere_cohft", {"k": k})
        geom, P = b.geometry, b.fields["P"]
        direct = Q.integrate_multivector(P, geom)
        bv = L.berline_vergne_sum(P, geom, direct=direct).localized_value
        ab = L.atiyah_bott_bv(P, geom, direct=direct).localized_value
        cf = L.cohft_localize(P, b.fields["F"], geom, direct=direct).localized_value
        spread = max(abs(bv - ab), abs(bv - cf), abs(ab - cf))
        out.append(at_most(cid, f"k={k} pairwise spread", spread, 1e-8))
        worst = max(abs(v - direct) for v in (bv, ab, cf)) / abs(direct)
        out.append(at_most(cid, f"k={k} relative gap to direct", worst, 1e-6))
    return out


def criterion_6():
    cid = "C6 Morse-Bott"
    b = catalog.build("s2xs2_bott")
    rep = L.atiyah_bott_bv(b.fields["P"], b.geometry)
    oracle = catalog.DH_VALUE * catalog.SPHERE_AREA
    return [
        at_most(cid, "localized vs direct", rep.rel_residual, 1e-4),
        at_most(cid, "direct vs analytic", abs(rep.direct_value - oracle) / oracle, 1e-4),
    ]


def fresnel_ratio(t):
    """Stationary-phase estimate over direct quadrature for ``int w(x) e^{-i t x^2 / 2}``.

    ``w = exp(-x^2/4)`` pads the interval ``(-5, 5)``: it is negligible at the
    ends while its curvature keeps an O(1/t) correction (exactly
    ``|ratio - 1| ~ 1/(4t)``) visible.
    """
    geom = catalog.interval_geometry(5.0)
    S = JetField({"line": lambda u: -0.5 * u[0] ** 2}, 1, None, "S")
    f = JetField({"line": lambda u: jnp.exp(-(u[0] ** 2) / 4)}, 1, None, "w")
    crit = G.FixedLocus("line", "point", coords=(0.0,), name="0")
    est = Q.stationary_phase_estimate(S, f, geom, crit, t)
    direct = Q.oscillatory_integral(S, f, geom, t, order=int(80 + 6 * t))
    return est / direct, est


def sphere_phase_ratio(t):
    b = catalog.build("sphere_dh")
    geom = b.geometry
    one = JetField({c: (lambda u: 1.0 + 0.0 * u[0]) for c in geom.charts}, 2, None, "1")
    est = Q.stationary_phase_estimate(b.fields["S_phase"], one, geom, b.fields["S_phase_crit"], t)
    return est / Q.oscillatory_integral(b.fields["S_phase"], one, geom, t)


def criterion_7():
    cid = "C7 stationary phase"
    out = []
    r50, est = fresnel_ratio(50.0)
    r100, _ = fresnel_ratio(100.0)
    expected = math.sqrt(2 * math.pi / 50.0) * complex(math.cos(math.pi / 4), -math.sin(math.pi / 4))
    out.append(at_most(cid, "1D estimate vs (2 pi/t)^(1/2) e^(-i pi/4)", abs(est - expected), 1e-12))
    out.append(at_most(cid, "1D |ratio - 1| at t=50", abs(r50 - 1), 0.05))
    out.append(holds(cid, "1D ratio error shrinks from t=50 to t=100", abs(r100 - 1) <= abs(r50 - 1)))
    s50, s100 = sphere_phase_ratio(50.0), sphere_phase_ratio(100.0)
    out.append(at_most(cid, "S2 |ratio - 1| at t=50", abs(s50 - 1), 0.05))
    out.append(holds(cid, "S2 ratio error shrinks from t=50 to t=100", abs(s100 - 1) <= abs(s50 - 1)))
    return out


def criterion_8():
    cid = "C8 rank and weights"
    dh = catalog.build("sphere_dh")
    table = L.rank_at_fixed_points(dh.fields["pi"], dh.geometry)
    deg = catalog.build("degenerate_pi")
    dtable = L.rank_at_fixed_points(deg.fields["pi"], deg.geometry)
    cf = catalog.build("sphere_cohft")
    verdict = L.weight_containment_check(cf.fields["F"], cf.geometry)
    return [
        holds(cid, "sphere_dh max rank 2", table.max_rank == 2),
        holds(cid, "degenerate_pi full rank somewhere", dtable.full_rank_somewhere),
        holds(cid, "degenerate_pi rank 0 at S", any(r["rank"] == 0 for r in dtable.rows)),
        holds(cid, "sphere_cohft weight containment", verdict.verdict),
    ]


def criterion_9(thread_counts=(1, 2, 8)):
    """In-process determinism of the chunked parallel reduction."""
    import os

    cid = "C9 determinism"
    b = catalog.build("s2xs2_bott")
    saved = os.environ.get("BVLOC_THREADS")
    values = []
    try:
        for t in thread_counts:
            os.environ["BVLOC_THREADS"] = str(t)
            values.append(Q.integrate_multivector(b.fields["P"], b.geometry))
    finally:
        if saved is None:
            os.environ.pop("BVLOC_THREADS", None)
        else:
            os.environ["BVLOC_THREADS"] = saved
    return [holds(cid, "bitwise equal integrals across worker counts", len({v.hex() for v in values}) == 1)]


# ---------------------------------------------------------------------------
# per-module invariant suites


def geometry_invariants(perturbation=0.0, seed=13):
    cid = "geometry"
    rng = np.random.default_rng(seed)
    out = []
    b = catalog.build("sphere_dh", {"metric_perturbation": perturbation} if perturbation else None,
                      validate=False)
    geom = b.geometry
    S = _sphere_points(rng, 8)
    killing = max(G.killing_residual(geom, u) for u in S)
    out.append(at_most(cid, "Killing residual Lie_X g", killing, G.KILLING_TOL))
    compat = 0.0
    for u in S:
        gam = G.christoffel(geom, "sph", u)
        dg = np.asarray(jax.jacfwd(geom.metric.fn("sph"))(jnp.asarray(u)))
        g = G.metric_at(geom, u)
        # nabla_m g_ab = d_m g_ab - Gamma^l_ma g_lb - Gamma^l_mb g_al
        res = dg.transpose(2, 0, 1) - np.einsum("lma,lb->mab", gam, g) - np.einsum("lmb,al->mab", gam, g)
        compat = max(compat, float(np.max(np.abs(res))))
    out.append(at_most(cid, "metric compatibility", compat, 1e-8))
    if perturbation:
        return out
    prod = 0.0
    for loc in geom.fixed_loci:
        w = G.weights_at_fixed_point(geom, loc)
        beta = G.nabla_covector(geom, (loc.chart, loc.point()))
        vol = G.volume_form(geom, (loc.chart, loc.point()))
        prod = max(prod, abs(beta.coeffs[0] - 2 * w.product * vol.coeffs[0]))
    out.append(at_most(cid, "(nabla X^flat)^m = 2^m m! lambda vol", prod, 1e-8))
    zeros = G.find_zeros(geom)
    out.append(holds(cid, "find_zeros returns exactly the declared poles", len(zeros) == 2))
    free = catalog.build("free_control")
    out.append(holds(cid, "find_zeros on free action is empty", not G.find_zeros(free.geometry)))
    return out


def catalog_invariants():
    cid = "catalog"
    out = []
    for entry in catalog.entries():
        try:
            catalog.build(entry.id)
            ok = True
        except BVLocError:
            ok = False
        out.append(holds(cid, f"{entry.id} passes construction checks", ok))
    return out


def _pointwise(o):
    return "contraction" in o.label or "commut" in o.label


def _c1(ctx):
    if "_c1" not in ctx:
        ctx["_c1"] = criterion_1()
    return ctx["_c1"]


SUITES: list[tuple[str, str, Callable]] = [
    ("exterior_algebra", "C1", lambda ctx: [o for o in _c1(ctx) if _pointwise(o)]),
    ("bv_calculus", "C1", lambda ctx: [o for o in _c1(ctx) if not _pointwise(o)]),
    ("bv_calculus", "C2", lambda ctx: criterion_2()),
    ("geometry", "geometry", lambda ctx: geometry_invariants(ctx.get("metric_perturbation", 0.0))),
    ("catalog", "catalog", lambda ctx: catalog_invariants()),
    ("quadrature", "C3", lambda ctx: criterion_3(ctx.get("phi", 1.0), ctx.get("t_max", 5.0), ctx.get("t_steps", 26))),
    ("quadrature", "C7", lambda ctx: criterion_7()),
    ("quadrature", "C9", lambda ctx: criterion_9()),
    ("localization", "C4", lambda ctx: criterion_4()),
    ("localization", "C5", lambda ctx: criterion_5()),
    ("localization", "C6", lambda ctx: criterion_6()),
    ("localization", "C8", lambda ctx: criterion_8()),
]


def run(modules=None, context=None) -> list[Outcome]:
    """Run suites for the selected modules (all by default)."""
    ctx = dict(context or {})
    results: list[Outcome] = []
    for module, key, fn in SUITES:
        if modules and module not in modules:
            continue
        try:
            results += fn(ctx)
        except BVLocError as exc:
            results.append(Outcome(f"{module}/{key}", f"raised {type(exc).__name__}: {exc}", float("nan"), 0.0, False))
    return results

"""Localization evaluators.

Each evaluator computes a direct quadrature integral and a fixed-locus sum
and returns both in a :class:`LocalizationReport`.  Formulas use the printed
normalization (``phi = 1``); :func:`phi_sweep` shows how the ``phi^m``
factors cancel.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import jax
import jax.numpy as jnp
import numpy as np

from .calculus import (
    EquivariantElement,
    check_invariant_volume,
    equivariant_delta,
    master_equation_residuals,
    hamiltonian_residual,
)
from .errors import PreconditionError, WrongEvaluatorError
from .exterior import FORM, pair, pfaffian, two_form_to_matrix, wedge_parts, GradedCoefficients
from .geometry import (
    EquivariantMap,
    FixedLocus,
    Geometry,
    check_equivariance,
    hessian_normal,
    metric_at,
    nabla_covector,
    oriented_frame,
    weights_at_fixed_point,
)
from .jets import JetField
from .quadrature import LocusPoint, integrate_multivector, integrate_over_locus

CLOSED_TOL = 1e-7
SCHEMA = 1


@dataclass
class LocalizationReport:
    theorem: str
    direct_value: float
    localized_value: float
    per_locus_contributions: list
    diagnostics: dict = field(default_factory=dict)
    flags: list = field(default_factory=list)

    @property
    def abs_residual(self) -> float:
        return abs(self.localized_value - self.direct_value)

    @property
    def rel_residual(self) -> float:
        return self.abs_residual / max(abs(self.direct_value), 1e-300)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["abs_residual"] = self.abs_residual
        d["rel_residual"] = self.rel_residual
        d["schema"] = SCHEMA
        return _plain(d)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def to_table(self) -> str:
        rows = [
            ("theorem", self.theorem),
            ("direct", f"{self.direct_value:.15g}"),
            ("localized", f"{self.localized_value:.15g}"),
            ("abs residual", f"{self.abs_residual:.3e}"),
            ("rel residual", f"{self.rel_residual:.3e}"),
        ]
        for c in self.per_locus_contributions:
            rows.append((f"  {c['locus']}", f"{c['contribution']:.15g}"))
        for f in self.flags:
            rows.append(("flag", f))
        width = max(len(r[0]) for r in rows)
        return "\n".join(f"{a.ljust(width)}  {b}" for a, b in rows) + "\n"


def _plain(x):
    if isinstance(x, dict):
        return {str(k): _plain(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_plain(v) for v in x]
    if isinstance(x, np.ndarray):
        return _plain(x.tolist())
    if isinstance(x, (np.floating, np.integer, np.bool_)):
        return x.item()
    if isinstance(x, complex):
        return [x.real, x.imag]
    return x


def _family(P):
    return P if isinstance(P, EquivariantElement) else EquivariantElement.constant(P)


def _sample_points(geom, count=3, seed=3):
    chart = geom.charts[geom.integration_chart]
    lo, hi = np.asarray(chart.lo), np.asarray(chart.hi)
    rng = np.random.default_rng(seed)
    return [lo + (hi - lo) * t for t in rng.uniform(0.1, 0.9, size=(count, chart.n))]


def _reject_trivial_action(geom):
    for u in _sample_points(geom):
        if np.max(np.abs(geom.X.value(geom.integration_chart, u)[1])) > 0:
            return
    raise WrongEvaluatorError("X vanishes identically: every point is fixed", check="fixed-locus")


def _require_isolated(geom, what):
    _reject_trivial_action(geom)
    for loc in geom.fixed_loci:
        if not loc.isolated:
            raise WrongEvaluatorError(f"{what} needs isolated fixed points; {loc.name} has dimension {loc.dim}",
                                      check="isolated")
    if geom.n % 2:
        raise WrongEvaluatorError(f"{what} needs even dimension", check="dimension")


def _closedness_flags(P, geom, phi, points=None):
    worst = max(equivariant_delta(P, geom, phi, u).norm() for u in points or _sample_points(geom))
    return worst, ([] if worst <= CLOSED_TOL else [f"input not equivariantly closed (residual {worst:.2e})"])


def _top_pairing(geom, chart, u, parts, degree):
    """``<vol, P_[degree]>`` at a point, ``degree == n``."""
    vol = geom.vol.value(chart, u)[geom.n]
    p = parts.get(degree)
    return 0.0 if p is None else float(np.dot(vol, p))


def berline_vergne_sum(P, geom: Geometry, phi=1.0, direct=None) -> LocalizationReport:
    """``(-2 pi)^m sum_p <vol, P_[2m]>(p) / (lambda_1 ... lambda_m)(p)``."""
    _require_isolated(geom, "fixed-point sum")
    fam = _family(P)
    field_ = fam(phi)
    m = geom.n // 2
    check_invariant_volume(geom, _sample_points(geom))
    worst, flags = _closedness_flags(fam, geom, phi)
    contributions = []
    for loc in geom.fixed_loci:
        w = weights_at_fixed_point(geom, loc)
        pv = _top_pairing(geom, loc.chart, loc.point(), field_.value(loc.chart, loc.point()), geom.n)
        c = (-2 * math.pi) ** m * pv / w.product
        contributions.append({"locus": loc.name, "contribution": c, "pairing": pv,
                              "weights": list(w.magnitudes), "weight_product": w.product})
    direct = integrate_multivector(fam, geom, phi) if direct is None else direct
    return LocalizationReport("fixed-point sum", direct, _ordered_sum(contributions), contributions,
                              {"closedness_residual": worst, "phi": phi}, flags)


def _ordered_sum(contributions):
    total = 0.0
    for c in contributions:
        total += c["contribution"]
    return total


def _two_form_power(beta, m, n):
    out = {0: np.ones(1)}
    for _ in range(m):
        out = wedge_parts(out, {2: beta}, n)
    return out.get(2 * m, np.zeros(math.comb(n, 2 * m)))


def atiyah_bott_bv(P, geom: Geometry, phi=1.0, direct=None, order=None) -> LocalizationReport:
    """``((-2 pi)^m / m!) int_{M_X} <(nabla X^flat)^m, P_[2m]> / sqrt det Hess_N g(X,X)``."""
    _reject_trivial_action(geom)
    fam = _family(P)
    field_ = fam(phi)
    n = geom.n
    check_invariant_volume(geom, _sample_points(geom))
    worst, flags = _closedness_flags(fam, geom, phi)
    contributions = []
    for loc in geom.fixed_loci:
        codim = n - loc.dim
        if codim % 2:
            raise WrongEvaluatorError(f"locus {loc.name} has odd codimension {codim}", check="codimension")
        m = codim // 2
        dets = []

        def integrand(p: LocusPoint, m=m, loc=loc):
            beta = nabla_covector(geom, (p.chart, p.u)).coeffs
            power = _two_form_power(beta, m, n)
            parts = field_.value(p.chart, p.u)
            pm = parts.get(2 * m)
            val = 0.0 if pm is None else float(np.dot(power, pm))
            nh = hessian_normal(geom, loc, p.v)
            dets.append(nh.det)
            return val / math.sqrt(nh.det)

        integral = float(integrate_over_locus(loc, integrand, geom, order))
        c = (-2 * math.pi) ** m / math.factorial(m) * integral
        contributions.append({"locus": loc.name, "contribution": c, "codimension": codim,
                              "hessian_det_min": min(dets), "hessian_det_max": max(dets)})
    direct = integrate_multivector(fam, geom, phi) if direct is None else direct
    return LocalizationReport("fixed-locus integral", direct, _ordered_sum(contributions), contributions,
                              {"closedness_residual": worst, "phi": phi}, flags)


def _complex_jacobian(F: EquivariantMap, chart, u):
    grad = np.asarray(F.F.jet(chart, u)[1])  # [2k, n]
    return grad[0::2] + 1j * grad[1::2]


def _cohft_matrices(F: EquivariantMap, geom, chart, u):
    g = metric_at(geom, (chart, u))
    E = oriented_frame(g, geom.orientation[chart])
    D = _complex_jacobian(F, chart, u) @ E  # D[l, a] = e_a(F^l)
    w = np.asarray(F.weights, dtype=float)
    im = np.einsum("l,la,lb->ab", w, D.conj(), D).imag
    re = np.einsum("l,la,lb->ab", w**2, D.conj(), D).real
    return im, re


def cohft_localize(P, F: EquivariantMap, geom: Geometry, phi=1.0, mode="discrete", direct=None,
                   order=None) -> LocalizationReport:
    """Localization on the zero locus of an equivariant map ``F``.

    ``discrete``: ``(-2 pi)^m sum_p pf Im(A) / sqrt det Re(B) <vol, P_[2m]>`` with
    ``A = sum_l w_l dF^l* dF^l`` and ``B`` the same with ``w_l^2``, both in an
    oriented orthonormal frame.  ``bott``: the integral form with the 2-form
    ``sum_l w_l Im(dF^l* ^ dF^l)`` and the normal Hessian of ``sum_l w_l^2 |F^l|^2``.
    """
    fam = _family(P)
    field_ = fam(phi)
    n = geom.n
    check_equivariance(F, geom)
    check_invariant_volume(geom, _sample_points(geom))
    worst, flags = _closedness_flags(fam, geom, phi)
    contributions = []
    if mode == "discrete":
        for loc in F.zero_locus:
            if not loc.isolated:
                raise WrongEvaluatorError(f"discrete mode needs isolated zeros; {loc.name} is a patch",
                                          check="isolated")
            u = loc.point()
            im, re = _cohft_matrices(F, geom, loc.chart, u)
            m = n // 2
            pf = pfaffian(im, tol=1e-8)
            det = float(np.linalg.det(re))
            if det < 1e-10:
                raise PreconditionError(f"Re-matrix degenerate at {loc.name} (det {det:.2e})", check="cohft-re")
            pv = _top_pairing(geom, loc.chart, u, field_.value(loc.chart, u), n)
            c = (-2 * math.pi) ** m * pf / math.sqrt(det) * pv
            contributions.append({"locus": loc.name, "contribution": c, "pfaffian": pf, "re_det": det,
                                  "im_matrix": im, "pairing": pv})
    elif mode == "bott":
        w2 = np.asarray(F.weights, dtype=float) ** 2
        wj = jnp.asarray(w2)
        norm = JetField({c: (lambda f: lambda u: jnp.sum(wj * (f(u)[0::2] ** 2 + f(u)[1::2] ** 2)))(F.F.fn(c))
                         for c in F.F.fns}, n, None, "sum w^2 |F|^2")
        w = np.asarray(F.weights, dtype=float)
        for loc in F.zero_locus:
            m = (n - loc.dim) // 2

            def integrand(p: LocusPoint, m=m, loc=loc):
                D = _complex_jacobian(F, p.chart, p.u)
                M = np.einsum("l,lm,lv->mv", w, D.conj(), D).imag
                beta = np.array([2 * M[i, j] for i, j in _pairs(n)])
                power = _two_form_power(beta, m, n)
                pm = field_.value(p.chart, p.u).get(2 * m)
                nh = hessian_normal(geom, loc, p.v, scalar=norm)
                return (0.0 if pm is None else float(np.dot(power, pm))) / math.sqrt(abs(nh.det))

            integral = float(integrate_over_locus(loc, integrand, geom, order))
            c = (-2 * math.pi) ** m / math.factorial(m) * integral
            contributions.append({"locus": loc.name, "contribution": c, "codimension": n - loc.dim})
    else:
        raise ValueError(f"unknown mode {mode!r}")
    direct = integrate_multivector(fam, geom, phi) if direct is None else direct
    return LocalizationReport(f"zero-locus ({mode})", direct, _ordered_sum(contributions), contributions,
                              {"closedness_residual": worst, "phi": phi, "weights": list(F.weights)}, flags)


def _pairs(n):
    return [(i, j) for i in range(n) for j in range(i + 1, n)]


def dh_poisson(h: JetField, pi: JetField, geom: Geometry, tol=1e-8) -> LocalizationReport:
    """``int e^h vol = ((-2 pi)^m / m!) sum_p e^h(p) <vol, pi^m>(p) / (lambda_1 ... lambda_m)(p)``."""
    _require_isolated(geom, "Duistermaat-Heckman sum")
    n = geom.n
    m = n // 2
    labels = ("quantum master equation", "action equation", "Poisson equation")
    residuals = {}
    for u in _sample_points(geom):
        r = master_equation_residuals(h, pi, geom, u)
        for label, val in zip(labels, r):
            residuals[label] = max(residuals.get(label, 0.0), val)
            if val > tol:
                raise PreconditionError(f"{label} fails: residual {val:.2e} at {u}", check=label)
        ham = hamiltonian_residual(h, pi, geom, None, u)
        residuals["hamiltonian"] = max(residuals.get("hamiltonian", 0.0), ham)
        if ham > tol:
            raise PreconditionError(f"Hamiltonian decomposition fails: residual {ham:.2e} at {u}",
                                    check="hamiltonian")
    contributions = []
    for loc in geom.fixed_loci:
        u = loc.point()
        w = weights_at_fixed_point(geom, loc)
        hv = float(np.reshape(h.value(loc.chart, u), ()))
        power = {0: np.ones(1)}
        piv = pi.value(loc.chart, u)[2]
        for _ in range(m):
            power = wedge_parts(power, {2: piv}, n)
        pv = float(np.dot(geom.vol.value(loc.chart, u)[n], power[n]))
        c = (-2 * math.pi) ** m / math.factorial(m) * math.exp(hv) * pv / w.product
        contributions.append({"locus": loc.name, "contribution": c, "h": hv, "pairing": pv,
                              "weight_product": w.product})
    direct = integrate_multivector(h.map(jnp.exp), geom)
    return LocalizationReport("Duistermaat-Heckman", direct, _ordered_sum(contributions), contributions,
                              {"residuals": residuals})


@dataclass(frozen=True)
class RankTable:
    rows: list
    max_rank: int
    full_rank_somewhere: bool


def rank_at_fixed_points(pi: JetField, geom: Geometry, threshold=1e-9) -> RankTable:
    rows = []
    for loc in geom.fixed_loci:
        v = None if loc.isolated else 0.5 * (np.asarray(loc.lo) + np.asarray(loc.hi))
        u = loc.point(v)
        M = two_form_to_matrix(np.asarray(pi.value(loc.chart, u)[2]), geom.n)
        sv = np.linalg.svd(M, compute_uv=False)
        rows.append({"locus": loc.name, "chart": loc.chart, "point": u.tolist(), "rank": int(np.sum(sv > threshold))})
    top = max((r["rank"] for r in rows), default=0)
    return RankTable(rows, top, top == geom.n)


@dataclass(frozen=True)
class ContainmentVerdict:
    verdict: bool
    weights_of_action: tuple
    map_weights: tuple


def weight_containment_check(F: EquivariantMap, geom: Geometry, digits=8) -> ContainmentVerdict:
    """Every weight magnitude of the action must occur among ``|w_l|``."""
    lam = set()
    for loc in geom.fixed_loci:
        if not loc.isolated:
            raise WrongEvaluatorError("weight containment needs isolated fixed points", check="isolated")
        lam.update(round(x, digits) for x in weights_at_fixed_point(geom, loc).magnitudes)
    ws = {round(abs(float(w)), digits) for w in F.weights}
    return ContainmentVerdict(lam <= ws, tuple(sorted(lam)), tuple(sorted(ws)))


def phi_sweep(P, geom: Geometry, phis=(0.5, 1.0, 2.0)) -> list[dict]:
    """Direct integral and raw fixed-point sum of ``P_phi`` for several ``phi``.

    The direct value is ``phi``-independent; the raw sum scales as ``phi^m``
    and matches after dividing by the ``phi^m`` of the scaled Hessian.
    """
    fam = _family(P)
    m = geom.n // 2
    out = []
    for phi in phis:
        rep = berline_vergne_sum(fam, geom, phi)
        out.append({"phi": phi, "direct": rep.direct_value, "raw_sum": rep.localized_value,
                    "normalized_sum": rep.localized_value / phi**m})
    return out

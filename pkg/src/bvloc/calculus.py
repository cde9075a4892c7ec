"""Differential operators on multivector fields and forms.

Field-level builders (``*_field``) return new :class:`JetField` objects whose
chart functions stay jax-traceable, so operators compose and can be
differentiated again.  The point-level functions evaluate at one point and
return :class:`InhomogeneousElement` values.

Conventions (all signs follow from the contraction convention in
:mod:`bvloc.exterior`):

* ``Delta = vol^{-1} o d o (|_ vol)``; on vector fields it is ``div_vol``.
* The Schouten bracket is the odd Poisson bracket
  ``{F, G} = sum_i (F d<_{xi_i}) (d_i G) - (d_i F) (d>_{xi_i} G)``,
  which gives ``{X, f} = X(f)`` and ``{X, Y} = [X, Y]``.
* With these, ``Delta(P ^ Q) = Delta P ^ Q + (-1)^|P| P ^ Delta Q
  - (-1)^|P| {P, Q}`` and ``Delta_phi^2 = -phi Lie_X``.
"""

from __future__ import annotations

import math
from typing import Callable

import jax
import jax.numpy as jnp
import numpy as np

from .errors import InvariantVolumeViolationError
from .exterior import (
    FORM,
    VECTOR,
    InhomogeneousElement,
    add_parts,
    combos,
    exp_nilpotent_parts,
    left_contract_arrays,
    left_contract_parts,
    reversal_sign,
    scale_parts,
    wedge_parts,
    wedge_table,
)
from .geometry import Geometry
from .jets import JetField

INVARIANT_VOL_TOL = 1e-8


class EquivariantElement:
    """A family ``phi -> P_phi`` of multivector (or form) fields.

    The equivariant parameter is a number; every theorem is checked at
    sampled values of it.
    """

    def __init__(self, build: Callable[[float], JetField], name: str = ""):
        self.build = build
        self.name = name
        self._cache: dict = {}

    def __call__(self, phi: float) -> JetField:
        phi = float(phi)
        if phi not in self._cache:
            self._cache[phi] = self.build(phi)
        return self._cache[phi]

    @classmethod
    def constant(cls, field: JetField, name=""):
        return cls(lambda phi: field, name or field.name)


# ---------------------------------------------------------------------------
# pure helpers on dict-valued chart functions


def _basis_1(n, i):
    e = np.zeros(n)
    e[i] = 1.0
    return e


def _d_parts(fn, n):
    """Exterior derivative of a dict-valued form function."""
    dfn = jax.jacfwd(fn)

    def out(u):
        grads = dfn(u)
        res = {}
        for r, gr in grads.items():
            if r + 1 > n:
                continue
            t = wedge_table(n, 1, r)  # [mu, I, J]
            res[r + 1] = jnp.einsum("Im,mIJ->J", gr, t)
        return res

    return out


def _xi_left(parts, i, n):
    """Left derivative ``d>/d xi_i`` (contraction by ``dx^i`` from the left)."""
    e = _basis_1(n, i)
    return {k - 1: left_contract_arrays(e, 1, v, k, n) for k, v in parts.items() if k >= 1}


def _xi_right(parts, i, n):
    return {k - 1: (-1) ** (k - 1) * left_contract_arrays(_basis_1(n, i), 1, v, k, n)
            for k, v in parts.items() if k >= 1}


def _top_matrix(n, q):
    """``M[J, I]``: coefficients of ``e_I |_ e_top`` (a signed permutation)."""
    top = np.ones(1)
    M = np.zeros((math.comb(n, n - q), math.comb(n, q)))
    for i in range(math.comb(n, q)):
        e = np.zeros(math.comb(n, q))
        e[i] = 1.0
        M[:, i] = left_contract_arrays(e, q, top, n, n)
    return M


def _vol_inverse(beta, v, n):
    """Multivector ``Q`` with ``Q |_ vol = beta`` where ``vol = v e_top``."""
    return {n - r: (_top_matrix(n, n - r).T @ b) / v for r, b in beta.items()}


def _sub(x, y):
    return add_parts(x, scale_parts(y, -1.0))


# ---------------------------------------------------------------------------
# field-level builders


def _per_chart(fields, make, n, variance, name):
    charts = set.intersection(*(set(f.fns) for f in fields))
    return JetField({c: make(c) for c in sorted(charts)}, n, variance, name)


def de_rham_field(alpha: JetField) -> JetField:
    n = alpha.n
    return _per_chart([alpha], lambda c: _d_parts(alpha.fn(c), n), n, FORM, f"d({alpha.name})")


def contract_field(P: JetField, alpha: JetField) -> JetField:
    """Left contraction ``P |_ alpha`` (either variance pairing)."""
    n = P.n

    def make(c):
        p, a = P.fn(c), alpha.fn(c)
        return lambda u: left_contract_parts(p(u), a(u), n)

    return _per_chart([P, alpha], make, n, alpha.variance, f"{P.name}|_{alpha.name}")


def wedge_field(A: JetField, B: JetField) -> JetField:
    n = A.n

    def make(c):
        a, b = A.fn(c), B.fn(c)
        return lambda u: wedge_parts(a(u), b(u), n)

    return _per_chart([A, B], make, n, A.variance, f"{A.name}^{B.name}")


def add_fields(A: JetField, B: JetField, b_scale=1.0) -> JetField:
    def make(c):
        a, b = A.fn(c), B.fn(c)
        return lambda u: add_parts(a(u), scale_parts(b(u), b_scale))

    return _per_chart([A, B], make, A.n, A.variance, f"{A.name}+{B.name}")


def scale_field(A: JetField, s) -> JetField:
    if not A.graded:
        return A.map(lambda v: s * v)
    return A.map(lambda p: scale_parts(p, s))


def laplacian_field(P: JetField, geom: Geometry) -> JetField:
    """BV Laplacian by conjugating ``d`` through ``|_ vol``."""
    n = P.n
    vol = geom.vol

    def make(c):
        p, vf = P.fn(c), vol.fn(c)
        beta = lambda u: left_contract_parts(p(u), vf(u), n)
        dbeta = _d_parts(beta, n)
        return lambda u: _vol_inverse(dbeta(u), vf(u)[n][0], n)

    return _per_chart([P, vol], make, n, VECTOR, f"Delta({P.name})")


def schouten_field(P: JetField, Q: JetField) -> JetField:
    n = P.n

    def make(c):
        p, q = P.fn(c), Q.fn(c)
        dp, dq = jax.jacfwd(p), jax.jacfwd(q)

        def bracket(u):
            pu, qu = p(u), q(u)
            gp, gq = dp(u), dq(u)
            out = {}
            for i in range(n):
                di_q = {k: v[..., i] for k, v in gq.items()}
                di_p = {k: v[..., i] for k, v in gp.items()}
                out = add_parts(out, wedge_parts(_xi_right(pu, i, n), di_q, n))
                out = _sub(out, wedge_parts(di_p, _xi_left(qu, i, n), n))
            return out

        return bracket

    return _per_chart([P, Q], make, n, VECTOR, f"{{{P.name},{Q.name}}}")


def lie_multivector_field(X: JetField, P: JetField) -> JetField:
    return schouten_field(X, P)


def lie_form_field(X: JetField, alpha: JetField) -> JetField:
    """Cartan formula ``Lie_X = i_X d + d i_X``."""
    return add_fields(contract_field(X, de_rham_field(alpha)), de_rham_field(contract_field(X, alpha)))


def equivariant_delta_field(P: JetField, geom: Geometry, phi: float) -> JetField:
    return add_fields(laplacian_field(P, geom), wedge_field(geom.X, P), -float(phi))


def equivariant_d_field(alpha: JetField, geom: Geometry, phi: float) -> JetField:
    return add_fields(de_rham_field(alpha), contract_field(geom.X, alpha), -float(phi))


def exp_field(S: JetField, I: JetField | None = None, phi: float = 0.0) -> JetField:
    """``exp(S + phi I)`` for a scalar field ``S`` and bivector field ``I``."""
    n = S.n

    def make(c):
        s = S.fn(c)
        i = I.fn(c) if I is not None else None

        def fn(u):
            sv = jnp.reshape(s(u), ())
            nil = {} if i is None else scale_parts({k: v for k, v in i(u).items() if k}, phi)
            return exp_nilpotent_parts(nil, n, sv)

        return fn

    fields = [S] if I is None else [S, I]
    return _per_chart(fields, make, n, VECTOR, "exp")


def scalar_as_multivector(f: JetField) -> JetField:
    return f.map(lambda v: {0: jnp.reshape(v, (1,))}, variance=VECTOR)


# ---------------------------------------------------------------------------
# point-level API

_MEMO: dict = {}


def _memo(key, objs, build):
    hit = _MEMO.get(key)
    if hit is None or any(a is not b for a, b in zip(hit[0], objs)):
        hit = (objs, build())
        _MEMO[key] = hit
    return hit[1]


def _resolve(field, point, geom=None):
    if geom is not None:
        return geom.resolve(point)
    if isinstance(point, tuple) and len(point) == 2 and isinstance(point[0], str):
        return point[0], np.asarray(point[1], dtype=float)
    return next(iter(field.fns)), np.asarray(point, dtype=float)


def _element(field, chart, u):
    return InhomogeneousElement.from_arrays(field.n, field.variance, field.value(chart, u))


def de_rham_d(alpha: JetField, point) -> InhomogeneousElement:
    f = _memo(("d", id(alpha)), (alpha,), lambda: de_rham_field(alpha))
    return _element(f, *_resolve(alpha, point))


def schouten(P: JetField, Q: JetField, point) -> InhomogeneousElement:
    f = _memo(("sn", id(P), id(Q)), (P, Q), lambda: schouten_field(P, Q))
    return _element(f, *_resolve(P, point))


def bv_laplacian(P: JetField, geom: Geometry, point) -> InhomogeneousElement:
    f = _memo(("lap", id(P), id(geom)), (P, geom), lambda: laplacian_field(P, geom))
    return _element(f, *geom.resolve(point))


def divergence_of_action(geom: Geometry, point) -> float:
    el = bv_laplacian(geom.X, geom, point)
    return float(el.part(0).coeffs[0])


def check_invariant_volume(geom: Geometry, points, tol=INVARIANT_VOL_TOL):
    for pt in points:
        dv = divergence_of_action(geom, pt)
        if abs(dv) > tol:
            raise InvariantVolumeViolationError(
                f"div_vol X = {dv:.2e} at {pt}; volume form is not invariant", check="invariant-volume"
            )


def equivariant_delta(P: EquivariantElement, geom: Geometry, phi: float, point) -> InhomogeneousElement:
    check_invariant_volume(geom, [point])
    Pphi = P(phi)
    f = _memo(("dg", id(Pphi), id(geom), float(phi)), (Pphi, geom),
              lambda: equivariant_delta_field(Pphi, geom, phi))
    return _element(f, *geom.resolve(point))


def equivariant_d(alpha: EquivariantElement, geom: Geometry, phi: float, point) -> InhomogeneousElement:
    check_invariant_volume(geom, [point])
    a = alpha(phi)
    f = _memo(("dgf", id(a), id(geom), float(phi)), (a, geom), lambda: equivariant_d_field(a, geom, phi))
    return _element(f, *geom.resolve(point))


def master_equation_residuals(S: JetField, I_X: JetField, geom: Geometry, point):
    """Max-norm residuals of the three equations equivalent to closedness of
    ``exp(S + phi I_X)``: ``Delta S - {S,S}/2``, ``Delta I - {S, I} - X`` and
    ``{I, I}``.
    """
    Sm = S if S.graded else scalar_as_multivector(S)

    def build():
        r1 = add_fields(laplacian_field(Sm, geom), schouten_field(Sm, Sm), -0.5)
        r2 = add_fields(add_fields(laplacian_field(I_X, geom), schouten_field(Sm, I_X), -1.0), geom.X, -1.0)
        r3 = schouten_field(I_X, I_X)
        return r1, r2, r3

    fields = _memo(("master", id(S), id(I_X), id(geom)), (S, I_X, geom), build)
    chart, u = geom.resolve(point)
    return tuple(_element(f, chart, u).norm() for f in fields)


def modular_field(pi: JetField, geom: Geometry, point) -> InhomogeneousElement:
    """``X_vol = Delta(pi)``; zero iff ``pi`` is unimodular for ``vol``."""
    return bv_laplacian(pi, geom, point)


def hamiltonian_vector_field(h: JetField, pi: JetField) -> JetField:
    """``X_h = -{h, pi}``, the sign making ``X = Delta(pi) + X_h`` equivalent
    to the master equation."""
    hm = h if h.graded else scalar_as_multivector(h)
    return scale_field(schouten_field(hm, pi), -1.0)


def hamiltonian_residual(h: JetField, pi: JetField, geom: Geometry, X: JetField | None, point) -> float:
    """Max-norm of ``X - Delta(pi) - X_h`` at ``point``."""
    X = geom.X if X is None else X

    def build():
        return add_fields(add_fields(X, laplacian_field(pi, geom), -1.0), hamiltonian_vector_field(h, pi), -1.0)

    f = _memo(("ham", id(h), id(pi), id(geom), id(X)), (h, pi, geom, X), build)
    return _element(f, *geom.resolve(point)).norm()

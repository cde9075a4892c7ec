import json
import math

import jax.numpy as jnp
import numpy as np
import pytest

from bvloc import calculus as C
from bvloc import catalog
from bvloc import geometry as G
from bvloc import localization as L
from bvloc import quadrature as Q
from bvloc.errors import EquivarianceError, PreconditionError, WrongEvaluatorError
from bvloc.exterior import VECTOR
from bvloc.jets import JetField

DH = catalog.DH_VALUE


def rel(a, b):
    return abs(a - b) / abs(b)


@pytest.mark.parametrize("k", [1, 2])
def test_all_evaluators_agree(k):
    b = catalog.build("sphere_cohft", {"k": k})
    geom, P, F = b.geometry, b.fields["P"], b.fields["F"]
    values = [
        L.berline_vergne_sum(P, geom).localized_value,
        L.atiyah_bott_bv(P, geom).localized_value,
        L.cohft_localize(P, F, geom).localized_value,
        L.cohft_localize(P, F, geom, mode="bott").localized_value,
        L.dh_poisson(b.fields["h"], b.fields["pi"], geom).localized_value,
    ]
    for v in values:
        assert rel(v, DH) <= 1e-8


def test_report_contents(sphere):
    rep = L.berline_vergne_sum(sphere.fields["P"], sphere.geometry)
    assert rep.rel_residual <= 1e-8 and not rep.flags
    assert [c["locus"] for c in rep.per_locus_contributions] == ["N", "S"]
    doc = json.loads(rep.to_json())
    assert doc["schema"] == 1 and doc["theorem"] == rep.theorem
    assert math.isclose(doc["direct_value"], rep.direct_value)
    assert "localized" in rep.to_table()


def test_exact_input_localizes_to_zero(sphere):
    geom = sphere.geometry
    Qf = sphere.fields["P_open"]
    exact = C.EquivariantElement(lambda phi: C.equivariant_delta_field(Qf(phi), geom, phi), "Delta_phi Q")
    rep = L.berline_vergne_sum(exact, geom)
    assert abs(rep.direct_value) <= 1e-8 and abs(rep.localized_value) <= 1e-8


def test_open_input_is_flagged(sphere):
    rep = L.berline_vergne_sum(sphere.fields["P_open"], sphere.geometry)
    assert rep.flags


def test_mislabeled_weight_fails_equivariance():
    with pytest.raises(EquivarianceError):
        catalog.build("sphere_cohft", {"weight": 2})


def test_genuine_weight_two():
    b = catalog.build("sphere_cohft", {"k": 2, "weight": 2})
    assert L.weight_containment_check(b.fields["F"], b.geometry).verdict
    assert rel(L.cohft_localize(b.fields["P"], b.fields["F"], b.geometry).localized_value, DH) <= 1e-8


def test_trivial_action_is_wrong_evaluator():
    chart = G.Chart("xy", 2, (-1.0, -1.0), (1.0, 1.0))
    metric = JetField({"xy": lambda u: jnp.eye(2) + 0.0 * u[0]}, 2, None, "g")
    X = JetField({"xy": lambda u: {1: 0.0 * u}}, 2, VECTOR, "X")
    geom = G.Geometry("still", {"xy": chart}, "xy", metric, {"xy": 1}, G.CircleAction(X, ()))
    one = JetField({"xy": lambda u: {0: jnp.reshape(1.0 + 0.0 * u[0], (1,))}}, 2, VECTOR, "1")
    with pytest.raises(WrongEvaluatorError):
        L.berline_vergne_sum(one, geom)
    h = JetField({"xy": lambda u: 0.0 * u[0]}, 2, None, "h")
    pi = JetField({"xy": lambda u: {2: jnp.zeros(1) + 0.0 * u[0]}}, 2, VECTOR, "pi")
    with pytest.raises(WrongEvaluatorError):
        L.dh_poisson(h, pi, geom)


def test_non_isolated_locus_is_wrong_evaluator():
    b = catalog.build("s2xs2_bott", {"order": 12})
    with pytest.raises(WrongEvaluatorError):
        L.berline_vergne_sum(b.fields["P"], b.geometry)


def test_bott_locus_order_12():
    b = catalog.build("s2xs2_bott", {"order": 12})
    rep = L.atiyah_bott_bv(b.fields["P"], b.geometry, order=12)
    assert rep.rel_residual <= 1e-6
    assert rel(rep.direct_value, DH * 4 * math.pi) <= 1e-6


def test_dh_shift_by_constant(sphere):
    c = 0.7
    base = L.dh_poisson(sphere.fields["h"], sphere.fields["pi"], sphere.geometry)
    moved = L.dh_poisson(sphere.fields["h"].map(lambda v: v + c), sphere.fields["pi"], sphere.geometry)
    assert rel(moved.direct_value, math.exp(c) * base.direct_value) <= 1e-12
    assert rel(moved.localized_value, math.exp(c) * base.localized_value) <= 1e-12


def test_dh_rejects_degenerate_pi():
    b = catalog.build("degenerate_pi")
    with pytest.raises(PreconditionError) as err:
        L.dh_poisson(b.fields["h"], b.fields["pi"], b.geometry)
    assert err.value.check in ("quantum master equation", "action equation", "Poisson equation", "hamiltonian")


def test_rank_tables(sphere):
    table = L.rank_at_fixed_points(sphere.fields["pi"], sphere.geometry)
    assert [r["rank"] for r in table.rows] == [2, 2] and table.full_rank_somewhere
    zero = L.rank_at_fixed_points(C.scale_field(sphere.fields["pi"], 0.0), sphere.geometry)
    assert zero.max_rank == 0 and not zero.full_rank_somewhere
    deg = catalog.build("degenerate_pi")
    dtable = L.rank_at_fixed_points(deg.fields["pi"], deg.geometry)
    assert {r["locus"]: r["rank"] for r in dtable.rows} == {"N": 2, "S": 0}
    assert dtable.full_rank_somewhere


def test_containment(cohft):
    assert L.weight_containment_check(cohft.fields["F"], cohft.geometry).verdict
    free = catalog.build("free_control")
    F = G.EquivariantMap((1,), JetField({"flat": lambda u: jnp.stack([jnp.cos(u[0]), jnp.sin(u[0])])}, 2, None, "F"), ())
    assert L.weight_containment_check(F, free.geometry).verdict


def test_flipped_orientation(sphere):
    flipped = sphere.geometry.flipped()
    rep = L.berline_vergne_sum(sphere.fields["P"], flipped)
    assert rel(rep.direct_value, DH) <= 1e-12
    assert rep.rel_residual <= 1e-8


def test_phi_sweep(sphere):
    for row in L.phi_sweep(sphere.fields["P"], sphere.geometry):
        assert rel(row["direct"], DH) <= 1e-10
        assert rel(row["normalized_sum"], DH) <= 1e-8
        assert rel(row["raw_sum"], row["phi"] * DH) <= 1e-8


def test_direct_integral_is_phi_independent(sphere):
    vals = [Q.integrate_multivector(sphere.fields["P"], sphere.geometry, phi) for phi in (0.5, 1.0, 2.0)]
    assert np.ptp(vals) <= 1e-12

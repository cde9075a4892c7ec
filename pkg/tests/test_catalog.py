import pytest

from bvloc import catalog
from bvloc import geometry as G
from bvloc.errors import UnknownEntryError


def test_registry():
    ids = [e.id for e in catalog.entries()]
    assert ids == ["sphere_dh", "sphere_cohft", "s2xs2_bott", "free_control", "degenerate_pi"]
    assert [e.id for e in catalog.entries("atiyah_bott")] == ["sphere_dh", "s2xs2_bott"]
    assert catalog.entries("no-such-evaluator") == []
    for e in catalog.entries():
        for value, provenance in e.expected.values():
            assert provenance


def test_unknown_entry():
    with pytest.raises(UnknownEntryError):
        catalog.build("torus_dh")


@pytest.mark.parametrize("entry_id", ["sphere_dh", "sphere_cohft", "s2xs2_bott", "free_control", "degenerate_pi"])
def test_entries_build(entry_id):
    b = catalog.build(entry_id)
    assert b.geometry.quadrature_order == 24
    assert b.params["order"] == 24


def test_build_is_cached():
    assert catalog.build("sphere_dh") is catalog.build("sphere_dh", {"k": 1})


def test_doubled_speed_keeps_poles():
    one = catalog.build("sphere_dh").geometry
    two = catalog.build("sphere_dh", {"k": 2}).geometry
    assert [l.name for l in one.fixed_loci] == [l.name for l in two.fixed_loci]
    for a, b in zip(one.fixed_loci, two.fixed_loci):
        wa, wb = G.weights_at_fixed_point(one, a), G.weights_at_fixed_point(two, b)
        assert abs(wb.magnitudes[0] - 2 * wa.magnitudes[0]) < 1e-10


def test_fixed_loci_shapes():
    assert all(l.isolated for l in catalog.build("sphere_dh").geometry.fixed_loci)
    bott = catalog.build("s2xs2_bott").geometry
    assert [l.dim for l in bott.fixed_loci] == [2, 2] and bott.n == 4
    assert catalog.build("free_control").geometry.fixed_loci == ()

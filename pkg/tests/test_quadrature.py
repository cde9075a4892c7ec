import cmath
import math

import jax.numpy as jnp
import numpy as np
import pytest

from bvloc import catalog
from bvloc import geometry as G
from bvloc import quadrature as Q
from bvloc.errors import IntegrationDomainError, MorseBottViolationError
from bvloc.jets import JetField
from bvloc.verify import fresnel_ratio


def scalar(geom, fn, name="f"):
    return JetField({c: fn for c in geom.charts}, geom.n, None, name)


def test_grid_weights_cover_box():
    chart = G.Chart("box", 2, (0.0, -1.0), (2.0, 3.0))
    grid = Q.gauss_legendre_grid(chart, 7)
    assert grid.nodes.shape == (49, 2)
    assert np.isclose(grid.weights.sum(), 8.0)
    assert np.isclose(np.sum(grid.weights * grid.nodes[:, 0] ** 5), 2.0 ** 6 / 6 * 4)


def test_pairwise_sum_matches_sum(rng):
    x = rng.normal(size=1001)
    assert np.isclose(Q.pairwise_sum(x), x.sum(), atol=1e-12)


def test_area_and_dh_value(sphere):
    geom = sphere.geometry
    assert abs(Q.integrate_function(scalar(geom, lambda u: 1.0 + 0.0 * u[0]), geom) - 4 * math.pi) <= 1e-8
    for phi in (0.5, 1.0, 2.0):
        assert abs(Q.integrate_multivector(sphere.fields["P"], geom, phi) - catalog.DH_VALUE) <= 1e-8


def test_antisymmetric_integrand_vanishes(sphere):
    geom = sphere.geometry
    assert abs(Q.integrate_function(scalar(geom, lambda u: jnp.cos(u[0]) ** 3), geom)) <= 1e-10


def test_non_finite_integrand(sphere):
    geom = sphere.geometry
    with pytest.raises(IntegrationDomainError):
        Q.integrate_function(scalar(geom, lambda u: jnp.log(u[0] - 1.0)), geom)


def test_convergence_with_order(sphere):
    errs = [abs(Q.integrate_multivector(sphere.fields["P"], sphere.geometry, order=o) - catalog.DH_VALUE)
            for o in (4, 8, 12)]
    assert errs[0] > errs[1] > errs[2]


def test_thread_count_does_not_change_bits(rng):
    nodes = rng.uniform(size=(5000, 2))
    f = lambda U: jnp.sin(U[:, 0]) * U[:, 1]
    a = Q.evaluate_nodes(f, nodes, threads=1)
    b = Q.evaluate_nodes(f, nodes, threads=4)
    assert Q.pairwise_sum(a).hex() == Q.pairwise_sum(b).hex()


def test_sweep_start_matches_integral(sphere):
    res = Q.z_gamma_sweep(sphere.fields["P"], sphere.fields["gamma"], sphere.geometry, 1.0, [0.0, 1.0, 2.0])
    assert abs(res.z_values[0] - catalog.DH_VALUE) <= 1e-10
    assert res.verdict == "closed" and res.closed_input
    csv = res.to_csv().splitlines()
    assert csv[0] == "t,re_z,im_z" and len(csv) == 4
    assert res.to_svg().startswith("<svg")


def test_single_point_sweep(sphere):
    res = Q.z_gamma_sweep(sphere.fields["P"], sphere.fields["gamma"], sphere.geometry, 1.0, [0.0])
    assert res.max_deviation == 0.0


def test_open_input_warns(sphere):
    with pytest.warns(UserWarning):
        res = Q.z_gamma_sweep(sphere.fields["P_open"], sphere.fields["gamma"], sphere.geometry, 1.0, [0.0, 3.0])
    assert res.verdict == "non-closed"


def test_locus_integration():
    b = catalog.build("s2xs2_bott", {"order": 12})
    loc = b.geometry.fixed_loci[0]
    one = lambda p: 1.0
    whole = Q.integrate_over_locus(loc, one, b.geometry, order=24)
    assert abs(whole - 4 * math.pi) <= 1e-8
    lo, hi = loc.lo, loc.hi
    mid = (lo[0] + hi[0]) / 2 + 0.1
    f = lambda p: math.cos(p.v[0]) ** 2 + p.v[1]
    parts = [Q.integrate_over_locus(loc, f, b.geometry, 24, lo, (mid, hi[1])),
             Q.integrate_over_locus(loc, f, b.geometry, 24, (mid, lo[1]), hi)]
    assert abs(sum(parts) - Q.integrate_over_locus(loc, f, b.geometry, 24)) <= 1e-10


def test_isolated_locus_is_evaluation(sphere):
    loc = sphere.geometry.fixed_loci[0]
    assert Q.integrate_over_locus(loc, lambda p: 3.5, sphere.geometry) == 3.5


def gaussian_phase():
    geom = catalog.interval_geometry(5.0)
    S = JetField({"line": lambda u: -0.5 * u[0] ** 2}, 1, None, "S")
    crit = G.FixedLocus("line", "point", coords=(0.0,), name="0")
    return geom, S, crit


def test_fresnel_normalization_and_linearity():
    geom, S, crit = gaussian_phase()
    one = JetField({"line": lambda u: 1.0 + 0.0 * u[0]}, 1, None, "1")
    three = JetField({"line": lambda u: 3.0 + 0.0 * u[0]}, 1, None, "3")
    t = 50.0
    est = Q.stationary_phase_estimate(S, one, geom, crit, t)
    assert abs(est - math.sqrt(2 * math.pi / t) * cmath.exp(-1j * math.pi / 4)) <= 1e-12
    assert abs(Q.stationary_phase_estimate(S, three, geom, crit, t) - 3 * est) <= 1e-12


def test_fresnel_ratio_improves():
    r25, _ = fresnel_ratio(25.0)
    r50, _ = fresnel_ratio(50.0)
    assert abs(r50 - 1) < abs(r25 - 1) < 0.05
    assert abs(abs(r50 - 1) - 1 / 200) < 1e-3


def test_non_critical_point_rejected():
    geom, S, _ = gaussian_phase()
    off = G.FixedLocus("line", "point", coords=(1.0,), name="1")
    one = JetField({"line": lambda u: 1.0 + 0.0 * u[0]}, 1, None, "1")
    with pytest.raises(MorseBottViolationError):
        Q.stationary_phase_estimate(S, one, geom, off, 10.0)

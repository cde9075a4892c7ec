import math

import jax.numpy as jnp
import numpy as np
import pytest

from bvloc import calculus as C
from bvloc import catalog
from bvloc import geometry as G
from bvloc.errors import InvariantVolumeViolationError
from bvloc.exterior import FORM, VECTOR
from bvloc.jets import JetField
from bvloc.verify import random_field

from conftest import sphere_points


def plane(X=None):
    chart = G.Chart("xy", 2, (-2.0, -2.0), (2.0, 2.0))
    metric = JetField({"xy": lambda u: jnp.eye(2) + 0.0 * u[0]}, 2, None, "g")
    X = X or (lambda u: 0.0 * u)
    Xf = JetField({"xy": lambda u: {1: X(u)}}, 2, VECTOR, "X")
    return G.Geometry("plane", {"xy": chart}, "xy", metric, {"xy": 1}, G.CircleAction(Xf, ()))


def vec(fn, name="V"):
    return JetField({"xy": lambda u: {1: fn(u)}}, 2, VECTOR, name)


def bivec(fn, name="B"):
    return JetField({"xy": lambda u: {2: jnp.reshape(fn(u), (1,))}}, 2, VECTOR, name)


PT = np.array([0.4, -0.7])


def test_d_examples():
    const = JetField({"xy": lambda u: {0: jnp.reshape(3.0 + 0.0 * u[0], (1,))}}, 2, FORM, "c")
    assert C.de_rham_d(const, PT).norm() == 0
    a = JetField({"xy": lambda u: {1: jnp.stack([0.0 * u[0], u[0]])}}, 2, FORM, "a")
    assert np.allclose(C.de_rham_d(a, PT).part(2).coeffs, [1.0])


def test_d_squared_vanishes(rng):
    for degs in ((0,), (1,), (0, 1, 2)):
        alpha = random_field(rng, 3, degs, variance=FORM)
        dd = C.de_rham_field(C.de_rham_field(alpha))
        for u in rng.uniform(-0.9, 0.9, size=(5, 3)):
            assert dd.element("cube", u).norm() <= 1e-9


def test_schouten_examples():
    f = JetField({"xy": lambda u: {0: jnp.reshape(u[0] * u[1], (1,))}}, 2, VECTOR, "f")
    g = JetField({"xy": lambda u: {0: jnp.reshape(jnp.sin(u[0]), (1,))}}, 2, VECTOR, "g")
    assert C.schouten(f, g, PT).norm() == 0
    A = vec(lambda u: jnp.stack([0.0 * u[0], u[0]]))
    B = vec(lambda u: jnp.stack([u[1], 0.0 * u[0]]))
    x, y = PT
    assert np.allclose(C.schouten(A, B, PT).part(1).coeffs, [x, -y])
    pi = bivec(lambda u: 1.0 + 0.0 * u[0])
    assert C.schouten(pi, pi, PT).norm() == 0


def test_schouten_vector_on_function_is_derivative():
    X = vec(lambda u: jnp.stack([u[1], -u[0]]))
    f = JetField({"xy": lambda u: {0: jnp.reshape(u[0] ** 2 + u[1], (1,))}}, 2, VECTOR, "f")
    x, y = PT
    assert np.isclose(C.schouten(X, f, PT).part(0).coeffs[0], 2 * x * y - x)


def test_laplacian_examples():
    geom = plane()
    one = JetField({"xy": lambda u: {0: jnp.reshape(1.0 + 0.0 * u[0], (1,))}}, 2, VECTOR, "1")
    assert C.bv_laplacian(one, geom, PT).norm() == 0
    xdx = vec(lambda u: jnp.stack([u[0], 0.0 * u[0]]))
    assert np.isclose(C.bv_laplacian(xdx, geom, PT).part(0).coeffs[0], 1.0)
    P = bivec(lambda u: jnp.sin(u[0]) * u[1] ** 2)
    x, y = PT
    fx, fy = math.cos(x) * y ** 2, 2 * math.sin(x) * y
    assert np.allclose(C.bv_laplacian(P, geom, PT).part(1).coeffs, [-fy, fx])


def test_modular_field():
    geom = plane()
    assert C.modular_field(bivec(lambda u: 2.0 + 0.0 * u[0]), geom, PT).norm() == 0
    scaled = C.modular_field(bivec(lambda u: 1.0 + u[0]), geom, PT)
    assert np.allclose(scaled.part(1).coeffs, [0.0, 1.0])


def test_symplectic_sphere_is_unimodular(sphere, rng):
    for u in sphere_points(rng):
        assert C.modular_field(sphere.fields["pi"], sphere.geometry, u).norm() <= 1e-10


def test_equivariant_delta_of_one(sphere, rng):
    geom = sphere.geometry
    one = C.EquivariantElement.constant(
        JetField({c: (lambda u: {0: jnp.reshape(1.0 + 0.0 * u[0], (1,))}) for c in geom.charts}, 2, VECTOR, "1"))
    for phi in (0.5, 2.0):
        for u in sphere_points(rng, 3):
            got = C.equivariant_delta(one, geom, phi, u).part(1).coeffs
            X = np.asarray(geom.X.value("sph", u)[1])
            assert np.allclose(got, -phi * X, atol=1e-12)


@pytest.mark.parametrize("phi", [0.5, 1.0, 2.0])
def test_catalog_element_is_closed(sphere, rng, phi):
    for u in sphere_points(rng, 4):
        assert C.equivariant_delta(sphere.fields["P"], sphere.geometry, phi, u).norm() <= 1e-8
    for loc in sphere.geometry.fixed_loci:
        point = (loc.chart, loc.point())
        assert C.equivariant_delta(sphere.fields["P"], sphere.geometry, phi, point).norm() <= 1e-8


def test_equivariant_d_of_one(sphere):
    one = C.EquivariantElement.constant(
        JetField({"sph": lambda u: {0: jnp.reshape(1.0 + 0.0 * u[0], (1,))}}, 2, FORM, "1"))
    assert C.equivariant_d(one, sphere.geometry, 1.0, [1.0, 1.0]).norm() == 0


def test_master_equation_residuals(sphere, rng):
    geom, h, pi = sphere.geometry, sphere.fields["h"], sphere.fields["pi"]
    noise = random_field(rng, 2, (2,), chart="sph", name="noise")
    u = np.array([1.1, 0.6])
    r1, r2, r3 = C.master_equation_residuals(h, pi, geom, u)
    assert r1 == 0 and r2 <= 1e-8 and r3 <= 1e-8
    growth = [C.master_equation_residuals(h, C.add_fields(pi, noise, eps), geom, u)[1] for eps in (1e-3, 2e-3, 4e-3)]
    assert growth[0] > 1e-6
    assert np.allclose(growth[1] / growth[0], 2.0, rtol=1e-6)
    assert np.allclose(growth[2] / growth[0], 4.0, rtol=1e-6)


def test_hamiltonian_residual(sphere, rng):
    geom, h, pi = sphere.geometry, sphere.fields["h"], sphere.fields["pi"]
    shifted = h.map(lambda v: v + 5.0)
    doubled = C.scale_field(h, 2.0)
    for u in sphere_points(rng, 4):
        assert C.hamiltonian_residual(h, pi, geom, None, u) <= 1e-8
        assert C.hamiltonian_residual(shifted, pi, geom, None, u) <= 1e-8
        xh = C.hamiltonian_vector_field(h, pi).element("sph", u).norm()
        assert np.isclose(C.hamiltonian_residual(doubled, pi, geom, None, u), xh, rtol=1e-8)


def test_non_invariant_volume_is_rejected():
    bad = catalog.build("sphere_dh", {"metric_perturbation": 0.2}, validate=False)
    with pytest.raises(InvariantVolumeViolationError):
        C.equivariant_delta(bad.fields["P"], bad.geometry, 1.0, [1.0, 0.5])

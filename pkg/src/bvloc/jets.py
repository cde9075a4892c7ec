"""Fields on charts with exact jets.

A :class:`JetField` holds, per chart, a jax-traceable function of the chart
coordinates.  Values are either plain arrays (scalars, matrices, real
component vectors) or, for multivector and form fields, a dict mapping degree
to reduced coefficient arrays.  Jets of any order come from forward-mode
differentiation, so composite operators (``Delta(Delta(P))``, brackets of
brackets) stay exact to rounding.
"""

from __future__ import annotations

from typing import Callable, Mapping

import jax
import jax.numpy as jnp
import numpy as np

from .exterior import FORM, VECTOR, InhomogeneousElement


class JetField:
    """A field given chart-wise by jax-traceable functions."""

    def __init__(self, fns: Mapping[str, Callable], n: int, variance: str | None = None, name: str = ""):
        if variance not in (None, VECTOR, FORM):
            raise ValueError(f"unknown variance {variance!r}")
        self.fns = dict(fns)
        self.n = n
        self.variance = variance
        self.name = name
        self._compiled: dict = {}

    def __repr__(self):
        return f"JetField({self.name or '?'}, n={self.n}, variance={self.variance}, charts={list(self.fns)})"

    @property
    def graded(self) -> bool:
        return self.variance is not None

    def fn(self, chart: str) -> Callable:
        try:
            return self.fns[chart]
        except KeyError:
            raise KeyError(f"field {self.name or '?'} not defined on chart {chart!r}") from None

    def _get(self, chart, kind):
        key = (chart, kind)
        if key not in self._compiled:
            f = self.fn(chart)
            if kind == "value":
                g = jax.jit(f)
            elif kind == "grad":
                g = jax.jit(jax.jacfwd(f))
            elif kind == "hess":
                g = jax.jit(jax.jacfwd(jax.jacfwd(f)))
            elif kind == "batch":
                g = jax.jit(jax.vmap(f))
            else:
                raise ValueError(kind)
            self._compiled[key] = g
        return self._compiled[key]

    def value(self, chart: str, u):
        return _to_numpy(self._get(chart, "value")(jnp.asarray(u, dtype=float)))

    def jet(self, chart: str, u):
        """``(value, first derivatives, second derivatives)`` at ``u``.

        Derivative axes are appended after the value axes.
        """
        u = jnp.asarray(u, dtype=float)
        return tuple(_to_numpy(self._get(chart, k)(u)) for k in ("value", "grad", "hess"))

    def batch(self, chart: str, U):
        return _to_numpy(self._get(chart, "batch")(jnp.asarray(U, dtype=float)))

    def element(self, chart: str, u) -> InhomogeneousElement:
        if not self.graded:
            raise TypeError("element() needs a multivector or form field")
        return InhomogeneousElement.from_arrays(self.n, self.variance, self.value(chart, u))

    def map(self, f: Callable, variance="same", name="") -> "JetField":
        """Pointwise post-composition ``u -> f(self(u))`` on every chart."""
        return JetField(
            {c: _compose(f, fn) for c, fn in self.fns.items()},
            self.n,
            self.variance if variance == "same" else variance,
            name or self.name,
        )


def _compose(f, fn):
    return lambda u: f(fn(u))


def _to_numpy(tree):
    return jax.tree_util.tree_map(np.asarray, tree)


def chartwise(charts, build: Callable[[str], Callable], n: int, variance=None, name="") -> JetField:
    """Build a field from ``build(chart_name) -> function``."""
    return JetField({c: build(c) for c in charts}, n, variance, name)


def validate_jets(field: JetField, chart: str, u, step=1e-4, rtol=1e-5, jets=None):
    """Check reported jets against central finite differences.

    ``jets`` may carry externally supplied ``(value, grad, hess)``; otherwise
    the field's own jets are checked.  Returns the worst relative error and
    raises ``AssertionError`` when it exceeds ``rtol`` or the Hessian is not
    symmetric to 1e-9.
    """
    u = np.asarray(u, dtype=float)
    value, grad, hess = jets if jets is not None else field.jet(chart, u)
    leaves_v = jax.tree_util.tree_leaves(value)
    leaves_g = jax.tree_util.tree_leaves(grad)
    leaves_h = jax.tree_util.tree_leaves(hess)
    worst = 0.0
    for i in range(u.size):
        e = np.zeros_like(u)
        e[i] = step
        vp = jax.tree_util.tree_leaves(field.value(chart, u + e))
        vm = jax.tree_util.tree_leaves(field.value(chart, u - e))
        for v0, g, h, a, b in zip(leaves_v, leaves_g, leaves_h, vp, vm):
            fd_g = (a - b) / (2 * step)
            fd_h = (a - 2 * v0 + b) / step**2
            scale = 1.0 + np.max(np.abs(g[..., i]), initial=0.0)
            worst = max(worst, float(np.max(np.abs(fd_g - g[..., i]), initial=0.0)) / scale)
            hscale = 1.0 + np.max(np.abs(h[..., i, i]), initial=0.0)
            worst = max(worst, float(np.max(np.abs(fd_h - h[..., i, i]), initial=0.0)) / hscale)
    for h in leaves_h:
        if h.ndim >= 2 and np.max(np.abs(h - np.swapaxes(h, -1, -2)), initial=0.0) > 1e-9:
            raise AssertionError("second derivatives not symmetric")
    if worst > rtol:
        raise AssertionError(f"jets inconsistent with finite differences (rel err {worst:.2e})")
    return worst

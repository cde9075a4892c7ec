"""Deterministic quadrature, the localization t-sweep and stationary phase.

Integrands are evaluated on tensor Gauss-Legendre grids in fixed-size chunks
(optionally on a thread pool) and reduced with a fixed pairwise tree, so the
result does not depend on the number of workers.
"""

from __future__ import annotations

import cmath
import math
import os
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, NamedTuple, Sequence

import jax
import jax.numpy as jnp
import numpy as np

from .calculus import (
    EquivariantElement,
    contract_field,
    de_rham_field,
    equivariant_delta,
)
from .errors import DegenerateMetricError, IntegrationDomainError
from .exterior import exp_nilpotent_parts, wedge_parts
from .geometry import FixedLocus, Geometry, hessian_normal, metric_at
from .jets import JetField

CHUNK = 2048


@dataclass(frozen=True)
class QuadratureGrid:
    chart: str
    nodes: np.ndarray
    weights: np.ndarray


@lru_cache(maxsize=64)
def _gl_box(lo: tuple, hi: tuple, order: int):
    x, w = np.polynomial.legendre.leggauss(order)
    axes, wts = [], []
    for a, b in zip(lo, hi):
        axes.append(0.5 * (a + b) + 0.5 * (b - a) * x)
        wts.append(0.5 * (b - a) * w)
    nodes = np.stack(np.meshgrid(*axes, indexing="ij"), -1).reshape(-1, len(lo))
    weights = np.ones(1)
    for wa in wts:
        weights = np.multiply.outer(weights, wa).reshape(-1)
    nodes.setflags(write=False)
    weights.setflags(write=False)
    return nodes, weights


def gauss_legendre_grid(chart, order: int, lo=None, hi=None) -> QuadratureGrid:
    lo = tuple(float(v) for v in (chart.lo if lo is None else lo))
    hi = tuple(float(v) for v in (chart.hi if hi is None else hi))
    nodes, weights = _gl_box(lo, hi, int(order))
    return QuadratureGrid(chart.name, nodes, weights)


def workers() -> int:
    try:
        return max(1, int(os.environ.get("BVLOC_THREADS", "1")))
    except ValueError:
        return 1


def pairwise_sum(values: np.ndarray):
    """Sum along axis 0 with a fixed binary tree (independent of chunking)."""
    v = np.asarray(values)
    if v.shape[0] == 0:
        return np.zeros(v.shape[1:], dtype=v.dtype).sum(axis=0) if v.ndim > 1 else v.dtype.type(0)
    size = 1 << (v.shape[0] - 1).bit_length()
    if size != v.shape[0]:
        pad = np.zeros((size - v.shape[0],) + v.shape[1:], dtype=v.dtype)
        v = np.concatenate([v, pad])
    while v.shape[0] > 1:
        v = v[0::2] + v[1::2]
    return v[0]


def evaluate_nodes(fn: Callable, nodes: np.ndarray, threads: int | None = None) -> np.ndarray:
    """Apply a batched ``fn`` to ``nodes`` chunk by chunk, preserving order.

    Every chunk has the same shape (the last one is padded) so a jitted
    ``fn`` compiles once.
    """
    total = nodes.shape[0]
    chunk = min(CHUNK, total)
    starts = list(range(0, total, chunk))

    def run(s):
        block = nodes[s:s + chunk]
        if block.shape[0] < chunk:
            block = np.concatenate([block, np.repeat(block[-1:], chunk - block.shape[0], axis=0)])
        return np.asarray(fn(block))[: min(chunk, total - s)]

    threads = workers() if threads is None else threads
    if threads > 1 and len(starts) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(run, starts))
    else:
        parts = [run(s) for s in starts]
    return np.concatenate(parts)


def _finite(values, what):
    if not np.all(np.isfinite(values)):
        raise IntegrationDomainError(f"non-finite {what} sample on the quadrature grid")
    return values


def integrate_scalar_density(fn_of_chart: Callable[[str], Callable], geom: Geometry, order=None):
    """``sum_nodes w * fn(u)`` on the integration chart, ``fn`` jax-traceable."""
    chart = geom.charts[geom.integration_chart]
    grid = gauss_legendre_grid(chart, order or geom.quadrature_order)
    f = jax.jit(jax.vmap(fn_of_chart(chart.name)))
    vals = _finite(evaluate_nodes(f, grid.nodes), "integrand")
    return pairwise_sum(grid.weights.reshape((-1,) + (1,) * (vals.ndim - 1)) * vals)


def _as_family(P):
    return P if isinstance(P, EquivariantElement) else EquivariantElement.constant(P)


def _top_density(geom, chart_name):
    """Oriented density ``o * vol`` so the result does not depend on orientation."""
    vol = geom.vol.fn(chart_name)
    o = float(geom.orientation[chart_name])
    n = geom.n
    return lambda u: o * vol(u)[n][0]


def integrate_multivector(P, geom: Geometry, phi=1.0, order=None) -> float:
    """``int_M P``: the degree-0 component integrated against ``vol``."""
    field = _as_family(P)(phi)
    n = geom.n

    def build(c):
        p = field.fn(c)
        dens = _top_density(geom, c)
        if field.graded:
            return lambda u: p(u).get(0, jnp.zeros(1))[0] * dens(u)
        return lambda u: jnp.reshape(p(u), ()) * dens(u)

    return float(integrate_scalar_density(build, geom, order))


def integrate_function(f: JetField, geom: Geometry, order=None) -> float:
    return integrate_multivector(f, geom, order=order)


# ---------------------------------------------------------------------------
# localization-principle sweep


@dataclass(frozen=True)
class SweepResult:
    t_values: np.ndarray
    z_values: np.ndarray
    max_deviation: float
    verdict: str
    tolerance: float
    closed_input: bool = True

    def rows(self):
        return [(float(t), float(z.real), float(z.imag)) for t, z in zip(self.t_values, self.z_values)]

    def to_csv(self) -> str:
        lines = ["t,re_z,im_z"]
        lines += [",".join(repr(v) for v in row) for row in self.rows()]
        return "\n".join(lines) + "\n"

    def to_svg(self, width=640, height=360, pad=40) -> str:
        t = np.asarray(self.t_values, dtype=float)
        series = [("Re Z", self.z_values.real, "#1f77b4"), ("Im Z", self.z_values.imag, "#d62728")]
        ys = np.concatenate([s[1] for s in series])
        y0, y1 = float(ys.min()), float(ys.max())
        if y1 - y0 < 1e-12:
            y0, y1 = y0 - 1.0, y1 + 1.0
        t0, t1 = float(t.min()), float(t.max())
        if t1 - t0 < 1e-12:
            t0, t1 = t0 - 1.0, t1 + 1.0

        def xy(a, b):
            x = pad + (a - t0) / (t1 - t0) * (width - 2 * pad)
            y = height - pad - (b - y0) / (y1 - y0) * (height - 2 * pad)
            return f"{x:.2f},{y:.2f}"

        out = [
            f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
            f'viewBox="0 0 {width} {height}">',
            f'<rect width="{width}" height="{height}" fill="white"/>',
            f'<line x1="{pad}" y1="{height - pad}" x2="{width - pad}" y2="{height - pad}" stroke="black"/>',
            f'<line x1="{pad}" y1="{pad}" x2="{pad}" y2="{height - pad}" stroke="black"/>',
            f'<text x="{width / 2:.0f}" y="{height - 8}" font-size="12" text-anchor="middle">t</text>',
            f'<text x="4" y="{pad - 8}" font-size="11">{y1:.6g}</text>',
            f'<text x="4" y="{height - pad + 14}" font-size="11">{y0:.6g}</text>',
        ]
        for i, (label, vals, color) in enumerate(series):
            pts = " ".join(xy(a, b) for a, b in zip(t, vals))
            out.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{pts}"/>')
            out.append(f'<text x="{width - pad - 60}" y="{pad + 14 * i}" font-size="12" fill="{color}">{label}</text>')
        out.append(f'<text x="{pad + 6}" y="{pad - 8}" font-size="11">{self.verdict}, max dev {self.max_deviation:.3e}</text>')
        out.append("</svg>")
        return "\n".join(out) + "\n"


def _sweep_coefficients(P: JetField, gamma: JetField, geom: Geometry):
    """Per chart, ``u -> (c_0, ..., c_m, gamma(X))`` with
    ``[(P |_ vol) ^ exp(s d gamma)]_top = sum_j s^j c_j``.
    """
    n = geom.n
    A = contract_field(P, geom.vol)
    B = de_rham_field(gamma)
    m = n // 2

    def build(c):
        a, b, x, gm = A.fn(c), B.fn(c), geom.X.fn(c), gamma.fn(c)
        o = float(geom.orientation[c])

        def fn(u):
            av = a(u)
            e = exp_nilpotent_parts({2: b(u).get(2, jnp.zeros(n * (n - 1) // 2))}, n)
            cs = []
            for j in range(m + 1):
                top = wedge_parts({n - 2 * j: av[n - 2 * j]} if (n - 2 * j) in av else {},
                                  {2 * j: e[2 * j]} if (2 * j) in e else {}, n)
                cs.append(o * top[n][0] if n in top else jnp.zeros(()))
            s = jnp.dot(x(u)[1], gm(u)[1])
            return jnp.stack(cs + [s])

        return fn

    return build


def z_gamma_sweep(P, gamma: JetField, geom: Geometry, phi, t_grid: Sequence[float], tol=1e-7,
                  order=None, check_points=3) -> SweepResult:
    """``Z(t) = int_M [(P |_ vol) ^ exp(i t d gamma)]_top exp(-i t phi gamma(X))``.

    For equivariantly closed ``P`` and invariant ``gamma`` this is constant in
    ``t``.  The grid order grows linearly with ``max |t|``.
    """
    fam = _as_family(P)
    field = fam(phi)
    closed = True
    chart = geom.charts[geom.integration_chart]
    rng = np.random.default_rng(7)
    lo, hi = np.asarray(chart.lo), np.asarray(chart.hi)
    for u in lo + (hi - lo) * rng.uniform(0.1, 0.9, size=(check_points, chart.n)):
        if equivariant_delta(fam, geom, phi, u).norm() > 1e-7:
            closed = False
    if not closed:
        warnings.warn("sweep input is not equivariantly closed; Z(t) need not be constant", stacklevel=2)
    t = np.asarray(sorted(float(v) for v in t_grid))
    tmax = float(np.max(np.abs(t))) if t.size else 0.0
    if order is None:
        order = max(geom.quadrature_order, int(math.ceil(geom.quadrature_order + 4 * tmax * max(1.0, abs(phi)))))
    grid = gauss_legendre_grid(chart, order)
    f = jax.jit(jax.vmap(_sweep_coefficients(field, gamma, geom)(chart.name)))
    vals = _finite(evaluate_nodes(f, grid.nodes), "sweep")
    coef, s = vals[:, :-1], vals[:, -1]
    z = []
    for tv in t:
        poly = sum(coef[:, j] * (1j * tv) ** j for j in range(coef.shape[1]))
        z.append(pairwise_sum(grid.weights * poly * np.exp(-1j * tv * phi * s)))
    z = np.asarray(z, dtype=complex)
    dev = float(np.max(np.abs(z - z[0]))) if z.size else 0.0
    verdict = "closed" if dev <= 10 * tol else "non-closed"
    return SweepResult(t, z, dev, verdict, tol, closed)


# ---------------------------------------------------------------------------
# loci and stationary phase


class LocusPoint(NamedTuple):
    chart: str
    u: np.ndarray
    v: np.ndarray | None


def integrate_over_locus(locus: FixedLocus, integrand: Callable[[LocusPoint], complex], geom: Geometry,
                         order=None, lo=None, hi=None):
    """``int_locus integrand * dA`` with the induced Riemannian density.

    An isolated point contributes ``integrand`` at the point.
    """
    if locus.isolated:
        return integrand(LocusPoint(locus.chart, locus.point(), None))
    lo = locus.lo if lo is None else lo
    hi = locus.hi if hi is None else hi
    x, w = np.polynomial.legendre.leggauss(order or geom.quadrature_order)
    axes = [0.5 * (a + b) + 0.5 * (b - a) * x for a, b in zip(lo, hi)]
    wax = [0.5 * (b - a) * w for a, b in zip(lo, hi)]
    V = np.stack(np.meshgrid(*axes, indexing="ij"), -1).reshape(-1, len(lo))
    W = np.ones(1)
    for wa in wax:
        W = np.multiply.outer(W, wa).reshape(-1)
    vals = []
    for v in V:
        u = locus.point(v)
        T = locus.tangents(v)
        g = metric_at(geom, (locus.chart, u))
        det = np.linalg.det(T.T @ g @ T)
        if not det > 0:
            raise DegenerateMetricError(f"induced metric on {locus.name} degenerate at {v}")
        vals.append(integrand(LocusPoint(locus.chart, u, v)) * math.sqrt(det))
    vals = np.asarray(vals)
    return pairwise_sum(W * vals)


def stationary_phase_estimate(S: JetField, f: JetField, geom: Geometry, crit, t: float, order=None) -> complex:
    """Leading-order ``int f exp(i t S) vol`` from the critical loci of ``S``.

    Each locus of codimension ``k`` contributes
    ``(2 pi / t)^(k/2) exp(i pi sgn / 4) int f exp(i t S) / sqrt|det Hess_N S| dA``.
    ``crit`` is a locus or a sequence of loci.
    """
    loci = [crit] if isinstance(crit, FixedLocus) else list(crit)
    total = 0j
    for loc in loci:
        k = geom.n - loc.dim

        def integrand(p, loc=loc):
            nh = hessian_normal(geom, loc, p.v, scalar=S)
            fv = float(np.reshape(f.value(p.chart, p.u), ()))
            sv = float(np.reshape(S.value(p.chart, p.u), ()))
            phase = cmath.exp(1j * math.pi * nh.signature / 4 + 1j * t * sv)
            return fv * phase / math.sqrt(abs(nh.det))

        total += (2 * math.pi / t) ** (k / 2) * integrate_over_locus(loc, integrand, geom, order)
    return complex(total)


def oscillatory_integral(S: JetField, f: JetField, geom: Geometry, t: float, order=None) -> complex:
    """Direct quadrature of ``int f exp(i t S) vol``; order grows with ``t``."""
    if order is None:
        order = int(geom.quadrature_order + math.ceil(4 * abs(t)))

    def build(c):
        s, fv, dens = S.fn(c), f.fn(c), _top_density(geom, c)
        return lambda u: jnp.stack([jnp.reshape(fv(u), ()) * dens(u), jnp.reshape(s(u), ())])

    chart = geom.charts[geom.integration_chart]
    grid = gauss_legendre_grid(chart, order)
    vals = _finite(evaluate_nodes(jax.jit(jax.vmap(build(chart.name))), grid.nodes), "oscillatory")
    return complex(pairwise_sum(grid.weights * vals[:, 0] * np.exp(1j * t * vals[:, 1])))

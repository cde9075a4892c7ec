"""Pointwise graded multilinear algebra in dimension ``n <= 6``.

Degree-``k`` elements are stored densely as ``C(n, k)`` reduced coefficients
ordered lexicographically by strictly increasing multi-index.  The same storage
serves multivectors (basis ``d_I = d_{i1} ^ ... ^ d_{ik}``) and forms (basis
``dx^I``); the ``variance`` tag keeps them apart.

Sign conventions:

* ``pair(alpha, P) = sum_I alpha_I P_I``, so ``<dx^I, d_I> = 1``.
* Right contraction is defined by ``<alpha _| P, Q> = <alpha, P ^ Q>``.
* Left contraction ``P |_ alpha`` is the composite of interior products,
  ``(X1 ^ ... ^ Xk) |_ = i_X1 o ... o i_Xk``.  It obeys
  ``(P ^ Q) |_ = P |_ o Q |_`` and ``X |_ = i_X``; its adjunction reads
  ``<P |_ alpha, Q> = <alpha, rev(P) ^ Q>`` with ``rev(P) = (-1)^(p(p-1)/2) P``.

The array-level helpers (``*_arrays``, ``*_parts``) accept numpy arrays or jax
arrays/tracers, so the differential operators can be differentiated through.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Mapping

import numpy as np

from .errors import InvalidOperandError

MAX_DIM = 6
VECTOR = "vector"
FORM = "form"


def _xp(*arrays):
    for a in arrays:
        if type(a).__module__.startswith(("jax", "jaxlib")):
            import jax.numpy as jnp

            return jnp
    return np


@lru_cache(maxsize=None)
def combos(n: int, k: int) -> tuple[tuple[int, ...], ...]:
    return tuple(itertools.combinations(range(n), k))


@lru_cache(maxsize=None)
def combo_index(n: int, k: int) -> dict[tuple[int, ...], int]:
    return {c: i for i, c in enumerate(combos(n, k))}


def merge_sign(first, second) -> int:
    """Sign of the permutation sorting ``first + second`` (0 on overlap)."""
    if set(first) & set(second):
        return 0
    inversions = sum(1 for a in first for b in second if a > b)
    return -1 if inversions % 2 else 1


@lru_cache(maxsize=None)
def wedge_table(n: int, k: int, l: int) -> np.ndarray:
    """``T[I, J, K]`` with ``e_I ^ e_J = sum_K T[I, J, K] e_K``."""
    out = np.zeros((math.comb(n, k), math.comb(n, l), math.comb(n, k + l)))
    if k + l > n:
        return out
    idx = combo_index(n, k + l)
    for i, a in enumerate(combos(n, k)):
        for j, b in enumerate(combos(n, l)):
            s = merge_sign(a, b)
            if s:
                out[i, j, idx[tuple(sorted(a + b))]] = s
    out.setflags(write=False)
    return out


def reversal_sign(k: int) -> int:
    return -1 if (k * (k - 1) // 2) % 2 else 1


def _check_n(n):
    if not 0 <= n <= MAX_DIM:
        raise InvalidOperandError(f"dimension {n} outside [0, {MAX_DIM}]")


# ---------------------------------------------------------------------------
# array level


def wedge_arrays(a, k: int, b, l: int, n: int):
    xp = _xp(a, b)
    return xp.einsum("...i,...j,ijk->...k", a, b, wedge_table(n, k, l))


def left_contract_arrays(p, kp: int, a, ka: int, n: int):
    """``P |_ alpha`` for ``P`` of degree ``kp`` and ``alpha`` of degree ``ka``.

    Also used with the roles of forms and multivectors exchanged (a form
    contracted into a multivector), the formula being symmetric.
    """
    xp = _xp(p, a)
    t = wedge_table(n, kp, ka - kp)
    return reversal_sign(kp) * xp.einsum("...i,...k,ijk->...j", p, a, t)


def right_contract_arrays(a, ka: int, p, kp: int, n: int):
    """``alpha _| P``: ``<alpha _| P, Q> = <alpha, P ^ Q>``."""
    xp = _xp(p, a)
    t = wedge_table(n, kp, ka - kp)
    return xp.einsum("...i,...k,ijk->...j", p, a, t)


def add_parts(x: Mapping[int, object], y: Mapping[int, object]) -> dict:
    out = dict(x)
    for k, v in y.items():
        out[k] = out[k] + v if k in out else v
    return out


def scale_parts(x: Mapping[int, object], c) -> dict:
    return {k: c * v for k, v in x.items()}


def wedge_parts(x: Mapping[int, object], y: Mapping[int, object], n: int) -> dict:
    out: dict = {}
    for k, a in x.items():
        for l, b in y.items():
            if k + l > n:
                continue
            out = add_parts(out, {k + l: wedge_arrays(a, k, b, l, n)})
    return out


def left_contract_parts(p: Mapping[int, object], a: Mapping[int, object], n: int) -> dict:
    out: dict = {}
    for kp, pv in p.items():
        for ka, av in a.items():
            if ka >= kp:
                out = add_parts(out, {ka - kp: left_contract_arrays(pv, kp, av, ka, n)})
    return out


def exp_nilpotent_parts(x: Mapping[int, object], n: int, scalar=0.0) -> dict:
    """``exp(scalar) * sum_j x^j / j!`` for ``x`` without a degree-0 part."""
    xp = _xp(scalar, *x.values())
    lead = xp.exp(scalar)
    out = {0: xp.ones(1) * lead}
    term = {0: xp.ones(1)}
    for j in range(1, n // 2 + 1 if all(k % 2 == 0 for k in x) else n + 1):
        term = scale_parts(wedge_parts(term, x, n), 1.0 / j)
        if not term:
            break
        out = add_parts(out, scale_parts(term, lead))
    return out


# ---------------------------------------------------------------------------
# value types


@dataclass(frozen=True)
class GradedCoefficients:
    n: int
    k: int
    variance: str
    coeffs: np.ndarray

    def __post_init__(self):
        _check_n(self.n)
        if self.variance not in (VECTOR, FORM):
            raise InvalidOperandError(f"unknown variance {self.variance!r}")
        if not 0 <= self.k <= self.n:
            raise InvalidOperandError(f"degree {self.k} outside [0, {self.n}]")
        c = np.asarray(self.coeffs)
        if not np.iscomplexobj(c):
            c = c.astype(float)
        if c.shape != (math.comb(self.n, self.k),):
            raise InvalidOperandError(
                f"expected {math.comb(self.n, self.k)} coefficients, got shape {c.shape}"
            )
        object.__setattr__(self, "coeffs", c)

    @classmethod
    def zeros(cls, n, k, variance):
        return cls(n, k, variance, np.zeros(math.comb(n, k)))

    @classmethod
    def basis(cls, n, indices, variance, coefficient=1.0):
        """Basis element ``e_{i1} ^ ... ^ e_{ik}`` (indices in any order)."""
        indices = tuple(indices)
        if len(set(indices)) != len(indices):
            return cls.zeros(n, len(indices), variance)
        if any(not 0 <= i < n for i in indices):
            raise InvalidOperandError(f"index out of range in {indices}")
        srt = tuple(sorted(indices))
        sign = _perm_sign(indices)
        out = np.zeros(math.comb(n, len(indices)))
        out[combo_index(n, len(indices))[srt]] = sign * coefficient
        return cls(n, len(indices), variance, out)

    def __add__(self, other):
        _same_space(self, other)
        if self.k != other.k:
            raise InvalidOperandError("cannot add different degrees; use InhomogeneousElement")
        return GradedCoefficients(self.n, self.k, self.variance, self.coeffs + other.coeffs)

    def __neg__(self):
        return GradedCoefficients(self.n, self.k, self.variance, -self.coeffs)

    def __mul__(self, c):
        return GradedCoefficients(self.n, self.k, self.variance, c * self.coeffs)

    __rmul__ = __mul__

    def __getitem__(self, indices):
        """Coefficient on ``e_I`` for a strictly increasing ``I``."""
        return self.coeffs[combo_index(self.n, self.k)[tuple(indices)]]

    def allclose(self, other, atol=1e-12):
        return (self.n, self.k, self.variance) == (other.n, other.k, other.variance) and np.allclose(
            self.coeffs, other.coeffs, atol=atol, rtol=0
        )


def _perm_sign(seq) -> int:
    seq = list(seq)
    sign = 1
    for i in range(len(seq)):
        for j in range(i + 1, len(seq)):
            if seq[i] > seq[j]:
                sign = -sign
    return sign


def _same_space(a, b):
    if a.n != b.n:
        raise InvalidOperandError(f"dimension mismatch: {a.n} vs {b.n}")
    if a.variance != b.variance:
        raise InvalidOperandError(f"variance mismatch: {a.variance} vs {b.variance}")


@dataclass(frozen=True)
class InhomogeneousElement:
    """Mixed-degree multivector or form; absent degrees are zero."""

    n: int
    variance: str
    parts: Mapping[int, GradedCoefficients] = field(default_factory=dict)

    def __post_init__(self):
        for k, p in self.parts.items():
            if p.n != self.n or p.variance != self.variance or p.k != k:
                raise InvalidOperandError(f"part {k} inconsistent with element")

    @classmethod
    def from_arrays(cls, n, variance, arrays: Mapping[int, object]):
        return cls(
            n,
            variance,
            {int(k): GradedCoefficients(n, int(k), variance, np.asarray(v)) for k, v in arrays.items()},
        )

    @classmethod
    def scalar(cls, n, variance, value):
        return cls.from_arrays(n, variance, {0: np.array([value])})

    def arrays(self) -> dict:
        return {k: p.coeffs for k, p in self.parts.items()}

    def part(self, k) -> GradedCoefficients:
        if k in self.parts:
            return self.parts[k]
        return GradedCoefficients.zeros(self.n, k, self.variance)

    def __add__(self, other):
        _same_space(self, other)
        return InhomogeneousElement.from_arrays(
            self.n, self.variance, add_parts(self.arrays(), other.arrays())
        )

    def __sub__(self, other):
        return self + (-1.0) * other

    def __mul__(self, c):
        return InhomogeneousElement.from_arrays(self.n, self.variance, scale_parts(self.arrays(), c))

    __rmul__ = __mul__

    def norm(self) -> float:
        """Max-norm over all coefficients."""
        vals = [np.max(np.abs(p.coeffs)) for p in self.parts.values() if p.coeffs.size]
        return float(max(vals, default=0.0))


def as_inhomogeneous(x) -> InhomogeneousElement:
    if isinstance(x, InhomogeneousElement):
        return x
    return InhomogeneousElement(x.n, x.variance, {x.k: x})


# ---------------------------------------------------------------------------
# operations


def wedge(a, b):
    """Graded-commutative product of two homogeneous or inhomogeneous elements."""
    _same_space(a, b)
    if isinstance(a, GradedCoefficients) and isinstance(b, GradedCoefficients):
        if a.k + b.k > a.n:
            raise InvalidOperandError(f"degree {a.k + b.k} exceeds dimension {a.n}")
        return GradedCoefficients(
            a.n, a.k + b.k, a.variance, wedge_arrays(a.coeffs, a.k, b.coeffs, b.k, a.n)
        )
    a, b = as_inhomogeneous(a), as_inhomogeneous(b)
    return InhomogeneousElement.from_arrays(
        a.n, a.variance, wedge_parts(a.arrays(), b.arrays(), a.n)
    )


def pair(alpha: GradedCoefficients, P: GradedCoefficients):
    """Canonical pairing ``<alpha, P>`` of a k-form with a k-vector."""
    if alpha.variance != FORM or P.variance != VECTOR:
        raise InvalidOperandError("pair expects (form, multivector)")
    if alpha.n != P.n or alpha.k != P.k:
        raise InvalidOperandError(
            f"pairing needs equal degree and dimension, got {alpha.k}/{alpha.n} and {P.k}/{P.n}"
        )
    return alpha.coeffs @ P.coeffs


def _contract_args(outer, inner, side):
    if outer.n != inner.n:
        raise InvalidOperandError(f"dimension mismatch: {outer.n} vs {inner.n}")
    if outer.variance == inner.variance:
        raise InvalidOperandError(f"{side} contraction needs opposite variances")
    if inner.k < outer.k:
        raise InvalidOperandError(f"degree underflow: {inner.k} - {outer.k} < 0")


def contract_left(P: GradedCoefficients, alpha: GradedCoefficients) -> GradedCoefficients:
    """``P |_ alpha``: contraction of the first slots (composite interior product).

    Works for a multivector into a form and, symmetrically, a form into a
    multivector.
    """
    _contract_args(P, alpha, "left")
    out = left_contract_arrays(P.coeffs, P.k, alpha.coeffs, alpha.k, P.n)
    return GradedCoefficients(P.n, alpha.k - P.k, alpha.variance, out)


def contract_right(alpha: GradedCoefficients, P: GradedCoefficients) -> GradedCoefficients:
    """``alpha _| P`` defined by ``<alpha _| P, Q> = <alpha, P ^ Q>``."""
    _contract_args(P, alpha, "right")
    out = right_contract_arrays(alpha.coeffs, alpha.k, P.coeffs, P.k, P.n)
    return GradedCoefficients(P.n, alpha.k - P.k, alpha.variance, out)


def exp_nilpotent(x: InhomogeneousElement, scalar_part=0.0) -> InhomogeneousElement:
    x = as_inhomogeneous(x)
    if 0 in x.parts and np.any(x.parts[0].coeffs != 0):
        raise InvalidOperandError("pass the degree-0 part as scalar_part")
    arrays = {k: v for k, v in x.arrays().items() if k != 0}
    return InhomogeneousElement.from_arrays(
        x.n, x.variance, exp_nilpotent_parts(arrays, x.n, scalar_part)
    )


# ---------------------------------------------------------------------------
# skew matrices


def pfaffian(A, tol=1e-10) -> float:
    """Pfaffian by recursive expansion along the first row (size <= 6)."""
    A = np.asarray(A)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise InvalidOperandError(f"pfaffian needs a square matrix, got {A.shape}")
    size = A.shape[0]
    if size % 2:
        raise InvalidOperandError(f"pfaffian of odd size {size}")
    if size > 2 * (MAX_DIM // 2):
        raise InvalidOperandError(f"size {size} exceeds {MAX_DIM}")
    scale = max(1.0, float(np.max(np.abs(A)))) if size else 1.0
    if size and np.max(np.abs(A + A.T)) / 2 > tol * scale:
        raise InvalidOperandError("matrix is not skew-symmetric within tolerance")
    return _pf((A - A.T) / 2)


def _pf(A):
    size = A.shape[0]
    if size == 0:
        return 1.0
    total = 0.0
    for j in range(1, size):
        if A[0, j] == 0:
            continue
        keep = [i for i in range(size) if i not in (0, j)]
        total += (-1) ** (j + 1) * A[0, j] * _pf(A[np.ix_(keep, keep)])
    return total


def two_form_to_matrix(coeffs, n):
    """Antisymmetric matrix ``M`` with ``beta = sum_{i<j} M_ij e^i ^ e^j``."""
    xp = _xp(coeffs)
    M = xp.zeros((n, n), dtype=coeffs.dtype)
    rows = [c[0] for c in combos(n, 2)]
    cols = [c[1] for c in combos(n, 2)]
    if xp is np:
        M[rows, cols] = coeffs
        M[cols, rows] = -coeffs
        return M
    return M.at[rows, cols].set(coeffs).at[cols, rows].set(-coeffs)


def matrix_to_two_form(M, n):
    """Reduced coefficients of an antisymmetric matrix (upper triangle)."""
    xp = _xp(M)
    rows = np.array([c[0] for c in combos(n, 2)], dtype=int)
    cols = np.array([c[1] for c in combos(n, 2)], dtype=int)
    return xp.asarray(M)[..., rows, cols]


def symplectic_inverse(omega_coeffs, n):
    """Bivector ``pi^{ij} = (omega^{-1})^{ij}`` (plain matrix inverse)."""
    xp = _xp(omega_coeffs)
    M = two_form_to_matrix(omega_coeffs, n)
    return matrix_to_two_form(xp.linalg.inv(M), n)

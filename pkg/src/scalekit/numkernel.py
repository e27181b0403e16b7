"""Precision-controlled dense real linear algebra.

Matrices are numpy object arrays whose entries are ``gmpy2.mpfr`` values.
All arithmetic happens inside a gmpy2 context whose mantissa is wide enough
for the requested number of significant decimal digits.
"""

from __future__ import annotations

import contextvars
import hashlib
import math
from contextlib import contextmanager
from fractions import Fraction

import gmpy2
import numpy as np
from gmpy2 import mpfr

from .errors import DimensionMismatch, SingularMatrix

DEFAULT_DIGITS = 30

_digits = contextvars.ContextVar("scalekit_digits", default=DEFAULT_DIGITS)


def digits_to_bits(digits: int) -> int:
    return math.ceil(digits * math.log2(10))


def current_digits() -> int:
    """Working precision P in decimal digits."""
    return _digits.get()


@contextmanager
def working_precision(digits: int | None = None):
    """Run the enclosed block with P = ``digits`` significant decimal digits."""
    digits = current_digits() if digits is None else int(digits)
    if digits < 5:
        raise ValueError(f"precision must be at least 5 digits, got {digits}")
    token = _digits.set(digits)
    try:
        with gmpy2.context(gmpy2.get_context(), precision=digits_to_bits(digits)):
            yield digits
    finally:
        _digits.reset(token)


def _install_default():
    gmpy2.get_context().precision = digits_to_bits(DEFAULT_DIGITS)


_install_default()


def big(x) -> mpfr:
    """Convert a number or decimal string to an mpfr at working precision."""
    if isinstance(x, Fraction):
        return mpfr(x.numerator) / mpfr(x.denominator)
    if isinstance(x, str):
        return mpfr(x.strip())
    if isinstance(x, (np.integer, np.floating)):
        x = x.item()
    return mpfr(x)


def eps(power: float = 1.0) -> mpfr:
    """Return 10^(-power * P)."""
    return mpfr(10) ** (-power * current_digits())


def tol(offset: int) -> mpfr:
    """Return 10^(offset - P), the shape of most tolerances in the library.

    At low precision the exponent is capped at -P/2 so a tolerance never
    swallows the quantity it guards.
    """
    p = current_digits()
    return mpfr(10) ** (-max(p - offset, p / 2))


def matrix(rows) -> np.ndarray:
    """Build a 2-D object array of mpfr entries."""
    a = np.asarray(rows, dtype=object)
    if a.ndim != 2:
        raise DimensionMismatch(f"expected a 2-D array, got {a.ndim} dimensions")
    if a.shape[0] == 0 or a.shape[1] == 0:
        raise DimensionMismatch(f"matrix dimensions must be positive, got {a.shape}")
    out = np.empty(a.shape, dtype=object)
    for idx, v in np.ndenumerate(a):
        out[idx] = big(v)
    return out


def vector(values) -> np.ndarray:
    a = np.asarray(values, dtype=object)
    if a.ndim != 1:
        raise DimensionMismatch(f"expected a 1-D array, got {a.ndim} dimensions")
    out = np.empty(a.shape, dtype=object)
    for i, v in enumerate(a):
        out[i] = big(v)
    return out


def zeros(rows: int, cols: int | None = None) -> np.ndarray:
    cols = rows if cols is None else cols
    out = np.empty((rows, cols), dtype=object)
    out.fill(mpfr(0))
    return out


def zeros_vec(n: int) -> np.ndarray:
    out = np.empty(n, dtype=object)
    out.fill(mpfr(0))
    return out


def ones_vec(n: int) -> np.ndarray:
    out = np.empty(n, dtype=object)
    out.fill(mpfr(1))
    return out


def eye(n: int) -> np.ndarray:
    out = zeros(n)
    for i in range(n):
        out[i, i] = mpfr(1)
    return out


def diag(v) -> np.ndarray:
    v = np.asarray(v, dtype=object)
    out = zeros(len(v))
    for i, x in enumerate(v):
        out[i, i] = big(x)
    return out


def as_float(a) -> np.ndarray | float:
    if isinstance(a, np.ndarray):
        return np.vectorize(float, otypes=[float])(a) if a.size else a.astype(float)
    return float(a)


def mat_norm_inf(m: np.ndarray) -> mpfr:
    """Maximum absolute row sum."""
    m = np.asarray(m, dtype=object)
    if m.ndim == 1:
        return max((abs(x) for x in m), default=mpfr(0))
    if m.size == 0:
        return mpfr(0)
    return max(sum((abs(x) for x in row), mpfr(0)) for row in m)


def _require_square(m: np.ndarray):
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise DimensionMismatch(f"expected a square matrix, got shape {m.shape}")


def lu_factor(m: np.ndarray):
    """LU factorization with partial pivoting.

    Returns ``(lu, perm)`` with ``m[perm] = L @ U``; the unit lower factor and
    the upper factor share storage in ``lu``.
    """
    _require_square(m)
    n = m.shape[0]
    a = np.array(m, dtype=object, copy=True)
    col_scale = [max(abs(x) for x in a[:, j]) for j in range(n)]
    threshold = tol(10)
    perm = np.arange(n)
    for j in range(n):
        col = [abs(x) for x in a[j:, j]]
        p = j + max(range(len(col)), key=col.__getitem__)
        if col_scale[j] == 0 or abs(a[p, j]) < threshold * col_scale[j]:
            raise SingularMatrix(f"pivot {j} is negligible relative to its column")
        if p != j:
            a[[j, p]] = a[[p, j]]
            perm[[j, p]] = perm[[p, j]]
        if j + 1 < n:
            a[j + 1:, j] = a[j + 1:, j] / a[j, j]
            a[j + 1:, j + 1:] -= np.outer(a[j + 1:, j], a[j, j + 1:])
    return a, perm


def lu_solve(factor, b: np.ndarray) -> np.ndarray:
    """Solve ``m x = b`` given ``factor = lu_factor(m)``; ``b`` may be a vector or matrix."""
    lu, perm = factor
    n = lu.shape[0]
    b = np.asarray(b, dtype=object)
    if b.shape[0] != n:
        raise DimensionMismatch(f"right-hand side has {b.shape[0]} rows, expected {n}")
    x = np.array(b[perm], dtype=object, copy=True)
    for i in range(1, n):
        x[i] = x[i] - lu[i, :i] @ x[:i]
    for i in range(n - 1, -1, -1):
        if i + 1 < n:
            x[i] = x[i] - lu[i, i + 1:] @ x[i + 1:]
        x[i] = x[i] / lu[i, i]
    return x


def solve(m: np.ndarray, b: np.ndarray) -> np.ndarray:
    return lu_solve(lu_factor(m), b)


def solve_left(b: np.ndarray, m: np.ndarray) -> np.ndarray:
    """Solve ``x m = b`` for a row vector (or stacked rows) ``x``."""
    return solve(m.T, np.asarray(b, dtype=object).T).T


def mat_inverse(m: np.ndarray) -> np.ndarray:
    """Inverse through LU with partial pivoting."""
    m = np.asarray(m, dtype=object)
    _require_square(m)
    return lu_solve(lu_factor(m), eye(m.shape[0]))


def mat_exp(m: np.ndarray) -> np.ndarray:
    """Matrix exponential by scaling and squaring around a Taylor series.

    The series stops once a term's norm drops below 10^-P of the partial sum.
    """
    m = np.asarray(m, dtype=object)
    _require_square(m)
    n = m.shape[0]
    norm = mat_norm_inf(m)
    squarings = 0
    if norm > mpfr("0.5"):
        squarings = int(math.ceil(math.log2(float(norm)))) + 1
    a = m / (mpfr(2) ** squarings)
    total = eye(n)
    term = eye(n)
    threshold = eps()
    k = 1
    while True:
        term = (term @ a) / k
        total = total + term
        if mat_norm_inf(term) <= threshold * mat_norm_inf(total):
            break
        k += 1
    for _ in range(squarings):
        total = total @ total
    return total


def fingerprint(*arrays) -> str:
    """Content hash of mpfr arrays, including the working precision."""
    h = hashlib.sha256()
    h.update(str(gmpy2.get_context().precision).encode())
    for a in arrays:
        a = np.asarray(a, dtype=object)
        h.update(repr(a.shape).encode())
        for x in a.flat:
            h.update(repr(big(x).digits(16)).encode())
        h.update(b";")
    return h.hexdigest()


def fmt(x, digits: int | None = None) -> str:
    """Decimal string with ``digits`` significant digits (default P)."""
    digits = current_digits() if digits is None else digits
    if isinstance(x, float) and math.isinf(x):
        return "Infinity"
    x = big(x)
    if gmpy2.is_infinite(x):
        return "Infinity" if x > 0 else "-Infinity"
    if x == 0:
        return "0"
    return format(x, f".{digits}g")

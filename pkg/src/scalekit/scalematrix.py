"""Scale matrix W, its right derivative and its running integral.

W(x) is evaluated as a double series over the number of arrivals k and the
power n, with coefficient matrices V(n, k) built by the recursion

    V(0, 1) = I,  V(0, k) = 0 for k > 1,
    V(n, k) = T V(n-1, k) + B V(n-1, k-1).

V(n, k) is the top-right block of the n-th power of the staged matrix with T
on the diagonal and B on the superdiagonal (k blocks), so no matrix of
dimension n*k is ever formed outside the validation oracle.
"""

from __future__ import annotations

import math
import threading
import warnings
from collections import OrderedDict
from dataclasses import dataclass
from itertools import combinations_with_replacement

import gmpy2
import numpy as np
from gmpy2 import mpfr

from . import numkernel as nk
from .errors import DimensionMismatch, EmptySupport, NegativeArgument, TruncationWarning
from .modelbuild import Deterministic, FiniteDiscrete, MapModel

DEFAULT_NMAX = 100
ORACLE_MAX_DIM = 64


def _block_ops(m: np.ndarray, sizes):
    """Nonzero blocks of ``m`` under the partition ``sizes`` as (rows, cols, block)."""
    edges = np.concatenate([[0], np.cumsum(sizes)]).astype(int)
    ops = []
    for a in range(len(sizes)):
        rs = slice(edges[a], edges[a + 1])
        for b in range(len(sizes)):
            cs = slice(edges[b], edges[b + 1])
            block = m[rs, cs]
            if any(x != 0 for x in block.flat):
                ops.append((rs, cs, np.array(block, dtype=object)))
    return ops


def _apply(ops, x: np.ndarray, n: int) -> np.ndarray:
    out = nk.zeros(n, x.shape[1])
    for rs, cs, block in ops:
        out[rs] += block @ x[cs]
    return out


class VTable:
    """Lazily extended table of V(n, k) for 0 <= n <= n_max.

    Column k (all n) is computed from column k - 1, so extending k_max never
    recomputes existing entries. Products with T and B exploit the block
    structure of the model when ``block_sizes`` is given.
    """

    def __init__(self, T: np.ndarray, B: np.ndarray, n_max: int = DEFAULT_NMAX, block_sizes=None):
        T = np.asarray(T, dtype=object)
        B = np.asarray(B, dtype=object)
        if T.ndim != 2 or T.shape[0] != T.shape[1]:
            raise DimensionMismatch(f"T must be square, got {T.shape}")
        if B.shape != T.shape:
            raise DimensionMismatch(f"B has shape {B.shape}, T has shape {T.shape}")
        if n_max < 0:
            raise ValueError("n_max must be nonnegative")
        self.T = T
        self.B = B
        self.n_max = int(n_max)
        self.dim = T.shape[0]
        sizes = tuple(block_sizes) if block_sizes else (self.dim,)
        if sum(sizes) != self.dim:
            raise DimensionMismatch(f"block sizes {sizes} do not add up to {self.dim}")
        self._t_ops = _block_ops(T, sizes)
        self._b_ops = _block_ops(B, sizes)
        self._columns: list[list] = []
        self._lock = threading.Lock()

    @property
    def k_max(self) -> int:
        return len(self._columns)

    def extend(self, k_max: int) -> "VTable":
        with self._lock:
            while len(self._columns) < k_max:
                self._columns.append(self._next_column())
        return self

    def _next_column(self):
        n, k = self.dim, len(self._columns) + 1
        col = [None] * (self.n_max + 1)
        if k == 1:
            col[0] = nk.eye(n)
            for i in range(1, self.n_max + 1):
                col[i] = _apply(self._t_ops, col[i - 1], n)
            return col
        prev = self._columns[-1]
        for i in range(k - 1, self.n_max + 1):
            value = _apply(self._b_ops, prev[i - 1], n)
            if col[i - 1] is not None:
                value += _apply(self._t_ops, col[i - 1], n)
            col[i] = value
        return col

    def column(self, k: int):
        """List of V(n, k) for n = 0..n_max, with None for structural zeros."""
        self.extend(k)
        return self._columns[k - 1]

    def __getitem__(self, nk_pair):
        n, k = nk_pair
        if n < 0 or n > self.n_max or k < 1:
            raise IndexError(f"V({n}, {k}) is outside the table")
        v = self.column(k)[n]
        return nk.zeros(self.dim) if v is None else v


def vtable_build(T, B, n_max: int = DEFAULT_NMAX, k_max: int = 1, block_sizes=None) -> VTable:
    """Full V-table for 0 <= n <= n_max, 1 <= k <= k_max."""
    return VTable(T, B, n_max, block_sizes).extend(k_max)


_CACHE: OrderedDict = OrderedDict()
_CACHE_SIZE = 6
_CACHE_LOCK = threading.Lock()


def cached_vtable(model: MapModel, n_max: int) -> VTable:
    """V-table shared by all evaluations on the same (T, B, n_max, precision)."""
    key = (nk.fingerprint(model.T, model.B), n_max, tuple(model.block_sizes))
    with _CACHE_LOCK:
        table = _CACHE.get(key)
        if table is None:
            table = VTable(model.T, model.B, n_max, model.block_sizes or None)
            _CACHE[key] = table
            while len(_CACHE) > _CACHE_SIZE:
                _CACHE.popitem(last=False)
        else:
            _CACHE.move_to_end(key)
    return table


def clear_cache():
    with _CACHE_LOCK:
        _CACHE.clear()


@dataclass(frozen=True, eq=False)
class ScaleEval:
    x: object
    W: np.ndarray
    Wprime: np.ndarray
    Wbar: np.ndarray
    n_max_used: int
    k_terms_used: int
    precision: int
    tail_ratio: object
    truncated: bool
    right_limit_at_origin: bool = False


def _lattice_floor(x, c):
    """floor(x / c), snapping to an integer within relative 10^(-P/2)."""
    ratio = x / c
    nearest = int(gmpy2.rint(ratio))
    if abs(ratio - nearest) <= nk.eps(0.5) * max(mpfr(1), abs(ratio)):
        return nearest, True
    return int(gmpy2.floor(ratio)), False


def jump_sum_law(jump_law, count: int, x=None):
    """Atoms (y, P(S = y)) of the sum of ``count`` jumps, restricted to y <= x.

    Equal sums are merged; a sum within relative 10^(-P/2) of ``x`` is snapped
    onto ``x``.
    """
    atoms = jump_law.atoms
    snap = nk.eps(0.5)
    merged: dict = {}
    for combo in combinations_with_replacement(range(len(atoms)), count):
        counts = [combo.count(j) for j in range(len(atoms))]
        y = sum((atoms[j][0] * counts[j] for j in range(len(atoms))), mpfr(0))
        if x is not None:
            if abs(y - x) <= snap * max(mpfr(1), abs(x)):
                y = x
            elif y > x:
                continue
        weight = mpfr(math.factorial(count))
        for j, cnt in enumerate(counts):
            weight = weight * atoms[j][1] ** cnt / math.factorial(cnt)
        if weight == 0:
            continue
        key = y
        for existing in merged:
            if abs(existing - y) <= snap * max(mpfr(1), abs(y)):
                key = existing
                break
        merged[key] = merged.get(key, mpfr(0)) + weight
    return sorted(merged.items())


def _terms_deterministic(law: Deterministic, x):
    m, on_lattice = _lattice_floor(x, law.c)
    terms = []
    for k in range(1, m + 2):
        y = x if (on_lattice and k == m + 1) else law.c * (k - 1)
        terms.append((k, [(y, mpfr(1))]))
    return terms


def _terms_discrete(law: FiniteDiscrete, x):
    terms = []
    k = 1
    while True:
        atoms = jump_sum_law(law, k - 1, x)
        if not atoms:
            break
        terms.append((k, atoms))
        k += 1
    return terms


def _evaluate(model: MapModel, x, n_max: int, terms, parts, warn: bool = True) -> ScaleEval:
    gamma = model.gamma
    n = model.dim
    table = cached_vtable(model, n_max)
    table.extend(len(terms))
    out = {p: nk.zeros(n) for p in parts}
    last = {p: mpfr(0) for p in parts}
    inv_gamma = 1 / gamma
    inv_gamma2 = inv_gamma * inv_gamma
    for k, atoms in terms:
        # power-series coefficients s^j / j!, j = 0..n_max+1, summed over atoms
        coef = [mpfr(0)] * (n_max + 2)
        for y, p in atoms:
            s = (y - x) / gamma
            c = mpfr(1)
            for j in range(n_max + 2):
                coef[j] += p * c
                c = c * s / (j + 1)
        col = table.column(k)
        for i in range(k - 1, n_max + 1):
            v = col[i]
            if v is None:
                continue
            if "W" in out:
                out["W"] += (coef[i] * inv_gamma) * v
            if "Wbar" in out:
                out["Wbar"] -= coef[i + 1] * v
            if "Wprime" in out and i >= 1:
                out["Wprime"] -= (coef[i - 1] * inv_gamma2) * v
        v = col[n_max]
        if v is not None:
            vn = nk.mat_norm_inf(v)
            tails = {"W": abs(coef[n_max]) * inv_gamma, "Wbar": abs(coef[n_max + 1]),
                     "Wprime": abs(coef[n_max - 1]) * inv_gamma2 if n_max >= 1 else mpfr(0)}
            for p in parts:
                last[p] = max(last[p], tails[p] * vn)
    ratio = mpfr(0)
    for p in parts:
        total = nk.mat_norm_inf(out[p])
        if total > 0:
            ratio = max(ratio, last[p] / total)
    truncated = ratio > nk.eps(0.5)
    if truncated and warn:
        warnings.warn(
            f"series tail at n_max={n_max} is {nk.fmt(ratio, 3)} of the sum at x={nk.fmt(x, 10)}",
            TruncationWarning, stacklevel=3)
    return ScaleEval(
        x=x, W=out.get("W"), Wprime=out.get("Wprime"), Wbar=out.get("Wbar"),
        n_max_used=n_max, k_terms_used=len(terms), precision=nk.current_digits(),
        tail_ratio=ratio, truncated=bool(truncated), right_limit_at_origin=(x == 0),
    )


ALL_PARTS = ("W", "Wprime", "Wbar")


def _check_x(x):
    x = nk.big(x)
    if x < 0:
        raise NegativeArgument(f"scale matrix needs x >= 0, got {nk.fmt(x, 12)}")
    return x


def scale_eval_deterministic(model: MapModel, x, n_max: int = DEFAULT_NMAX, parts=ALL_PARTS) -> ScaleEval:
    """W, W'+ and Wbar at ``x`` for jumps of constant size c."""
    if not isinstance(model.jump_law, Deterministic):
        raise TypeError("scale_eval_deterministic needs a Deterministic jump law")
    x = _check_x(x)
    return _evaluate(model, x, n_max, _terms_deterministic(model.jump_law, x), parts)


def scale_eval_discrete_jumps(model: MapModel, x, n_max: int = DEFAULT_NMAX, parts=ALL_PARTS) -> ScaleEval:
    """W, W'+ and Wbar at ``x`` for a finitely supported jump-size law."""
    law = model.jump_law
    if not isinstance(law, FiniteDiscrete):
        raise TypeError("scale_eval_discrete_jumps needs a FiniteDiscrete jump law")
    if any(not c > 0 for c, _ in law.atoms):
        raise EmptySupport("jump sizes must be positive")
    x = _check_x(x)
    return _evaluate(model, x, n_max, _terms_discrete(law, x), parts)


def scale_eval(model: MapModel, x, n_max: int = DEFAULT_NMAX, parts=ALL_PARTS) -> ScaleEval:
    if isinstance(model.jump_law, Deterministic):
        return scale_eval_deterministic(model, x, n_max, parts)
    return scale_eval_discrete_jumps(model, x, n_max, parts)


REFINE_STEPS = 2


def scale_eval_refined(model: MapModel, x, n_max: int = DEFAULT_NMAX, parts=ALL_PARTS) -> ScaleEval:
    """Like scale_eval, but doubles the order (at most twice) while the series
    tail is above 10^-P.

    The passage formulas multiply by inverses of scale matrices that grow
    quickly in x, which magnifies a tail that is negligible for W itself.
    """
    x = _check_x(x)
    if isinstance(model.jump_law, Deterministic):
        terms = _terms_deterministic(model.jump_law, x)
    else:
        if any(not c > 0 for c, _ in model.jump_law.atoms):
            raise EmptySupport("jump sizes must be positive")
        terms = _terms_discrete(model.jump_law, x)
    for step in range(REFINE_STEPS + 1):
        last = step == REFINE_STEPS
        ev = _evaluate(model, x, n_max, terms, parts, warn=False)
        if ev.tail_ratio <= nk.eps(1) or last:
            break
        n_max *= 2
    if ev.truncated:
        warnings.warn(
            f"series tail at n_max={n_max} is {nk.fmt(ev.tail_ratio, 3)} of the sum at x={nk.fmt(x, 10)}",
            TruncationWarning, stacklevel=2)
    return ev


def matrix_exponent(model: MapModel, s) -> np.ndarray:
    """F(s) = gamma s I + T + E[exp(-s C)] B."""
    s = nk.big(s)
    if s < 0:
        raise NegativeArgument(f"matrix exponent needs s >= 0, got {nk.fmt(s, 12)}")
    return model.gamma * s * nk.eye(model.dim) + model.T + model.jump_law.laplace(s) * model.B


def staged_matrix(T, B, k: int) -> np.ndarray:
    """k-by-k block matrix with T on the diagonal and B on the superdiagonal."""
    n = T.shape[0]
    out = nk.zeros(n * k)
    for i in range(k):
        out[i * n:(i + 1) * n, i * n:(i + 1) * n] = T
        if i + 1 < k:
            out[i * n:(i + 1) * n, (i + 1) * n:(i + 2) * n] = B
    return out


def direct_block_exponential(T, B, k: int, t) -> np.ndarray:
    """Top-right block of exp(t * staged_matrix(T, B, k)); validation only."""
    n = T.shape[0]
    if n * k > ORACLE_MAX_DIM:
        raise DimensionMismatch(f"staged dimension {n * k} exceeds {ORACLE_MAX_DIM}")
    e = nk.mat_exp(staged_matrix(T, B, k) * nk.big(t))
    return e[:n, (k - 1) * n:]


def norm_bound(model: MapModel, x):
    """(1/gamma) exp(r x / gamma) sum_k P(S_{k-1} <= x) with r = |T| + |B|."""
    x = nk.big(x)
    r = nk.mat_norm_inf(model.T) + nk.mat_norm_inf(model.B)
    law = model.jump_law
    if isinstance(law, Deterministic):
        mass = mpfr(_lattice_floor(x, law.c)[0] + 1)
    else:
        mass = sum((sum((p for _, p in atoms), mpfr(0)) for _, atoms in _terms_discrete(law, x)), mpfr(0))
    return gmpy2.exp(r * x / model.gamma) * mass / model.gamma

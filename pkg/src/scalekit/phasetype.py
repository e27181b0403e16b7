"""Phase-type laws: validation, density, cumulant, exponential tilting and sampling."""

from __future__ import annotations

from dataclasses import dataclass

import gmpy2
import numpy as np

from . import numkernel as nk
from .errors import (
    DimensionMismatch,
    NegativeArgument,
    SingularMatrix,
    ThetaOutOfRange,
    ValidationError,
)


@dataclass(frozen=True, eq=False)
class PhaseTypeDist:
    """Absorption time of a finite Markov chain with initial row ``alpha``,
    sub-intensity ``T``, exit rates ``t`` and kill rates ``q``."""

    alpha: np.ndarray
    T: np.ndarray
    t: np.ndarray
    q: np.ndarray

    @classmethod
    def from_arrays(cls, alpha, T, q=None, t=None) -> "PhaseTypeDist":
        """Convert and validate; ``t`` defaults to ``-T 1 - q``."""
        alpha = nk.vector(alpha)
        T = nk.matrix(T)
        n = len(alpha)
        if T.shape != (n, n):
            raise DimensionMismatch(f"T has shape {T.shape}, expected ({n}, {n})")
        q = nk.zeros_vec(n) if q is None else nk.vector(q)
        if len(q) != n:
            raise DimensionMismatch(f"q has length {len(q)}, expected {n}")
        t = -T.sum(axis=1) - q if t is None else nk.vector(t)
        if len(t) != n:
            raise DimensionMismatch(f"t has length {len(t)}, expected {n}")
        d = cls(alpha, T, t, q)
        validate(d)
        return d

    @property
    def n_phases(self) -> int:
        return len(self.alpha)

    @property
    def is_defective(self) -> bool:
        return any(x != 0 for x in self.q)

    def mean(self):
        """E[X] = alpha (-T)^-1 1 for a non-defective law."""
        return self.alpha @ nk.solve(-self.T, nk.ones_vec(self.n_phases))

    def to_json(self) -> dict:
        out = {
            "alpha": [nk.fmt(x) for x in self.alpha],
            "T": [[nk.fmt(x) for x in row] for row in self.T],
        }
        if self.is_defective:
            out["q"] = [nk.fmt(x) for x in self.q]
        return out


@dataclass(frozen=True, eq=False)
class TiltResult:
    kappa: object
    tilted: PhaseTypeDist


def validate(d: PhaseTypeDist) -> None:
    """Raise ValidationError unless every invariant of ``d`` holds."""
    n = d.n_phases
    if n == 0:
        raise ValidationError("a phase-type law needs at least one phase", "n_phases")
    tol = nk.tol(10)
    for i, a in enumerate(d.alpha):
        if a < -tol:
            raise ValidationError(f"alpha[{i}] = {nk.fmt(a, 8)} is negative", "alpha >= 0", ("alpha", i))
    total = sum(d.alpha, gmpy2.mpfr(0))
    if abs(total - 1) > tol:
        raise ValidationError(f"alpha sums to {nk.fmt(total, 12)}, expected 1", "sum(alpha) = 1", ("alpha",))
    for i in range(n):
        if not d.T[i, i] < 0:
            raise ValidationError(f"T[{i}][{i}] = {nk.fmt(d.T[i, i], 8)} is not strictly negative",
                                  "diag(T) < 0", ("T", i, i))
        for j in range(n):
            if i != j and d.T[i, j] < -tol:
                raise ValidationError(f"T[{i}][{j}] = {nk.fmt(d.T[i, j], 8)} is a negative off-diagonal rate",
                                      "offdiag(T) >= 0", ("T", i, j))
    for name, vec in (("t", d.t), ("q", d.q)):
        for i, x in enumerate(vec):
            if x < -tol:
                raise ValidationError(f"{name}[{i}] = {nk.fmt(x, 8)} is negative", f"{name} >= 0", (name, i))
    residual = d.T.sum(axis=1) + d.t + d.q
    for i, r in enumerate(residual):
        if abs(r) > tol:
            raise ValidationError(f"row {i} of T 1 + t + q is {nk.fmt(r, 8)}, expected 0",
                                  "T 1 + t + q = 0", ("T", i))


def _tilt_resolvent(d: PhaseTypeDist, theta):
    """Return (-(T + theta I))^-1, rejecting theta at or past the abscissa."""
    theta = nk.big(theta)
    n = d.n_phases
    m = -(d.T + theta * nk.eye(n))
    try:
        inv = nk.mat_inverse(m)
    except SingularMatrix as exc:
        raise ThetaOutOfRange(f"-(T + theta I) is singular at theta = {nk.fmt(theta, 12)}", "theta < abscissa") from exc
    scale = nk.mat_norm_inf(inv)
    tol = nk.tol(10) * scale
    for (i, j), x in np.ndenumerate(inv):
        if x < -tol:
            raise ThetaOutOfRange(
                f"theta = {nk.fmt(theta, 12)} lies beyond the MGF abscissa "
                f"(resolvent entry [{i}][{j}] = {nk.fmt(x, 8)} is negative)", "theta < abscissa", (i, j))
    return inv


def mgf_kappa(d: PhaseTypeDist, theta):
    """Cumulant log E[exp(theta X)] = log(alpha (-(T + theta I))^-1 t)."""
    h = _tilt_resolvent(d, theta) @ d.t
    value = d.alpha @ h
    if not value > 0:
        raise ThetaOutOfRange(f"MGF at theta = {nk.fmt(theta, 12)} is not positive", "theta < abscissa")
    return gmpy2.log(value)


def tilt(d: PhaseTypeDist, theta) -> TiltResult:
    """Exponentially tilted law with density exp(theta x - kappa) f(x).

    Uses the diagonal similarity transform by h = (-(T + theta I))^-1 t.
    """
    theta = nk.big(theta)
    h = _tilt_resolvent(d, theta) @ d.t
    if any(not x > 0 for x in h):
        raise ThetaOutOfRange("some phase cannot reach absorption; the tilt is undefined", "h > 0")
    n = d.n_phases
    shifted = d.T + theta * nk.eye(n)
    T_hat = nk.zeros(n)
    for i in range(n):
        for j in range(n):
            T_hat[i, j] = shifted[i, j] * h[j] / h[i]
    t_hat = np.array([d.t[i] / h[i] for i in range(n)], dtype=object)
    mass = d.alpha @ h
    alpha_hat = np.array([d.alpha[i] * h[i] / mass for i in range(n)], dtype=object)
    tilted = PhaseTypeDist(alpha_hat, T_hat, t_hat, nk.zeros_vec(n))
    validate(tilted)
    return TiltResult(gmpy2.log(mass), tilted)


def density(d: PhaseTypeDist, x):
    """alpha exp(T x) t."""
    x = nk.big(x)
    if x < 0:
        raise NegativeArgument(f"density needs x >= 0, got {nk.fmt(x, 12)}")
    return d.alpha @ (nk.mat_exp(d.T * x) @ d.t)


def cdf(d: PhaseTypeDist, x):
    """P(absorbed through t by time x); killed mass never counts."""
    x = nk.big(x)
    if x < 0:
        raise NegativeArgument(f"cdf needs x >= 0, got {nk.fmt(x, 12)}")
    n = d.n_phases
    # integral of alpha e^{Ty} t over [0, x] = alpha T^-1 (e^{Tx} - I) t
    rhs = (nk.mat_exp(d.T * x) - nk.eye(n)) @ d.t
    return d.alpha @ nk.solve(d.T, rhs)


class PhaseSampler:
    """Vectorised absorption-time sampler over one or more non-defective laws.

    Phases of all laws share a global index so a batch of draws can mix laws.
    """

    def __init__(self, laws):
        laws = list(laws)
        for d in laws:
            if d.is_defective:
                raise ValidationError("cannot sample a defective phase-type law", "q = 0")
        sizes = [d.n_phases for d in laws]
        self.offsets = np.concatenate([[0], np.cumsum(sizes)]).astype(np.int64)
        total = int(self.offsets[-1])
        self.rates = np.empty(total)
        # row g: cumulative probabilities over [global phases..., absorb]
        self.jump_cdf = np.zeros((total, total + 1))
        self.start_cdf = []
        for k, d in enumerate(laws):
            off = int(self.offsets[k])
            T = nk.as_float(d.T)
            t = nk.as_float(d.t)
            n = d.n_phases
            for i in range(n):
                rate = -T[i, i]
                row = np.zeros(total + 1)
                row[off:off + n] = np.maximum(T[i], 0.0) / rate
                row[off + i] = 0.0
                row[total] = max(t[i], 0.0) / rate
                row /= row.sum()
                self.jump_cdf[off + i] = np.cumsum(row)
                self.rates[off + i] = rate
            alpha = np.maximum(nk.as_float(d.alpha), 0.0)
            self.start_cdf.append(np.cumsum(alpha / alpha.sum()))
        self.absorb = total

    def draw(self, law_index, rng: np.random.Generator) -> np.ndarray:
        """One absorption time per entry of ``law_index``."""
        law_index = np.asarray(law_index, dtype=np.int64)
        size = law_index.shape[0]
        phase = np.empty(size, dtype=np.int64)
        u = rng.random(size)
        for k in np.unique(law_index):
            sel = law_index == k
            local = np.searchsorted(self.start_cdf[k], u[sel], side="right")
            phase[sel] = self.offsets[k] + np.minimum(local, len(self.start_cdf[k]) - 1)
        times = np.zeros(size)
        live = np.arange(size)
        while live.size:
            p = phase[live]
            times[live] += rng.exponential(1.0, live.size) / self.rates[p]
            u = rng.random(live.size)
            cdf_rows = self.jump_cdf[p]
            nxt = (cdf_rows <= u[:, None]).sum(axis=1)
            nxt = np.minimum(nxt, self.absorb)
            phase[live] = nxt
            live = live[nxt != self.absorb]
        return times


def sample(d: PhaseTypeDist, rng_seed, size: int | None = None):
    """Draw absorption times of ``d``; reproducible for a given integer seed."""
    rng = rng_seed if isinstance(rng_seed, np.random.Generator) else np.random.default_rng(rng_seed)
    sampler = PhaseSampler([d])
    n = 1 if size is None else int(size)
    draws = sampler.draw(np.zeros(n, dtype=np.int64), rng)
    return float(draws[0]) if size is None else draws

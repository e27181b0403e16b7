"""Assembly of Markov additive models: i.i.d. renewal arrivals, change-point
modulated arrivals, and the doubled-post-block chain used for the
spectrally positive false-alarm probability."""

from __future__ import annotations

from collections.abc import Mapping
from dataclasses import dataclass, field
from enum import Enum

import gmpy2
import numpy as np

from . import numkernel as nk
from .errors import DimensionMismatch, EmptySupport, ValidationError
from .phasetype import PhaseTypeDist


class Side(str, Enum):
    SN = "SN"  # drift up, jumps down
    SP = "SP"  # drift down, jumps up

    @classmethod
    def of_theta(cls, theta) -> "Side":
        return cls.SN if theta > 0 else cls.SP


@dataclass(frozen=True)
class Deterministic:
    c: object

    def __post_init__(self):
        object.__setattr__(self, "c", nk.big(self.c))
        if not self.c > 0:
            raise EmptySupport(f"jump size must be positive, got {nk.fmt(self.c, 12)}")

    @property
    def atoms(self):
        return ((self.c, gmpy2.mpfr(1)),)

    @property
    def min_size(self):
        return self.c

    def laplace(self, s):
        return gmpy2.exp(-nk.big(s) * self.c)

    def to_json(self) -> dict:
        return {"type": "deterministic", "c": nk.fmt(self.c)}


@dataclass(frozen=True)
class FiniteDiscrete:
    atoms: tuple

    def __post_init__(self):
        atoms = tuple((nk.big(c), nk.big(p)) for c, p in self.atoms)
        if not atoms:
            raise EmptySupport("a discrete jump law needs at least one atom")
        for i, (c, p) in enumerate(atoms):
            if not c > 0:
                raise EmptySupport(f"atom {i} has non-positive size {nk.fmt(c, 12)}")
            if p < 0:
                raise ValidationError(f"atom {i} has negative probability", "p >= 0", ("atoms", i))
        total = sum((p for _, p in atoms), gmpy2.mpfr(0))
        if abs(total - 1) > nk.tol(10):
            raise ValidationError(f"atom probabilities sum to {nk.fmt(total, 12)}", "sum(p) = 1", ("atoms",))
        object.__setattr__(self, "atoms", atoms)

    @property
    def min_size(self):
        return min(c for c, _ in self.atoms)

    def laplace(self, s):
        s = nk.big(s)
        return sum((p * gmpy2.exp(-s * c) for c, p in self.atoms), gmpy2.mpfr(0))

    def to_json(self) -> dict:
        return {"type": "discrete", "atoms": [[nk.fmt(c), nk.fmt(p)] for c, p in self.atoms]}


def _check_stochastic_rows(name, rows, tol):
    for i, row in enumerate(rows):
        for j, x in enumerate(row):
            if x < -tol:
                raise ValidationError(f"{name}[{i}][{j}] is negative", "entries >= 0", (name, i, j))
        total = sum(row, gmpy2.mpfr(0))
        if abs(total - 1) > tol:
            raise ValidationError(f"row {i} of {name} sums to {nk.fmt(total, 12)}, expected 1",
                                  "rows sum to 1", (name, i))


@dataclass(frozen=True, eq=False)
class ChangeChainSpec:
    """Discrete chain Z with transition [[K, L], [O, M]] and initial law beta.

    ``copy_states`` counts leading post-change states that are one-step
    copies created by :func:`build_hat_chain`.
    """

    K: np.ndarray
    L: np.ndarray
    M: np.ndarray
    beta: np.ndarray
    copy_states: int = 0

    @classmethod
    def from_blocks(cls, K, L, M, beta, copy_states: int = 0) -> "ChangeChainSpec":
        K, L, M = nk.matrix(K), nk.matrix(L), nk.matrix(M)
        beta = nk.vector(beta)
        spec = cls(K, L, M, beta, copy_states)
        spec.validate()
        return spec

    @property
    def m0(self) -> int:
        return self.K.shape[0]

    @property
    def m1(self) -> int:
        return self.M.shape[0]

    def transition(self) -> np.ndarray:
        m0, m1 = self.m0, self.m1
        P = nk.zeros(m0 + m1)
        P[:m0, :m0] = self.K
        P[:m0, m0:] = self.L
        P[m0:, m0:] = self.M
        return P

    def states(self):
        return [(0, l + 1) for l in range(self.m0)] + [(1, l + 1) for l in range(self.m1)]

    def validate(self):
        m0, m1 = self.m0, self.m1
        if self.K.shape != (m0, m0):
            raise DimensionMismatch(f"K has shape {self.K.shape}, expected square")
        if self.L.shape != (m0, m1):
            raise DimensionMismatch(f"L has shape {self.L.shape}, expected ({m0}, {m1})")
        if self.M.shape != (m1, m1):
            raise DimensionMismatch(f"M has shape {self.M.shape}, expected square")
        if len(self.beta) != m0 + m1:
            raise DimensionMismatch(f"beta has length {len(self.beta)}, expected {m0 + m1}")
        tol = nk.tol(10)
        _check_stochastic_rows("[K L]", np.hstack([self.K, self.L]), tol)
        _check_stochastic_rows("M", self.M, tol)
        _check_stochastic_rows("beta", [self.beta], tol)

    def to_json(self) -> dict:
        def rows(a):
            return [[nk.fmt(x) for x in r] for r in a]
        return {"K": rows(self.K), "L": rows(self.L), "M": rows(self.M),
                "beta": [nk.fmt(x) for x in self.beta]}


class RegimeMap(Mapping):
    """Observation law for each chain state, keyed by (i, l) with l 1-based."""

    def __init__(self, laws):
        self._laws = {tuple(k): v for k, v in dict(laws).items()}

    def __getitem__(self, key):
        return self._laws[tuple(key)]

    def __iter__(self):
        return iter(self._laws)

    def __len__(self):
        return len(self._laws)

    def check(self, chain: ChangeChainSpec):
        expected = set(chain.states())
        missing = expected - set(self._laws)
        extra = set(self._laws) - expected
        if missing:
            raise DimensionMismatch(f"no observation law for states {sorted(missing)}")
        if extra:
            raise DimensionMismatch(f"observation laws given for unknown states {sorted(extra)}")
        for key, law in self._laws.items():
            if law.is_defective:
                raise ValidationError(f"observation law at {key} is defective", "q = 0", key)


@dataclass(frozen=True, eq=False)
class MapModel:
    """Assembled model: level drift ``gamma``, jumps from ``jump_law`` at the
    arrivals of a Markovian arrival process with matrices (T, B)."""

    gamma: object
    jump_law: object
    T: np.ndarray
    B: np.ndarray
    alpha: np.ndarray
    pre_mask: np.ndarray
    post_mask: np.ndarray
    exit_pre: np.ndarray
    exit_post: np.ndarray
    side: Side = Side.SN
    block_sizes: tuple = ()
    block_states: tuple = ()
    copy_mask: np.ndarray | None = field(default=None)

    @property
    def dim(self) -> int:
        return self.T.shape[0]

    @property
    def exit(self) -> np.ndarray:
        return self.exit_pre + self.exit_post

    @property
    def generator(self) -> np.ndarray:
        return self.T + self.B

    def kill_rates(self) -> np.ndarray:
        return -self.generator.sum(axis=1)

    @property
    def is_defective(self) -> bool:
        tol = nk.tol(10) * max(nk.mat_norm_inf(self.T), 1)
        return any(abs(x) > tol for x in self.kill_rates())

    def with_side(self, side: Side) -> "MapModel":
        return MapModel(self.gamma, self.jump_law, self.T, self.B, self.alpha, self.pre_mask,
                        self.post_mask, self.exit_pre, self.exit_post, Side(side),
                        self.block_sizes, self.block_states, self.copy_mask)


def _check_gamma(gamma):
    gamma = nk.big(gamma)
    if not gamma > 0:
        raise ValidationError(f"drift gamma must be positive, got {nk.fmt(gamma, 12)}", "gamma > 0")
    return gamma


def build_iid_map(obs: PhaseTypeDist, gamma, jump_law, side: Side = Side.SN) -> MapModel:
    """Renewal arrivals with PH(obs) interarrival times: T = T, B = t alpha."""
    gamma = _check_gamma(gamma)
    n = obs.n_phases
    B = np.outer(obs.t, obs.alpha)
    return MapModel(
        gamma, jump_law, obs.T.copy(), B, obs.alpha.copy(),
        nk.ones_vec(n), nk.zeros_vec(n), obs.t.copy(), nk.zeros_vec(n),
        Side(side), (n,), ((0, 1),), nk.zeros_vec(n),
    )


def build_changepoint_map(chain: ChangeChainSpec, regimes: RegimeMap, gamma, jump_law,
                          side: Side = Side.SN) -> MapModel:
    """Arrivals whose interarrival law follows the regime of the chain state.

    States are ordered block by block: all pre-change states, then all
    post-change states, each block listing its phases.
    """
    gamma = _check_gamma(gamma)
    if not isinstance(regimes, RegimeMap):
        regimes = RegimeMap(regimes)
    regimes.check(chain)
    states = chain.states()
    laws = [regimes[s] for s in states]
    sizes = [d.n_phases for d in laws]
    offsets = np.concatenate([[0], np.cumsum(sizes)]).astype(int)
    n = int(offsets[-1])
    P = chain.transition()
    T = nk.zeros(n)
    B = nk.zeros(n)
    alpha = nk.zeros_vec(n)
    pre = nk.zeros_vec(n)
    post = nk.zeros_vec(n)
    copy = nk.zeros_vec(n)
    exit_pre = nk.zeros_vec(n)
    exit_post = nk.zeros_vec(n)
    for a, (state, law) in enumerate(zip(states, laws)):
        rows = slice(offsets[a], offsets[a + 1])
        T[rows, rows] = law.T
        alpha[rows] = chain.beta[a] * law.alpha
        for b, target in enumerate(laws):
            if P[a, b] != 0:
                B[rows, offsets[b]:offsets[b + 1]] = P[a, b] * np.outer(law.t, target.alpha)
        if state[0] == 0:
            pre[rows] = gmpy2.mpfr(1)
            exit_pre[rows] = law.t
        else:
            post[rows] = gmpy2.mpfr(1)
            exit_post[rows] = law.t
            if state[1] <= chain.copy_states:
                copy[rows] = gmpy2.mpfr(1)
    return MapModel(gamma, jump_law, T, B, alpha, pre, post, exit_pre, exit_post,
                    Side(side), tuple(sizes), tuple(states), copy)


def build_hat_chain(chain: ChangeChainSpec) -> ChangeChainSpec:
    """Chain on E0, E1' and E1 with transition [[K, L, O], [O, O, M], [O, O, M]].

    The copy block E1' is visited for exactly one step right after the change,
    which lets a passage identity separate alarms raised at the change itself.
    Initial mass on post-change states is placed on the copies, trailing
    zeros go to E1.
    """
    m0, m1 = chain.m0, chain.m1
    L = np.hstack([chain.L, nk.zeros(m0, m1)])
    M = nk.zeros(2 * m1)
    M[:m1, m1:] = chain.M
    M[m1:, m1:] = chain.M
    beta = np.concatenate([chain.beta, nk.zeros_vec(m1)])
    return ChangeChainSpec.from_blocks(chain.K, L, M, beta, copy_states=m1)


def hat_regimes(regimes: RegimeMap, chain: ChangeChainSpec) -> RegimeMap:
    """Regimes for :func:`build_hat_chain`: copies reuse the original laws."""
    laws = {(0, l + 1): regimes[(0, l + 1)] for l in range(chain.m0)}
    for l in range(chain.m1):
        laws[(1, l + 1)] = regimes[(1, l + 1)]
        laws[(1, chain.m1 + l + 1)] = regimes[(1, l + 1)]
    return RegimeMap(laws)


def build_deterministic_change(k: int, postM=None, post_init=None) -> ChangeChainSpec:
    """Chain with nu = k almost surely: a k-step shift followed by the post block."""
    if k < 1:
        raise ValidationError(f"k must be at least 1, got {k}", "k >= 1")
    postM = nk.matrix([[1]]) if postM is None else nk.matrix(postM)
    m1 = postM.shape[0]
    K = nk.zeros(k)
    for i in range(k - 1):
        K[i, i + 1] = gmpy2.mpfr(1)
    L = nk.zeros(k, m1)
    if post_init is None:
        L[k - 1, 0] = gmpy2.mpfr(1)
    else:
        L[k - 1, :] = nk.vector(post_init)
    beta = nk.zeros_vec(k + m1)
    beta[0] = gmpy2.mpfr(1)
    return ChangeChainSpec.from_blocks(K, L, postM, beta)


def zero_modified_geometric(lam, mu, epsilon) -> ChangeChainSpec:
    """P(nu = 0) = mu, P(nu = k) = (1-mu)(1-lam)^(k-1) lam; after the change the
    observation regime is (1,1) w.p. 1-epsilon and (1,2) w.p. epsilon, forever."""
    lam, mu, epsilon = nk.big(lam), nk.big(mu), nk.big(epsilon)
    return ChangeChainSpec.from_blocks(
        [[1 - lam]],
        [[lam * (1 - epsilon), lam * epsilon]],
        [[1, 0], [0, 1]],
        [1 - mu, mu * (1 - epsilon), mu * epsilon],
    )


def no_change_chain() -> ChangeChainSpec:
    """nu = infinity almost surely."""
    return ChangeChainSpec.from_blocks([[1]], [[0]], [[1]], [1, 0])

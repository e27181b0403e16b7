"""Monte Carlo oracle for the analytic results.

Simulation runs in float64 and is organised in fixed-size chunks of paths.
Chunk ``j`` draws from a generator seeded by ``(seed, j)`` so the result does
not depend on how chunks are scheduled across workers; per-path statistics are
combined with exactly rounded summation.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import numkernel as nk
from .cusum import CusumProblem
from .errors import CensoredMajority, RangeError, ValidationError
from .modelbuild import ChangeChainSpec, Deterministic, MapModel, Side
from .phasetype import PhaseSampler

Z95 = 1.959963984540054
CENSOR_LIMIT = 0.01


@dataclass(frozen=True)
class SimConfig:
    n_paths: int = 100_000
    seed: int = 0
    max_steps: int = 1_000_000
    chunk_size: int = 5_000
    workers: int = 1

    def __post_init__(self):
        if self.n_paths < 1:
            raise ValidationError("n_paths must be at least 1", "n_paths >= 1")
        if self.max_steps < 1:
            raise ValidationError("max_steps must be at least 1", "max_steps >= 1")
        if self.chunk_size < 1 or self.workers < 1:
            raise ValidationError("chunk_size and workers must be positive")

    def chunks(self):
        """(chunk index, number of paths) pairs covering n_paths."""
        out = []
        start = 0
        while start < self.n_paths:
            size = min(self.chunk_size, self.n_paths - start)
            out.append((len(out), size))
            start += size
        return out

    def rng(self, chunk: int) -> np.random.Generator:
        return np.random.default_rng(np.random.SeedSequence([int(self.seed), int(chunk)]))


@dataclass(frozen=True)
class Estimate:
    mean: float
    half_width: float
    n: int

    @property
    def low(self) -> float:
        return self.mean - self.half_width

    @property
    def high(self) -> float:
        return self.mean + self.half_width

    def covers(self, value) -> bool:
        return self.low <= float(value) <= self.high


def estimate(values: np.ndarray) -> Estimate:
    """Sample mean with a normal-approximation 95% half-width."""
    values = np.asarray(values, dtype=float)
    n = values.size
    if n == 0:
        return Estimate(math.nan, math.nan, 0)
    mean = math.fsum(values) / n
    if n == 1:
        return Estimate(mean, math.inf, 1)
    var = math.fsum((values - mean) ** 2) / (n - 1)
    return Estimate(mean, Z95 * math.sqrt(var / n), n)


@dataclass(frozen=True)
class SimReport:
    arl: Estimate
    add: Estimate
    pfa: Estimate
    n_paths: int
    n_censored: int
    seed: int

    @property
    def arl_est(self):
        return self.arl.mean

    @property
    def add_est(self):
        return self.add.mean

    @property
    def pfa_est(self):
        return self.pfa.mean

    @property
    def ci95(self) -> dict:
        return {"ARL": self.arl.half_width, "ADD": self.add.half_width, "PFA": self.pfa.half_width}


@dataclass(frozen=True)
class _ChainPlan:
    """Float copy of a change chain and its observation laws."""

    beta_cdf: np.ndarray
    trans_cdf: np.ndarray
    m0: int
    sampler: PhaseSampler

    @classmethod
    def build(cls, chain: ChangeChainSpec, laws) -> "_ChainPlan":
        P = nk.as_float(chain.transition())
        beta = np.maximum(nk.as_float(chain.beta), 0.0)
        rows = np.maximum(P, 0.0)
        rows = rows / rows.sum(axis=1, keepdims=True)
        return cls(np.cumsum(beta / beta.sum()), np.cumsum(rows, axis=1), chain.m0, PhaseSampler(laws))

    def initial(self, size, rng):
        return _categorical(self.beta_cdf[None, :].repeat(size, axis=0), rng.random(size))

    def step(self, z, rng):
        return _categorical(self.trans_cdf[z], rng.random(z.size))


def _categorical(cdf_rows: np.ndarray, u: np.ndarray) -> np.ndarray:
    idx = (cdf_rows <= u[:, None]).sum(axis=1)
    return np.minimum(idx, cdf_rows.shape[1] - 1)


@dataclass(frozen=True)
class _CusumPlan:
    chain: _ChainPlan
    theta: float
    kappa: float
    barrier: float
    max_steps: int


def _plan(p: CusumProblem, cfg: SimConfig) -> _CusumPlan:
    laws = [p.regimes[s] for s in p.chain.states()]
    return _CusumPlan(_ChainPlan.build(p.chain, laws), float(p.theta), float(p.kappa),
                      float(p.barrier), cfg.max_steps)


NOT_YET = np.iinfo(np.int64).max


def _run_chunk(plan: _CusumPlan, rng: np.random.Generator, size: int, record: bool = False):
    """Simulate ``size`` CUSUM paths in lockstep.

    Returns alarm times (0 if censored), change points (NOT_YET if the chain
    never left the pre-change block before the alarm) and optionally the
    observation sequences.
    """
    chain = plan.chain
    z = chain.initial(size, rng)
    nu = np.where(z >= chain.m0, 0, NOT_YET)
    R = np.zeros(size)
    alarm = np.zeros(size, dtype=np.int64)
    live = np.arange(size)
    trace = [] if record else None
    n = 0
    while live.size and n < plan.max_steps:
        obs = chain.sampler.draw(z[live], rng)
        n += 1
        if record:
            trace.append((live.copy(), obs))
        R[live] = np.maximum(0.0, R[live] + plan.theta * obs - plan.kappa)
        fired = R[live] > plan.barrier
        alarm[live[fired]] = n
        live = live[~fired]
        if live.size:
            z[live] = chain.step(z[live], rng)
            entered = (z[live] >= chain.m0) & (nu[live] == NOT_YET)
            nu[live[entered]] = n
    return alarm, nu, trace


def _cusum_chunk(args):
    plan, seed, chunk, size = args
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), int(chunk)]))
    alarm, nu, _ = _run_chunk(plan, rng, size)
    return alarm, nu


def _map_chunks(fn, plan, cfg: SimConfig):
    jobs = [(plan, cfg.seed, chunk, size) for chunk, size in cfg.chunks()]
    if cfg.workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            return list(pool.map(fn, jobs))
    return [fn(job) for job in jobs]


def simulate_cusum(p: CusumProblem, cfg: SimConfig = SimConfig()) -> SimReport:
    """Estimate ARL, ADD and PFA by simulating the hidden chain, the
    observations and the CUSUM recursion path by path."""
    plan = _plan(p, cfg)
    results = _map_chunks(_cusum_chunk, plan, cfg)
    alarm = np.concatenate([r[0] for r in results])
    nu = np.concatenate([r[1] for r in results])
    done = alarm > 0
    n_censored = int((~done).sum())
    if n_censored > CENSOR_LIMIT * cfg.n_paths:
        raise CensoredMajority(
            f"{n_censored} of {cfg.n_paths} paths reached max_steps={cfg.max_steps}",
            n_censored, cfg.n_paths)
    alarm, nu = alarm[done], nu[done]
    false_alarm = alarm <= nu
    delay = np.where(false_alarm, 0, alarm - np.minimum(nu, alarm))
    return SimReport(estimate(alarm), estimate(delay), estimate(false_alarm.astype(float)),
                     cfg.n_paths, n_censored, cfg.seed)


def sample_change_times(chain: ChangeChainSpec, n_paths: int, seed: int, max_steps: int = 10_000):
    """Draws of nu = first n with Z_n post-change; -1 when not reached by max_steps."""
    P = _ChainPlan.build(chain, [])
    rng = np.random.default_rng(seed)
    z = P.initial(n_paths, rng)
    nu = np.where(z >= chain.m0, 0, -1)
    live = np.flatnonzero(nu < 0)
    n = 0
    while live.size and n < max_steps:
        n += 1
        z[live] = P.step(z[live], rng)
        hit = z[live] >= chain.m0
        nu[live[hit]] = n
        live = live[~hit]
    return nu


def sample_chain_paths(chain: ChangeChainSpec, n_paths: int, steps: int, seed: int) -> np.ndarray:
    """State trajectories Z_0..Z_steps, one row per path."""
    P = _ChainPlan.build(chain, [])
    rng = np.random.default_rng(seed)
    out = np.empty((n_paths, steps + 1), dtype=np.int64)
    out[:, 0] = P.initial(n_paths, rng)
    for n in range(1, steps + 1):
        out[:, n] = P.step(out[:, n - 1], rng)
    return out


# ---------------------------------------------------------------- path identity

@dataclass(frozen=True)
class CounterexamplePath:
    path_index: int
    step: int
    reason: str
    observations: tuple
    statistic: tuple
    level: tuple


@dataclass(frozen=True)
class EquivalenceResult:
    passed: bool
    n_paths: int
    n_steps: int
    counterexample: CounterexamplePath | None = None


def verify_path(p: CusumProblem, observations, path_index: int = 0) -> CounterexamplePath | None:
    """Check the discrete CUSUM against its continuous-time embedding on one path.

    The level process X moves linearly at rate theta between observation
    epochs eta_n = z_1 + ... + z_n and jumps by -kappa at each epoch. With Y the
    process reflected at its running infimum (started at 0 for theta > 0 and at
    |kappa| for theta < 0), the statistic equals Y at the epochs (shifted by
    -|kappa| for theta < 0) and the alarm index is recovered from the first
    passage of Y above A + |kappa|.
    """
    zs = [nk.big(float(z)) for z in observations]
    theta, kappa, A = p.theta, p.kappa, p.barrier
    tol = nk.eps(0.5)
    c = abs(kappa)
    g = abs(theta)
    spectrally_negative = theta > 0

    # discrete side: recursion and the running-minimum identity
    R, L, low = [], nk.big(0), nk.big(0)
    r = nk.big(0)
    alarm = None
    for n, z in enumerate(zs, start=1):
        inc = theta * z - kappa
        r = max(nk.big(0), r + inc)
        L = L + inc
        low = min(low, L)
        if abs(r - (L - low)) > tol * max(1, abs(r)):
            return CounterexamplePath(path_index, n, "recursion and running-minimum forms differ",
                                      tuple(observations), tuple(R), ())
        R.append(r)
        if alarm is None and r > A:
            alarm = n

    # continuous side
    x0 = nk.big(0) if spectrally_negative else c
    a = A + c
    X = x0
    inf_x = min(nk.big(0), x0)
    Y = []
    passage = None  # number of arrivals strictly before first passage
    for n, z in enumerate(zs, start=1):
        if spectrally_negative:
            before = X + g * z
            y_before = before - min(nk.big(0), inf_x)
            if passage is None and y_before > a:
                passage = n - 1
            X = before - c
            inf_x = min(inf_x, X)
            Y.append(X - min(nk.big(0), inf_x))
        else:
            before = X - g * z
            inf_x = min(inf_x, before)
            X = before + c
            y = X - min(nk.big(0), inf_x)
            Y.append(y)
            if passage is None and y > a:
                passage = n
    shift = nk.big(0) if spectrally_negative else c
    for n, (r, y) in enumerate(zip(R, Y), start=1):
        if alarm is not None and n > alarm:
            break
        if abs(r - (y - shift)) > tol * max(1, abs(r)):
            return CounterexamplePath(path_index, n, "statistic differs from reflected level",
                                      tuple(observations), tuple(R), tuple(Y))
    predicted = None if passage is None else (passage + 1 if spectrally_negative else passage)
    if predicted != alarm:
        return CounterexamplePath(path_index, alarm or len(zs), f"alarm index {alarm} but passage gives {predicted}",
                                  tuple(observations), tuple(R), tuple(Y))
    return None


def check_path_equivalence(p: CusumProblem, cfg: SimConfig = SimConfig(n_paths=10_000)) -> EquivalenceResult:
    """Simulate paths and verify the continuous-time identity on each."""
    plan = _plan(p, cfg)
    n_steps = 0
    offset = 0
    for chunk, size in cfg.chunks():
        alarm, _, trace = _run_chunk(plan, cfg.rng(chunk), size, record=True)
        paths = [[] for _ in range(size)]
        for live, obs in trace:
            for i, z in zip(live.tolist(), obs.tolist()):
                paths[i].append(z)
        for i, obs in enumerate(paths):
            n_steps += len(obs)
            bad = verify_path(p, obs, offset + i)
            if bad is not None:
                return EquivalenceResult(False, offset + i + 1, n_steps, bad)
        offset += size
    return EquivalenceResult(True, cfg.n_paths, n_steps)


# ---------------------------------------------------------------- passage oracle

@dataclass(frozen=True)
class PassageEstimate:
    a: float
    x0: float
    phase_dist: np.ndarray
    phase_se: np.ndarray
    arrivals_by_phase: np.ndarray
    arrivals_se: np.ndarray
    n_paths: int
    n_censored: int
    side: Side = Side.SN


def _jump_sampler(law):
    sizes = np.array([float(c) for c, _ in law.atoms])
    probs = np.array([float(p) for _, p in law.atoms])
    cdf = np.cumsum(probs / probs.sum())

    def draw(rng, size):
        return sizes[_categorical(cdf[None, :].repeat(size, axis=0), rng.random(size))]
    return draw


def estimate_passage(model: MapModel, a, x0=0, cfg: SimConfig = SimConfig(), start=None) -> PassageEstimate:
    """Empirical modulator law at first passage above ``a`` and arrival counts
    per pre-arrival state, one block of ``cfg.n_paths`` paths per start state.

    ``cfg.max_steps`` caps the number of modulator events per path.
    """
    a, x0 = float(a), float(x0)
    if not a > 0:
        raise RangeError("barrier must be positive")
    if model.side == Side.SP and not 0 <= x0 <= a:
        raise RangeError("start level must lie in [0, a]")
    n = model.dim
    T = nk.as_float(model.T)
    B = nk.as_float(model.B)
    rate = -np.diag(T)
    off = np.maximum(T, 0.0)
    np.fill_diagonal(off, 0.0)
    kill = np.maximum(rate - off.sum(axis=1) - B.sum(axis=1), 0.0)
    # outcomes: [non-arrival move to j | arrival landing in j | killed]
    weights = np.hstack([off, np.maximum(B, 0.0), kill[:, None]]) / rate[:, None]
    cdf = np.cumsum(weights / weights.sum(axis=1, keepdims=True), axis=1)
    jumps = _jump_sampler(model.jump_law)
    gamma = float(model.gamma)
    spectrally_negative = model.side == Side.SN
    starts = range(n) if start is None else [int(start)]

    phase_dist = np.full((n, n), np.nan)
    phase_se = np.full((n, n), np.nan)
    arrivals = np.full((n, n), np.nan)
    arrivals_se = np.full((n, n), np.nan)
    censored = 0
    for i in starts:
        ends, counts, killed = [], [], 0
        for chunk, size in cfg.chunks():
            rng = np.random.default_rng(np.random.SeedSequence([int(cfg.seed), i, int(chunk)]))
            state = np.full(size, i, dtype=np.int64)
            level = np.full(size, 0.0 if spectrally_negative else x0)
            end = np.full(size, -1, dtype=np.int64)
            count = np.zeros((size, n))
            live = np.arange(size)
            events = 0
            while live.size and events < cfg.max_steps:
                events += 1
                s = state[live]
                hold = rng.exponential(1.0, live.size) / rate[s]
                if spectrally_negative:
                    crossed = level[live] + gamma * hold > a
                    end[live[crossed]] = s[crossed]
                    live, s, hold = live[~crossed], s[~crossed], hold[~crossed]
                    level[live] += gamma * hold
                else:
                    level[live] = np.maximum(0.0, level[live] - gamma * hold)
                if not live.size:
                    break
                outcome = _categorical(cdf[s], rng.random(live.size))
                is_arrival = (outcome >= n) & (outcome < 2 * n)
                is_killed = outcome == 2 * n
                target = np.where(outcome >= n, outcome - n, outcome)
                arr = live[is_arrival]
                count[arr, s[is_arrival]] += 1
                size_j = jumps(rng, arr.size)
                if spectrally_negative:
                    level[arr] = np.maximum(0.0, level[arr] - size_j)
                else:
                    level[arr] = level[arr] + size_j
                state[live] = np.where(is_killed, state[live], target)
                dead = live[is_killed]
                end[dead] = n  # killed marker
                keep = ~is_killed
                if not spectrally_negative:
                    crossed = np.zeros(live.size, dtype=bool)
                    crossed[is_arrival] = level[arr] > a
                    end[live[crossed]] = state[live[crossed]]
                    keep &= ~crossed
                live = live[keep]
            censored += int(live.size)
            ok = end >= 0
            killed += int((end == n).sum())
            ends.append(end[ok])
            counts.append(count[ok])
        end = np.concatenate(ends)
        count = np.concatenate(counts)
        m = end.size
        for j in range(n):
            hit = (end == j).astype(float)
            est = estimate(hit)
            phase_dist[i, j] = est.mean
            phase_se[i, j] = est.half_width / Z95
            est = estimate(count[:, j])
            arrivals[i, j] = est.mean
            arrivals_se[i, j] = est.half_width / Z95 if m > 1 else math.inf
    total = cfg.n_paths * len(list(starts))
    if censored > CENSOR_LIMIT * total:
        raise CensoredMajority(f"{censored} of {total} passage paths reached max_steps", censored, total)
    return PassageEstimate(a, x0, phase_dist, phase_se, arrivals, arrivals_se, cfg.n_paths, censored, model.side)

"""Exact CUSUM performance measures for phase-type observations and the
minimax barrier search.

With f1 the exponential tilt of f0 by theta, the log-likelihood-ratio
increment of an observation z is theta z - kappa(theta), so the CUSUM
statistic is a reflected random walk. Embedding it in continuous time turns
the alarm time into an arrival count at first passage of a Markov additive
process: for theta > 0 the alarm time is 1 plus the number of arrivals before
the process reflected at 0 exceeds A + kappa; for theta < 0 it is the number of
arrivals before the process started at |kappa| exceeds A + |kappa|.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import gmpy2
import numpy as np
from gmpy2 import mpfr

from . import numkernel as nk
from .errors import DefectiveModel, NoBracket, RangeError, ValidationError
from .modelbuild import (
    ChangeChainSpec,
    Deterministic,
    MapModel,
    RegimeMap,
    Side,
    build_changepoint_map,
    build_hat_chain,
    build_iid_map,
    hat_regimes,
    no_change_chain,
)
from .passage import sn_resolvent, sp_kernel
from .phasetype import PhaseTypeDist, mgf_kappa, tilt
from .scalematrix import DEFAULT_NMAX

INFINITE = math.inf


@dataclass(frozen=True, eq=False)
class CusumProblem:
    f0: PhaseTypeDist
    theta: object
    kappa: object
    barrier: object
    chain: ChangeChainSpec
    regimes: RegimeMap

    @classmethod
    def build(cls, f0: PhaseTypeDist, theta, barrier, chain=None, regimes=None) -> "CusumProblem":
        """Problem with kappa computed from f0; without a chain, nu = infinity."""
        theta = nk.big(theta)
        if theta == 0:
            raise ValidationError("theta must be nonzero", "theta != 0")
        kappa = mgf_kappa(f0, theta)
        if chain is None:
            chain = no_change_chain()
            regimes = {(0, 1): f0, (1, 1): tilt(f0, theta).tilted}
        regimes = regimes if isinstance(regimes, RegimeMap) else RegimeMap(regimes)
        regimes.check(chain)
        p = cls(f0, theta, kappa, nk.big(barrier), chain, regimes)
        p.check()
        return p

    def check(self):
        if self.theta == 0:
            raise ValidationError("theta must be nonzero", "theta != 0")
        if (self.kappa > 0) != (self.theta > 0) or self.kappa == 0:
            raise ValidationError("kappa must share the sign of theta", "sign(kappa) = sign(theta)")
        if not self.barrier > 0:
            raise RangeError(f"barrier must be positive, got {nk.fmt(self.barrier, 12)}")

    @property
    def side(self) -> Side:
        return Side.of_theta(self.theta)

    @property
    def gamma(self):
        return abs(self.theta)

    @property
    def jump(self) -> Deterministic:
        return Deterministic(abs(self.kappa))

    def with_barrier(self, barrier) -> "CusumProblem":
        p = replace(self, barrier=nk.big(barrier))
        p.check()
        return p

    def model(self) -> MapModel:
        return build_changepoint_map(self.chain, self.regimes, self.gamma, self.jump, self.side)

    def hat_model(self) -> MapModel:
        chain = build_hat_chain(self.chain)
        return build_changepoint_map(chain, hat_regimes(self.regimes, self.chain),
                                     self.gamma, self.jump, self.side)


@dataclass(frozen=True, eq=False)
class PerfReport:
    ARL: object
    ADD: object
    PFA: object
    barrier: object
    side: Side
    meta: dict = field(default_factory=dict)

    def is_infinite(self) -> bool:
        return self.ARL == INFINITE


def _snap(value, lo=None, hi=None):
    """Move rounding-level excursions past a hard bound back onto it."""
    slack = nk.tol(6)
    if lo is not None and lo - slack < value < lo:
        return mpfr(lo)
    if hi is not None and hi < value < hi + slack:
        return mpfr(hi)
    return value


def _finish(arl, add, pfa, barrier, side, tail, notes, n_max) -> PerfReport:
    add = _snap(add, lo=0)
    pfa = _snap(_snap(pfa, lo=0), hi=1)
    meta = {"precision": nk.current_digits(), "n_max": n_max, "tail_ratio": tail,
            "truncated": bool(tail > nk.eps(0.5)), "notes": list(notes)}
    if not gmpy2.is_finite(arl) or abs(arl) > mpfr(10) ** (nk.current_digits() // 2):
        meta["notes"].append("expected run length diverges: resolvent row sums are unbounded")
        arl = INFINITE
    return PerfReport(arl, add, pfa, barrier, side, meta)


def _require_conservative(model: MapModel):
    if model.is_defective:
        raise DefectiveModel("performance measures need a non-defective modulator")


def perf_sn(p: CusumProblem, n_max: int = DEFAULT_NMAX) -> PerfReport:
    """ARL, ADD and PFA for theta > 0 at level a = A + kappa, start 0."""
    if p.side != Side.SN:
        raise ValidationError("perf_sn needs theta > 0", "theta > 0")
    model = p.model()
    _require_conservative(model)
    a = p.barrier + p.kappa
    factor, Wbar, tail = sn_resolvent(model, a, n_max)
    row = model.alpha @ nk.lu_solve(factor, nk.eye(model.dim))
    pfa = row @ model.pre_mask
    arl = 1 + row @ (Wbar @ model.exit)
    add = row @ (Wbar @ model.exit_post + model.post_mask)
    return _finish(arl, add, pfa, p.barrier, Side.SN, tail, (), n_max)


def perf_sp(p: CusumProblem, n_max: int = DEFAULT_NMAX) -> PerfReport:
    """ARL, ADD and PFA for theta < 0: level a = A + |kappa|, start |kappa|.

    The false-alarm probability uses the chain with doubled post-change
    states so that alarms raised exactly at the change count as false.
    """
    if p.side != Side.SP:
        raise ValidationError("perf_sp needs theta < 0", "theta < 0")
    model = p.model()
    _require_conservative(model)
    c = abs(p.kappa)
    a = p.barrier + c
    kernel, tail, notes = sp_kernel(model, a, c, n_max)
    arl = -(model.alpha @ (kernel @ model.exit))
    add = -(model.alpha @ (kernel @ model.exit_post))

    hat = p.hat_model()
    hat_kernel, hat_tail, hat_notes = sp_kernel(hat, a, c, n_max)
    alarm_mask = hat.pre_mask + hat.copy_mask
    pfa = hat.alpha @ alarm_mask - hat.alpha @ (hat_kernel @ (hat.generator @ alarm_mask))
    return _finish(arl, add, pfa, p.barrier, Side.SP, max(tail, hat_tail), notes + hat_notes, n_max)


def perf(p: CusumProblem, n_max: int = DEFAULT_NMAX) -> PerfReport:
    return perf_sn(p, n_max) if p.side == Side.SN else perf_sp(p, n_max)


def arl_iid(f0: PhaseTypeDist, theta, A, n_max: int = DEFAULT_NMAX, kappa=None):
    """Run length expectation when every observation follows f0."""
    theta, A = nk.big(theta), nk.big(A)
    if not A > 0:
        raise RangeError(f"barrier must be positive, got {nk.fmt(A, 12)}")
    kappa = mgf_kappa(f0, theta) if kappa is None else kappa
    side = Side.of_theta(theta)
    model = build_iid_map(f0, abs(theta), Deterministic(abs(kappa)), side)
    if side == Side.SN:
        factor, Wbar, _ = sn_resolvent(model, A + kappa, n_max)
        return 1 + model.alpha @ nk.lu_solve(factor, Wbar @ model.exit)
    c = abs(kappa)
    kernel, _, _ = sp_kernel(model, A + c, c, n_max)
    return -(model.alpha @ (kernel @ model.exit))


@dataclass(frozen=True, eq=False)
class BarrierSolution:
    A: object
    arl: object
    beta: object
    iterations: int
    trace: tuple
    note: str | None = None


BRACKET_FLOOR = "1e-6"


def solve_barrier(f0: PhaseTypeDist, theta, beta, tol="1e-4", n_max: int = DEFAULT_NMAX,
                  A_max="1e3", max_iter: int = 200) -> BarrierSolution:
    """Barrier A with |ARL(A) - beta| < tol under the no-change law.

    ARL is increasing in A, so the root is bracketed by doubling the upper end
    of [1e-6, 1] and then bisected.
    """
    theta, beta, tol, A_max = nk.big(theta), nk.big(beta), nk.big(tol), nk.big(A_max)
    if beta < 1:
        raise RangeError(f"beta must be at least 1, got {nk.fmt(beta, 12)}")
    kappa = mgf_kappa(f0, theta)
    trace = []

    def arl(A):
        value = arl_iid(f0, theta, A, n_max, kappa)
        trace.append((A, value))
        return value

    lo, hi = nk.big(BRACKET_FLOOR), mpfr(1)
    f_lo = arl(lo)
    if f_lo >= beta - tol:
        return BarrierSolution(lo, f_lo, beta, 1, tuple(trace),
                               note=f"ARL at the bracket floor is {nk.fmt(f_lo, 8)} >= beta; "
                                    "returning the floor")
    f_hi = arl(hi)
    while f_hi < beta:
        lo, f_lo = hi, f_hi
        hi = hi * 2
        if hi > A_max:
            raise NoBracket(f"ARL stays below {nk.fmt(beta, 8)} up to A = {nk.fmt(A_max, 8)}")
        f_hi = arl(hi)
    if abs(f_hi - beta) < tol:
        return BarrierSolution(hi, f_hi, beta, len(trace), tuple(trace))
    for _ in range(max_iter):
        mid = (lo + hi) / 2
        f_mid = arl(mid)
        if abs(f_mid - beta) < tol:
            return BarrierSolution(mid, f_mid, beta, len(trace), tuple(trace))
        if f_mid < beta:
            lo = mid
        else:
            hi = mid
        if hi - lo <= nk.eps(0.5) * hi:
            break
    raise NoBracket(f"bisection did not reach |ARL - beta| < {nk.fmt(tol, 4)}")

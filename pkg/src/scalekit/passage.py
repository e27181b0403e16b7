"""First passage of the reflected level process above a barrier: modulator
state at passage and expected arrival counts per state."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import numkernel as nk
from .errors import DefectiveModel, RangeError, SingularMatrix, SingularSystem, ValidationError
from .modelbuild import Deterministic, MapModel, Side
from .scalematrix import DEFAULT_NMAX, scale_eval_refined

log = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class PassageResult:
    a: object
    x0: object
    phase_dist: np.ndarray
    arrivals_by_phase: np.ndarray | None
    side: Side
    precision: int
    notes: tuple = field(default_factory=tuple)


def _require_side(model: MapModel, side: Side):
    if model.side != side:
        raise ValidationError(f"model is {model.side.value}, this identity needs {side.value}", "side")


def sn_resolvent(model: MapModel, a, n_max: int = DEFAULT_NMAX):
    """Return (LU of I - Wbar(a)(T + B), Wbar(a), tail ratio)."""
    ev = scale_eval_refined(model, a, n_max, parts=("Wbar",))
    R = nk.eye(model.dim) - ev.Wbar @ model.generator
    try:
        factor = nk.lu_factor(R)
    except SingularMatrix as exc:
        raise SingularSystem(f"I - Wbar(a)(T + B) is singular at a = {nk.fmt(a, 12)}") from exc
    return factor, ev.Wbar, ev.tail_ratio


def passage_sn(model: MapModel, a, n_max: int = DEFAULT_NMAX, arrivals: bool = True) -> PassageResult:
    """Reflected process started at 0, drift up, jumps down."""
    _require_side(model, Side.SN)
    a = nk.big(a)
    if not a > 0:
        raise RangeError(f"barrier must be positive, got {nk.fmt(a, 12)}")
    factor, Wbar, _ = sn_resolvent(model, a, n_max)
    phase = nk.lu_solve(factor, nk.eye(model.dim))
    counts = None
    if arrivals:
        if model.is_defective:
            raise DefectiveModel("expected arrival counts need a non-defective modulator")
        counts = phase @ Wbar @ nk.diag(model.exit)
    return PassageResult(a, nk.big(0), phase, counts, Side.SN, nk.current_digits())


def _snap_off_lattice(model: MapModel, a):
    """Nudge ``a`` right by 10^(-P/2) c when it sits on a multiple of c."""
    law = model.jump_law
    if not isinstance(law, Deterministic):
        return a, ()
    ratio = a / law.c
    nearest = nk.big(int(round(float(ratio))))
    if nearest > 0 and abs(ratio - nearest) <= nk.eps(0.5) * max(1, abs(ratio)):
        shifted = a + nk.eps(0.5) * law.c
        note = f"barrier {nk.fmt(a, 12)} is a multiple of the jump size; evaluated at {nk.fmt(shifted, 20)}"
        log.info(note)
        return shifted, (note,)
    return a, ()


def sp_kernel(model: MapModel, a, x0, n_max: int = DEFAULT_NMAX):
    """Wbar(a - x0) - W(a - x0) W'+(a)^-1 W(a) for the dual scale matrix.

    Returns (kernel, tail ratio, notes).
    """
    a, notes = _snap_off_lattice(model, a)
    low = scale_eval_refined(model, a - x0, n_max, parts=("W", "Wbar"))
    high = scale_eval_refined(model, a, n_max, parts=("W", "Wprime"))
    try:
        y = nk.solve(high.Wprime, high.W)
    except SingularMatrix as exc:
        raise SingularSystem(f"W'+(a) is singular at a = {nk.fmt(a, 12)}") from exc
    kernel = low.Wbar - low.W @ y
    return kernel, max(low.tail_ratio, high.tail_ratio), notes


def passage_sp(model: MapModel, a, x0, n_max: int = DEFAULT_NMAX, arrivals: bool = True) -> PassageResult:
    """Reflected process started at x0, drift down, jumps up."""
    _require_side(model, Side.SP)
    a, x0 = nk.big(a), nk.big(x0)
    if not a > 0:
        raise RangeError(f"barrier must be positive, got {nk.fmt(a, 12)}")
    if x0 < 0 or x0 > a:
        raise RangeError(f"start level {nk.fmt(x0, 12)} is outside [0, {nk.fmt(a, 12)}]")
    kernel, _, notes = sp_kernel(model, a, x0, n_max)
    phase = nk.eye(model.dim) - kernel @ model.generator
    counts = None
    if arrivals:
        if model.is_defective:
            raise DefectiveModel("expected arrival counts need a non-defective modulator")
        counts = -kernel @ nk.diag(model.exit)
    return PassageResult(a, x0, phase, counts, Side.SP, nk.current_digits(), notes)

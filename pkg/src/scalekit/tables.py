"""Recompute the two published performance tables for the bundled models and
compare them with the reference values shipped in ``data/reference_tables.json``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources

from . import numkernel as nk
from .cusum import perf
from .simkit import SimConfig, simulate_cusum
from .specfile import bundled_path, load_model

MEASURES = ("ARL", "ADD", "PFA")
EPSILONS = ("0", "0.1", "0.5")
BETAS = ("5", "10")
SIG_DIGITS = 5


def reference() -> dict:
    path = resources.files("scalekit") / "data" / "reference_tables.json"
    return json.loads(path.read_text())


def agree(value, published: str, digits: int = SIG_DIGITS) -> bool:
    """True when ``value`` rounds to ``published`` at ``digits`` significant digits."""
    return float(f"{float(value):.{digits}g}") == float(f"{float(published):.{digits}g}")


@dataclass
class Row:
    table: int
    side: str
    epsilon: str | None
    beta: str
    barrier: str
    measure: str
    analytic: object
    published: str
    mc: object = None  # simkit.Estimate

    @property
    def matches(self) -> bool:
        return agree(self.analytic, self.published)

    @property
    def covered(self) -> bool | None:
        return None if self.mc is None else self.mc.covers(self.analytic)


def cases(table: int):
    """(side, epsilon, beta, model file, params) in table order."""
    out = []
    for side in ("SN", "SP"):
        if table == 1:
            for eps in EPSILONS:
                for beta in BETAS:
                    out.append((side, eps, beta, f"example1_{side.lower()}", {"epsilon": eps}))
        else:
            for beta in BETAS:
                out.append((side, None, beta, f"example2_{side.lower()}", {}))
    return out


def compute(table: int, paths: int = 0, seed: int = 42, params: dict | None = None,
            workers: int = 1, n_max: int = 100):
    """Rows for one table. ``paths = 0`` skips the simulation columns."""
    if table not in (1, 2):
        raise ValueError("table must be 1 or 2")
    ref = reference()
    rows = []
    for side, eps, beta, name, base in cases(table):
        spec = load_model(bundled_path(name), {**base, **(params or {})})
        barrier = ref["barriers"][side][beta]
        p = spec.problem(barrier)
        report = perf(p, n_max)
        published = ref["table1"][side][eps][beta] if table == 1 else ref["table2"][side][beta]
        sim = None
        if paths:
            sim = simulate_cusum(p, SimConfig(n_paths=paths, seed=seed, workers=workers))
        for m in MEASURES:
            mc = None if sim is None else {"ARL": sim.arl, "ADD": sim.add, "PFA": sim.pfa}[m]
            rows.append(Row(table, side, eps, beta, barrier, m, getattr(report, m), published[m], mc))
    return rows


CSV_HEADER = ("table,side,epsilon,beta,barrier,measure,analytic,published,agree_5sig,"
              "mc_mean,mc_low,mc_high,mc_covers")


def to_csv(rows, digits: int = 12) -> str:
    lines = [CSV_HEADER]
    for r in rows:
        mc = ("", "", "", "") if r.mc is None else (
            repr(r.mc.mean), repr(r.mc.low), repr(r.mc.high), str(r.covered).lower())
        lines.append(",".join([str(r.table), r.side, r.epsilon or "", r.beta, r.barrier, r.measure,
                               nk.fmt(r.analytic, digits), r.published, str(r.matches).lower(), *mc]))
    return "\n".join(lines) + "\n"

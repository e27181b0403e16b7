"""Model-spec JSON: parsing, validation with JSON-pointer diagnostics, and
canonical serialization.

Document layout (numbers are decimal strings; ``"$name"`` refers to an entry
of ``params``)::

    {
      "params":  {"epsilon": "0", ...},                  optional
      "theta":   "0.1",                                  tilt parameter
      "f0":      {"alpha": [...], "T": [[...]], "q": [...]},
      "gamma":   "0.1", "jump": {...}, "side": "SN",     optional, derived from theta
      "laws":    {"F2": <PH>, "F3": {"tilt_of": "F2", "theta": "0.1"}},
      "chain":   {"K": ..., "L": ..., "M": ..., "beta": ...}
                 or {"zero_modified_geometric": {"lambda": ..., "mu": ..., "epsilon": ...}},
      "regimes": {"(0,1)": "F0", "(1,1)": "F1", ...}
    }

``F0`` names ``f0`` and ``F1`` names the tilt of ``f0`` by ``theta``. Without a
chain the change never happens and the model is the i.i.d. one.
"""

from __future__ import annotations

import copy
import hashlib
import json
import re
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

from . import numkernel as nk
from .cusum import CusumProblem
from .errors import ParseError, SchemaError, ScalekitError, SemanticError, ValidationError
from .modelbuild import (
    ChangeChainSpec,
    Deterministic,
    FiniteDiscrete,
    MapModel,
    RegimeMap,
    Side,
    build_changepoint_map,
    no_change_chain,
    zero_modified_geometric,
)
from .phasetype import PhaseTypeDist, mgf_kappa, tilt

BUNDLED = ("example1_sn.json", "example1_sp.json", "example2_sn.json", "example2_sp.json")
TOP_KEYS = {"name", "description", "params", "theta", "f0", "gamma", "jump", "side",
            "laws", "chain", "regimes"}
_REGIME_KEY = re.compile(r"^\(\s*([0-9]+)\s*,\s*([0-9]+)\s*\)$")


def bundled_path(name: str) -> Path:
    if not name.endswith(".json"):
        name += ".json"
    return Path(str(resources.files("scalekit") / "data" / name))


def content_hash(text: str | bytes) -> str:
    if isinstance(text, str):
        text = text.encode()
    return hashlib.sha256(text).hexdigest()


@dataclass(frozen=True, eq=False)
class ModelSpec:
    doc: dict
    theta: object
    f0: PhaseTypeDist | None
    kappa: object
    gamma: object
    jump_law: object
    side: Side
    chain: ChangeChainSpec
    regimes: RegimeMap
    laws: dict

    def map_model(self) -> MapModel:
        return build_changepoint_map(self.chain, self.regimes, self.gamma, self.jump_law, self.side)

    def problem(self, barrier) -> CusumProblem:
        if self.theta is None:
            raise SemanticError("performance measures need theta and f0", "/theta")
        return CusumProblem(self.f0, self.theta, self.kappa, nk.big(barrier), self.chain, self.regimes)

    def canonical(self) -> str:
        return canonical_json(self.doc)


def canonical_json(doc) -> str:
    return json.dumps(doc, sort_keys=True, indent=2) + "\n"


class _Reader:
    def __init__(self, doc, params):
        self.doc = doc
        self.params = params

    def number(self, value, pointer):
        if isinstance(value, bool) or value is None:
            raise SchemaError(f"expected a decimal string, got {json.dumps(value)}", pointer)
        if isinstance(value, str) and value.startswith("$"):
            name = value[1:]
            if name not in self.params:
                raise SemanticError(f"unknown parameter {value!r}", pointer)
            value = self.params[name]
        if isinstance(value, (int, float)):
            value = repr(value)
        if not isinstance(value, str):
            raise SchemaError(f"expected a decimal string, got {type(value).__name__}", pointer)
        try:
            x = nk.big(value)
        except ValueError as exc:
            raise SchemaError(f"not a decimal number: {value!r}", pointer) from exc
        if not x.is_finite():
            raise SchemaError(f"number must be finite: {value!r}", pointer)
        return x

    def vector(self, value, pointer):
        if not isinstance(value, list) or not value:
            raise SchemaError("expected a non-empty array", pointer)
        return [self.number(v, f"{pointer}/{i}") for i, v in enumerate(value)]

    def matrix(self, value, pointer):
        if not isinstance(value, list) or not value:
            raise SchemaError("expected a non-empty array of rows", pointer)
        rows = [self.vector(r, f"{pointer}/{i}") for i, r in enumerate(value)]
        if len({len(r) for r in rows}) != 1:
            raise SchemaError("rows have different lengths", pointer)
        return rows

    def object(self, value, pointer, required=(), optional=()):
        if not isinstance(value, dict):
            raise SchemaError("expected an object", pointer)
        for key in required:
            if key not in value:
                raise SchemaError(f"missing key {key!r}", pointer)
        allowed = set(required) | set(optional)
        for key in value:
            if key not in allowed:
                raise SchemaError(f"unexpected key {key!r}", f"{pointer}/{key}")
        return value

    def phase_type(self, value, pointer) -> PhaseTypeDist:
        self.object(value, pointer, ("alpha", "T"), ("q",))
        alpha = self.vector(value["alpha"], f"{pointer}/alpha")
        T = self.matrix(value["T"], f"{pointer}/T")
        q = self.vector(value["q"], f"{pointer}/q") if "q" in value else None
        try:
            return PhaseTypeDist.from_arrays(alpha, T, q)
        except ValidationError as exc:
            raise SemanticError(str(exc), _entry_pointer(pointer, exc.entry)) from exc


def _entry_pointer(base, entry):
    if not entry:
        return base
    return base + "".join(f"/{e}" for e in entry)


def _resolve_law(reader, name, laws_doc, resolved, pointer, stack=()):
    if name in resolved:
        return resolved[name]
    if name in stack:
        raise SemanticError(f"circular law reference through {name!r}", pointer)
    if name not in laws_doc:
        raise SemanticError(f"unknown law {name!r}", pointer)
    value = laws_doc[name]
    here = f"/laws/{name}"
    if isinstance(value, dict) and "tilt_of" in value:
        reader.object(value, here, ("tilt_of", "theta"))
        base = _resolve_law(reader, value["tilt_of"], laws_doc, resolved, f"{here}/tilt_of", stack + (name,))
        theta = reader.number(value["theta"], f"{here}/theta")
        try:
            law = tilt(base, theta).tilted
        except ValidationError as exc:
            raise SemanticError(str(exc), f"{here}/theta") from exc
    else:
        law = reader.phase_type(value, here)
    resolved[name] = law
    return law


def _parse_chain(reader, value) -> ChangeChainSpec:
    pointer = "/chain"
    if not isinstance(value, dict):
        raise SchemaError("expected an object", pointer)
    try:
        if "zero_modified_geometric" in value:
            reader.object(value, pointer, ("zero_modified_geometric",))
            g = reader.object(value["zero_modified_geometric"], f"{pointer}/zero_modified_geometric",
                              ("lambda", "mu", "epsilon"))
            args = [reader.number(g[k], f"{pointer}/zero_modified_geometric/{k}")
                    for k in ("lambda", "mu", "epsilon")]
            return zero_modified_geometric(*args)
        reader.object(value, pointer, ("K", "L", "M", "beta"))
        K = reader.matrix(value["K"], f"{pointer}/K")
        L = reader.matrix(value["L"], f"{pointer}/L")
        M = reader.matrix(value["M"], f"{pointer}/M")
        beta = reader.vector(value["beta"], f"{pointer}/beta")
        return ChangeChainSpec.from_blocks(K, L, M, beta)
    except ValidationError as exc:
        name = (exc.entry or ("",))[0]
        field = {"[K L]": "K", "beta": "beta", "M": "M"}.get(name, "")
        raise SemanticError(str(exc), f"{pointer}/{field}" if field else pointer) from exc


def _parse_jump(reader, value):
    pointer = "/jump"
    reader.object(value, pointer, ("type",), ("c", "atoms"))
    try:
        if value["type"] == "deterministic":
            reader.object(value, pointer, ("type", "c"))
            return Deterministic(reader.number(value["c"], f"{pointer}/c"))
        if value["type"] == "discrete":
            reader.object(value, pointer, ("type", "atoms"))
            atoms = reader.matrix(value["atoms"], f"{pointer}/atoms")
            if any(len(a) != 2 for a in atoms):
                raise SchemaError("each atom is a [size, probability] pair", f"{pointer}/atoms")
            return FiniteDiscrete(tuple(tuple(a) for a in atoms))
    except ValidationError as exc:
        raise SemanticError(str(exc), pointer) from exc
    raise SchemaError(f"unknown jump type {value['type']!r}", f"{pointer}/type")


def parse_model(doc, params: dict | None = None) -> ModelSpec:
    """Validate a model document and build its objects."""
    if not isinstance(doc, dict):
        raise SchemaError("model document must be a JSON object", "")
    for key in doc:
        if key not in TOP_KEYS:
            raise SchemaError(f"unexpected key {key!r}", f"/{key}")
    doc = copy.deepcopy(doc)
    base_params = doc.get("params", {})
    if not isinstance(base_params, dict):
        raise SchemaError("expected an object", "/params")
    for name in (params or {}):
        if name not in base_params:
            raise SemanticError(f"parameter {name!r} is not declared by the model", "/params")
    merged = {**base_params, **{k: str(v) for k, v in (params or {}).items()}}
    doc["params"] = merged
    if not merged:
        del doc["params"]
    reader = _Reader(doc, merged)

    theta = f0 = kappa = None
    if "theta" in doc:
        theta = reader.number(doc["theta"], "/theta")
        if theta == 0:
            raise SemanticError("theta must be nonzero", "/theta")
        if "f0" not in doc:
            raise SchemaError("missing key 'f0' (required with theta)", "")
        f0 = reader.phase_type(doc["f0"], "/f0")
        try:
            kappa = mgf_kappa(f0, theta)
        except ValidationError as exc:
            raise SemanticError(str(exc), "/theta") from exc

    if "gamma" in doc:
        gamma = reader.number(doc["gamma"], "/gamma")
        if not gamma > 0:
            raise SemanticError("gamma must be positive", "/gamma")
    elif theta is not None:
        gamma = abs(theta)
    else:
        raise SchemaError("need either theta or gamma", "")

    if "jump" in doc:
        jump = _parse_jump(reader, doc["jump"])
    elif theta is not None:
        jump = Deterministic(abs(kappa))
    else:
        raise SchemaError("need either theta or jump", "")

    if "side" in doc:
        if doc["side"] not in ("SN", "SP"):
            raise SchemaError("side must be 'SN' or 'SP'", "/side")
        side = Side(doc["side"])
        if theta is not None and side != Side.of_theta(theta):
            raise SemanticError(f"side {side.value} contradicts the sign of theta", "/side")
    elif theta is not None:
        side = Side.of_theta(theta)
    else:
        side = Side.SN

    laws_doc = dict(doc.get("laws", {}))
    if not isinstance(doc.get("laws", {}), dict):
        raise SchemaError("expected an object", "/laws")
    resolved = {}
    if f0 is not None:
        if "F0" in laws_doc or "F1" in laws_doc:
            raise SemanticError("law names F0 and F1 are reserved", "/laws")
        resolved["F0"] = f0
        try:
            resolved["F1"] = tilt(f0, theta).tilted
        except ValidationError as exc:
            raise SemanticError(str(exc), "/theta") from exc
    for name in laws_doc:
        _resolve_law(reader, name, laws_doc, resolved, f"/laws/{name}")

    if "chain" in doc:
        chain = _parse_chain(reader, doc["chain"])
        if "regimes" not in doc:
            raise SchemaError("missing key 'regimes' (required with chain)", "")
    else:
        chain = no_change_chain()
    regimes_doc = doc.get("regimes")
    if regimes_doc is None:
        if f0 is None:
            raise SchemaError("missing key 'regimes'", "")
        regimes = RegimeMap({(0, 1): f0, (1, 1): resolved["F1"]})
    else:
        if not isinstance(regimes_doc, dict):
            raise SchemaError("expected an object", "/regimes")
        expected = set(chain.states())
        laws = {}
        for key, value in regimes_doc.items():
            pointer = f"/regimes/{key}"
            m = _REGIME_KEY.match(key)
            if not m:
                raise SchemaError(f"regime keys look like '(0,1)', got {key!r}", pointer)
            state = (int(m.group(1)), int(m.group(2)))
            if state not in expected:
                raise SemanticError(f"unknown regime {key!r} for this chain", pointer)
            if isinstance(value, str):
                laws[state] = _resolve_law(reader, value, laws_doc, resolved, pointer) \
                    if value not in resolved else resolved[value]
            else:
                laws[state] = reader.phase_type(value, pointer)
        missing = expected - set(laws)
        if missing:
            key = "({},{})".format(*sorted(missing)[0])
            raise SemanticError(f"no observation law for regime {key}", "/regimes")
        regimes = RegimeMap(laws)
    try:
        regimes.check(chain)
    except ValidationError as exc:
        raise SemanticError(str(exc), "/regimes") from exc

    return ModelSpec(doc, theta, f0, kappa, gamma, jump, side, chain, regimes, resolved)


def load_text(text: str, params: dict | None = None) -> ModelSpec:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON at line {exc.lineno} column {exc.colno}: {exc.msg}") from exc
    return parse_model(doc, params)


def load_model(path, params: dict | None = None) -> ModelSpec:
    path = Path(path)
    if not path.exists() and not path.is_absolute() and bundled_path(path.name).exists():
        path = bundled_path(path.name)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ParseError(f"cannot read {path}: {exc.strerror}") from exc
    return load_text(text, params)


__all__ = ["ModelSpec", "load_model", "load_text", "parse_model", "canonical_json",
           "bundled_path", "content_hash", "BUNDLED", "ScalekitError"]

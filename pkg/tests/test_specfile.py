import copy
import json

import pytest

from scalekit import numkernel as nk
from scalekit.errors import ParseError, SchemaError, SemanticError
from scalekit.modelbuild import Side
from scalekit.specfile import BUNDLED, bundled_path, canonical_json, load_text, parse_model

from conftest import EXAMPLE2_PARAMS


def raw(name):
    return json.loads(bundled_path(name).read_text())


@pytest.mark.parametrize("name", BUNDLED)
def test_bundled_models_parse(name):
    params = EXAMPLE2_PARAMS if name.startswith("example2") else None
    spec = parse_model(raw(name), params)
    assert spec.side == (Side.SN if "_sn" in name else Side.SP)
    assert spec.map_model().dim in (11, 34)


def test_example2_as_shipped_points_at_f4():
    with pytest.raises(SemanticError) as info:
        parse_model(raw("example2_sn.json"))
    assert info.value.pointer == "/laws/F4/theta"


def test_beta_must_sum_to_one():
    doc = raw("example2_sn.json")
    doc["chain"]["beta"][-1] = "0.090"
    with pytest.raises(SemanticError) as info:
        parse_model(doc, EXAMPLE2_PARAMS)
    assert info.value.pointer == "/chain/beta"


def test_unknown_regime_key():
    doc = raw("example1_sn.json")
    doc["regimes"]["(2,1)"] = "F0"
    with pytest.raises(SemanticError) as info:
        parse_model(doc)
    assert info.value.pointer == "/regimes/(2,1)"


def test_malformed_regime_key():
    doc = raw("example1_sn.json")
    doc["regimes"]["pre"] = doc["regimes"].pop("(0,1)")
    with pytest.raises(SchemaError):
        parse_model(doc)


def test_missing_regime():
    doc = raw("example1_sn.json")
    del doc["regimes"]["(1,2)"]
    with pytest.raises(SemanticError):
        parse_model(doc)


def test_invalid_json():
    with pytest.raises(ParseError):
        load_text('{"theta": "0.1",')


def test_numbers_must_be_decimal_strings():
    doc = raw("example1_sn.json")
    doc["f0"]["T"][0][0] = "minus one"
    with pytest.raises(SchemaError) as info:
        parse_model(doc)
    assert info.value.pointer == "/f0/T/0/0"


def test_bad_generator_entry_pointer():
    doc = raw("example1_sn.json")
    doc["f0"]["T"][1][2] = "-0.10"
    with pytest.raises(SemanticError) as info:
        parse_model(doc)
    assert info.value.pointer == "/f0/T/1/2"


def test_unknown_top_level_key():
    doc = raw("example1_sn.json")
    doc["colour"] = "blue"
    with pytest.raises(SchemaError) as info:
        parse_model(doc)
    assert info.value.pointer == "/colour"


def test_side_must_match_theta():
    doc = raw("example1_sn.json")
    doc["side"] = "SP"
    with pytest.raises(SemanticError):
        parse_model(doc)


def test_param_override():
    spec = parse_model(raw("example1_sn.json"), {"epsilon": "0.5"})
    assert spec.doc["params"]["epsilon"] == "0.5"
    with pytest.raises(SemanticError):
        parse_model(raw("example1_sn.json"), {"gamma": "2"})


def test_canonical_round_trip():
    spec = parse_model(raw("example1_sp.json"), {"epsilon": "0.1"})
    again = parse_model(json.loads(spec.canonical()))
    assert again.canonical() == spec.canonical()
    assert canonical_json({"b": 1, "a": [2]}) == canonical_json({"a": [2], "b": 1})


def test_raw_model_without_theta():
    doc = {
        "gamma": "0.5",
        "jump": {"type": "discrete", "atoms": [["0.4", "0.7"], ["0.9", "0.3"]]},
        "regimes": {"(0,1)": {"alpha": ["1"], "T": [["-1"]]}, "(1,1)": {"alpha": ["1"], "T": [["-2"]]}},
    }
    spec = parse_model(doc)
    assert spec.theta is None and spec.side == Side.SN
    assert spec.map_model().dim == 2
    with pytest.raises(SemanticError):
        spec.problem(1)


def test_parse_does_not_mutate_input():
    doc = raw("example1_sn.json")
    before = copy.deepcopy(doc)
    parse_model(doc, {"epsilon": "0.1"})
    assert doc == before


def test_parameters_are_exact_decimals():
    spec = parse_model(raw("example1_sn.json"), {"epsilon": "0.1"})
    assert spec.chain.L[0, 1] == nk.big("0.1") * nk.big("0.1")

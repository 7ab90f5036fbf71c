import json
import re
from importlib import resources

import numpy as np
import pytest

from darse.io import ParseError, case_to_json, parse_case, parse_json_case, parse_matpower

TWO_BUS = {"name": "two", "buses": [{"id": 1}, {"id": 2, "vm": 0.98, "va_deg": -2.0}],
           "lines": [{"from": 1, "to": 2, "g": 1.0, "b": -4.0, "shunt_b": 0.01}]}


def _branch_pairs(name):
    """Independent count: distinct in-service bus pairs in the branch block."""
    text = resources.files("darse.data").joinpath(f"{name}.m").read_text()
    body = re.search(r"mpc\.branch\s*=\s*\[(.*?)\];", text, re.S).group(1)
    pairs, nbus = set(), 0
    for ln in body.splitlines():
        toks = ln.split("%")[0].replace(";", " ").split()
        if len(toks) >= 11 and float(toks[10]) != 0:
            pairs.add(frozenset((int(toks[0]), int(toks[1]))))
    bus = re.search(r"mpc\.bus\s*=\s*\[(.*?)\];", text, re.S).group(1)
    nbus = sum(1 for ln in bus.splitlines() if ln.split("%")[0].strip())
    return nbus, len(pairs)


def test_json_two_bus(tmp_path):
    p = tmp_path / "two.json"
    p.write_text(json.dumps(TWO_BUS))
    case = parse_case(p)
    g = case.to_grid()
    assert (g.N, g.E) == (2, 1)
    assert case.lines[0][2] == 1 - 4j and case.lines[0][3] == 0.01j
    s = case.base_state()
    assert s[0] == 1.0 and s[1] == pytest.approx(0.98 * np.cos(np.deg2rad(-2)))


@pytest.mark.parametrize("name", ["case14", "case118"])
def test_builtin_counts(name):
    case = parse_case(name)
    nbus, npairs = _branch_pairs(name)
    g = case.to_grid()
    assert g.N == nbus and g.E == npairs
    assert g.is_connected()


def test_case14_shape():
    g = parse_case("case14").to_grid()
    assert (g.N, g.E) == (14, 20)


def test_unsupported_features_reported():
    case = parse_case("case118")
    notes = " ".join(case.unsupported)
    assert "tap ratio" in notes and "shunt" in notes and "merged" in notes


def test_json_round_trip():
    case = parse_case("case14")
    back = parse_json_case(case_to_json(case))
    assert back.bus_ids == case.bus_ids
    assert [(f, t) for f, t, *_ in back.lines] == [(f, t) for f, t, *_ in case.lines]
    for a, b in zip(back.lines, case.lines):
        assert a[2] == b[2] and a[3] == b[3]
    np.testing.assert_array_equal(back.base_state(), case.base_state())


@pytest.mark.parametrize("text,line", [
    ("mpc.bus = [1 3 0 0 0 0 1 1 0;\n 2 1 0 0 0 0 1 1 x;];\nmpc.branch = [1 2 0 0.1 0];", 2),
    ("mpc.bus = [1 3 0 0 0 0 1 1 0;];", None),
])
def test_malformed_matpower(text, line):
    with pytest.raises(ParseError) as e:
        parse_matpower(text)
    assert e.value.line == line


def test_malformed_json_position():
    with pytest.raises(ParseError) as e:
        parse_json_case('{"buses": [\n  {"id": 1},,\n]}')
    assert e.value.line == 2 and e.value.column is not None


def test_json_bad_references():
    bad = dict(TWO_BUS, lines=[{"from": 1, "to": 3, "g": 1.0, "b": -1.0}])
    with pytest.raises(ParseError):
        parse_json_case(json.dumps(bad))
    with pytest.raises(ParseError):
        parse_json_case(json.dumps({"buses": [{"id": 1}]}))


def test_missing_file(tmp_path):
    with pytest.raises(FileNotFoundError):
        parse_case(tmp_path / "nope.m")

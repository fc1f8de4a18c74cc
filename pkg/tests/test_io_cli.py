import json
import math
import subprocess
import sys
from fractions import Fraction as Fr
from pathlib import Path

import numpy as np
import pytest

from sparsedom import io as sio
from sparsedom.cli import load_scenario, main
from sparsedom.dyadic import Box, CubeId, DyadicTree
from sparsedom.errors import ConfigError

ROOT = Path(__file__).resolve().parents[1]
SCENARIOS = sorted((ROOT / "scenarios").glob("*.json"))


def test_dumps_is_sorted_and_handles_non_finite():
    obj = {"b": [1.0, math.inf, -math.inf, math.nan], "a": np.float64(0.1), "c": Fr(3, 4), "d": np.arange(2)}
    text = sio.dumps(obj)
    assert text == sio.dumps(dict(reversed(list(obj.items()))))
    back = json.loads(text)
    assert list(back) == ["a", "b", "c", "d"]
    assert back["b"] == [1.0, "inf", "-inf", "nan"] and back["a"] == 0.1 and back["c"] == "3/4"
    assert sio.to_jsonable(Box((Fr(-1),), Fr(2))) == {"corner": ["-1"], "side": "2"}
    assert sio.to_jsonable(CubeId(2, (3,))) == {"level": 2, "index": [3]}
    with pytest.raises(TypeError):
        sio.to_jsonable(object())


def test_float_format_roundtrips():
    r = np.random.default_rng(0)
    for x in r.normal(size=200) * 10.0 ** r.integers(-300, 300, 200):
        assert float(sio.fmt_float(x)) == x


def test_csv_uses_crlf(tmp_path):
    p = tmp_path / "t.csv"
    sio.write_csv(p, ["a", "b"], [(1, 0.5), (2, True)])
    assert p.read_bytes() == b"a,b\r\n1,0.5\r\n2,true\r\n"
    assert sio.csv_string(["a"], [(0.25,)]) == "a\r\n0.25\r\n"


def test_leaf_and_cube_csv_roundtrip(tmp_path):
    tree = DyadicTree(2, 2)
    r = np.random.default_rng(1)
    v = r.normal(size=tree.n_leaves)
    sio.write_leaf_csv(tmp_path / "f.csv", tree, v)
    np.testing.assert_array_equal(sio.read_leaf_csv(tmp_path / "f.csv", tree), v)
    assert json.loads((tmp_path / "f.csv.json").read_text())["n"] == 2
    c = r.normal(size=tree.n_cubes)
    sio.write_cube_csv(tmp_path / "c.csv", tree, c)
    np.testing.assert_array_equal(sio.read_cube_csv(tmp_path / "c.csv", tree), c)


@pytest.mark.parametrize(
    "body,needle",
    [
        ("leaf,value\r\n0,1\r\n1,x\r\n2,1\r\n3,1\r\n", "row 3"),
        ("leaf,value\n0,1\n0,2\n", "row 3"),
        ("leaf,value\n0,1\n1,1\n2,1\n", "missing leaves"),
        ("leaf,value\n0,1\n9,1\n", "row 3"),
        ("leaf,value\n0,1,2\n", "row 2"),
        ("idx,val\n", "row 1"),
        ("leaf,value\n0,inf\n", "row 2"),
    ],
)
def test_malformed_leaf_csv_names_the_row(tmp_path, body, needle):
    tree = DyadicTree(1, 2)
    p = tmp_path / "bad.csv"
    p.write_text(body)
    with pytest.raises(ConfigError, match=needle):
        sio.read_leaf_csv(p, tree)


def test_weight_csv_positivity(tmp_path):
    tree = DyadicTree(1, 1)
    p = tmp_path / "w.csv"
    p.write_text("leaf,value\n0,1\n1,0\n")
    with pytest.raises(ConfigError, match="row 3"):
        sio.read_leaf_csv(p, tree, "weight", positive=True)


def test_cube_csv_errors(tmp_path):
    tree = DyadicTree(1, 2)
    p = tmp_path / "c.csv"
    p.write_text("level,i0,value\n1,5,1.0\n")
    with pytest.raises(ConfigError, match="row 2"):
        sio.read_cube_csv(p, tree)
    p.write_text("level,i0,value\n1,0,1.0\n1,0,2.0\n")
    with pytest.raises(ConfigError, match="row 3"):
        sio.read_cube_csv(p, tree)


def test_matrix_roundtrip(tmp_path):
    A = np.random.default_rng(2).normal(size=(5, 3))
    sio.write_matrix(tmp_path / "A.bin", A, {"what": "test"})
    B, meta = sio.read_matrix(tmp_path / "A.bin")
    np.testing.assert_array_equal(A, B)
    assert meta["rows"] == 5 and meta["cols"] == 3 and meta["what"] == "test"


def _tree_bytes(d: Path) -> dict:
    return {p.relative_to(d).as_posix(): p.read_bytes() for p in sorted(d.rglob("*")) if p.is_file()}


@pytest.mark.parametrize("scenario", SCENARIOS, ids=lambda p: p.stem)
def test_cli_runs_are_byte_identical(tmp_path, scenario):
    outs = []
    for k in range(2):
        out = tmp_path / f"run{k}"
        assert main(["run", "--scenario", str(scenario), "--out", str(out)]) == 0
        outs.append(_tree_bytes(out))
    assert outs[0] == outs[1] and outs[0]
    summary = json.loads(outs[0]["summary.json"])
    assert summary["passed"] is True


def test_cli_seed_override_changes_random_inputs(tmp_path):
    sc = ROOT / "scenarios" / "czo.json"
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["eps-coefficients", "--scenario", str(sc), "--out", str(a), "--seed", "1"]) == 0
    assert main(["sparsify-czo", "--scenario", str(sc), "--out", str(b), "--seed", "1"]) == 0
    assert (a / "summary.json").exists() and (b / "summary.json").exists()
    assert load_scenario(sc, seed=3).seed == 3


def _scenario(tmp_path, **extra):
    obj = {"model": {"n": 1, "L": 2}, "tasks": [{"task": "ap-constant", "p": 2}]}
    obj.update(extra)
    p = tmp_path / "s.json"
    p.write_text(json.dumps(obj))
    return p


def test_cli_config_errors_exit_2(tmp_path, capsys):
    (tmp_path / "w.csv").write_text("leaf,value\n0,1\n1,-2\n2,1\n3,1\n")
    p = _scenario(tmp_path, weight={"kind": "csv", "path": "w.csv"})
    assert main(["run", "--scenario", str(p), "--out", str(tmp_path / "o")]) == 2
    err = capsys.readouterr().err
    assert "row 3" in err and "weight" in err
    assert main(["run", "--scenario", str(_scenario(tmp_path, colour=1)), "--out", str(tmp_path / "o")]) == 2
    assert main(["run", "--scenario", str(tmp_path / "missing.json")]) == 2
    bad = tmp_path / "broken.json"
    bad.write_text("{ not json")
    assert main(["run", "--scenario", str(bad)]) == 2
    assert main(["run", "--scenario", str(_scenario(tmp_path)), "--seed", "-1"]) == 2


def test_cli_leaf_cap_exit_3(tmp_path):
    p = _scenario(tmp_path, model={"n": 2, "L": 8})
    assert main(["run", "--scenario", str(p), "--leaf-cap", "1024", "--out", str(tmp_path / "o")]) == 3


def test_selftest_exit_zero(capsys):
    assert main(["selftest", "--seed", "3"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines and all(line.startswith("PASS ") for line in lines)


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "sparsedom", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0 and "selftest" in proc.stdout

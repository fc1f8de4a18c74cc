"""Serialization: deterministic JSON reports, CSV tables and leaf/cube value files."""
from __future__ import annotations

import csv
import dataclasses
import io
import json
import math
from fractions import Fraction
from pathlib import Path

import numpy as np

from .dyadic import Box, CubeId, DyadicTree
from .errors import ConfigError


def fmt_float(x: float) -> str:
    return "%.17g" % x


def to_jsonable(obj):
    """Plain JSON structure; non-finite floats become the strings "inf", "-inf", "nan"."""
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        return {f.name: to_jsonable(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [to_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if math.isnan(x):
            return "nan"
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return x
    if isinstance(obj, Fraction):
        return str(obj)
    if isinstance(obj, Box):
        return {"corner": [str(c) for c in obj.corner], "side": str(obj.side)}
    if isinstance(obj, CubeId):
        return {"level": obj.level, "index": list(obj.index)}
    if obj is None or isinstance(obj, str):
        return obj
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def _encode(o, indent, level):
    pad = "\n" + " " * (indent * (level + 1)) if indent else ""
    end = "\n" + " " * (indent * level) if indent else ""
    if isinstance(o, dict):
        if not o:
            yield "{}"
            return
        yield "{"
        for k, key in enumerate(sorted(o)):
            yield ("," if k else "") + pad + json.dumps(key) + ": "
            yield from _encode(o[key], indent, level + 1)
        yield end + "}"
    elif isinstance(o, list):
        if not o:
            yield "[]"
            return
        yield "["
        for k, v in enumerate(o):
            yield ("," if k else "") + pad
            yield from _encode(v, indent, level + 1)
        yield end + "]"
    elif isinstance(o, bool) or o is None:
        yield json.dumps(o)
    elif isinstance(o, float):
        yield fmt_float(o)
    else:
        yield json.dumps(o)


def dumps(obj, indent: int = 2) -> str:
    """Byte-stable JSON: sorted keys, %.17g floats."""
    return "".join(_encode(to_jsonable(obj), indent, 0)) + "\n"


def write_json(path, obj) -> None:
    Path(path).write_text(dumps(obj), encoding="utf-8")


def _cell(v):
    if isinstance(v, (float, np.floating)):
        return fmt_float(float(v))
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    return v


def write_csv(path, header, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\r\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_cell(v) for v in r])


def csv_string(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\r\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_cell(v) for v in r])
    return buf.getvalue()


# --------------------------------------------------------------------------
# leaf and cube value files
# --------------------------------------------------------------------------

def tree_header(tree: DyadicTree) -> dict:
    return {"n": tree.dim, "L": tree.depth, "root_box": to_jsonable(tree.root_box)}


def write_leaf_csv(path, tree: DyadicTree, values) -> None:
    """Leaf values as CSV (leaf,value) with a JSON header sidecar ``<path>.json``."""
    values = np.asarray(values, float)
    write_csv(path, ["leaf", "value"], [(i, float(v)) for i, v in enumerate(values)])
    write_json(str(path) + ".json", tree_header(tree))


def _parse_float(text: str, where: str) -> float:
    try:
        x = float(text)
    except ValueError:
        raise ConfigError(f"{where}: cannot parse {text!r} as a number") from None
    if not math.isfinite(x):
        raise ConfigError(f"{where}: value {text!r} is not finite")
    return x


def read_leaf_csv(path, tree: DyadicTree, what: str = "values", positive=False, nonnegative=False) -> np.ndarray:
    """Read a (leaf,value) CSV; every leaf exactly once. Errors name the file row."""
    out = np.full(tree.n_leaves, np.nan)
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows or [c.strip() for c in rows[0]] != ["leaf", "value"]:
        raise ConfigError(f"{what} CSV {path}: row 1: header must be 'leaf,value'")
    for k, row in enumerate(rows[1:], start=2):
        where = f"{what} CSV {path}: row {k}"
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != 2:
            raise ConfigError(f"{where}: expected 2 columns, got {len(row)}")
        try:
            i = int(row[0])
        except ValueError:
            raise ConfigError(f"{where}: leaf index {row[0]!r} is not an integer") from None
        if not 0 <= i < tree.n_leaves:
            raise ConfigError(f"{where}: leaf index {i} outside [0, {tree.n_leaves})")
        if not np.isnan(out[i]):
            raise ConfigError(f"{where}: leaf {i} listed twice")
        x = _parse_float(row[1], where)
        if positive and x <= 0:
            raise ConfigError(f"{where}: {what} must be positive, got {x!r}")
        if nonnegative and x < 0:
            raise ConfigError(f"{where}: {what} must be nonnegative, got {x!r}")
        out[i] = x
    missing = np.flatnonzero(np.isnan(out))
    if missing.size:
        raise ConfigError(f"{what} CSV {path}: missing leaves, first {int(missing[0])}")
    return out


def write_cube_csv(path, tree: DyadicTree, values) -> None:
    """Per-cube values as CSV (level, i0..i{n-1}, value)."""
    values = np.asarray(values, float)
    header = ["level"] + [f"i{k}" for k in range(tree.dim)] + ["value"]
    rows = []
    for g in range(tree.n_cubes):
        q = tree.cube(g)
        rows.append([q.level, *q.index, float(values[g])])
    write_csv(path, header, rows)


def read_cube_csv(path, tree: DyadicTree, what: str = "coefficients", default: float = 0.0) -> np.ndarray:
    out = np.full(tree.n_cubes, float(default))
    seen = set()
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    want = ["level"] + [f"i{k}" for k in range(tree.dim)] + ["value"]
    if not rows or [c.strip() for c in rows[0]] != want:
        raise ConfigError(f"{what} CSV {path}: row 1: header must be {','.join(want)}")
    for k, row in enumerate(rows[1:], start=2):
        where = f"{what} CSV {path}: row {k}"
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(want):
            raise ConfigError(f"{where}: expected {len(want)} columns, got {len(row)}")
        try:
            level = int(row[0])
            idx = tuple(int(c) for c in row[1:-1])
            q = CubeId(level, idx)
            g = tree.gid(q)
        except (ValueError, IndexError) as exc:
            raise ConfigError(f"{where}: bad cube ({exc})") from None
        if g in seen:
            raise ConfigError(f"{where}: cube listed twice")
        seen.add(g)
        out[g] = _parse_float(row[-1], where)
    return out


def write_matrix(path, A: np.ndarray, meta: dict) -> None:
    """Row-major float64 binary with a JSON sidecar ``<path>.json``."""
    A = np.ascontiguousarray(A, dtype="<f8")
    Path(path).write_bytes(A.tobytes(order="C"))
    write_json(str(path) + ".json", {**meta, "rows": A.shape[0], "cols": A.shape[1], "dtype": "float64-le"})


def read_matrix(path) -> tuple[np.ndarray, dict]:
    meta = json.loads(Path(str(path) + ".json").read_text(encoding="utf-8"))
    A = np.frombuffer(Path(path).read_bytes(), dtype="<f8").reshape(meta["rows"], meta["cols"]).copy()
    return A, meta

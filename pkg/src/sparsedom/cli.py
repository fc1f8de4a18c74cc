"""Command line front-end: scenario files in, JSON reports and CSV tables out.

Every task report separates ``exact`` assertions (identities that must hold
to machine precision) from ``measured`` constants.  The exit status depends
on the exact part only.
"""
from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np

from . import io as sio
from . import instances
from .dyadic import DEFAULT_LEAF_CAP, Box, CubeId, DyadicTree
from .errors import ConfigError, GeometryInfeasibleError, ResourceCapError, SparsedomError
from .measure import RadonMeasure, StepFunction, Weight, ap_constant, eps_q_ap_constant
from .multiplier import CoefficientField, DecayProfile

log = logging.getLogger("sparsedom")

TASKS = (
    "decompose", "sparsify-haar", "sparsify-czo", "ap-constant", "weighted-bound",
    "compactness-scan", "weak-compactness", "eps-coefficients",
)
ALIASES = {"czdecomp-suite": "decompose", "sparse-haar": "sparsify-haar"}
SCENARIO_KEYS = {"model", "measure", "weight", "coefficients", "function", "kernel", "seed", "tasks", "name"}

EXIT_OK, EXIT_EXACT_FAIL, EXIT_CONFIG, EXIT_CAP = 0, 1, 2, 3


# --------------------------------------------------------------------------
# scenario parsing
# --------------------------------------------------------------------------

@dataclass
class Scenario:
    tree: DyadicTree
    raw: dict
    base: Path
    seed: int
    tasks: list = field(default_factory=list)

    def rng(self, label: str) -> np.random.Generator:
        """Independent stream per named component, fixed by the seed."""
        tag = [ord(c) for c in label]
        return np.random.default_rng(np.random.SeedSequence([self.seed & (2**64 - 1), *tag]))

    def path(self, p: str) -> Path:
        q = Path(p)
        return q if q.is_absolute() else self.base / q


def _require(obj, key, where, kind=None):
    if not isinstance(obj, dict) or key not in obj:
        raise ConfigError(f"{where}: missing field '{key}'")
    v = obj[key]
    if kind is not None and not isinstance(v, kind):
        raise ConfigError(f"{where}.{key}: expected {getattr(kind, '__name__', kind)}, got {type(v).__name__}")
    return v


def _box_from(obj, where) -> Box:
    corner = _require(obj, "corner", where, list)
    side = _require(obj, "side", where)
    try:
        return Box(tuple(Fraction(str(c)) for c in corner), Fraction(str(side)))
    except (ValueError, ZeroDivisionError) as exc:
        raise ConfigError(f"{where}: {exc}") from None


def load_scenario(path, seed: int | None = None, leaf_cap: int | None = DEFAULT_LEAF_CAP) -> Scenario:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read scenario {path}: {exc.strerror}") from None
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: the scenario must be a JSON object")
    extra = set(raw) - SCENARIO_KEYS
    if extra:
        raise ConfigError(f"{path}: unknown field(s) {', '.join(sorted(extra))}")
    model = _require(raw, "model", "scenario", dict)
    n = _require(model, "n", "model", int)
    L = _require(model, "L", "model", int)
    root = _box_from(model["root_box"], "model.root_box") if "root_box" in model else None
    try:
        tree = DyadicTree(n, L, root.corner if root else None, root.side if root else 1, leaf_cap=leaf_cap)
    except ResourceCapError:
        raise
    except ValueError as exc:
        raise ConfigError(f"model: {exc}") from None
    s = int(raw.get("seed", 0)) if seed is None else int(seed)
    tasks = raw.get("tasks", [])
    if not isinstance(tasks, list):
        raise ConfigError("tasks: expected a list")
    for k, t in enumerate(tasks):
        name = _require(t, "task", f"tasks[{k}]", str)
        if ALIASES.get(name, name) not in TASKS:
            raise ConfigError(f"tasks[{k}].task: unknown task {name!r}")
    sc = Scenario(tree, raw, path.parent, s, tasks)
    # resolve inputs eagerly so that file errors surface before any task runs
    build_measure(sc)
    if "weight" in raw:
        build_weight(sc)
    if "coefficients" in raw:
        build_coefficients(sc)
    if "function" in raw:
        build_function(sc)
    return sc


def build_measure(sc: Scenario) -> RadonMeasure:
    cfg = sc.raw.get("measure", {"kind": "uniform"})
    kind = _require(cfg, "kind", "measure", str)
    tree = sc.tree
    if kind == "uniform":
        return RadonMeasure.uniform(tree)
    if kind == "csv":
        vals = sio.read_leaf_csv(sc.path(_require(cfg, "path", "measure", str)), tree, "measure", nonnegative=True)
        return RadonMeasure(tree, vals)
    if kind == "profile":
        return RadonMeasure(tree, instances.random_measure_mass(tree, sc.rng("measure"), cfg.get("name")))
    raise ConfigError(f"measure.kind: unknown kind {kind!r}")


def build_weight(sc: Scenario) -> Weight:
    cfg = sc.raw.get("weight", {"kind": "constant"})
    kind = _require(cfg, "kind", "weight", str)
    tree = sc.tree
    if kind == "constant":
        return Weight(tree, np.full(tree.n_leaves, float(cfg.get("value", 1.0))))
    if kind == "csv":
        return Weight(tree, sio.read_leaf_csv(sc.path(_require(cfg, "path", "weight", str)), tree, "weight", positive=True))
    if kind == "power":
        x = tree.leaf_centers()
        x0 = np.asarray(cfg.get("point", [0.0] * tree.dim), float)
        r = np.sqrt(((x - x0) ** 2).sum(axis=1)) + float(tree.leaf_side) / 4
        return Weight(tree, r ** float(_require(cfg, "alpha", "weight")))
    if kind == "profile":
        try:
            return Weight(tree, instances.random_weight_values(tree, sc.rng("weight"), cfg.get("name")))
        except ValueError as exc:
            raise ConfigError(f"weight.name: {exc}") from None
    raise ConfigError(f"weight.kind: unknown kind {kind!r}")


def build_coefficients(sc: Scenario) -> CoefficientField:
    cfg = sc.raw.get("coefficients", {"kind": "constant", "value": 1.0})
    kind = _require(cfg, "kind", "coefficients", str)
    tree = sc.tree
    if kind == "constant":
        return CoefficientField.constant(tree, float(cfg.get("value", 1.0)))
    if kind == "csv":
        return CoefficientField(tree, sio.read_cube_csv(sc.path(_require(cfg, "path", "coefficients", str)), tree))
    if kind == "profile":
        try:
            prof = DecayProfile.from_json(_require(cfg, "profile", "coefficients", dict))
            return CoefficientField.from_profile(tree, prof)
        except ValueError as exc:
            raise ConfigError(f"coefficients.profile: {exc}") from None
    if kind == "random":
        try:
            return instances.random_coefficients(tree, sc.rng("coefficients"), cfg.get("name"))
        except ValueError as exc:
            raise ConfigError(f"coefficients.name: {exc}") from None
    raise ConfigError(f"coefficients.kind: unknown kind {kind!r}")


def build_function(sc: Scenario, key: str = "function") -> StepFunction:
    cfg = sc.raw.get(key, {"kind": "random"})
    kind = _require(cfg, "kind", key, str)
    tree = sc.tree
    if kind == "indicator":
        c = _require(cfg, "cube", key, dict)
        try:
            q = CubeId(int(c["level"]), tuple(int(i) for i in c["index"]))
            tree.check(q)
        except (KeyError, ValueError, TypeError) as exc:
            raise ConfigError(f"{key}.cube: {exc}") from None
        return StepFunction.indicator(tree, q, float(cfg.get("value", 1.0)))
    if kind == "box":
        box = _box_from(_require(cfg, "box", key, dict), f"{key}.box")
        from .sparse import box_leaf_mask

        m = box_leaf_mask(tree, box)
        v = np.zeros(tree.n_leaves)
        if cfg.get("random", False):
            r = sc.rng(key)
            lo, hi = cfg.get("range", [0.0, 1.0])
            v[m] = r.uniform(float(lo), float(hi), int(m.sum()))
        else:
            v[m] = float(cfg.get("value", 1.0))
        return StepFunction(tree, v)
    if kind == "csv":
        return StepFunction(tree, sio.read_leaf_csv(sc.path(_require(cfg, "path", key, str)), tree, key))
    if kind == "random":
        try:
            return instances.random_function(tree, sc.rng(key), cfg.get("name"), bool(cfg.get("nonnegative", False)))
        except ValueError as exc:
            raise ConfigError(f"{key}.name: {exc}") from None
    raise ConfigError(f"{key}.kind: unknown kind {kind!r}")


def build_operator(sc: Scenario, threads: int = 1):
    from .czo import CompactCZKernel, KernelOperator

    cfg = sc.raw.get("kernel")
    if cfg is None:
        raise ConfigError("this task needs a 'kernel' entry in the scenario")
    near = cfg.get("near") if isinstance(cfg, dict) else None
    kernel = CompactCZKernel.from_json(cfg, dim=sc.tree.dim)
    if kernel.dim != sc.tree.dim:
        raise ConfigError("kernel.dim differs from model.n")
    return KernelOperator(kernel, sc.tree, near=near, threads=threads)


# --------------------------------------------------------------------------
# task runners
# --------------------------------------------------------------------------

@dataclass
class TaskResult:
    task: str
    params: dict
    exact: dict
    measured: dict
    tables: dict = field(default_factory=dict)  # name -> (header, rows)
    data: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(bool(v) for v in self.exact.values())

    def report(self) -> dict:
        return {
            "task": self.task, "params": self.params, "exact": self.exact, "measured": self.measured,
            "data": self.data, "passed": self.passed,
        }


def _cube_json(tree, q):
    return {"level": q.level, "index": list(q.index), "box": str(tree.box(q))}


def task_decompose(sc: Scenario, params: dict, threads: int) -> TaskResult:
    from .czdecomp import cz_decompose, verify_cz
    from .errors import PreconditionError

    tree = sc.tree
    mu = build_measure(sc)
    exact, measured, data, tables = {}, {}, {}, {}
    trials = int(params.get("trials", 0))
    if "function" in sc.raw or "lam" in params:
        f = build_function(sc)
        fv = f.values
        parts = {"f": fv} if np.all(fv >= 0) else {"f_plus": np.maximum(fv, 0), "f_minus": np.maximum(-fv, 0)}
        for label, v in parts.items():
            l1 = float((np.abs(v) * mu.leaf_mass).sum())
            lam = float(params.get("lam", 2.0 * l1 / mu.total if mu.total > 0 else 1.0))
            d = cz_decompose(StepFunction(tree, v), mu, lam)
            r = verify_cz(d)
            data[label] = {
                "lambda": lam,
                "stopping_cubes": [_cube_json(tree, q) for q in d.stopping_cubes],
                "good_l2_sq": float((d.good.values**2 * mu.leaf_mass).sum()),
                "f_l1": l1,
                "report": r,
            }
            exact[f"{label}_checks"] = r.ok
            tables[f"{label}_good"] = (["leaf", "value"], [(i, float(x)) for i, x in enumerate(d.good.values)])
            for j, (q, b) in enumerate(d.bad_parts):
                tables[f"{label}_bad{j}"] = (["leaf", "value"], [(i, float(x)) for i, x in enumerate(b.values)])
    if trials:
        rng = sc.rng("decompose")
        worst = {"split_residual": 0.0, "mean_zero_residual": 0.0, "good_l2_ratio": 0.0, "bad_l1_ratio": 0.0,
                 "mass_ratio": 0.0}
        ok = done = 0
        for _ in range(trials):
            m = instances.random_measure(tree, rng)
            if m.total <= 0:
                continue
            fv = instances.random_function_values(tree, rng, nonnegative=True)
            l1 = float((fv * m.leaf_mass).sum())
            if l1 <= 0:
                continue
            lam = l1 / m.total * float(rng.uniform(1.01, 8.0))
            try:
                r = verify_cz(cz_decompose(StepFunction(tree, fv), m, lam))
            except PreconditionError:
                continue
            ok += int(r.ok)
            done += 1
            for k in worst:
                worst[k] = max(worst[k], float(getattr(r, k)))
        measured["suite_worst"] = worst
        measured["suite_trials"] = trials
        measured["suite_completed"] = done
        exact["suite_all_checks"] = ok == done
    return TaskResult("decompose", params, exact, measured, tables, data)


def task_sparsify_haar(sc: Scenario, params: dict, threads: int) -> TaskResult:
    from .czdecomp import cz_decompose
    from .sparse import build_sparse_haar

    tree = sc.tree
    mu = build_measure(sc)
    f = build_function(sc)
    eps = build_coefficients(sc)
    res = build_sparse_haar(f, eps, mu, weights=params.get("weights", "inclusive"), safety=float(params.get("safety", 2.0)))
    r = res.report
    sp_ratios = res.family.children_map()
    from .sparse import verify_sparseness

    pk = verify_sparseness(res.family, mu)
    fam = []
    for i, m in enumerate(res.family.members):
        fam.append({"cube": _cube_json(tree, m.cube), "generation": res.family.generation[i],
                    "packing_ratio": pk.ratios[i], "children": len(sp_ratios[i])})
    fabs = np.abs(f.values)
    l1 = float((fabs * mu.leaf_mass).sum())
    lam = float(params.get("lam", 2.0 * l1 / mu.total if mu.total > 0 else 1.0))
    cz = cz_decompose(StepFunction(tree, fabs), mu, lam) if l1 > 0 else None
    data = {
        "family": fam,
        "cz_lambda": lam,
        "cz_stopping_cubes": [_cube_json(tree, q) for q in cz.stopping_cubes] if cz else [],
    }
    exact = {"packing": r.packing_ok, "halves_packing": r.halves_packing_ok, "C_emp_finite": math.isfinite(r.C_emp)}
    measured = {"C": r.C, "C_M": r.C_M, "C_T": r.C_T, "C_emp": r.C_emp, "C_emp_all_leaves": r.C_emp_all,
                "packing_max": r.packing_max, "max_exceptional_ratio": r.max_exceptional_ratio,
                "recursion_depth": r.recursion_depth, "n_members": r.n_members}
    tables = {"domination": (["leaf", "Tf", "Sf"], [(i, float(a), float(b)) for i, (a, b) in
                                                     enumerate(zip(res.Tf.values, res.Sf.values))])}
    return TaskResult("sparsify-haar", params, exact, measured, tables, data)


def task_sparsify_czo(sc: Scenario, params: dict, threads: int) -> TaskResult:
    from .czo import build_sparse_czo

    op = build_operator(sc, threads)
    f = build_function(sc)
    N = int(params.get("N", 1))
    kw = {}
    if "B" in params:
        kw["B"] = _box_from(params["B"], "sparsify-czo.B")
    if "Q0" in params:
        kw["Q0"] = _box_from(params["Q0"], "sparsify-czo.Q0")
    if "partition_side" in params:
        kw["partition_side"] = Fraction(str(params["partition_side"]))
    res = build_sparse_czo(f, op, N, safety=float(params.get("safety", 2.0)), **kw)
    r = res.report
    exact = {"packing": r.packing_ok, "halves_packing": r.halves_packing_ok}
    measured = {k: getattr(r, k) for k in (
        "eps", "C_M", "C_T", "C_Tstar", "c_prime", "domination", "C_emp", "domination_support", "C_annulus",
        "max_exceptional_ratio", "max_eprime_ratio", "xprime_ok", "packing_max", "recursion_depth",
        "n_members", "n_partition", "partition_side")}
    data = {"Q0": r.Q0, "B": r.B, "annuli": [
        {"j": a.j, "box": str(a.box), "leaves": a.n_leaves, "avg": a.avg, "C_ttilde": a.C_ttilde,
         "C_tail": a.C_tail, "C_over_eps": a.C_over_eps} for a in r.annuli]}
    tables = {"domination": (["leaf", "tail_Tf", "Sf"], [(i, float(a), float(b)) for i, (a, b) in
                                                         enumerate(zip(res.Gf.values, res.Sf.values))])}
    return TaskResult("sparsify-czo", params, exact, measured, tables, data)


def task_ap_constant(sc: Scenario, params: dict, threads: int) -> TaskResult:
    from .weighted import dual_constants

    mu = build_measure(sc)
    w = build_weight(sc)
    ps = params.get("p", [2.0])
    ps = ps if isinstance(ps, list) else [ps]
    eps = build_coefficients(sc) if "coefficients" in sc.raw else None
    rows, exact, measured = [], {}, {}
    for p in ps:
        p = float(p)
        a = ap_constant(w, mu, p)
        row = [p, a]
        exact[f"ap_at_least_one_p{p:g}"] = a >= 1.0 - 1e-12
        if eps is not None:
            q = float(params.get("q", 1.0))
            aq = eps_q_ap_constant(w, mu, p, q, eps)
            lhs, rhs = dual_constants(w, mu, p, eps)
            gap = abs(lhs - rhs) / max(abs(lhs), abs(rhs), 1e-300)
            exact[f"dual_identity_p{p:g}"] = gap <= 1e-10
            row += [aq, gap]
        rows.append(row)
        measured[f"p{p:g}"] = dict(zip(["p", "ap", "eps_q_ap", "dual_gap"], row))
    header = ["p", "ap"] + (["eps_q_ap", "dual_gap"] if eps is not None else [])
    return TaskResult("ap-constant", params, exact, measured, {"ap": (header, rows)})


def task_weighted_bound(sc: Scenario, params: dict, threads: int) -> TaskResult:
    from .weighted import weighted_bound_check

    mu = build_measure(sc)
    w = build_weight(sc)
    eps = build_coefficients(sc)
    ps = params.get("p", [1.5, 2.0, 3.0])
    ps = ps if isinstance(ps, list) else [ps]
    rng = sc.rng("weighted-bound")
    exact, measured, rows = {}, {}, []
    for p in ps:
        p = float(p)
        r = weighted_bound_check(eps, w, mu, p, trials=int(params.get("trials", 20)), rng=rng,
                                 holder_sets=int(params.get("holder_sets", 200)))
        exact[f"p{p:g}_sets_disjoint"] = r.sets_disjoint
        exact[f"p{p:g}_sets_mass"] = r.sets_mass_ok
        exact[f"p{p:g}_holder"] = r.holder_ok
        exact[f"p{p:g}_duality"] = r.duality_gap <= 1e-8
        measured[f"p{p:g}"] = {"B": r.B, "max_ratio": r.max_ratio, "normalized_max": r.normalized_max,
                               "exact_norm_l2": r.exact_norm_l2, "duality_gap": r.duality_gap,
                               "min_set_ratio": r.min_set_ratio, "holder_max": r.holder_max, "n_sets": r.n_sets}
        rows.append([p, r.B, r.max_ratio, r.normalized_max, r.duality_gap])
    return TaskResult("weighted-bound", params, exact, measured,
                      {"weighted": (["p", "B", "max_ratio", "normalized_max", "duality_gap"], rows)})


def task_compactness_scan(sc: Scenario, params: dict, threads: int) -> TaskResult:
    from .weighted import compactness_scan

    w = build_weight(sc)
    source = params.get("source", "kernel" if "kernel" in sc.raw and "coefficients" not in sc.raw else "coefficients")
    if source == "kernel":
        op = build_operator(sc, threads)
        mu = op.mu
    else:
        op = build_coefficients(sc)
        mu = build_measure(sc)
    p = float(params.get("p", 2.0))
    N_list = [int(x) for x in params.get("N_list", [1, 2, 3])]
    rep = compactness_scan(op, w, mu, p, N_list, trials=int(params.get("trials", 10)), rng=sc.rng("compactness"),
                           weight_id=str(params.get("weight_id", sc.raw.get("weight", {}).get("kind", "constant"))))
    exact = {"bounds": rep.all_bounds_ok}
    measured = {"ap": rep.ap, "frame_constant": rep.frame_constant, "tail_sup_nonincreasing": rep.tail_sup_nonincreasing,
                "tail_norm_nonincreasing": rep.tail_norm_nonincreasing, "decays": rep.decays, "rows": rep.rows}
    rows = [[r.N, r.tail_sup, r.tail_norm_empirical, r.tail_norm_exact, p, rep.weight_id] for r in rep.rows]
    header = ["N", "tail_coeff_sup", "tail_norm_empirical", "tail_norm_exact", "p", "weight_id"]
    return TaskResult("compactness-scan", params, exact, measured, {"scan": (header, rows)})


def task_weak_compactness(sc: Scenario, params: dict, threads: int) -> TaskResult:
    from .czo import weak_compactness_test

    op = build_operator(sc, threads)
    tree = op.tree
    vals = weak_compactness_test(op)
    # direct quadratic forms on a few cubes as a cross-check of the prefix sums
    rng = sc.rng("weak-compactness")
    worst = 0.0
    m = op.leaf_mass
    for g in rng.integers(0, tree.n_cubes, size=min(16, tree.n_cubes)):
        a, b = tree.leaf_range_gid(int(g))
        direct = abs(float(m[a:b] @ op.matrix[a:b, a:b] @ m[a:b])) / op.mu.cube_mass[g]
        worst = max(worst, abs(direct - vals[g]) / max(direct, 1.0))
    rows = []
    for g in range(tree.n_cubes):
        q = tree.cube(g)
        rows.append([q.level, *q.index, float(vals[g])])
    header = ["level"] + [f"i{k}" for k in range(tree.dim)] + ["ratio"]
    lv = tree.gid_level
    per_level = [float(vals[lv == l].max()) for l in range(tree.depth + 1)]
    return TaskResult("weak-compactness", params, {"prefix_sum_matches_direct": worst <= 1e-10},
                      {"max_ratio": float(vals.max()), "max_by_level": per_level, "crosscheck_error": worst},
                      {"weak": (header, rows)})


def task_eps_coefficients(sc: Scenario, params: dict, threads: int) -> TaskResult:
    from .czo import eps_coefficients

    op = build_operator(sc, threads)
    tree = op.tree
    N_list = [int(x) for x in params.get("N_list", [params.get("N", 1)])]
    F_W = params.get("F_W", None)
    exact, measured, tables = {}, {}, {}
    sups = []
    for N in N_list:
        rep = eps_coefficients(op, N, F_W=F_W)
        sups.append(rep.tail_sup)
        exact[f"N{N}_eps_dominates_f_tilde"] = bool(np.all(rep.eps >= rep.f_tilde * (1 - 1e-12)))
        measured[f"N{N}"] = {"tail_sup": rep.tail_sup, "e_range": list(rep.e_range), "m_range": list(rep.m_range),
                             "max_eps": float(rep.eps.max()), "notes": rep.notes}
        rows = []
        for g in range(tree.n_cubes):
            q = tree.cube(g)
            rows.append([q.level, *q.index, float(rep.eps[g]), float(rep.geometric[g]), float(rep.tail_t1[g]),
                         float(rep.tail_t1star[g]), bool(rep.complement[g])])
        header = ["level"] + [f"i{k}" for k in range(tree.dim)] + ["eps", "geometric", "tail_t1", "tail_t1star", "complement"]
        tables[f"eps_N{N}"] = (header, rows)
    measured["tail_sup_by_N"] = dict(zip([str(n) for n in N_list], sups))
    measured["tail_sup_strictly_decreasing"] = all(b < a for a, b in zip(sups, sups[1:]))
    return TaskResult("eps-coefficients", params, exact, measured, tables)


RUNNERS = {
    "decompose": task_decompose,
    "sparsify-haar": task_sparsify_haar,
    "sparsify-czo": task_sparsify_czo,
    "ap-constant": task_ap_constant,
    "weighted-bound": task_weighted_bound,
    "compactness-scan": task_compactness_scan,
    "weak-compactness": task_weak_compactness,
    "eps-coefficients": task_eps_coefficients,
}


def write_result(out: Path, prefix: str, res: TaskResult) -> None:
    out.mkdir(parents=True, exist_ok=True)
    sio.write_json(out / f"{prefix}.json", res.report())
    for name, (header, rows) in sorted(res.tables.items()):
        sio.write_csv(out / f"{prefix}-{name}.csv", header, rows)


def run_tasks(sc: Scenario, out: Path, only: str | None = None, threads: int = 1) -> int:
    tasks = list(sc.tasks)
    if only is not None:
        tasks = [t for t in tasks if ALIASES.get(t["task"], t["task"]) == only] or [{"task": only}]
    summary = []
    status = EXIT_OK
    for k, t in enumerate(tasks):
        name = ALIASES.get(t["task"], t["task"])
        params = {a: b for a, b in t.items() if a != "task"}
        log.info("task %d: %s", k, name)
        res = RUNNERS[name](sc, params, threads)
        res.task = t["task"]
        prefix = f"{k:02d}-{t['task']}"
        write_result(out, prefix, res)
        summary.append({"task": t["task"], "report": f"{prefix}.json", "passed": res.passed,
                        "failed_exact": sorted(a for a, v in res.exact.items() if not v)})
        if not res.passed:
            status = EXIT_EXACT_FAIL
    sio.write_json(out / "summary.json", {"seed": sc.seed, "tasks": summary, "passed": status == EXIT_OK})
    return status


# --------------------------------------------------------------------------
# self-test
# --------------------------------------------------------------------------

def selftest(seed: int = 0, out: Path | None = None) -> int:
    """Quick randomized run of the exact invariants of every module."""
    from .czdecomp import cz_decompose, verify_cz
    from .czo import CompactCZKernel, KernelOperator, eps_coefficients, paraproduct
    from .haar import analyze, haar_coefficients, synthesize
    from .multiplier import apply_multiplier, apply_tmax
    from .measure import maximal_M
    from .sparse import build_sparse_haar
    from .weighted import dual_constants, project, ProjectionSpec

    rng = np.random.default_rng(seed)
    checks: dict[str, bool] = {}
    worst = {"haar_reconstruction": 0.0, "cz_split": 0.0, "chain": 0.0, "projection": 0.0, "dual_gap": 0.0,
             "paraproduct_adjoint": 0.0}
    for _ in range(40):
        tree = instances.random_tree(rng, 128)
        mu = instances.random_measure(tree, rng)
        if mu.total <= 0:
            continue
        fv = instances.random_function_values(tree, rng)
        exp = analyze(fv, mu)
        rec = synthesize(exp).values
        pos = mu.leaf_mass > 0
        total = float((fv * mu.leaf_mass).sum()) / mu.total
        worst["haar_reconstruction"] = max(worst["haar_reconstruction"], float(np.max(np.abs(rec - (fv - total))[pos], initial=0)))
        eps = instances.random_coefficients(tree, rng)
        T = np.abs(apply_multiplier(fv, eps, mu).values)
        Tm = apply_tmax(fv, eps, mu).values
        MT = maximal_M(T, mu).values
        viol = np.maximum(T - Tm, Tm - MT)[pos]
        worst["chain"] = max(worst["chain"], float(np.max(viol, initial=0.0)))
        fp = np.abs(fv)
        l1 = float((fp * mu.leaf_mass).sum())
        if l1 > 0:
            d = cz_decompose(StepFunction(tree, fp), mu, 1.5 * l1 / mu.total)
            r = verify_cz(d)
            checks.setdefault("cz_checks", True)
            checks["cz_checks"] &= r.ok
            worst["cz_split"] = max(worst["cz_split"], r.split_residual)
            res = build_sparse_haar(fp, eps, mu)
            checks.setdefault("haar_sparse_packing", True)
            checks["haar_sparse_packing"] &= res.report.packing_ok
        N = int(rng.integers(1, 3))
        Pf, Qf = project(fv, ProjectionSpec.build(tree, N), mu)
        worst["projection"] = max(worst["projection"], float(np.max(np.abs(Pf.values + Qf.values - rec)[pos], initial=0)))
        w = instances.random_weight(tree, rng)
        p = float(rng.choice([1.5, 2.0, 3.0]))
        lhs, rhs = dual_constants(w, mu, p, eps)
        worst["dual_gap"] = max(worst["dual_gap"], abs(lhs - rhs) / max(abs(lhs), abs(rhs), 1e-300))
    # paraproduct adjointness on uniform trees
    for _ in range(20):
        tree = DyadicTree(int(rng.integers(1, 3)), int(rng.integers(1, 4)))
        mu = RadonMeasure.uniform(tree)
        b = analyze(rng.normal(size=tree.n_leaves), mu)
        f, g = rng.normal(size=tree.n_leaves), rng.normal(size=tree.n_leaves)
        m = mu.leaf_mass
        lhs = float((paraproduct(b, f, "Pi").values * g * m).sum())
        rhs = float((f * paraproduct(b, g, "PiStar").values * m).sum())
        worst["paraproduct_adjoint"] = max(worst["paraproduct_adjoint"], abs(lhs - rhs) / max(1.0, abs(lhs)))
    # zero operator gives zero coefficients
    tree = DyadicTree(1, 5, (0,), 8)
    op = KernelOperator(CompactCZKernel(1, amplitude=0.0), tree)
    checks["zero_operator_eps"] = bool(np.all(eps_coefficients(op, 1, F_W=0.0).eps == 0))
    checks["haar_reconstruction"] = worst["haar_reconstruction"] <= 1e-10
    checks["maximal_chain"] = worst["chain"] <= 1e-12
    checks["cz_split"] = worst["cz_split"] <= 1e-12
    checks["projection_split"] = worst["projection"] <= 1e-10
    checks["dual_identity"] = worst["dual_gap"] <= 1e-10
    checks["paraproduct_adjoint"] = worst["paraproduct_adjoint"] <= 1e-12
    res = TaskResult("selftest", {"seed": seed}, checks, {"worst": worst})
    if out is not None:
        write_result(out, "selftest", res)
    for k, v in sorted(checks.items()):
        print(f"{'PASS' if v else 'FAIL'} {k}")
    return EXIT_OK if res.passed else EXIT_EXACT_FAIL


# --------------------------------------------------------------------------
# entry point
# --------------------------------------------------------------------------

def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="sparsedom", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, need_scenario=True):
        if need_scenario:
            p.add_argument("--scenario", required=True, type=Path, help="scenario JSON file")
        p.add_argument("--out", type=Path, default=None, help="output directory")
        p.add_argument("--seed", type=int, default=None, help="override the scenario seed (u64)")
        p.add_argument("--threads", type=int, default=1)
        p.add_argument("--leaf-cap", type=int, default=DEFAULT_LEAF_CAP)
        p.add_argument("-v", "--verbose", action="store_true")

    common(sub.add_parser("run", help="run every task of a scenario"))
    for name in TASKS:
        common(sub.add_parser(name, help=f"run the {name} task of a scenario"))
    for alias, target in ALIASES.items():
        common(sub.add_parser(alias, help=f"alias of {target}"))
    common(sub.add_parser("selftest", help="randomized invariant suite"), need_scenario=False)
    return ap


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    if args.seed is not None and not 0 <= args.seed < 2**64:
        print("error: --seed must be an unsigned 64-bit integer", file=sys.stderr)
        return EXIT_CONFIG
    try:
        if args.command == "selftest":
            return selftest(args.seed or 0, args.out)
        sc = load_scenario(args.scenario, args.seed, args.leaf_cap)
        out = args.out or Path("out")
        only = None if args.command == "run" else ALIASES.get(args.command, args.command)
        return run_tasks(sc, out, only, args.threads)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ResourceCapError, GeometryInfeasibleError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CAP if isinstance(exc, ResourceCapError) else EXIT_CONFIG
    except SparsedomError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_EXACT_FAIL


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())

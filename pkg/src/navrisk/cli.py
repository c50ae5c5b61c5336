"""Command-line front end: scenario files in, deterministic artifacts out.

A scenario is a single YAML document that points at a network file and
declares demand, a path policy, solver knobs, attack specs and trust
bounds. Subcommands orchestrate the library:

* solve-ue  -- equilibrium on the genuine demand
* attack    -- synthesize/evaluate the scenario's attacks
* assess    -- risk report (TI / NI) per attack at a shared baseline
* trust     -- drift-bounded re-solve, plus free-vs-trusted comparison
* validate  -- parse and resolve everything, write nothing

Artifacts are JSON and CSV with every float rendered at 12 significant
digits, so identical runs are byte-identical. Exit codes: 0 completed,
2 input error, 3 solver non-convergence; failures print one line
``navrisk:<class>: <detail>`` on stderr.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import Mapping, Sequence

import numpy as np
import yaml

from .network import (
    Network,
    NetworkError,
    ODPair,
    PathSet,
    enumerate_paths,
    load_network,
    validate_od,
)
from .equilibrium import (
    CoverageError,
    RecommendationProfile,
    RoutingModel,
    SolverOptions,
    UEResult,
    od_key,
    solve_ue,
    total_expected_cost,
)
from .attack import (
    ATTACK_KINDS,
    STRATEGIC,
    AttackSolverError,
    AttackSolverOptions,
    AttackSpec,
    AttackTarget,
    combined_demand,
    genuine_flows,
    run_attack,
)
from .risk import assess, network_impact, targeted_impact
from .trust import TrustScores, solve_trusted_ue

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_SOLVER = 3

_SCENARIO_FIELDS = {"name", "network", "demand", "paths", "solver", "attacks",
                    "trust", "out_dir"}
_SOLVER_FIELDS = {"step_size", "max_iters", "fixed_point_tol", "seed"}
_ATTACK_FIELDS = {"kind", "target", "gamma", "budget", "seed", "od_support"}
_TRUST_FIELDS = {"reference", "scores"}


class ScenarioError(ValueError):
    """Scenario document is malformed; the message names the offending field."""


@dataclass(frozen=True)
class Scenario:
    """One fully resolved run: network, demand, paths, knobs, attacks, trust."""

    name: str
    network: Network
    path_sets: tuple[PathSet, ...]
    demand: dict[ODPair, float]
    solver: SolverOptions
    attacks: tuple[AttackSpec, ...]
    trust_reference: str | None  # "baseline" or a path to a recommendation artifact
    trust_scores: TrustScores | None
    out_dir: str | None


# ---------------------------------------------------------------------------
# scenario parsing

def _mapping(obj, where: str) -> Mapping:
    if not isinstance(obj, Mapping):
        raise ScenarioError(f"{where}: expected a mapping, got {type(obj).__name__}")
    return obj

def _reject_unknown(doc: Mapping, allowed: set, where: str) -> None:
    unknown = set(doc) - allowed
    if unknown:
        raise ScenarioError(f"{where}: unknown fields {sorted(unknown)}")

def _number(obj, where: str) -> float:
    if isinstance(obj, bool) or not isinstance(obj, (int, float)):
        raise ScenarioError(f"{where}: expected a number, got {obj!r}")
    return float(obj)

def _integer(obj, where: str) -> int:
    if isinstance(obj, bool) or not isinstance(obj, int):
        raise ScenarioError(f"{where}: expected an integer, got {obj!r}")
    return obj

def _od(obj, where: str) -> ODPair:
    if not isinstance(obj, (list, tuple)) or len(obj) != 2:
        raise ScenarioError(f"{where}: an OD pair is a 2-element list, got {obj!r}")
    return (str(obj[0]), str(obj[1]))


def _parse_demand(items, where: str) -> dict[ODPair, float]:
    if not isinstance(items, list) or not items:
        raise ScenarioError(f"{where}: expected a nonempty list of {{od, amount}}")
    out: dict[ODPair, float] = {}
    for i, rec in enumerate(items):
        rec = _mapping(rec, f"{where}[{i}]")
        _reject_unknown(rec, {"od", "amount"}, f"{where}[{i}]")
        if "od" not in rec or "amount" not in rec:
            raise ScenarioError(f"{where}[{i}]: needs 'od' and 'amount'")
        od = _od(rec["od"], f"{where}[{i}].od")
        if od in out:
            raise ScenarioError(f"{where}[{i}]: duplicate OD pair {od_key(od)}")
        amount = _number(rec["amount"], f"{where}[{i}].amount")
        if not math.isfinite(amount) or amount < 0.0:
            raise ScenarioError(f"{where}[{i}].amount: must be finite and >= 0")
        out[od] = amount
    return out


def _parse_solver(doc, where: str) -> SolverOptions:
    if doc is None:
        return SolverOptions()
    doc = _mapping(doc, where)
    _reject_unknown(doc, _SOLVER_FIELDS, where)
    kwargs = {}
    if "step_size" in doc:
        step = doc["step_size"]
        if step == "auto" or step is None:
            kwargs["step_size"] = None
        else:
            kwargs["step_size"] = _number(step, f"{where}.step_size")
    if "max_iters" in doc:
        kwargs["max_iters"] = _integer(doc["max_iters"], f"{where}.max_iters")
    if "fixed_point_tol" in doc:
        kwargs["fixed_point_tol"] = _number(doc["fixed_point_tol"], f"{where}.fixed_point_tol")
    if "seed" in doc:
        kwargs["seed"] = _integer(doc["seed"], f"{where}.seed")
    try:
        return SolverOptions(**kwargs)
    except ValueError as exc:
        raise ScenarioError(f"{where}: {exc}") from None


def _parse_attack(doc, where: str, network: Network,
                  inner: SolverOptions) -> AttackSpec:
    doc = _mapping(doc, where)
    _reject_unknown(doc, _ATTACK_FIELDS, where)
    if "kind" not in doc:
        raise ScenarioError(f"{where}: needs a 'kind'")
    kind = str(doc["kind"])
    if kind not in ATTACK_KINDS:
        raise ScenarioError(f"{where}.kind: unknown kind {kind!r}, "
                            f"expected one of {list(ATTACK_KINDS)}")

    target = None
    if "target" in doc or "gamma" in doc:
        if "target" not in doc or "gamma" not in doc:
            raise ScenarioError(f"{where}: 'target' and 'gamma' go together")
        edge = str(doc["target"])
        if not any(e.id == edge for e in network.edges):
            raise ScenarioError(f"{where}.target: no edge {edge!r} in the network")
        gamma = _number(doc["gamma"], f"{where}.gamma")
        try:
            target = AttackTarget(edge, gamma)
        except ValueError as exc:
            raise ScenarioError(f"{where}.gamma: {exc}") from None

    budget = None
    if "budget" in doc:
        if kind == STRATEGIC:
            raise ScenarioError(f"{where}.budget: strategic attacks take a "
                                f"target and gamma, not a budget")
        budget = _number(doc["budget"], f"{where}.budget")

    seed = _integer(doc["seed"], f"{where}.seed") if "seed" in doc else 0

    support = None
    if "od_support" in doc:
        raw = doc["od_support"]
        if not isinstance(raw, list) or not raw:
            raise ScenarioError(f"{where}.od_support: expected a nonempty list of OD pairs")
        support = tuple(_od(rec, f"{where}.od_support[{i}]") for i, rec in enumerate(raw))
        for od in support:
            try:
                validate_od(network, od)
            except NetworkError as exc:
                raise ScenarioError(f"{where}.od_support: {exc}") from None

    options = AttackSolverOptions(inner=inner, seed=seed) if kind == STRATEGIC else None
    try:
        return AttackSpec(kind=kind, target=target, budget=budget, seed=seed,
                          od_support=support, options=options)
    except ValueError as exc:
        raise ScenarioError(f"{where}: {exc}") from None


def _parse_trust(doc, where: str, base_dir: str) -> tuple[str, TrustScores]:
    doc = _mapping(doc, where)
    _reject_unknown(doc, _TRUST_FIELDS, where)
    reference = doc.get("reference", "baseline")
    if reference != "baseline":
        reference = os.path.join(base_dir, str(reference))
        if not os.path.isfile(reference):
            raise ScenarioError(f"{where}.reference: no such file {reference!r}")
    if "scores" not in doc or not isinstance(doc["scores"], list) or not doc["scores"]:
        raise ScenarioError(f"{where}.scores: expected a nonempty list of {{od, bound}}")
    scores: dict[ODPair, float] = {}
    for i, rec in enumerate(doc["scores"]):
        rec = _mapping(rec, f"{where}.scores[{i}]")
        _reject_unknown(rec, {"od", "bound"}, f"{where}.scores[{i}]")
        if "od" not in rec or "bound" not in rec:
            raise ScenarioError(f"{where}.scores[{i}]: needs 'od' and 'bound'")
        od = _od(rec["od"], f"{where}.scores[{i}].od")
        bound = rec["bound"]
        if bound == "inf":
            bound = math.inf
        else:
            bound = _number(bound, f"{where}.scores[{i}].bound")
        if math.isnan(bound) or bound < 0.0:
            raise ScenarioError(f"{where}.scores[{i}].bound: must be >= 0")
        if od in scores:
            raise ScenarioError(f"{where}.scores[{i}]: duplicate OD pair {od_key(od)}")
        scores[od] = bound
    return reference, TrustScores(scores)


def load_scenario(path: str) -> Scenario:
    """Parse and fully resolve one scenario document.

    Everything referenced is checked here -- the network file loads, demand
    and attack-support ODs are reachable, the path policy covers them -- so
    the subcommands can assume a well-formed run.
    """
    with open(path, "r", encoding="utf-8") as fh:
        doc = yaml.safe_load(fh)
    doc = _mapping(doc, "scenario")
    _reject_unknown(doc, _SCENARIO_FIELDS, "scenario")
    base_dir = os.path.dirname(os.path.abspath(path))

    if "network" not in doc:
        raise ScenarioError("scenario.network: required")
    net_path = os.path.join(base_dir, str(doc["network"]))
    try:
        network, explicit_sets = load_network(net_path)
    except OSError as exc:
        raise ScenarioError(f"scenario.network: cannot read {net_path!r}: {exc}") from None
    except (NetworkError, yaml.YAMLError) as exc:
        raise ScenarioError(f"scenario.network: {exc}") from None

    demand = _parse_demand(doc.get("demand"), "scenario.demand")
    for od in demand:
        try:
            validate_od(network, od)
        except NetworkError as exc:
            raise ScenarioError(f"scenario.demand: {exc}") from None

    solver = _parse_solver(doc.get("solver"), "scenario.solver")

    attacks = []
    raw_attacks = doc.get("attacks")
    if raw_attacks is not None:
        if not isinstance(raw_attacks, list):
            raise ScenarioError("scenario.attacks: expected a list")
        for i, rec in enumerate(raw_attacks):
            attacks.append(_parse_attack(rec, f"scenario.attacks[{i}]", network, solver))

    # the ODs that need a path set: every demand OD plus every attack-support OD
    needed = list(demand)
    for spec in attacks:
        for od in spec.od_support or ():
            if od not in needed:
                needed.append(od)

    policy = _mapping(doc.get("paths"), "scenario.paths")
    _reject_unknown(policy, {"k", "from_network"}, "scenario.paths")
    if ("k" in policy) == ("from_network" in policy):
        raise ScenarioError("scenario.paths: give exactly one of 'k' or 'from_network'")
    if "k" in policy:
        k = _integer(policy["k"], "scenario.paths.k")
        if k < 1:
            raise ScenarioError("scenario.paths.k: must be >= 1")
        path_sets = tuple(enumerate_paths(network, od, k) for od in needed)
    else:
        if policy["from_network"] is not True:
            raise ScenarioError("scenario.paths.from_network: must be true")
        covered = {ps.od for ps in explicit_sets}
        missing = [od_key(od) for od in needed if od not in covered]
        if missing:
            raise ScenarioError(f"scenario.paths: network file lists no paths for {missing}")
        path_sets = tuple(explicit_sets)

    trust_reference = trust_scores = None
    if doc.get("trust") is not None:
        trust_reference, trust_scores = _parse_trust(doc["trust"], "scenario.trust", base_dir)

    out_dir = doc.get("out_dir")
    if out_dir is not None:
        out_dir = os.path.join(base_dir, str(out_dir))

    name = str(doc.get("name") or os.path.splitext(os.path.basename(path))[0])
    return Scenario(name=name, network=network, path_sets=path_sets, demand=demand,
                    solver=solver, attacks=tuple(attacks),
                    trust_reference=trust_reference, trust_scores=trust_scores,
                    out_dir=out_dir)


def _override_seed(scn: Scenario, seed: int) -> Scenario:
    attacks = tuple(
        replace(spec, seed=seed,
                options=None if spec.options is None else replace(spec.options, seed=seed))
        for spec in scn.attacks)
    return replace(scn, solver=replace(scn.solver, seed=seed), attacks=attacks)


# ---------------------------------------------------------------------------
# deterministic serialization (12 significant digits everywhere)

def fmt12(x: float) -> str:
    return format(float(x), ".12g")


def _jscalar(v) -> str:
    if v is None:
        return "null"
    if v is True:
        return "true"
    if v is False:
        return "false"
    if isinstance(v, str):
        return json.dumps(v)
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if math.isnan(v):
            return "null"
        if math.isinf(v):
            return '"inf"' if v > 0 else '"-inf"'
        return fmt12(v)
    raise TypeError(f"cannot serialize {type(v).__name__}")


def _jwrite(v, out: list, indent: int) -> None:
    pad = "  " * indent
    if isinstance(v, Mapping):
        if not v:
            out.append("{}")
            return
        out.append("{\n")
        for i, (key, val) in enumerate(v.items()):
            out.append("  " * (indent + 1) + json.dumps(str(key)) + ": ")
            _jwrite(val, out, indent + 1)
            out.append(",\n" if i < len(v) - 1 else "\n")
        out.append(pad + "}")
    elif isinstance(v, (list, tuple)):
        if not len(v):
            out.append("[]")
            return
        out.append("[\n")
        for i, val in enumerate(v):
            out.append("  " * (indent + 1))
            _jwrite(val, out, indent + 1)
            out.append(",\n" if i < len(v) - 1 else "\n")
        out.append(pad + "]")
    else:
        out.append(_jscalar(v))


def write_json(path: str, obj) -> None:
    out: list[str] = []
    _jwrite(obj, out, 0)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("".join(out) + "\n")


def _cell(v) -> str:
    if v is None:
        return ""
    if v is True or v is False:
        return str(v).lower()
    if isinstance(v, (float, np.floating)):
        return fmt12(v)
    return str(v)


def write_csv(path: str, header: Sequence[str], rows) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_cell(v) for v in row])


# ---------------------------------------------------------------------------
# artifact assembly

def _classes_doc(model: RoutingModel, profile: RecommendationProfile) -> list[dict]:
    out = []
    for c in model.classes:
        out.append({
            "od": list(c.od),
            "demand": c.demand,
            "paths": [list(p) for p in c.paths],
            "probabilities": [float(x) for x in profile.vector(c.od)],
        })
    return out


def recommendation_doc(name: str, model: RoutingModel, res: UEResult) -> dict:
    return {
        "scenario": name,
        "converged": res.converged,
        "iterations": res.iterations,
        "residual": res.residual,
        "wardrop_gap": res.diagnostics["wardrop_gap"],
        "step_size": res.step_size,
        "classes": _classes_doc(model, res.profile),
    }


def load_reference(path: str) -> RecommendationProfile:
    """Reload the per-class strategies from a recommendation artifact."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
        strategies = {(str(rec["od"][0]), str(rec["od"][1])): np.asarray(rec["probabilities"], dtype=float)
                      for rec in doc["classes"]}
        return RecommendationProfile(strategies)
    except (OSError, json.JSONDecodeError, KeyError, TypeError, IndexError, ValueError) as exc:
        raise ScenarioError(f"reference profile {path!r}: {exc}") from None


def _flow_rows(network: Network, res: UEResult, prefix: tuple = (),
               genuine: dict[str, float] | None = None) -> list[tuple]:
    flows = res.diagnostics["per_edge_flows"]
    rows = []
    for eid in network.edge_ids():
        x = flows[eid]
        row = prefix + (eid, x)
        if genuine is not None:
            row += (genuine[eid],)
        rows.append(row + (network.edge(eid).cost.value(x),))
    return rows


def _solver_doc(opts: SolverOptions) -> dict:
    return {"step_size": "auto" if opts.step_size is None else opts.step_size,
            "max_iters": opts.max_iters, "fixed_point_tol": opts.fixed_point_tol,
            "seed": opts.seed}


def _map_ordered(fn, items, workers: int) -> list:
    """Apply fn to each item, results in input order; optionally threaded."""
    items = list(items)
    if workers <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=min(workers, len(items))) as ex:
        return list(ex.map(fn, items))


def _say(args, line: str) -> None:
    if not args.quiet:
        print(line)


# ---------------------------------------------------------------------------
# subcommands

def cmd_validate(scn: Scenario, args, out_dir: str) -> int:
    n_paths = sum(len(ps.paths) for ps in scn.path_sets)
    _say(args, f"validate {scn.name}: network={scn.network.name} "
               f"nodes={len(scn.network.nodes)} edges={len(scn.network.edges)} "
               f"classes={len(scn.demand)} paths={n_paths} "
               f"attacks={len(scn.attacks)} trust={'yes' if scn.trust_scores else 'no'}")
    return EXIT_OK


def cmd_solve_ue(scn: Scenario, args, out_dir: str) -> int:
    model = RoutingModel(scn.network, scn.demand, scn.path_sets)
    res = solve_ue(model, scn.solver)
    write_json(os.path.join(out_dir, "recommendation.json"),
               recommendation_doc(scn.name, model, res))
    write_csv(os.path.join(out_dir, "flows.csv"), ("edge", "flow", "cost"),
              _flow_rows(scn.network, res))
    write_json(os.path.join(out_dir, "diagnostics.json"),
               {"scenario": scn.name, "command": "solve-ue",
                "solver": _solver_doc(scn.solver),
                "total_expected_cost": total_expected_cost(model, res.profile),
                **res.diagnostics})
    if not res.converged:
        print(f"navrisk:non-convergence: solve-ue residual {res.residual:.3e} "
              f"after {res.iterations} iterations", file=sys.stderr)
        return EXIT_SOLVER
    _say(args, f"solve-ue {scn.name}: converged iterations={res.iterations} "
               f"wardrop_gap={fmt12(res.diagnostics['wardrop_gap'])} "
               f"total_cost={fmt12(total_expected_cost(model, res.profile))}")
    return EXIT_OK


def cmd_attack(scn: Scenario, args, out_dir: str) -> int:
    if not scn.attacks:
        raise ScenarioError("scenario has no attacks section")

    def one(spec: AttackSpec) -> dict:
        plan = run_attack(scn.network, scn.demand, scn.path_sets, spec)
        model = RoutingModel(scn.network, combined_demand(scn.demand, plan.fake_demand),
                             scn.path_sets)
        res = solve_ue(model, scn.solver)
        return {"spec": spec.describe(), "plan": plan.to_jsonable(spec.target),
                "model": model, "result": res}

    runs = _map_ordered(one, scn.attacks, args.parallel)

    doc = {"scenario": scn.name, "runs": []}
    rows = []
    bad = None
    for i, run in enumerate(runs):
        res, model = run["result"], run["model"]
        doc["runs"].append({
            "spec": run["spec"], "plan": run["plan"],
            "converged": res.converged, "iterations": res.iterations,
            "residual": res.residual, "wardrop_gap": res.diagnostics["wardrop_gap"],
            "genuine_total_cost": total_expected_cost(model, res.profile, weights=scn.demand),
            "classes": _classes_doc(model, res.profile),
        })
        rows.extend(_flow_rows(scn.network, res, prefix=(i, run["spec"]["kind"]),
                               genuine=genuine_flows(model, res.profile, scn.demand)))
        if not res.converged and bad is None:
            bad = (i, res.residual)
        _say(args, f"attack[{i}] kind={run['spec']['kind']} "
                   f"budget={fmt12(run['plan']['budget'])} "
                   f"achieved={fmt12(run['plan']['achieved_flow'])} "
                   f"feasible={str(run['plan']['feasible']).lower()}")
    write_json(os.path.join(out_dir, "recommendation.json"), doc)
    write_csv(os.path.join(out_dir, "flows.csv"),
              ("attack", "kind", "edge", "flow", "genuine_flow", "cost"), rows)
    write_json(os.path.join(out_dir, "diagnostics.json"),
               {"scenario": scn.name, "command": "attack",
                "solver": _solver_doc(scn.solver),
                "runs": [{"spec": r["spec"], "converged": r["result"].converged,
                          "iterations": r["result"].iterations,
                          "residual": r["result"].residual,
                          "wardrop_gap": r["result"].diagnostics["wardrop_gap"],
                          "per_class_costs": r["result"].diagnostics["per_class_costs"]}
                         for r in runs]})
    if bad is not None:
        print(f"navrisk:non-convergence: attacked equilibrium {bad[0]} "
              f"residual {bad[1]:.3e}", file=sys.stderr)
        return EXIT_SOLVER
    return EXIT_OK


def cmd_assess(scn: Scenario, args, out_dir: str) -> int:
    if not scn.attacks:
        raise ScenarioError("scenario has no attacks section")
    if args.parallel > 1 and len(scn.attacks) > 1:
        reports = [r[0] for r in _map_ordered(
            lambda spec: assess(scn.network, scn.demand, scn.path_sets, [spec], scn.solver),
            scn.attacks, args.parallel)]
    else:
        reports = assess(scn.network, scn.demand, scn.path_sets, list(scn.attacks), scn.solver)

    write_json(os.path.join(out_dir, "risk_report.json"),
               {"scenario": scn.name, "reports": [r.to_jsonable() for r in reports]})
    rows = []
    for i, rep in enumerate(reports):
        kind = rep.scenario["kind"]
        for eid, base, att, ti, excluded in rep.rows():
            rows.append((i, kind, eid, base, att, ti, excluded))
    write_csv(os.path.join(out_dir, "risk_report.csv"),
              ("attack", "kind", "edge", "baseline_flow", "attacked_flow", "ti", "excluded"),
              rows)
    write_json(os.path.join(out_dir, "diagnostics.json"),
               {"scenario": scn.name, "command": "assess",
                "solver": _solver_doc(scn.solver),
                "errors": [{"attack": i, "error": r.error}
                           for i, r in enumerate(reports) if r.error]})
    completed = 0
    for i, rep in enumerate(reports):
        if rep.error:
            _say(args, f"assess[{i}] kind={rep.scenario['kind']} error={rep.error}")
            continue
        completed += 1
        top = rep.max_ti_edge()
        budget = rep.plan.budget_spent if rep.plan else 0.0
        _say(args, f"assess[{i}] kind={rep.scenario['kind']} budget={fmt12(budget)} "
                   f"NI={fmt12(rep.ni)} "
                   f"max_TI={'none' if top is None else f'{top[0]}:{fmt12(top[1])}'}")
    if completed == 0:
        print("navrisk:non-convergence: no attack scenario completed", file=sys.stderr)
        return EXIT_SOLVER
    return EXIT_OK


def cmd_trust(scn: Scenario, args, out_dir: str) -> int:
    if scn.trust_scores is None:
        raise ScenarioError("scenario has no trust section")

    base_model = RoutingModel(scn.network, scn.demand, scn.path_sets)
    base_res = solve_ue(base_model, scn.solver)
    if not base_res.converged:
        print(f"navrisk:non-convergence: baseline residual {base_res.residual:.3e}",
              file=sys.stderr)
        return EXIT_SOLVER
    if scn.trust_reference == "baseline":
        reference = base_res.profile
    else:
        reference = load_reference(scn.trust_reference)

    trusted = solve_trusted_ue(scn.network, scn.demand, scn.path_sets,
                               reference, scn.trust_scores, scn.solver)
    write_json(os.path.join(out_dir, "recommendation.json"),
               recommendation_doc(scn.name, base_model, trusted))
    write_csv(os.path.join(out_dir, "flows.csv"), ("edge", "flow", "cost"),
              _flow_rows(scn.network, trusted))
    write_json(os.path.join(out_dir, "diagnostics.json"),
               {"scenario": scn.name, "command": "trust",
                "solver": _solver_doc(scn.solver), **trusted.diagnostics})
    for key, usage in trusted.diagnostics["kl_usage"].items():
        bound = "inf" if math.isinf(usage["bound"]) else fmt12(usage["bound"])
        _say(args, f"trust[{key}] kl={fmt12(usage['kl'])} bound={bound} "
                   f"within={str(usage['within']).lower()}")
    _say(args, f"trust {scn.name}: residual_wardrop_gap="
               f"{fmt12(trusted.diagnostics['wardrop_gap'])}")
    if not trusted.converged:
        print(f"navrisk:non-convergence: trusted solve residual {trusted.residual:.3e}",
              file=sys.stderr)
        return EXIT_SOLVER
    if not scn.attacks:
        return EXIT_OK

    # free-vs-trusted comparison under each attack, against the genuine baseline
    baseline_flows = genuine_flows(base_model, base_res.profile, scn.demand)

    def impacts(model: RoutingModel, res: UEResult) -> tuple[dict, float | None]:
        attacked = genuine_flows(model, res.profile, scn.demand)
        per_edge = {eid: targeted_impact(baseline_flows[eid], attacked[eid])
                    for eid in baseline_flows}
        return per_edge, network_impact(per_edge)

    def one(spec: AttackSpec) -> dict:
        plan = run_attack(scn.network, scn.demand, scn.path_sets, spec)
        demand = combined_demand(scn.demand, plan.fake_demand)
        model = RoutingModel(scn.network, demand, scn.path_sets)
        free = solve_ue(model, scn.solver)
        tru = solve_trusted_ue(scn.network, demand, scn.path_sets,
                               reference, scn.trust_scores, scn.solver)
        return {"spec": spec, "plan": plan, "model": model, "free": free, "trusted": tru}

    runs = _map_ordered(one, scn.attacks, args.parallel)

    comparisons = []
    rows = []
    bad = None
    for i, run in enumerate(runs):
        free_ti, free_ni = impacts(run["model"], run["free"])
        tru_ti, tru_ni = impacts(run["model"], run["trusted"])
        comparisons.append({
            "spec": run["spec"].describe(),
            "plan": run["plan"].to_jsonable(run["spec"].target),
            "free": {"ni": free_ni, "per_edge_ti": free_ti,
                     "wardrop_gap": run["free"].diagnostics["wardrop_gap"],
                     "converged": run["free"].converged},
            "trusted": {"ni": tru_ni, "per_edge_ti": tru_ti,
                        "wardrop_gap": run["trusted"].diagnostics["wardrop_gap"],
                        "converged": run["trusted"].converged,
                        "kl_usage": run["trusted"].diagnostics["kl_usage"]},
        })
        for eid in baseline_flows:
            rows.append((i, run["spec"].kind, eid, baseline_flows[eid],
                         free_ti[eid], tru_ti[eid]))
        if bad is None and not (run["free"].converged and run["trusted"].converged):
            bad = i
        _say(args, f"trust-compare[{i}] kind={run['spec'].kind} "
                   f"NI_free={fmt12(free_ni)} NI_trusted={fmt12(tru_ni)}")
    write_json(os.path.join(out_dir, "risk_report.json"),
               {"scenario": scn.name, "comparisons": comparisons})
    write_csv(os.path.join(out_dir, "risk_report.csv"),
              ("attack", "kind", "edge", "baseline_flow", "ti_free", "ti_trusted"),
              rows)
    if bad is not None:
        print(f"navrisk:non-convergence: attack comparison {bad} did not converge",
              file=sys.stderr)
        return EXIT_SOLVER
    return EXIT_OK


# ---------------------------------------------------------------------------
# entry point

_COMMANDS = {
    "solve-ue": cmd_solve_ue,
    "attack": cmd_attack,
    "assess": cmd_assess,
    "trust": cmd_trust,
    "validate": cmd_validate,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="navrisk",
        description="Demand-poisoning risk analysis for equilibrium route recommendation.")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--scenario", required=True, metavar="PATH",
                        help="scenario YAML document")
    common.add_argument("--out", metavar="DIR",
                        help="artifact directory (default: scenario's out_dir or ./out)")
    common.add_argument("--seed", type=int, metavar="N",
                        help="override every seed in the scenario")
    common.add_argument("--parallel", type=int, default=1, metavar="N",
                        help="evaluate attack specs with N workers (outputs stay in input order)")
    common.add_argument("--quiet", action="store_true", help="suppress summary lines")
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "solve-ue": "equilibrium on the genuine demand",
        "attack": "run the scenario's attack specs",
        "assess": "risk report per attack spec",
        "trust": "drift-bounded solve and free-vs-trusted comparison",
        "validate": "check the scenario and write nothing",
    }
    for name in _COMMANDS:
        sub.add_parser(name, parents=[common], help=helps[name])
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        scn = load_scenario(args.scenario)
        if args.seed is not None:
            scn = _override_seed(scn, args.seed)
        if args.parallel < 1:
            raise ScenarioError("--parallel must be >= 1")
        out_dir = args.out or scn.out_dir or "out"
        if args.command != "validate":
            os.makedirs(out_dir, exist_ok=True)
        return _COMMANDS[args.command](scn, args, out_dir)
    except AttackSolverError as exc:
        print(f"navrisk:non-convergence: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except (ScenarioError, NetworkError, CoverageError, ValueError,
            yaml.YAMLError, OSError) as exc:
        msg = " ".join(str(exc).split())
        print(f"navrisk:input-error: {msg}", file=sys.stderr)
        return EXIT_INPUT


def run() -> None:
    sys.exit(main())


if __name__ == "__main__":
    run()

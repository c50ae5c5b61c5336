"""Acceptance gate: ten end-to-end checks, one test per criterion.

Each test prints one `[criterion NN] PASS/FAIL <label>` line (visible with
pytest -rA / -s) and asserts every sub-check with its stated tolerance.
"""

import json
import math
import statistics
import subprocess
import sys
import time
from functools import lru_cache
from pathlib import Path

import numpy as np

from navrisk.network import PathSet
from navrisk.equilibrium import (
    RecommendationProfile,
    RoutingModel,
    SolverOptions,
    class_cost_gradient,
    project_simplex,
    road_flows,
    solve_ue,
)
from navrisk.attack import (
    AttackSolverOptions,
    AttackSpec,
    AttackTarget,
    combined_demand,
    genuine_flows,
    run_attack,
    uniform_attack,
)
from navrisk.risk import assess, network_impact, targeted_impact
from navrisk.trust import TrustScores, kl_divergence, solve_trusted_ue
from navrisk.cli import load_scenario

from conftest import (
    AB,
    braess_network,
    braess_paths,
    braess_attack_model,
    random_two_class_instance,
)
from oracles import (
    equilibrium_by_potential_search,
    grid_project_kl_ball,
    grid_project_simplex,
    min_budget_bruteforce,
)

SCENARIOS = Path(__file__).resolve().parent.parent / "scenarios"
CD = ("C", "D")


def criterion(num: int, label: str, checks: list[tuple[str, bool]]) -> None:
    ok = all(good for _, good in checks)
    print(f"[criterion {num:02d}] {'PASS' if ok else 'FAIL'} {label}")
    for name, good in checks:
        assert good, f"criterion {num} ({label}): {name}"


def run_cli(*argv):
    return subprocess.run([sys.executable, "-m", "navrisk", *argv],
                          capture_output=True, text=True)


@lru_cache(maxsize=None)
def scenario(name: str):
    return load_scenario(str(SCENARIOS / f"{name}.scenario.yaml"))


def solve_scenario(scn):
    model = RoutingModel(scn.network, scn.demand, scn.path_sets)
    return model, solve_ue(model, scn.solver)


# --- 1: paradox baseline ----------------------------------------------------

def test_criterion_01_paradox_baseline(tmp_path):
    t0 = time.perf_counter()
    proc = run_cli("solve-ue", "--scenario", str(SCENARIOS / "braess.scenario.yaml"),
                   "--out", str(tmp_path), "--quiet")
    elapsed = time.perf_counter() - t0
    rec = json.loads((tmp_path / "recommendation.json").read_text())
    diag = json.loads((tmp_path / "diagnostics.json").read_text())
    probs = rec["classes"][0]["probabilities"]
    costs = diag["per_class_costs"]["A->B"]["path_costs"]
    criterion(1, "paradox baseline: even split, path cost 4, total 120, <1s", [
        ("exit 0", proc.returncode == 0),
        ("converged", rec["converged"] is True),
        ("strategy (1/3,1/3,1/3) within 1e-3",
         all(abs(p - 1.0 / 3.0) <= 1e-3 for p in probs)),
        ("each path cost 4 +/- 0.02", all(abs(c - 4.0) <= 0.02 for c in costs)),
        ("total cost 120 +/- 0.5", abs(diag["total_expected_cost"] - 120.0) <= 0.5),
        ("runtime < 1 s", elapsed < 1.0),
    ])


# --- 2: paradox under attack ------------------------------------------------

def test_criterion_02_paradox_under_attack(tmp_path):
    atk_out, ass_out = tmp_path / "atk", tmp_path / "ass"
    proc = run_cli("attack", "--scenario", str(SCENARIOS / "braess-attack.scenario.yaml"),
                   "--out", str(atk_out), "--quiet")
    rec = json.loads((atk_out / "recommendation.json").read_text())
    diag = json.loads((atk_out / "diagnostics.json").read_text())
    flood = rec["runs"][0]  # uniform spec: budget 1e4 on the shortcut pair (C,D)
    ab = next(c for c in flood["classes"] if c["od"] == ["A", "B"])
    probs = ab["probabilities"]
    costs = diag["runs"][0]["per_class_costs"]["A->B"]["path_costs"]
    used_costs = [c for c, p in zip(costs, probs) if p > 1e-3]

    proc2 = run_cli("assess", "--scenario", str(SCENARIOS / "braess-attack.scenario.yaml"),
                    "--out", str(ass_out), "--quiet")
    report = json.loads((ass_out / "risk_report.json").read_text())["reports"][0]
    criterion(2, "paradox flooded: (0.5, 0, 0.5), used cost 3.5, total 105", [
        ("exit 0", proc.returncode == 0 and proc2.returncode == 0),
        ("attacked strategy (0.5, 0, 0.5) within 1e-3",
         all(abs(p - w) <= 1e-3 for p, w in zip(probs, (0.5, 0.0, 0.5)))),
        ("recommended path costs 3.5 +/- 0.02",
         bool(used_costs) and all(abs(c - 3.5) <= 0.02 for c in used_costs)),
        ("genuine total 105 +/- 0.5", abs(flood["genuine_total_cost"] - 105.0) <= 0.5),
        ("report: attacked total < baseline total",
         report["totals"]["attacked_total_cost"] < report["totals"]["baseline_total_cost"]),
    ])


# --- 3: Wardrop certificate on every bundled scenario -----------------------

def spot_check_worst_drop(model, profile) -> float:
    """Largest gain any 5% slice of a class can get by abandoning the
    recommendation for the currently cheapest path.

    The slice's own mass shift is priced into the costs it experiences; the
    rest of the population stays put. At equilibrium this is never positive
    beyond solver tolerance: a deviation only adds load to the path it joins.
    """
    blocks = model.blocks(profile)
    Cs, _ = model.cost_blocks(blocks)
    worst = 0.0
    for idx, (p, C) in enumerate(zip(blocks, Cs)):
        follower_cost = float(p @ C)
        j = int(np.argmin(C))
        q = 0.95 * p
        q[j] += 0.05
        probe = [q if k == idx else b for k, b in enumerate(blocks)]
        C2s, _ = model.cost_blocks(probe)
        worst = max(worst, follower_cost - float(C2s[idx][j]))
    return worst


def test_criterion_03_wardrop_verification():
    checks = []
    for name in ("braess", "pigou", "braess-attack", "grid4x4"):
        scn = scenario(name)
        solutions = []
        model, res = solve_scenario(scn)
        solutions.append((f"{name} genuine", model, res))
        for i, spec in enumerate(scn.attacks):
            plan = run_attack(scn.network, scn.demand, scn.path_sets, spec)
            m2 = RoutingModel(scn.network, combined_demand(scn.demand, plan.fake_demand),
                              scn.path_sets)
            solutions.append((f"{name} attack[{i}]", m2, solve_ue(m2, scn.solver)))
        for label, m, r in solutions:
            gap = r.diagnostics["wardrop_gap"]
            checks.append((f"{label} converged", r.converged))
            checks.append((f"{label} wardrop_gap {gap:.2e} <= 1e-4", gap <= 1e-4))
            drop = spot_check_worst_drop(m, r.profile)
            checks.append((f"{label} 5% move gains {drop:.2e} <= 1e-3", drop <= 1e-3))
    criterion(3, "all bundled solutions: gap <= 1e-4, 5% deviation gains <= 1e-3", checks)


# --- 4: equilibrium vs brute force ------------------------------------------

def test_criterion_04_equilibrium_oracle():
    t0 = time.perf_counter()
    checks = []
    _, res = solve_scenario(scenario("pigou"))
    split = res.profile.vector(("u", "v"))
    checks.append(("pigou split (0.8, 0.2) within 1e-4",
                   bool(np.all(np.abs(split - np.array([0.8, 0.2])) <= 1e-4))))
    for seed in (7, 8, 9):
        model = random_two_class_instance(seed)
        got = solve_ue(model)
        checks.append((f"seed {seed} converged", got.converged))
        ref = equilibrium_by_potential_search(model, final_step=1e-4)
        x_got = model.flows_from_blocks(model.blocks(got.profile))
        x_ref = model.flows_from_blocks(ref)
        diff = float(np.abs(x_got - x_ref).max())
        checks.append((f"seed {seed} edge flows within 5e-3 of search ({diff:.2e})",
                       diff <= 5e-3))
    elapsed = time.perf_counter() - t0
    checks.append((f"runtime {elapsed:.1f}s < 30s", elapsed < 30.0))
    criterion(4, "pigou analytic split + 3 random instances vs potential search", checks)


# --- 5: strategic attacker vs exhaustive search ------------------------------

def test_criterion_05_strategic_optimality():
    t0 = time.perf_counter()
    net = braess_network()
    genuine = {AB: 30.0}
    cd_paths = PathSet(CD, (("CD",),), 1)
    ac_paths = PathSet(("A", "C"), (("AC",),), 1)
    path_sets = [braess_paths(), cd_paths, ac_paths]
    checks = []
    for gamma, support, cap in ((15.0, (CD,), 10.0), (24.0, (("A", "C"),), 30.0)):
        target = AttackTarget("DB", gamma)
        plan = run_attack(net, genuine, path_sets,
                          AttackSpec("strategic", target=target, od_support=support))
        _, best = min_budget_bruteforce(net, genuine, path_sets, target, list(support),
                                        step=1.0, cap=cap)
        checks.append((f"gamma={gamma}: feasible plan", plan.feasible))
        checks.append((f"gamma={gamma}: solver budget {plan.budget_spent} within 1 of "
                       f"exhaustive minimum {best}",
                       best is not None and abs(plan.budget_spent - best) <= 1.0))
    elapsed = time.perf_counter() - t0
    checks.append((f"runtime {elapsed:.1f}s < 120s", elapsed < 120.0))
    criterion(5, "strategic budget within 1 unit of exhaustive minimum", checks)


# --- 6: attacker comparison on the grid ---------------------------------------

def test_criterion_06_grid_attacker_comparison():
    scn = scenario("grid4x4")
    support = scn.attacks[0].od_support
    base_model, base_res = solve_scenario(scn)
    baseline = genuine_flows(base_model, base_res.profile, scn.demand)

    def ni_of(plan):
        model = RoutingModel(scn.network, combined_demand(scn.demand, plan.fake_demand),
                             scn.path_sets)
        res = solve_ue(model, scn.solver)
        assert res.converged
        attacked = genuine_flows(model, res.profile, scn.demand)
        per_edge = {e: targeted_impact(baseline[e], attacked[e]) for e in baseline}
        return network_impact(per_edge), per_edge

    target = AttackTarget("n22_n23", 12.0)
    strategic = run_attack(
        scn.network, scn.demand, scn.path_sets,
        AttackSpec("strategic", target=target, od_support=support,
                   options=AttackSolverOptions(inner=scn.solver)))
    budget = strategic.budget_spent
    ni_strategic, ti_strategic = ni_of(strategic)

    ni_uniform, _ = ni_of(uniform_attack(scn.network, scn.demand, scn.path_sets,
                                         budget, support))
    randoms = []
    for seed in range(20):
        plan = run_attack(scn.network, scn.demand, scn.path_sets,
                          AttackSpec("random", budget=budget, seed=seed,
                                     od_support=support))
        randoms.append(ni_of(plan)[0])
    med = statistics.median(randoms)

    ti_target = ti_strategic[target.edge]
    others = [v for e, v in ti_strategic.items() if e != target.edge and v is not None]
    criterion(6, "grid4x4: strategic NI tops uniform and random at matched budget", [
        ("strategic feasible", strategic.feasible),
        (f"achieved {strategic.achieved_flow:.2f} >= gamma",
         strategic.achieved_flow >= target.gamma - 1e-3),
        (f"NI strategic {ni_strategic:.4f} >= NI uniform {ni_uniform:.4f}",
         ni_strategic >= ni_uniform),
        (f"NI strategic {ni_strategic:.4f} >= random median {med:.4f}",
         ni_strategic >= med),
        (f"targeted edge TI {ti_target:.2f} is the maximum",
         ti_target is not None and ti_target >= max(others)),
    ])


# --- 7: metric identities ----------------------------------------------------

def test_criterion_07_metric_identities():
    net = braess_network()
    genuine = {AB: 30.0}
    path_sets = [braess_paths(), PathSet(CD, (("CD",),), 1)]
    zero, flood = assess(net, genuine, path_sets, [
        AttackSpec("uniform", budget=0.0, od_support=(CD,)),
        AttackSpec("uniform", budget=1e4, od_support=(CD,)),
    ])
    zero_tis = [v for v in zero.per_edge_ti.values() if v is not None]
    flood_tis = [v for v in flood.per_edge_ti.values() if v is not None]
    criterion(7, "TI/NI identities: zero budget, mean identity, hand check", [
        ("zero-budget TI identically 0", all(v == 0.0 for v in zero_tis)),
        ("zero-budget NI exactly 0", zero.ni == 0.0),
        ("NI equals mean of non-excluded TI within 1e-12",
         abs(flood.ni - sum(flood_tis) / len(flood_tis)) <= 1e-12),
        ("TI(10 -> 15) = 0.5", targeted_impact(10.0, 15.0) == 0.5),
    ])


# --- 8: trust mechanism -------------------------------------------------------

def test_criterion_08_trust_mechanism():
    net = braess_network()
    genuine = {AB: 30.0}
    gen_sets = [braess_paths()]
    all_sets = [braess_paths(), PathSet(CD, (("CD",),), 1)]
    combined = {AB: 30.0, CD: 1e4}
    checks = []

    reference = RecommendationProfile({AB: np.array([0.2, 0.3, 0.5])})
    pinned = solve_trusted_ue(net, genuine, gen_sets, reference, TrustScores({AB: 0.0}))
    checks.append(("T=0 returns the reference bit-for-bit",
                   np.array_equal(pinned.profile.vector(AB), reference.vector(AB))))

    free_gen = solve_ue(RoutingModel(net, genuine, gen_sets))
    loose = solve_trusted_ue(net, genuine, gen_sets, reference,
                             TrustScores({AB: math.inf}))
    fx = road_flows(RoutingModel(net, genuine, gen_sets), free_gen.profile)
    lx = road_flows(RoutingModel(net, genuine, gen_sets), loose.profile)
    checks.append(("T=inf matches unconstrained flows within 1e-4",
                   all(abs(fx[e] - lx[e]) <= 1e-4 for e in fx)))

    atk_model = RoutingModel(net, combined, all_sets)
    free_atk = solve_ue(atk_model)
    trusted = solve_trusted_ue(net, combined, all_sets, free_gen.profile,
                               TrustScores({AB: 0.05}))
    usage = trusted.diagnostics["kl_usage"]["A->B"]
    checks.append((f"KL usage {usage['kl']:.4f} <= 0.05 + 1e-8",
                   usage["kl"] <= 0.05 + 1e-8))
    baseline = road_flows(RoutingModel(net, genuine, gen_sets), free_gen.profile)
    att_free = genuine_flows(atk_model, free_atk.profile, genuine)
    att_tru = genuine_flows(atk_model, trusted.profile, genuine)
    dominated = True
    for e in baseline:
        tf = targeted_impact(baseline[e], att_free[e])
        tt = targeted_impact(baseline[e], att_tru[e])
        if tf is not None and tt is not None and tt > tf + 1e-9:
            dominated = False
    checks.append(("every trusted TI <= its unconstrained counterpart", dominated))

    from navrisk.trust import project_trust
    worst = 0.0
    feasible = True
    for i in range(50):
        rng = np.random.default_rng(1000 + i)
        n = 2 + i % 2
        v = rng.normal(scale=1.5, size=n)
        ref = rng.dirichlet(np.ones(n))
        T = float(rng.uniform(0.005, 0.8))
        got = project_trust(v, ref, T)
        want = grid_project_kl_ball(v, ref, T, step=1e-5)
        worst = max(worst, float(np.abs(got - want).max()))
        feasible &= kl_divergence(got, ref) <= T + 1e-8
    checks.append((f"projection within 2e-3 of grid oracle on 50 triples "
                   f"(worst {worst:.1e})", worst <= 2e-3))
    checks.append(("all 50 projections satisfy their bound", feasible))
    criterion(8, "trust: T=0 exact, T=inf free, KL cap binds, oracle match", checks)


# --- 9: numerical hygiene -----------------------------------------------------

def _fd_gradient(model, blocks, class_index, h=1e-6):
    def value(vec):
        probe = [b.copy() for b in blocks]
        probe[class_index] = vec
        Cs, _ = model.cost_blocks(probe)
        return float(vec @ Cs[class_index])

    p = blocks[class_index]
    out = np.zeros_like(p)
    for j in range(p.size):
        up, dn = p.copy(), p.copy()
        up[j] += h
        dn[j] -= h
        out[j] = (value(up) - value(dn)) / (2.0 * h)
    return out


def test_criterion_09_numerical_hygiene():
    rng = np.random.default_rng(31)
    worst_rel = 0.0
    for trial in range(20):
        model = (braess_attack_model(fake_cd=100.0) if trial % 2
                 else random_two_class_instance(seed=100 + trial))
        profile = RecommendationProfile(
            {c.od: project_simplex(rng.normal(size=len(c.paths))) for c in model.classes})
        blocks = model.blocks(profile)
        for idx, c in enumerate(model.classes):
            got = class_cost_gradient(model, profile, c.od)
            ref = _fd_gradient(model, blocks, idx)
            rel = float(np.abs(got - ref).max() / max(1.0, float(np.abs(ref).max())))
            worst_rel = max(worst_rel, rel)

    worst_proj = 0.0
    for i in range(100):
        gen = np.random.default_rng(500 + i)
        v = gen.normal(scale=2.0, size=2 + i % 2)
        got = project_simplex(v)
        ref = grid_project_simplex(v, step=1e-3)
        worst_proj = max(worst_proj, float(np.linalg.norm(got - ref)))
    criterion(9, "gradients vs central differences, projection vs grid", [
        (f"gradient relative error {worst_rel:.1e} <= 1e-4 on 20 profiles",
         worst_rel <= 1e-4),
        (f"projection error {worst_proj:.1e} <= 2e-3 on 100 vectors",
         worst_proj <= 2e-3),
    ])


# --- 10: determinism ----------------------------------------------------------

def test_criterion_10_byte_identical_runs(tmp_path):
    jobs = [
        ("braess", "solve-ue"),
        ("pigou", "solve-ue"),
        ("braess-attack", "attack"),
        ("braess-attack", "assess"),
        ("braess-attack", "trust"),
        ("grid4x4", "assess"),
    ]
    checks = []
    for name, command in jobs:
        trees = []
        for tag in ("one", "two"):
            out = tmp_path / f"{name}-{command}-{tag}"
            proc = run_cli(command, "--scenario", str(SCENARIOS / f"{name}.scenario.yaml"),
                           "--out", str(out), "--quiet")
            checks.append((f"{command} {name} ({tag}) exit 0", proc.returncode == 0))
            trees.append({p.name: p.read_bytes() for p in sorted(out.iterdir())})
        checks.append((f"{command} {name}: byte-identical artifacts", trees[0] == trees[1]))
    criterion(10, "two runs of every bundled scenario are byte-identical", checks)

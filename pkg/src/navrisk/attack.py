"""Misinformed-demand attacks on equilibrium route recommendation.

An attacker fabricates fake route requests (nonnegative fake demand per OD
pair). The recommender cannot tell fake from genuine, so it serves the
combined demand; fake users thereby reshape the equilibrium that genuine
users are routed by.

Three attacker kinds:

* strategic -- picks the cheapest fake demand driving the genuine-user flow
  on one target edge to a desired level gamma (leader-follower: the attacker
  moves first, the recommender replies with the combined-demand equilibrium).
  Solved on the continuous relaxation by an exterior quadratic penalty with
  derivative-free projected-gradient steps, then rounded to integers.
* uniform   -- splits a budget evenly over the active OD pairs.
* random    -- splits a budget by a seeded flat Dirichlet draw.

Genuine-user flow on an edge: each class's flow is attributed to genuine
users in proportion d_theta / (d_theta + d^a_theta), which reduces to
weighting path use by the genuine demand alone.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np

from .network import Network, NetworkError, ODPair, PathSet
from .equilibrium import (
    CoverageError,
    RecommendationProfile,
    RoutingModel,
    SolverOptions,
    od_key,
    solve_ue,
)

STRATEGIC = "strategic"
UNIFORM = "uniform"
RANDOM = "random"
ATTACK_KINDS = (STRATEGIC, UNIFORM, RANDOM)

# search-grade inner solves: iteration cap and the equilibrium-gap level at
# which a non-converged iterate is still trusted for penalty ordering
_SEARCH_ITER_CAP = 1500
_SEARCH_GAP_TOL = 1e-2


class AttackSolverError(RuntimeError):
    """Strategic attack synthesis failed (inner equilibrium did not converge)."""

    def __init__(self, message: str, diagnostics: dict | None = None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


@dataclass(frozen=True)
class AttackTarget:
    """Edge the attacker cares about and the genuine-flow level to force."""

    edge: str
    gamma: float

    def __post_init__(self):
        if not (math.isfinite(self.gamma) and self.gamma >= 0.0):
            raise ValueError(f"gamma must be finite and >= 0, got {self.gamma}")


@dataclass(frozen=True)
class AttackPlan:
    """Fake demand allocation plus how it fared.

    achieved_flow is the genuine-user flow on the target edge under the
    attacked equilibrium; for untargeted (uniform/random) plans it is filled
    by whoever evaluates the plan and starts at 0.
    """

    fake_demand: dict[ODPair, float]
    attacker_kind: str
    budget_spent: float
    achieved_flow: float = 0.0
    feasible: bool = True

    def __post_init__(self):
        if self.attacker_kind not in ATTACK_KINDS:
            raise ValueError(f"unknown attacker kind {self.attacker_kind!r}")
        for od, v in self.fake_demand.items():
            if not (math.isfinite(v) and v >= 0.0):
                raise ValueError(f"fake demand for {od} must be finite and >= 0, got {v}")
        total = float(sum(self.fake_demand.values()))
        if abs(total - self.budget_spent) > 1e-9 * (1.0 + abs(total)):
            raise ValueError(
                f"budget_spent {self.budget_spent} != sum of fake demand {total}")

    def to_jsonable(self, target: AttackTarget | None = None) -> dict:
        return {
            "kind": self.attacker_kind,
            "target": None if target is None else {"edge": target.edge, "gamma": target.gamma},
            "fake_demand": [{"od": list(od), "amount": float(v)}
                            for od, v in self.fake_demand.items()],
            "budget": float(self.budget_spent),
            "achieved_flow": float(self.achieved_flow),
            "feasible": bool(self.feasible),
        }


@dataclass(frozen=True)
class AttackSolverOptions:
    """Strategic solver knobs: exterior penalty schedule, derivative-free
    inner descent, and integer rounding mode."""

    penalty_mu_init: float = 10.0
    penalty_growth: float = 4.0
    outer_iters: int = 10
    pgd_iters: int = 30
    inner: SolverOptions = field(default_factory=SolverOptions)
    rounding: str = "ceil"
    fd_step: float = 0.5
    feasibility_tol: float = 1e-3
    seed: int = 0

    def __post_init__(self):
        if self.penalty_mu_init <= 0.0:
            raise ValueError("penalty_mu_init must be > 0")
        if self.penalty_growth <= 1.0:
            raise ValueError("penalty_growth must be > 1")
        if self.outer_iters < 1 or self.pgd_iters < 1:
            raise ValueError("iteration counts must be >= 1")
        if self.rounding not in ("none", "ceil"):
            raise ValueError(f"rounding must be 'none' or 'ceil', got {self.rounding!r}")
        if not (math.isfinite(self.fd_step) and self.fd_step > 0.0):
            raise ValueError("fd_step must be positive")
        if self.feasibility_tol < 0.0:
            raise ValueError("feasibility_tol must be >= 0")


@dataclass(frozen=True)
class AttackSpec:
    """One attack scenario: which attacker, against what, with what leverage."""

    kind: str
    target: AttackTarget | None = None
    budget: float | None = None
    seed: int = 0
    od_support: tuple[ODPair, ...] | None = None
    options: AttackSolverOptions | None = None

    def __post_init__(self):
        if self.kind not in ATTACK_KINDS:
            raise ValueError(f"unknown attacker kind {self.kind!r}")
        if self.kind == STRATEGIC:
            if self.target is None:
                raise ValueError("strategic attack needs a target")
        else:
            if self.budget is None or not (math.isfinite(self.budget) and self.budget >= 0.0):
                raise ValueError(f"{self.kind} attack needs a nonnegative budget")

    def describe(self) -> dict:
        return {
            "kind": self.kind,
            "target": None if self.target is None else
                      {"edge": self.target.edge, "gamma": self.target.gamma},
            "budget": self.budget,
            "seed": self.seed,
            "od_support": None if self.od_support is None else
                          [list(od) for od in self.od_support],
        }


def combined_demand(genuine: Mapping[ODPair, float],
                    fake: Mapping[ODPair, float]) -> dict[ODPair, float]:
    out: dict[ODPair, float] = {}
    for src in (genuine, fake):
        for od, v in src.items():
            out[od] = out.get(od, 0.0) + float(v)
    return out


def genuine_flows(model: RoutingModel, profile: RecommendationProfile,
                  genuine: Mapping[ODPair, float]) -> dict[str, float]:
    """Per-edge flow attributable to genuine users under the combined-demand
    equilibrium profile.

    Weighting each class's path use by its genuine demand is exactly the
    d/(d + d^a) share of the combined class flow; classes with no genuine
    demand contribute nothing. Passing the fake demands instead yields the
    fake-attributed flows, and the two decompose the combined flow exactly.
    """
    blocks = model.blocks(profile)
    x = np.zeros(len(model.edge_ids))
    for c, p in zip(model.classes, blocks):
        share = float(genuine.get(c.od, 0.0))
        if share < 0.0:
            raise ValueError(f"negative demand share for {c.od}")
        if share > c.demand + 1e-6 * (1.0 + c.demand):
            raise ValueError(
                f"demand share {share} for {c.od} exceeds combined class demand {c.demand}")
        if share > 0.0:
            x += share * (p @ c.A)
    return {eid: float(v) for eid, v in zip(model.edge_ids, x)}


def genuine_flow(model: RoutingModel, profile: RecommendationProfile,
                 genuine: Mapping[ODPair, float], edge_id: str) -> float:
    if edge_id not in model.edge_ids:
        raise NetworkError(f"unknown edge id {edge_id!r}")
    return genuine_flows(model, profile, genuine)[edge_id]


def _active_set(path_sets: Sequence[PathSet],
                od_support: Sequence[ODPair] | None) -> list[ODPair]:
    with_paths = {ps.od: ps for ps in path_sets if ps.paths}
    if od_support is None:
        active = list(with_paths)
    else:
        active = list(dict.fromkeys(tuple(od) for od in od_support))
        missing = [od for od in active if od not in with_paths]
        if missing:
            raise CoverageError(f"attack support ODs without a path set: {missing}")
    if not active:
        raise CoverageError("attack needs at least one OD pair with paths")
    return active


def uniform_attack(network: Network, genuine: Mapping[ODPair, float],
                   path_sets: Sequence[PathSet], budget: float,
                   od_support: Sequence[ODPair] | None = None) -> AttackPlan:
    """Budget split evenly across the active OD pairs."""
    if not (math.isfinite(budget) and budget >= 0.0):
        raise ValueError(f"budget must be finite and >= 0, got {budget}")
    active = _active_set(path_sets, od_support)
    per = budget / len(active)
    fake = {od: per for od in active}
    return AttackPlan(fake_demand=fake, attacker_kind=UNIFORM,
                      budget_spent=float(sum(fake.values())))


def random_attack(network: Network, genuine: Mapping[ODPair, float],
                  path_sets: Sequence[PathSet], budget: float, seed: int,
                  od_support: Sequence[ODPair] | None = None) -> AttackPlan:
    """Budget split by a seeded flat Dirichlet draw over the active OD pairs."""
    if not (math.isfinite(budget) and budget >= 0.0):
        raise ValueError(f"budget must be finite and >= 0, got {budget}")
    active = _active_set(path_sets, od_support)
    rng = np.random.default_rng(seed)
    weights = rng.dirichlet(np.ones(len(active)))
    fake = {od: float(budget * w) for od, w in zip(active, weights)}
    return AttackPlan(fake_demand=fake, attacker_kind=RANDOM,
                      budget_spent=float(sum(fake.values())))


class _AttackEvaluator:
    """Solves the combined-demand equilibrium for candidate fake demands and
    reports the genuine flow on the target edge. Caches by exact demand
    vector; an inner non-convergence aborts the synthesis."""

    def __init__(self, network, genuine, path_sets, support, target, opts):
        self.network = network
        self.genuine = genuine
        self.path_sets = path_sets
        self.support = support
        self.target = target
        self.opts = opts
        self._cache: dict[bytes, float] = {}
        self.solves = 0

    def fake_dict(self, z: np.ndarray) -> dict[ODPair, float]:
        return {od: float(v) for od, v in zip(self.support, z) if v > 0.0}

    def _solve(self, z: np.ndarray, inner: SolverOptions):
        fake = self.fake_dict(z)
        model = RoutingModel(self.network, combined_demand(self.genuine, fake),
                             self.path_sets)
        res = solve_ue(model, inner)
        self.solves += 1
        return fake, model, res

    def achieved(self, z: np.ndarray) -> float:
        """Search-grade genuine flow on the target edge under fake demand z.

        Probes far from the answer can make the fixed point stiff; an iterate
        whose equilibrium gap is still small is accepted as-is (the search
        only needs penalty ordering), and an outright failure evaluates to
        nan so the line search backs away instead of aborting.
        """
        key = z.tobytes()
        got = self._cache.get(key)
        if got is not None:
            return got
        inner = self.opts.inner
        if inner.max_iters > _SEARCH_ITER_CAP:
            inner = replace(inner, max_iters=_SEARCH_ITER_CAP)
        fake, model, res = self._solve(z, inner)
        if res.converged or res.diagnostics["wardrop_gap"] <= _SEARCH_GAP_TOL:
            flow = genuine_flow(model, res.profile, self.genuine, self.target.edge)
        else:
            flow = math.nan
        self._cache[key] = flow
        return flow

    def achieved_strict(self, z: np.ndarray) -> float:
        """Genuine flow on the target edge from a fully converged solve."""
        fake, model, res = self._solve(z, self.opts.inner)
        if not res.converged:
            raise AttackSolverError(
                f"equilibrium under fake demand {fake} did not converge "
                f"(residual {res.residual:.3e})", res.diagnostics)
        flow = genuine_flow(model, res.profile, self.genuine, self.target.edge)
        self._cache[z.tobytes()] = flow
        return flow

    def penalty(self, z: np.ndarray, mu: float) -> float:
        flow = self.achieved(z)
        if math.isnan(flow):
            return math.inf
        gap = max(0.0, self.target.gamma - flow)
        return float(z.sum()) + mu * gap * gap


def solve_strategic_attack(network: Network, genuine: Mapping[ODPair, float],
                           path_sets: Sequence[PathSet], target: AttackTarget,
                           opts: AttackSolverOptions | None = None,
                           od_support: Sequence[ODPair] | None = None) -> AttackPlan:
    """Approximately minimal total fake demand forcing genuine flow on the
    target edge to at least gamma.

    Returns an AttackPlan; feasible=False flags a target no fake demand can
    reach (or one the search could not reach), never an exception. Inner
    equilibrium failures raise AttackSolverError.
    """
    opts = opts or AttackSolverOptions()
    if target.edge not in network.edge_ids():
        raise NetworkError(f"unknown target edge {target.edge!r}")
    support = _active_set(path_sets, od_support)
    clean_genuine = {}
    for od, v in genuine.items():
        v = float(v)
        if not (math.isfinite(v) and v >= 0.0):
            raise ValueError(f"genuine demand for {od} must be finite and >= 0")
        if v > 0.0:
            clean_genuine[tuple(od)] = v

    ev = _AttackEvaluator(network, clean_genuine, path_sets, support, target, opts)
    n = len(support)
    zero = np.zeros(n)
    baseline = ev.achieved_strict(zero)
    tol = opts.feasibility_tol

    if baseline >= target.gamma - tol:
        return AttackPlan(fake_demand={}, attacker_kind=STRATEGIC, budget_spent=0.0,
                          achieved_flow=baseline, feasible=True)

    # no amount of rerouting can push more genuine flow through the edge than
    # the demand of classes that can reach it at all
    by_od = {ps.od: ps for ps in path_sets}
    reachable = 0.0
    for od, d in clean_genuine.items():
        ps = by_od.get(od)
        if ps and any(target.edge in path for path in ps.paths):
            reachable += d
    if target.gamma > reachable + tol:
        return AttackPlan(fake_demand={}, attacker_kind=STRATEGIC, budget_spent=0.0,
                          achieved_flow=baseline, feasible=False)

    z = zero.copy()
    mu = opts.penalty_mu_init
    lr = 8.0
    h = opts.fd_step
    for _ in range(opts.outer_iters):
        z_round_start = z.copy()
        for _ in range(opts.pgd_iters):
            psi_here = ev.penalty(z, mu)
            grad = np.zeros(n)
            for i in range(n):
                up = z.copy()
                up[i] += h
                if z[i] >= h:
                    dn = z.copy()
                    dn[i] -= h
                    grad[i] = (ev.penalty(up, mu) - ev.penalty(dn, mu)) / (2.0 * h)
                else:
                    grad[i] = (ev.penalty(up, mu) - psi_here) / h
            moved = False
            for _ in range(25):
                cand = np.maximum(z - lr * grad, 0.0)
                if np.array_equal(cand, z):
                    break
                if ev.penalty(cand, mu) < psi_here - 1e-12 * (1.0 + abs(psi_here)):
                    z = cand
                    lr = min(lr * 1.3, 1e4)
                    moved = True
                    break
                lr *= 0.5
            if not moved:
                break
        if (np.abs(z - z_round_start).max() < 1e-6
                and ev.achieved(z) >= target.gamma - tol):
            break
        mu *= opts.penalty_growth

    if opts.rounding == "ceil":
        d = np.maximum(np.ceil(z - 1e-6), 0.0)
        if ev.achieved(d) >= target.gamma - tol:
            # greedy trim: drop whole units while the target still holds
            changed = True
            while changed:
                changed = False
                for i in range(n):
                    while d[i] >= 1.0:
                        probe = d.copy()
                        probe[i] -= 1.0
                        if ev.achieved(probe) >= target.gamma - tol:
                            d = probe
                            changed = True
                        else:
                            break
        z = d

    achieved = ev.achieved_strict(z)
    return AttackPlan(fake_demand=ev.fake_dict(z), attacker_kind=STRATEGIC,
                      budget_spent=float(z.sum()), achieved_flow=achieved,
                      feasible=achieved >= target.gamma - tol)


def run_attack(network: Network, genuine: Mapping[ODPair, float],
               path_sets: Sequence[PathSet], spec: AttackSpec) -> AttackPlan:
    """Dispatch one attack spec to its attacker."""
    if spec.kind == STRATEGIC:
        return solve_strategic_attack(network, genuine, path_sets, spec.target,
                                      spec.options, spec.od_support)
    if spec.kind == UNIFORM:
        return uniform_attack(network, genuine, path_sets, spec.budget, spec.od_support)
    return random_attack(network, genuine, path_sets, spec.budget, spec.seed,
                         spec.od_support)

"""Impact metrics for misinformed-demand attacks.

Targeted impact (TI) of an attack on one edge is the relative change of the
flow that edge carries between the baseline equilibrium and the attacked
one. Network impact (NI) averages TI over the edges. Both are computed on
genuine-user flows: fake users exist only as requests, so the physically
meaningful load and the reported travel costs belong to the genuine demand
(total cost still feels the fake users through the congestion they add).

Edges with (near-)zero baseline flow have no well-defined relative change;
they are excluded from NI and listed in the report instead of producing
infinities.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Mapping, Sequence

from .network import Network, PathSet, ODPair
from .equilibrium import (
    RoutingModel,
    SolverOptions,
    solve_ue,
    total_expected_cost,
    wardrop_gap,
)
from .attack import (
    STRATEGIC,
    AttackPlan,
    AttackSolverError,
    AttackSpec,
    combined_demand,
    genuine_flows,
    run_attack,
)

ZERO_BASELINE_DELTA = 1e-9


class UndefinedNetworkImpactError(ValueError):
    """Every edge was excluded; the mean impact does not exist."""


def targeted_impact(baseline_flow: float, attacked_flow: float,
                    delta: float = ZERO_BASELINE_DELTA) -> float | None:
    """|attacked - baseline| / baseline, or None when the baseline flow is
    below delta (excluded from aggregation)."""
    if not (math.isfinite(baseline_flow) and baseline_flow >= 0.0):
        raise ValueError(f"baseline flow must be finite and >= 0, got {baseline_flow}")
    if not (math.isfinite(attacked_flow) and attacked_flow >= 0.0):
        raise ValueError(f"attacked flow must be finite and >= 0, got {attacked_flow}")
    if delta <= 0.0:
        raise ValueError(f"delta must be positive, got {delta}")
    if baseline_flow < delta:
        return None
    return abs(attacked_flow - baseline_flow) / baseline_flow


def network_impact(per_edge_ti: Mapping[str, float | None]) -> float:
    """Arithmetic mean of the non-excluded per-edge impacts."""
    vals = [v for v in per_edge_ti.values() if v is not None]
    if not vals:
        raise UndefinedNetworkImpactError("all edges excluded (no positive baseline flow)")
    return sum(vals) / len(vals)


@dataclass(frozen=True)
class RiskReport:
    """One attack scenario's impact, flows and cost totals.

    error is None for a clean evaluation; otherwise it explains what failed
    and the metric fields are empty.
    """

    scenario: dict
    plan: AttackPlan | None
    per_edge_ti: dict[str, float | None]
    ni: float | None
    excluded_edges: tuple[str, ...]
    baseline_flows: dict[str, float]
    attacked_flows: dict[str, float]
    totals: dict[str, float]
    error: str | None = None

    def __post_init__(self):
        if self.error is None:
            vals = [v for v in self.per_edge_ti.values() if v is not None]
            if not vals:
                raise UndefinedNetworkImpactError("report without any scored edge")
            mean = sum(vals) / len(vals)
            if abs(mean - self.ni) > 1e-12:
                raise ValueError(f"ni {self.ni} is not the mean of per-edge TI {mean}")

    def max_ti_edge(self) -> tuple[str, float] | None:
        best = None
        for eid, v in self.per_edge_ti.items():
            if v is not None and (best is None or v > best[1]):
                best = (eid, v)
        return best

    def to_jsonable(self) -> dict:
        return {
            "scenario": self.scenario,
            "plan": None if self.plan is None else self.plan.to_jsonable(),
            "ni": self.ni,
            "per_edge_ti": dict(self.per_edge_ti),
            "excluded_edges": list(self.excluded_edges),
            "baseline_flows": dict(self.baseline_flows),
            "attacked_flows": dict(self.attacked_flows),
            "totals": dict(self.totals),
            "error": self.error,
        }

    def rows(self) -> list[tuple[str, float, float, float | None, bool]]:
        """One row per edge: id, baseline flow, attacked flow, TI, excluded."""
        out = []
        for eid in self.baseline_flows:
            ti = self.per_edge_ti.get(eid)
            out.append((eid, self.baseline_flows[eid],
                        self.attacked_flows.get(eid, 0.0), ti, ti is None))
        return out


def _impact_table(baseline: Mapping[str, float], attacked: Mapping[str, float],
                  delta: float) -> tuple[dict[str, float | None], tuple[str, ...]]:
    per_edge: dict[str, float | None] = {}
    excluded: list[str] = []
    for eid, base in baseline.items():
        ti = targeted_impact(base, attacked[eid], delta)
        per_edge[eid] = ti
        if ti is None:
            excluded.append(eid)
    return per_edge, tuple(excluded)


def assess(network: Network, genuine: Mapping[ODPair, float],
           path_sets: Sequence[PathSet], scenarios: Sequence[AttackSpec],
           opts: SolverOptions | None = None,
           delta: float = ZERO_BASELINE_DELTA) -> list[RiskReport]:
    """Evaluate each attack scenario against one shared baseline equilibrium.

    Baseline and attacked equilibria use identical solver options and
    initialization, so a zero-budget attack scores exactly zero impact.
    Per-scenario failures land in that scenario's report; the sweep never
    aborts early.
    """
    if not scenarios:
        raise ValueError("assess needs at least one attack scenario")
    opts = opts or SolverOptions()
    genuine = {tuple(od): float(v) for od, v in genuine.items()}

    base_model = RoutingModel(network, dict(genuine), path_sets)
    base_res = solve_ue(base_model, opts)
    if not base_res.converged:
        raise AttackSolverError(
            f"baseline equilibrium did not converge (residual {base_res.residual:.3e})",
            base_res.diagnostics)
    baseline_flows = genuine_flows(base_model, base_res.profile, genuine)
    baseline_total = total_expected_cost(base_model, base_res.profile)

    reports: list[RiskReport] = []
    for spec in scenarios:
        descriptor = spec.describe()
        try:
            plan = run_attack(network, genuine, path_sets, spec)
            attacked_model = RoutingModel(
                network, combined_demand(genuine, plan.fake_demand), path_sets)
            att_res = solve_ue(attacked_model, opts)
            if not att_res.converged:
                raise AttackSolverError(
                    f"attacked equilibrium did not converge (residual {att_res.residual:.3e})",
                    att_res.diagnostics)
            attacked_flows = genuine_flows(attacked_model, att_res.profile, genuine)
            if spec.target is not None and spec.kind != STRATEGIC:
                plan = replace(plan, achieved_flow=attacked_flows[spec.target.edge])
            per_edge, excluded = _impact_table(baseline_flows, attacked_flows, delta)
            ni = network_impact(per_edge)
            totals = {
                "baseline_total_cost": baseline_total,
                "attacked_total_cost": total_expected_cost(
                    attacked_model, att_res.profile, weights=genuine),
            }
            reports.append(RiskReport(
                scenario=descriptor, plan=plan, per_edge_ti=per_edge, ni=ni,
                excluded_edges=excluded, baseline_flows=dict(baseline_flows),
                attacked_flows=attacked_flows, totals=totals,
            ))
        except (AttackSolverError, UndefinedNetworkImpactError, ValueError) as exc:
            reports.append(RiskReport(
                scenario=descriptor, plan=None, per_edge_ti={}, ni=None,
                excluded_edges=(), baseline_flows=dict(baseline_flows),
                attacked_flows={}, totals={"baseline_total_cost": baseline_total},
                error=f"{type(exc).__name__}: {exc}",
            ))
    return reports

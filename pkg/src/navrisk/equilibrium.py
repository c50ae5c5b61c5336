"""User-equilibrium route recommendation over congestion-sensitive networks.

Each origin-destination class (all users sharing an OD pair) receives one
mixed strategy over its enumerated paths. At user equilibrium no class can
lower its expected travel cost by shifting probability mass between its own
paths while everyone else stays put. The solver runs a projected fixed-point
iteration per class,

    p_theta  <-  proj( p_theta - rho * C_theta(p) )

where C_theta(p) is the vector of current path costs under the edge flows
induced by all classes. A fixed point of this map is exactly a point where
every used path of a class is a cheapest path for that class.

The iteration is safeguarded by the congestion potential (sum over edges of
the integral of the edge cost from 0 to the edge flow): steps that would
increase the potential are halved deterministically, which keeps the method
stable for any step size while leaving fixed points untouched.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Mapping, Sequence

import numpy as np

from .network import AffineCost, BPRCost, Network, ODPair, PathSet, validate_od

_MAX_HALVINGS = 60


class CoverageError(ValueError):
    """Demand, path sets and strategies do not cover the same OD pairs."""


def od_key(od: ODPair) -> str:
    return f"{od[0]}->{od[1]}"


@dataclass(frozen=True)
class RecommendationProfile:
    """Per-OD-class mixed strategies over enumerated paths.

    Each vector lives on the probability simplex of its class's path set
    (entries in [0,1], summing to 1 within 1e-9). Vectors are stored as
    read-only float arrays.
    """

    strategies: dict[ODPair, np.ndarray]

    def __post_init__(self):
        clean = {}
        for od, vec in self.strategies.items():
            arr = np.asarray(vec, dtype=float)
            if arr.ndim != 1 or arr.size == 0:
                raise ValueError(f"strategy for {od} must be a nonempty 1-d vector")
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"strategy for {od} has non-finite entries")
            if np.any(arr < -1e-12) or np.any(arr > 1.0 + 1e-12):
                raise ValueError(f"strategy for {od} has entries outside [0, 1]")
            total = float(arr.sum())
            if abs(total - 1.0) > 1e-9:
                raise ValueError(f"strategy for {od} sums to {total!r}, not 1")
            arr = np.where(arr < 0.0, 0.0, arr)
            arr.setflags(write=False)
            clean[od] = arr
        object.__setattr__(self, "strategies", clean)

    def vector(self, od: ODPair) -> np.ndarray:
        try:
            return self.strategies[od]
        except KeyError:
            raise CoverageError(f"no strategy for OD pair {od}") from None

    def ods(self) -> tuple[ODPair, ...]:
        return tuple(self.strategies)

    def as_jsonable(self) -> dict:
        return {od_key(od): [float(x) for x in vec] for od, vec in self.strategies.items()}


@dataclass(frozen=True)
class SolverOptions:
    """Fixed-point solver knobs.

    step_size None picks rho automatically from a bound on the edge-cost
    derivatives over the feasible flow range (0.05 / max derivative at total
    demand). The seed is recorded for provenance; the solver itself is
    deterministic.
    """

    step_size: float | None = None
    max_iters: int = 50000
    fixed_point_tol: float = 1e-7
    seed: int = 0

    def __post_init__(self):
        if self.step_size is not None and not (math.isfinite(self.step_size) and self.step_size > 0):
            raise ValueError(f"step_size must be positive, got {self.step_size}")
        if self.max_iters < 1:
            raise ValueError(f"max_iters must be >= 1, got {self.max_iters}")
        if not (math.isfinite(self.fixed_point_tol) and self.fixed_point_tol > 0):
            raise ValueError(f"fixed_point_tol must be positive, got {self.fixed_point_tol}")


class _CostTable:
    """Vectorized edge-cost evaluation grouped by cost family."""

    def __init__(self, network: Network):
        m = len(network.edges)
        aff_idx, aff_a, aff_b = [], [], []
        bpr_idx, bpr_t, bpr_k, bpr_al, bpr_be = [], [], [], [], []
        for i, e in enumerate(network.edges):
            c = e.cost
            if isinstance(c, AffineCost):
                aff_idx.append(i)
                aff_a.append(c.a)
                aff_b.append(c.b)
            elif isinstance(c, BPRCost):
                bpr_idx.append(i)
                bpr_t.append(c.t)
                bpr_k.append(c.k)
                bpr_al.append(c.alpha)
                bpr_be.append(c.beta)
            else:
                raise TypeError(f"unsupported cost family on edge {e.id!r}: {type(c).__name__}")
        self.m = m
        self._aff = (np.array(aff_idx, dtype=int), np.array(aff_a), np.array(aff_b))
        self._bpr = (np.array(bpr_idx, dtype=int), np.array(bpr_t), np.array(bpr_k),
                     np.array(bpr_al), np.array(bpr_be))

    def values(self, x: np.ndarray) -> np.ndarray:
        out = np.empty(self.m)
        idx, a, b = self._aff
        out[idx] = a + b * x[idx]
        idx, t, k, al, be = self._bpr
        out[idx] = t * (1.0 + al * (x[idx] / k) ** be)
        return out

    def derivs(self, x: np.ndarray) -> np.ndarray:
        out = np.empty(self.m)
        idx, a, b = self._aff
        out[idx] = b
        idx, t, k, al, be = self._bpr
        out[idx] = np.where(al * be == 0.0, 0.0,
                            t * al * be * x[idx] ** np.maximum(be - 1.0, 0.0) / k ** be)
        return out

    def integrals(self, x: np.ndarray) -> np.ndarray:
        out = np.empty(self.m)
        idx, a, b = self._aff
        out[idx] = a * x[idx] + 0.5 * b * x[idx] ** 2
        idx, t, k, al, be = self._bpr
        out[idx] = t * (x[idx] + al * x[idx] ** (be + 1.0) / ((be + 1.0) * k ** be))
        return out


@dataclass(frozen=True)
class ODClass:
    od: ODPair
    demand: float
    paths: tuple[tuple[str, ...], ...]
    A: np.ndarray  # paths x edges incidence, read-only


class RoutingModel:
    """Network, positive demands and path sets wired together.

    Classes are kept in the order their path sets were given; OD pairs with
    zero demand are dropped (they induce no flow). Immutable once built, so
    concurrent solves over one model are safe.
    """

    def __init__(self, network: Network, demand: Mapping[ODPair, float],
                 path_sets: Sequence[PathSet]):
        self.network = network
        self.edge_ids = network.edge_ids()
        m = len(self.edge_ids)

        positive: dict[ODPair, float] = {}
        for od, d in demand.items():
            od = (str(od[0]), str(od[1]))
            validate_od(network, od)
            d = float(d)
            if not math.isfinite(d) or d < 0.0:
                raise ValueError(f"demand for {od} must be finite and >= 0, got {d}")
            if d > 0.0:
                positive[od] = d

        seen: set[ODPair] = set()
        classes: list[ODClass] = []
        for ps in path_sets:
            if ps.od in seen:
                raise CoverageError(f"duplicate path set for OD pair {ps.od}")
            seen.add(ps.od)
            if ps.od not in positive:
                continue
            if not ps.paths:
                raise CoverageError(f"empty path set for positive-demand OD pair {ps.od}")
            A = np.zeros((len(ps.paths), m))
            for i, path in enumerate(ps.paths):
                for eid in path:
                    A[i, network.edge_position(eid)] = 1.0
            A.setflags(write=False)
            classes.append(ODClass(od=ps.od, demand=positive[ps.od], paths=ps.paths, A=A))
        missing = set(positive) - {c.od for c in classes}
        if missing:
            raise CoverageError(f"no path set for positive-demand OD pairs {sorted(missing)}")
        self.classes = tuple(classes)
        self.costs = _CostTable(network)
        self.total_demand = float(sum(c.demand for c in classes))

    def class_for(self, od: ODPair) -> ODClass:
        for c in self.classes:
            if c.od == od:
                return c
        raise CoverageError(f"OD pair {od} carries no positive demand")

    def uniform_profile(self) -> RecommendationProfile:
        return RecommendationProfile(
            {c.od: np.full(len(c.paths), 1.0 / len(c.paths)) for c in self.classes})

    def blocks(self, profile: RecommendationProfile) -> list[np.ndarray]:
        """Strategy vectors aligned with self.classes; coverage must match."""
        want = {c.od for c in self.classes}
        got = set(profile.strategies)
        if want != got:
            raise CoverageError(
                f"strategies must cover exactly the positive-demand OD pairs; "
                f"missing {sorted(want - got)}, extra {sorted(got - want)}")
        out = []
        for c in self.classes:
            v = profile.vector(c.od)
            if v.size != len(c.paths):
                raise CoverageError(
                    f"strategy for {c.od} has {v.size} entries, path set has {len(c.paths)}")
            out.append(v)
        return out

    def flows_from_blocks(self, blocks: Sequence[np.ndarray]) -> np.ndarray:
        x = np.zeros(len(self.edge_ids))
        for c, p in zip(self.classes, blocks):
            x += c.demand * (p @ c.A)
        return x

    def cost_blocks(self, blocks: Sequence[np.ndarray]) -> tuple[list[np.ndarray], np.ndarray]:
        """Per-class path-cost vectors and the edge-flow vector behind them."""
        x = self.flows_from_blocks(blocks)
        ce = self.costs.values(x)
        return [c.A @ ce for c in self.classes], x


def road_flows(model: RoutingModel, profile: RecommendationProfile) -> dict[str, float]:
    """Expected flow per edge: sum over classes of demand * P(path uses edge)."""
    x = model.flows_from_blocks(model.blocks(profile))
    return {eid: float(v) for eid, v in zip(model.edge_ids, x)}


def path_cost(model: RoutingModel, profile: RecommendationProfile, od: ODPair,
              path_index: int) -> float:
    blocks = model.blocks(profile)
    Cs, _ = model.cost_blocks(blocks)
    for c, C in zip(model.classes, Cs):
        if c.od == od:
            if not 0 <= path_index < len(C):
                raise IndexError(f"path index {path_index} out of range for {od}")
            return float(C[path_index])
    raise CoverageError(f"OD pair {od} carries no positive demand")


def expected_user_cost(model: RoutingModel, profile: RecommendationProfile, od: ODPair) -> float:
    """Per-user expected travel cost of one class under the profile."""
    blocks = model.blocks(profile)
    Cs, _ = model.cost_blocks(blocks)
    for c, p, C in zip(model.classes, blocks, Cs):
        if c.od == od:
            return float(p @ C)
    raise CoverageError(f"OD pair {od} carries no positive demand")


def total_expected_cost(model: RoutingModel, profile: RecommendationProfile,
                        weights: Mapping[ODPair, float] | None = None) -> float:
    """Demand-weighted total cost; weights default to the model's demands."""
    blocks = model.blocks(profile)
    Cs, _ = model.cost_blocks(blocks)
    total = 0.0
    for c, p, C in zip(model.classes, blocks, Cs):
        w = c.demand if weights is None else float(weights.get(c.od, 0.0))
        total += w * float(p @ C)
    return total


def class_cost_gradient(model: RoutingModel, profile: RecommendationProfile,
                        od: ODPair) -> np.ndarray:
    """Gradient of a class's expected cost w.r.t. its own strategy.

    Includes the flow-feedback term: moving mass onto a path also raises that
    path's cost through the class's own demand. Used for derivative checks;
    the equilibrium operator itself uses plain path costs (each individual
    user is too small to move the flows).
    """
    blocks = model.blocks(profile)
    x = model.flows_from_blocks(blocks)
    ce = model.costs.values(x)
    dce = model.costs.derivs(x)
    for c, p in zip(model.classes, blocks):
        if c.od == od:
            C = c.A @ ce
            feedback = c.A @ (dce * (p @ c.A))
            return C + c.demand * feedback
    raise CoverageError(f"OD pair {od} carries no positive demand")


def beckmann_potential(model: RoutingModel, profile: RecommendationProfile) -> float:
    """Congestion potential whose minimizers over the strategy space are the
    user equilibria (for separable nondecreasing edge costs)."""
    x = model.flows_from_blocks(model.blocks(profile))
    return float(model.costs.integrals(x).sum())


def wardrop_gap(model: RoutingModel, profile: RecommendationProfile) -> float:
    """Max over classes of (expected cost - cheapest path cost); ~0 at UE."""
    blocks = model.blocks(profile)
    Cs, _ = model.cost_blocks(blocks)
    gap = 0.0
    for p, C in zip(blocks, Cs):
        gap = max(gap, float(p @ C) - float(C.min()))
    return gap


def project_simplex(v) -> np.ndarray:
    """Euclidean projection onto the probability simplex (sort-based)."""
    arr = np.asarray(v, dtype=float)
    if arr.ndim != 1 or arr.size == 0:
        raise ValueError("project_simplex needs a nonempty 1-d vector")
    if not np.all(np.isfinite(arr)):
        raise ValueError("project_simplex needs finite entries")
    u = np.sort(arr)[::-1]
    css = np.cumsum(u) - 1.0
    ks = np.arange(1, arr.size + 1)
    support = np.nonzero(u - css / ks > 0.0)[0]
    rho = support[-1]
    tau = css[rho] / (rho + 1.0)
    return np.maximum(arr - tau, 0.0)


@dataclass(frozen=True)
class UEResult:
    profile: RecommendationProfile
    converged: bool
    iterations: int
    residual: float
    step_size: float
    diagnostics: dict


def auto_step_size(model: RoutingModel) -> float:
    """0.05 over the steepest edge-cost derivative on the feasible flow range.

    Costs here are convex nondecreasing, so the derivative peaks when one
    edge carries the entire demand.
    """
    x = np.full(len(model.edge_ids), model.total_demand)
    g = float(model.costs.derivs(x).max())
    if not math.isfinite(g) or g <= 0.0:
        return 1.0
    return 0.05 / g


def _solve_fixed_point(model: RoutingModel, opts: SolverOptions,
                       projectors: Sequence[Callable[[np.ndarray], np.ndarray]]) -> UEResult:
    rho = auto_step_size(model) if opts.step_size is None else opts.step_size
    P = [proj(np.full(len(c.paths), 1.0 / len(c.paths)))
         for c, proj in zip(model.classes, projectors)]
    phi = float(model.costs.integrals(model.flows_from_blocks(P)).sum())

    iterations = 0
    residual = math.inf
    converged = False
    for _ in range(opts.max_iters):
        Cs, _ = model.cost_blocks(P)
        Q = [proj(p - rho * C) for p, C, proj in zip(P, Cs, projectors)]
        residual = max(float(np.abs(q - p).max()) for q, p in zip(Q, P))
        if residual <= opts.fixed_point_tol:
            converged = True
            break
        # potential-guarded step: halve until the congestion potential stops
        # increasing, so oversized rho cannot cycle
        step = rho
        for t in range(_MAX_HALVINGS + 1):
            cand = Q if t == 0 else [proj(p - step * C)
                                     for p, C, proj in zip(P, Cs, projectors)]
            phi_cand = float(model.costs.integrals(model.flows_from_blocks(cand)).sum())
            if phi_cand <= phi + 1e-12 * (1.0 + abs(phi)) or t == _MAX_HALVINGS:
                P = cand
                phi = phi_cand
                break
            step *= 0.5
        iterations += 1
    else:
        Cs, _ = model.cost_blocks(P)
        Q = [proj(p - rho * C) for p, C, proj in zip(P, Cs, projectors)]
        residual = max(float(np.abs(q - p).max()) for q, p in zip(Q, P))
        converged = residual <= opts.fixed_point_tol

    profile = RecommendationProfile({c.od: p for c, p in zip(model.classes, P)})
    diagnostics = _diagnostics(model, profile, iterations, residual, converged, rho)
    return UEResult(profile=profile, converged=converged, iterations=iterations,
                    residual=residual, step_size=rho, diagnostics=diagnostics)


def _diagnostics(model: RoutingModel, profile: RecommendationProfile, iterations: int,
                 residual: float, converged: bool, rho: float) -> dict:
    blocks = model.blocks(profile)
    Cs, x = model.cost_blocks(blocks)
    per_class = {}
    for c, p, C in zip(model.classes, blocks, Cs):
        per_class[od_key(c.od)] = {
            "demand": c.demand,
            "expected_cost": float(p @ C),
            "min_path_cost": float(C.min()),
            "path_costs": [float(v) for v in C],
        }
    return {
        "iterations": iterations,
        "residual": residual,
        "wardrop_gap": wardrop_gap(model, profile),
        "converged": converged,
        "step_size": rho,
        "per_edge_flows": {eid: float(v) for eid, v in zip(model.edge_ids, x)},
        "per_class_costs": per_class,
    }


def solve_ue(model: RoutingModel, opts: SolverOptions | None = None) -> UEResult:
    """Fixed point of the projected iteration; equivalently, the strategy
    profile minimizing the congestion potential.

    Never raises on non-convergence: the result carries converged=False with
    the last iterate and residual.
    """
    opts = opts or SolverOptions()
    if not model.classes:
        raise CoverageError("demand has no positive entry")
    return _solve_fixed_point(model, opts, [project_simplex] * len(model.classes))

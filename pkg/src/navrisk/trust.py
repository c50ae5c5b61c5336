"""Trust-constrained recommendation: bounding how far a new recommendation
may drift from a previous one.

The drift of a class's strategy p from its previous strategy p_o is measured
by KL(p || p_o); a per-class trust score T caps it. Enforcement replaces the
plain simplex projection inside the equilibrium iteration with a projection
onto {p on the simplex : KL(p || p_o) <= T}, so every iterate honors the cap.
T = 0 pins the class to its previous strategy; T = inf (or any T at least
the unconstrained projection's divergence) changes nothing.

The constrained projection solves

    min ||p - v||^2 + lambda * KL(p || p_o)   over the simplex

and bisects lambda >= 0 until the divergence meets the cap; the divergence
is convex in p, so the cap binds at a unique lambda. The inner problem is
solved componentwise by Newton in log-space plus a safeguarded Newton on
the simplex multiplier. Reference entries are floored at 1e-12 inside
divergences so a zero reference entry cannot blow up the constraint.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .network import Network, ODPair
from .equilibrium import (
    CoverageError,
    RecommendationProfile,
    RoutingModel,
    SolverOptions,
    UEResult,
    _solve_fixed_point,
    od_key,
    project_simplex,
)

REFERENCE_FLOOR = 1e-12
KL_SLACK = 1e-8

# exp() saturation bounds for float64; iterates are clipped here so the
# componentwise Newton can never overflow into inf/nan territory
_LOG_TINY = -745.0
_LOG_HUGE = 709.0


@dataclass(frozen=True)
class TrustScores:
    """Per-OD-class drift caps in nats.

    math.inf is the documented sentinel for "unconstrained"; classes absent
    from the mapping are treated the same way.
    """

    scores: dict[ODPair, float]

    def __post_init__(self):
        for od, t in self.scores.items():
            t = float(t)
            if math.isnan(t) or t < 0.0:
                raise ValueError(f"trust score for {od} must be >= 0, got {t}")

    def get(self, od: ODPair) -> float:
        return float(self.scores.get(od, math.inf))


def kl_divergence(p, q) -> float:
    """KL(p || q) with q floored at 1e-12 and 0*log(0) = 0."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if p.shape != q.shape:
        raise ValueError(f"length mismatch: {p.shape} vs {q.shape}")
    q = np.maximum(q, REFERENCE_FLOOR)
    pos = p > 0.0
    val = float(np.sum(p[pos] * (np.log(p[pos]) - np.log(q[pos]))))
    return max(val, 0.0)


def _componentwise(s: np.ndarray, lam: float) -> np.ndarray:
    """Solve 2*exp(u) + lam*u = s per component; returns exp(u).

    The map is convex and increasing in u, and both seed candidates sit at or
    above the root, so Newton descends monotonically.
    """
    with np.errstate(over="ignore", invalid="ignore"):
        u = np.minimum(np.clip(s / lam, _LOG_TINY, _LOG_HUGE),
                       np.log(np.maximum(s, 2.0) / 2.0))
    for _ in range(60):
        eu = np.exp(u)
        f = 2.0 * eu + lam * u - s
        if np.all(np.abs(f) <= 1e-12 * (1.0 + np.abs(s))):
            break
        u = np.clip(u - f / (2.0 * eu + lam), _LOG_TINY, _LOG_HUGE)
    return np.exp(u)


def _solve_lambda_subproblem(v: np.ndarray, logq: np.ndarray, lam: float) -> np.ndarray:
    """argmin ||p - v||^2 + lam * sum p (log p - logq) over the simplex.

    Stationarity gives 2 p_i + lam log p_i = 2 v_i + lam (logq_i - 1) - nu
    with the multiplier nu fixed by sum p = 1 (sum is strictly decreasing in
    nu). Safeguarded Newton on nu inside an expanding bracket.
    """
    y = 2.0 * v + lam * (logq - 1.0)

    lo = float(y.min() - lam - 2.0)
    hi = float(y.max() + 2.0)
    while _componentwise(y - lo, lam).sum() < 1.0:
        lo -= 2.0 * (1.0 + lam)
    while _componentwise(y - hi, lam).sum() > 1.0:
        hi += 2.0 * (1.0 + lam)

    nu = 0.5 * (lo + hi)
    p = _componentwise(y - nu, lam)
    for _ in range(100):
        gap = p.sum() - 1.0
        if abs(gap) <= 1e-13 or hi - lo <= 1e-15 * (1.0 + abs(nu)):
            break
        if gap > 0.0:
            lo = nu
        else:
            hi = nu
        slope = float(np.sum(p / (2.0 * p + lam)))
        cand = nu + gap / slope if slope > 0.0 else nu
        nu = cand if lo < cand < hi else 0.5 * (lo + hi)
        p = _componentwise(y - nu, lam)
    return p / p.sum()


def project_trust(v, reference, T: float) -> np.ndarray:
    """Euclidean projection of v onto {p on simplex : KL(p || reference) <= T}."""
    if math.isnan(T) or T < 0.0:
        raise ValueError(f"trust bound must be >= 0, got {T}")
    v = np.asarray(v, dtype=float)
    ref = np.asarray(reference, dtype=float)
    if v.shape != ref.shape:
        raise ValueError(f"length mismatch: {v.shape} vs {ref.shape}")
    if T == 0.0:
        return ref.copy()
    plain = project_simplex(v)
    if math.isinf(T) or kl_divergence(plain, ref) <= T:
        return plain

    logq = np.log(np.maximum(ref, REFERENCE_FLOOR))
    lam_hi = 1.0
    for _ in range(100):
        if kl_divergence(_solve_lambda_subproblem(v, logq, lam_hi), ref) <= T:
            break
        lam_hi *= 4.0
    lam_lo = 0.0
    best = _solve_lambda_subproblem(v, logq, lam_hi)
    for _ in range(100):
        lam = 0.5 * (lam_lo + lam_hi)
        p = _solve_lambda_subproblem(v, logq, lam)
        div = kl_divergence(p, ref)
        if div <= T:
            lam_hi = lam
            best = p
            if div >= T - 1e-9:
                break
        else:
            lam_lo = lam
    return best


def solve_trusted_ue(network: Network, demand, path_sets, reference: RecommendationProfile,
                     trust: TrustScores, opts: SolverOptions | None = None) -> UEResult:
    """Equilibrium iteration with per-class trust-ball projections.

    Classes whose trust score is finite must appear in the reference profile;
    classes without a score (or with T = inf) are unconstrained, which is how
    attack-introduced OD pairs that never had a previous recommendation are
    handled. Diagnostics carry the divergence actually used by every class
    the reference covers. Like solve_ue, never raises on non-convergence.
    """
    opts = opts or SolverOptions()
    model = RoutingModel(network, demand, path_sets)
    if not model.classes:
        raise CoverageError("demand has no positive entry")

    projectors = []
    for c in model.classes:
        t = trust.get(c.od)
        if math.isinf(t):
            projectors.append(project_simplex)
            continue
        if c.od not in reference.strategies:
            raise CoverageError(f"trust score for {c.od} but no reference strategy")
        ref = reference.vector(c.od)
        if ref.size != len(c.paths):
            raise CoverageError(
                f"reference for {c.od} has {ref.size} entries, path set has {len(c.paths)}")
        projectors.append(lambda vec, r=ref, t=t: project_trust(vec, r, t))

    res = _solve_fixed_point(model, opts, projectors)

    usage = {}
    for c in model.classes:
        if c.od not in reference.strategies:
            continue
        t = trust.get(c.od)
        div = kl_divergence(res.profile.vector(c.od), reference.vector(c.od))
        usage[od_key(c.od)] = {"kl": div, "bound": t, "within": div <= t + KL_SLACK}
    return replace(res, diagnostics={**res.diagnostics, "kl_usage": usage})

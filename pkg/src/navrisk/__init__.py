"""Risk assessment for misinformed-demand attacks on congestion-aware route
recommendation: equilibrium routing, attack synthesis, impact metrics, and
trust-constrained mitigation."""

__version__ = "0.1.0"

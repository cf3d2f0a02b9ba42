"""Numerical viability analysis for continuity inclusions over the
1-Wasserstein space: exact transport between discrete measures, set-valued
dynamics driven by convex families of Lipschitz fields, constraint tubes with
distance oracles, and the constructive viability schemes."""

__version__ = "0.1.0"

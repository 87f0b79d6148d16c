"""State-dependent importance sampling for E[g(S_N)] via hazard-rate twisting controls."""

__version__ = "0.1.0"

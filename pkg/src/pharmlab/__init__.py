"""Numerical laboratory for p-harmonic level-set monotonicity on asymptotically flat 3-manifolds."""

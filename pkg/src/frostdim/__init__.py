"""Fractal dimension estimates and dyadic Frostman-measure construction."""

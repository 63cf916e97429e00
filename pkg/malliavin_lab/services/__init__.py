"""Computational services - Gaussian algebra, heat kernels, drifts, simplex integrals, SDE flows."""

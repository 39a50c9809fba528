"""Exponential Runge-Kutta integration with Schur-split linear parts."""

"""Dynamical flow networks with distributed routing: simulation, resilience and robust equilibrium selection."""

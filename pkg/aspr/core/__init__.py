"""Samplers, mixture fits, baselines and the simulation harness."""

__all__ = []

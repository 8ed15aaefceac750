"""Solver lab for conditional non-exchangeable mean-field MDPs with common noise."""

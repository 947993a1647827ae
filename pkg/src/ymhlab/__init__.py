"""Numerical laboratory for the Yang-Mills-Higgs flow and its monotonicity formulas."""

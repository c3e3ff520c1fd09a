"""
Solver engine: protocol, simulation, baselines and diagnostics
"""

"""Core modules for the Pointer Q-Network TSP solver.

Kept empty so importing one submodule does not pull plotly/kaleido or the
training loop into every `core.*` import. Import submodules directly.
"""

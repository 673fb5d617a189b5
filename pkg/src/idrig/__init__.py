"""Numerical checks for initial data rigidity on [0, l] x T^(n-1).

Subpackage map: exprlang (closed-form scalar expressions and their exact
derivatives), mesh (grids, fields, derivative operators, quadrature),
geometry (metric tensor calculus), initial_data (constraint quantities and
the ambient R + TM bundle), rigidity (parallel candidate, leafwise identity
residuals, Hodge and TT splits), killing_dev (Killing development, pp-wave
checks), cli (scene files, reports, command line).
"""

__version__ = "0.1.0"

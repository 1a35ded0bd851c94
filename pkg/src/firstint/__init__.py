"""Search for and verify first integrals of ``q'' = -Gamma(q) q' q' - Q(q)``.

Subpackages: :mod:`firstint.expr` (expression kernel), :mod:`firstint.geometry`
(tensors, connections, curvature), :mod:`firstint.conditions` (integral
condition systems), :mod:`firstint.ansatz` (finite-basis solver),
:mod:`firstint.dynamics` (trajectory checks) and :mod:`firstint.cli`.
"""
__version__ = "0.1.0"

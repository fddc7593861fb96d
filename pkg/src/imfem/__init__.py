"""Invariant-measure weighted P1 finite elements for advection-diffusion.

Core modules: mesh (uniform triangulations), fem (P1 primitives), linalg
(sparse solves and the coercivity eigenvalue), measure (the discrete
invariant weights), advdiff (the six coarse-mesh methods), experiments
(catalog, error metric, tables).  A FastAPI service wraps the library;
the command-line tool is a thin client of that service.
"""

__version__ = "0.1.0"

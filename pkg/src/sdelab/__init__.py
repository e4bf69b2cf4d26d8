"""Monte Carlo and quadrature experiments for diffusions with singular drift.

Submodules: ``fields`` (closed-form fields), ``morrey`` (mixed norms),
``sde`` (seeded Euler-Maruyama), ``estimators``, ``green``, ``chaos``,
``gehring``, ``counterexamples`` and the ``cli`` entry point.
"""

__version__ = "0.1.0"

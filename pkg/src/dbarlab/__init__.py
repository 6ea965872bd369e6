"""Numerical laboratory for the weighted d-bar complex on C^1 and C^2.

Modules:
    weights     exact polynomial weight calculus and the weight DSL
    conditions  asymptotic curvature / Sobolev growth checks
    space       weighted grid spaces and form vectors
    operators   sparse d-bar complex, adjoints, box, W^1 Gram, dual norms
    spectral    eigensolves, Neumann inverse, canonical solutions, studies
    oracle      radial-moment ground truth for radial weights
    cli         command line front end
"""

from .weights import (
    WeightSpec,
    WeightParseError,
    parse_weight,
    preset_weight,
    eval_weight,
    gradient,
    laplacian,
    wirtinger_z,
    levi_matrix,
    lowest_levi_eigenvalue,
)

__version__ = "0.1.0"

__all__ = [
    "WeightSpec",
    "WeightParseError",
    "parse_weight",
    "preset_weight",
    "eval_weight",
    "gradient",
    "laplacian",
    "wirtinger_z",
    "levi_matrix",
    "lowest_levi_eigenvalue",
    "__version__",
]

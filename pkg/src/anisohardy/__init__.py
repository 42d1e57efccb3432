"""Anisotropic ellipsoid covers, quasidistances, and atomic decomposition.

The package models continuous multilevel ellipsoid covers of R^n whose
anisotropy may vary from point to point, the quasidistance they induce,
atoms and molecules adapted to the cover, and an explicit algorithm
that rewrites any admissible molecule as a convergent sum of atoms with
controlled coefficients.
"""

from .cover import (CoverParameters, CoverSpec, cover_from_config, diagonal_cover,
                    isotropic_cover, nesting_shift, pointwise_variable_cover, theta)
from .decompose import DecompositionResult, decompose
from .errors import (AdmissibilityError, CoverError, DecompositionError,
                     DegenerateMoleculeError, EstimationError, MoleculeError,
                     QuadratureContractError)
from .geometry import (Ellipsoid, ExponentParams, exponent_lower, exponent_lower_inv,
                       exponent_upper, unit_ball_volume)
from .hardy import (AdmissibleTriple, Atom, Molecule, MolecularProfile, decay_threshold,
                    manufacture_compact, manufacture_tailed, molecular_norm,
                    molecular_profile, moment_order_floor, normalize_molecule,
                    radial_maximal, smoothness_order_floor, validate_atom)
from .metric import QuasidistanceEstimate, rho, rho_many, triangle_constant
from .polyproj import (DualBasis, Polynomial, ball_monomial_moment, dual_basis,
                       project_ellipsoid, project_unit_ball)
from .quad import QuadContext, SampledFunction, integrate, lq_norm, moment

__all__ = [name for name in dir() if not name.startswith("_")]
__version__ = "0.1.0"

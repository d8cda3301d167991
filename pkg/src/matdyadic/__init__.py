"""Matrix-weighted dyadic harmonic analysis on finite atomic filtrations."""
from .analysis import (Certificate, a2_characteristic, carleson_constants, testing_constants,
                       weighted_norm)
from .filtration import Atom, Filtration, build_tree, dyadic_tree, random_tree
from .martingale import ProjectionSpec, decompose
from .measure import MatrixMeasure, inner_product, psd_pinv, random_measure, scalar_measure
from .paraproduct import Paraproduct, build_paraproduct, check_replacement
from .shift import (KernelBlock, ShiftOperator, check_well_localized, make_generalized_shift,
                    make_haar_shift, martingale_multiplier)

__all__ = [
    "Atom", "Filtration", "build_tree", "dyadic_tree", "random_tree",
    "MatrixMeasure", "inner_product", "psd_pinv", "random_measure", "scalar_measure",
    "ProjectionSpec", "decompose",
    "KernelBlock", "ShiftOperator", "check_well_localized", "make_generalized_shift",
    "make_haar_shift", "martingale_multiplier",
    "Paraproduct", "build_paraproduct", "check_replacement",
    "Certificate", "a2_characteristic", "carleson_constants", "testing_constants", "weighted_norm",
]

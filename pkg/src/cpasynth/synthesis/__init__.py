"""Decision variables, convexified iterations and the synthesis loops."""
from .algorithms import (Certificate, Failure, Initializer, IterationRecord, SynthesisOptions,
                         algorithm1, algorithm2, corollary1_check)
from .init import RiccatiFailure, init_lqr, init_simple, solve_care
from .problem import (CostSpec, DecisionPoint, SynthesisContext, constraint_residuals,
                      decrease_ratios, dini_table, dini_upper, max_feasible_b2)
from .step import assemble_step, step
from .verify import verify_certificate

__all__ = [
    "Certificate", "Failure", "Initializer", "IterationRecord", "SynthesisOptions",
    "algorithm1", "algorithm2", "corollary1_check", "RiccatiFailure", "init_lqr", "init_simple",
    "solve_care", "CostSpec", "DecisionPoint", "SynthesisContext", "constraint_residuals",
    "decrease_ratios", "dini_table", "dini_upper", "max_feasible_b2", "assemble_step", "step",
    "verify_certificate",
]

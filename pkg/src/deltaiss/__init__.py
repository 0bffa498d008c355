"""Data-driven incremental ISS controllers for polynomial systems."""

__version__ = "0.1.0"

from .certificate import Certificate, ConditionReport, controller_evaluate
from .plant import (BatchPair, DataBatch, ExcitationSpec, PolySystem, collect_pair, lift,
                    richness_check, simulate, spacecraft)
from .polyalg import (MonomialDictionary, PolyMatrix, enumerate_monomials, evaluate_dictionary,
                      factorize_dictionary, poly_multiply, poly_residual)
from .synthesis import SynthesisConfig, assemble_program, synthesize
from .verify import (convergence_report, gronwall_check, recheck_certificate,
                     simulate_closed_loop_pair, verify_pairs)

__all__ = [
    "BatchPair", "Certificate", "ConditionReport", "DataBatch", "ExcitationSpec",
    "MonomialDictionary", "PolyMatrix", "PolySystem", "SynthesisConfig", "assemble_program",
    "collect_pair", "controller_evaluate", "convergence_report", "enumerate_monomials",
    "evaluate_dictionary", "factorize_dictionary", "gronwall_check", "lift", "poly_multiply",
    "poly_residual", "recheck_certificate", "richness_check", "simulate",
    "simulate_closed_loop_pair", "spacecraft", "synthesize", "verify_pairs",
]

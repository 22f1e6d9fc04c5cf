"""Coherent learning-to-defer on label taxonomies."""
from .coherence import ABSENT, DEFER, PRESENT, AuditReport, Contract, ContractKind, Defect, audit, is_coherent
from .decode import (
    bayes_coherent_decode,
    budgeted_decode,
    feasibility_closure,
    project_map,
    risk_table,
    tbp_map_decode,
)
from .evaluation import EvaluationSet, Method, run_sweep
from .taxonomy import Taxonomy, parse_taxonomy
from .tbp import build_kernel, propagate

__all__ = [
    "ABSENT", "PRESENT", "DEFER", "AuditReport", "Contract", "ContractKind", "Defect", "audit", "is_coherent",
    "bayes_coherent_decode", "budgeted_decode", "feasibility_closure", "project_map", "risk_table",
    "tbp_map_decode", "EvaluationSet", "Method", "run_sweep", "Taxonomy", "parse_taxonomy",
    "build_kernel", "propagate",
]

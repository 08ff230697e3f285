from .field import FieldConfig, FieldEstimate, evaluate_field, flow_composition_gap
from .measure import MeasureConfig, MeasureEstimate, TestPair, estimate_measure
from .norms import (
    NormEquivalenceReport,
    WeightedNorm,
    norm_equivalence_check,
    weighted_norm,
)
from .weakform import WeakFormReport, WeakTestFunction, weak_form_residual

__all__ = [
    "FieldConfig",
    "FieldEstimate",
    "MeasureConfig",
    "MeasureEstimate",
    "NormEquivalenceReport",
    "TestPair",
    "WeakFormReport",
    "WeakTestFunction",
    "WeightedNorm",
    "estimate_measure",
    "evaluate_field",
    "flow_composition_gap",
    "norm_equivalence_check",
    "weak_form_residual",
    "weighted_norm",
]

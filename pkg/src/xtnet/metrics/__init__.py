"""Ranking error, cost-aware allocation policies and the dominance harness."""

from .allocation import (
    POLICIES,
    AllocationPlan,
    ComboSpace,
    CostModel,
    DegenerateScoreError,
    InstanceTooLargeError,
    Units,
    UpliftCurve,
    allocate,
    curve_area_score,
    expected_metric_error,
    ideal_allocation,
    ideal_curve,
    metric_error,
    policy_curve,
    policy_score,
    random_curve,
    trapezoid,
    uplift_curve,
)
from .ranking import footrule, max_footrule, ranking_error
from .theorems import TheoremConfig, gen_theorem_instances, theorem_harness, validate_instance

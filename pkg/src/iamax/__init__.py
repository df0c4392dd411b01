"""Least-privilege IAM policy toolkit.

Measures dormant (granted-but-unused) access, synthesizes group-based
replacement policies that shed it without breaking observed workflows,
enforces intra-group similarity through cut generation, and sizes the
blast radius of credential-compromise scenarios before and after
hardening.
"""

from .model import (
    AccessInstance,
    DormancyReport,
    GeneratedPolicy,
    InstanceError,
    PolicyDocument,
    build_instance,
    dormant_count,
    effective_access,
    load_instance,
    load_policy,
    render_policy,
    save_instance,
    save_policy,
)
from .optimizer import (
    FeasibilityReport,
    ObjectiveBreakdown,
    PenaltyConfig,
    SolveConfig,
    SolveResult,
    SweepPoint,
    brute_force_solve,
    check_feasible,
    objective,
    solve,
    sweep_groups,
)

__version__ = "0.1.0"

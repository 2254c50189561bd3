"""Resource-bounded agent contracts: lifecycle, accounting, delegation and simulation."""

from . import errors
from .accounting import (
    Alert,
    ControllableBudget,
    Ledger,
    TokenBreakdown,
    UtilizationReport,
    check_thresholds,
    controllable_budget,
    format_budget_status,
    monitor,
    open_ledger,
    record_consumption,
)
from .contract import (
    Contract,
    ContractSpec,
    Decision,
    InputSpec,
    Observation,
    OutputSpec,
    SkillSpec,
    State,
    SuccessCriteria,
    TerminationConditions,
    activate,
    apply_transition,
    authorize_skill,
    draft_contract,
    evaluate_guards,
    evaluate_success,
    terminate,
)
from .delegation import (
    AllocationPlan,
    BudgetPool,
    DelegationTree,
    allocate_equal,
    allocate_negotiated,
    allocate_proportional,
    release_to_pool,
    request_from_pool,
    verify_conservation,
)
from .resources import ResourceVector
from .trace import AuditLog, EventKind, TraceEvent, read_jsonl, write_jsonl

__version__ = "0.1.0"

__all__ = [
    "Alert",
    "AllocationPlan",
    "AuditLog",
    "BudgetPool",
    "Contract",
    "ContractSpec",
    "ControllableBudget",
    "Decision",
    "DelegationTree",
    "EventKind",
    "InputSpec",
    "Ledger",
    "Observation",
    "OutputSpec",
    "ResourceVector",
    "SkillSpec",
    "State",
    "SuccessCriteria",
    "TerminationConditions",
    "TokenBreakdown",
    "TraceEvent",
    "UtilizationReport",
    "activate",
    "allocate_equal",
    "allocate_negotiated",
    "allocate_proportional",
    "apply_transition",
    "authorize_skill",
    "check_thresholds",
    "controllable_budget",
    "draft_contract",
    "errors",
    "evaluate_guards",
    "evaluate_success",
    "format_budget_status",
    "monitor",
    "open_ledger",
    "read_jsonl",
    "record_consumption",
    "release_to_pool",
    "request_from_pool",
    "terminate",
    "verify_conservation",
    "write_jsonl",
]

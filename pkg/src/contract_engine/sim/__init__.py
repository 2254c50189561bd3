from .harness import (
    effective_spec,
    run_iterative_refinement,
    run_orchestrator_workers,
    run_routing,
    run_scenario,
    select_specialist,
    trial_rng,
)
from .models import (
    CONDITIONS,
    CONTRACTED,
    MODES,
    UNCONTRACTED,
    ContractTemplate,
    OrchestratorSpec,
    RoutingSpec,
    ScenarioSpec,
    SimAgentModel,
    SpecialistSpec,
    TaskSpec,
    TokenSplit,
    TrialTrace,
    Triangular,
    WorkerSpec,
    apply_mode,
    budget_shrink,
    draw_call,
)
from .summary import summarize

__all__ = [
    "CONDITIONS",
    "CONTRACTED",
    "MODES",
    "UNCONTRACTED",
    "ContractTemplate",
    "OrchestratorSpec",
    "RoutingSpec",
    "ScenarioSpec",
    "SimAgentModel",
    "SpecialistSpec",
    "TaskSpec",
    "TokenSplit",
    "TrialTrace",
    "Triangular",
    "WorkerSpec",
    "apply_mode",
    "budget_shrink",
    "draw_call",
    "effective_spec",
    "run_iterative_refinement",
    "run_orchestrator_workers",
    "run_routing",
    "run_scenario",
    "select_specialist",
    "summarize",
    "trial_rng",
]

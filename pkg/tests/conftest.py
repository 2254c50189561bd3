import os

import pytest
from hypothesis import HealthCheck, settings

from contract_engine.contract import (
    ContractSpec,
    InputSpec,
    OutputSpec,
    SkillSpec,
    SuccessCriteria,
    TerminationConditions,
    activate,
    draft_contract,
)
from contract_engine.resources import ResourceVector

settings.register_profile("default", max_examples=200, deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("ci", max_examples=500, deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


def make_spec(
    contract_id="c",
    budget=None,
    tau_ms=600_000,
    criteria=(("done", 1.0),),
    theta=1.0,
    skills=(),
    parent_id=None,
    fatal=(),
    q_min=0.0,
):
    return ContractSpec(
        contract_id=contract_id,
        input=InputSpec("task"),
        output=OutputSpec("result", q_min),
        skills=tuple(skills),
        budget=ResourceVector(budget if budget is not None else {"token": 50_000}),
        tau_ms=tau_ms,
        success=SuccessCriteria.build(list(criteria), theta),
        termination=TerminationConditions(fatal_error_codes=frozenset(fatal)),
        parent_id=parent_id,
    )


def active_contract(now=0, **kw):
    c = draft_contract(make_spec(**kw))
    return activate(c, now)


@pytest.fixture
def spec_factory():
    return make_spec


@pytest.fixture
def skill():
    return SkillSpec


# one line per acceptance criterion, echoed in the terminal summary so the
# verdicts appear even when test output is captured
ACCEPTANCE_RESULTS: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_RESULTS:
            terminalreporter.write_line(line)

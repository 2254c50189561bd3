"""Scenario config loading and validation.

Structure and ranges are checked against a JSON Schema; cross references
(roles, agents, criteria the simulator can evaluate) are checked afterwards.
Errors carry a dotted field path such as ``contract.success.theta``.
"""

from __future__ import annotations

import json
from importlib import resources as importlib_resources
from pathlib import Path
from typing import Any

import jsonschema

from . import errors
from .contract import SkillSpec, draft_contract
from .delegation import DEFAULT_CAP_MULTIPLIER, DEFAULT_RESERVE_FRACTION, STRATEGIES
from .resources import ResourceVector
from .sim.models import (
    CONDITIONS,
    ITERATIVE_REFINEMENT,
    MODES,
    ORCHESTRATOR_WORKERS,
    PATTERNS,
    ROUTING,
    SIM_CRITERIA,
    ContractTemplate,
    OrchestratorSpec,
    RoutingSpec,
    ScenarioSpec,
    SimAgentModel,
    SpecialistSpec,
    TaskSpec,
    TokenSplit,
    Triangular,
    UNCONTRACTED_DURATION_MS,
    WorkerSpec,
)

CONFIG_SCHEMA_VERSION = 1
DEFAULT_THRESHOLDS = (0.8,)
MAX_RESERVE_FRACTION = 0.15

_quantities = {"type": "object", "additionalProperties": {"type": "integer", "minimum": 0}}
_prob = {"type": "number", "minimum": 0, "maximum": 1}
_triangular = {
    "type": "object",
    "required": ["min", "mode", "max"],
    "properties": {"min": {"type": "number", "minimum": 0}, "mode": {"type": "number"}, "max": {"type": "number"}},
    "additionalProperties": False,
}
_skill = {
    "type": "object",
    "required": ["id"],
    "properties": {
        "id": {"type": "string", "minLength": 1},
        "cost_estimate": _quantities,
        "success_prob": _prob,
        "call_limit": {"type": ["integer", "null"], "minimum": 0},
    },
    "additionalProperties": False,
}
_contract = {
    "type": "object",
    "properties": {
        "budget": _quantities,
        "duration_ms": {"type": "integer", "exclusiveMinimum": 0},
        "skills": {"type": "array", "items": _skill},
        "success": {
            "type": "object",
            "properties": {
                "criteria": {
                    "type": "array",
                    "items": {
                        "type": "object",
                        "required": ["id"],
                        "properties": {"id": {"type": "string", "minLength": 1}, "weight": {"type": "number", "minimum": 0}},
                        "additionalProperties": False,
                    },
                },
                "theta": _prob,
            },
            "additionalProperties": False,
        },
        "input": {
            "type": "object",
            "properties": {
                "schema": {"type": "string", "minLength": 1},
                "validation_rules": {"type": "array", "items": {"type": "string"}},
                "preprocessing": {"type": "array", "items": {"type": "string"}},
            },
            "additionalProperties": False,
        },
        "output": {
            "type": "object",
            "properties": {"schema": {"type": "string", "minLength": 1}, "q_min": _prob, "format": {"type": "string"}},
            "additionalProperties": False,
        },
        "per_call_token_cap": {"type": ["integer", "null"], "minimum": 1},
        "fatal_error_codes": {"type": "array", "items": {"type": "string"}},
    },
    "additionalProperties": False,
}
_agent = {
    "type": "object",
    "required": ["tokens"],
    "properties": {
        "tokens": _triangular,
        "split": {
            "type": "object",
            "required": ["input", "reasoning", "output"],
            "properties": {k: {"type": "number", "minimum": 0} for k in ("input", "reasoning", "output")},
            "additionalProperties": False,
        },
        "skills": {"type": "object", "additionalProperties": _prob},
        "convergence_prob": _prob,
        "quality": _triangular,
        "budget_aware": {"type": "boolean"},
        "base_latency_ms": {"type": "integer", "minimum": 0},
        "ms_per_token": {"type": "number", "minimum": 0},
        "microusd_per_token": {"type": "number", "minimum": 0},
    },
    "additionalProperties": False,
}
_reserve = {"type": "number", "minimum": 0, "maximum": MAX_RESERVE_FRACTION}
_cap_mult = {"type": "number", "minimum": 1}

SCENARIO_SCHEMA: dict[str, Any] = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "required": ["name", "pattern", "agents", "contract"],
    "properties": {
        "schema_version": {"const": CONFIG_SCHEMA_VERSION},
        "name": {"type": "string", "minLength": 1},
        "family": {"type": "string"},
        "description": {"type": "string"},
        "pattern": {"enum": list(PATTERNS)},
        "condition": {"enum": [c.lower() for c in CONDITIONS] + list(CONDITIONS)},
        "trials": {"type": "integer", "minimum": 1},
        "seed": {"type": "integer", "minimum": 0, "maximum": 2**64 - 1},
        "thresholds": {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0, "maximum": 1}},
        "modes": {"type": "array", "items": {"enum": list(MODES)}, "uniqueItems": True},
        "agents": {"type": "object", "minProperties": 1, "additionalProperties": _agent},
        "contract": _contract,
        "iterative": {
            "type": "object",
            "required": ["sequence"],
            "properties": {
                "sequence": {"type": "array", "minItems": 1, "items": {"type": "string"}},
                "max_iterations": {"type": "integer", "minimum": 1},
            },
            "additionalProperties": False,
        },
        "uncontracted": {
            "type": "object",
            "properties": {
                "max_iterations": {"type": "integer", "minimum": 1},
                "duration_ms": {"type": "integer", "exclusiveMinimum": 0},
            },
            "additionalProperties": False,
        },
        "orchestrator": {
            "type": "object",
            "required": ["agent", "workers"],
            "properties": {
                "agent": {"type": "string"},
                "strategy": {"enum": list(STRATEGIES)},
                "reserve_fraction": _reserve,
                "cap_multiplier": _cap_mult,
                "allow_topups": {"type": "boolean"},
                "topup_threshold": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
                "topup_fraction": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
                "cap_to_remaining": {"type": "boolean"},
                "workers": {
                    "type": "array",
                    "minItems": 1,
                    "items": {
                        "type": "object",
                        "required": ["role", "agent"],
                        "properties": {
                            "role": {"type": "string", "minLength": 1},
                            "agent": {"type": "string"},
                            "weight": {"type": "number", "exclusiveMinimum": 0},
                            "request": _quantities,
                            "max_iterations": {"type": "integer", "minimum": 1},
                            "contract": _contract,
                        },
                        "additionalProperties": False,
                    },
                },
            },
            "additionalProperties": False,
        },
        "routing": {
            "type": "object",
            "required": ["specialists", "tasks"],
            "properties": {
                "reserve_fraction": _reserve,
                "cap_multiplier": _cap_mult,
                "specialists": {
                    "type": "array",
                    "minItems": 1,
                    "items": {
                        "type": "object",
                        "required": ["id", "agent", "contract"],
                        "properties": {
                            "id": {"type": "string", "minLength": 1},
                            "agent": {"type": "string"},
                            "max_iterations": {"type": "integer", "minimum": 1},
                            "contract": _contract,
                        },
                        "additionalProperties": False,
                    },
                },
                "tasks": {
                    "type": "array",
                    "minItems": 1,
                    "items": {
                        "type": "object",
                        "required": ["id", "required_skills"],
                        "properties": {
                            "id": {"type": "string"},
                            "required_skills": {"type": "array", "items": {"type": "string"}},
                        },
                        "additionalProperties": False,
                    },
                },
            },
            "additionalProperties": False,
        },
    },
    "additionalProperties": False,
}

_VALIDATOR = jsonschema.Draft202012Validator(SCENARIO_SCHEMA)


def _path(parts) -> str:
    return ".".join(str(p) for p in parts)


def bundled_scenarios() -> dict[str, Path]:
    root = importlib_resources.files("contract_engine") / "scenarios"
    return {Path(str(p)).stem: Path(str(p)) for p in root.iterdir() if str(p).endswith(".json")}


def resolve_scenario_path(name_or_path: str | Path) -> Path:
    """A filesystem path, or the stem of a bundled scenario (``code_review``)."""
    p = Path(name_or_path)
    if p.exists():
        return p
    bundled = bundled_scenarios()
    if str(name_or_path) in bundled:
        return bundled[str(name_or_path)]
    return p


def load_scenario(path: str | Path) -> ScenarioSpec:
    path = resolve_scenario_path(path)
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise errors.IoError(f"cannot read scenario {path}: {exc}") from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise errors.ParseError(f"{path}: {exc}") from exc
    return parse_scenario(data)


def parse_scenario(data: Any) -> ScenarioSpec:
    if not isinstance(data, dict):
        raise errors.ValidationError("", "scenario must be a JSON object")
    errs = sorted(_VALIDATOR.iter_errors(data), key=lambda e: (list(map(str, e.absolute_path)), e.message))
    if errs:
        e = errs[0]
        raise errors.ValidationError(_path(e.absolute_path), e.message)
    return _build(data)


def _triangular(d: dict, path: str) -> Triangular:
    try:
        return Triangular(d["min"], d["mode"], d["max"])
    except ValueError as exc:
        raise errors.ValidationError(path, str(exc)) from None


def _agent_model(agent_id: str, d: dict, path: str) -> SimAgentModel:
    kw: dict[str, Any] = {"agent_id": agent_id, "tokens": _triangular(d["tokens"], f"{path}.tokens")}
    if "split" in d:
        try:
            kw["split"] = TokenSplit(**d["split"])
        except ValueError as exc:
            raise errors.ValidationError(f"{path}.split", str(exc)) from None
    if "quality" in d:
        kw["quality"] = _triangular(d["quality"], f"{path}.quality")
    if "skills" in d:
        kw["skill_usage"] = dict(d["skills"])
    for key in ("convergence_prob", "budget_aware", "base_latency_ms", "ms_per_token", "microusd_per_token"):
        if key in d:
            kw[key] = d[key]
    return SimAgentModel(**kw)


def _template(d: dict, path: str, require_budget: bool = False) -> ContractTemplate:
    success = d.get("success", {})
    criteria = tuple((c["id"], float(c.get("weight", 1.0))) for c in success.get("criteria", [{"id": "converged"}]))
    for i, (cid, _) in enumerate(criteria):
        if cid not in SIM_CRITERIA:
            raise errors.ValidationError(
                f"{path}.success.criteria.{i}.id", f"simulator cannot evaluate criterion {cid!r}; use one of {SIM_CRITERIA}"
            )
    skills = tuple(
        SkillSpec(
            s["id"],
            ResourceVector(s.get("cost_estimate", {})),
            float(s.get("success_prob", 1.0)),
            s.get("call_limit"),
        )
        for s in d.get("skills", [])
    )
    inp = d.get("input", {})
    out = d.get("output", {})
    tmpl = ContractTemplate(
        budget=dict(d.get("budget", {})),
        duration_ms=d.get("duration_ms", 600_000),
        skills=skills,
        criteria=criteria,
        theta=float(success.get("theta", 1.0)),
        q_min=float(out.get("q_min", 0.0)),
        input_schema=inp.get("schema", "task"),
        output_schema=out.get("schema", "result"),
        format_id=out.get("format", ""),
        per_call_token_cap=d.get("per_call_token_cap"),
        fatal_error_codes=tuple(d.get("fatal_error_codes", ())),
    )
    # dry-run draft so contract-level validation errors get a config path
    try:
        draft_contract(tmpl.to_spec("validation"))
    except errors.InvalidSpec as exc:
        raise errors.ValidationError(path, f"{type(exc).__name__}: {exc}") from None
    return tmpl


def _need_agent(agents: dict, agent_id: str, path: str) -> None:
    if agent_id not in agents:
        raise errors.ValidationError(path, f"unknown agent {agent_id!r}")


def _build(data: dict) -> ScenarioSpec:
    agents = {aid: _agent_model(aid, a, f"agents.{aid}") for aid, a in data["agents"].items()}
    contract = _template(data["contract"], "contract")
    pattern = data["pattern"]
    unc = data.get("uncontracted", {})
    kw: dict[str, Any] = {}

    if pattern == ITERATIVE_REFINEMENT:
        it = data.get("iterative")
        if it is None:
            raise errors.ValidationError("iterative", "required for pattern iterative_refinement")
        for i, role in enumerate(it["sequence"]):
            _need_agent(agents, role, f"iterative.sequence.{i}")
        kw["sequence"] = tuple(it["sequence"])
        kw["max_iterations"] = it.get("max_iterations", 3)
    elif pattern == ORCHESTRATOR_WORKERS:
        o = data.get("orchestrator")
        if o is None:
            raise errors.ValidationError("orchestrator", "required for pattern orchestrator_workers")
        _need_agent(agents, o["agent"], "orchestrator.agent")
        workers = []
        roles = set()
        for i, w in enumerate(o["workers"]):
            p = f"orchestrator.workers.{i}"
            _need_agent(agents, w["agent"], f"{p}.agent")
            if w["role"] in roles:
                raise errors.ValidationError(f"{p}.role", f"duplicate role {w['role']!r}")
            roles.add(w["role"])
            workers.append(WorkerSpec(
                role=w["role"],
                agent=w["agent"],
                contract=_template(w.get("contract", {}), f"{p}.contract"),
                weight=float(w.get("weight", 1.0)),
                request=dict(w["request"]) if "request" in w else None,
                max_iterations=w.get("max_iterations", 3),
            ))
        strategy = o.get("strategy", "proportional")
        if strategy == "negotiated":
            for i, w in enumerate(o["workers"]):
                if "request" not in w:
                    raise errors.ValidationError(f"orchestrator.workers.{i}.request", "negotiated strategy needs a request")
        kw["orchestrator"] = OrchestratorSpec(
            agent=o["agent"],
            workers=tuple(workers),
            strategy=strategy,
            reserve_fraction=o.get("reserve_fraction", DEFAULT_RESERVE_FRACTION),
            cap_multiplier=o.get("cap_multiplier", DEFAULT_CAP_MULTIPLIER),
            allow_topups=o.get("allow_topups", True),
            topup_threshold=o.get("topup_threshold", 0.8),
            topup_fraction=o.get("topup_fraction", 0.25),
            cap_to_remaining=o.get("cap_to_remaining", True),
        )
    elif pattern == ROUTING:
        r = data.get("routing")
        if r is None:
            raise errors.ValidationError("routing", "required for pattern routing")
        specialists = []
        for i, sp in enumerate(r["specialists"]):
            p = f"routing.specialists.{i}"
            _need_agent(agents, sp["agent"], f"{p}.agent")
            specialists.append(SpecialistSpec(sp["id"], sp["agent"], _template(sp["contract"], f"{p}.contract"),
                                              sp.get("max_iterations", 3)))
        if len({s.specialist_id for s in specialists}) != len(specialists):
            raise errors.ValidationError("routing.specialists", "duplicate specialist id")
        kw["routing"] = RoutingSpec(
            specialists=tuple(specialists),
            tasks=tuple(TaskSpec(t["id"], tuple(t["required_skills"])) for t in r["tasks"]),
            reserve_fraction=r.get("reserve_fraction", DEFAULT_RESERVE_FRACTION),
            cap_multiplier=r.get("cap_multiplier", DEFAULT_CAP_MULTIPLIER),
        )

    thresholds = tuple(data.get("thresholds", DEFAULT_THRESHOLDS))
    if any(b <= a for a, b in zip(thresholds, thresholds[1:])):
        raise errors.ValidationError("thresholds", "must be strictly increasing")

    return ScenarioSpec(
        name=data["name"],
        family=data.get("family", data["name"]),
        pattern=pattern,
        condition=data.get("condition", "CONTRACTED").upper(),
        trials=data.get("trials", 1),
        seed=data.get("seed", 0),
        agents=agents,
        contract=contract,
        uncontracted_max_iterations=unc.get("max_iterations", 6),
        uncontracted_duration_ms=unc.get("duration_ms", UNCONTRACTED_DURATION_MS),
        modes=tuple(data.get("modes", ())),
        thresholds=thresholds,
        **kw,
    )

"""Exception hierarchy for the contract engine."""

from __future__ import annotations


class ContractError(Exception):
    """Base class for every error raised by the engine."""


# -- drafting / validation ---------------------------------------------------


class InvalidSpec(ContractError, ValueError):
    pass


class InvalidBudget(InvalidSpec):
    pass


class InvalidDuration(InvalidSpec):
    pass


class InvalidThreshold(InvalidSpec):
    pass


class DuplicateCriterion(InvalidSpec):
    pass


class DuplicateSkill(InvalidSpec):
    pass


# -- lifecycle ---------------------------------------------------------------


class LifecycleError(ContractError):
    pass


class NotDrafted(LifecycleError):
    pass


class NotActive(LifecycleError):
    pass


class ContractNotActive(NotActive):
    """A ledger recording was attempted against a contract that is not ACTIVE."""


class ParentNotActive(NotActive):
    pass


class AlreadyTerminal(LifecycleError):
    pass


class NotTerminal(LifecycleError):
    pass


class NotActivated(LifecycleError):
    pass


class ResourcesUnavailable(LifecycleError):
    pass


class MissingCriterion(ContractError, KeyError):
    pass


class UnknownContract(ContractError, KeyError):
    pass


# -- accounting --------------------------------------------------------------


class NegativeDelta(ContractError, ValueError):
    pass


class TokenMismatch(ContractError, ValueError):
    pass


class UnsortedThresholds(ContractError, ValueError):
    pass


# -- delegation --------------------------------------------------------------


class EmptyChildren(ContractError, ValueError):
    pass


class NonPositiveWeight(ContractError, ValueError):
    pass


class InvalidCapMultiplier(ContractError, ValueError):
    pass


class ConservationViolation(ContractError):
    pass


class TemporalOverrun(ContractError):
    pass


class AlreadyReleased(ContractError):
    pass


# -- simulation / cli --------------------------------------------------------


class InvalidPattern(ContractError, ValueError):
    pass


class EmptyTraces(ContractError, ValueError):
    pass


class ParseError(ContractError):
    pass


class ValidationError(ContractError):
    """Scenario config failed validation. ``path`` is the dotted field path."""

    def __init__(self, path: str, message: str) -> None:
        self.path = path
        self.message = message
        super().__init__(f"{path or '<root>'}: {message}")


class Mismatch(ContractError):
    pass


class IoError(ContractError, OSError):
    pass

"""Integer resource vectors over named dimensions."""

from __future__ import annotations

from collections.abc import Iterable, Iterator, Mapping

TOKEN = "token"
API_CALL = "api_call"
LLM_CALL = "llm_call"
ITERATION = "iteration"
WEB_SEARCH = "web_search"
CPU_SECOND = "cpu_second"
COST_MICROUSD = "cost_microusd"

STANDARD_DIMENSIONS = (TOKEN, API_CALL, LLM_CALL, ITERATION, WEB_SEARCH, CPU_SECOND, COST_MICROUSD)

MICROUSD_PER_USD = 1_000_000


def usd_to_microusd(usd: float | str) -> int:
    """Convert a USD amount to integer micro-USD, rounding half away from zero."""
    from decimal import ROUND_HALF_UP, Decimal

    return int((Decimal(str(usd)) * MICROUSD_PER_USD).to_integral_value(ROUND_HALF_UP))


class ResourceVector(Mapping[str, int]):
    """Immutable mapping ``dimension -> non-negative int``.

    Equality and ``<=`` treat absent dimensions as 0.  Key presence still
    matters for budgets: a contract bounds exactly the dimensions its budget
    lists, so ``{"token": 0}`` (token forbidden) and ``{}`` (nothing bounded)
    compare equal as quantities but govern differently.
    """

    __slots__ = ("_data",)

    def __init__(self, entries: Mapping[str, int] | Iterable[tuple[str, int]] | None = None, /, **kw: int):
        data = dict(entries or {})
        data.update(kw)
        for dim, qty in data.items():
            if not isinstance(dim, str) or not dim:
                raise ValueError(f"dimension must be a non-empty string, got {dim!r}")
            if isinstance(qty, bool) or not isinstance(qty, int):
                raise TypeError(f"quantity for {dim!r} must be int, got {type(qty).__name__}")
            if qty < 0:
                raise ValueError(f"quantity for {dim!r} is negative: {qty}")
        self._data = data

    @classmethod
    def coerce(cls, value: "ResourceVector | Mapping[str, int] | None") -> "ResourceVector":
        if isinstance(value, ResourceVector):
            return value
        return cls(value or {})

    # Mapping protocol
    def __getitem__(self, dim: str) -> int:
        return self._data[dim]

    def __iter__(self) -> Iterator[str]:
        return iter(self._data)

    def __len__(self) -> int:
        return len(self._data)

    def get(self, dim: str, default: int = 0) -> int:  # type: ignore[override]
        return self._data.get(dim, default)

    def __repr__(self) -> str:
        inner = ", ".join(f"{k}={v}" for k, v in sorted(self._data.items()))
        return f"ResourceVector({inner})"

    def __eq__(self, other: object) -> bool:
        if isinstance(other, Mapping):
            keys = set(self._data) | set(other)
            return all(self.get(k) == other.get(k, 0) for k in keys)
        return NotImplemented

    def __hash__(self) -> int:
        return hash(frozenset((k, v) for k, v in self._data.items() if v))

    def __add__(self, other: Mapping[str, int]) -> "ResourceVector":
        out = dict(self._data)
        for k, v in other.items():
            out[k] = out.get(k, 0) + v
        return ResourceVector(out)

    def __sub__(self, other: Mapping[str, int]) -> "ResourceVector":
        """Component-wise difference; raises if any dimension would go negative."""
        out = dict(self._data)
        for k, v in other.items():
            out[k] = out.get(k, 0) - v
        return ResourceVector(out)

    def saturating_sub(self, other: Mapping[str, int]) -> "ResourceVector":
        """``max(self - other, 0)`` per dimension, keyed on ``self``'s dimensions."""
        return ResourceVector({k: max(v - other.get(k, 0), 0) for k, v in self._data.items()})

    def __le__(self, other: Mapping[str, int]) -> bool:
        return all(v <= other.get(k, 0) for k, v in self._data.items())

    def le_bounded(self, budget: Mapping[str, int]) -> bool:
        """``self <= budget`` checked only on dimensions ``budget`` lists."""
        return all(self.get(k) <= b for k, b in budget.items())

    def restrict(self, dims: Iterable[str]) -> "ResourceVector":
        return ResourceVector({k: self.get(k) for k in dims})

    def total(self) -> int:
        return sum(self._data.values())

    def is_zero(self) -> bool:
        return not any(self._data.values())

    def to_dict(self) -> dict[str, int]:
        return {k: self._data[k] for k in sorted(self._data)}


def vsum(vectors: Iterable[Mapping[str, int]]) -> ResourceVector:
    out = ResourceVector()
    for v in vectors:
        out = out + v
    return out

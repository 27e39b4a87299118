"""Per-trial evaluation records shared by every search algorithm."""

from __future__ import annotations

from dataclasses import dataclass, field

from .errors import IncompleteArchitecture
from .evaluators import FULL_EPOCHS
from .space import SpaceLimits, encode, is_complete


@dataclass(frozen=True)
class TraceEvent:
    index: int
    encoding: tuple
    accuracy: float
    best_so_far: float
    cumulative_cost: int


@dataclass
class TrialTrace:
    algorithm: str
    seed: int
    config_hash: str = ""
    target: float | None = None
    tolerance: float = 0.0
    events: list[TraceEvent] = field(default_factory=list)
    _hit: int | None = field(default=None, init=False, repr=False, compare=False)

    def add(self, encoding, accuracy: float, cost: int = FULL_EPOCHS) -> TraceEvent:
        best = max(accuracy, self.events[-1].best_so_far) if self.events else accuracy
        total = (self.events[-1].cumulative_cost if self.events else 0) + cost
        event = TraceEvent(len(self.events) + 1, tuple(encoding), accuracy, best, total)
        self.events.append(event)
        if self._hit is None and self.target is not None and accuracy >= self.target - self.tolerance:
            self._hit = event.index
        return event

    @property
    def samples_to_target(self) -> int | None:
        return self._hit

    @property
    def reached(self) -> bool:
        return self.samples_to_target is not None

    @property
    def best(self) -> float:
        return self.events[-1].best_so_far if self.events else 0.0

    @property
    def costs(self) -> list[int]:
        out, prev = [], 0
        for e in self.events:
            out.append(e.cumulative_cost - prev)
            prev = e.cumulative_cost
        return out


class BudgetedEvaluator:
    """Caches true evaluations and records first-time ones into a trace.

    ``done`` turns true once the unique-evaluation budget is spent or the
    target accuracy has been seen.
    """

    def __init__(self, evaluator, limits: SpaceLimits, trace: TrialTrace, budget: int):
        self.evaluator = evaluator
        self.limits = limits
        self.trace = trace
        self.budget = budget
        self.cache: dict[tuple, float] = {}

    @property
    def done(self) -> bool:
        return len(self.cache) >= self.budget or self.trace.reached

    def __call__(self, arch, cost: int = FULL_EPOCHS) -> tuple[float, bool]:
        """Accuracy of ``arch`` and whether this was a new evaluation."""
        if not is_complete(arch):
            raise IncompleteArchitecture("only complete architectures can be evaluated")
        return self.by_encoding(encode(arch, self.limits), cost)

    def by_encoding(self, enc: tuple, cost: int = FULL_EPOCHS) -> tuple[float, bool]:
        """Like calling the evaluator, for an encoding known to be complete."""
        if enc in self.cache:
            return self.cache[enc], False
        acc = self.evaluator.accuracy_of_encoding(enc)
        self.cache[enc] = acc
        self.trace.add(enc, acc, cost)
        return acc, True

"""Verdicts and the errors a containment check can raise."""

from __future__ import annotations

from dataclasses import dataclass, field

from ..model import DatabaseInstance, QueryError
from .prooftree import ProofTree


class UnsupportedFragment(QueryError):
    pass


class ResourceLimit(RuntimeError):
    pass


class WitnessError(AssertionError):
    """A countermodel failed its independent re-check."""


@dataclass(frozen=True)
class Verdict:
    kind: str  # Contained | NotContained | Inconclusive
    proof_tree: ProofTree | None = None
    instance: DatabaseInstance | None = None
    answer: tuple = ()
    lam: dict | None = None
    depth: int | None = None
    note: str = ""
    stats: dict = field(default_factory=dict, compare=False)

    @staticmethod
    def contained(note: str = "", **stats) -> "Verdict":
        return Verdict("Contained", note=note, stats=stats)

    @staticmethod
    def not_contained(tree: ProofTree | None, instance: DatabaseInstance, answer, lam=None,
                      note: str = "", **stats) -> "Verdict":
        return Verdict("NotContained", tree, instance, tuple(answer), dict(lam or {}), note=note, stats=stats)

    @staticmethod
    def inconclusive(depth: int, note: str = "", **stats) -> "Verdict":
        return Verdict("Inconclusive", depth=depth, note=note, stats=stats)

    @property
    def is_contained(self) -> bool:
        return self.kind == "Contained"

    @property
    def is_not_contained(self) -> bool:
        return self.kind == "NotContained"

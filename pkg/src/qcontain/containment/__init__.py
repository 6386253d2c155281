"""Containment of Datalog queries in guarded queries."""

from __future__ import annotations

from ..model import FCQ, QueryError, QueryForm
from .engine import CountermodelSearch, countermodel_containment, head_patterns, validate_witness
from .matching import (
    GuardExpansion, MatchState, annotated_labels, build_match_ata, build_rule_matcher, guard_expansions,
    indexed_labels, indexed_tree, is_matching_tree, localize,
)
from .oracle import bounded_oracle
from .prooftree import (
    LHSProgram, ProofAlphabet, ProofTree, build_proof_automaton, canonical_instance,
    connectedness_classes, is_proof_tree, lhs_program, proof_alphabet,
)
from .verdict import ResourceLimit, UnsupportedFragment, Verdict, WitnessError

MODES = ("auto", "gq", "gdl", "nested")
ENGINES = ("automata", "oracle")


def _check_mode(q: QueryForm, mode: str) -> None:
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}")
    if mode == "auto":
        return
    nested = bool(q.program.subqueries)
    if mode == "nested" and not nested:
        raise UnsupportedFragment("nested mode needs a nested right-hand query")
    if mode in ("gq", "gdl") and nested:
        raise UnsupportedFragment(f"{mode} mode does not accept nested queries")
    if mode == "gdl" and (isinstance(q, FCQ) and q.program.max_lambda()):
        raise UnsupportedFragment("gdl mode needs a right-hand query without special constants")


def decide_containment(p: QueryForm, q: QueryForm, mode: str = "auto", engine: str = "automata",
                       max_states: int = 10**6, timeout: float | None = None, depth: int = 4) -> Verdict:
    """Decide whether every answer of ``p`` is an answer of ``q``.

    ``engine="automata"`` runs the countermodel automaton and is complete;
    ``engine="oracle"`` only refutes, up to proof-tree height ``depth``.
    Every NotContained verdict carries a re-checked witness.
    """
    if p.arity != q.arity:
        raise QueryError(f"arity mismatch: {p.arity} vs {q.arity}")
    _check_mode(q, mode)
    if p == q:
        return Verdict.contained(note="identical queries", engine=engine)
    if engine == "oracle":
        return bounded_oracle(p, q, depth, max_expansions=max_states, timeout=timeout)
    if engine != "automata":
        raise ValueError(f"unknown engine {engine!r}")
    return countermodel_containment(p, q, max_states=max_states, timeout=timeout)


__all__ = [
    "CountermodelSearch", "GuardExpansion", "LHSProgram", "MatchState", "ProofAlphabet", "ProofTree",
    "ResourceLimit", "UnsupportedFragment", "Verdict", "WitnessError", "annotated_labels",
    "bounded_oracle", "build_match_ata", "build_proof_automaton", "build_rule_matcher",
    "canonical_instance", "connectedness_classes", "countermodel_containment", "decide_containment",
    "guard_expansions", "head_patterns", "indexed_labels", "indexed_tree", "is_matching_tree",
    "is_proof_tree", "lhs_program", "localize", "proof_alphabet", "validate_witness",
]

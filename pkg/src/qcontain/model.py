"""Abstract syntax for Datalog, flag-and-check and nested queries.

Everything here is an immutable value.  Programs keep their declarations as
sorted tuples so that structural equality does not depend on declaration
order.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from graphlib import CycleError, TopologicalSorter
from typing import Iterable, Iterator, Mapping, Union

HIT = "hit"


@dataclass(frozen=True, order=True)
class Var:
    name: str

    def __str__(self) -> str:
        return self.name


@dataclass(frozen=True, order=True)
class Const:
    name: str

    def __str__(self) -> str:
        return self.name


@dataclass(frozen=True, order=True)
class Lam:
    """The special constant lambda_k (1-based)."""

    index: int

    def __str__(self) -> str:
        return f"@{self.index}"


Term = Union[Var, Const, Lam]


@dataclass(frozen=True)
class Atom:
    pred: str
    args: tuple = ()

    def __post_init__(self):
        if not isinstance(self.args, tuple):
            object.__setattr__(self, "args", tuple(self.args))

    @property
    def arity(self) -> int:
        return len(self.args)

    def variables(self) -> list[Var]:
        return [t for t in self.args if isinstance(t, Var)]

    def lambdas(self) -> list[Lam]:
        return [t for t in self.args if isinstance(t, Lam)]

    def substitute(self, theta: Mapping[Term, Term]) -> "Atom":
        return Atom(self.pred, tuple(theta.get(t, t) for t in self.args))

    def __str__(self) -> str:
        if not self.args:
            return self.pred
        return f"{self.pred}({','.join(map(str, self.args))})"


@dataclass(frozen=True)
class Rule:
    head: Atom
    body: tuple

    def __post_init__(self):
        if not isinstance(self.body, tuple):
            object.__setattr__(self, "body", tuple(self.body))

    def variables(self) -> list[Var]:
        """Variables in order of first occurrence (head first)."""
        seen: dict[Var, None] = {}
        for a in (self.head, *self.body):
            for v in a.variables():
                seen.setdefault(v)
        return list(seen)

    def head_variables(self) -> set[Var]:
        return set(self.head.variables())

    def substitute(self, theta: Mapping[Term, Term]) -> "Rule":
        return Rule(self.head.substitute(theta), tuple(a.substitute(theta) for a in self.body))

    def __str__(self) -> str:
        return f"{self.head} :- {', '.join(map(str, self.body))}."


@dataclass(frozen=True)
class CQ:
    """Conjunctive query ``query(head) :- body``."""

    head: tuple
    body: tuple

    def __post_init__(self):
        for name in ("head", "body"):
            val = getattr(self, name)
            if not isinstance(val, tuple):
                object.__setattr__(self, name, tuple(val))

    def as_rule(self, pred: str = "query") -> Rule:
        return Rule(Atom(pred, self.head), self.body)


def _decls(d: Mapping[str, int] | Iterable[tuple[str, int]] | None) -> tuple:
    if d is None:
        return ()
    items = d.items() if isinstance(d, Mapping) else d
    return tuple(sorted((str(k), int(v)) for k, v in items))


@dataclass(frozen=True)
class Program:
    edb: tuple = ()
    idb: tuple = ()
    rules: tuple = ()
    subqueries: tuple = ()  # sorted (name, FCQ) pairs

    @staticmethod
    def make(edb=None, idb=None, rules=(), subqueries=None) -> "Program":
        subs = subqueries.items() if isinstance(subqueries, Mapping) else (subqueries or ())
        return Program(_decls(edb), _decls(idb), tuple(rules), tuple(sorted(subs, key=lambda kv: kv[0])))

    @cached_property
    def edb_arity(self) -> dict[str, int]:
        return dict(self.edb)

    @cached_property
    def idb_arity(self) -> dict[str, int]:
        return dict(self.idb)

    @cached_property
    def subquery_map(self) -> dict[str, "FCQ"]:
        return dict(self.subqueries)

    def arity(self, pred: str) -> int | None:
        if pred == HIT:
            return 0
        if pred in self.edb_arity:
            return self.edb_arity[pred]
        if pred in self.idb_arity:
            return self.idb_arity[pred]
        if pred in self.subquery_map:
            return len(self.subquery_map[pred].free)
        return None

    def is_edb(self, pred: str) -> bool:
        return pred in self.edb_arity

    def is_idb(self, pred: str) -> bool:
        return pred in self.idb_arity or pred == HIT

    def is_subquery(self, pred: str) -> bool:
        return pred in self.subquery_map

    def rules_for(self, pred: str) -> list[Rule]:
        return [r for r in self.rules if r.head.pred == pred]

    def replace(self, **kw) -> "Program":
        return Program.make(
            edb=kw.get("edb", self.edb),
            idb=kw.get("idb", self.idb),
            rules=kw.get("rules", self.rules),
            subqueries=kw.get("subqueries", self.subqueries),
        )

    def constants(self) -> set[str]:
        out = set()
        for r in self.rules:
            for a in (r.head, *r.body):
                out.update(t.name for t in a.args if isinstance(t, Const))
        return out

    def max_lambda(self) -> int:
        return max((t.index for r in self.rules for a in (r.head, *r.body) for t in a.lambdas()), default=0)


@dataclass(frozen=True)
class DatalogQuery:
    """``<P, Q>`` where Q is a union of goal CQs over the program's predicates."""

    program: Program
    goals: tuple

    @property
    def arity(self) -> int:
        return len(self.goals[0].head) if self.goals else 0


@dataclass(frozen=True)
class UCQ:
    program: Program  # declarations only
    cqs: tuple

    @property
    def arity(self) -> int:
        return len(self.cqs[0].head) if self.cqs else 0


@dataclass(frozen=True)
class FCQ:
    """Flag-and-check query of arity m; answers are projections on ``free``.

    Positions not in ``free`` are existentially quantified.  A program with
    subqueries makes this a nested query.
    """

    program: Program
    m: int
    free: tuple

    def __post_init__(self):
        if not isinstance(self.free, tuple):
            object.__setattr__(self, "free", tuple(self.free))

    @property
    def arity(self) -> int:
        return len(self.free)

    @property
    def nested(self) -> bool:
        return bool(self.program.subqueries)


NestedFCQ = FCQ
QueryForm = Union[DatalogQuery, UCQ, FCQ]


def answer_arity(q: QueryForm) -> int:
    return q.arity


@dataclass(frozen=True)
class FragmentFlags:
    monadic: bool
    linear: bool
    frontier_guarded: bool
    nesting_depth: int
    recursive: bool


@dataclass(frozen=True)
class Diagnostic:
    code: str
    message: str
    where: str = ""
    severity: str = "error"

    def __str__(self) -> str:
        loc = f" [{self.where}]" if self.where else ""
        return f"{self.severity}: {self.code}: {self.message}{loc}"


class QueryError(ValueError):
    """Raised when a query or instance is malformed."""

    def __init__(self, message: str, diagnostics: Iterable[Diagnostic] = ()):
        super().__init__(message)
        self.diagnostics = list(diagnostics)


@dataclass(frozen=True)
class DatabaseInstance:
    """A finite set of ground facts; elements are identified with constant names."""

    facts: frozenset = field(default_factory=frozenset)

    def __post_init__(self):
        if not isinstance(self.facts, frozenset):
            object.__setattr__(self, "facts", frozenset(self.facts))

    @staticmethod
    def of(*facts: tuple) -> "DatabaseInstance":
        return DatabaseInstance(frozenset((p, tuple(args)) for p, args in facts))

    @cached_property
    def domain(self) -> frozenset:
        return frozenset(e for _, args in self.facts for e in args)

    @cached_property
    def relations(self) -> dict[str, set[tuple]]:
        rel: dict[str, set[tuple]] = {}
        for p, args in self.facts:
            rel.setdefault(p, set()).add(args)
        return rel

    def union(self, other: "DatabaseInstance") -> "DatabaseInstance":
        return DatabaseInstance(self.facts | other.facts)

    def __len__(self) -> int:
        return len(self.facts)

    def __iter__(self) -> Iterator[tuple]:
        return iter(sorted(self.facts))


Instance = DatabaseInstance


# ----------------------------------------------------------------------
# classification

def _program_of(q: QueryForm) -> Program:
    return q.program


def _all_rules(q: QueryForm) -> list[Rule]:
    rules = list(q.program.rules)
    if isinstance(q, DatalogQuery):
        rules += [g.as_rule() for g in q.goals]
    elif isinstance(q, UCQ):
        rules += [g.as_rule() for g in q.cqs]
    return rules


def is_frontier_guarded_rule(rule: Rule, prog: Program) -> bool:
    hv = rule.head_variables()
    if not hv:
        return True
    return any(prog.is_edb(a.pred) and hv <= set(a.variables()) for a in rule.body)


def guard_atom(rule: Rule, prog: Program) -> Atom | None:
    """First EDB body atom covering every head variable."""
    hv = rule.head_variables()
    for a in rule.body:
        if prog.is_edb(a.pred) and hv <= set(a.variables()):
            return a
    return None


def is_recursive(prog: Program) -> bool:
    graph: dict[str, set[str]] = {}
    for r in prog.rules:
        deps = {a.pred for a in r.body if prog.is_idb(a.pred)}
        graph.setdefault(r.head.pred, set()).update(deps)
    for head, deps in graph.items():
        if head in deps:
            return True
    try:
        tuple(TopologicalSorter(graph).static_order())
    except CycleError:
        return True
    return False


def nesting_depth(q: QueryForm) -> int:
    subs = q.program.subqueries
    if not subs:
        return 0
    return 1 + max(nesting_depth(s) for _, s in subs)


def classify(q: QueryForm) -> FragmentFlags:
    prog = q.program
    rules = _all_rules(q)
    monadic = all(a <= 1 for _, a in prog.idb)
    linear = all(
        sum(1 for a in r.body if prog.is_idb(a.pred) or prog.is_subquery(a.pred)) <= 1 for r in rules
    )
    guarded = all(is_frontier_guarded_rule(r, prog) for r in prog.rules)
    recursive = is_recursive(prog)
    for _, sub in prog.subqueries:
        f = classify(sub)
        monadic &= f.monadic
        linear &= f.linear
        guarded &= f.frontier_guarded
        recursive |= f.recursive
    return FragmentFlags(monadic, linear, guarded, nesting_depth(q), recursive)


# ----------------------------------------------------------------------
# validation

def _check_atom(a: Atom, prog: Program, where: str, out: list[Diagnostic], max_lam: int):
    ar = prog.arity(a.pred)
    if ar is None:
        out.append(Diagnostic("undeclared predicate", f"predicate {a.pred}/{a.arity} is not declared", where))
    elif ar != a.arity:
        out.append(Diagnostic("arity mismatch", f"{a.pred} declared with arity {ar}, used with {a.arity}", where))
    for t in a.lambdas():
        if t.index < 1 or t.index > max_lam:
            out.append(Diagnostic("λ index out of range", f"{t} exceeds query arity {max_lam}", where))


def validate(q: QueryForm, include_info: bool = False) -> list[Diagnostic]:
    """Check well-formedness; an empty list means the query is well-formed.

    Informational notes (such as special constants inside guard atoms) are
    only reported when ``include_info`` is set.
    """
    out: list[Diagnostic] = []
    prog = q.program
    m = q.m if isinstance(q, FCQ) else 0
    names = [p for p, _ in prog.edb] + [p for p, _ in prog.idb] + [p for p, _ in prog.subqueries]
    for p in {p for p in names if names.count(p) > 1}:
        out.append(Diagnostic("duplicate declaration", f"{p} declared more than once"))
    if HIT in names:
        out.append(Diagnostic("reserved predicate", "hit cannot be declared"))
    for i, r in enumerate(prog.rules):
        where = f"rule {i + 1}: {r}"
        if not r.body:
            out.append(Diagnostic("empty body", "rule bodies must be nonempty", where))
        if r.head.pred == HIT:
            if r.head.args:
                out.append(Diagnostic("arity mismatch", "hit is nullary", where))
            if not isinstance(q, FCQ):
                out.append(Diagnostic("hit outside FCQ", "hit is only meaningful in flag-and-check queries", where))
        elif prog.is_edb(r.head.pred):
            out.append(Diagnostic("EDB in head", f"EDB predicate {r.head.pred} used in a rule head", where))
        elif prog.is_subquery(r.head.pred):
            out.append(Diagnostic("subquery in head", f"subquery {r.head.pred} used in a rule head", where))
        else:
            _check_atom(r.head, prog, where, out, m)
        for a in r.body:
            if a.pred == HIT:
                out.append(Diagnostic("hit in body", "hit may only occur in rule heads", where))
                continue
            _check_atom(a, prog, where, out, m)
            if include_info and prog.is_edb(a.pred) and a.lambdas() and a is guard_atom(r, prog):
                out.append(Diagnostic("lambda in guard", f"special constant inside guard atom {a}", where, "info"))
    goals = q.goals if isinstance(q, DatalogQuery) else q.cqs if isinstance(q, UCQ) else ()
    arities = {len(g.head) for g in goals}
    if len(arities) > 1:
        out.append(Diagnostic("arity mismatch", "goal CQs disagree on answer arity"))
    for g in goals:
        where = f"goal {CQ_str(g)}"
        for a in g.body:
            if a.pred == HIT:
                out.append(Diagnostic("hit in body", "hit may only occur in rule heads", where))
            else:
                _check_atom(a, prog, where, out, 0)
        for t in g.head:
            if isinstance(t, Lam):
                out.append(Diagnostic("λ index out of range", f"{t} in a goal head", where))
    if isinstance(q, FCQ):
        if q.m < 0:
            out.append(Diagnostic("bad arity", "FCQ arity must be nonnegative"))
        bad = [i for i in q.free if not 1 <= i <= q.m]
        if bad:
            out.append(Diagnostic("free position out of range", f"positions {bad} outside 1..{q.m}"))
        if len(set(q.free)) != len(q.free):
            out.append(Diagnostic("duplicate free position", f"{q.free}"))
    for name, sub in prog.subqueries:
        for d in validate(sub, include_info):
            out.append(Diagnostic(d.code, d.message, f"subquery {name}: {d.where}", d.severity))
    return out


def CQ_str(g: CQ) -> str:
    return f"query({','.join(map(str, g.head))}) :- {', '.join(map(str, g.body))}."


def check(q: QueryForm) -> QueryForm:
    """Return q unchanged or raise QueryError listing the diagnostics."""
    diags = validate(q)
    if diags:
        raise QueryError("; ".join(map(str, diags)), diags)
    return q

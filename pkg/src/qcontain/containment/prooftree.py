"""Proof trees of Datalog queries, their alphabet and automaton, and witnesses."""

from __future__ import annotations

import itertools
import re
from dataclasses import dataclass
from functools import cached_property
from typing import Iterable, Iterator, Sequence

from ..automata import NFTA, RankedAlphabet, Tree
from ..model import (
    CQ, Atom, Const, DatabaseInstance, DatalogQuery, FCQ, Lam, Program, QueryError, QueryForm,
    Rule, UCQ, Var,
)

START = "START"


@dataclass(frozen=True)
class ProofTree:
    """A tree of rule instantiations.

    ``lam`` is an optional lambda-label, a tuple of (k, variable) pairs, and
    ``p`` an optional extra atom label.
    """

    label: Rule
    children: tuple = ()
    lam: tuple = ()
    p: Atom | None = None

    def __post_init__(self):
        object.__setattr__(self, "children", tuple(self.children))
        object.__setattr__(self, "lam", tuple(sorted(dict(self.lam).items())))

    def nodes(self) -> Iterator[tuple[tuple, "ProofTree"]]:
        stack = [((), self)]
        while stack:
            addr, t = stack.pop()
            yield addr, t
            for i in range(len(t.children), 0, -1):
                stack.append((addr + (i,), t.children[i - 1]))

    def subtree(self, addr: Sequence[int]) -> "ProofTree":
        t = self
        for i in addr:
            t = t.children[i - 1]
        return t

    @property
    def depth(self) -> int:
        """Number of edges on the longest root-to-leaf path."""
        return max((c.depth + 1 for c in self.children), default=0)

    @property
    def size(self) -> int:
        return 1 + sum(c.size for c in self.children)

    def to_tree(self, annotated: bool = False) -> Tree:
        lab = (self.label, self.lam, self.p) if annotated else self.label
        return Tree(lab, tuple(c.to_tree(annotated) for c in self.children))

    @staticmethod
    def from_tree(t: Tree) -> "ProofTree":
        lab = t.label
        kids = tuple(ProofTree.from_tree(c) for c in t.children)
        if isinstance(lab, tuple):
            return ProofTree(lab[0], kids, lab[1], lab[2])
        return ProofTree(lab, kids)

    def strip(self) -> "ProofTree":
        return ProofTree(self.label, tuple(c.strip() for c in self.children))


# ---------------------------------------------------------------- normal form


@dataclass(frozen=True)
class LHSProgram:
    """A safe, unnested Datalog program with a single goal predicate."""

    program: Program
    goal: str
    source: QueryForm

    @property
    def arity(self) -> int:
        return self.program.arity(self.goal)

    def idb_atoms(self, rule: Rule) -> list[Atom]:
        return [a for a in rule.body if self.program.is_idb(a.pred)]

    def edb_atoms(self, rule: Rule) -> list[Atom]:
        return [a for a in rule.body if not self.program.is_idb(a.pred)]


def _fresh_pred(prog: Program, base: str) -> str:
    from ..rewrites import Fresh, predicate_names

    return Fresh(predicate_names(prog))(base)


def _goal_rules(prog: Program, goals: Sequence[CQ]) -> tuple[Program, str]:
    if len(goals) == 1:
        g = goals[0]
        if (len(g.body) == 1 and prog.is_idb(g.body[0].pred) and g.body[0].pred != "hit"
                and all(isinstance(t, Var) for t in g.head) and len(set(g.head)) == len(g.head)
                and tuple(g.head) == tuple(g.body[0].args)):
            return prog, g.body[0].pred
    goal = _fresh_pred(prog, "goal")
    rules = list(prog.rules) + [g.as_rule(goal) for g in goals]
    idb = dict(prog.idb)
    idb[goal] = len(goals[0].head) if goals else 0
    return prog.replace(idb=idb, rules=rules), goal


def lhs_program(q: QueryForm) -> LHSProgram:
    """Bring a query into the form proof trees are defined for."""
    from ..rewrites import add_domain_guards, fcq_to_datalog, inline_subqueries

    src = q
    if isinstance(q, FCQ):
        if q.program.max_lambda() > q.m:
            raise QueryError("lambda index out of range")
        q = fcq_to_datalog(q, contextual_only=True)
    if q.program.subqueries:
        q = inline_subqueries(q)
    if isinstance(q, UCQ):
        q = DatalogQuery(q.program, q.cqs)
    q = add_domain_guards(q)
    if q.program.max_lambda():
        raise QueryError("left-hand query still mentions special constants")
    prog, goal = _goal_rules(q.program, q.goals)
    return LHSProgram(prog, goal, src)


# ---------------------------------------------------------------- alphabet


def _var_key(v) -> tuple:
    m = re.fullmatch(r"V(\d+)", v.name) if isinstance(v, Var) else None
    return (0, int(m.group(1)), "") if m else (1, 0, str(v))


@dataclass(frozen=True)
class ProofAlphabet:
    lhs: LHSProgram
    n: int

    @property
    def program(self) -> Program:
        return self.lhs.program

    @cached_property
    def variables(self) -> tuple[Var, ...]:
        return tuple(Var(f"V{i}") for i in range(1, self.n + 1))

    def rank(self, label: Rule) -> int:
        return len(self.lhs.idb_atoms(label))

    def instantiations(self, rule: Rule) -> Iterator[Rule]:
        vs = rule.variables()
        for img in itertools.product(self.variables, repeat=len(vs)):
            yield rule.substitute(dict(zip(vs, img)))

    def labels(self) -> Iterator[Rule]:
        seen: set = set()
        for r in self.program.rules:
            for lab in self.instantiations(r):
                if lab not in seen:
                    seen.add(lab)
                    yield lab

    @property
    def count(self) -> int:
        return sum(1 for _ in self.labels())

    def ranked(self) -> RankedAlphabet:
        return RankedAlphabet({lab: self.rank(lab) for lab in self.labels()})


def proof_alphabet(q: QueryForm | LHSProgram) -> ProofAlphabet:
    lhs = q if isinstance(q, LHSProgram) else lhs_program(q)
    n = 2 * max((len(r.variables()) for r in lhs.program.rules), default=0)
    return ProofAlphabet(lhs, n)


def build_proof_automaton(q: QueryForm | LHSProgram | ProofAlphabet, max_states: int | None = None) -> NFTA:
    """Top-down automaton whose states are IDB atoms over the variable pool."""
    alpha = q if isinstance(q, ProofAlphabet) else proof_alphabet(q)
    lhs = alpha.lhs
    ranks: dict = {}
    states = {START}
    delta: dict = {}
    for lab in alpha.labels():
        kids = tuple(lhs.idb_atoms(lab))
        ranks[lab] = len(kids)
        states.add(lab.head)
        states.update(kids)
        delta.setdefault((lab.head, lab), set()).add(kids)
        if lab.head.pred == lhs.goal:
            delta.setdefault((START, lab), set()).add(kids)
        if max_states is not None and len(states) > max_states:
            from .verdict import ResourceLimit

            raise ResourceLimit(f"proof automaton exceeds {max_states} states")
    return NFTA(RankedAlphabet(ranks), states, {START}, delta)


def _match_rule(rule: Rule, label: Rule, pool: set) -> bool:
    """Is ``label`` the image of ``rule`` under a map of variables into the pool?"""
    if len(rule.body) != len(label.body):
        return False
    theta: dict = {}
    for a, b in zip((rule.head, *rule.body), (label.head, *label.body)):
        if a.pred != b.pred or len(a.args) != len(b.args):
            return False
        for s, t in zip(a.args, b.args):
            if isinstance(s, Var):
                if t not in pool or theta.setdefault(s, t) != t:
                    return False
            elif s != t:
                return False
    return True


def is_proof_tree(q: QueryForm | LHSProgram | ProofAlphabet, t: ProofTree) -> bool:
    """Direct check of the root and parent/child conditions on a candidate tree."""
    alpha = q if isinstance(q, ProofAlphabet) else proof_alphabet(q)
    prog, pool = alpha.program, set(alpha.variables)
    if t.label.head.pred != alpha.lhs.goal:
        return False
    for _, node in t.nodes():
        if not any(_match_rule(r, node.label, pool) for r in prog.rules):
            return False
        idb = [a for a in node.label.body if prog.is_idb(a.pred)]
        if len(idb) != len(node.children):
            return False
        if any(c.label.head != a for c, a in zip(node.children, idb)):
            return False
    return True


# ---------------------------------------------------------------- witnesses


def constant_names(avoid: Iterable[str] = ()) -> Iterator[str]:
    avoid = set(avoid)
    for k in itertools.count():
        for ch in "abcdefghijklmnopqrstuvwxyz":
            name = ch if k == 0 else f"{ch}{k}"
            if name not in avoid:
                yield name


class _UF:
    def __init__(self):
        self.parent: dict = {}

    def find(self, x):
        self.parent.setdefault(x, x)
        while self.parent[x] != x:
            self.parent[x] = self.parent[self.parent[x]]
            x = self.parent[x]
        return x

    def union(self, a, b):
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            self.parent[rb] = ra


def connectedness_classes(t: ProofTree) -> dict:
    """Map each (address, variable) occurrence to a class representative."""
    uf = _UF()
    for addr, node in t.nodes():
        for v in node.label.variables():
            uf.find((addr, v))
        if addr:
            for v in node.label.head.variables():
                uf.union((addr[:-1], v), (addr, v))
    return {occ: uf.find(occ) for occ in list(uf.parent)}


def canonical_instance(t: ProofTree, idb: Iterable[str] | Program | None = None,
                       avoid: Iterable[str] = ()):
    """Instance, answer tuple and lambda binding induced by a proof tree.

    Returns ``(instance, answer, lam)``; ``lam`` maps k to a constant for
    every lambda-label present in the tree.
    """
    nodes = list(t.nodes())
    if isinstance(idb, Program):
        idb_preds = set(idb.idb_arity) | {"hit"}
    elif idb is None:
        idb_preds = {node.label.head.pred for _, node in nodes}
    else:
        idb_preds = set(idb)
    consts = {c.name for _, node in nodes for a in (node.label.head, *node.label.body)
              for c in a.args if isinstance(c, Const)}
    for _, node in nodes:
        if any(isinstance(x, Lam) for a in (node.label.head, *node.label.body) for x in a.args):
            raise QueryError("proof tree labels may not mention special constants")
    cls = connectedness_classes(t)
    names = constant_names(consts | set(avoid))
    rep_name: dict = {}
    for addr, node in sorted(nodes, key=lambda an: (len(an[0]), an[0])):
        for v in sorted(node.label.variables(), key=_var_key):
            rep = cls[(addr, v)]
            if rep not in rep_name:
                rep_name[rep] = next(names)

    def val(addr, x) -> str:
        return x.name if isinstance(x, Const) else rep_name[cls[(addr, x)]]

    facts = set()
    for addr, node in nodes:
        for a in node.label.body:
            if a.pred in idb_preds:
                continue
            facts.add((a.pred, tuple(val(addr, x) for x in a.args)))
    answer = tuple(val((), x) for x in t.label.head.args)
    lam: dict = {}
    for addr, node in nodes:
        for k, v in node.lam:
            c = val(addr, v)
            if lam.setdefault(k, c) != c:
                raise QueryError(f"lambda-label for {k} is inconsistent")
    return DatabaseInstance(frozenset(facts)), answer, lam

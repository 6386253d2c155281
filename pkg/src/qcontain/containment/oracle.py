"""Refutation by enumerating proof trees up to a height bound."""

from __future__ import annotations

import time
from dataclasses import dataclass, field

from ..eval import check_answer
from ..model import Const, DatabaseInstance, FCQ, QueryError, QueryForm, Var
from .prooftree import LHSProgram, ProofTree, canonical_instance, lhs_program
from .verdict import ResourceLimit, Verdict, WitnessError


@dataclass
class _Node:
    rule: int
    theta: dict
    children: list = field(default_factory=list)


class _Search:
    """Depth-first enumeration of proof-tree skeletons.

    Elements are unification variables: applying a rule to an open atom
    unifies the rule head with the atom, so every skeleton is explored in its
    most general instantiation.
    """

    def __init__(self, lhs: LHSProgram, rhs: QueryForm, max_expansions: int, deadline: float | None):
        self.lhs = lhs
        self.rhs = rhs
        self.rules = list(lhs.program.rules)
        self.by_pred: dict = {}
        for i, r in enumerate(self.rules):
            self.by_pred.setdefault(r.head.pred, []).append(i)
        self.max_expansions = max_expansions
        self.deadline = deadline
        self.expansions = 0
        self.fresh = 0

    @staticmethod
    def find(sub: dict, e):
        while e in sub:
            e = sub[e]
        return e

    def unify(self, sub: dict, a, b) -> bool:
        a, b = self.find(sub, a), self.find(sub, b)
        if a == b:
            return True
        if a[0] == "c" and b[0] == "c":
            return False
        if a[0] == "c":
            a, b = b, a
        sub[a] = b
        return True

    def new_element(self):
        self.fresh += 1
        return ("e", self.fresh)

    def name(self, sub: dict, e) -> str:
        e = self.find(sub, e)
        return e[1] if e[0] == "c" else f"_{e[1]}"

    def answered(self, sub: dict, facts: list, answer: tuple) -> bool:
        inst = DatabaseInstance(frozenset((p, tuple(self.name(sub, e) for e in args)) for p, args in facts))
        return check_answer(self.rhs, inst, tuple(self.name(sub, e) for e in answer))

    def expand(self, ri: int, args: tuple, sub: dict):
        """Unify a rule head with the atom; returns (theta, substitution, edb, idb)."""
        r = self.rules[ri]
        theta: dict = {}
        sub = dict(sub)
        for t, e in zip(r.head.args, args):
            if isinstance(t, Const):
                ok = self.unify(sub, ("c", t.name), e)
            elif t in theta:
                ok = self.unify(sub, theta[t], e)
            else:
                theta[t] = e
                ok = True
            if not ok:
                return None
        edb, idb = [], []
        for a in r.body:
            vals = []
            for t in a.args:
                if isinstance(t, Const):
                    vals.append(("c", t.name))
                else:
                    if t not in theta:
                        theta[t] = self.new_element()
                    vals.append(theta[t])
            (idb if self.lhs.program.is_idb(a.pred) else edb).append((a.pred, tuple(vals)))
        return theta, sub, edb, idb

    def tick(self):
        self.expansions += 1
        if self.expansions > self.max_expansions:
            raise ResourceLimit(f"oracle exceeded {self.max_expansions} expansions")
        if self.deadline is not None and self.expansions % 64 == 0 and time.monotonic() > self.deadline:
            raise ResourceLimit("oracle exceeded its time budget")

    def search(self, height: int):
        """A complete tree of depth <= height whose canonical instance the
        right-hand side does not answer, as (root node, substitution), or None."""
        for ri in self.by_pred.get(self.lhs.goal, []):
            r = self.rules[ri]
            seen: dict = {}
            for t in r.head.args:
                if isinstance(t, Var) and t not in seen:
                    seen[t] = self.new_element()
            answer = tuple(("c", t.name) if isinstance(t, Const) else seen[t] for t in r.head.args)
            theta, sub, edb, idb = self.expand(ri, answer, {})
            if idb and height == 0:
                continue
            root = _Node(ri, theta)
            if self.answered(sub, edb, answer):
                continue
            sub = self._dfs(list(edb), [(root, a, 1) for a in idb], answer, height, sub)
            if sub is not None:
                return root, sub
        return None

    def _dfs(self, facts: list, opened: list, answer: tuple, height: int, sub: dict):
        if not opened:
            return sub
        (parent, (pred, args), depth), rest = opened[0], opened[1:]
        for ri in self.by_pred.get(pred, []):
            self.tick()
            res = self.expand(ri, args, sub)
            if res is None:
                continue
            theta, sub2, edb, idb = res
            if idb and depth >= height:
                continue
            node = _Node(ri, theta)
            parent.children.append(node)
            new_facts = facts + edb
            if not ((edb or len(sub2) > len(sub)) and self.answered(sub2, new_facts, answer)):
                found = self._dfs(new_facts, [(node, a, depth + 1) for a in idb] + rest, answer, height, sub2)
                if found is not None:
                    return found
            parent.children.pop()
        return None


def _to_proof_tree(search: _Search, node: _Node, sub: dict, names: dict, pool: list) -> ProofTree:
    r = search.rules[node.rule]
    theta = {v: search.find(sub, e) for v, e in node.theta.items()}
    used = set(names.values())
    free = iter(v for v in pool if v not in used)
    local = dict(names)

    def term(e):
        if e[0] == "c":
            return Const(e[1])
        if e not in local:
            local[e] = next(free)
        return local[e]

    for v in sorted(theta, key=lambda v: v.name):
        term(theta[v])
    label = r.substitute({v: term(e) for v, e in theta.items()})
    idb = [a for a in r.body if search.lhs.program.is_idb(a.pred)]
    kids = []
    for a, child in zip(idb, node.children):
        cn = {theta[t]: local[theta[t]] for t in a.args if isinstance(t, Var) and theta[t][0] != "c"}
        kids.append(_to_proof_tree(search, child, sub, cn, pool))
    return ProofTree(label, tuple(kids))


def bounded_oracle(p: QueryForm, q: QueryForm, depth: int, max_expansions: int = 10**6,
                   timeout: float | None = None) -> Verdict:
    """Look for a proof tree of p of height at most ``depth`` whose canonical
    instance q does not answer.  Sound for refutation only."""
    if depth < 0:
        raise ValueError("depth must be non-negative")
    if p.arity != q.arity:
        raise QueryError(f"arity mismatch: {p.arity} vs {q.arity}")
    lhs = lhs_program(p)
    deadline = None if timeout is None else time.monotonic() + timeout
    search = _Search(lhs, q, max_expansions, deadline)
    n = 2 * max((len(r.variables()) for r in lhs.program.rules), default=0)
    pool = [Var(f"V{i}") for i in range(1, n + 1)]
    for h in range(depth + 1):
        found = search.search(h)
        if found is None:
            continue
        root, sub = found
        tree = _to_proof_tree(search, root, sub, {}, pool)
        inst, answer, _ = canonical_instance(tree, lhs.program)
        if not check_answer(p, inst, answer) or check_answer(q, inst, answer):
            raise WitnessError("oracle witness failed its re-check")
        lam = {k: answer[i] for i, k in enumerate(q.free)} if isinstance(q, FCQ) else \
            {j + 1: a for j, a in enumerate(answer)}
        return Verdict.not_contained(tree, inst, answer, lam, engine="oracle", height=h,
                                     expansions=search.expansions)
    return Verdict.inconclusive(depth, engine="oracle", expansions=search.expansions)

"""Least-fixpoint evaluation of Datalog, flag-and-check and nested queries."""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Iterable, Iterator, Mapping, Sequence

from .model import (
    CQ, HIT, Atom, Const, DatabaseInstance, DatalogQuery, FCQ, Program, QueryError,
    QueryForm, Rule, UCQ, Var,
)


@dataclass(frozen=True)
class AnswerSet:
    arity: int
    tuples: frozenset

    def __contains__(self, t) -> bool:
        return tuple(t) in self.tuples

    def __len__(self) -> int:
        return len(self.tuples)

    def __iter__(self) -> Iterator[tuple]:
        return iter(sorted(self.tuples))

    def __eq__(self, other) -> bool:
        if isinstance(other, AnswerSet):
            return self.arity == other.arity and self.tuples == other.tuples
        if isinstance(other, (set, frozenset)):
            return self.tuples == frozenset(other)
        return NotImplemented

    __hash__ = None


class Store:
    """Relations with lazily built hash indexes on bound positions."""

    def __init__(self):
        self.rel: dict[str, set[tuple]] = {}
        self._idx: dict[tuple, dict[tuple, list[tuple]]] = {}

    def add(self, pred: str, t: tuple) -> bool:
        s = self.rel.setdefault(pred, set())
        if t in s:
            return False
        s.add(t)
        for (p, pos), idx in self._idx.items():
            if p == pred:
                idx.setdefault(tuple(t[i] for i in pos), []).append(t)
        return True

    def lookup(self, pred: str, pos: tuple, key: tuple) -> Sequence[tuple]:
        if not pos:
            return tuple(self.rel.get(pred, ()))
        idx = self._idx.get((pred, pos))
        if idx is None:
            idx = {}
            for t in self.rel.get(pred, ()):
                idx.setdefault(tuple(t[i] for i in pos), []).append(t)
            self._idx[(pred, pos)] = idx
        return idx.get(key, ())

    def has(self, pred: str, t: tuple) -> bool:
        return t in self.rel.get(pred, ())


class _Compiled:
    """A rule with terms resolved to variable slots or element values."""

    __slots__ = ("head_pred", "head", "body", "nvars", "free_head", "orders")

    def __init__(self, rule: Rule, lam: Sequence[str] | None):
        slots: dict[Var, int] = {}

        def conv(t):
            if isinstance(t, Var):
                return (0, slots.setdefault(t, len(slots)))
            if isinstance(t, Const):
                return (1, t.name)
            if lam is None or t.index > len(lam):
                raise QueryError(f"no binding for special constant {t}")
            return (1, lam[t.index - 1])

        self.body = [(a.pred, tuple(conv(t) for t in a.args)) for a in rule.body]
        body_vars = set(slots.values())
        self.head_pred = rule.head.pred
        self.head = tuple(conv(t) for t in rule.head.args)
        self.nvars = len(slots)
        self.free_head = sorted({v for k, v in self.head if k == 0 and v not in body_vars})
        self.orders: dict[int, list[int]] = {}

    def order(self, first: int) -> list[int]:
        if first not in self.orders:
            bound: set[int] = set()
            rest = list(range(len(self.body)))
            out = []
            if first >= 0:
                out.append(first)
                rest.remove(first)
                bound |= {v for k, v in self.body[first][1] if k == 0}
            while rest:
                best = max(rest, key=lambda j: (sum(1 for k, v in self.body[j][1] if k == 1 or v in bound), -j))
                rest.remove(best)
                out.append(best)
                bound |= {v for k, v in self.body[best][1] if k == 0}
            self.orders[first] = out
        return self.orders[first]


def _matches(c: _Compiled, store: Store, order: list[int], delta: dict[str, set] | None,
             first: int) -> Iterator[list]:
    env: list = [None] * c.nvars

    def rec(k: int):
        if k == len(order):
            yield env
            return
        j = order[k]
        pred, args = c.body[j]
        pos, key = [], []
        for i, (kind, v) in enumerate(args):
            if kind == 1:
                pos.append(i)
                key.append(v)
            elif env[v] is not None:
                pos.append(i)
                key.append(env[v])
        if delta is not None and j == first:
            cands = [t for t in delta.get(pred, ()) if all(t[p] == kv for p, kv in zip(pos, key))]
        else:
            cands = store.lookup(pred, tuple(pos), tuple(key))
        for t in cands:
            newly = []
            ok = True
            for i, (kind, v) in enumerate(args):
                if kind == 0:
                    cur = env[v]
                    if cur is None:
                        env[v] = t[i]
                        newly.append(v)
                    elif cur != t[i]:
                        ok = False
                        break
            if ok:
                yield from rec(k + 1)
            for v in newly:
                env[v] = None

    yield from rec(0)


def _heads(c: _Compiled, env: list, domain: Sequence[str]) -> Iterator[tuple]:
    if not c.free_head:
        yield tuple(v if kind == 1 else env[v] for kind, v in c.head)
        return
    for vals in itertools.product(domain, repeat=len(c.free_head)):
        for v, x in zip(c.free_head, vals):
            env[v] = x
        yield tuple(v if kind == 1 else env[v] for kind, v in c.head)
    for v in c.free_head:
        env[v] = None


def _least_model(rules: list[Rule], idb: set[str], base: Iterable[tuple], lam: Sequence[str] | None,
                 domain: Sequence[str]) -> Store:
    store = Store()
    for p, t in base:
        store.add(p, t)
    comp = [_Compiled(r, lam) for r in rules]
    delta: dict[str, set] = {}
    for c in comp:
        for env in _matches(c, store, c.order(-1), None, -1):
            for h in _heads(c, env, domain):
                if not store.has(c.head_pred, h):
                    delta.setdefault(c.head_pred, set()).add(h)
    for p, ts in delta.items():
        for t in ts:
            store.add(p, t)
    while delta:
        new: dict[str, set] = {}
        for c in comp:
            for j, (pred, _) in enumerate(c.body):
                if pred not in idb or not delta.get(pred):
                    continue
                for env in _matches(c, store, c.order(j), delta, j):
                    for h in _heads(c, env, domain):
                        if not store.has(c.head_pred, h):
                            new.setdefault(c.head_pred, set()).add(h)
        for p, ts in new.items():
            for t in ts:
                store.add(p, t)
        delta = new
    return store


def naive_fixpoint(program: Program, instance: DatabaseInstance, lam: Sequence[str] | None = None,
                   extra: Mapping[str, Iterable[tuple]] | None = None) -> dict[str, set[tuple]]:
    """Plain iteration to a fixpoint; reference implementation for tests."""
    facts = set(instance.facts) | {(p, t) for p, ts in (extra or {}).items() for t in ts}
    domain = sorted(instance.domain)
    comp = [_Compiled(r, lam) for r in program.rules]
    derived: set[tuple] = set()
    while True:
        store = Store()
        for p, t in facts | derived:
            store.add(p, t)
        new = {(c.head_pred, h) for c in comp for env in _matches(c, store, c.order(-1), None, -1)
               for h in _heads(c, env, domain)}
        if new <= derived:
            break
        derived |= new
    out: dict[str, set[tuple]] = {}
    for p, t in derived:
        out.setdefault(p, set()).add(t)
    return out


def _uses_lambda(program: Program) -> bool:
    return program.max_lambda() > 0


def fixpoint(program: Program, instance: DatabaseInstance, lambda_binding: Sequence[str] | None = None,
             extra: Mapping[str, Iterable[tuple]] | None = None) -> dict[str, set[tuple]]:
    """Derived IDB relations (including nullary ``hit``) of the least model.

    ``extra`` supplies materialized subquery relations.  Head variables
    that do not occur in the body range over the active domain.
    """
    if program.subqueries and extra is None:
        raise QueryError("materialize subqueries before calling fixpoint")
    if lambda_binding is None and _uses_lambda(program):
        raise QueryError("program uses special constants but no lambda binding was given")
    idb = {p for p, _ in program.idb} | {HIT}
    base = set(instance.facts) | {(p, tuple(t)) for p, ts in (extra or {}).items() for t in ts}
    store = _least_model(list(program.rules), idb, base, lambda_binding, sorted(instance.domain))
    return {p: set(ts) for p, ts in store.rel.items() if p in idb}


def entails_hit(program: Program, instance: DatabaseInstance, lam: Sequence[str],
                extra: Mapping[str, Iterable[tuple]] | None = None) -> bool:
    return bool(fixpoint(program, instance, lam, extra if extra is not None else ({} if not program.subqueries else None)).get(HIT))


def materialize_subqueries(program: Program, instance: DatabaseInstance,
                           cache: dict | None = None) -> dict[str, set[tuple]]:
    """Evaluate each subquery on the instance; keyed by subquery name."""
    cache = {} if cache is None else cache
    out = {}
    for name, sub in program.subqueries:
        key = (id(sub), instance)
        if key not in cache:
            cache[key] = set(eval_query(sub, instance, _cache=cache).tuples)
        out[name] = cache[key]
    return out


def _cq_answers(goals: Iterable[CQ], store: Store, domain: Sequence[str],
                bound: tuple | None = None) -> set[tuple]:
    out = set()
    for g in goals:
        rule = Rule(Atom("query", g.head), g.body)
        c = _Compiled(rule, None)
        if bound is not None:
            # bind the answer positions up front by prefixing equality facts
            ok = True
            fixed: dict[int, str] = {}
            for (kind, v), x in zip(c.head, bound):
                if kind == 1:
                    if v != x:
                        ok = False
                elif fixed.setdefault(v, x) != x:
                    ok = False
            if not ok:
                continue
            c = _bind(c, fixed)
        for env in _matches(c, store, c.order(-1), None, -1):
            for h in _heads(c, env, domain):
                out.add(h)
                if bound is not None:
                    return out
    return out


def _bind(c: _Compiled, fixed: dict[int, str]) -> _Compiled:
    nc = object.__new__(_Compiled)
    nc.head_pred = c.head_pred
    nc.nvars = c.nvars
    nc.head = tuple((1, fixed[v]) if k == 0 and v in fixed else (k, v) for k, v in c.head)
    nc.body = [(p, tuple((1, fixed[v]) if k == 0 and v in fixed else (k, v) for k, v in args))
               for p, args in c.body]
    nc.free_head = [v for v in c.free_head if v not in fixed]
    nc.orders = {}
    return nc


def _datalog_store(q: DatalogQuery | UCQ, instance: DatabaseInstance, cache) -> Store:
    prog = q.program
    extra = materialize_subqueries(prog, instance, cache) if prog.subqueries else {}
    idb = {p for p, _ in prog.idb}
    base = set(instance.facts) | {(p, tuple(t)) for p, ts in extra.items() for t in ts}
    return _least_model(list(prog.rules), idb, base, None, sorted(instance.domain))


def eval_query(q: QueryForm, instance: DatabaseInstance, strategy: str = "context", _cache=None) -> AnswerSet:
    """All answers of q on the instance.

    For FCQs the default strategy evaluates the context-extended Datalog
    translation once; ``strategy="enumerate"`` runs one fixpoint per
    candidate tuple over the active domain.
    """
    cache = {} if _cache is None else _cache
    domain = sorted(instance.domain)
    if isinstance(q, (DatalogQuery, UCQ)):
        store = _datalog_store(q, instance, cache)
        goals = q.goals if isinstance(q, DatalogQuery) else q.cqs
        return AnswerSet(q.arity, frozenset(_cq_answers(goals, store, domain)))
    if not isinstance(q, FCQ):
        raise TypeError(f"not a query: {type(q).__name__}")
    if strategy == "enumerate" or q.m == 0:
        extra = materialize_subqueries(q.program, instance, cache)
        out = set()
        for delta in itertools.product(domain, repeat=q.m):
            proj = tuple(delta[i - 1] for i in q.free)
            if proj in out:
                continue
            if entails_hit(q.program, instance, delta, extra):
                out.add(proj)
        return AnswerSet(q.arity, frozenset(out))
    from .rewrites import fcq_to_datalog
    dq = fcq_to_datalog(q)
    return eval_query(dq, instance, _cache=cache)


def check_answer(q: QueryForm, instance: DatabaseInstance, t: Sequence[str]) -> bool:
    """Whether t is an answer of q, with a single fixpoint where possible."""
    t = tuple(t)
    if len(t) != q.arity:
        raise QueryError(f"answer arity mismatch: query has arity {q.arity}, tuple has {len(t)}")
    domain = sorted(instance.domain)
    if isinstance(q, (DatalogQuery, UCQ)):
        store = _datalog_store(q, instance, {})
        goals = q.goals if isinstance(q, DatalogQuery) else q.cqs
        return bool(_cq_answers(goals, store, domain, bound=t))
    if any(x not in instance.domain for x in t):
        return False
    extra = materialize_subqueries(q.program, instance, {})
    hidden = [i for i in range(1, q.m + 1) if i not in q.free]
    fixed = dict(zip(q.free, t))
    for vals in itertools.product(domain, repeat=len(hidden)):
        fixed.update(zip(hidden, vals))
        lam = [fixed[i] for i in range(1, q.m + 1)]
        if entails_hit(q.program, instance, lam, extra):
            return True
    return False


def satisfies_closed(program: Program, facts: set[tuple], lam: Sequence[str], domain: Sequence[str],
                     extra: Mapping[str, Iterable[tuple]] | None = None) -> bool:
    """Whether a fact set is closed under every rule (used by semantic tests)."""
    store = Store()
    for p, t in facts:
        store.add(p, t)
    for p, ts in (extra or {}).items():
        for t in ts:
            store.add(p, tuple(t))
    for r in program.rules:
        c = _Compiled(r, lam)
        for env in _matches(c, store, c.order(-1), None, -1):
            for h in _heads(c, env, domain):
                if not store.has(c.head_pred, h):
                    return False
    return True

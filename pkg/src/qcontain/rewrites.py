"""Query transformations: guard insertion, context-extended Datalog translation,
positive combinations, unnesting of linear queries and nested normalization."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

from .model import (
    CQ, HIT, Atom, DatalogQuery, FCQ, Lam, Program, QueryError, QueryForm, Rule, UCQ, Var,
    guard_atom, is_frontier_guarded_rule,
)


@dataclass
class RewriteReport:
    pass_name: str
    before: dict
    after: dict
    fresh: list = field(default_factory=list)
    notes: list = field(default_factory=list)

    def __str__(self) -> str:
        lines = [f"pass: {self.pass_name}", f"before: {self.before}", f"after: {self.after}"]
        if self.fresh:
            lines.append("fresh symbols: " + ", ".join(self.fresh))
        lines += [f"note: {n}" for n in self.notes]
        return "\n".join(lines)


def size_metrics(q: QueryForm | Program) -> dict:
    prog = q if isinstance(q, Program) else q.program
    rules, atoms, max_ar, idbs = 0, 0, 0, len(prog.idb)
    stack = [prog]
    while stack:
        p = stack.pop()
        rules += len(p.rules)
        atoms += sum(1 + len(r.body) for r in p.rules)
        max_ar = max([max_ar] + [a for _, a in p.idb])
        if p is not prog:
            idbs += len(p.idb)
        stack += [s.program for _, s in p.subqueries]
    if isinstance(q, (DatalogQuery, UCQ)):
        goals = q.goals if isinstance(q, DatalogQuery) else q.cqs
        atoms += sum(1 + len(g.body) for g in goals)
    return {"rules": rules, "atoms": atoms, "max_idb_arity": max_ar, "idb_count": idbs}


def query_size(q: QueryForm) -> int:
    return size_metrics(q)["atoms"]


class Fresh:
    """Deterministic fresh-name supply avoiding a set of taken names."""

    def __init__(self, taken: Iterable[str] = ()):
        self.taken = set(taken)
        self.log: list[str] = []

    def __call__(self, base: str) -> str:
        name, k = base, 0
        while name in self.taken:
            k += 1
            name = f"{base}_{k}"
        self.taken.add(name)
        self.log.append(name)
        return name


def predicate_names(prog: Program) -> set[str]:
    out = {p for p, _ in prog.edb} | {p for p, _ in prog.idb} | {HIT}
    for name, sub in prog.subqueries:
        out.add(name)
        out |= predicate_names(sub.program)
    for r in prog.rules:
        out.add(r.head.pred)
        out |= {a.pred for a in r.body}
    return out


def variable_names(prog: Program) -> set[str]:
    out = set()
    for r in prog.rules:
        out |= {v.name for v in r.variables()}
    for _, sub in prog.subqueries:
        out |= variable_names(sub.program)
    return out


def _with_program(q: QueryForm, prog: Program) -> QueryForm:
    if isinstance(q, FCQ):
        return FCQ(prog, q.m, q.free)
    if isinstance(q, DatalogQuery):
        return DatalogQuery(prog, q.goals)
    return UCQ(prog, q.cqs)


def rename_predicates(prog: Program, mapping: dict[str, str]) -> Program:
    """Rename IDB/subquery predicates at this scope level."""
    def ren(a: Atom) -> Atom:
        return Atom(mapping.get(a.pred, a.pred), a.args)

    rules = [Rule(ren(r.head), tuple(ren(a) for a in r.body)) for r in prog.rules]
    idb = {mapping.get(p, p): a for p, a in prog.idb}
    subs = {mapping.get(n, n): s for n, s in prog.subqueries}
    return Program.make(prog.edb, idb, rules, subs)


def rename_lambdas(prog: Program, mapping: dict[int, object]) -> Program:
    """Replace lambda_k by ``mapping[k]`` (a Lam, Const or Var)."""
    def t(x):
        if isinstance(x, Lam):
            y = mapping[x.index]
            return Lam(y) if isinstance(y, int) else y
        return x

    rules = [Rule(Atom(r.head.pred, tuple(map(t, r.head.args))),
                  tuple(Atom(a.pred, tuple(map(t, a.args))) for a in r.body)) for r in prog.rules]
    return prog.replace(rules=rules)


# ----------------------------------------------------------------------
# guard insertion

def guard_monadic(p: Program | QueryForm):
    """Add an EDB guard to each unguarded rule in every possible way.

    One output rule per (EDB predicate, argument position) pair; other
    guard arguments are fresh variables.  Rules with an unsafe head
    variable cannot be guarded and raise QueryError.
    """
    if not isinstance(p, Program):
        return _with_program(p, guard_monadic(p.program))
    names = variable_names(p)
    out = []
    for r in p.rules:
        if is_frontier_guarded_rule(r, p):
            out.append(r)
            continue
        hv = r.head.variables()
        if len(set(hv)) != 1:
            raise QueryError(f"rule {r} is not monadic; cannot insert a single-variable guard")
        x = hv[0]
        if not any(x in a.variables() for a in r.body):
            raise QueryError(f"rule {r} has unsafe head variable {x}; it cannot be guarded")
        fresh = Fresh(names)
        for pred, ar in p.edb:
            for i in range(ar):
                args = [Var(fresh("W")) if j != i else x for j in range(ar)]
                out.append(Rule(r.head, r.body + (Atom(pred, tuple(args)),)))
            fresh = Fresh(names)
    subs = {n: guard_monadic(s) for n, s in p.subqueries}
    return Program.make(p.edb, p.idb, out, subs)


def add_domain_guards(q: QueryForm, pred: str | None = None) -> QueryForm:
    """Make every rule safe by guarding unsafe head variables with an
    active-domain predicate defined from all EDB positions."""
    prog = q.program
    unsafe = []
    for r in prog.rules:
        bv = {v for a in r.body for v in a.variables()}
        unsafe.append([v for v in dict.fromkeys(r.head.variables()) if v not in bv])
    if not any(unsafe):
        return q
    fresh = Fresh(predicate_names(prog))
    dom = pred or fresh("adom")
    rules = []
    for r, bad in zip(prog.rules, unsafe):
        rules.append(Rule(r.head, r.body + tuple(Atom(dom, (v,)) for v in bad)) if bad else r)
    x = Var("X")
    for p, ar in prog.edb:
        for i in range(ar):
            args = tuple(x if j == i else Var(f"W{j}") for j in range(ar))
            rules.append(Rule(Atom(dom, (x,)), (Atom(p, args),)))
    idb = dict(prog.idb)
    idb[dom] = 1
    return _with_program(q, Program.make(prog.edb, idb, rules, prog.subqueries))


# ----------------------------------------------------------------------
# FCQ to Datalog

def context_dependencies(prog: Program) -> dict[str, tuple[int, ...]]:
    """For each IDB, the special constants its derivations can depend on."""
    dep: dict[str, set[int]] = {p: set() for p, _ in prog.idb}
    changed = True
    while changed:
        changed = False
        for r in prog.rules:
            if r.head.pred == HIT:
                continue
            need = {t.index for a in (r.head, *r.body) for t in a.lambdas()}
            for a in r.body:
                need |= dep.get(a.pred, set())
            cur = dep.setdefault(r.head.pred, set())
            if not need <= cur:
                cur |= need
                changed = True
    return {p: tuple(sorted(v)) for p, v in dep.items()}


def contextual_idbs(prog: Program) -> set[str]:
    """IDBs whose derivations can depend on special constants."""
    return {p for p, v in context_dependencies(prog).items() if v}


def fcq_to_datalog(q: FCQ, contextual_only: bool = False, goal_name: str = "goal") -> DatalogQuery:
    """Translate an FCQ of arity m to a Datalog query.

    Every IDB gains m trailing context arguments Y1..Ym, lambda_j becomes
    Yj and ``hit`` becomes ``goal(Y1..Ym)``; the goal CQ projects the free
    positions.  With ``contextual_only`` an IDB only receives the context
    arguments for the special constants it actually depends on.
    """
    if isinstance(q, DatalogQuery):
        return q
    prog, m = q.program, q.m
    taken = variable_names(prog)
    prefix = "Y"
    while any(f"{prefix}{k}" in taken for k in range(1, m + 1)):
        prefix += "_"
    ys = tuple(Var(f"{prefix}{k}") for k in range(1, m + 1))
    theta = {Lam(k): ys[k - 1] for k in range(1, m + 1)}
    if contextual_only:
        ctx = context_dependencies(prog)
    else:
        ctx = {p: tuple(range(1, m + 1)) for p, _ in prog.idb}
    goal = Fresh(predicate_names(prog))(goal_name)

    def conv(a: Atom) -> Atom:
        a = a.substitute(theta)
        if a.pred == HIT:
            return Atom(goal, ys)
        if ctx.get(a.pred):
            return Atom(a.pred, a.args + tuple(ys[k - 1] for k in ctx[a.pred]))
        return a

    rules = [Rule(conv(r.head), tuple(conv(a) for a in r.body)) for r in prog.rules]
    idb = {p: a + len(ctx.get(p, ())) for p, a in prog.idb}
    idb[goal] = m
    newprog = Program.make(prog.edb, idb, rules, prog.subqueries)
    return DatalogQuery(newprog, (CQ(tuple(ys[f - 1] for f in q.free), (Atom(goal, ys),)),))


def ucq_to_fcq(q: UCQ | DatalogQuery) -> FCQ:
    """View a (U)CQ or Datalog query as an FCQ with ``hit :- goal[answer := lambda]``.

    Goal heads must consist of distinct variables.
    """
    goals = q.goals if isinstance(q, DatalogQuery) else q.cqs
    prog = q.program
    rules = list(prog.rules)
    for g in goals:
        if not all(isinstance(t, Var) for t in g.head) or len(set(g.head)) != len(g.head):
            raise QueryError("goal heads must consist of distinct variables to view the query as an FCQ")
        theta = {t: Lam(j) for j, t in enumerate(g.head, start=1)}
        rules.append(Rule(Atom(HIT), tuple(a.substitute(theta) for a in g.body)))
    return FCQ(Program.make(prog.edb, prog.idb, rules, prog.subqueries), q.arity, tuple(range(1, q.arity + 1)))


# ----------------------------------------------------------------------
# positive combinations

def _default_sharing(qs: Sequence[FCQ]) -> list[dict[int, int]]:
    arities = {q.arity for q in qs}
    if len(arities) != 1:
        raise QueryError("inconsistent sharing map: queries have different answer arities")
    a = arities.pop()
    nxt = a + 1
    maps = []
    for q in qs:
        mp = {f: j for j, f in enumerate(q.free, start=1)}
        for k in range(1, q.m + 1):
            if k not in mp:
                mp[k] = nxt
                nxt += 1
        maps.append(mp)
    return maps


def _check_sharing(qs: Sequence[FCQ], sharing: Sequence[dict[int, int]]) -> tuple[int, tuple]:
    if len(sharing) != len(qs):
        raise QueryError("inconsistent sharing map: one map per query is required")
    free_img = None
    hidden: set[int] = set()
    for q, mp in zip(qs, sharing):
        if set(mp) != set(range(1, q.m + 1)):
            raise QueryError("inconsistent sharing map: every lambda index needs an image")
        img = tuple(mp[f] for f in q.free)
        if free_img is None:
            free_img = img
        elif img != free_img:
            raise QueryError("inconsistent sharing map: answer positions disagree")
        hid = {mp[k] for k in range(1, q.m + 1) if k not in q.free}
        if hid & set(free_img) or hid & hidden:
            raise QueryError("inconsistent sharing map: existential positions must stay private")
        hidden |= hid
    allidx = set(free_img or ()) | hidden
    m = max(allidx, default=0)
    return m, tuple(free_img or ())


def _merge_apart(qs: Sequence[FCQ], sharing, fresh: Fresh, tag: str):
    """Rename IDBs and subqueries apart and remap lambdas; returns rule lists."""
    edb: dict[str, int] = {}
    idb: dict[str, int] = {}
    subs: dict[str, FCQ] = {}
    parts = []
    for i, (q, mp) in enumerate(zip(qs, sharing), start=1):
        prog = q.program
        for p, a in prog.edb:
            if edb.setdefault(p, a) != a:
                raise QueryError(f"EDB {p} has conflicting arities")
        ren = {p: fresh(f"{p}_{tag}{i}") for p, _ in prog.idb}
        ren.update({n: fresh(f"{n}_{tag}{i}") for n, _ in prog.subqueries})
        prog = rename_lambdas(rename_predicates(prog, ren), mp)
        idb.update(prog.idb)
        subs.update(prog.subqueries)
        parts.append(list(prog.rules))
    return edb, idb, subs, parts


def combine_or(qs: Sequence[FCQ], sharing: Sequence[dict[int, int]] | None = None,
               report: RewriteReport | None = None) -> FCQ:
    """Single FCQ whose extension is the union of the inputs' extensions."""
    qs = list(qs)
    if not qs:
        raise QueryError("combine_or needs at least one query")
    sharing = list(sharing) if sharing is not None else _default_sharing(qs)
    m, free = _check_sharing(qs, sharing)
    fresh = Fresh(set().union(*(predicate_names(q.program) for q in qs)))
    edb, idb, subs, parts = _merge_apart(qs, sharing, fresh, "or")
    rules = [r for part in parts for r in part]
    if report is not None:
        report.fresh += fresh.log
    return FCQ(Program.make(edb, idb, rules, subs), m, free)


def combine_and(qs: Sequence[FCQ], sharing: Sequence[dict[int, int]] | None = None,
                report: RewriteReport | None = None) -> FCQ:
    """Single FCQ whose extension is the intersection of the inputs' extensions.

    ``hit`` of query i < n becomes ``U_i(@1)``; rules of query i > 1 whose
    body has no IDB atom are gated by ``U_{i-1}(@1)``.  With no special
    constant at all the chain predicates are nullary.
    """
    qs = list(qs)
    if not qs:
        raise QueryError("combine_and needs at least one query")
    sharing = list(sharing) if sharing is not None else _default_sharing(qs)
    m, free = _check_sharing(qs, sharing)
    fresh = Fresh(set().union(*(predicate_names(q.program) for q in qs)))
    edb, idb, subs, parts = _merge_apart(qs, sharing, fresh, "and")
    anchor: tuple = (Lam(1),) if m >= 1 else ()
    if m == 0 and report is not None:
        report.notes.append("no special constant available; chain predicates are nullary")
    chain = [fresh(f"Chain{i}") for i in range(1, len(qs))]
    for c in chain:
        idb[c] = len(anchor)
    rules = []
    for i, part in enumerate(parts):
        gated_any = False
        for r in part:
            head, body = r.head, r.body
            if i < len(qs) - 1 and head.pred == HIT:
                head = Atom(chain[i], anchor)
            if i > 0 and not any(a.pred in idb for a in body):
                body = body + (Atom(chain[i - 1], anchor),)
                gated_any = True
            rules.append(Rule(head, body))
        if i > 0 and not gated_any and report is not None:
            report.notes.append(f"query {i + 1} has no rule without IDB atoms; it derives nothing and needs no gate")
    if report is not None:
        report.fresh += fresh.log
    return FCQ(Program.make(edb, idb, rules, subs), m, free)


# ----------------------------------------------------------------------
# unnesting linear queries

def _subquery_as_datalog(name: str, sub: FCQ, fresh: Fresh) -> tuple[list[Rule], dict[str, int], str]:
    """Flatten a subquery into rules defining a goal predicate of its answer arity."""
    dq = fcq_to_datalog(sub)
    if dq.program.subqueries:
        dq = unnest_linear(dq)
    prog = dq.program
    ren = {p: fresh(f"{name}_{p}") for p, _ in prog.idb}
    prog = rename_predicates(prog, ren)
    goal = fresh(f"{name}_ans")
    g = dq.goals[0]
    rules = list(prog.rules) + [Rule(Atom(goal, g.head), tuple(Atom(ren.get(a.pred, a.pred), a.args) for a in g.body))]
    idb = dict(prog.idb)
    idb[goal] = len(g.head)
    return rules, idb, goal


def unnest_linear(q: QueryForm, report: RewriteReport | None = None) -> DatalogQuery | QueryForm:
    """Flatten a linear nested query into an equivalent linear Datalog query.

    Each rule may use at most one IDB atom and one subquery atom.  When a
    rule ``Q(x) & p(y1..yl) & B -> H`` uses both, the subquery's IDBs gain
    the l arguments of p, its IDB-free rules are gated by p(y), and the rule
    becomes ``q(x, y) & B -> H``.
    """
    if not q.program.subqueries:
        return q
    if isinstance(q, FCQ):
        q = fcq_to_datalog(q)
    prog = q.program
    fresh = Fresh(predicate_names(prog) | variable_names(prog))
    idb = dict(prog.idb)
    out: list[Rule] = []
    for r in prog.rules:
        subs = [a for a in r.body if prog.is_subquery(a.pred)]
        idbs = [a for a in r.body if prog.is_idb(a.pred)]
        if len(subs) > 1 or len(idbs) > 1:
            raise QueryError(f"non-linear rule encountered: {r}")
        if not subs:
            out.append(r)
            continue
        sq = subs[0]
        sub = prog.subquery_map[sq.pred]
        inner_rules, inner_idb, goal = _subquery_as_datalog(sq.pred, sub, fresh)
        for ir in inner_rules:
            if sum(1 for a in ir.body if a.pred in inner_idb) > 1:
                raise QueryError(f"non-linear rule encountered in subquery {sq.pred}: {ir}")
        rest = [a for a in r.body if a is not sq]
        if idbs:
            p = idbs[0]
            ell = p.args
            # rename inner variables apart from the outer context arguments
            outer = {v.name for v in p.variables()}
            inner_vars = {v.name for ir in inner_rules for v in ir.variables()}
            clash = {n: Var(fresh(n + "_i")) for n in inner_vars & outer}
            for ir in inner_rules:
                ir = ir.substitute({Var(n): v for n, v in clash.items()})
                head = Atom(ir.head.pred, ir.head.args + ell)
                body = tuple(Atom(a.pred, a.args + ell) if a.pred in inner_idb else a for a in ir.body)
                if not any(a.pred in inner_idb for a in ir.body):
                    body = body + (p,)
                out.append(Rule(head, body))
            for n, a in inner_idb.items():
                idb[n] = a + len(ell)
            rest = [a for a in rest if a is not p]
            out.append(Rule(r.head, (Atom(goal, sq.args + ell),) + tuple(rest)))
        else:
            out += inner_rules
            idb.update(inner_idb)
            out.append(Rule(r.head, (Atom(goal, sq.args),) + tuple(rest)))
    if report is not None:
        report.fresh += fresh.log
    newprog = Program.make(prog.edb, idb, out, {})
    return _with_program(q, newprog)


def inline_subqueries(q: QueryForm) -> QueryForm:
    """Replace every subquery atom by the goal predicate of the subquery's
    Datalog translation; works for any nesting, linear or not."""
    prog = q.program
    if not prog.subqueries:
        return q
    fresh = Fresh(predicate_names(prog) | variable_names(prog))
    idb = dict(prog.idb)
    rules: list[Rule] = []
    ren: dict[str, str] = {}
    for name, sub in prog.subqueries:
        dq = inline_subqueries(fcq_to_datalog(sub, contextual_only=True))
        inner = dq.program
        local = {p: fresh(f"{name}_{p}") for p, _ in inner.idb}
        inner = rename_predicates(inner, local)
        goal = fresh(f"{name}_ans")
        g = dq.goals[0]
        rules += inner.rules
        rules.append(Rule(Atom(goal, g.head), tuple(Atom(local.get(a.pred, a.pred), a.args) for a in g.body)))
        idb.update(inner.idb)
        idb[goal] = len(g.head)
        ren[name] = goal
    for r in prog.rules:
        rules.append(Rule(r.head, tuple(Atom(ren.get(a.pred, a.pred), a.args) for a in r.body)))
    return _with_program(q, Program.make(prog.edb, idb, rules, {}))


# ----------------------------------------------------------------------
# nested normalization

def _wrap_subquery(sub: FCQ, args: Sequence, anchors: list) -> FCQ:
    """Re-index a subquery so that its answers range over the anchor terms."""
    mp: dict[int, object] = {}
    nxt = len(anchors) + 1
    for j, f in enumerate(sub.free):
        mp[f] = anchors.index(args[j]) + 1
    for k in range(1, sub.m + 1):
        if k not in mp:
            mp[k] = nxt
            nxt += 1
    prog = rename_lambdas(sub.program, mp)
    return FCQ(prog, nxt - 1, tuple(range(1, len(anchors) + 1)))


def normalize_nested(q: FCQ, report: RewriteReport | None = None) -> FCQ:
    """Rewrite so every rule with subqueries has one subquery atom plus its guard.

    Subquery atoms of a rule are conjoined into a single subquery over the
    rule's anchor terms (via combine_and); the rule is split into
    ``guard & Q*(anchors) -> N(vars)`` and the remainder using ``N``.
    """
    prog = q.program
    if not prog.subqueries:
        return q
    fresh = Fresh(predicate_names(prog))
    subs = {n: normalize_nested(s, report) for n, s in prog.subqueries}
    idb = dict(prog.idb)
    out: list[Rule] = []
    for r in prog.rules:
        sqs = [a for a in r.body if a.pred in subs]
        others = [a for a in r.body if a.pred not in subs]
        g = guard_atom(r, prog)
        if not sqs or (len(sqs) == 1 and others in ([], [g])):
            out.append(r)
            continue
        anchors = list(dict.fromkeys(t for a in sqs for t in a.args))
        avars = [t for t in anchors if isinstance(t, Var)]
        gvars = set(g.variables()) if g is not None else set()
        if not set(avars) <= gvars:
            raise QueryError(f"subquery arguments of {r} are not covered by its guard")
        if len(sqs) == 1:
            star_name, star_args = sqs[0].pred, sqs[0].args
        else:
            wrappers = [_wrap_subquery(subs[a.pred], a.args, anchors) for a in sqs]
            star = combine_and(wrappers, report=report) if len(wrappers) > 1 else wrappers[0]
            star_name = fresh("Conj")
            subs[star_name] = star
            star_args = tuple(anchors)
        n = fresh("N")
        nargs = tuple(avars)
        idb[n] = len(nargs)
        out.append(Rule(Atom(n, nargs), ((g,) if g is not None else ()) + (Atom(star_name, star_args),)))
        out.append(Rule(r.head, tuple(others) + (Atom(n, nargs),)))
    used = {a.pred for r in out for a in r.body}
    subs = {k: v for k, v in subs.items() if k in used}
    if report is not None:
        report.fresh += fresh.log
    return FCQ(Program.make(prog.edb, idb, out, subs), q.m, q.free)


# ----------------------------------------------------------------------

PASSES = ("guard", "to-datalog", "or", "and", "unnest", "normalize")


def run_pass(name: str, qs: Sequence[QueryForm]) -> tuple[QueryForm, RewriteReport]:
    """Apply a named pass; ``or``/``and`` take several queries."""
    before = size_metrics(qs[0]) if len(qs) == 1 else {"inputs": [size_metrics(q) for q in qs]}
    rep = RewriteReport(name, before, {})
    if name == "guard":
        out = guard_monadic(qs[0])
    elif name == "to-datalog":
        out = fcq_to_datalog(qs[0])
    elif name == "or":
        out = combine_or(qs, report=rep)
    elif name == "and":
        out = combine_and(qs, report=rep)
    elif name == "unnest":
        out = unnest_linear(qs[0], report=rep)
    elif name == "normalize":
        out = normalize_nested(qs[0], report=rep)
    else:
        raise QueryError(f"unknown pass {name}")
    rep.after = size_metrics(out)
    return out, rep

"""Shared fixtures: reference queries, random generators and brute-force oracles.

The brute-force evaluators here share no code with ``qcontain.eval``: they
ground every rule over the whole domain and iterate to a fixpoint.
"""

from __future__ import annotations

import itertools
import random

from qcontain.automata import ATA2, NFTA, TRUE, RankedAlphabet, Tree, f_atom
from qcontain.model import (
    CQ, HIT, Atom, Const, DatabaseInstance, DatalogQuery, FCQ, Lam, Program, Rule, UCQ, Var,
    is_frontier_guarded_rule,
)
from qcontain.parser import parse_instance, parse_query
from qcontain.rewrites import ucq_to_fcq

EX1 = "U(Y) :- p(@1,Y). U(Z) :- U(Y), p(Y,Z). hit :- U(@2). fcq arity 2 free 1,2."
TC = "tc(X,Y) :- p(X,Y). tc(X,Z) :- tc(X,Y), p(Y,Z). query(X,Y) :- tc(X,Y)."
EDGE = "edb p/2. query(X,Y) :- p(X,Y)."
CQ2 = "edb p/2. query(X,Y) :- p(X,Z), p(Z,Y)."
HITP = "edb p/2. hit :- p(@1,@2). fcq arity 2 free 1,2."
LADDER = """Uq(@1,@2) :- q(@1,@2).
Uq(X2,Y2) :- Uq(X,Y), p(X,X2), p(Y,Y2), q(X2,Y2).
hit :- Uq(@3,@4).
fcq arity 4 free 1,2,3,4."""
LADDER_MQ = """U1(@1) :- q(@1,@2).
U2(@2) :- q(@1,@2).
U1(X2) :- U1(X), U2(Y), p(X,X2), p(Y,Y2), q(X2,Y2).
U2(Y2) :- U1(X), U2(Y), p(X,X2), p(Y,Y2), q(X2,Y2).
hit :- U1(@3), U2(@4).
fcq arity 4 free 1,2,3,4."""
EX2_FACTS = "q(a,b). p(a,c). p(b,e). q(c,e). p(a,e1). p(b,d). q(e1,d)."


def q(text: str):
    return parse_query(text)


def ex2_instance() -> DatabaseInstance:
    return parse_instance(EX2_FACTS)


# ----------------------------------------------------------------------
# brute-force evaluation

def _ground(t, env, lam):
    if isinstance(t, Var):
        return env[t]
    if isinstance(t, Lam):
        return lam[t.index - 1]
    return t.name


def _assignments(vs, domain):
    for vals in itertools.product(domain, repeat=len(vs)):
        yield dict(zip(vs, vals))


def brute_model(rules, facts, domain, lam=()):
    """Least model by naive grounding over the domain."""
    model = set(facts)
    domain = sorted(domain)
    changed = True
    while changed:
        changed = False
        for r in rules:
            vs = sorted({v for a in (r.head, *r.body) for v in a.args if isinstance(v, Var)}, key=str)
            for env in _assignments(vs, domain):
                if all((a.pred, tuple(_ground(t, env, lam) for t in a.args)) in model for a in r.body):
                    f = (r.head.pred, tuple(_ground(t, env, lam) for t in r.head.args))
                    if f not in model:
                        model.add(f)
                        changed = True
    return model


def _materialize(prog: Program, inst: DatabaseInstance, domain) -> set:
    facts = set(inst.facts)
    for name, sub in prog.subqueries:
        facts |= {(name, t) for t in brute_answers(sub, inst, domain)}
    return facts


def _cq_tuples(goals, model, domain, arity):
    out = set()
    for g in goals:
        vs = sorted({v for a in g.body for v in a.args if isinstance(v, Var)} | {v for v in g.head if isinstance(v, Var)},
                    key=str)
        for env in _assignments(vs, domain):
            if all((a.pred, tuple(_ground(t, env, ()) for t in a.args)) in model for a in g.body):
                out.add(tuple(_ground(t, env, ()) for t in g.head))
    return out


def brute_answers(query, inst: DatabaseInstance, domain=None) -> set:
    """Answer set by grounding; FCQs enumerate every candidate tuple."""
    domain = sorted(inst.domain if domain is None else domain)
    prog = query.program
    base = _materialize(prog, inst, domain)
    if isinstance(query, (DatalogQuery, UCQ)):
        model = brute_model(prog.rules, base, domain)
        goals = query.goals if isinstance(query, DatalogQuery) else query.cqs
        return _cq_tuples(goals, model, domain, query.arity)
    out = set()
    for lam in itertools.product(domain, repeat=query.m):
        proj = tuple(lam[i - 1] for i in query.free)
        if proj in out:
            continue
        if (HIT, ()) in brute_model(prog.rules, base, domain, lam):
            out.add(proj)
    return out


# ----------------------------------------------------------------------
# random generators

EDB_SIG = {"p": 2, "q": 2, "r": 1}


def rand_instance(rng: random.Random, sig=None, n_dom: int = 4, n_facts: int = 6) -> DatabaseInstance:
    sig = sig or EDB_SIG
    dom = [f"e{i}" for i in range(1, n_dom + 1)]
    preds = sorted(sig)
    facts = set()
    for _ in range(n_facts):
        p = rng.choice(preds)
        facts.add((p, tuple(rng.choice(dom) for _ in range(sig[p]))))
    return DatabaseInstance(frozenset(facts))


def _atom(rng, pred, ar, vs):
    return Atom(pred, tuple(rng.choice(vs) for _ in range(ar)))


def rand_rule(rng, head_pred, head_ar, edb, idb, max_vars=3, max_body=3, guarded=False, idb_atoms=1,
              head_terms=None):
    """A safe rule; with ``guarded`` its first body atom holds every head variable."""
    nv = rng.randint(max(1, head_ar), max_vars)
    vs = [Var(f"X{i}") for i in range(1, nv + 1)]
    head_args = tuple(head_terms) if head_terms is not None else tuple(rng.choice(vs) for _ in range(head_ar))
    hv = list(dict.fromkeys(t for t in head_args if isinstance(t, Var)))
    body = []
    if guarded and hv:
        cands = [(p, a) for p, a in sorted(edb.items()) if a >= len(hv)]
        if not cands:
            return None
        p, a = rng.choice(cands)
        args = hv + [rng.choice(vs) for _ in range(a - len(hv))]
        rng.shuffle(args)
        body.append(Atom(p, tuple(args)))
    n_idb = rng.randint(0, idb_atoms) if idb else 0
    for _ in range(n_idb):
        p = rng.choice(sorted(idb))
        body.append(_atom(rng, p, idb[p], vs))
    while len(body) < rng.randint(1, max_body) or not body:
        p = rng.choice(sorted(edb))
        body.append(_atom(rng, p, edb[p], vs))
    bv = {t for a in body for t in a.args if isinstance(t, Var)}
    missing = [v for v in hv if v not in bv]
    if missing:
        p = rng.choice([p for p, a in sorted(edb.items()) if a >= 1])
        for v in missing:
            body.append(Atom(p, tuple([v] + [rng.choice(vs) for _ in range(edb[p] - 1)])))
    return Rule(Atom(head_pred, head_args), tuple(body))


def rand_datalog(rng: random.Random, arity: int = 2, n_rules: int = 4, guarded: bool = False,
                 edb=None, linear: bool = False) -> DatalogQuery:
    edb = dict(edb or {"p": 2, "q": 2})
    idb = {"A": arity, "B": rng.choice([1, 2])}
    rules = []
    # a base rule for A keeps the query non-empty most of the time
    while len(rules) < n_rules:
        head = "A" if not rules else rng.choice(["A", "A", "B"])
        r = rand_rule(rng, head, idb[head], edb, idb if rules else {}, guarded=guarded,
                      idb_atoms=1 if linear else 2)
        if r is not None:
            rules.append(r)
    used = {r.head.pred for r in rules}
    idb = {p: a for p, a in idb.items() if p in used or any(b.pred == p for r in rules for b in r.body)}
    rules = [r for r in rules if all(b.pred in edb or b.pred in used for b in r.body)]
    idb = {p: a for p, a in idb.items() if p in {r.head.pred for r in rules}}
    hv = tuple(Var(f"X{i}") for i in range(1, arity + 1))
    return DatalogQuery(Program.make(edb=edb, idb=idb, rules=rules), (CQ(hv, (Atom("A", hv),)),))


def rand_ucq(rng: random.Random, arity: int = 2, n_cqs: int = 2, edb=None) -> UCQ:
    edb = dict(edb or {"p": 2, "q": 2})
    hv = tuple(Var(f"X{i}") for i in range(1, arity + 1))
    cqs = []
    for _ in range(rng.randint(1, n_cqs)):
        r = rand_rule(rng, "query", arity, edb, {}, head_terms=hv)
        cqs.append(CQ(hv, r.body))
    return UCQ(Program.make(edb=edb), tuple(cqs))


def rand_fcq(rng: random.Random, arity: int = 2, n_rules: int = 4, guarded: bool = True,
             monadic: bool = False, linear: bool = False, edb=None, hidden: int = 0) -> FCQ:
    """Random flag-and-check query over special constants @1..@m."""
    edb = dict(edb or {"p": 2, "q": 2})
    m = arity + hidden
    lams = [Lam(i) for i in range(1, m + 1)]
    idb = {"U": 1} if monadic else {"U": rng.choice([1, 2])}
    if not monadic and rng.random() < 0.5:
        idb["W"] = 1
    rules = []
    while len(rules) < n_rules - 1:
        head = rng.choice(sorted(idb))
        vs = [Var(f"X{i}") for i in range(1, 4)]
        r = rand_rule(rng, head, idb[head], edb, idb if rules else {}, guarded=guarded,
                      idb_atoms=1 if linear else 2)
        if r is None:
            continue
        # sprinkle special constants into body positions
        theta = {}
        for v in vs:
            if rng.random() < 0.3 and v not in r.head.args:
                theta[v] = rng.choice(lams)
        if not rules and not theta and not r.head.args:
            continue
        rules.append(r.substitute(theta))
    heads = {r.head.pred for r in rules}
    p = rng.choice(sorted(heads))
    hit_body = [Atom(p, tuple(rng.choice(lams) for _ in range(idb[p])))]
    used = {t.index for r in rules for a in (r.head, *r.body) for t in a.lambdas()}
    used |= {t.index for a in hit_body for t in a.lambdas()}
    for i in range(1, m + 1):
        if i not in used:
            pe = rng.choice(sorted(edb))
            hit_body.append(Atom(pe, tuple([Lam(i)] + [rng.choice(lams) for _ in range(edb[pe] - 1)])))
    rules.append(Rule(Atom(HIT), tuple(hit_body)))
    idb = {k: v for k, v in idb.items() if k in heads}
    rules = [r for r in rules if all(b.pred in edb or b.pred in heads for b in r.body)]
    return FCQ(Program.make(edb=edb, idb=idb, rules=rules), m, tuple(range(1, arity + 1)))


def rand_nested(rng: random.Random, edb=None) -> FCQ:
    """A depth-1 nested FCQ whose outer rules use one linear subquery."""
    edb = dict(edb or {"p": 2, "q": 2})
    inner = rand_fcq(rng, arity=2, n_rules=3, guarded=True, monadic=True, linear=True, edb=edb)
    y, z = Var("Y"), Var("Z")
    g = rng.choice(sorted(edb))
    rules = [
        Rule(Atom("V", (y,)), (Atom(g, (Lam(1), y)), Atom("Sub", (Lam(1), y)))),
        Rule(Atom("V", (z,)), (Atom("V", (y,)), Atom(rng.choice(sorted(edb)), (y, z)))),
        Rule(Atom(HIT), (Atom("V", (Lam(2),)),)),
    ]
    return FCQ(Program.make(edb=edb, idb={"V": 1}, rules=rules, subqueries={"Sub": inner}), 2, (1, 2))


def rand_query_ast(rng: random.Random):
    """Any query form, for round-trip testing."""
    k = rng.randrange(5)
    ar = rng.choice([1, 2])
    if k == 0:
        return rand_datalog(rng, arity=ar, n_rules=rng.randint(1, 4))
    if k == 1:
        return rand_ucq(rng, arity=ar, n_cqs=3)
    if k == 2:
        return rand_fcq(rng, arity=ar, n_rules=rng.randint(2, 4), guarded=rng.random() < 0.5,
                        hidden=rng.randint(0, 1))
    if k == 3:
        return rand_nested(rng)
    inst_consts = rng.random() < 0.5
    r = rand_fcq(rng, arity=ar, n_rules=3)
    if inst_consts:
        rules = [Rule(r_.head, r_.body + (Atom("r", (Const("c0"),)),)) if r_.head.pred != HIT else r_
                 for r_ in r.program.rules]
        edb = dict(r.program.edb)
        edb["r"] = 1
        r = FCQ(r.program.replace(rules=rules, edb=edb), r.m, r.free)
    return r


def weaken(rng: random.Random, lhs: DatalogQuery, kind: str):
    """A right-hand query likely to contain ``lhs``: drop body atoms of its
    EDB-only rules and union the results."""
    prog = lhs.program
    goal = lhs.goals[0].body[0].pred
    cqs = []
    for r in prog.rules_for(goal):
        if any(prog.is_idb(a.pred) for a in r.body):
            continue
        keep = [a for a in r.body if rng.random() < 0.6] or [r.body[0]]
        hv = set(t for t in r.head.args if isinstance(t, Var))
        for a in r.body:
            if hv - {t for b in keep for t in b.args} and a not in keep:
                keep.append(a)
        cqs.append(CQ(r.head.args, tuple(keep)))
    if not cqs or any(len(set(c.head)) != len(c.head) or not all(isinstance(t, Var) for t in c.head) for c in cqs):
        return None
    ucq = UCQ(Program.make(edb=prog.edb), tuple(cqs))
    if kind == "ucq":
        return ucq
    fq = ucq_to_fcq(ucq)
    if kind == "gq":
        return fq
    idb = {"G": lhs.arity}
    hv = tuple(Var(f"X{i}") for i in range(1, lhs.arity + 1))
    rules = []
    for c in cqs:
        theta = dict(zip(c.head, hv))
        rules.append(Rule(Atom("G", hv), tuple(a.substitute(theta) for a in c.body)))
    return DatalogQuery(Program.make(edb=prog.edb, idb=idb, rules=rules), (CQ(hv, (Atom("G", hv),)),))


def rand_pair(rng: random.Random):
    """A (kind, lhs, rhs) containment problem over EDB {p/2, q/2}."""
    ar = rng.choice([1, 2])
    lhs = rand_datalog(rng, arity=ar, n_rules=rng.randint(1, 4))
    kind = rng.choice(["ucq", "gdl", "gq"])
    if rng.random() < 0.35:
        rhs = weaken(rng, lhs, kind)
        if rhs is not None:
            if kind != "gdl" or all(is_frontier_guarded_rule(r, rhs.program) for r in rhs.program.rules):
                return kind, lhs, rhs
    if kind == "ucq":
        rhs = rand_ucq(rng, arity=ar)
    elif kind == "gdl":
        rhs = rand_datalog(rng, arity=ar, n_rules=rng.randint(1, 4), guarded=True)
    else:
        rhs = rand_fcq(rng, arity=ar, n_rules=rng.randint(2, 4), guarded=True)
    return kind, lhs, rhs


# ----------------------------------------------------------------------
# random automata

ALPH = RankedAlphabet({"a": 0, "b": 1, "f": 2})


def rand_formula(rng, states, r, depth=2):
    if depth == 0 or rng.random() < 0.4:
        if rng.random() < 0.05:
            return TRUE
        return f_atom(rng.randint(-1, r), rng.choice(states))
    parts = tuple(rand_formula(rng, states, r, depth - 1) for _ in range(rng.randint(1, 3)))
    return ("and", parts) if rng.random() < 0.5 else ("or", parts)


def rand_ata(rng) -> ATA2:
    n = rng.randint(1, 3)
    st = [f"s{i}" for i in range(n)]
    delta = {(s, lab): rand_formula(rng, st, r) for s in st for lab, r in ALPH.items() if rng.random() < 0.8}
    return ATA2(ALPH, st, rng.sample(st, rng.randint(1, n)), rng.sample(st, rng.randint(0, n)), delta)


def rand_tree(rng, depth: int) -> Tree:
    labs = [lab for lab, r in ALPH.items() if depth > 0 or r == 0]
    lab = rng.choice(labs)
    return Tree(lab, tuple(rand_tree(rng, depth - 1) for _ in range(ALPH.rank(lab))))


def rand_nfta(rng) -> NFTA:
    n = rng.randint(1, 3)
    st = [f"n{i}" for i in range(n)]
    delta = {}
    for s in st:
        for lab, r in ALPH.items():
            tups = {tuple(rng.choice(st) for _ in range(r)) for _ in range(rng.randint(0, 2))}
            if tups:
                delta[(s, lab)] = tups
    return NFTA(ALPH, st, rng.sample(st, rng.randint(1, n)), delta)

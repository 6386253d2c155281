"""Containment by searching for a countermodel tree.

A left-hand proof tree is a counterexample exactly when the right-hand
program has a model on its canonical instance that contains the least
model but not ``hit``.  Because the right-hand side is frontier-guarded,
every derived fact lives inside the elements of a single proof-tree node,
so the search can run bottom-up over the tree: each node guesses the truth
of the facts it guards, and a summary of the subtree is passed upwards.

A summary consists of the node's signature (head predicate plus the shape
of its arguments), the decided facts over the interface and a set of
partial rule matches ("descriptors").  A descriptor records which body
literals of a right-hand rule are already matched and where its variables
went.  Completing a descriptor means the guessed model violates a rule (or
derives ``hit``), and that guess is discarded.  The reachable summaries
form the states of a bottom-up tree automaton whose emptiness is exactly
containment.

Subquery atoms are decided the same way.  Guessing a subquery fact true
is always safe, since subqueries occur positively; guessing it false
obliges the subquery itself to have a countermodel with its special
constants on the fact's elements.  Such obligations are tracked by nested
layers of the same search, fed by per-node profiles of the subquery's
reachable summaries, and are discharged at the root.
"""

from __future__ import annotations

import itertools
import time
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Sequence

from ..eval import check_answer
from ..model import (
    HIT, Atom, Const, DatalogQuery, FCQ, Lam, Program, QueryError, QueryForm, Rule, Var,
    is_frontier_guarded_rule,
)
from .prooftree import LHSProgram, ProofTree, canonical_instance, lhs_program
from .verdict import ResourceLimit, UnsupportedFragment, Verdict, WitnessError

INTERNAL = ("*",)
EDB, IDB, NEG = 0, 1, 2
BOTTOM = ("#bottom",)


def _is_global(e) -> bool:
    return e[0] in ("l", "c", "λ")


# ---------------------------------------------------------------- right-hand side


@dataclass
class _RRule:
    head: tuple  # (pred, terms)
    lits: list  # (kind, pred, terms)
    nvars: int
    guard: int | None
    hit: bool
    var_lits: list  # per variable, bitmask of literals mentioning it
    full: int = 0
    text: str = ""
    subs: list = field(default_factory=list)  # (subquery literal, covering EDB literal)


def _guard_rhs(prog: Program) -> Program:
    from ..rewrites import guard_monadic

    if all(is_frontier_guarded_rule(r, prog) for r in prog.rules):
        return prog
    if all(a <= 1 for _, a in prog.idb):
        return guard_monadic(prog)
    raise UnsupportedFragment("right-hand side is not frontier-guarded")


def _rhs_form(q: QueryForm, unnest: bool = True) -> tuple[Program, list[tuple[Rule, object]]]:
    """Guarded right-hand rules, each tagged with how answer positions enter it:
    a lambda-position map for FCQ rules or ``"goal"`` for goal CQs.  With
    ``unnest`` a linear nested query is flattened first; otherwise subquery
    atoms are left in place."""
    from ..rewrites import unnest_linear

    if unnest and q.program.subqueries:
        try:
            q = unnest_linear(q)
        except QueryError as exc:
            raise UnsupportedFragment(f"nested right-hand side is not linear: {exc}") from exc
    if isinstance(q, FCQ):
        _check_fcq(q)
        prog = _guard_rhs(q.program)
        pos = {k: i for i, k in enumerate(q.free)}
        return prog, [(r, pos) for r in prog.rules]
    goals = q.goals if isinstance(q, DatalogQuery) else q.cqs
    prog = _guard_rhs(q.program)
    return prog, [(r, None) for r in prog.rules] + [(Rule(Atom(HIT, g.head), g.body), "goal") for g in goals]


def _check_fcq(q: FCQ) -> None:
    if sorted(q.free) != list(range(1, q.m + 1)) or q.program.max_lambda() > q.m:
        raise UnsupportedFragment("right-hand FCQ with existentially quantified special constants")


def compile_rhs(q: QueryForm, root: Sequence) -> list[_RRule]:
    """Right-hand rules with answer positions bound to the root's global names."""
    return _compile(q, root=root)[0]


def _compile(q: QueryForm, root: Sequence | None = None, lam: dict | None = None) -> tuple[list[_RRule], dict]:
    """Compile either the outer query (answer positions named by ``root``)
    or a subquery whose special constants are bound by ``lam``."""
    prog, rules = _rhs_form(q, unnest=False)
    if root is not None and isinstance(q, FCQ):
        lam = {k: root[i] for i, k in enumerate(q.free)}
    out = []
    for r, tag in rules:
        theta: dict = {}
        if tag == "goal":
            ok = True
            for j, t in enumerate(r.head.args):
                g = root[j]
                if isinstance(t, Var):
                    ok = ok and theta.setdefault(t, ("g", g)) == ("g", g)
                elif isinstance(t, Const):
                    ok = ok and g == ("c", t.name)
                else:
                    ok = False
            if not ok:
                continue
            r = Rule(Atom(HIT), r.body)
        out.append(_compile_rule(r, prog, theta, lam or {}))
    return out, prog.subquery_map


def _compile_rule(r: Rule, prog: Program, theta: dict, lam: dict) -> _RRule:
    vars_: dict = {}

    def term(t):
        if t in theta:
            return theta[t]
        if isinstance(t, Var):
            return ("v", vars_.setdefault(t, len(vars_)))
        if isinstance(t, Const):
            return ("g", ("c", t.name))
        if isinstance(t, Lam):
            if t.index not in lam:
                raise UnsupportedFragment("special constant outside the answer positions")
            return ("g", lam[t.index])
        raise TypeError(t)

    hit = r.head.pred == HIT
    lits = []
    for a in r.body:
        kind = IDB if prog.is_idb(a.pred) or prog.is_subquery(a.pred) else EDB
        lits.append((kind, a.pred, tuple(term(t) for t in a.args)))
    head = (r.head.pred, tuple(term(t) for t in r.head.args))
    subs = []
    for i, a in enumerate(r.body):
        if not prog.is_subquery(a.pred):
            continue
        sv = {t for t in lits[i][2] if t[0] == "v"}
        cover = next((j for j, (k, _, ts) in enumerate(lits) if k == EDB and sv <= set(ts)), None)
        if cover is None and sv:
            raise UnsupportedFragment(f"subquery atom {a} in rule {r} is not covered by an EDB atom")
        subs.append((i, cover))
    guard = None
    if not hit:
        lits.append((NEG, head[0], head[1]))
        hv = {t for t in head[1] if t[0] == "v"}
        for i, (kind, _, ts) in enumerate(lits):
            if kind == EDB and hv <= set(ts):
                guard = i
                break
        if guard is None and hv:
            raise UnsupportedFragment(f"rule {r} has no guard")
    var_lits = [0] * len(vars_)
    for i, (_, _, ts) in enumerate(lits):
        for t in ts:
            if t[0] == "v":
                var_lits[t[1]] |= 1 << i
    return _RRule(head, lits, len(vars_), guard, hit, var_lits, (1 << len(lits)) - 1, str(r), subs)


def _match(lit_terms, args, img) -> tuple | None:
    if len(lit_terms) != len(args):
        return None
    new = None
    for t, a in zip(lit_terms, args):
        if t[0] == "g":
            if t[1] != a:
                return None
            continue
        i = t[1]
        cur = (new or img)[i]
        if cur is None:
            if new is None:
                new = list(img)
            new[i] = a
        elif cur != a:
            return None
    return img if new is None else tuple(new)


def _subst(terms, img) -> tuple | None:
    out = []
    for t in terms:
        if t[0] == "g":
            out.append(t[1])
        else:
            v = img[t[1]]
            if v is None or v == INTERNAL:
                return None
            out.append(v)
    return tuple(out)


# ---------------------------------------------------------------- left-hand side


@dataclass
class _Label:
    rule_index: int
    sig: tuple
    theta: dict  # rule variable -> node element
    edb: list  # local facts (pred, args)
    children: list  # (child sig, back map: tuple of node elements for ('i', k))
    child_atoms: list  # (pred, node-element args)
    cands: list = field(default_factory=list)


def _child_sig(pred: str, args: tuple) -> tuple[tuple, tuple]:
    names, back, idx = [], [], {}
    for e in args:
        if _is_global(e):
            names.append(e)
        else:
            if e not in idx:
                idx[e] = ("i", len(idx) + 1)
                back.append(e)
            names.append(idx[e])
    return (pred, tuple(names)), tuple(back)


class _Classes:
    """Union-find over rule variables and rigid elements; a class may hold
    at most one rigid element."""

    def __init__(self):
        self.parent: dict = {}
        self.rigid: dict = {}

    def find(self, x):
        self.parent.setdefault(x, x)
        while self.parent[x] != x:
            self.parent[x] = self.parent[self.parent[x]]
            x = self.parent[x]
        return x

    def union(self, a, b) -> bool:
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return True
        ga, gb = self.rigid.get(ra), self.rigid.get(rb)
        if ga is not None and gb is not None and ga != gb:
            return False
        self.parent[rb] = ra
        if ga is None and gb is not None:
            self.rigid[ra] = gb
        return True

    def pin(self, x, e) -> bool:
        self.rigid.setdefault(e, e)
        return self.union(x, e)


def _term_key(t):
    return ("c", t.name) if isinstance(t, Const) else t


def _unify_rule(lhs: LHSProgram, r: Rule, patterns: Sequence[tuple], head: tuple | None) -> _Classes | None:
    """Most general identification of the rule's variables such that every
    IDB body atom takes the matching pattern and the head takes ``head``."""
    uf = _Classes()
    for t in r.variables():
        uf.find(t)
    for t in (x for a in (r.head, *r.body) for x in a.args):
        if isinstance(t, Const) and not uf.pin(("c", t.name), ("c", t.name)):
            return None
    kids = lhs.idb_atoms(r)
    for a, pat in zip(kids, patterns):
        first: dict = {}
        for t, n in zip(a.args, pat):
            if n[0] == "c":
                if not uf.pin(_term_key(t), n):
                    return None
            elif not uf.union(_term_key(t), first.setdefault(n, _term_key(t))):
                return None
    if head is not None:
        for t, n in zip(r.head.args, head):
            if not uf.pin(_term_key(t), n):
                return None
    return uf


def _pattern(uf: _Classes, args) -> tuple:
    out, idx = [], {}
    for t in args:
        root = uf.find(_term_key(t))
        g = uf.rigid.get(root)
        if g is not None and g[0] == "c":
            out.append(g)
        else:
            out.append(idx.setdefault(root, ("i", len(idx) + 1)))
    return tuple(out)


def _normalize(names: tuple) -> tuple:
    out, idx = [], {}
    for e in names:
        out.append(e if e[0] == "c" else idx.setdefault(e, ("i", len(idx) + 1)))
    return tuple(out)


def head_patterns(lhs: LHSProgram, limit: int = 10**5) -> dict:
    """For each IDB predicate, the argument patterns (equalities and
    constants) that the root of a most general proof tree can have."""
    prog = lhs.program
    pats: dict = {p: set() for p in prog.idb_arity}
    work = 0
    changed = True
    while changed:
        changed = False
        for r in prog.rules:
            pools = [sorted(pats[a.pred]) for a in lhs.idb_atoms(r)]
            for combo in itertools.product(*pools):
                work += 1
                if work > limit:
                    raise ResourceLimit("too many head patterns")
                uf = _unify_rule(lhs, r, combo, None)
                if uf is None:
                    continue
                pat = _pattern(uf, r.head.args)
                if pat not in pats[r.head.pred]:
                    pats[r.head.pred].add(pat)
                    changed = True
    return {p: sorted(v) for p, v in pats.items()}


def _instantiate(lhs: LHSProgram, ri: int, sig: tuple, patterns: dict) -> Iterator[_Label]:
    """Labels for a rule at a node with the given signature: one for each
    way the children's most general patterns force identifications."""
    r = lhs.program.rules[ri]
    pred, names = sig
    if r.head.pred != pred or len(r.head.args) != len(names):
        return
    kids = lhs.idb_atoms(r)
    seen = set()
    for combo in itertools.product(*(patterns.get(a.pred, ()) for a in kids)):
        uf = _unify_rule(lhs, r, combo, names)
        if uf is None:
            continue
        th = {}
        for v in r.variables():
            root = uf.find(v)
            g = uf.rigid.get(root)
            th[v] = g if g is not None else ("x", root.name)
        key = tuple(sorted((v.name, e) for v, e in th.items()))
        if key in seen:
            continue
        seen.add(key)

        def el(t):
            return ("c", t.name) if isinstance(t, Const) else th[t]

        edb, children, atoms = [], [], []
        for a in r.body:
            args = tuple(el(t) for t in a.args)
            if lhs.program.is_idb(a.pred):
                children.append(_child_sig(a.pred, args))
                atoms.append((a.pred, args))
            else:
                edb.append((a.pred, args))
        yield _Label(ri, sig, th, edb, children, atoms)


def root_signatures(lhs: LHSProgram, patterns: dict | None = None) -> list:
    """Signatures of the goal atom: its most general patterns, with answer
    elements named by their first position."""
    if patterns is None:
        patterns = head_patterns(lhs)
    out = []
    for pat in patterns.get(lhs.goal, ()):
        first: dict = {}
        names = tuple(n if n[0] == "c" else first.setdefault(n, ("l", j)) for j, n in enumerate(pat))
        out.append((lhs.goal, names))
    return out


# ---------------------------------------------------------------- search


@dataclass(frozen=True)
class _State:
    sig: tuple
    facts: frozenset  # (pred, args, truth)
    edb: frozenset  # (pred, args) over the interface and global elements
    desc: frozenset  # (rule index, matched mask, images)
    # open "subquery fact is false" obligations: (variant, interface binding, subquery states)
    pending: frozenset = frozenset()
    # per (variant, interface binding): the subquery states reachable over this subtree
    profile: frozenset = frozenset()

    def states_for(self, key) -> frozenset:
        for k, v in self.profile:
            if k == key:
                return v
        return frozenset()


def _view(lab: _Label, lam_map: dict) -> _Label:
    """The label as seen by a subquery whose special constants sit on the
    elements in ``lam_map``; remaining interface elements are renumbered."""
    if not lam_map:
        return lab
    ren = dict(lam_map)
    k = 0
    for e in lab.sig[1]:
        if e[0] == "i" and e not in ren:
            k += 1
            ren[e] = ("i", k)

    def f(e):
        return ren.get(e, e)

    atoms = [(p, tuple(map(f, args))) for p, args in lab.child_atoms]
    return _Label(lab.rule_index, (lab.sig[0], tuple(map(f, lab.sig[1]))), {v: f(e) for v, e in lab.theta.items()},
                  [(p, tuple(map(f, args))) for p, args in lab.edb], [_child_sig(p, a) for p, a in atoms], atoms)


def _injections(names: list, targets: list) -> Iterator[dict]:
    """Partial injective maps from ``names`` into ``targets``."""
    if not names:
        yield {}
        return
    for rest in _injections(names[1:], targets):
        yield rest
        for t in targets:
            if t not in rest.values():
                yield {**rest, names[0]: t}


class _Layer:
    """The right-hand rules of one query (the outer one or a subquery with a
    fixed binding of its special constants) and the per-node summary step.

    A subquery fact guessed false at a node opens an obligation: a model
    of the subquery without ``hit`` must exist over the whole tree.  Its
    bottom-up summaries are computed from the children's profiles and
    travel upwards with the outer summary until the root settles them."""

    def __init__(self, q: QueryForm, level: int, consts: list, root: Sequence | None = None,
                 lam: dict | None = None, ambient: Iterable = (), fresh: Sequence = ()):
        self.level = level
        self.consts = consts
        self.rules, self.subs = _compile(q, root=root, lam=lam)
        self.fresh = list(fresh)
        self.globals = set(ambient) | set(root or ()) | set((lam or {}).values()) | set(consts)
        for r in self.rules:
            for _, _, ts in r.lits + [(0,) + r.head]:
                self.globals.update(t[1] for t in ts if t[0] == "g")
        self.edb_preds = {p for r in self.rules for k, p, _ in r.lits if k == EDB}
        self.variant_keys = sorted({k for r in self.rules for i, _ in r.subs for k in self._bindings(r.lits[i])},
                                   key=repr)
        self._variants: dict = {}
        self._views: dict = {}
        self._memo: dict = {}
        self._cands: dict = {}

    # -- subquery variants
    def _bindings(self, lit) -> Iterator[tuple]:
        """Every way the arguments of a subquery literal can meet globals,
        each other or fresh elements."""
        _, name, ts = lit
        gl = sorted(self.globals, key=repr)

        def rec(i, b, seen):
            if i == len(ts):
                yield (name, tuple(b))
                return
            t = ts[i]
            if t[0] == "g":
                opts = [("g", t[1])]
            elif t in seen:
                j = seen[t]
                opts = [b[j] if b[j][0] != "fresh" else ("same", j)]
            else:
                opts = [("fresh",)] + [("same", j) for j in range(i) if b[j] == ("fresh",)] + [("g", g) for g in gl]
            for o in opts:
                yield from rec(i + 1, b + [o], {**seen, t: i} if t[0] == "v" and t not in seen else seen)

        yield from rec(0, [], {})

    def variant(self, vkey) -> "_Layer":
        v = self._variants.get(vkey)
        if v is None:
            name, b = vkey
            sub = self.subs[name]
            _check_fcq(sub)
            lvl = self.level + 1
            lam, fresh = {}, []
            for i, x in enumerate(b):
                k = sub.free[i]
                if x[0] == "fresh":
                    lam[k] = ("λ", lvl, k)
                    fresh.append(lam[k])
                elif x[0] == "same":
                    lam[k] = ("λ", lvl, sub.free[x[1]])
                else:
                    lam[k] = x[1]
            v = self._variants[vkey] = _Layer(sub, lvl, self.consts, lam=lam, ambient=self.globals, fresh=fresh)
        return v

    def _variant_of(self, fact) -> tuple:
        name, args = fact
        b, lam_map = [], {}
        sub = self.subs[name]
        for i, e in enumerate(args):
            if _is_global(e):
                b.append(("g", e))
            elif e in args[:i]:
                b.append(("same", args.index(e)))
            else:
                b.append(("fresh",))
                lam_map[e] = ("λ", self.level + 1, sub.free[i])
        return (name, tuple(b)), lam_map

    def view(self, lab: _Label, lam_map: dict) -> _Label:
        key = (id(lab), frozenset(lam_map.items()))
        v = self._views.get(key)
        if v is None:
            v = self._views[key] = (lab, _view(lab, lam_map))
        return v[1]

    def sub_states(self, vkey, lab: _Label, lam_map: dict, kids: Sequence[_State], over: int | None = None,
                   over_states: frozenset = frozenset(), root: bool = False) -> frozenset:
        """Summaries of a subquery variant at this node, its special
        constants placed by ``lam_map``; child ``over`` uses ``over_states``
        instead of its profile.  At the root only accepting ones are kept."""
        v = self.variant(vkey)
        vlab = self.view(lab, lam_map)
        pools = []
        for j, ((_, back), st) in enumerate(zip(lab.children, kids)):
            if j == over:
                pools.append(over_states)
            else:
                key = frozenset((("i", k), lam_map[e]) for k, e in enumerate(back, 1) if e in lam_map)
                pools.append(st.states_for((vkey, key)))
        out = set()
        for combo in itertools.product(*pools):
            for st, _, ok in v.node(vlab, combo, root):
                if root and ok:
                    return frozenset([st])
                if not root:
                    out.add(st)
        return frozenset(out)

    # -- one node
    def candidates(self, lab: _Label) -> list:
        key = (lab.sig, tuple(lab.edb))
        out = self._cands.get(key)
        if out is not None:
            return out
        out = []
        for r in self.rules:
            sites = [(r.head, r.guard)] if r.guard is not None else []
            sites += [(r.lits[i][1:], c) for i, c in r.subs if c is not None]
            for (hp, hts), g in sites:
                _, gp, gts = r.lits[g]
                for p, args in lab.edb:
                    if p != gp:
                        continue
                    img = _match(gts, args, (None,) * r.nvars)
                    if img is None:
                        continue
                    f = (hp, _subst(hts, img))
                    if f[1] is not None and not all(_is_global(e) for e in f[1]) and f not in out:
                        out.append(f)
        self._cands[key] = out
        return out

    def node(self, lab: _Label, kids: Sequence[_State], root: bool = False) -> list:
        """Summaries of a node over the given child summaries, each with the
        node's partial matches before projection and, when ``root`` is set,
        whether it is an accepting root."""
        if not self.level:
            return list(self._node(lab, kids, root))
        key = (id(lab), tuple(kids), root)
        out = self._memo.get(key)
        if out is None:
            out = self._memo[key] = list(self._node(lab, kids, root))
        return out

    def _node(self, lab: _Label, kids: Sequence[_State], root: bool) -> Iterator[tuple[_State, set, bool]]:
        decided: dict = {}
        acc: set = set()
        visible = {f for f in lab.edb if f[0] in self.edb_preds}
        for (csig, back), st in zip(lab.children, kids):
            def tr(e, back=back):
                return back[e[1] - 1] if e[0] == "i" else e

            for p, args, val in st.facts:
                key = (p, tuple(tr(e) for e in args))
                if decided.setdefault(key, val) != val:
                    return
            for p, args in st.edb:
                visible.add((p, tuple(tr(e) for e in args)))
            new = set()
            for ri, mask, img in st.desc:
                d = (ri, mask, tuple(e if e is None or e == INTERNAL else tr(e) for e in img))
                new.add(d)
                for a in acc:
                    m = _merge(a, d)
                    if m is not None:
                        new.add(m)
            acc |= new
        interface = set(lab.sig[1])
        # obligations opened below move up one level
        pending, root_alive = [], root
        for j, ((_, back), st) in enumerate(zip(lab.children, kids)):
            for vkey, lk, states in st.pending:
                lam_map = {back[e[1] - 1]: lam for e, lam in lk}
                up = self.sub_states(vkey, lab, lam_map, kids, j, states)
                if not up:
                    return
                if root_alive and not self.sub_states(vkey, lab, lam_map, kids, j, states, root=True):
                    root_alive = False
                pending.append((vkey, self._restrict(lam_map, interface), up))
        profile = frozenset(self._profile(lab, kids)) if self.variant_keys else frozenset()
        cands = [f for f in self.candidates(lab) if f not in decided]
        out_edb = frozenset(f for f in visible if all(e in interface or _is_global(e) for e in f[1]))
        base: dict = {}
        for p, args in visible:
            base.setdefault((EDB, p), []).append(args)
        spawned: dict = {}
        for guess in itertools.product((False, True), repeat=len(cands)):
            facts = dict(decided)
            facts.update(zip(cands, guess))
            opened, alive, ok = [], root_alive, True
            for f, val in zip(cands, guess):
                if val or f[0] not in self.subs:
                    continue
                if f not in spawned:
                    vkey, lam_map = self._variant_of(f)
                    here = self.sub_states(vkey, lab, lam_map, kids)
                    at_root = bool(here) and root and bool(self.sub_states(vkey, lab, lam_map, kids, root=True))
                    spawned[f] = ((vkey, self._restrict(lam_map, interface), here), at_root)
                ob, at_root = spawned[f]
                if not ob[2]:
                    ok = False
                    break
                opened.append(ob)
                alive = alive and at_root
            if not ok:
                continue
            index = {k: list(v) for k, v in base.items()}
            for (p, args), val in facts.items():
                index.setdefault((IDB if val else NEG, p), []).append(args)
            descs = self._extend(acc, index)
            if descs is None:
                continue
            out_facts = frozenset(
                (p, args, val) for (p, args), val in facts.items()
                if all(e in interface or _is_global(e) for e in args) and any(e[0] == "i" for e in args)
            )
            out_desc = set()
            for ri, mask, img in descs:
                r = self.rules[ri]
                img2 = tuple(e if e is None or e == INTERNAL or e[0] != "x" else INTERNAL for e in img)
                if INTERNAL not in img2:
                    continue  # every matched fact is still visible above
                if not any(e == INTERNAL and r.var_lits[v] & ~mask for v, e in enumerate(img2)):
                    out_desc.add((ri, mask, img2))
            accepted = alive and self.root_ok(descs, lab, kids)
            yield (_State(lab.sig, out_facts, out_edb, frozenset(out_desc), frozenset(pending + opened), profile),
                   descs, accepted)

    @staticmethod
    def _restrict(lam_map: dict, interface: set) -> frozenset:
        return frozenset((e, lam) for e, lam in lam_map.items() if e in interface)

    def _profile(self, lab: _Label, kids: Sequence[_State]) -> Iterator[tuple]:
        iface = list(dict.fromkeys(e for e in lab.sig[1] if not _is_global(e)))
        for vkey in self.variant_keys:
            for rho in _injections(self.variant(vkey).fresh, iface):
                lam_map = {e: lam for lam, e in rho.items()}
                yield (vkey, frozenset(lam_map.items())), self.sub_states(vkey, lab, lam_map, kids)

    def _extend(self, acc: set, index: dict) -> set | None:
        out: set = set()
        starts = list(acc) + [(ri, 0, (None,) * r.nvars) for ri, r in enumerate(self.rules)]
        for ri, mask, img in starts:
            r = self.rules[ri]
            stack = [(0, mask, img)]
            while stack:
                i, m, im = stack.pop()
                if i == len(r.lits):
                    if m == r.full:
                        return None
                    if m:
                        out.add((ri, m, im))
                    continue
                stack.append((i + 1, m, im))
                if m >> i & 1:
                    continue
                kind, p, ts = r.lits[i]
                for args in index.get((kind, p), ()):
                    im2 = _match(ts, args, im)
                    if im2 is not None:
                        stack.append((i + 1, m | 1 << i, im2))
        return out

    # -- root
    def root_ok(self, descs: set, lab: _Label | None = None, kids: Sequence[_State] = ()) -> bool:
        """Can the global facts be completed to a model without ``hit``,
        given the root's partial matches?  Subquery facts over globals are
        fixed: false exactly when the subquery has an accepting countermodel."""
        gl = sorted(self.globals, key=repr)
        truth: dict = {}

        def forced(p, args) -> bool:
            if (p, args) not in truth:
                vkey, lam_map = self._variant_of((p, args))
                truth[(p, args)] = not self.sub_states(vkey, lab, lam_map, kids, root=True)
            return truth[(p, args)]

        clauses = []
        empty = {(ri, 0, (None,) * r.nvars) for ri, r in enumerate(self.rules)}
        for ri, mask, img in descs | empty:
            r = self.rules[ri]
            pend = [i for i in range(len(r.lits)) if not mask >> i & 1]
            if any(r.lits[i][0] == EDB for i in pend):
                continue
            free = sorted({t[1] for i in pend for t in r.lits[i][2] if t[0] == "v" and img[t[1]] is None})
            for vals in itertools.product(gl, repeat=len(free)):
                im = list(img)
                for v, g in zip(free, vals):
                    im[v] = g
                body, head = [], BOTTOM
                ok = True
                for i in pend:
                    kind, p, ts = r.lits[i]
                    args = _subst(ts, im)
                    if args is None or not all(_is_global(e) for e in args):
                        ok = False
                        break
                    if kind == NEG:
                        head = (p, args)
                    elif p in self.subs:
                        if not forced(p, args):
                            ok = False
                            break
                    else:
                        body.append((p, args))
                if not ok:
                    continue
                if head == BOTTOM and r.hit:
                    head = (HIT, ())
                clauses.append((body, head))
        model: set = set()
        changed = True
        while changed:
            changed = False
            for body, head in clauses:
                if head not in model and all(b in model for b in body):
                    model.add(head)
                    changed = True
        return BOTTOM not in model and (HIT, ()) not in model


class CountermodelSearch:
    """Bottom-up exploration of subtree summaries for one root signature."""

    def __init__(self, lhs: LHSProgram, rhs: QueryForm, root_sig: tuple, max_states: int = 10**6,
                 deadline: float | None = None, patterns: dict | None = None):
        self.lhs = lhs
        self.patterns = head_patterns(lhs) if patterns is None else patterns
        self.root_sig = root_sig
        self.consts = [("c", c) for c in sorted(lhs.program.constants())]
        self.top = _Layer(rhs, 0, self.consts, root=root_sig[1])
        self.rules = self.top.rules
        self.max_states = max_states
        self.deadline = deadline
        self.labels: dict = {}
        self.prov: dict = {}
        self.count = 0
        self._explore_labels()

    def _explore_labels(self):
        todo = [self.root_sig]
        seen = {self.root_sig}
        while todo:
            sig = todo.pop()
            labs = []
            for ri, r in enumerate(self.lhs.program.rules):
                if r.head.pred != sig[0]:
                    continue
                for lab in _instantiate(self.lhs, ri, sig, self.patterns):
                    labs.append(lab)
                    for csig, _ in lab.children:
                        if csig not in seen:
                            seen.add(csig)
                            todo.append(csig)
            self.labels[sig] = labs

    def root_ok(self, descs: set) -> bool:
        return self.top.root_ok(descs)

    # -- fixpoint
    def run(self) -> _State | None:
        active: dict = {sig: [] for sig in self.labels}
        by_key: dict = {}
        new_states: list = []
        first = True
        while first or new_states:
            fresh_round: dict = {sig: [] for sig in self.labels}
            for st in new_states:
                fresh_round[st.sig].append(st)
            produced: list = []
            for sig, labs in self.labels.items():
                at_root = sig == self.root_sig
                for lab in labs:
                    if not lab.children:
                        if not first:
                            continue
                        combos: Iterable = [()]
                    else:
                        combos = self._combos(lab, active, fresh_round)
                    for kids in combos:
                        self._check_budget()
                        for st, _, accepted in self.top.node(lab, kids, at_root):
                            if accepted:
                                self.prov[st] = (lab, kids)
                                return st
                            if self._add(st, by_key, active):
                                self.prov[st] = (lab, kids)
                                produced.append(st)
            first = False
            new_states = produced
        return None

    def _combos(self, lab: _Label, active: dict, fresh: dict) -> Iterator[tuple]:
        sigs = [c for c, _ in lab.children]
        k = len(sigs)
        for p in range(k):
            if not fresh[sigs[p]]:
                continue
            pools = []
            for j, s in enumerate(sigs):
                if j < p:
                    pools.append([x for x in active[s] if x not in fresh[s]])
                elif j == p:
                    pools.append(fresh[s])
                else:
                    pools.append(active[s])
            yield from itertools.product(*pools)

    def _check_budget(self):
        if self.deadline is not None and time.monotonic() > self.deadline:
            raise ResourceLimit("countermodel search exceeded its time budget")

    def _add(self, st: _State, by_key: dict, active: dict) -> bool:
        key = (st.sig, st.facts, st.edb, st.pending, st.profile)
        cur = by_key.setdefault(key, [])
        if any(d <= st.desc for d in cur):
            return False
        for d in [d for d in cur if st.desc < d]:
            cur.remove(d)
            old = _State(st.sig, st.facts, st.edb, d, st.pending, st.profile)
            if old in active[st.sig]:
                active[st.sig].remove(old)
        cur.append(st.desc)
        active[st.sig].append(st)
        self.count += 1
        if self.count > self.max_states:
            raise ResourceLimit(f"countermodel search exceeded {self.max_states} states")
        self._check_budget()
        return True

    # -- witness
    def proof_tree(self, st: _State) -> ProofTree:
        n = 2 * max((len(r.variables()) for r in self.lhs.program.rules), default=0)
        pool = [Var(f"V{i}") for i in range(1, n + 1)]
        return self._build(st, {}, pool)

    def _build(self, st: _State, names: dict, pool: list) -> ProofTree:
        lab, kids = self.prov[st]
        r = self.lhs.program.rules[lab.rule_index]
        used = set(names.values())
        free = iter(v for v in pool if v not in used)
        local = dict(names)

        def term(e):
            if e[0] == "c":
                return Const(e[1])
            if e not in local:
                local[e] = next(free)
            return local[e]

        theta = {v: term(lab.theta[v]) for v in sorted(lab.theta, key=lambda v: v.name)}
        label = r.substitute(theta)
        children = []
        for (csig, back), kid in zip(lab.children, kids):
            cn = {}
            for k, e in enumerate(back, start=1):
                cn[("i", k)] = local[e]
            for e in csig[1]:
                if e[0] == "l":
                    cn[e] = local[e]
            children.append(self._build(kid, cn, pool))
        return ProofTree(label, tuple(children))


def _merge(a: tuple, b: tuple) -> tuple | None:
    if a[0] != b[0] or a[1] & b[1]:
        return None
    img = []
    for x, y in zip(a[2], b[2]):
        if x is None:
            img.append(y)
        elif y is None:
            img.append(x)
        elif x == y and x != INTERNAL:
            img.append(x)
        else:
            return None
    return (a[0], a[1] | b[1], tuple(img))


# ---------------------------------------------------------------- entry point


def _answer_lambda(rhs: QueryForm, answer: tuple) -> dict:
    if isinstance(rhs, FCQ):
        return {k: answer[i] for i, k in enumerate(rhs.free)}
    return {j + 1: a for j, a in enumerate(answer)}


def validate_witness(lhs: QueryForm, rhs: QueryForm, instance, answer) -> None:
    if not check_answer(lhs, instance, answer):
        raise WitnessError("witness is not an answer of the left-hand query")
    if check_answer(rhs, instance, answer):
        raise WitnessError("witness is an answer of the right-hand query")


def countermodel_containment(p: QueryForm, q: QueryForm, max_states: int = 10**6,
                             timeout: float | None = None) -> Verdict:
    """Decide p ⊑ q for a frontier-guarded (or monadic) right-hand side."""
    if p.arity != q.arity:
        raise QueryError(f"arity mismatch: {p.arity} vs {q.arity}")
    lhs = lhs_program(p)
    deadline = None if timeout is None else time.monotonic() + timeout
    patterns = head_patterns(lhs)
    total = 0
    for sig in root_signatures(lhs, patterns):
        search = CountermodelSearch(lhs, q, sig, max_states - total, deadline, patterns)
        st = search.run()
        total += search.count
        if st is None:
            continue
        tree = search.proof_tree(st)
        inst, answer, _ = canonical_instance(tree, lhs.program)
        validate_witness(p, q, inst, answer)
        return Verdict.not_contained(tree, inst, answer, _answer_lambda(q, answer),
                                     engine="automata", states=total, height=tree.depth)
    return Verdict.contained(engine="automata", states=total)

"""Automata that verify a single rule match inside a proof tree.

Annotated labels are triples ``(rule instance, lambda-label, p-label)``
where the lambda-label is a sorted tuple of ``(k, variable)`` pairs and the
p-label an :class:`Atom` or ``None``.  Localized automata read pairs
``(rule instance, lambda-label, child index)`` instead; the child index
(0 at the root) lets an upward move know where it came from.

Variables of the matched rule and the special constants are tracked by
regions: a variable ``v`` of the proof alphabet is chosen at a region root
where it occurs and is followed down through every child whose head
mentions it.  Two occurrences in the same region are connected, and every
set of pairwise connected occurrences lies in one region.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Iterable, Iterator, Sequence

from ..automata import ATA2, FALSE, NFTA, TRUE, RankedAlphabet, Tree, f_and, f_atom, f_atoms, f_or
from ..model import Atom, Lam, Program, QueryForm, Rule, Var, guard_atom
from .prooftree import START, ProofAlphabet, ProofTree, proof_alphabet
from .verdict import ResourceLimit

A, B, HERE = "a", "b", "h"


def _alpha(q) -> ProofAlphabet:
    return q if isinstance(q, ProofAlphabet) else proof_alphabet(q)


def _lambdas(rule: Rule) -> list[int]:
    return sorted({t.index for a in (rule.head, *rule.body) for t in a.args if isinstance(t, Lam)})


def annotated_labels(q, rho: Rule, n_lambda: int | None = None, p_labels: bool = True,
                     labels: Iterable[Rule] | None = None) -> Iterator[tuple]:
    """Every annotated label over the given rule instances (default: all)."""
    alpha = _alpha(q)
    nl = max(_lambdas(rho), default=0) if n_lambda is None else n_lambda
    ps: list = [None]
    if p_labels:
        ps += [Atom(rho.head.pred, args) for args in itertools.product(alpha.variables, repeat=len(rho.head.args))]
    for lab in (alpha.labels() if labels is None else labels):
        vs = lab.variables()
        for img in itertools.product([None, *vs], repeat=nl):
            lam = tuple((k + 1, v) for k, v in enumerate(img) if v is not None)
            for p in ps:
                yield (lab, lam, p)


# ---------------------------------------------------------------- direct check


def _connected(t: ProofTree, a: tuple, b: tuple, v: Var) -> bool:
    k = 0
    while k < min(len(a), len(b)) and a[k] == b[k]:
        k += 1
    for addr in (a, b):
        for j in range(k + 1, len(addr) + 1):
            if v not in t.subtree(addr[:j]).label.head.variables():
                return False
    return True


def _occurs(rule: Rule, v) -> bool:
    return any(v in a.args for a in (rule.head, *rule.body))


def _pairwise(t: ProofTree, occ: list, v) -> bool:
    return all(_connected(t, x, y, v) for i, x in enumerate(occ) for y in occ[i + 1:])


def is_matching_tree(q, rho: Rule, t: ProofTree, n_lambda: int | None = None) -> bool:
    """Brute-force check that an annotated proof tree is a matching tree.

    The p-node counts as an occurrence of every head variable of ``rho``,
    so it must be connected to the atoms that use them.
    """
    from .prooftree import is_proof_tree

    alpha = _alpha(q)
    if not is_proof_tree(alpha, t):
        return False
    nodes = dict(t.nodes())
    nl = max(_lambdas(rho), default=0) if n_lambda is None else n_lambda
    # lambda-annotation
    lam_at: dict = {}
    for addr, node in nodes.items():
        for k, v in node.lam:
            if k > nl or not _occurs(node.label, v):
                return False
            lam_at.setdefault(k, []).append((addr, v))
    for k in range(1, nl + 1):
        occ = lam_at.get(k, [])
        if not occ or len({v for _, v in occ}) != 1 or not _pairwise(t, [a for a, _ in occ], occ[0][1]):
            return False
    # p-annotation
    pnodes = [a for a, n in nodes.items() if n.p is not None]
    if len(pnodes) != 1:
        return False
    pnode, patom = pnodes[0], nodes[pnodes[0]].p
    if patom.pred != rho.head.pred or len(patom.args) != len(rho.head.args):
        return False
    idb = alpha.program.is_idb
    body = list(rho.body)

    def search(i: int, nu: dict, where: list) -> bool:
        if i == len(body):
            return final(nu, where)
        alpha_atom = body[i]
        for addr, node in nodes.items():
            lam = dict(node.lam)
            for b in node.label.body:
                if idb(b.pred) or b.pred != alpha_atom.pred or len(b.args) != len(alpha_atom.args):
                    continue
                nu2 = dict(nu)
                ok = True
                for s, v in zip(alpha_atom.args, b.args):
                    if isinstance(s, Var):
                        if nu2.setdefault(s, v) != v:
                            ok = False
                    elif isinstance(s, Lam):
                        if lam.get(s.index) != v:
                            ok = False
                    elif s != v:
                        ok = False
                    if not ok:
                        break
                if ok and search(i + 1, nu2, where + [addr]):
                    return True
        return False

    def final(nu: dict, where: list) -> bool:
        for s, v in zip(rho.head.args, patom.args):
            if isinstance(s, Var):
                if nu.get(s) != v:
                    return False
            elif isinstance(s, Lam):
                if dict(nodes[pnode].lam).get(s.index) != v:
                    return False
            elif s != v:
                return False
        for x in rho.variables():
            occ = [where[i] for i, a in enumerate(body) if x in a.args]
            if x in rho.head.args:
                occ.append(pnode)
            if x in nu and not _pairwise(t, occ, nu[x]):
                return False
        return True

    return search(0, {}, [])


# ---------------------------------------------------------------- rule matcher


@dataclass(frozen=True)
class MatchState:
    """State of the rule matcher at a node.

    ``head`` is the atom the node must derive (or START), ``beta`` the body
    atoms of the matched rule still to be found at or below the node, and
    ``xs``/``ls``/``p`` the region status of each rule variable, each special
    constant and of the p-node.
    """

    head: object
    beta: frozenset
    xs: tuple
    ls: tuple
    p: str


class _Matcher:
    def __init__(self, alpha: ProofAlphabet, rho: Rule, n_lambda: int | None = None):
        self.alpha = alpha
        self.rho = rho
        self.vars = rho.variables()
        self.nl = max(_lambdas(rho), default=0) if n_lambda is None else n_lambda
        self.body = list(rho.body)
        self.goal = alpha.lhs.goal
        self.is_idb = alpha.program.is_idb

    def starts(self) -> list[MatchState]:
        beta = frozenset(range(len(self.body)))
        return [MatchState(START, beta, (A,) * len(self.vars), (A,) * self.nl, p) for p in (A, HERE)]

    def _image(self, atom: Atom, nu: dict, lam: dict):
        out = []
        for s in atom.args:
            if isinstance(s, Var):
                v = nu.get(s)
            elif isinstance(s, Lam):
                v = lam.get(s.index)
            else:
                v = s
            if v is None:
                return None
            out.append(v)
        return Atom(atom.pred, tuple(out))

    def step(self, st: MatchState, rule: Rule, lam: dict, p_args) -> Iterator[tuple[tuple, frozenset]]:
        """Transitions at a node: pairs (child states, match) where match is
        a set of (body index, image atom).  ``p_args`` is the p-label's
        argument tuple or None."""
        if st.head == START:
            if rule.head.pred != self.goal:
                return
        elif rule.head != st.head:
            return
        if (st.p == HERE) != (p_args is not None):
            return
        kids = [a for a in rule.body if self.is_idb(a.pred)]
        edb = {a for a in rule.body if not self.is_idb(a.pred)}
        occurring = rule.variables()
        headvars = [set(a.variables()) for a in kids]
        m = len(kids)

        # variables: region value at this node (or None) and whether 'a' passes down
        var_opts = []
        for x, s in zip(self.vars, st.xs):
            if s == B:
                var_opts.append([(None, False)])
            elif s == A:
                var_opts.append([(v, False) for v in occurring] + [(None, True)])
            else:
                var_opts.append([(s[1], False)])
        lam_opts = []
        for k, s in zip(range(1, self.nl + 1), st.ls):
            here = lam.get(k)
            if s == B:
                lam_opts.append([(None, False, False)] if here is None else [])
            elif s == A:
                if here is not None:
                    lam_opts.append([(here, False, False)])
                else:
                    lam_opts.append([(v, True, False) for v in occurring] + [(None, False, True)])
            else:
                _, v, pend = s
                if here is not None and here != v:
                    lam_opts.append([])
                else:
                    lam_opts.append([(v, pend and here is None, False)])
        for vchoice in itertools.product(*var_opts):
            nu = {x: v for x, (v, _) in zip(self.vars, vchoice) if v is not None}
            if p_args is not None:
                img = self._image(self.rho.head, nu, lam)
                if img is None or tuple(img.args) != tuple(p_args):
                    continue
            for lchoice in itertools.product(*lam_opts):
                cand = []
                for i in st.beta:
                    img = self._image(self.body[i], nu, lam)
                    if img is not None and img in edb:
                        cand.append((i, img))
                for r in range(len(cand) + 1):
                    for matched in itertools.combinations(cand, r):
                        rest = st.beta - {i for i, _ in matched}
                        for tup in self._children(kids, headvars, vchoice, lchoice, st.p, rest, m):
                            yield tup, frozenset(matched)

    def _children(self, kids, headvars, vchoice, lchoice, pst, rest, m) -> Iterator[tuple]:
        if m == 0:
            if rest or any(pass_ for _, pass_ in vchoice) or any(pend or pass_ for _, pend, pass_ in lchoice) \
                    or pst == A:
                return
            yield ()
            return
        per_var = []
        for v, pass_ in vchoice:
            if pass_:
                per_var.append([tuple(A if j == i else B for j in range(m)) for i in range(m)])
            elif v is None:
                per_var.append([(B,) * m])
            else:
                per_var.append([tuple(("c", v) if v in headvars[j] else B for j in range(m))])
        per_lam = []
        for v, pend, pass_ in lchoice:
            if pass_:
                per_lam.append([tuple(A if j == i else B for j in range(m)) for i in range(m)])
            elif v is None:
                per_lam.append([(B,) * m])
            else:
                cands = [j for j in range(m) if v in headvars[j]]
                if pend:
                    opts = [tuple(("c", v, j == i) if j in cands else B for j in range(m)) for i in cands]
                else:
                    opts = [tuple(("c", v, False) if j in cands else B for j in range(m))]
                per_lam.append(opts)
        if pst == A:
            per_p = [tuple(s if j == i else B for j in range(m)) for i in range(m) for s in (A, HERE)]
        else:
            per_p = [(B,) * m]
        rest = sorted(rest)
        for xs in itertools.product(*per_var):
            for ls in itertools.product(*per_lam):
                places = []
                for i in rest:
                    atom = self.body[i]
                    ok = []
                    for j in range(m):
                        if all(xs[self.vars.index(x)][j] != B for x in atom.variables()) and \
                                all(ls[t.index - 1][j] != B for t in atom.args if isinstance(t, Lam)):
                            ok.append(j)
                    places.append(ok)
                for ps in per_p:
                    for where in itertools.product(*places):
                        yield tuple(
                            MatchState(kids[j], frozenset(i for i, w in zip(rest, where) if w == j),
                                       tuple(x[j] for x in xs), tuple(lm[j] for lm in ls), ps[j])
                            for j in range(m)
                        )


def _explore(labels: Sequence, step, starts: Sequence, max_states: int | None) -> tuple[set, dict]:
    states, delta, todo = set(starts), {}, list(starts)
    while todo:
        st = todo.pop()
        for lab in labels:
            for kids, match in step(st, lab):
                delta.setdefault((st, lab), {}).setdefault(kids, set()).add(match)
                for k in kids:
                    if k not in states:
                        states.add(k)
                        todo.append(k)
                        if max_states is not None and len(states) > max_states:
                            raise ResourceLimit(f"matcher exceeds {max_states} states")
    return states, delta


def build_rule_matcher(q, rho: Rule, labels: Iterable[tuple] | None = None, n_lambda: int | None = None,
                       max_states: int | None = 10**6) -> NFTA:
    """Top-down automaton over annotated labels accepting the matching trees
    of ``rho`` (tree shape, lambda- and p-annotations and the match)."""
    alpha = _alpha(q)
    mt = _Matcher(alpha, rho, n_lambda)
    labels = list(annotated_labels(alpha, rho, mt.nl) if labels is None else labels)
    ranks = {lab: alpha.rank(lab[0]) for lab in labels}

    def step(st, lab):
        rule, lam, p = lab
        if p is not None and (p.pred != rho.head.pred or len(p.args) != len(rho.head.args)):
            return iter(())
        return mt.step(st, rule, dict(lam), None if p is None else tuple(p.args))

    states, delta = _explore(labels, step, mt.starts(), max_states)
    return NFTA(RankedAlphabet(ranks), states, set(mt.starts()),
                {key: frozenset(v) for key, v in delta.items()})


def indexed_tree(t: ProofTree, idx: int = 0) -> Tree:
    """Tree over (rule instance, lambda-label, child index) labels."""
    return Tree((t.label, t.lam, idx), tuple(indexed_tree(c, i) for i, c in enumerate(t.children, 1)))


def indexed_labels(t: ProofTree) -> list[tuple]:
    return sorted(indexed_tree(t).labels(), key=repr)


# ---------------------------------------------------------------- localized


class _Localized:
    """The rule matcher run from an inner node, as a two-way automaton.

    ``down`` states behave like the matcher, ``up`` states climb to the
    parent and ``par`` states resume the matcher there, sending fresh down
    states to the siblings.  The p-node is the node the run starts from.
    """

    def __init__(self, alpha: ProofAlphabet, rho: Rule, v: tuple, labels: Sequence[tuple], tag,
                 n_lambda: int | None, max_states: int | None, exp=None):
        self.mt = _Matcher(alpha, rho, n_lambda)
        self.tag = tag
        self.v = tuple(v)
        self.exp = exp

        def step(st, lab):
            rule, lam = lab
            return self.mt.step(st, rule, dict(lam), self.v if st.p == HERE else None)

        plain = sorted({(rule, lam) for rule, lam, _ in labels}, key=repr)
        states, delta = _explore(plain, step, self.mt.starts(), max_states)
        self.states = states
        self.trans: dict = {}  # (state, rule, lam) -> {kids: matches}
        self.parents: dict = {}  # child state -> [(parent, rule, lam, i, kids, matches)]
        for (st, (rule, lam)), kids in delta.items():
            self.trans[(st, rule, lam)] = kids
            for tup, matches in kids.items():
                for i, k in enumerate(tup, 1):
                    self.parents.setdefault(k, []).append((st, rule, lam, i, tup, matches))

    def name(self, *parts):
        return (self.tag,) + parts

    @property
    def start_state(self):
        return self.name("start")

    @property
    def accept_state(self):
        return self.name("accept")


def localize(q, rho: Rule, v: Sequence, labels: Iterable[tuple], n_lambda: int | None = None,
             max_states: int | None = 10**6) -> ATA2:
    """Two-way automaton that, started at a node, accepts iff the tree with
    the p-label p(v) at that node is a matching tree for ``rho``.

    ``labels`` are (rule instance, lambda-label, child index) triples."""
    alpha = _alpha(q)
    labels = list(labels)
    loc = _Localized(alpha, rho, tuple(v), labels, "loc", n_lambda, max_states)
    return _assemble([loc], labels, alpha, [loc.start_state], lambda *_: TRUE)


def _assemble(parts: list, labels: list, alpha: ProofAlphabet, start: list, psi) -> ATA2:
    """Formulas for every state of the given localized automata.  ``psi``
    maps (localized automaton, match set, node label) to an extra conjunct
    and may add further automata to ``parts``."""
    ranks = {lab: alpha.rank(lab[0]) for lab in labels}
    delta: dict = {}
    done = 0
    while done < len(parts):
        loc = parts[done]
        done += 1
        name = loc.name
        starts = set(loc.mt.starts())

        def extra(matches, lab, loc=loc):
            return f_or(*(psi(loc, m, lab) for m in matches))

        firsts = set()
        for lab in labels:
            rule, lam, idx = lab
            delta[(loc.accept_state, lab)] = TRUE
            opts = []
            for s in loc.states:
                if s.p == HERE and (s, rule, lam) in loc.trans:
                    opts.append(f_and(f_atom(0, name("up", s)), f_atom(0, name("down", s))))
                    firsts.add(s)
            delta[(loc.start_state, lab)] = f_or(*opts)
        for s in loc.states:
            for lab in labels:
                rule, lam, _ = lab
                kids = loc.trans.get((s, rule, lam), {})
                delta[(name("down", s), lab)] = f_or(*(
                    f_and(*(f_atom(j, name("down", k)) for j, k in enumerate(tup, 1)), extra(matches, lab))
                    for tup, matches in kids.items()
                ))
        todo, seen, pending = list(firsts), set(), {}
        while todo:
            s = todo.pop()
            if s in seen:
                continue
            seen.add(s)
            for lab in labels:
                idx = lab[2]
                if idx == 0:
                    delta[(name("up", s), lab)] = f_atom(0, loc.accept_state) if s in starts else FALSE
                    continue
                opts = []
                for parent, prule, plam, i, tup, matches in loc.parents.get(s, []):
                    if i != idx:
                        continue
                    par = name("par", parent, prule, plam, i, tup)
                    opts.append(f_atom(-1, par))
                    if par not in pending:
                        pending[par] = (parent, prule, plam, i, tup, matches)
                        todo.append(parent)
                delta[(name("up", s), lab)] = f_or(*opts)
        for par, (parent, prule, plam, i, tup, matches) in pending.items():
            for lab in labels:
                if (lab[0], lab[1]) != (prule, plam):
                    continue
                delta[(par, lab)] = f_and(
                    f_atom(0, name("up", parent)),
                    *(f_atom(j, name("down", k)) for j, k in enumerate(tup, 1) if j != i),
                    extra(matches, lab),
                )
    delta = {k: v for k, v in delta.items() if v != FALSE}
    states = {k[0] for k in delta} | set(start) | {loc.accept_state for loc in parts}
    states |= {s for phi in delta.values() for _, s in f_atoms(phi)}
    return ATA2(RankedAlphabet(ranks), states, set(start), {loc.accept_state for loc in parts}, delta)


# ---------------------------------------------------------------- guard expansions


@dataclass(frozen=True)
class GuardExpansion:
    """``guards`` lists, per replacement guard, its body position in
    ``rule``, the defining rule it came from and that rule's head
    arguments under the unifier."""

    source: Rule
    chosen: tuple
    theta: tuple  # sorted (variable, term) pairs
    rule: Rule
    guards: tuple


def _walk(sub: dict, t):
    while isinstance(t, Var) and t in sub:
        t = sub[t]
    return t


def _unify(sub: dict, a, b, prefer: set) -> bool:
    a, b = _walk(sub, a), _walk(sub, b)
    if a == b:
        return True
    if isinstance(a, Var) and isinstance(b, Var):
        if a in prefer and b not in prefer:
            a, b = b, a
        sub[a] = b
        return True
    if isinstance(a, Var):
        sub[a] = b
        return True
    if isinstance(b, Var):
        sub[b] = a
        return True
    return False


def _canonical(rule: Rule) -> Rule:
    return rule.substitute({v: Var(f"G{i}") for i, v in enumerate(rule.variables(), 1)})


def guard_expansions(rule: Rule, prog: Program) -> list[GuardExpansion]:
    """Replace each IDB body atom by the guard of a defining rule, unified
    with the atom; one representative per equivalence class."""
    idb_pos = [i for i, a in enumerate(rule.body) if prog.is_idb(a.pred)]
    used = {v.name for r in prog.rules for v in r.variables()}
    own = set(rule.variables())
    out: list = []
    seen: set = set()
    for chosen in itertools.product(*(prog.rules_for(rule.body[i].pred) for i in idb_pos)):
        counter = itertools.count(1)
        renamed = []
        for r in chosen:
            ren = {}
            for v in r.variables():
                name = f"{v.name}_{next(counter)}"
                while name in used:
                    name = f"{v.name}_{next(counter)}"
                ren[v] = Var(name)
            renamed.append(r.substitute(ren))
        sub: dict = {}
        ok = True
        for i, r in zip(idb_pos, renamed):
            atom = rule.body[i]
            ok = len(atom.args) == len(r.head.args) and all(
                _unify(sub, s, t, own) for s, t in zip(atom.args, r.head.args))
            if not ok:
                break
        guards = [guard_atom(r, prog) for r in renamed]
        if not ok or any(g is None for g in guards):
            continue

        def ap(a: Atom) -> Atom:
            return Atom(a.pred, tuple(_walk(sub, t) for t in a.args))

        body = list(rule.body)
        for i, g in zip(idb_pos, guards):
            body[i] = ap(g)
        new = Rule(ap(rule.head), tuple(ap(a) for a in body))
        key = _canonical(new)
        if key in seen:
            continue
        seen.add(key)
        theta = tuple(sorted(((v, _walk(sub, v)) for v in sub), key=lambda kv: kv[0].name))
        info = tuple((i, c, tuple(ap(r.head).args)) for i, c, r in zip(idb_pos, chosen, renamed))
        out.append(GuardExpansion(rule, tuple(chosen), theta, new, info))
    return out


# ---------------------------------------------------------------- match automaton


def build_match_ata(q, q2: QueryForm, labels: Iterable[tuple], max_parts: int = 10**4,
                    max_states: int | None = 10**5) -> ATA2:
    """Two-way automaton over (rule instance, lambda-label, child index)
    labels that accepts the lambda-annotated proof trees of ``q`` on whose
    canonical instance ``q2`` derives ``hit`` under the lambda assignment.

    Each derived IDB atom is checked by a localized matcher for a guard
    expansion of one of its rules, spawned at the node where the
    replacement guard was matched."""
    from .engine import _rhs_form

    alpha = _alpha(q)
    prog, goals = _rhs_form(q2)
    labels = list(labels)
    nl = max([k for _, lam, _ in labels for k, _ in lam] + [max(_lambdas(r), default=0) for r in prog.rules])
    exps = {r: guard_expansions(r, prog) for r in prog.rules}
    parts: dict = {}
    order: list = []

    def instance(exp: GuardExpansion, v: tuple) -> _Localized:
        tag = (str(exp.rule), v)
        if tag not in parts:
            if len(parts) >= max_parts:
                raise ResourceLimit(f"more than {max_parts} localized matchers")
            parts[tag] = _Localized(alpha, exp.rule, v, labels, tag, nl, max_states, exp)
            order.append(parts[tag])
        return parts[tag]

    def psi(loc: _Localized, match: frozenset, lab: tuple):
        conj = []
        mdict = dict(match)
        lam = dict(lab[1])
        for i, defining, head in loc.exp.guards:
            if i not in mdict:
                continue
            bind = dict(zip(loc.exp.rule.body[i].args, mdict[i].args))
            v = []
            for t in head:
                u = bind.get(t, lam.get(t.index) if isinstance(t, Lam) else t)
                if u is None or isinstance(u, Var) and u not in alpha.variables:
                    return FALSE
                v.append(u)
            conj.append(f_or(*(f_atom(0, instance(e, tuple(v)).start_state) for e in exps[defining])))
        return f_and(*conj)

    hit_rules = [r for r in prog.rules if r.head.pred == "hit"]
    starts = [instance(e, ()).start_state for r in hit_rules for e in exps[r]]
    return _assemble(order, labels, alpha, starts, psi)


def annotate_answer(t: ProofTree, free: Sequence[int]) -> ProofTree:
    """Put lambda-labels ``free[j]`` on every node where the occurrence
    class of the root head's j-th argument appears."""
    from .prooftree import connectedness_classes

    cls = connectedness_classes(t)
    want = {}
    for k, x in zip(free, t.label.head.args):
        if isinstance(x, Var):
            want[k] = cls[((), x)]

    def go(node: ProofTree, addr: tuple) -> ProofTree:
        lam = tuple((k, v) for k, rep in sorted(want.items())
                    for v in node.label.variables() if cls[(addr, v)] == rep)
        kids = tuple(go(c, addr + (i,)) for i, c in enumerate(node.children, 1))
        return ProofTree(node.label, kids, lam, node.p)

    return go(t, ())

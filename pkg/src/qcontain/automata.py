"""Ranked trees, top-down NFTAs and two-way alternating tree automata."""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from typing import Any, Callable, Hashable, Iterable, Iterator, Mapping, Sequence

Label = Hashable
State = Hashable
Address = tuple


class AutomatonError(ValueError):
    pass


@dataclass(frozen=True)
class RankedAlphabet:
    ranks: Mapping[Label, int]

    def __post_init__(self):
        object.__setattr__(self, "ranks", dict(self.ranks))
        for lab, r in self.ranks.items():
            if not isinstance(r, int) or r < 0:
                raise AutomatonError(f"bad rank {r!r} for {lab!r}")

    @classmethod
    def of(cls, symbols: Iterable[tuple[Label, int]] | Mapping[Label, int]) -> "RankedAlphabet":
        items = symbols.items() if isinstance(symbols, Mapping) else symbols
        ranks: dict = {}
        for lab, r in items:
            if lab in ranks and ranks[lab] != r:
                raise AutomatonError(f"label {lab!r} declared with two ranks")
            ranks[lab] = r
        return cls(ranks)

    def __contains__(self, lab) -> bool:
        return lab in self.ranks

    def __iter__(self):
        return iter(self.ranks)

    def __len__(self):
        return len(self.ranks)

    def __eq__(self, other):
        return isinstance(other, RankedAlphabet) and self.ranks == other.ranks

    def __hash__(self):
        return hash(frozenset(self.ranks.items()))

    def rank(self, lab) -> int:
        return self.ranks[lab]

    @property
    def max_rank(self) -> int:
        return max(self.ranks.values(), default=0)

    def items(self):
        return self.ranks.items()


@dataclass(frozen=True)
class Tree:
    label: Label
    children: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "children", tuple(self.children))

    def __repr__(self):
        if not self.children:
            return f"{self.label!r}"
        return f"{self.label!r}({', '.join(map(repr, self.children))})"

    def nodes(self) -> Iterator[Address]:
        """Addresses in preorder; the root is ()."""
        stack = [((), self)]
        while stack:
            addr, t = stack.pop()
            yield addr
            for i in range(len(t.children), 0, -1):
                stack.append((addr + (i,), t.children[i - 1]))

    def subtree(self, addr: Sequence[int]) -> "Tree":
        t = self
        for i in addr:
            if not isinstance(i, int) or i < 1 or i > len(t.children):
                raise AutomatonError(f"invalid node address {tuple(addr)!r}")
            t = t.children[i - 1]
        return t

    def has_node(self, addr: Sequence[int]) -> bool:
        try:
            self.subtree(addr)
        except AutomatonError:
            return False
        return True

    def label_at(self, addr: Sequence[int]) -> Label:
        return self.subtree(addr).label

    @property
    def height(self) -> int:
        return 1 + max((c.height for c in self.children), default=0)

    @property
    def size(self) -> int:
        return 1 + sum(c.size for c in self.children)

    def labels(self) -> set:
        return {self.subtree(a).label for a in self.nodes()}

    def relabel(self, h: Callable[[Label], Label]) -> "Tree":
        return Tree(h(self.label), tuple(c.relabel(h) for c in self.children))

    def check_ranks(self, alphabet: RankedAlphabet) -> None:
        for addr in self.nodes():
            t = self.subtree(addr)
            if t.label not in alphabet:
                raise AutomatonError(f"label {t.label!r} not in alphabet")
            if alphabet.rank(t.label) != len(t.children):
                raise AutomatonError(f"node {addr!r}: rank of {t.label!r} is {alphabet.rank(t.label)}")


def leaf(label: Label) -> Tree:
    return Tree(label, ())


def all_trees(alphabet: RankedAlphabet, max_height: int) -> Iterator[Tree]:
    """Every tree over the alphabet with height at most max_height."""
    by_height: list[list[Tree]] = [[]]
    for h in range(1, max_height + 1):
        lower = [t for level in by_height for t in level]
        new = []
        for lab, r in sorted(alphabet.items(), key=lambda kv: repr(kv[0])):
            if r == 0:
                if h == 1:
                    new.append(Tree(lab))
                continue
            for kids in itertools.product(lower, repeat=r):
                if max((k.height for k in kids), default=0) == h - 1:
                    new.append(Tree(lab, kids))
        by_height.append(new)
        yield from new


def _check_alphabet(a, b) -> None:
    if a.alphabet != b.alphabet:
        raise AutomatonError("alphabet mismatch")


# ---------------------------------------------------------------- NFTA


@dataclass(frozen=True)
class NFTA:
    """Top-down nondeterministic tree automaton.

    ``delta[(q, label)]`` is a frozenset of child-state tuples; for rank-0
    labels the set ``{()}`` means the automaton may finish there.
    """

    alphabet: RankedAlphabet
    states: frozenset
    start: frozenset
    delta: Mapping[tuple, frozenset] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "states", frozenset(self.states))
        object.__setattr__(self, "start", frozenset(self.start))
        clean = {}
        for (q, lab), tuples in dict(self.delta).items():
            if lab not in self.alphabet:
                raise AutomatonError(f"transition on unknown label {lab!r}")
            r = self.alphabet.rank(lab)
            ts = frozenset(tuple(t) for t in tuples)
            for t in ts:
                if len(t) != r:
                    raise AutomatonError(f"transition tuple {t!r} does not match rank {r} of {lab!r}")
            if ts:
                clean[(q, lab)] = ts
        object.__setattr__(self, "delta", clean)
        if not self.start <= self.states:
            raise AutomatonError("start states must be states")

    def moves(self, q, lab) -> frozenset:
        return self.delta.get((q, lab), frozenset())

    @property
    def size(self) -> int:
        return len(self.states) + sum(len(v) for v in self.delta.values())

    def transitions(self) -> Iterator[tuple]:
        for (q, lab), ts in self.delta.items():
            for t in ts:
                yield q, lab, t

    def bottom_up(self, t: Tree) -> frozenset:
        """States from which a top-down run on ``t`` exists."""
        kids = [self.bottom_up(c) for c in t.children]
        by_label = self._index().get(t.label, ())
        return frozenset(q for q, tup in by_label if all(s in k for s, k in zip(tup, kids)))

    def _index(self) -> dict:
        idx = self.__dict__.get("_idx")
        if idx is None:
            idx = {}
            for q, lab, tup in self.transitions():
                idx.setdefault(lab, []).append((q, tup))
            object.__setattr__(self, "_idx", idx)
        return idx

    def trimmed(self) -> "NFTA":
        """Drop states that are unproductive or unreachable from a start state."""
        prod = _productive(self)
        reach, stack = set(), [q for q in self.start if q in prod]
        reach.update(stack)
        while stack:
            q = stack.pop()
            for (p, lab), ts in self.delta.items():
                if p != q:
                    continue
                for tup in ts:
                    if all(s in prod for s in tup):
                        for s in tup:
                            if s not in reach:
                                reach.add(s)
                                stack.append(s)
        delta = {
            (q, lab): frozenset(t for t in ts if all(s in reach for s in t))
            for (q, lab), ts in self.delta.items() if q in reach
        }
        return NFTA(self.alphabet, reach, self.start & reach, delta)


def nfta_membership(a: NFTA, t: Tree) -> bool:
    t.check_ranks(a.alphabet)
    return bool(a.bottom_up(t) & a.start)


def nfta_intersection(a: NFTA, b: NFTA) -> NFTA:
    _check_alphabet(a, b)
    states = {(p, q) for p in a.states for q in b.states}
    start = {(p, q) for p in a.start for q in b.start}
    delta: dict = {}
    bidx: dict = {}
    for q, lab, tup in b.transitions():
        bidx.setdefault((q, lab), []).append(tup)
    for p, lab, tup in a.transitions():
        for q in b.states:
            for tup2 in bidx.get((q, lab), ()):
                delta.setdefault(((p, q), lab), set()).add(tuple(zip(tup, tup2)))
    return NFTA(a.alphabet, states, start, delta)


def nfta_project(a: NFTA, h: Mapping[Label, Label] | Callable[[Label], Label]) -> NFTA:
    """Image of the language under a rank-preserving relabelling."""
    f = h if callable(h) else h.__getitem__
    ranks: dict = {}
    for lab, r in a.alphabet.items():
        img = f(lab)
        if ranks.setdefault(img, r) != r:
            raise AutomatonError(f"morphism changes the rank of {lab!r}")
    delta: dict = {}
    for (q, lab), ts in a.delta.items():
        delta.setdefault((q, f(lab)), set()).update(ts)
    return NFTA(RankedAlphabet(ranks), a.states, a.start, delta)


def _explore_deterministic(alphabet: RankedAlphabet, step: Callable, limit: int | None = None):
    """Reachable states of a deterministic bottom-up automaton.

    Returns (states, table) where table[(label, kids)] = state.
    """
    table: dict = {}
    states: list = []
    seen: set = set()
    labels = sorted(alphabet.items(), key=lambda kv: repr(kv[0]))
    frontier = True
    while frontier:
        frontier = False
        current = list(states)
        for lab, r in labels:
            for kids in itertools.product(current, repeat=r) if r else [()]:
                key = (lab, kids)
                if key in table:
                    continue
                s = step(lab, kids)
                table[key] = s
                if s not in seen:
                    seen.add(s)
                    states.append(s)
                    frontier = True
                    if limit is not None and len(states) > limit:
                        raise AutomatonError(f"more than {limit} states")
    return states, table


def _from_deterministic(alphabet, states, table, accepting: Callable[[Any], bool]) -> NFTA:
    delta: dict = {}
    for (lab, kids), s in table.items():
        delta.setdefault((s, lab), set()).add(kids)
    return NFTA(alphabet, states, [s for s in states if accepting(s)], delta)


def determinize(a: NFTA) -> tuple[list, dict]:
    idx = a._index()

    def step(lab, kids):
        return frozenset(q for q, tup in idx.get(lab, ()) if all(s in k for s, k in zip(tup, kids)))

    return _explore_deterministic(a.alphabet, step)


def nfta_complement(a: NFTA) -> NFTA:
    """Subset construction bottom-up, then flip the accepting subsets."""
    states, table = determinize(a)
    return _from_deterministic(a.alphabet, states, table, lambda s: not (s & a.start))


@dataclass(frozen=True)
class Empty:
    def __bool__(self):
        return False


@dataclass(frozen=True)
class Witness:
    tree: Tree


def _productive(a: NFTA, start_filter=None) -> dict:
    """Map each productive state to a witness tree of minimal height."""
    wit: dict = {}
    trans = sorted(a.transitions(), key=repr)
    while True:
        new = {}
        for q, lab, tup in trans:
            if q in wit or q in new:
                continue
            if all(s in wit for s in tup):
                new[q] = Tree(lab, tuple(wit[s] for s in tup))
        if not new:
            return wit
        wit.update(new)
        if start_filter is not None and any(q in start_filter for q in new):
            return wit


def nfta_emptiness(a: NFTA) -> Empty | Witness:
    wit = _productive(a, a.start)
    hits = [wit[q] for q in sorted(a.start, key=repr) if q in wit]
    if not hits:
        return Empty()
    return Witness(min(hits, key=lambda t: (t.height, t.size)))


@dataclass(frozen=True)
class Contained:
    def __bool__(self):
        return True


@dataclass(frozen=True)
class Counterexample:
    tree: Tree

    def __bool__(self):
        return False


def nfta_containment(a: NFTA, b: NFTA) -> Contained | Counterexample:
    _check_alphabet(a, b)
    res = nfta_emptiness(nfta_intersection(a, nfta_complement(b)))
    if isinstance(res, Empty):
        return Contained()
    return Counterexample(res.tree)


# ---------------------------------------------------------------- ATA2

TRUE = ("true",)
FALSE = ("false",)


def f_atom(direction: int, state) -> tuple:
    return ("atom", direction, state)


def f_and(*parts) -> tuple:
    parts = [p for p in parts if p != TRUE]
    if any(p == FALSE for p in parts):
        return FALSE
    if not parts:
        return TRUE
    return parts[0] if len(parts) == 1 else ("and", tuple(parts))


def f_or(*parts) -> tuple:
    parts = [p for p in parts if p != FALSE]
    if any(p == TRUE for p in parts):
        return TRUE
    if not parts:
        return FALSE
    return parts[0] if len(parts) == 1 else ("or", tuple(parts))


def f_eval(phi, holds: Callable[[int, Any], bool]) -> bool:
    kind = phi[0]
    if kind == "atom":
        return holds(phi[1], phi[2])
    if kind == "and":
        return all(f_eval(p, holds) for p in phi[1])
    if kind == "or":
        return any(f_eval(p, holds) for p in phi[1])
    return kind == "true"


def f_atoms(phi) -> Iterator[tuple]:
    if phi[0] == "atom":
        yield phi[1], phi[2]
    elif phi[0] in ("and", "or"):
        for p in phi[1]:
            yield from f_atoms(p)


@dataclass(frozen=True)
class ATA2:
    """Two-way alternating tree automaton with finite-run acceptance.

    ``delta[(q, label)]`` is a positive formula built with ``f_atom``,
    ``f_and`` and ``f_or``; missing entries are false.
    """

    alphabet: RankedAlphabet
    states: frozenset
    start: frozenset
    accepting: frozenset
    delta: Mapping[tuple, tuple] = field(default_factory=dict)

    def __post_init__(self):
        for name in ("states", "start", "accepting"):
            object.__setattr__(self, name, frozenset(getattr(self, name)))
        object.__setattr__(self, "delta", dict(self.delta))
        for (q, lab), phi in self.delta.items():
            if q not in self.states or lab not in self.alphabet:
                raise AutomatonError(f"transition on unknown state/label {(q, lab)!r}")
            r = self.alphabet.rank(lab)
            for d, s in f_atoms(phi):
                if not (-1 <= d <= r):
                    raise AutomatonError(f"direction {d} invalid for {lab!r} of rank {r}")
                if s not in self.states:
                    raise AutomatonError(f"unknown state {s!r} in formula")

    def formula(self, q, lab):
        return self.delta.get((q, lab), FALSE)

    @property
    def size(self) -> int:
        return len(self.states) + sum(sum(1 for _ in f_atoms(p)) + 1 for p in self.delta.values())


OUT = "out"


def ata2_winning(a: ATA2, t: Tree) -> dict:
    """Least fixpoint of the acceptance game: address -> set of winning states."""
    t.check_ranks(a.alphabet)
    addrs = list(t.nodes())
    sub = {ad: t.subtree(ad) for ad in addrs}
    win: dict = {ad: set() for ad in addrs}

    def holds_at(ad):
        node = sub[ad]

        def holds(d, s):
            if d == 0:
                return s in win[ad]
            if d == -1:
                return s in win[ad[:-1]] if ad else s in a.accepting
            if d <= len(node.children):
                return s in win[ad + (d,)]
            return s in a.accepting

        return holds

    changed = True
    while changed:
        changed = False
        for ad in addrs:
            node, holds = sub[ad], holds_at(ad)
            for q in a.states:
                if q not in win[ad] and f_eval(a.formula(q, node.label), holds):
                    win[ad].add(q)
                    changed = True
    return win


def ata2_membership(a: ATA2, t: Tree, start_node: Sequence[int] = (), start_states=None) -> bool:
    start_node = tuple(start_node)
    if not t.has_node(start_node):
        raise AutomatonError(f"invalid node address {start_node!r}")
    starts = a.start if start_states is None else frozenset(start_states)
    return bool(ata2_winning(a, t)[start_node] & starts)


def ata2_run(a: ATA2, t: Tree, start_node: Sequence[int] = (), start_states=None):
    """An explicit accepting run as nested (state, address, children) tuples, or None.

    Out-of-tree positions are reported with address None.  Each position is
    expanded using only positions that entered the fixpoint earlier, so the
    materialized run is finite.
    """
    t.check_ranks(a.alphabet)
    rank: dict = {}
    addrs = list(t.nodes())
    sub = {ad: t.subtree(ad) for ad in addrs}
    rnd = 0
    changed = True

    def target(ad, d):
        if d == 0:
            return ad
        if d == -1:
            return ad[:-1] if ad else None
        return ad + (d,) if d <= len(sub[ad].children) else None

    def won_before(ad, s, limit):
        if ad is None:
            return s in a.accepting
        r = rank.get((ad, s))
        return r is not None and r < limit

    while changed:
        changed = False
        rnd += 1
        for ad in addrs:
            for q in sorted(a.states, key=repr):
                if (ad, q) in rank:
                    continue
                phi = a.formula(q, sub[ad].label)
                if f_eval(phi, lambda d, s: won_before(target(ad, d), s, rnd)):
                    rank[(ad, q)] = rnd
                    changed = True

    def build(ad, q):
        if ad is None:
            return (q, None, ())
        lim = rank[(ad, q)]
        phi = a.formula(q, sub[ad].label)
        chosen = _choose(phi, lambda d, s: won_before(target(ad, d), s, lim))
        return (q, ad, tuple((d, build(target(ad, d), s)) for d, s in chosen))

    start_node = tuple(start_node)
    starts = a.start if start_states is None else frozenset(start_states)
    for q in sorted(starts, key=repr):
        if (start_node, q) in rank:
            return build(start_node, q)
    return None


def _choose(phi, holds) -> list:
    """A minimal list of true atoms satisfying a positive formula."""
    kind = phi[0]
    if kind == "atom":
        return [(phi[1], phi[2])] if holds(phi[1], phi[2]) else None
    if kind == "true":
        return []
    if kind == "false":
        return None
    if kind == "or":
        for p in phi[1]:
            c = _choose(p, holds)
            if c is not None:
                return c
        return None
    out = []
    for p in phi[1]:
        c = _choose(p, holds)
        if c is None:
            return None
        out.extend(x for x in c if x not in out)
    return out


def _minimal_sets(sets: Iterable[frozenset]) -> frozenset:
    sets = sorted(set(sets), key=len)
    keep: list = []
    for s in sets:
        if not any(k <= s for k in keep):
            keep.append(s)
    return frozenset(keep)


def _subsets(xs: Sequence) -> list[frozenset]:
    return [frozenset(c) for r in range(len(xs) + 1) for c in itertools.combinations(xs, r)]


class _Summarizer:
    """Bottom-up summaries of two-way behaviour.

    The summary of a subtree maps each state q to the antichain of minimal
    sets U of states such that q wins at the subtree's root whenever exactly
    the states in U win at the parent position.
    """

    def __init__(self, a: ATA2):
        self.a = a
        self.order = sorted(a.states, key=repr)
        self.ups = _subsets(self.order)

    def wins(self, lab, kids, up: frozenset) -> frozenset:
        a = self.a
        win: set = set()

        def holds(d, s):
            if d == 0:
                return s in win
            if d == -1:
                return s in up
            if d <= len(kids):
                return any(m <= win for m in kids[d - 1][s])
            return s in a.accepting

        changed = True
        while changed:
            changed = False
            for q in self.order:
                if q not in win and f_eval(a.formula(q, lab), holds):
                    win.add(q)
                    changed = True
        return frozenset(win)

    def step(self, lab, kids):
        per_state: dict = {q: [] for q in self.order}
        for up in self.ups:
            for q in self.wins(lab, kids, up):
                per_state[q].append(up)
        return tuple(sorted(((q, _minimal_sets(v)) for q, v in per_state.items()), key=lambda kv: repr(kv[0])))

    def accepted(self, summary) -> bool:
        acc = self.a.accepting
        return any(q in self.a.start and any(m <= acc for m in ms) for q, ms in summary)


def _summary_nfta(a: ATA2, complement: bool, limit: int | None) -> NFTA:
    sm = _Summarizer(a)

    def step(lab, kids):
        return sm.step(lab, tuple(dict(k) for k in kids))

    # summaries are stored as tuples; kids arrive as tuples and are turned into dicts
    states, table = _explore_deterministic(a.alphabet, step, limit)
    names = {s: i for i, s in enumerate(states)}
    table = {(lab, tuple(names[k] for k in kids)): names[s] for (lab, kids), s in table.items()}
    acc = {names[s] for s in states if sm.accepted(s) != complement}
    return _from_deterministic(a.alphabet, list(names.values()), table, lambda s: s in acc)


def ata2_to_nfta(a: ATA2, limit: int | None = None) -> NFTA:
    return _summary_nfta(a, False, limit)


def ata2_complement_to_nfta(a: ATA2, limit: int | None = None) -> NFTA:
    return _summary_nfta(a, True, limit)


# ---------------------------------------------------------------- JSON


def _formula_json(phi, name) -> Any:
    kind = phi[0]
    if kind == "atom":
        return {"atom": [phi[1], name(phi[2])]}
    if kind in ("and", "or"):
        return {kind: [_formula_json(p, name) for p in phi[1]]}
    return {kind: []} if kind == "true" else {"or": []}


def _formula_load(obj) -> tuple:
    if "atom" in obj:
        d, s = obj["atom"]
        return f_atom(int(d), s)
    if "and" in obj:
        return ("and", tuple(_formula_load(p) for p in obj["and"])) if obj["and"] else TRUE
    if "or" in obj:
        return ("or", tuple(_formula_load(p) for p in obj["or"])) if obj["or"] else FALSE
    if "true" in obj:
        return TRUE
    raise AutomatonError(f"bad formula {obj!r}")


def _namer(states) -> Callable[[Any], str]:
    names = {q: q if isinstance(q, str) else repr(q) for q in states}
    if len(set(names.values())) != len(names):
        names = {q: f"q{i}" for i, q in enumerate(sorted(states, key=repr))}
    return names.__getitem__


def automaton_to_json(a: NFTA | ATA2) -> dict:
    name = _namer(a.states)
    lab = _namer(list(a.alphabet))
    out = {
        "kind": "nfta" if isinstance(a, NFTA) else "ata2",
        "alphabet": [[lab(l), r] for l, r in sorted(a.alphabet.items(), key=lambda kv: repr(kv[0]))],
        "states": sorted(name(q) for q in a.states),
        "start": sorted(name(q) for q in a.start),
    }
    if isinstance(a, NFTA):
        out["transitions"] = sorted(
            ([name(q), lab(l), [name(s) for s in tup]] for q, l, tup in a.transitions()),
            key=repr,
        )
    else:
        out["accepting"] = sorted(name(q) for q in a.accepting)
        out["transitions"] = sorted(
            ([name(q), lab(l), _formula_json(phi, name)] for (q, l), phi in a.delta.items()),
            key=repr,
        )
    return out


def automaton_from_json(obj: dict | str) -> NFTA | ATA2:
    if isinstance(obj, str):
        obj = json.loads(obj)
    alpha = RankedAlphabet.of((l, int(r)) for l, r in obj["alphabet"])
    if obj.get("kind", "nfta") == "nfta":
        delta: dict = {}
        for q, l, tup in obj["transitions"]:
            delta.setdefault((q, l), set()).add(tuple(tup))
        return NFTA(alpha, obj["states"], obj["start"], delta)
    delta = {(q, l): _formula_load(phi) for q, l, phi in obj["transitions"]}
    return ATA2(alpha, obj["states"], obj["start"], obj["accepting"], delta)


def dumps(a: NFTA | ATA2) -> str:
    return json.dumps(automaton_to_json(a), indent=2)

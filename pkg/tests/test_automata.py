import json
import random

import pytest
from hypothesis import given, settings, strategies as st

from helpers import ALPH, rand_ata, rand_nfta, rand_tree
from qcontain.automata import (
    ATA2, FALSE, NFTA, TRUE, AutomatonError, Contained, Counterexample, Empty, RankedAlphabet, Tree, Witness,
    all_trees, ata2_complement_to_nfta, ata2_membership, ata2_run, ata2_to_nfta, automaton_from_json,
    automaton_to_json, dumps, f_and, f_atom, f_eval, f_or, leaf, nfta_complement, nfta_containment,
    nfta_emptiness, nfta_intersection, nfta_membership, nfta_project,
)

AB = RankedAlphabet({"a": 0, "b": 0})


def only_a() -> NFTA:
    return NFTA(AB, {"q"}, {"q"}, {("q", "a"): {()}})


def only_b() -> NFTA:
    return NFTA(AB, {"q"}, {"q"}, {("q", "b"): {()}})


def trees(height=3):
    return list(all_trees(ALPH, height))


# trees

def test_tree_addresses_and_ranks():
    t = Tree("f", (leaf("a"), Tree("b", (leaf("a"),))))
    assert list(t.nodes()) == [(), (1,), (2,), (2, 1)]
    assert t.label_at((2, 1)) == "a" and t.height == 3 and t.size == 4
    t.check_ranks(ALPH)
    with pytest.raises(AutomatonError):
        Tree("f", (leaf("a"),)).check_ranks(ALPH)


def test_all_trees_counts():
    assert [sum(1 for t in all_trees(ALPH, h)) for h in (1, 2, 3)] == [1, 3, 13]


# NFTA basics

def test_membership_single_leaf():
    assert nfta_membership(only_a(), leaf("a"))
    assert not nfta_membership(only_a(), leaf("b"))


def test_bad_transition_rank():
    with pytest.raises(AutomatonError):
        NFTA(ALPH, {"q"}, {"q"}, {("q", "f"): {("q",)}})


def test_alphabet_mismatch():
    with pytest.raises(AutomatonError):
        nfta_intersection(only_a(), rand_nfta(random.Random(0)))


def test_intersection_with_self():
    rng = random.Random(1)
    for _ in range(20):
        a = rand_nfta(rng)
        aa = nfta_intersection(a, a)
        assert len(aa.states) <= len(a.states) ** 2
        for t in trees():
            assert nfta_membership(aa, t) == nfta_membership(a, t)


def test_projection_identity_and_merge():
    rng = random.Random(2)
    a = rand_nfta(rng)
    p = nfta_project(a, lambda x: x)
    assert all(nfta_membership(p, t) == nfta_membership(a, t) for t in trees())
    ann = RankedAlphabet({("a", "x"): 0, ("a", "y"): 0})
    b = NFTA(ann, {"q"}, {"q"}, {("q", ("a", "x")): {()}, ("q", ("a", "y")): {()}})
    assert nfta_membership(nfta_project(b, lambda lab: lab[0]), leaf("a"))


def test_projection_rank_change_rejected():
    with pytest.raises(AutomatonError):
        nfta_project(rand_nfta(random.Random(3)), lambda lab: "a")


def test_complement_of_empty_accepts_everything():
    empty = NFTA(ALPH, {"q"}, {"q"}, {})
    c = nfta_complement(empty)
    rng = random.Random(4)
    assert all(nfta_membership(c, rand_tree(rng, 3)) for _ in range(20))


def test_emptiness_examples():
    no_leaves = NFTA(ALPH, {"q"}, {"q"}, {("q", "b"): {("q",)}, ("q", "f"): {("q", "q")}})
    assert isinstance(nfta_emptiness(no_leaves), Empty)
    w = nfta_emptiness(only_a())
    assert isinstance(w, Witness) and w.tree == leaf("a")


def test_containment_examples():
    assert isinstance(nfta_containment(only_a(), only_a()), Contained)
    c = nfta_containment(only_a(), only_b())
    assert isinstance(c, Counterexample) and c.tree == leaf("a")


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10**9))
def test_nfta_boolean_laws(seed):
    rng = random.Random(seed)
    a, b = rand_nfta(rng), rand_nfta(rng)
    ab, ba = nfta_intersection(a, b), nfta_intersection(b, a)
    cc = nfta_complement(nfta_complement(a))
    for t in trees():
        ma, mb = nfta_membership(a, t), nfta_membership(b, t)
        assert nfta_membership(ab, t) == nfta_membership(ba, t) == (ma and mb)
        assert nfta_membership(cc, t) == ma
    res = nfta_containment(a, b)
    if isinstance(res, Counterexample):
        assert nfta_membership(a, res.tree) and not nfta_membership(b, res.tree)
    else:
        assert all(nfta_membership(b, t) for t in trees() if nfta_membership(a, t))
    assert isinstance(nfta_containment(a, a), Contained)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10**9))
def test_emptiness_agrees_with_enumeration(seed):
    b = rand_nfta(random.Random(seed))
    found = any(nfta_membership(b, t) for t in all_trees(ALPH, len(b.states)))
    e = nfta_emptiness(b)
    assert isinstance(e, Witness) == found
    if found:
        assert nfta_membership(b, e.tree)


# formulas

def test_formula_eval():
    phi = f_or(f_and(f_atom(1, "p"), f_atom(0, "q")), f_atom(-1, "r"))
    assert f_eval(phi, lambda d, s: (d, s) in {(1, "p"), (0, "q")})
    assert not f_eval(phi, lambda d, s: (d, s) == (1, "p"))
    assert f_eval(TRUE, lambda d, s: False) and not f_eval(FALSE, lambda d, s: True)


def test_bad_direction_rejected():
    with pytest.raises(AutomatonError):
        ATA2(ALPH, {"s"}, {"s"}, set(), {("s", "a"): f_atom(1, "s")})


# ATA2

def test_accept_everything_at_any_node():
    a = ATA2(ALPH, {"s"}, {"s"}, {"s"}, {("s", lab): TRUE for lab, _ in ALPH.items()})
    t = Tree("f", (leaf("a"), Tree("b", (leaf("a"),))))
    assert all(ata2_membership(a, t, ad) for ad in t.nodes())
    assert isinstance(nfta_emptiness(ata2_complement_to_nfta(a)), Empty)


def test_invalid_start_node():
    a = rand_ata(random.Random(5))
    with pytest.raises(AutomatonError):
        ata2_membership(a, leaf("a"), (1,))


def test_one_way_ata_matches_embedding():
    # "every leaf is labelled a", written as a one-way alternating automaton
    delta = {("s", "a"): TRUE, ("s", "b"): f_atom(1, "s"), ("s", "f"): f_and(f_atom(1, "s"), f_atom(2, "s"))}
    a = ATA2(ALPH, {"s"}, {"s"}, set(), delta)
    n = ata2_to_nfta(a)
    nfta = NFTA(ALPH, {"s"}, {"s"}, {("s", "a"): {()}, ("s", "b"): {("s",)}, ("s", "f"): {("s", "s")}})
    for t in trees(3):
        assert nfta_membership(n, t) == nfta_membership(nfta, t) == ata2_membership(a, t)


def test_unsatisfiable_start_is_empty():
    a = ATA2(ALPH, {"s"}, {"s"}, set(), {("s", "a"): f_atom(-1, "s"), ("s", "b"): f_atom(1, "s")})
    assert isinstance(nfta_emptiness(ata2_to_nfta(a)), Empty)


def test_two_way_walk():
    # from the root, go down to some leaf labelled a and back up to the root
    delta = {
        ("down", "f"): f_or(f_atom(1, "down"), f_atom(2, "down")),
        ("down", "b"): f_atom(1, "down"),
        ("down", "a"): f_atom(0, "up"),
        ("up", "a"): f_atom(-1, "up"),
        ("up", "b"): f_atom(-1, "up"),
        ("up", "f"): f_atom(-1, "up"),
    }
    a = ATA2(ALPH, {"down", "up"}, {"down"}, {"up"}, delta)
    assert ata2_membership(a, Tree("f", (leaf("a"), leaf("a"))))
    n = ata2_to_nfta(a)
    for t in trees(3):
        assert nfta_membership(n, t) == ata2_membership(a, t)


def _check_run(a, t, run) -> bool:
    q, ad, kids = run
    if ad is None:
        return q in a.accepting
    chosen = {(d, k[0]) for d, k in kids}
    if not f_eval(a.formula(q, t.label_at(ad)), lambda d, s: (d, s) in chosen):
        return False
    for d, k in kids:
        if d == 0:
            want = ad
        elif d == -1:
            want = ad[:-1] if ad else None
        else:
            want = ad + (d,) if d <= len(t.subtree(ad).children) else None
        if k[1] != want or not _check_run(a, t, k):
            return False
    return True


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10**9))
def test_ata2_conversions_partition_trees(seed):
    rng = random.Random(seed)
    a = rand_ata(rng)
    pos, neg = ata2_to_nfta(a), ata2_complement_to_nfta(a)
    assert isinstance(nfta_emptiness(nfta_intersection(pos, neg)), Empty)
    for _ in range(30):
        t = rand_tree(rng, 3)
        m = ata2_membership(a, t)
        assert nfta_membership(pos, t) == m
        assert nfta_membership(neg, t) != m
        run = ata2_run(a, t)
        assert (run is not None) == m
        if run is not None:
            assert run[1] == () and run[0] in a.start and _check_run(a, t, run)


# serialization

def test_json_round_trip():
    rng = random.Random(8)
    a, b = rand_ata(rng), rand_nfta(rng)
    for aut in (a, b):
        back = automaton_from_json(json.loads(dumps(aut)))
        for t in trees(3):
            if isinstance(aut, ATA2):
                assert ata2_membership(back, t) == ata2_membership(aut, t)
            else:
                assert nfta_membership(back, t) == nfta_membership(aut, t)
    doc = automaton_to_json(a)
    assert all(isinstance(s, str) for s in doc["states"])

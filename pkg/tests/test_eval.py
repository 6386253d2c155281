import itertools
import random

import pytest
from hypothesis import given, settings, strategies as st

from helpers import (
    EX1, LADDER, LADDER_MQ, TC, brute_answers, brute_model, ex2_instance, q, rand_datalog, rand_fcq,
    rand_instance, rand_nested, rand_ucq,
)
from qcontain.eval import check_answer, entails_hit, eval_query, fixpoint, naive_fixpoint
from qcontain.model import HIT, DatabaseInstance, FCQ, QueryError
from qcontain.parser import parse_instance
from qcontain.rewrites import fcq_to_datalog

PATH = parse_instance("p(1,2). p(2,3).")


def test_example1_fixpoint():
    m = fixpoint(q(EX1).program, PATH, ("1", "3"))
    assert m["U"] == {("2",), ("3",)}
    assert m[HIT] == {()}


def test_example1_empty_instance_derives_nothing():
    m = fixpoint(q(EX1).program, DatabaseInstance(frozenset()), ("1", "1"))
    assert not any(m.values())


def test_ladder_fixpoint_on_seven_facts():
    m = fixpoint(q(LADDER).program, ex2_instance(), ("a", "b", "c", "d"))
    assert m["Uq"] == {("a", "b"), ("c", "e"), ("e1", "d")}
    assert not m.get(HIT)


def test_fixpoint_requires_lambda_binding():
    with pytest.raises(QueryError):
        fixpoint(q(EX1).program, PATH)


def test_example1_answers():
    assert set(eval_query(q(EX1), PATH)) == {("1", "2"), ("2", "3"), ("1", "3")}


def test_mq_answers_ladder_tuple():
    assert ("a", "b", "c", "d") in eval_query(q(LADDER_MQ), ex2_instance())


def test_empty_instance_has_no_answers():
    empty = DatabaseInstance(frozenset())
    for text in (EX1, TC, LADDER, LADDER_MQ):
        assert len(eval_query(q(text), empty)) == 0


def test_check_answer_examples():
    ex1 = q(EX1)
    assert check_answer(ex1, PATH, ("1", "3"))
    assert not check_answer(ex1, PATH, ("1", "1"))
    assert not check_answer(q(LADDER), ex2_instance(), ("a", "b", "c", "d"))


def test_check_answer_arity_mismatch():
    with pytest.raises(QueryError):
        check_answer(q(EX1), PATH, ("1",))


def test_tc_datalog_answers():
    assert set(eval_query(q(TC), PATH)) == {("1", "2"), ("2", "3"), ("1", "3")}


def _random_query(rng):
    k = rng.randrange(4)
    if k == 0:
        return rand_datalog(rng, arity=rng.choice([1, 2]), n_rules=rng.randint(1, 4))
    if k == 1:
        return rand_ucq(rng, arity=rng.choice([1, 2]))
    if k == 2:
        return rand_fcq(rng, arity=rng.choice([1, 2]), n_rules=rng.randint(2, 4), guarded=rng.random() < 0.5,
                        hidden=rng.randint(0, 1))
    return rand_nested(rng)


@settings(max_examples=150, deadline=None)
@given(st.integers(0, 10**9))
def test_eval_matches_brute_force(seed):
    rng = random.Random(seed)
    qq = _random_query(rng)
    inst = rand_instance(rng, n_dom=rng.randint(1, 4), n_facts=rng.randint(0, 7))
    got = set(eval_query(qq, inst))
    assert got == brute_answers(qq, inst)
    for t in itertools.islice(itertools.product(sorted(inst.domain), repeat=qq.arity), 20):
        assert check_answer(qq, inst, t) == (t in got)


@settings(max_examples=80, deadline=None)
@given(st.integers(0, 10**9))
def test_semi_naive_matches_naive(seed):
    rng = random.Random(seed)
    dq = rand_datalog(rng, arity=2, n_rules=4)
    inst = rand_instance(rng, n_dom=4, n_facts=8)
    a = {p: ts for p, ts in fixpoint(dq.program, inst).items() if ts}
    b = {p: ts for p, ts in naive_fixpoint(dq.program, inst).items() if ts}
    assert a == b


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 10**9))
def test_monotone_under_extension(seed):
    rng = random.Random(seed)
    qq = _random_query(rng)
    small = rand_instance(rng, n_dom=4, n_facts=5)
    big = small.union(rand_instance(rng, n_dom=5, n_facts=4))
    a, b = set(eval_query(qq, small)), set(eval_query(qq, big))
    assert a <= b


def _closed(rules, facts, domain, lam):
    return brute_model(rules, facts, domain, lam) == set(facts)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10**9))
def test_universal_semantics_matches_least_model(seed):
    """hit holds in every rule-closed extension iff the least model has it."""
    rng = random.Random(seed)
    f = rand_fcq(rng, arity=1, n_rules=3, guarded=rng.random() < 0.5, monadic=True)
    inst = rand_instance(rng, n_dom=rng.randint(1, 3), n_facts=4)
    domain = sorted(inst.domain)
    idb_facts = [(p, t) for p, ar in f.program.idb for t in itertools.product(domain, repeat=ar)]
    for lam in itertools.product(domain, repeat=f.m):
        every = True
        for bits in itertools.product([0, 1], repeat=len(idb_facts) + 1):
            ext = set(inst.facts) | {fa for fa, b in zip(idb_facts, bits) if b}
            if bits[-1]:
                ext.add((HIT, ()))
            if _closed(f.program.rules, ext, domain, lam) and (HIT, ()) not in ext:
                every = False
                break
        assert every == entails_hit(f.program, inst, list(lam))


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10**9))
def test_fcq_to_datalog_preserves_answers(seed):
    rng = random.Random(seed)
    f = rand_fcq(rng, arity=2, n_rules=3, guarded=rng.random() < 0.5, hidden=rng.randint(0, 1))
    inst = rand_instance(rng, n_dom=4, n_facts=7)
    assert set(eval_query(f, inst)) == set(eval_query(fcq_to_datalog(f), inst))


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10**9))
def test_nested_equals_materialized_inner(seed):
    rng = random.Random(seed)
    nq = rand_nested(rng)
    inst = rand_instance(rng, n_dom=4, n_facts=7)
    name, sub = nq.program.subqueries[0]
    inner = set(eval_query(sub, inst))
    flat_prog = nq.program.replace(subqueries=(), edb=tuple(nq.program.edb) + ((name, sub.arity),))
    flat = FCQ(flat_prog, nq.m, nq.free)
    ext = inst.union(DatabaseInstance(frozenset((name, t) for t in inner)))
    # the added relation can only mention domain elements, so the domain is unchanged
    assert ext.domain <= inst.domain
    assert set(eval_query(nq, inst)) == set(eval_query(flat, ext))

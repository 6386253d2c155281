import random

import pytest
from hypothesis import given, settings, strategies as st

from helpers import EX1, LADDER, LADDER_MQ, TC, q, rand_fcq, rand_nested, rand_query_ast
from qcontain.model import (
    FCQ, HIT, Atom, Lam, Program, QueryError, Rule, Var, check, classify, guard_atom, is_frontier_guarded_rule,
    is_recursive, nesting_depth, validate,
)
from qcontain.rewrites import guard_monadic, normalize_nested

X, Y, Z = Var("X"), Var("Y"), Var("Z")


def test_classify_transitive_closure_fcq():
    f = classify(q(EX1))
    assert (f.monadic, f.linear, f.frontier_guarded, f.nesting_depth) == (True, True, True, 0)
    assert f.recursive


def test_classify_ladder():
    f = classify(q(LADDER))
    assert (f.monadic, f.linear, f.frontier_guarded) == (False, True, True)


def test_classify_ladder_mq_is_monadic_not_linear():
    f = classify(q(LADDER_MQ))
    assert f.monadic and not f.linear


def test_two_idb_atoms_not_linear():
    prog = Program.make(edb={"p": 2}, idb={"U": 1, "V": 1, "W": 1}, rules=[
        Rule(Atom("U", (X,)), (Atom("p", (X, Y)),)),
        Rule(Atom("V", (X,)), (Atom("p", (Y, X)),)),
        Rule(Atom("W", (X,)), (Atom("U", (X,)), Atom("V", (Y,)))),
        Rule(Atom(HIT), (Atom("W", (Lam(1),)),)),
    ])
    assert not classify(FCQ(prog, 1, (1,))).linear


def test_transitive_closure_not_frontier_guarded():
    tc = q(TC)
    f = classify(tc)
    assert not f.frontier_guarded and not f.monadic and f.linear
    rec = [r for r in tc.program.rules if len(r.body) == 2][0]
    assert guard_atom(rec, tc.program) is None


def test_variable_free_head_is_vacuously_guarded():
    prog = q(EX1).program
    hit_rule = [r for r in prog.rules if r.head.pred == HIT][0]
    assert is_frontier_guarded_rule(hit_rule, prog)


def test_nesting_depth_counts_subqueries():
    nq = rand_nested(random.Random(1))
    assert nesting_depth(nq) == 1 and classify(nq).nesting_depth == 1


def test_is_recursive():
    assert is_recursive(q(TC).program)
    assert not is_recursive(q("edb p/2. query(X,Y) :- p(X,Y).").program)


def test_validate_clean():
    assert validate(q(EX1)) == []


def test_validate_undeclared_predicate():
    prog = Program.make(edb={"p": 2}, idb={"U": 1}, rules=[
        Rule(Atom("U", (X,)), (Atom("r", (X, Y)),)),
        Rule(Atom(HIT), (Atom("U", (Lam(1),)),)),
    ])
    diags = validate(FCQ(prog, 1, (1,)))
    assert [d.code for d in diags] == ["undeclared predicate"]


def test_validate_lambda_out_of_range():
    prog = Program.make(edb={"p": 2}, rules=[Rule(Atom(HIT), (Atom("p", (Lam(1), Lam(3))),))])
    diags = validate(FCQ(prog, 2, (1, 2)))
    assert [d.code for d in diags] == ["λ index out of range"]


def test_check_raises_with_diagnostics():
    prog = Program.make(edb={"p": 2}, rules=[Rule(Atom(HIT), (Atom("p", (Lam(1), Lam(3))),))])
    with pytest.raises(QueryError) as e:
        check(FCQ(prog, 2, (1, 2)))
    assert e.value.diagnostics


def test_lambda_in_guard_is_info_only():
    text = "U(X) :- p(@1,X). hit :- U(@2). fcq arity 2 free 1,2."
    qq = q(text)
    assert validate(qq) == []
    info = validate(qq, include_info=True)
    assert [d.severity for d in info] == ["info"]


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10**6))
def test_classify_deterministic(seed):
    ast = rand_query_ast(random.Random(seed))
    assert classify(ast) == classify(ast)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10**6))
def test_guard_monadic_yields_frontier_guarded(seed):
    f = rand_fcq(random.Random(seed), arity=1, n_rules=3, guarded=False, monadic=True)
    assert classify(f).monadic
    assert classify(guard_monadic(f)).frontier_guarded


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10**6))
def test_normalize_preserves_nesting_depth(seed):
    nq = rand_nested(random.Random(seed))
    assert nesting_depth(normalize_nested(nq)) == nesting_depth(nq)

"""Text syntax for queries and instances, plus serialization back to text/JSON.

Query files::

    edb p/2, q/2.          % optional; inferred from use when absent
    idb U/1.
    U(Y) :- p(@1,Y).
    U(Z) :- U(Y), p(Y,Z).
    hit :- U(@2).
    fcq arity 2 free 1,2.

Variables start with an uppercase letter or underscore, constants with a
lowercase letter or digit (or are double-quoted), ``@k`` is the special
constant lambda_k.  ``query(X,Y) :- body.`` declares a goal CQ instead of
an ``fcq`` directive.  Subqueries are blocks::

    subquery Reach/2 { R(Y) :- e(@1,Y). R(Z) :- R(Y), e(Y,Z). hit :- R(@2). fcq arity 2 free 1,2. }
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from typing import Any

from .model import (
    CQ, HIT, Atom, Const, DatabaseInstance, DatalogQuery, Diagnostic, FCQ, Lam, Program,
    QueryError, QueryForm, Rule, UCQ, Var, validate,
)


class ParseError(QueryError):
    def __init__(self, message: str, line: int = 0, col: int = 0):
        loc = f"{line}:{col}: " if line else ""
        super().__init__(loc + message, [Diagnostic("syntax error", message, f"{line}:{col}")])
        self.line, self.col = line, col


_TOKEN = re.compile(
    r"""
    (?P<ws>\s+|%[^\n]*)
  | (?P<arrow>:-)
  | (?P<lam>@\d+)
  | (?P<str>"[^"\n]*")
  | (?P<ident>[A-Za-z_][A-Za-z0-9_]*|\d+)
  | (?P<punct>[(),./{}])
    """,
    re.VERBOSE,
)


@dataclass
class Tok:
    kind: str
    text: str
    line: int
    col: int


def tokenize(text: str) -> list[Tok]:
    toks: list[Tok] = []
    pos, line, lstart = 0, 1, 0
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if not m:
            raise ParseError(f"unexpected character {text[pos]!r}", line, pos - lstart + 1)
        kind = m.lastgroup
        if kind != "ws":
            toks.append(Tok(kind, m.group(), line, pos - lstart + 1))
        chunk = m.group()
        nl = chunk.count("\n")
        if nl:
            line += nl
            lstart = pos + chunk.rindex("\n") + 1
        pos = m.end()
    toks.append(Tok("eof", "", line, pos - lstart + 1))
    return toks


class _Stream:
    def __init__(self, toks: list[Tok]):
        self.toks, self.i = toks, 0

    def peek(self, k: int = 0) -> Tok:
        return self.toks[min(self.i + k, len(self.toks) - 1)]

    def next(self) -> Tok:
        t = self.toks[self.i]
        self.i += 1
        return t

    def expect(self, text: str) -> Tok:
        t = self.next()
        if t.text != text:
            raise ParseError(f"expected {text!r}, found {t.text or 'end of input'!r}", t.line, t.col)
        return t

    def accept(self, text: str) -> bool:
        if self.peek().text == text:
            self.i += 1
            return True
        return False

    def error(self, msg: str) -> ParseError:
        t = self.peek()
        return ParseError(msg, t.line, t.col)


def _term(s: _Stream) -> Any:
    t = s.next()
    if t.kind == "lam":
        return Lam(int(t.text[1:]))
    if t.kind == "str":
        return Const(t.text[1:-1])
    if t.kind == "ident":
        if t.text[0].isupper() or t.text[0] == "_":
            return Var(t.text)
        return Const(t.text)
    raise ParseError(f"expected a term, found {t.text or 'end of input'!r}", t.line, t.col)


def _atom(s: _Stream) -> tuple[Atom, Tok]:
    t = s.next()
    if t.kind != "ident" or t.text[0].isdigit():
        raise ParseError(f"expected a predicate name, found {t.text or 'end of input'!r}", t.line, t.col)
    args = []
    if s.accept("("):
        if not s.accept(")"):
            args.append(_term(s))
            while s.accept(","):
                args.append(_term(s))
            s.expect(")")
    return Atom(t.text, tuple(args)), t


@dataclass
class _Scope:
    rules: list
    goals: list
    idb: dict
    subs: dict
    fcq: tuple | None = None
    where: dict = None


def _decl_list(s: _Stream, into: dict, kind: str):
    while True:
        name = s.next()
        if name.kind != "ident":
            raise ParseError(f"expected a predicate name in {kind} declaration", name.line, name.col)
        s.expect("/")
        ar = s.next()
        if not ar.text.isdigit():
            raise ParseError("expected an arity", ar.line, ar.col)
        if name.text in into:
            raise ParseError(f"duplicate declaration of {name.text}", name.line, name.col)
        into[name.text] = int(ar.text)
        if not s.accept(","):
            break
    s.expect(".")


def _parse_scope(s: _Stream, edb: dict, closing: str | None) -> _Scope:
    sc = _Scope([], [], {}, {}, None, {})
    while True:
        t = s.peek()
        if closing and t.text == closing:
            s.next()
            return sc
        if t.kind == "eof":
            if closing:
                raise s.error("unterminated subquery block")
            return sc
        if t.text == "edb" and s.peek(1).kind == "ident" and s.peek(2).text == "/":
            s.next()
            _decl_list(s, edb, "edb")
        elif t.text == "idb" and s.peek(1).kind == "ident" and s.peek(2).text == "/":
            s.next()
            _decl_list(s, sc.idb, "idb")
        elif t.text == "fcq" and s.peek(1).text == "arity":
            s.next()
            s.next()
            m = s.next()
            if not m.text.isdigit():
                raise ParseError("expected the FCQ arity", m.line, m.col)
            free: list[int] = []
            if s.accept("free"):
                while s.peek().text.isdigit():
                    free.append(int(s.next().text))
                    if not s.accept(","):
                        break
            s.expect(".")
            if sc.fcq is not None:
                raise ParseError("duplicate fcq directive", t.line, t.col)
            sc.fcq = (int(m.text), tuple(free))
        elif t.text == "subquery" and s.peek(1).kind == "ident" and s.peek(2).text == "/":
            s.next()
            name = s.next()
            s.expect("/")
            ar = s.next()
            if not ar.text.isdigit():
                raise ParseError("expected an arity", ar.line, ar.col)
            s.expect("{")
            inner = _parse_scope(s, edb, "}")
            s.accept(".")
            if inner.fcq is None:
                raise ParseError(f"subquery {name.text} lacks an fcq directive", name.line, name.col)
            if name.text in sc.subs:
                raise ParseError(f"duplicate declaration of {name.text}", name.line, name.col)
            sc.subs[name.text] = (int(ar.text), inner, name)
        else:
            head, ht = _atom(s)
            s.expect(":-")
            body = [_atom(s)[0]]
            while s.accept(","):
                body.append(_atom(s)[0])
            s.expect(".")
            if head.pred == "query":
                sc.goals.append(CQ(head.args, tuple(body)))
            else:
                sc.rules.append(Rule(head, tuple(body)))
                sc.where.setdefault(head.pred, ht)


def _infer(sc: _Scope, edb: dict, explicit_edb: bool, outer_subs: set[str]):
    """Fill in IDB/EDB declarations that were left implicit."""
    subs = outer_subs | set(sc.subs)
    explicit_idb = bool(sc.idb)
    for r in sc.rules:
        h = r.head
        if h.pred == HIT or h.pred in edb or h.pred in subs:
            continue
        if h.pred in sc.idb:
            continue
        if explicit_idb:
            continue  # reported by validate as undeclared
        sc.idb[h.pred] = h.arity
    if not explicit_edb:
        for a in [a for r in sc.rules for a in r.body] + [a for g in sc.goals for a in g.body]:
            if a.pred not in sc.idb and a.pred not in subs and a.pred != HIT and a.pred not in edb:
                edb[a.pred] = a.arity
    for _, (_, inner, _) in sc.subs.items():
        _infer(inner, edb, explicit_edb, subs)


def _build(sc: _Scope, edb: dict, kind: str = "fcq") -> QueryForm:
    subs = {}
    for name, (ar, inner, tok) in sc.subs.items():
        q = _build(inner, edb)
        if q.arity != ar:
            raise ParseError(f"subquery {name} declared with arity {ar} but has {q.arity} free positions",
                             tok.line, tok.col)
        subs[name] = q
    prog = Program.make(edb=edb, idb=sc.idb, rules=sc.rules, subqueries=subs)
    if sc.fcq is not None:
        if sc.goals:
            raise ParseError("a query cannot have both an fcq directive and goal CQs")
        return FCQ(prog, sc.fcq[0], sc.fcq[1])
    if sc.goals:
        if sc.rules or sc.idb or subs:
            return DatalogQuery(prog, tuple(sc.goals))
        return UCQ(prog, tuple(sc.goals))
    raise ParseError("no query directive: expected 'fcq arity ...' or 'query(...) :- ...'")


def parse_query(text: str) -> QueryForm:
    """Parse a query file and validate it; raises ParseError/QueryError."""
    s = _Stream(tokenize(text))
    edb: dict[str, int] = {}
    sc = _parse_scope(s, edb, None)
    explicit_edb = bool(edb)
    _infer(sc, edb, explicit_edb, set())
    q = _build(sc, edb)
    diags = validate(q)
    if diags:
        raise QueryError("; ".join(map(str, diags)), diags)
    return q


def parse_program(text: str) -> Program:
    return parse_query(text).program


def parse_instance(text: str, signature: dict[str, int] | None = None) -> DatabaseInstance:
    """Parse ground facts.  With a signature, predicates and arities are checked."""
    s = _Stream(tokenize(text))
    facts = set()
    while s.peek().kind != "eof":
        a, t = _atom(s)
        s.expect(".")
        for term in a.args:
            if isinstance(term, Var):
                raise ParseError("variables not allowed in facts", t.line, t.col)
            if isinstance(term, Lam):
                raise ParseError("special constants not allowed in facts", t.line, t.col)
        if signature is not None:
            if a.pred not in signature:
                raise ParseError(f"unknown predicate {a.pred}", t.line, t.col)
            if signature[a.pred] != a.arity:
                raise ParseError(f"arity mismatch for {a.pred}", t.line, t.col)
        facts.add((a.pred, tuple(x.name for x in a.args)))
    return DatabaseInstance(frozenset(facts))


# ----------------------------------------------------------------------
# serialization

_PLAIN_CONST = re.compile(r"[a-z0-9][A-Za-z0-9_]*$")


def term_text(t) -> str:
    if isinstance(t, Const):
        return t.name if _PLAIN_CONST.match(t.name) else f'"{t.name}"'
    return str(t)


def atom_text(a: Atom) -> str:
    if not a.args:
        return a.pred
    return f"{a.pred}({','.join(term_text(t) for t in a.args)})"


def rule_text(r: Rule) -> str:
    return f"{atom_text(r.head)} :- {', '.join(atom_text(a) for a in r.body)}."


def _decl_line(kind: str, decls) -> list[str]:
    if not decls:
        return []
    return [f"{kind} " + ", ".join(f"{p}/{a}" for p, a in decls) + "."]


def _scope_lines(q: QueryForm, top: bool, indent: str = "") -> list[str]:
    prog = q.program
    lines = []
    if top:
        lines += _decl_line("edb", prog.edb)
    lines += _decl_line("idb", prog.idb)
    for name, sub in prog.subqueries:
        lines.append(f"subquery {name}/{sub.arity} {{")
        lines += ["  " + ln for ln in _scope_lines(sub, False)]
        lines.append("}")
    lines += [rule_text(r) for r in prog.rules]
    if isinstance(q, FCQ):
        free = ",".join(map(str, q.free))
        lines.append(f"fcq arity {q.m}" + (f" free {free}." if q.free else " free."))
    else:
        goals = q.goals if isinstance(q, DatalogQuery) else q.cqs
        for g in goals:
            lines.append(rule_text(g.as_rule("query")))
    return [indent + ln for ln in lines]


def serialize_instance(i: DatabaseInstance) -> str:
    return "".join(
        f"{atom_text(Atom(p, tuple(Const(x) for x in args)))}.\n" for p, args in sorted(i.facts)
    )


def serialize(value) -> str:
    """Text for queries and instances; JSON for proof trees and verdicts."""
    if isinstance(value, (FCQ, DatalogQuery, UCQ)):
        return "\n".join(_scope_lines(value, True)) + "\n"
    if isinstance(value, Program):
        return "\n".join(_decl_line("edb", value.edb) + _decl_line("idb", value.idb)
                         + [rule_text(r) for r in value.rules]) + "\n"
    if isinstance(value, DatabaseInstance):
        return serialize_instance(value)
    from .containment.prooftree import ProofTree
    from .containment.verdict import Verdict
    if isinstance(value, ProofTree):
        return json.dumps(proof_tree_json(value), indent=2)
    if isinstance(value, Verdict):
        return json.dumps(verdict_json(value), indent=2)
    raise TypeError(f"cannot serialize {type(value).__name__}")


def atom_json(a: Atom) -> dict:
    return {"pred": a.pred, "args": [str(t) if not isinstance(t, Const) else t.name for t in a.args]}


def fact_json(fact: tuple) -> dict:
    return {"pred": fact[0], "args": list(fact[1])}


def proof_tree_json(t) -> dict:
    return {
        "label": {"head": atom_json(t.label.head), "body": [atom_json(a) for a in t.label.body]},
        "children": [proof_tree_json(c) for c in t.children],
    }


def verdict_json(v) -> dict:
    out: dict[str, Any] = {"verdict": v.kind}
    if v.kind == "NotContained":
        out["proof_tree"] = proof_tree_json(v.proof_tree) if v.proof_tree is not None else None
        out["instance"] = [fact_json(f) for f in sorted(v.instance.facts)]
        out["answer"] = list(v.answer)
        out["lambda"] = {str(k): c for k, c in sorted((v.lam or {}).items())}
    elif v.kind == "Inconclusive":
        out["depth"] = v.depth
    if v.note:
        out["note"] = v.note
    return out


def _term_from_json(s: str):
    if s.startswith("@"):
        return Lam(int(s[1:]))
    if s[:1].isupper() or s[:1] == "_":
        return Var(s)
    return Const(s)


def atom_from_json(d: dict) -> Atom:
    return Atom(d["pred"], tuple(_term_from_json(x) for x in d["args"]))


def proof_tree_from_json(d: dict):
    from .containment.prooftree import ProofTree
    label = Rule(atom_from_json(d["label"]["head"]), tuple(atom_from_json(a) for a in d["label"]["body"]))
    return ProofTree(label, tuple(proof_tree_from_json(c) for c in d["children"]))


def witness_from_json(text: str) -> dict:
    """Load a witness file into instance/answer/lambda/proof_tree values."""
    d = json.loads(text)
    inst = DatabaseInstance(frozenset((f["pred"], tuple(f["args"])) for f in d.get("instance", [])))
    tree = proof_tree_from_json(d["proof_tree"]) if d.get("proof_tree") else None
    return {
        "verdict": d.get("verdict"),
        "instance": inst,
        "answer": tuple(d.get("answer", [])),
        "lambda": {int(k): v for k, v in d.get("lambda", {}).items()},
        "proof_tree": tree,
    }

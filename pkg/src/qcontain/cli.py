"""``qc``: command-line front end.

Exit codes: 0 contained or success, 1 not contained, 2 usage or input
error, 3 inconclusive oracle run, 4 resource cap reached.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .model import QueryError, classify
from .parser import parse_instance, parse_query, serialize, verdict_json, witness_from_json

EXIT_OK, EXIT_NOT_CONTAINED, EXIT_USAGE, EXIT_INCONCLUSIVE, EXIT_CAP = 0, 1, 2, 3, 4


class UsageError(Exception):
    pass


def _positive(text: str) -> int:
    v = int(text)
    if v <= 0:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return v


def _nonneg(text: str) -> int:
    v = int(text)
    if v < 0:
        raise argparse.ArgumentTypeError(f"expected a non-negative integer, got {text}")
    return v


def _read(path: str) -> str:
    try:
        return Path(path).read_text()
    except OSError as e:
        raise UsageError(f"cannot read {path}: {e.strerror}") from e


def _query(path: str):
    return parse_query(_read(path))


def _flags(q) -> dict:
    f = classify(q)
    return {"monadic": f.monadic, "linear": f.linear, "frontier_guarded": f.frontier_guarded,
            "nesting_depth": f.nesting_depth, "recursive": f.recursive}


def auto_mode(q) -> str:
    f = classify(q)
    if f.nesting_depth:
        return "nested"
    return "gdl" if not q.program.max_lambda() else "gq"


def cmd_classify(a) -> int:
    print(json.dumps(_flags(_query(a.query)), indent=2))
    return EXIT_OK


def cmd_eval(a) -> int:
    from .eval import check_answer, eval_query
    q = _query(a.query)
    answer = None
    if a.witness:
        w = witness_from_json(_read(a.witness))
        inst, answer = w["instance"], w["answer"]
    elif a.db:
        inst = parse_instance(_read(a.db))
    else:
        raise UsageError("eval needs --db or --witness")
    if a.answer is not None:
        answer = tuple(x for x in a.answer.split(",") if x) if a.answer else ()
    if answer is not None:
        print("true" if check_answer(q, inst, answer) else "false")
        return EXIT_OK
    for t in sorted(eval_query(q, inst).tuples):
        print(",".join(t))
    return EXIT_OK


def cmd_rewrite(a) -> int:
    from .rewrites import run_pass
    qs = [_query(p) for p in a.query]
    if a.pass_ not in ("or", "and") and len(qs) != 1:
        raise UsageError(f"pass {a.pass_} takes exactly one query")
    out, rep = run_pass(a.pass_, qs)
    text = serialize(out)
    if a.out:
        Path(a.out).write_text(text)
    else:
        sys.stdout.write(text)
    print(json.dumps({"pass": rep.pass_name, "before": rep.before, "after": rep.after,
                      "fresh": list(rep.fresh), "notes": list(rep.notes)}), file=sys.stderr)
    return EXIT_OK


def _report(v, a, extra: dict) -> int:
    if v.is_contained:
        print("CONTAINED")
        code = EXIT_OK
    elif v.is_not_contained:
        print("NOT CONTAINED")
        code = EXIT_NOT_CONTAINED
    else:
        print(f"INCONCLUSIVE (no counterexample up to height {v.depth})")
        code = EXIT_INCONCLUSIVE
    if v.is_not_contained:
        print("answer: " + ",".join(v.answer))
        if a.witness:
            doc = verdict_json(v)
            doc.update(extra)
            Path(a.witness).write_text(json.dumps(doc, indent=2) + "\n")
    print(json.dumps({**extra, **{k: val for k, val in v.stats.items()}}), file=sys.stderr)
    return code


def cmd_contain(a) -> int:
    from .containment import decide_containment
    p, q = _query(a.lhs), _query(a.rhs)
    mode = a.mode if a.mode != "auto" else auto_mode(q)
    v = decide_containment(p, q, mode=a.mode, engine=a.engine, max_states=a.max_states,
                           timeout=a.timeout, depth=a.depth)
    return _report(v, a, {"engine": a.engine, "mode": mode, "max_states": a.max_states})


def cmd_oracle(a) -> int:
    from .containment import bounded_oracle
    p, q = _query(a.lhs), _query(a.rhs)
    v = bounded_oracle(p, q, a.depth, max_expansions=a.max_states, timeout=a.timeout)
    return _report(v, a, {"engine": "oracle", "depth": a.depth, "max_expansions": a.max_states})


def cmd_gen_atm(a) -> int:
    from .atmgen import gen_counter_encoding, parse_tm, simulate_atm, write_bundle
    m = parse_tm(_read(a.machine))
    b = gen_counter_encoding(m, a.ell, literal=a.literal)
    man = write_bundle(b, a.out)
    if b.space <= 8:
        man["simulated_accepts"] = simulate_atm(m, b.space)
    man["seed"] = a.seed
    Path(a.out, "manifest.json").write_text(json.dumps(man, indent=2) + "\n")
    print(f"wrote {len(man['files'])} queries to {a.out} (space {b.space}, seed {a.seed})")
    return EXIT_OK


def cmd_automata(a) -> int:
    from .automata import dumps
    from .containment import build_proof_automaton, proof_alphabet
    q = _query(a.query)
    aut = build_proof_automaton(proof_alphabet(q), max_states=a.max_states)
    text = dumps(aut)
    if a.dump:
        Path(a.dump).write_text(text + "\n")
    else:
        print(text)
    print(json.dumps({"states": len(aut.states), "labels": len(aut.alphabet)}), file=sys.stderr)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="qc", description="Datalog query containment toolkit")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--max-states", type=_positive, default=10**6, help="state or expansion cap")
    common.add_argument("--depth", type=_nonneg, default=4, help="proof-tree height bound for the oracle")
    common.add_argument("--seed", type=int, default=0, help="seed recorded with generated outputs")
    common.add_argument("--timeout", type=float, default=None, help="seconds before giving up")
    sub = ap.add_subparsers(dest="cmd", required=True)

    s = sub.add_parser("classify", parents=[common], help="print fragment flags")
    s.add_argument("--query", required=True)
    s.set_defaults(fn=cmd_classify)

    s = sub.add_parser("eval", parents=[common], help="evaluate a query on an instance")
    s.add_argument("--query", required=True)
    s.add_argument("--db")
    s.add_argument("--witness", help="take instance and answer from a witness file")
    s.add_argument("--answer", help="comma-separated tuple to check")
    s.set_defaults(fn=cmd_eval)

    s = sub.add_parser("rewrite", parents=[common], help="apply a rewriting pass")
    s.add_argument("--pass", dest="pass_", required=True,
                   choices=["guard", "to-datalog", "or", "and", "unnest", "normalize"])
    s.add_argument("--query", required=True, nargs="+")
    s.add_argument("--out")
    s.set_defaults(fn=cmd_rewrite)

    for name, fn, what in (("contain", cmd_contain, "decide whether lhs is contained in rhs"),
                           ("oracle", cmd_oracle, "search proof trees up to --depth for a counterexample")):
        s = sub.add_parser(name, parents=[common], help=what)
        s.add_argument("--lhs", required=True)
        s.add_argument("--rhs", required=True)
        s.add_argument("--witness", help="write witness JSON here on NOT CONTAINED")
        if name == "contain":
            s.add_argument("--engine", choices=["automata", "oracle"], default="automata")
            s.add_argument("--mode", choices=["auto", "gq", "gdl", "nested"], default="auto")
        s.set_defaults(fn=fn)

    s = sub.add_parser("gen-atm", parents=[common], help="generate an ATM encoding")
    s.add_argument("--machine", required=True, help=".tm machine file")
    s.add_argument("--ell", type=_positive, default=1, help="bits per cell")
    s.add_argument("--out", required=True, help="output directory")
    s.add_argument("--literal", action="store_true", help="use the verbatim published bit rules")
    s.set_defaults(fn=cmd_gen_atm)

    s = sub.add_parser("automata", parents=[common], help="build and dump the proof-tree automaton")
    s.add_argument("--query", required=True)
    s.add_argument("--dump", help="write automaton JSON here")
    s.set_defaults(fn=cmd_automata)
    return ap


def run(argv: list[str] | None = None) -> int:
    from .atmgen import MachineError
    from .automata import AutomatonError
    from .containment import ResourceLimit
    ap = build_parser()
    try:
        a = ap.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code == 0 else EXIT_USAGE
    try:
        return a.fn(a)
    except ResourceLimit as e:
        print(f"resource cap reached: {e}", file=sys.stderr)
        return EXIT_CAP
    except (UsageError, QueryError, MachineError, AutomatonError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()

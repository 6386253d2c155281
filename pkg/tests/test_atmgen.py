from pathlib import Path

import pytest

from qcontain.atmgen import (
    BLANK, MachineError, gen_counter_encoding, format_tm, parse_tm, run_checker_families, simulate_atm,
    write_bundle,
)
from qcontain.containment import bounded_oracle
from qcontain.eval import check_answer
from qcontain.model import DatabaseInstance, classify, validate

SAMPLES = Path(__file__).resolve().parent.parent / "samples"
TWO_STEP = "states q0 q1; exists q0 q1; sigma a _; start q0; accept q1\n" \
           "delta q0 _ -> q1 a right\ndelta q1 a -> q0 a left\n"
UNIVERSAL = """states q0 q1 q2; forall q0; sigma a _; start q0; accept q1
delta q0 _ -> q1 a right
delta q0 _ -> q2 a right
delta q0 a -> q1 a left
delta q0 a -> q2 a left
"""


def machine(name: str):
    return parse_tm((SAMPLES / name).read_text())


# machine files

def test_parse_and_format_round_trip():
    m = machine("counter.tm")
    assert m.start == "inc" and m.accept == "qe" and len(m.delta) == 7 and BLANK in m.sigma
    assert parse_tm(format_tm(m)) == m


@pytest.mark.parametrize("text, msg", [
    ("states q0; sigma a _; start q0", "start and accept"),
    ("states q0; sigma a; start q0; accept q0", "blank"),
    ("states q0; sigma a _; start q0; accept q1", "must be states"),
    ("states q0; sigma _; start q0; accept q0; delta q0 _ -> q0 _ up", "move"),
    ("states q0; sigma _; start q0; accept q0; delta q0 _ q0 _ left", "bad transition"),
    ("states q0 q1; forall q0; sigma _; start q0; accept q1; delta q0 _ -> q1 _ left", "exactly 2"),
    ("states q0; exists q0; forall q0; sigma _; start q0; accept q0", "both"),
    ("colors red", "unknown statement"),
])
def test_machine_errors(text, msg):
    with pytest.raises(MachineError, match=msg):
        parse_tm(text)


# simulation

def test_simulate_examples():
    assert simulate_atm(machine("accept_now.tm"), 2)
    assert simulate_atm(machine("one_step.tm"), 2)
    assert not simulate_atm(machine("reject.tm"), 2)
    stuck = parse_tm("states q0 q1; sigma _; start q0; accept q1")
    assert not simulate_atm(stuck, 1)
    assert not simulate_atm(parse_tm(UNIVERSAL), 2)


def _deterministic_steps(m, space: int) -> int:
    q, tape, pos, steps = m.start, [BLANK] * space, 0, 0
    while q != m.accept:
        (d,) = m.applicable(q, tape[pos])
        tape[pos] = d.write
        pos = min(max(pos + (1 if d.move == "right" else -1), 0), space - 1)
        q, steps = d.dst, steps + 1
    return steps


def test_counter_machine_accepts_after_counting():
    m = machine("counter.tm")
    assert simulate_atm(m, 2)
    assert _deterministic_steps(m, 2) > 4


def test_simulator_space_cap():
    with pytest.raises(ValueError):
        simulate_atm(machine("counter.tm"), 9)
    with pytest.raises(ValueError):
        simulate_atm(machine("counter.tm"), 0)


# encodings

def test_rule_counts():
    m = parse_tm(TWO_STEP)
    assert len(gen_counter_encoding(m, 2, literal=True).lhs.program.rules) == 14
    assert len(gen_counter_encoding(m, 1, literal=True).lhs.program.rules) == 12
    assert len(gen_counter_encoding(m, 2).lhs.program.rules) == 16
    bits1 = gen_counter_encoding(m, 1, literal=True)
    assert bits1.bits == 0
    assert not any(a.pred.startswith("bit_") for r in bits1.lhs.program.rules for a in r.body)
    with pytest.raises(ValueError):
        gen_counter_encoding(m, 0)


def test_universal_pairs_make_lhs_nonlinear():
    m = parse_tm(UNIVERSAL)
    b = gen_counter_encoding(m, 1)
    f = classify(b.lhs)
    assert f.monadic and not f.linear
    # one rule per unordered pair of the four transitions leaving q0
    pairs = [r for r in b.lhs.program.rules if len(r.body) == 4]
    assert len(pairs) == 6
    lin = classify(gen_counter_encoding(parse_tm(TWO_STEP), 1).lhs)
    assert lin.monadic and lin.linear


def test_generated_queries_validate():
    b = gen_counter_encoding(machine("counter.tm"), 1)
    for q in (b.lhs, b.rhs_counter, b.run_checker, b.rhs(), *b.components.values()):
        validate(q)
    assert classify(b.components["ConfCell"]).linear and classify(b.components["ConfCell"]).monadic


def test_family_one_count():
    fam = run_checker_families(machine("accept_now.tm"))
    assert len(fam["head"]) == 6


def counting_config(bits_per_cell, heads=None, state="q0"):
    """One configuration x -> c whose cells carry the given bit strings."""
    facts = {("firstConf", ("x", "c")), (f"state_{state}", ("c",)), ("firstCell", ("c", "e1"))}
    for i, bits in enumerate(bits_per_cell, 1):
        e = f"e{i}"
        for j, b in enumerate(bits, 1):
            facts.add((f"bit_{j}", (e, b)))
        facts.add(("symbol", (e, "c__")))
        facts.add(("head", (e, (heads or ["h"] + ["r"] * 3)[i - 1])))
        if i < len(bits_per_cell):
            facts.add(("nextCell", (e, f"e{i + 1}")))
    facts.add(("lastConf", (f"e{len(bits_per_cell)}",)))
    return DatabaseInstance(frozenset(facts))


def test_counting_configuration():
    b = gen_counter_encoding(parse_tm(TWO_STEP), 2)
    good = counting_config(["00", "01", "10", "11"])
    assert check_answer(b.lhs, good, ("x",))
    assert not check_answer(b.rhs_counter, good, ("x",))
    for broken in (["00", "10", "01", "11"], ["01", "10", "11", "00"], ["00", "01", "11", "11"]):
        inst = counting_config(broken)
        assert check_answer(b.lhs, inst, ("x",)) and check_answer(b.rhs_counter, inst, ("x",))


def test_run_checker_on_accepting_run():
    b = gen_counter_encoding(machine("accept_now.tm"), 1)
    run = counting_config(["0", "1"], heads=["h", "r"])
    assert check_answer(b.lhs, run, ("x",))
    assert not check_answer(b.rhs_counter, run, ("x",))
    assert not check_answer(b.run_checker, run, ("x",))
    double = counting_config(["0", "1"], heads=["h", "h"])
    assert check_answer(b.lhs, double, ("x",)) and check_answer(b.run_checker, double, ("x",))
    wrong_state = counting_config(["0", "1"], heads=["h", "r"], state="q1")
    assert check_answer(b.run_checker, wrong_state, ("x",))


def test_write_bundle(tmp_path):
    b = gen_counter_encoding(machine("accept_now.tm"), 1)
    manifest = write_bundle(b, tmp_path)
    assert manifest["space"] == 2 and manifest["run_checker_families"]["head"] == 6
    assert (tmp_path / "lhs.dlq").exists() and (tmp_path / "manifest.json").exists()
    assert manifest["files"]["lhs"]["monadic"]


@pytest.mark.parametrize("name", ["accept_now.tm", "reject.tm"])
def test_encoding_agrees_with_simulation(name):
    m = machine(name)
    b = gen_counter_encoding(m, 1)
    v = bounded_oracle(b.lhs, b.rhs(), 12, timeout=300)
    assert v.is_not_contained == simulate_atm(m, 2)

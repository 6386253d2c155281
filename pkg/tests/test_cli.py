import json
import shutil
import subprocess
import sys
from pathlib import Path

import pytest

from qcontain.cli import EXIT_CAP, EXIT_INCONCLUSIVE, EXIT_NOT_CONTAINED, EXIT_OK, EXIT_USAGE, run
from qcontain.eval import check_answer
from qcontain.parser import parse_query, witness_from_json

SAMPLES = Path(__file__).resolve().parent.parent / "samples"


def s(name: str) -> str:
    return str(SAMPLES / name)


def test_classify(capsys):
    assert run(["classify", "--query", s("tc_fcq.dlq")]) == EXIT_OK
    flags = json.loads(capsys.readouterr().out)
    assert flags == {"monadic": True, "linear": True, "frontier_guarded": True, "nesting_depth": 0,
                     "recursive": True}


def test_eval_ladder_instance(capsys):
    for query, want in (("ladder_mq.dlq", "true"), ("ladder.dlq", "false")):
        assert run(["eval", "--query", s(query), "--db", s("ex2.db"), "--answer", "a,b,c,d"]) == EXIT_OK
        assert capsys.readouterr().out.strip() == want
    # the rung q(e2,d) closes a real ladder
    assert run(["eval", "--query", s("ladder.dlq"), "--db", s("ex2.db"), "--answer", "a,b,e2,d"]) == EXIT_OK
    assert capsys.readouterr().out.strip() == "true"


def test_eval_lists_answers(capsys):
    assert run(["eval", "--query", s("tc.dlq"), "--db", s("ex2.db")]) == EXIT_OK
    rows = capsys.readouterr().out.split()
    assert "a,c" in rows and "b,d" in rows and "a,b" not in rows


def test_contain_writes_valid_witness(tmp_path, capsys):
    w = tmp_path / "w.json"
    code = run(["contain", "--lhs", s("tc.dlq"), "--rhs", s("edge.dlq"), "--witness", str(w)])
    assert code == EXIT_NOT_CONTAINED
    assert capsys.readouterr().out.startswith("NOT CONTAINED")
    doc = witness_from_json(w.read_text())
    assert check_answer(parse_query((SAMPLES / "tc.dlq").read_text()), doc["instance"], doc["answer"])
    # the same file round-trips through eval
    assert run(["eval", "--query", s("edge.dlq"), "--witness", str(w)]) == EXIT_OK
    assert capsys.readouterr().out.strip() == "false"
    assert run(["eval", "--query", s("tc.dlq"), "--witness", str(w)]) == EXIT_OK
    assert capsys.readouterr().out.strip() == "true"


def test_contain_contained(capsys):
    assert run(["contain", "--lhs", s("edge.dlq"), "--rhs", s("tc_fcq.dlq")]) == EXIT_OK
    assert capsys.readouterr().out.strip() == "CONTAINED"


def test_contain_nested_rhs(capsys):
    assert run(["contain", "--lhs", s("p_qloop.dlq"), "--rhs", s("qpath_nested.dlq")]) == EXIT_OK
    assert run(["contain", "--lhs", s("edge.dlq"), "--rhs", s("qpath_nested.dlq"), "--mode", "nested"]) == \
        EXIT_NOT_CONTAINED


def test_oracle_inconclusive():
    assert run(["oracle", "--lhs", s("edge.dlq"), "--rhs", s("tc_fcq.dlq"), "--depth", "2"]) == EXIT_INCONCLUSIVE
    assert run(["oracle", "--lhs", s("tc.dlq"), "--rhs", s("edge.dlq"), "--depth", "2"]) == EXIT_NOT_CONTAINED


def test_resource_cap():
    code = run(["contain", "--lhs", s("tc.dlq"), "--rhs", s("tc_fcq.dlq"), "--max-states", "3"])
    assert code == EXIT_CAP


@pytest.mark.parametrize("argv", [
    [],
    ["frobnicate"],
    ["eval", "--query", "missing.dlq", "--db", "missing.db"],
    ["eval", "--query", s("tc.dlq")],
    ["contain", "--lhs", s("tc.dlq"), "--rhs", s("ladder.dlq")],
    ["contain", "--lhs", s("tc.dlq"), "--rhs", s("edge.dlq"), "--depth", "-1"],
    ["gen-atm", "--machine", s("tc.dlq"), "--out", "unused"],
])
def test_usage_errors(argv, capsys):
    assert run(argv) == EXIT_USAGE


def test_rewrite_to_datalog(tmp_path, capsys):
    out = tmp_path / "tc.dlq"
    assert run(["rewrite", "--pass", "to-datalog", "--query", s("tc_fcq.dlq"), "--out", str(out)]) == EXIT_OK
    report = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert report["pass"] == "to-datalog"
    assert parse_query(out.read_text()).arity == 2


def test_gen_atm(tmp_path, capsys):
    assert run(["gen-atm", "--machine", s("accept_now.tm"), "--out", str(tmp_path), "--seed", "7"]) == EXIT_OK
    man = json.loads((tmp_path / "manifest.json").read_text())
    assert man["simulated_accepts"] is True and man["seed"] == 7 and man["space"] == 2
    lhs = parse_query((tmp_path / "lhs.dlq").read_text())
    assert lhs.arity == 1


def test_automata_dump(tmp_path, capsys):
    out = tmp_path / "a.json"
    assert run(["automata", "--query", s("edge.dlq"), "--dump", str(out)]) == EXIT_OK
    assert json.loads(capsys.readouterr().err)["labels"] == 16
    assert json.loads(out.read_text())["kind"]


def test_deterministic_output(tmp_path, capsys):
    outs = []
    for i in range(2):
        w = tmp_path / f"w{i}.json"
        run(["contain", "--lhs", s("tc.dlq"), "--rhs", s("edge.dlq"), "--witness", str(w)])
        outs.append(w.read_text())
    assert outs[0] == outs[1]


@pytest.mark.skipif(shutil.which("qc") is None, reason="console script not installed")
def test_console_script():
    r = subprocess.run(["qc", "contain", "--lhs", s("tc.dlq"), "--rhs", s("edge.dlq")], capture_output=True,
                       text=True)
    assert r.returncode == EXIT_NOT_CONTAINED and "NOT CONTAINED" in r.stdout


def test_module_entry_point():
    r = subprocess.run([sys.executable, "-c", "from qcontain.cli import main; main()", "--help"],
                       capture_output=True, text=True)
    assert r.returncode == 0 and "contain" in r.stdout

"""Hard-instance generator: encodings of space-bounded alternating Turing
machines as Datalog containment problems, plus a direct ATM simulator.

The left-hand query P1 describes trees of configurations whose cells carry a
binary counter; ``rhs_counter`` flags broken counters and the run checker
flags configuration trees that are not accepting runs.  An element answered
by P1 but by neither right-hand query encodes an accepting run.
"""

from __future__ import annotations

import itertools
import json
import re
from dataclasses import dataclass, field
from pathlib import Path

from .model import CQ, HIT, Atom, Const, DatalogQuery, FCQ, Lam, Program, QueryError, Rule, UCQ, Var
from .rewrites import combine_or, inline_subqueries, ucq_to_fcq

MOVES = ("left", "right")
BLANK = "_"
MAX_SPACE = 8


class MachineError(ValueError):
    """Malformed or non-normalized machine description."""


@dataclass(frozen=True)
class Transition:
    src: str
    read: str
    dst: str
    write: str
    move: str

    def __str__(self) -> str:
        return f"{self.src} {self.read} -> {self.dst} {self.write} {self.move}"


@dataclass(frozen=True)
class ATMSpec:
    states: tuple
    universal: frozenset
    sigma: tuple
    delta: tuple
    start: str
    accept: str

    @property
    def existential(self) -> frozenset:
        return frozenset(self.states) - self.universal

    def applicable(self, q: str, s: str) -> list[Transition]:
        return [d for d in self.delta if d.src == q and d.read == s]

    def validate(self) -> "ATMSpec":
        qs = set(self.states)
        if len(qs) != len(self.states) or len(set(self.sigma)) != len(self.sigma):
            raise MachineError("duplicate state or symbol")
        if BLANK not in self.sigma:
            raise MachineError(f"alphabet must contain the blank {BLANK!r}")
        for s in self.sigma:
            if not re.fullmatch(r"[A-Za-z0-9_]+", s):
                raise MachineError(f"symbol {s!r} is not alphanumeric")
        for q in self.states:
            if not re.fullmatch(r"[A-Za-z0-9_]+", q):
                raise MachineError(f"state {q!r} is not alphanumeric")
        if self.start not in qs or self.accept not in qs:
            raise MachineError("start and accept must be states")
        if not self.universal <= qs:
            raise MachineError("universal states must be states")
        for d in self.delta:
            if d.src not in qs or d.dst not in qs:
                raise MachineError(f"transition {d} uses an unknown state")
            if d.read not in self.sigma or d.write not in self.sigma:
                raise MachineError(f"transition {d} uses an unknown symbol")
            if d.move not in MOVES:
                raise MachineError(f"transition {d} has move {d.move!r}")
        if len(set(self.delta)) != len(self.delta):
            raise MachineError("duplicate transition")
        for q in sorted(self.universal):
            for s in self.sigma:
                n = len(self.applicable(q, s))
                if n != 2:
                    raise MachineError(f"universal state {q} has {n} transitions on {s!r}; exactly 2 are required")
        return self

    @staticmethod
    def make(states, sigma, delta, start, accept, universal=()) -> "ATMSpec":
        trans = tuple(d if isinstance(d, Transition) else Transition(*d) for d in delta)
        return ATMSpec(tuple(states), frozenset(universal), tuple(sigma), trans, start, accept).validate()


def parse_tm(text: str) -> ATMSpec:
    """Read a machine file: ``;``- or newline-separated statements."""
    states: list[str] = []
    exists: list[str] = []
    forall: list[str] = []
    sigma: list[str] = []
    delta: list[Transition] = []
    start = accept = None
    body = "\n".join(ln.split("#", 1)[0].split("%", 1)[0] for ln in text.splitlines())
    for raw in re.split(r"[;\n]", body):
        stmt = raw.strip()
        if not stmt:
            continue
        key, *rest = stmt.split()
        if key == "states":
            states += rest
        elif key == "exists":
            exists += rest
        elif key == "forall":
            forall += rest
        elif key == "sigma":
            sigma += rest
        elif key in ("start", "accept"):
            if len(rest) != 1:
                raise MachineError(f"{key} takes one state")
            if key == "start":
                start = rest[0]
            else:
                accept = rest[0]
        elif key == "delta":
            if len(rest) != 6 or rest[2] != "->":
                raise MachineError(f"bad transition {stmt!r}; expected 'delta q a -> q2 b left|right'")
            delta.append(Transition(rest[0], rest[1], rest[3], rest[4], rest[5]))
        else:
            raise MachineError(f"unknown statement {key!r}")
    if start is None or accept is None:
        raise MachineError("machine needs start and accept")
    if set(exists) & set(forall):
        raise MachineError("a state cannot be both existential and universal")
    if not set(exists) <= set(states):
        raise MachineError("existential states must be states")
    return ATMSpec.make(states, sigma, delta, start, accept, forall)


def format_tm(m: ATMSpec) -> str:
    lines = [
        "states " + " ".join(m.states) + ";",
        "exists " + " ".join(q for q in m.states if q not in m.universal) + ";",
        "forall " + " ".join(q for q in m.states if q in m.universal) + ";",
        "sigma " + " ".join(m.sigma) + ";",
        f"start {m.start};",
        f"accept {m.accept};",
    ]
    lines += [f"delta {d};" for d in m.delta]
    return "\n".join(lines) + "\n"


# ----------------------------------------------------------------------
# simulation

def simulate_atm(m: ATMSpec, space: int) -> bool:
    """Whether the machine accepts the empty input within ``space`` cells.

    A configuration accepts when its state is the accepting state, when it is
    existential with an accepting successor, or when it is universal and all
    its successors accept (least fixpoint, so cycles do not accept).  A move
    off either end of the tape leaves the head in place.
    """
    if space < 1:
        raise ValueError("space must be positive")
    if space > MAX_SPACE:
        raise ValueError(f"space {space} exceeds the simulator cap {MAX_SPACE}")
    init = (m.start, (BLANK,) * space, 0)
    succ: dict = {}
    todo = [init]
    while todo:
        c = todo.pop()
        if c in succ:
            continue
        q, tape, pos = c
        out = []
        for d in m.applicable(q, tape[pos]):
            t = tape[:pos] + (d.write,) + tape[pos + 1:]
            p = pos + (1 if d.move == "right" else -1)
            out.append((d.dst, t, min(max(p, 0), space - 1)))
        succ[c] = out
        todo += out
    accepting = {c for c in succ if c[0] == m.accept}
    changed = True
    while changed:
        changed = False
        for c, out in succ.items():
            if c in accepting or not out:
                continue
            pick = all if c[0] in m.universal else any
            if pick(o in accepting for o in out):
                accepting.add(c)
                changed = True
    return init in accepting


# ----------------------------------------------------------------------
# encodings

H, L, R = Const("h"), Const("l"), Const("r")
ZERO, ONE = Const("0"), Const("1")


def sym(s: str) -> Const:
    return Const(f"c_{s}")


def state_pred(q: str) -> str:
    return f"state_{q}"


def next_conf(i: int) -> str:
    return f"nextConf_{i}"


def _v(name: str) -> Var:
    return Var(name)


def _a(pred: str, *args) -> Atom:
    return Atom(pred, tuple(args))


def signature(m: ATMSpec, bits: int) -> dict[str, int]:
    sig = {"firstConf": 2, "firstCell": 2, "nextCell": 2, "symbol": 2, "head": 2, "lastConf": 1}
    sig.update({next_conf(i): 2 for i in range(1, len(m.delta) + 1)})
    sig.update({f"bit_{i}": 2 for i in range(1, bits + 1)})
    sig.update({state_pred(q): 1 for q in m.states})
    return sig


@dataclass
class EncodingBundle:
    machine: ATMSpec
    ell: int
    bits: int
    lhs: DatalogQuery
    rhs_counter: UCQ
    components: dict
    run_checker: FCQ | None = None
    run_checker_nested: FCQ | None = None
    families: dict = field(default_factory=dict)

    @property
    def space(self) -> int:
        return 2 ** self.bits

    def rhs(self) -> FCQ:
        """The full right-hand query: counter violations or run violations."""
        if self.run_checker is None:
            raise QueryError("bundle has no run checker yet")
        return combine_or([ucq_to_fcq(self.rhs_counter), self.run_checker])


def _counter_rules(m: ATMSpec, bits: int) -> list[Rule]:
    x, y, y1, y2 = _v("X"), _v("Y"), _v("Y1"), _v("Y2")
    ug, uc, us, uh = "U_goal", "U_conf", "U_symbol", "U_head"

    def ub(i):
        return f"U_bit{i}"

    rules = [Rule(_a(ug, x), (_a("firstConf", x, y), _a(uc, y)))]
    rules += [Rule(_a(uc, x), (_a(state_pred(q), x), _a("firstCell", x, y), _a(ub(1), y))) for q in m.states]
    for i in range(1, bits + 1):
        for b in (ZERO, ONE):
            rules.append(Rule(_a(ub(i), x), (_a(f"bit_{i}", x, b), _a(ub(i + 1), x))))
    rules += [Rule(_a(ub(bits + 1), x), (_a("symbol", x, sym(s)), _a(us, x))) for s in m.sigma]
    rules += [Rule(_a(us, x), (_a("head", x, p), _a(uh, x))) for p in (H, L, R)]
    rules.append(Rule(_a(uh, x), (_a("nextCell", x, y), _a(ub(1), y))))
    index = {d: i for i, d in enumerate(m.delta, start=1)}
    for d in m.delta:
        if d.src not in m.universal:
            rules.append(Rule(_a(uh, x), (_a(next_conf(index[d]), x, y), _a(uc, y))))
    for d1, d2 in itertools.combinations(m.delta, 2):
        if d1.src == d2.src and d1.src in m.universal:
            rules.append(Rule(_a(uh, x), (_a(next_conf(index[d1]), x, y1), _a(uc, y1),
                                          _a(next_conf(index[d2]), x, y2), _a(uc, y2))))
    rules.append(Rule(_a(uh, x), (_a("lastConf", x),)))
    return rules


def _bit(i: int, t, b: Const) -> Atom:
    return _a(f"bit_{i}", t, b)


def _flip(b: Const) -> Const:
    return ONE if b == ZERO else ZERO


def counter_violations(m: ATMSpec, bits: int) -> list[tuple[str, tuple]]:
    """Bodies (without anchoring) whose match shows the cells of some
    configuration do not count 0..0, 0..01, ..., 1..1.  Bit 1 is the most
    significant bit."""
    y, z, w = _v("Y"), _v("Z"), _v("W")
    out: list[tuple[str, tuple]] = []
    for i in range(1, bits + 1):
        ones = tuple(_bit(j, y, ONE) for j in range(i + 1, bits + 1))
        pre = (_bit(i, y, ZERO),) + ones + (_a("nextCell", y, z),)
        out.append(("flip", pre + (_bit(i, z, ZERO),)))
        for j in range(i + 1, bits + 1):
            out.append(("reset", pre + (_bit(j, z, ONE),)))
        for j in range(1, i):
            for b in (ZERO, ONE):
                out.append(("copy", pre + (_bit(j, y, b), _bit(j, z, _flip(b)))))
    out.append(("overflow", tuple(_bit(j, y, ONE) for j in range(1, bits + 1)) + (_a("nextCell", y, z),)))
    for j in range(1, bits + 1):
        out.append(("first", (_a("firstCell", w, y), _bit(j, y, ONE))))
        out.append(("last", (_a("lastConf", y), _bit(j, y, ZERO))))
        for k in range(1, len(m.delta) + 1):
            out.append(("last", (_a(next_conf(k), y, w), _bit(j, y, ZERO))))
    return out


def _conf_cell_rules(m: ATMSpec) -> list[Rule]:
    y, z = _v("Y"), _v("Z")
    rules = [Rule(_a("U", y), (_a(state_pred(q), Lam(1)), _a("firstCell", Lam(1), y))) for q in m.states]
    rules.append(Rule(_a("U", z), (_a("U", y), _a("nextCell", y, z))))
    return rules


def component_queries(m: ATMSpec, bits: int) -> dict:
    """The structure-recognizing queries over the encoding signature."""
    sig = signature(m, bits)
    decl = Program.make(edb=sig)
    x, y, z = _v("X"), _v("Y"), _v("Z")

    def ucq(head, *bodies):
        return UCQ(decl, tuple(CQ(head, b) for b in bodies))

    def linmq(m_, extra):
        rules = _conf_cell_rules(m) + [Rule(Atom(HIT), extra)]
        return FCQ(Program.make(edb=sig, idb={"U": 1}, rules=rules), m_, tuple(range(1, m_ + 1)))

    comps: dict = {
        "FirstConf": ucq((x, y), (_a("firstConf", x, y),)),
        "ConfCell": linmq(2, (_a("U", Lam(2)),)),
        "LastConf": linmq(1, (_a("U", z), _a("lastConf", z))),
        "Head": ucq((x, y), (_a("head", x, y),)),
        "FirstCell": ucq((x, y), (_a("firstCell", x, y),)),
        "NextCell": ucq((x, y), (_a("nextCell", x, y),)),
        "LastCell": ucq((x,), (_a("lastConf", x),),
                        *((_a(next_conf(k), x, z),) for k in range(1, len(m.delta) + 1))),
        "Symbol": ucq((x, y), (_a("symbol", x, y),)),
    }
    for k in range(1, len(m.delta) + 1):
        comps[f"NextConf_{k}"] = linmq(2, (_a("U", z), _a(next_conf(k), z, Lam(2))))
    for q in m.states:
        comps[f"State_{q}"] = ucq((x,), (_a(state_pred(q), x),))
    if bits:
        vs = [_v(f"V{i}") for i in range(1, bits + 1)]
        same = tuple(a for i, v in enumerate(vs, start=1) for a in (_a(f"bit_{i}", x, v), _a(f"bit_{i}", y, v)))
    else:
        # one cell per configuration: any two cells are the same cell
        same = (_a("head", x, _v("P1")), _a("head", y, _v("P2")))
    comps["SameCell"] = ucq((x, y), same)
    return comps


def gen_counter_encoding(m: ATMSpec, ell: int, literal: bool = False) -> EncodingBundle:
    """P1, the counter-violation UCQ and the component queries for ``m``.

    Each cell carries ``ell`` bits, so configurations have 2**ell cells.
    ``literal=True`` reproduces the published rule list verbatim, whose bit
    rules only set bits 1..ell-1 (configurations of 2**(ell-1) cells).
    """
    if ell < 1:
        raise ValueError("ell must be at least 1")
    m.validate()
    bits = ell - 1 if literal else ell
    sig = signature(m, bits)
    rules = _counter_rules(m, bits)
    idb = {r.head.pred: 1 for r in rules}
    x = _v("X")
    lhs = DatalogQuery(Program.make(edb=sig, idb=idb, rules=rules), (CQ((x,), (_a("U_goal", x),)),))
    anchor = _a("firstConf", x, _v("X1"))
    cqs = tuple(CQ((x,), (anchor,) + body) for _, body in counter_violations(m, bits))
    rhs_counter = UCQ(Program.make(edb=sig), cqs)
    bundle = EncodingBundle(m, ell, bits, lhs, rhs_counter, component_queries(m, bits))
    gen_run_checker(bundle, m)
    return bundle


def run_checker_families(m: ATMSpec) -> dict[str, list[tuple]]:
    """Instantiated violation patterns, grouped by family, as atom lists over
    the component query names.  ``X`` is the answer element."""
    x, x2 = _v("X"), _v("X2")
    y, z, y1, y2 = _v("Y"), _v("Z"), _v("Y1"), _v("Y2")
    yp, zp, x1, x2p, w = _v("Yp"), _v("Zp"), _v("C1"), _v("C2p"), _v("W")
    c2 = _v("C2")
    index = {d: i for i, d in enumerate(m.delta, start=1)}
    fam: dict[str, list[tuple]] = {k: [] for k in ("head", "start", "step", "end", "memory", "move")}
    for p1, p2 in ((H, H), (H, L), (R, H), (R, L)):
        fam["head"].append((_a("Head", y, p1), _a("NextCell", y, z), _a("Head", z, p2)))
    for p in (R, L):
        fam["head"].append((_a("Head", y, H), _a("Head", y, p)))
    for q in m.states:
        if q != m.start:
            fam["start"].append((_a("FirstConf", x, y), _a(f"State_{q}", y)))
    for p in (L, R):
        fam["start"].append((_a("FirstConf", x, y), _a("FirstCell", y, z), _a("Head", z, p)))
    for s in m.sigma:
        if s != BLANK:
            fam["start"].append((_a("FirstConf", x, y), _a("ConfCell", y, z), _a("Symbol", z, sym(s))))
    for d in m.delta:
        nc = f"NextConf_{index[d]}"
        for q, s, q2, s2 in itertools.product(m.states, m.sigma, m.states, m.sigma):
            if (q, s, q2, s2) == (d.src, d.read, d.dst, d.write):
                continue
            fam["step"].append((
                _a(f"State_{q}", y), _a("Head", z, H), _a("ConfCell", y, z), _a("Symbol", z, sym(s)),
                _a(nc, y, yp), _a(f"State_{q2}", yp), _a("ConfCell", yp, zp), _a("SameCell", zp, z),
                _a("Symbol", zp, sym(s2)),
            ))
    for q in m.states:
        if q != m.accept:
            fam["end"].append((_a("LastConf", y), _a(f"State_{q}", y)))
    for d in m.delta:
        nc = f"NextConf_{index[d]}"
        for p in (R, L):
            for s, s2 in itertools.permutations(m.sigma, 2):
                fam["memory"].append((
                    _a("ConfCell", y1, x1), _a("Head", x1, p), _a("Symbol", x1, sym(s)), _a(nc, y1, y2),
                    _a("ConfCell", y2, c2), _a("SameCell", x1, c2), _a("Symbol", c2, sym(s2)),
                ))
        pre = (_a("ConfCell", y1, x1), _a("Head", x1, H), _a(nc, y1, y2), _a("ConfCell", y2, c2),
               _a("SameCell", x1, c2))
        for p in (R, L):
            if d.move == "right":
                fam["move"].append(pre + (_a("NextCell", c2, x2p), _a("Head", x2p, p)))
                fam["move"].append(pre + (_a("LastCell", c2), _a("Head", c2, p)))
            else:
                fam["move"].append(pre + (_a("NextCell", x2p, c2), _a("Head", x2p, p)))
                fam["move"].append(pre + (_a("FirstCell", w, c2), _a("Head", c2, p)))
    for k, bodies in fam.items():
        fam[k] = [b if any(x in a.args for a in b) else (_a("FirstConf", x, x2),) + b for b in bodies]
    return fam


def gen_run_checker(bundle: EncodingBundle, m: ATMSpec) -> FCQ:
    """A unary FCQ answering the elements whose configuration tree violates
    some run condition (head markers, start, steps, end state, untouched
    cells, head movement).

    Disjuncts become separate ``hit`` rules over shared component
    subqueries; the subqueries are then inlined so the result has the
    component queries' nesting level.
    """
    comps = bundle.components
    fam = run_checker_families(m)
    x = _v("X")
    sig = signature(m, bundle.bits)
    subs = {}
    for name, cq in comps.items():
        subs[name] = cq if isinstance(cq, FCQ) else ucq_to_fcq(cq)
    rules = []
    for bodies in fam.values():
        for body in bodies:
            rules.append(Rule(Atom(HIT), tuple(a.substitute({x: Lam(1)}) for a in body)))
    used = {a.pred for r in rules for a in r.body}
    nested = FCQ(Program.make(edb=sig, rules=rules, subqueries={k: v for k, v in subs.items() if k in used}),
                 1, (1,))
    bundle.families = {k: len(v) for k, v in fam.items()}
    bundle.run_checker_nested = nested
    bundle.run_checker = inline_subqueries(nested)
    return bundle.run_checker


def write_bundle(bundle: EncodingBundle, outdir: str | Path) -> dict:
    """Write every query as a ``.dlq`` file plus ``manifest.json``."""
    from .model import classify
    from .parser import serialize
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    files = {"lhs": bundle.lhs, "rhs_counter": bundle.rhs_counter, "run_checker": bundle.run_checker,
             "rhs": bundle.rhs()}
    files.update({f"component_{k}": v for k, v in bundle.components.items()})
    manifest = {
        "ell": bundle.ell, "bits": bundle.bits, "space": bundle.space,
        "machine": format_tm(bundle.machine),
        "lhs_rules": len(bundle.lhs.program.rules),
        "counter_disjuncts": len(bundle.rhs_counter.cqs),
        "run_checker_families": bundle.families,
        "files": {},
    }
    for name, q in files.items():
        path = out / f"{name}.dlq"
        path.write_text(serialize(q))
        f = classify(q)
        manifest["files"][name] = {"path": path.name, "monadic": f.monadic, "linear": f.linear,
                                   "nesting_depth": f.nesting_depth}
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
    return manifest

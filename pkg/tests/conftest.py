"""Shared builders and random generators for the suite.

The SIR / water / pollutant builders here mirror the shipped fixture files in
models/ so tests can cross-check the two routes (in-memory build vs. load).
"""
import random
from pathlib import Path

import numpy as np
import pytest
from hypothesis import settings

from depwire import expr as ex
from depwire.finset import FinSet, Relation, labeled
from depwire.mealy import MealyMachine
from depwire.stockflow import StockFlowBuilder
from depwire.wiring import (
    DepInterface,
    Interface,
    WiringCycleError,
    WiringDiagram,
    dependency_pushforward,
    validate_ddwd,
)

settings.register_profile("suite", deadline=None)
settings.load_profile("suite")

ROOT = Path(__file__).resolve().parent.parent
MODELS = ROOT / "models"
GOLDEN = Path(__file__).resolve().parent / "golden"


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------

def wires(a: FinSet, b: FinSet, name_pairs):
    """Index pairs from label pairs."""
    return [(a.index_of(x), b.index_of(y)) for x, y in name_pairs]


def expr_machine(inputs, outputs, states, update, readout, dep_pairs):
    """Expression-backed machine from label lists and text maps."""
    ins, outs, sts = labeled(inputs), labeled(outputs), labeled(states)
    sig = (("input", ins), ("state", sts))
    upd = ex.ExprFun(sig, sts, tuple(ex.parse(update[n]) for n in sts.labels))
    ro = ex.ExprFun(sig, outs, tuple(ex.parse(readout[n]) for n in outs.labels))
    dep = Relation(ins, outs, frozenset(
        (ins.index_of(p), outs.index_of(q)) for p, q in dep_pairs))
    return MealyMachine(DepInterface(Interface(ins, outs), dep), sts, upd, ro)


# ---------------------------------------------------------------------------
# fixture twins of the files in models/
# ---------------------------------------------------------------------------

def sir_builder() -> StockFlowBuilder:
    b = StockFlowBuilder()
    b.add_stock("S").add_stock("I").add_stock("R")
    b.add_sumvar("N", ["S", "I", "R"])
    for p in ("c", "beta", "tau", "omega"):
        b.add_inport(p)
    b.add_var("p", "I / N")
    b.add_var("f", "c * beta * p")
    b.add_var("i", "S * f")
    b.add_var("r", "tau * I")
    b.add_var("w", "omega * R")
    b.add_flow("inf", rate="i", source="S", target="I")
    b.add_flow("rec", rate="r", source="I", target="R")
    b.add_flow("wane", rate="w", source="R", target="S")
    b.add_outport("out1", ["i"])
    return b


def build_sir():
    return sir_builder().seal()


def build_water():
    b = StockFlowBuilder()
    b.add_stock("W").add_inport("k")
    b.add_var("vin", "5")
    b.add_var("vlevel", "W")
    b.add_var("vout", "k * W")
    b.add_flow("fin", rate="vin", target="W")
    b.add_flow("fout", rate="vout", source="W")
    b.add_outport("supply_in", ["vin"])
    b.add_outport("supply_level", ["vlevel"])
    b.add_outport("supply_out", ["vout"])
    return b.seal()


def build_pollutant():
    b = StockFlowBuilder()
    b.add_stock("P")
    for p in ("alpha", "sub_in", "sub_level", "sub_out"):
        b.add_inport(p)
    b.add_var("pin", "alpha * sub_in")
    b.add_var("avg", "P / sub_level")
    b.add_var("pout", "avg * sub_out")
    b.add_flow("gin", rate="pin", target="P")
    b.add_flow("gout", rate="pout", source="P")
    b.add_outport("pollutant_level", ["avg"])
    return b.seal()


def coflow_cert(both: DepInterface):
    """Certified wiring feeding the water outputs into the pollutant inputs.

    `both` is the interface of water | pollutant (left./right. labels).
    """
    dom = both.interface
    cod = Interface(labeled(["flow_rate", "pollute_rate"]), labeled(["pollution"]))
    ii, oo = dom.inputs.index_of, dom.outputs.index_of
    wd = WiringDiagram.from_wires(
        dom, cod,
        in_wires=[(0, ii("left.k")), (1, ii("right.alpha"))],
        trace_wires=[
            (oo("left.supply_in"), ii("right.sub_in")),
            (oo("left.supply_level"), ii("right.sub_level")),
            (oo("left.supply_out"), ii("right.sub_out")),
        ],
        out_wires=[(oo("right.pollutant_level"), 0)],
    )
    cod_dep = Relation(cod.inputs, cod.outputs, frozenset())
    return validate_ddwd(wd, both.dep, cod_dep)


def build_fib_add():
    return expr_machine(["a"], ["xo"], ["x"], {"x": "a + x"}, {"xo": "x"}, [])


def build_fib_delay():
    return expr_machine(["b"], ["yo"], ["y"], {"y": "b"}, {"yo": "y"}, [])


def fib_wiring():
    """Close the add|delay pair into a 0-input box emitting the sum state."""
    dom = Interface(labeled(["a", "b"]), labeled(["xo", "yo"]))
    cod = Interface(labeled([]), labeled(["fib"]))
    wd = WiringDiagram.from_wires(
        dom, cod,
        trace_wires=[(0, 1), (1, 0)],  # xo -> b, yo -> a
        out_wires=[(0, 0)],
    )
    empty_dom = Relation(dom.inputs, dom.outputs, frozenset())
    empty_cod = Relation(cod.inputs, cod.outputs, frozenset())
    return validate_ddwd(wd, empty_dom, empty_cod)


def build_plus_double():
    """Stateless machine (x1, x2) -> (x1 + 1, 2 * x2) with diagonal dependency."""
    return expr_machine(
        ["x1", "x2"], ["xo1", "xo2"], [],
        {}, {"xo1": "x1 + 1", "xo2": "2 * x2"},
        [("x1", "xo1"), ("x2", "xo2")],
    )


def plus_double_wiring():
    """Feed xo1 back into x2 and expose xo2; certifiable despite the loop."""
    dom = build_plus_double().iface
    cod = Interface(labeled(["b1", "b2"]), labeled(["y"]))
    wd = WiringDiagram.from_wires(
        dom.interface, cod,
        in_wires=[(0, 0), (1, 1)],
        trace_wires=[(0, 1)],  # xo1 -> x2
        out_wires=[(1, 0)],
    )
    return validate_ddwd(wd, dom.dep, dependency_pushforward(wd, dom.dep))


def loop_wiring_parts():
    """The 1-box feedback loop whose full dependency makes it cyclic."""
    dom = Interface(labeled(["a", "b"]), labeled(["xo", "yo"]))
    cod = Interface(labeled([]), labeled(["out"]))
    wd = WiringDiagram.from_wires(
        dom, cod,
        trace_wires=[(0, 1), (1, 0)],
        out_wires=[(0, 0)],
    )
    dep = Relation(dom.inputs, dom.outputs, frozenset({(0, 0), (1, 1)}))
    cod_dep = Relation(cod.inputs, cod.outputs, frozenset())
    return wd, dep, cod_dep


def fig2_parts():
    """Two-box shape used for the pushforward examples."""
    dom = Interface(labeled(["x1", "x2"]), labeled(["xo1", "xo2"]))
    cod = Interface(labeled(["y1", "y2", "y3"]), labeled(["z1", "z2", "z3"]))
    wd = WiringDiagram.from_wires(
        dom, cod,
        in_wires=[(0, 0), (1, 1)],
        trace_wires=[(0, 1)],
        out_wires=[(0, 0), (1, 2)],
    )
    dep = Relation(dom.inputs, dom.outputs, frozenset({(0, 0), (1, 1)}))
    return wd, dep


# ---------------------------------------------------------------------------
# random generators for the law tests
# ---------------------------------------------------------------------------

def rand_valid_sf(rng: random.Random, max_stocks=4, max_vars=5):
    """A random valid diagram: vars only read earlier vars, so no cycles."""
    b = StockFlowBuilder()
    stocks = [f"st{i}" for i in range(rng.randint(1, max_stocks))]
    for s in stocks:
        b.add_stock(s)
    sums = []
    for z in range(rng.randint(0, 2)):
        members = [s for s in stocks if rng.random() < 0.6] or [rng.choice(stocks)]
        b.add_sumvar(f"z{z}", members)
        sums.append(f"z{z}")
    inports = [f"u{i}" for i in range(rng.randint(0, 3))]
    for u in inports:
        b.add_inport(u)
    names: list[str] = []
    for j in range(rng.randint(1, max_vars)):
        pool = stocks + sums + inports + names
        terms = [
            rng.choice(pool) if pool and rng.random() < 0.75
            else str(rng.randint(1, 5))
            for _ in range(rng.randint(1, 3))
        ]
        text = terms[0]
        for t in terms[1:]:
            text += f" {rng.choice('+-*')} {t}"
        b.add_var(f"v{j}", text)
        names.append(f"v{j}")
    for k in range(rng.randint(0, 3)):
        source = rng.choice(stocks) if rng.random() < 0.7 else None
        target = rng.choice(stocks) if rng.random() < 0.7 else None
        if source is None and target is None:
            target = rng.choice(stocks)
        b.add_flow(f"fl{k}", rate=rng.choice(names), source=source, target=target)
    for q in range(rng.randint(1, 3)):
        members = [v for v in names if rng.random() < 0.5] or [rng.choice(names)]
        b.add_outport(f"o{q}", members)
    return b.seal()


def rand_dep_iface(rng: random.Random, max_in=3, max_out=3) -> DepInterface:
    iface = Interface(
        labeled([f"i{p}" for p in range(rng.randint(0, max_in))]),
        labeled([f"o{q}" for q in range(rng.randint(0, max_out))]),
    )
    pairs = frozenset(
        (p, q)
        for p in range(iface.inputs.size)
        for q in range(iface.outputs.size)
        if rng.random() < 0.4
    )
    return DepInterface(iface, Relation(iface.inputs, iface.outputs, pairs))


def rand_certified_wiring(rng: random.Random, dom: DepInterface, retries=80):
    """Random wiring on `dom` certified with the pushforward dependency."""
    for _ in range(retries):
        cod = Interface(
            labeled([f"b{p}" for p in range(rng.randint(0, 3))]),
            labeled([f"y{q}" for q in range(rng.randint(0, 3))]),
        )
        wd = WiringDiagram.from_wires(
            dom.interface, cod,
            in_wires=[(p, a) for p in range(cod.inputs.size)
                      for a in range(dom.inputs.size) if rng.random() < 0.5],
            trace_wires=[(x, a) for x in range(dom.outputs.size)
                         for a in range(dom.inputs.size) if rng.random() < 0.25],
            out_wires=[(x, q) for x in range(dom.outputs.size)
                       for q in range(cod.outputs.size) if rng.random() < 0.5],
        )
        try:
            return validate_ddwd(wd, dom.dep, dependency_pushforward(wd, dom.dep))
        except WiringCycleError:
            continue
    # trace-free wirings always certify
    cod = Interface(labeled(["b0"]), labeled(["y0"]))
    wd = WiringDiagram.from_wires(
        dom.interface, cod,
        in_wires=[(0, a) for a in range(dom.inputs.size)],
        out_wires=[(x, 0) for x in range(dom.outputs.size)],
    )
    return validate_ddwd(wd, dom.dep, dependency_pushforward(wd, dom.dep))


def _affine(rng: random.Random, pool) -> str:
    text = str(rng.randint(-3, 3))
    for name in pool:
        c = rng.choice([-2, -1, 1, 2])
        text += f" + {c} * {name}"
    return text


def rand_expr_machine(rng: random.Random, diface: DepInterface, max_states=3):
    """Affine expression machine whose readout uses exactly the declared deps."""
    sts = labeled([f"s{k}" for k in range(rng.randint(0, max_states))])
    ins, outs = diface.inputs, diface.outputs
    sig = (("input", ins), ("state", sts))
    pool = list(ins.labels) + list(sts.labels)
    upd = ex.ExprFun(sig, sts, tuple(
        ex.parse(_affine(rng, pool)) for _ in range(sts.size)))
    ro_exprs = []
    for q in range(outs.size):
        allowed = [ins.label(p) for p in sorted(diface.dep.related_to(q))]
        ro_exprs.append(ex.parse(_affine(rng, allowed + list(sts.labels))))
    ro = ex.ExprFun(sig, outs, tuple(ro_exprs))
    return MealyMachine(diface, sts, upd, ro)


def rand_linear_machine(gen: np.random.Generator, diface: DepInterface, n_states=2):
    """Opaque linear machine; the readout mask enforces the dependency."""
    ni, no = diface.inputs.size, diface.outputs.size
    u = gen.uniform(-1, 1, (n_states, n_states))
    v = gen.uniform(-1, 1, (n_states, ni))
    w = gen.uniform(-1, 1, (no, n_states))
    mask = np.zeros((no, ni))
    for p, q in diface.dep.pairs:
        mask[q, p] = 1.0
    m = gen.uniform(-1, 1, (no, ni)) * mask
    return MealyMachine(
        diface, FinSet(n_states),
        lambda a, s: u @ s + v @ a,
        lambda a, s: m @ a + w @ s,
        check=False,
    )


@pytest.fixture
def rng():
    return random.Random(20260823)


@pytest.fixture
def nprng():
    return np.random.default_rng(20260823)

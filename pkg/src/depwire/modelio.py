"""Serialization: YAML model files, DOT export, trajectory / run CSVs.

Every domain object reads from and writes to a small YAML dialect with an
explicit `format_version` and a `kind` tag. Files are name-oriented — ports,
stocks, and variables are referenced by name and compiled to indices at load
time — and saving always produces a canonical form: stable key order, derived
links omitted, dependencies spelled out. Diagnostics carry the file path and
a dotted location inside the document.
"""
from __future__ import annotations

import os
from dataclasses import dataclass
from typing import Any, Callable, Sequence, Union

import numpy as np
import yaml

from . import expr as ex
from .finset import FinSet, Relation, ensure_labels, labeled
from .mealy import MealyMachine, apply_wiring, parallel
from .semantics import (
    ExprSignal,
    Signal,
    TableSignal,
    Trajectory,
    integrate,
    simulate_sf,
)
from .stockflow import BuildError, StockFlowBuilder, StockFlowDiagram
from .wiring import (
    DepInterface,
    DepWiringDiagram,
    Interface,
    WiringDiagram,
    validate_ddwd,
)

FORMAT_VERSION = "1"
KINDS = (
    "interface", "dependency", "wiring", "dep_wiring",
    "mealy", "stockflow", "signal", "scenario",
)

Model = Union[
    Interface, DepInterface, WiringDiagram, DepWiringDiagram,
    MealyMachine, StockFlowDiagram, Signal, "Scenario",
]


class ModelError(ValueError):
    """A parse or schema problem, located by file path and document key."""

    def __init__(self, message: str, path: str | None = None,
                 location: str | None = None):
        self.path = path
        self.location = location
        where = ": ".join(x for x in (path, location) if x)
        super().__init__(f"{where}: {message}" if where else message)


# ---------------------------------------------------------------------------
# Schema helpers
# ---------------------------------------------------------------------------

class _Ctx:
    def __init__(self, path: str | None):
        self.path = path

    def err(self, message: str, loc: str) -> ModelError:
        return ModelError(message, self.path, loc)


def _as_map(x, ctx: _Ctx, loc: str) -> dict:
    if x is None:
        return {}
    if not isinstance(x, dict):
        raise ctx.err(f"expected a mapping, got {type(x).__name__}", loc)
    return x


def _as_list(x, ctx: _Ctx, loc: str) -> list:
    if x is None:
        return []
    if not isinstance(x, list):
        raise ctx.err(f"expected a list, got {type(x).__name__}", loc)
    return x


def _as_name(x, ctx: _Ctx, loc: str) -> str:
    if not isinstance(x, str) or not x:
        raise ctx.err(f"expected a name (non-empty string), got {x!r}", loc)
    return x


def _as_float(x, ctx: _Ctx, loc: str) -> float:
    if isinstance(x, bool) or not isinstance(x, (int, float)):
        raise ctx.err(f"expected a number, got {x!r}", loc)
    return float(x)


def _as_expr_text(x, ctx: _Ctx, loc: str) -> str:
    if isinstance(x, (int, float)) and not isinstance(x, bool):
        return repr(x)
    if not isinstance(x, str):
        raise ctx.err(f"expected an expression, got {x!r}", loc)
    return x


def _check_keys(doc: dict, allowed: Sequence[str], ctx: _Ctx, loc: str):
    unknown = sorted(set(doc) - set(allowed))
    if unknown:
        raise ctx.err(
            f"unknown key(s) {unknown}; allowed: {sorted(allowed)}", loc
        )


def _name_list(x, ctx: _Ctx, loc: str) -> tuple[str, ...]:
    items = _as_list(x, ctx, loc)
    return tuple(
        _as_name(n, ctx, f"{loc}[{i}]") for i, n in enumerate(items)
    )


def _finset(x, ctx: _Ctx, loc: str) -> FinSet:
    names = _name_list(x, ctx, loc)
    if len(set(names)) != len(names):
        dupes = sorted({n for n in names if names.count(n) > 1})
        raise ctx.err(f"duplicate name(s) {dupes}", loc)
    return labeled(names)


def _index_of(fs: FinSet, name, ctx: _Ctx, loc: str, what: str) -> int:
    _as_name(name, ctx, loc)
    try:
        return fs.index_of(name)
    except KeyError:
        raise ctx.err(f"unknown {what} {name!r}", loc) from None


def _pair_list(x, ctx: _Ctx, loc: str) -> list[tuple[str, str]]:
    items = _as_list(x, ctx, loc)
    out = []
    for i, it in enumerate(items):
        if not isinstance(it, list) or len(it) != 2:
            raise ctx.err("expected a [from, to] pair", f"{loc}[{i}]")
        out.append((
            _as_name(it[0], ctx, f"{loc}[{i}][0]"),
            _as_name(it[1], ctx, f"{loc}[{i}][1]"),
        ))
    return out


def _resolve_pairs(
    pairs: list[tuple[str, str]], src: FinSet, tgt: FinSet,
    ctx: _Ctx, loc: str, what: tuple[str, str],
) -> list[tuple[int, int]]:
    return [
        (
            _index_of(src, a, ctx, f"{loc}[{i}][0]", what[0]),
            _index_of(tgt, b, ctx, f"{loc}[{i}][1]", what[1]),
        )
        for i, (a, b) in enumerate(pairs)
    ]


def _parse_expr(text: str, ctx: _Ctx, loc: str) -> ex.Expr:
    try:
        return ex.parse(text)
    except ex.ExprSyntaxError as e:
        raise ctx.err(f"bad expression: {e.args[0]}", loc) from None


# ---------------------------------------------------------------------------
# Canonical YAML emission
# ---------------------------------------------------------------------------

class _Dumper(yaml.SafeDumper):
    pass


def _repr_seq(dumper, data):
    scalars = all(
        isinstance(x, (str, int, float, bool, type(None))) for x in data
    )
    return dumper.represent_sequence(
        "tag:yaml.org,2002:seq", list(data), flow_style=scalars
    )


_Dumper.add_representer(list, _repr_seq)
_Dumper.add_representer(tuple, _repr_seq)


def _dump_yaml(doc: dict) -> str:
    return yaml.dump(doc, Dumper=_Dumper, sort_keys=False,
                     default_flow_style=False, allow_unicode=True)


# ---------------------------------------------------------------------------
# Interfaces and dependencies
# ---------------------------------------------------------------------------

def _load_interface(body: dict, ctx: _Ctx, loc: str = "") -> Interface:
    p = f"{loc}." if loc else ""
    _check_keys(body, ("inputs", "outputs"), ctx, loc or "body")
    return Interface(
        _finset(body.get("inputs"), ctx, f"{p}inputs"),
        _finset(body.get("outputs"), ctx, f"{p}outputs"),
    )


def _interface_doc(iface: Interface) -> dict:
    ins = ensure_labels(iface.inputs, "in")
    outs = ensure_labels(iface.outputs, "out")
    return {"inputs": list(ins.labels), "outputs": list(outs.labels)}


def _load_dep_interface(body: dict, ctx: _Ctx, loc: str = "") -> DepInterface:
    p = f"{loc}." if loc else ""
    _check_keys(body, ("inputs", "outputs", "dependency"), ctx, loc or "body")
    iface = Interface(
        _finset(body.get("inputs"), ctx, f"{p}inputs"),
        _finset(body.get("outputs"), ctx, f"{p}outputs"),
    )
    pairs = _resolve_pairs(
        _pair_list(body.get("dependency"), ctx, f"{p}dependency"),
        iface.inputs, iface.outputs, ctx, f"{p}dependency",
        ("input", "output"),
    )
    return DepInterface(
        iface, Relation(iface.inputs, iface.outputs, frozenset(pairs))
    )


def _dep_pairs_doc(dep: Relation, src: FinSet, tgt: FinSet) -> list:
    return [
        [src.label(a), tgt.label(b)] for a, b in dep.sorted_pairs()
    ]


def _dep_interface_doc(di: DepInterface) -> dict:
    ins = ensure_labels(di.inputs, "in")
    outs = ensure_labels(di.outputs, "out")
    doc = {"inputs": list(ins.labels), "outputs": list(outs.labels)}
    doc["dependency"] = _dep_pairs_doc(di.dep, ins, outs)
    return doc


# ---------------------------------------------------------------------------
# Wiring diagrams
# ---------------------------------------------------------------------------

_WIRE_KEYS = ("in_wires", "trace_wires", "out_wires")


def _load_wires(body, dom: Interface, cod: Interface, ctx: _Ctx):
    specs = {
        "in_wires": (cod.inputs, dom.inputs, ("outer input", "inner input")),
        "trace_wires": (dom.outputs, dom.inputs, ("inner output", "inner input")),
        "out_wires": (dom.outputs, cod.outputs, ("inner output", "outer output")),
    }
    out = {}
    for key, (src, tgt, what) in specs.items():
        pairs = _pair_list(body.get(key), ctx, key)
        out[key] = _resolve_pairs(pairs, src, tgt, ctx, key, what)
    return out


def _load_wiring(body: dict, ctx: _Ctx) -> WiringDiagram:
    _check_keys(body, ("dom", "cod") + _WIRE_KEYS, ctx, "body")
    dom = _load_interface(_as_map(body.get("dom"), ctx, "dom"), ctx, "dom")
    cod = _load_interface(_as_map(body.get("cod"), ctx, "cod"), ctx, "cod")
    w = _load_wires(body, dom, cod, ctx)
    return WiringDiagram.from_wires(
        dom, cod, w["in_wires"], w["trace_wires"], w["out_wires"]
    )


def _wires_doc(f: WiringDiagram) -> dict:
    ci = ensure_labels(f.cod.inputs, "in")
    co = ensure_labels(f.cod.outputs, "out")
    di = ensure_labels(f.dom.inputs, "in")
    do = ensure_labels(f.dom.outputs, "out")
    return {
        "in_wires": [[ci.label(a), di.label(b)] for a, b in f.w_in.pairs()],
        "trace_wires": [[do.label(a), di.label(b)] for a, b in f.w.pairs()],
        "out_wires": [[do.label(a), co.label(b)] for a, b in f.w_out.pairs()],
    }


def _wiring_doc(f: WiringDiagram) -> dict:
    return {
        "dom": _interface_doc(f.dom),
        "cod": _interface_doc(f.cod),
        **_wires_doc(f),
    }


def _load_dep_wiring(body: dict, ctx: _Ctx) -> DepWiringDiagram:
    _check_keys(body, ("dom", "cod") + _WIRE_KEYS, ctx, "body")
    dom = _load_dep_interface(_as_map(body.get("dom"), ctx, "dom"), ctx, "dom")
    cod = _load_dep_interface(_as_map(body.get("cod"), ctx, "cod"), ctx, "cod")
    w = _load_wires(body, dom.interface, cod.interface, ctx)
    f = WiringDiagram.from_wires(
        dom.interface, cod.interface,
        w["in_wires"], w["trace_wires"], w["out_wires"],
    )
    # cycle/coverage problems are domain findings, not schema errors
    return validate_ddwd(f, dom.dep, cod.dep)


def _dep_wiring_doc(f: DepWiringDiagram) -> dict:
    return {
        "dom": _dep_interface_doc(f.dom),
        "cod": _dep_interface_doc(f.cod),
        **_wires_doc(f.diagram),
    }


# ---------------------------------------------------------------------------
# Machines
# ---------------------------------------------------------------------------

def _exprs_for(
    section, index: FinSet, ctx: _Ctx, loc: str, what: str
) -> tuple[ex.Expr, ...]:
    m = _as_map(section, ctx, loc)
    for name in m:
        _index_of(index, name, ctx, f"{loc}.{name}", what)
    missing = [index.label(j) for j in range(index.size) if index.label(j) not in m]
    if missing:
        raise ctx.err(f"missing expression(s) for {what}(s) {missing}", loc)
    return tuple(
        _parse_expr(
            _as_expr_text(m[index.label(j)], ctx, f"{loc}.{index.label(j)}"),
            ctx, f"{loc}.{index.label(j)}",
        )
        for j in range(index.size)
    )


def _minimal_machine_dep(readout: ex.ExprFun, inputs: FinSet, outputs: FinSet) -> Relation:
    pairs = {
        (p, q)
        for q in range(outputs.size)
        for p in readout.coord_refs(q, "input")
    }
    return Relation(inputs, outputs, frozenset(pairs))


def _load_mealy(body: dict, ctx: _Ctx) -> MealyMachine:
    _check_keys(
        body,
        ("inputs", "outputs", "states", "dependency", "update", "readout"),
        ctx, "body",
    )
    inputs = _finset(body.get("inputs"), ctx, "inputs")
    outputs = _finset(body.get("outputs"), ctx, "outputs")
    states = _finset(body.get("states"), ctx, "states")
    overlap = sorted(set(inputs.labels) & set(states.labels))
    if overlap:
        raise ctx.err(
            f"name(s) {overlap} used for both an input and a state", "states"
        )
    signature = (("input", inputs), ("state", states))
    try:
        update = ex.ExprFun(
            signature, states, _exprs_for(body.get("update"), states, ctx, "update", "state")
        )
        readout = ex.ExprFun(
            signature, outputs,
            _exprs_for(body.get("readout"), outputs, ctx, "readout", "output"),
        )
    except ex.ResolutionError as e:
        raise ctx.err(str(e.args[0]), "body") from None
    if body.get("dependency") is None:
        dep = _minimal_machine_dep(readout, inputs, outputs)
    else:
        pairs = _resolve_pairs(
            _pair_list(body.get("dependency"), ctx, "dependency"),
            inputs, outputs, ctx, "dependency", ("input", "output"),
        )
        dep = Relation(inputs, outputs, frozenset(pairs))
    iface = DepInterface(Interface(inputs, outputs), dep)
    # an undeclared input read raises here as a domain finding
    return MealyMachine(iface, states, update, readout)


def _mealy_doc(m: MealyMachine) -> dict:
    if not m.expression_backed:
        raise ValueError(
            "only expression-backed machines can be saved; this one wraps "
            "opaque callables"
        )
    inputs = ensure_labels(m.iface.inputs, "in")
    outputs = ensure_labels(m.iface.outputs, "out")
    states = ensure_labels(m.states, "s")
    overlap = sorted(set(inputs.labels) & set(states.labels))
    if overlap:
        raise ValueError(
            f"cannot serialize: name(s) {overlap} used for both an input "
            f"and a state"
        )
    return {
        "inputs": list(inputs.labels),
        "outputs": list(outputs.labels),
        "states": list(states.labels),
        "dependency": _dep_pairs_doc(m.iface.dep, inputs, outputs),
        "update": {
            states.label(j): ex.to_text(e) for j, e in enumerate(m.update.exprs)
        },
        "readout": {
            outputs.label(j): ex.to_text(e) for j, e in enumerate(m.readout.exprs)
        },
    }


# ---------------------------------------------------------------------------
# Stock-flow diagrams
# ---------------------------------------------------------------------------

_SF_KEYS = ("stocks", "sumvars", "inports", "outports", "vars", "flows",
            "extra_links", "dependency")
_LINK_KINDS = ("stock", "stock_sum", "sum", "var", "in", "out")


def _load_stockflow(body: dict, ctx: _Ctx) -> StockFlowDiagram:
    _check_keys(body, _SF_KEYS, ctx, "body")
    b = StockFlowBuilder()
    for i, name in enumerate(_name_list(body.get("stocks"), ctx, "stocks")):
        b.add_stock(name)
    sumvars = _as_map(body.get("sumvars"), ctx, "sumvars")
    for name, members in sumvars.items():
        b.add_sumvar(
            _as_name(name, ctx, "sumvars"),
            _name_list(members, ctx, f"sumvars.{name}"),
        )
    for name in _name_list(body.get("inports"), ctx, "inports"):
        b.add_inport(name)
    outports = _as_map(body.get("outports"), ctx, "outports")
    for name, members in outports.items():
        b.add_outport(
            _as_name(name, ctx, "outports"),
            _name_list(members, ctx, f"outports.{name}"),
        )
    for name, text in _as_map(body.get("vars"), ctx, "vars").items():
        _as_name(name, ctx, "vars")
        b.add_var(name, _parse_expr(
            _as_expr_text(text, ctx, f"vars.{name}"), ctx, f"vars.{name}"
        ))
    for i, f in enumerate(_as_list(body.get("flows"), ctx, "flows")):
        f = _as_map(f, ctx, f"flows[{i}]")
        _check_keys(f, ("name", "rate", "from", "to"), ctx, f"flows[{i}]")
        if "name" not in f or "rate" not in f:
            raise ctx.err("a flow needs `name` and `rate`", f"flows[{i}]")
        b.add_flow(
            _as_name(f["name"], ctx, f"flows[{i}].name"),
            rate=_as_name(f["rate"], ctx, f"flows[{i}].rate"),
            source=None if f.get("from") is None
            else _as_name(f["from"], ctx, f"flows[{i}].from"),
            target=None if f.get("to") is None
            else _as_name(f["to"], ctx, f"flows[{i}].to"),
        )
    for i, it in enumerate(_as_list(body.get("extra_links"), ctx, "extra_links")):
        loc = f"extra_links[{i}]"
        if not isinstance(it, list) or len(it) != 3:
            raise ctx.err("expected a [kind, from, to] triple", loc)
        kind = _as_name(it[0], ctx, f"{loc}[0]")
        if kind not in _LINK_KINDS:
            raise ctx.err(
                f"unknown link kind {kind!r}; one of {list(_LINK_KINDS)}",
                f"{loc}[0]",
            )
        b.add_link(kind, _as_name(it[1], ctx, f"{loc}[1]"),
                   _as_name(it[2], ctx, f"{loc}[2]"))
    if body.get("dependency") is not None:
        b.set_dependency(_pair_list(body.get("dependency"), ctx, "dependency"))
    try:
        return b.seal()
    except BuildError as e:
        raise ctx.err(str(e), "body") from None


def _derived_link_pairs(sf: StockFlowDiagram) -> dict[str, set[tuple[int, int]]]:
    """Link pairs already implied by the expressions / sections on save."""
    kinds: dict[str, set[tuple[int, int]]] = {
        "stock": set(), "sum": set(), "var": set(), "in": set()
    }
    for j in range(sf.variables.size):
        for ns, kind in (("stock", "stock"), ("sumvar", "sum"),
                         ("var", "var"), ("input", "in")):
            for b in sf.aux.coord_refs(j, ns):
                kinds[kind].add((b, j))
    return kinds


def _stockflow_doc(sf: StockFlowDiagram) -> dict:
    for fs, what in ((sf.stocks, "stock"), (sf.flows, "flow"),
                     (sf.variables, "variable"), (sf.sumvars, "sumvar"),
                     (sf.iface.inputs, "in port"), (sf.iface.outputs, "out port")):
        if fs.size and fs.labels is None:
            raise ValueError(f"cannot serialize: unnamed {what}s")
    stocks, variables, sumvars = sf.stocks, sf.variables, sf.sumvars
    inports, outports = sf.iface.inputs, sf.iface.outputs

    sum_members: dict[int, list[int]] = {z: [] for z in range(sumvars.size)}
    for s, z in sf.stock_sum_link.pairs():
        sum_members[z].append(s)
    out_members: dict[int, list[int]] = {q: [] for q in range(outports.size)}
    for v, q in sf.out_link.pairs():
        out_members[q].append(v)

    flows = []
    src = {sf.outflow_flow(a): sf.outflow_stock(a) for a in range(sf.outflows.size)}
    tgt = {sf.inflow_flow(a): sf.inflow_stock(a) for a in range(sf.inflows.size)}
    for k in range(sf.flows.size):
        f: dict[str, Any] = {
            "name": sf.flows.label(k),
            "rate": variables.label(sf.flow_var(k)),
        }
        if k in src:
            f["from"] = stocks.label(src[k])
        if k in tgt:
            f["to"] = stocks.label(tgt[k])
        flows.append(f)

    derived = _derived_link_pairs(sf)
    extra = []
    for kind, span, left, right in (
        ("stock", sf.stock_link, stocks, variables),
        ("sum", sf.sum_link, sumvars, variables),
        ("var", sf.var_link, variables, variables),
        ("in", sf.in_link, inports, variables),
    ):
        seen = set(derived[kind])
        for a, b in span.pairs():
            if (a, b) in seen:
                continue
            seen.add((a, b))
            extra.append([kind, left.label(a), right.label(b)])

    doc: dict[str, Any] = {"stocks": list(stocks.labels or ())}
    doc["sumvars"] = {
        sumvars.label(z): [stocks.label(s) for s in sum_members[z]]
        for z in range(sumvars.size)
    }
    doc["inports"] = list(inports.labels or ())
    doc["outports"] = {
        outports.label(q): [variables.label(v) for v in out_members[q]]
        for q in range(outports.size)
    }
    doc["vars"] = {
        variables.label(j): ex.to_text(e) for j, e in enumerate(sf.aux.exprs)
    }
    doc["flows"] = flows
    if extra:
        doc["extra_links"] = extra
    doc["dependency"] = _dep_pairs_doc(sf.iface.dep, inports, outports)
    return doc


# ---------------------------------------------------------------------------
# Signals and scenarios
# ---------------------------------------------------------------------------

def _load_signal_body(
    body: dict, ctx: _Ctx, index: FinSet, loc: str = ""
) -> Signal:
    p = f"{loc}." if loc else ""
    _check_keys(body, ("index", "constant", "table", "exprs"), ctx, loc or "body")
    forms = [k for k in ("constant", "table", "exprs") if body.get(k) is not None]
    if len(forms) != 1:
        raise ctx.err(
            "exactly one of `constant`, `table`, `exprs` is required",
            loc or "body",
        )
    form = forms[0]
    if form == "constant":
        m = _as_map(body["constant"], ctx, f"{p}constant")
        vals = _signal_row(m, index, ctx, f"{p}constant")
        return TableSignal(index, np.array([0.0]), np.array([vals]))
    if form == "table":
        t = _as_map(body["table"], ctx, f"{p}table")
        _check_keys(t, ("times", "rows"), ctx, f"{p}table")
        times = [
            _as_float(x, ctx, f"{p}table.times[{i}]")
            for i, x in enumerate(_as_list(t.get("times"), ctx, f"{p}table.times"))
        ]
        rows = _as_list(t.get("rows"), ctx, f"{p}table.rows")
        if len(rows) != len(times):
            raise ctx.err(
                f"{len(times)} times but {len(rows)} rows", f"{p}table"
            )
        vals = []
        for i, row in enumerate(rows):
            row = _as_list(row, ctx, f"{p}table.rows[{i}]")
            if len(row) != index.size:
                raise ctx.err(
                    f"expected {index.size} values, got {len(row)}",
                    f"{p}table.rows[{i}]",
                )
            vals.append([
                _as_float(x, ctx, f"{p}table.rows[{i}][{j}]")
                for j, x in enumerate(row)
            ])
        try:
            return TableSignal(index, np.array(times), np.array(vals))
        except ValueError as e:
            raise ctx.err(str(e), f"{p}table") from None
    m = _as_map(body["exprs"], ctx, f"{p}exprs")
    texts = []
    for j in range(index.size):
        name = index.label(j)
        if name not in m:
            raise ctx.err(f"missing expression for {name!r}", f"{p}exprs")
        texts.append(_as_expr_text(m[name], ctx, f"{p}exprs.{name}"))
    stray = sorted(set(m) - set(index.labels or ()))
    if stray:
        raise ctx.err(f"unknown coordinate(s) {stray}", f"{p}exprs")
    try:
        return ExprSignal.from_exprs(
            index, [_parse_expr(t, ctx, f"{p}exprs") for t in texts]
        )
    except ex.ResolutionError as e:
        raise ctx.err(str(e.args[0]), f"{p}exprs") from None


def _signal_row(m: dict, index: FinSet, ctx: _Ctx, loc: str) -> list[float]:
    if index.labels is None:
        raise ctx.err("signal coordinates must be named", loc)
    stray = sorted(set(m) - set(index.labels))
    if stray:
        raise ctx.err(f"unknown coordinate(s) {stray}", loc)
    out = []
    for j in range(index.size):
        name = index.label(j)
        if name not in m:
            raise ctx.err(f"missing value for {name!r}", loc)
        out.append(_as_float(m[name], ctx, f"{loc}.{name}"))
    return out


def _load_signal(body: dict, ctx: _Ctx) -> Signal:
    index = _finset(body.get("index"), ctx, "index")
    return _load_signal_body(body, ctx, index)


def _signal_doc(sig: Signal) -> dict:
    index = ensure_labels(sig.index, "u")
    doc: dict[str, Any] = {"index": list(index.labels)}
    if isinstance(sig, TableSignal):
        if len(sig.times) == 1 and float(sig.times[0]) == 0.0:
            doc["constant"] = {
                index.label(j): float(sig.values[0, j])
                for j in range(index.size)
            }
        else:
            doc["table"] = {
                "times": [float(t) for t in sig.times],
                "rows": [[float(x) for x in row] for row in sig.values],
            }
    elif isinstance(sig, ExprSignal):
        doc["exprs"] = {
            index.label(j): ex.to_text(e) for j, e in enumerate(sig.fun.exprs)
        }
    else:
        raise ValueError(f"cannot serialize signal of type {type(sig).__name__}")
    return doc


@dataclass(frozen=True)
class Scenario:
    """A simulation in one file: model reference, start state, inputs, solver."""

    model_path: str
    model: Union[StockFlowDiagram, MealyMachine]
    state: np.ndarray
    signal: Signal
    t0: float
    t1: float
    dt: float
    method: str = "rk4"
    signal_path: str | None = None

    def run(self) -> Trajectory:
        if isinstance(self.model, StockFlowDiagram):
            return simulate_sf(
                self.model, self.state, self.signal,
                self.t0, self.t1, self.dt, self.method,
            )
        return integrate(
            self.model, self.state, self.signal,
            self.t0, self.t1, self.dt, self.method,
        )


def _load_scenario(body: dict, ctx: _Ctx) -> Scenario:
    _check_keys(
        body,
        ("model", "state", "signal", "t0", "t1", "dt", "method"),
        ctx, "body",
    )
    if "model" not in body:
        raise ctx.err("a scenario needs a `model` path", "model")
    model_rel = _as_name(body["model"], ctx, "model")
    base = os.path.dirname(ctx.path) if ctx.path else "."
    model_path = os.path.normpath(os.path.join(base, model_rel))
    model = load(model_path)
    if isinstance(model, StockFlowDiagram):
        states = model.stocks
        inputs = model.iface.inputs
    elif isinstance(model, MealyMachine):
        states = model.states
        inputs = model.iface.inputs
    else:
        raise ctx.err(
            f"scenario model must be a stockflow or mealy file, "
            f"got kind for {type(model).__name__}", "model",
        )
    states = ensure_labels(states, "s")
    state = np.array(
        _signal_row(_as_map(body.get("state"), ctx, "state"), states, ctx, "state")
    )
    sig_body = body.get("signal")
    signal_path = None
    if isinstance(sig_body, str):
        signal_path = sig_body
        sig = load(os.path.normpath(os.path.join(base, sig_body)))
        if not isinstance(sig, Signal):
            raise ctx.err("referenced file is not a signal", "signal")
        if sig.index.size != inputs.size:
            raise ctx.err(
                f"signal has {sig.index.size} coordinates; the model "
                f"expects {inputs.size}", "signal",
            )
    else:
        sig = _load_signal_body(
            _as_map(sig_body, ctx, "signal"), ctx,
            ensure_labels(inputs, "in"), "signal",
        )
    t0 = _as_float(body.get("t0", 0.0), ctx, "t0")
    if "t1" not in body:
        raise ctx.err("a scenario needs an end time `t1`", "t1")
    t1 = _as_float(body["t1"], ctx, "t1")
    if "dt" not in body:
        raise ctx.err("a scenario needs a step size `dt`", "dt")
    dt = _as_float(body["dt"], ctx, "dt")
    method = body.get("method", "rk4")
    if method not in ("euler", "rk4"):
        raise ctx.err(
            f"unknown method {method!r}; choose euler or rk4", "method"
        )
    return Scenario(model_rel, model, state, sig, t0, t1, dt, method,
                    signal_path)


def _scenario_doc(sc: Scenario) -> dict:
    states = ensure_labels(
        sc.model.stocks if isinstance(sc.model, StockFlowDiagram)
        else sc.model.states, "s",
    )
    doc: dict[str, Any] = {"model": sc.model_path}
    doc["state"] = {
        states.label(j): float(sc.state[j]) for j in range(states.size)
    }
    if sc.signal_path is not None:
        doc["signal"] = sc.signal_path
    else:
        inner = _signal_doc(sc.signal)
        inner.pop("index")
        doc["signal"] = inner
    doc.update(t0=float(sc.t0), t1=float(sc.t1), dt=float(sc.dt),
               method=sc.method)
    return doc


# ---------------------------------------------------------------------------
# Front door: load / save / dumps
# ---------------------------------------------------------------------------

_LOADERS: dict[str, Callable[[dict, _Ctx], Any]] = {
    "interface": lambda b, c: _load_interface(b, c),
    "dependency": _load_dep_interface,
    "wiring": _load_wiring,
    "dep_wiring": _load_dep_wiring,
    "mealy": _load_mealy,
    "stockflow": _load_stockflow,
    "signal": _load_signal,
    "scenario": _load_scenario,
}


def loads(text: str, kind: str | None = None, path: str | None = None):
    """Parse a model document from text; `kind` restricts what is accepted."""
    ctx = _Ctx(path)
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as e:
        raise ModelError(f"parse error: {e}", path) from None
    doc = _as_map(doc, ctx, "document")
    if not doc:
        raise ctx.err("empty document", "document")
    version = doc.get("format_version")
    if version is None:
        raise ctx.err("missing format_version", "format_version")
    if str(version) != FORMAT_VERSION:
        raise ctx.err(
            f"unsupported format_version {version!r} (this build reads "
            f"{FORMAT_VERSION!r})", "format_version",
        )
    k = doc.get("kind")
    if k not in KINDS:
        raise ctx.err(f"unknown kind {k!r}; one of {list(KINDS)}", "kind")
    if kind is not None and k != kind:
        raise ctx.err(f"expected a {kind} file, found kind {k!r}", "kind")
    body = {k2: v for k2, v in doc.items() if k2 not in ("format_version", "kind")}
    return _LOADERS[k](body, ctx)


def load(path: str, kind: str | None = None):
    """Read one model file; the result type follows the file's kind."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as e:
        raise ModelError(f"cannot read: {e.strerror or e}", path) from None
    return loads(text, kind, path)


def to_doc(obj) -> dict:
    if isinstance(obj, DepWiringDiagram):
        kind, body = "dep_wiring", _dep_wiring_doc(obj)
    elif isinstance(obj, WiringDiagram):
        kind, body = "wiring", _wiring_doc(obj)
    elif isinstance(obj, DepInterface):
        kind, body = "dependency", _dep_interface_doc(obj)
    elif isinstance(obj, Interface):
        kind, body = "interface", _interface_doc(obj)
    elif isinstance(obj, MealyMachine):
        kind, body = "mealy", _mealy_doc(obj)
    elif isinstance(obj, StockFlowDiagram):
        kind, body = "stockflow", _stockflow_doc(obj)
    elif isinstance(obj, Signal):
        kind, body = "signal", _signal_doc(obj)
    elif isinstance(obj, Scenario):
        kind, body = "scenario", _scenario_doc(obj)
    else:
        raise ValueError(f"cannot serialize objects of type {type(obj).__name__}")
    return {"format_version": FORMAT_VERSION, "kind": kind, **body}


def dumps(obj) -> str:
    """Canonical text form: stable order, derived data omitted."""
    return _dump_yaml(to_doc(obj))


def save(obj, path: str):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dumps(obj))


# ---------------------------------------------------------------------------
# DOT export
# ---------------------------------------------------------------------------

def _q(s: str) -> str:
    return '"' + s.replace("\\", "\\\\").replace('"', '\\"') + '"'


def _dot_wiring(f: WiringDiagram, dom_dep: Relation | None,
                cod_dep: Relation | None) -> str:
    di = ensure_labels(f.dom.inputs, "in")
    do = ensure_labels(f.dom.outputs, "out")
    ci = ensure_labels(f.cod.inputs, "in")
    co = ensure_labels(f.cod.outputs, "out")
    lines = ["digraph wiring {", "  rankdir=LR;"]
    lines.append("  subgraph cluster_outer {")
    lines.append("    label=\"outer\";")
    for j in range(ci.size):
        lines.append(f"    ci{j} [label={_q(ci.label(j))}, shape=circle];")
    for j in range(co.size):
        lines.append(f"    co{j} [label={_q(co.label(j))}, shape=doublecircle];")
    lines.append("  }")
    lines.append("  subgraph cluster_inner {")
    lines.append("    label=\"inner\";")
    for j in range(di.size):
        lines.append(f"    di{j} [label={_q(di.label(j))}, shape=circle];")
    for j in range(do.size):
        lines.append(f"    do{j} [label={_q(do.label(j))}, shape=doublecircle];")
    lines.append("  }")
    for a, b in f.w_in.pairs():
        lines.append(f"  ci{a} -> di{b};")
    for a, b in f.w.pairs():
        lines.append(f"  do{a} -> di{b} [constraint=false];")
    for a, b in f.w_out.pairs():
        lines.append(f"  do{a} -> co{b};")
    if dom_dep is not None:
        for a, b in dom_dep.sorted_pairs():
            lines.append(f"  di{a} -> do{b} [style=dashed];")
    if cod_dep is not None:
        for a, b in cod_dep.sorted_pairs():
            lines.append(f"  ci{a} -> co{b} [style=dashed];")
    lines.append("}")
    return "\n".join(lines) + "\n"


def _dot_stockflow(sf: StockFlowDiagram) -> str:
    stocks = ensure_labels(sf.stocks, "s")
    flows = ensure_labels(sf.flows, "f")
    variables = ensure_labels(sf.variables, "v")
    sumvars = ensure_labels(sf.sumvars, "n")
    inports = ensure_labels(sf.iface.inputs, "in")
    outports = ensure_labels(sf.iface.outputs, "out")
    lines = ["digraph stockflow {", "  rankdir=LR;"]
    groups = (
        ("stocks", "s", stocks, "box"),
        ("flows", "f", flows, "cds"),
        ("vars", "v", variables, "ellipse"),
        ("sumvars", "n", sumvars, "hexagon"),
        ("inports", "p", inports, "plaintext"),
        ("outports", "q", outports, "plaintext"),
    )
    for title, prefix, fs, shape in groups:
        if fs.size == 0:
            continue
        lines.append(f"  subgraph cluster_{title} {{")
        lines.append(f"    label={_q(title)};")
        for j in range(fs.size):
            lines.append(
                f"    {prefix}{j} [label={_q(fs.label(j))}, shape={shape}];"
            )
        lines.append("  }")
    for a in range(sf.outflows.size):
        lines.append(f"  s{sf.outflow_stock(a)} -> f{sf.outflow_flow(a)};")
    for a in range(sf.inflows.size):
        lines.append(f"  f{sf.inflow_flow(a)} -> s{sf.inflow_stock(a)};")
    for k in range(sf.flows.size):
        lines.append(f"  v{sf.flow_var(k)} -> f{k} [style=dotted];")
    for a, b in sf.stock_link.pairs():
        lines.append(f"  s{a} -> v{b};")
    for a, b in sf.stock_sum_link.pairs():
        lines.append(f"  s{a} -> n{b};")
    for a, b in sf.sum_link.pairs():
        lines.append(f"  n{a} -> v{b};")
    for a, b in sf.var_link.pairs():
        lines.append(f"  v{a} -> v{b};")
    for a, b in sf.in_link.pairs():
        lines.append(f"  p{a} -> v{b};")
    for a, b in sf.out_link.pairs():
        lines.append(f"  v{a} -> q{b};")
    for a, b in sf.iface.dep.sorted_pairs():
        lines.append(f"  p{a} -> q{b} [style=dashed];")
    lines.append("}")
    return "\n".join(lines) + "\n"


def export_dot(obj) -> str:
    """Deterministic DOT text; wires solid, dependencies dashed."""
    if isinstance(obj, DepWiringDiagram):
        return _dot_wiring(obj.diagram, obj.dom_dep, obj.cod_dep)
    if isinstance(obj, WiringDiagram):
        return _dot_wiring(obj, None, None)
    if isinstance(obj, StockFlowDiagram):
        return _dot_stockflow(obj)
    raise ValueError(
        f"cannot render objects of type {type(obj).__name__}; expected a "
        f"wiring diagram or stock-flow diagram"
    )


# ---------------------------------------------------------------------------
# CSV emission / ingestion
# ---------------------------------------------------------------------------

def _fmt(x: float) -> str:
    return f"{x:.17g}"


def write_trajectory(tr: Trajectory, path: str):
    """Rows `t,<states>,<outputs>` at full float precision."""
    states = ensure_labels(tr.state_index, "s")
    outputs = ensure_labels(tr.output_index, "y")
    with open(path, "w", encoding="utf-8", newline="") as fh:
        header = ["t"] + list(states.labels or ()) + list(outputs.labels or ())
        fh.write(",".join(header) + "\n")
        for k in range(len(tr.times)):
            row = [_fmt(float(tr.times[k]))]
            row += [_fmt(float(x)) for x in tr.states[k]]
            row += [_fmt(float(x)) for x in tr.outputs[k]]
            fh.write(",".join(row) + "\n")


def read_inputs_csv(path: str, inputs: FinSet) -> tuple[list[str], np.ndarray]:
    """Read a `step,<inputs…>` table whose columns match the input names."""
    import csv

    fs = ensure_labels(inputs, "in")
    try:
        fh = open(path, "r", encoding="utf-8", newline="")
    except OSError as e:
        raise ModelError(f"cannot read: {e.strerror or e}", path) from None
    with fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ModelError("empty input table", path) from None
        expected = ["step"] + list(fs.labels or ())
        if [h.strip() for h in header] != expected:
            raise ModelError(
                f"header must be {','.join(expected)!r}, got "
                f"{','.join(header)!r}", path, "line 1",
            )
        steps: list[str] = []
        rows: list[list[float]] = []
        for i, row in enumerate(reader, start=2):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if len(row) != len(expected):
                raise ModelError(
                    f"expected {len(expected)} columns, got {len(row)}",
                    path, f"line {i}",
                )
            steps.append(row[0].strip())
            try:
                rows.append([float(x) for x in row[1:]])
            except ValueError:
                raise ModelError(
                    "non-numeric input value", path, f"line {i}"
                ) from None
    return steps, np.array(rows, dtype=np.float64).reshape(len(steps), fs.size)


def write_run_csv(
    path: str, steps: Sequence[str], states: np.ndarray, outputs: np.ndarray,
    state_index: FinSet, output_index: FinSet,
):
    """Rows `step,<states>,<outputs>` for a discrete run."""
    si = ensure_labels(state_index, "s")
    oi = ensure_labels(output_index, "y")
    with open(path, "w", encoding="utf-8", newline="") as fh:
        header = ["step"] + list(si.labels or ()) + list(oi.labels or ())
        fh.write(",".join(header) + "\n")
        for k, tag in enumerate(steps):
            row = [str(tag)]
            row += [_fmt(float(x)) for x in states[k]]
            row += [_fmt(float(x)) for x in outputs[k]]
            fh.write(",".join(row) + "\n")


# ---------------------------------------------------------------------------
# Composition helper shared by the CLI and tests
# ---------------------------------------------------------------------------

def compose_models(
    wiring: DepWiringDiagram, models: Sequence[Union[MealyMachine, StockFlowDiagram]]
):
    """Apply a certified wiring to one or more machines / diagrams.

    Several models are first placed side by side (left-to-right).
    """
    if not models:
        raise ValueError("nothing to compose")
    if all(isinstance(m, MealyMachine) for m in models):
        inner: Union[MealyMachine, StockFlowDiagram] = (
            models[0] if len(models) == 1 else parallel(list(models))
        )
        return apply_wiring(wiring, inner)
    if all(isinstance(m, StockFlowDiagram) for m in models):
        from .stockflow import apply_wiring_sf, parallel_sf

        sf = models[0] if len(models) == 1 else parallel_sf(list(models))
        return apply_wiring_sf(wiring, sf)
    raise ValueError("cannot mix machines and stock-flow diagrams in one composition")

"""Open stock-flow diagrams.

A stock-flow diagram has stocks connected by flows, auxiliary variables
defined by expressions over linked components, summation variables that total
selected stocks, and an input/output port interface. Link spans record which
components each variable may read; validity additionally requires flows to
enter and leave a stock at most once each, an acyclic variable graph, ports
that match the interface, and a declared port dependency that covers the
in-port -> variable-chain -> out-port paths (including a path of length zero
through a single variable).

Diagrams compose along the same wiring diagrams as machines: applying a
diagram rewires ports and splices traced out-ports into the variable layer.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from functools import reduce
from typing import Sequence

from . import expr as ex
from .finset import (
    DiGraph,
    FinMap,
    FinSet,
    Pair,
    Relation,
    Span,
    compose_spans,
    ensure_labels,
    finmap_coproduct,
    finset_coproduct,
    labeled,
    path_closure,
    span_coproduct,
    topological_order,
)
from .wiring import DepInterface, DepWiringDiagram, Interface, oplus_dep_interface

AUX_NAMESPACES = ("stock", "sumvar", "var", "input")


class BuildError(ValueError):
    """A structural problem found while sealing a builder."""


@dataclass(frozen=True)
class Finding:
    condition: str  # one of "1", "2", "3", "4", "aux"
    message: str


@dataclass(frozen=True)
class ValidationReport:
    findings: tuple[Finding, ...]

    @property
    def ok(self) -> bool:
        return not self.findings

    def __str__(self) -> str:
        if self.ok:
            return "valid"
        return "\n".join(f"[{f.condition}] {f.message}" for f in self.findings)


class StockFlowInvalid(ValueError):
    def __init__(self, report: ValidationReport):
        super().__init__(str(report))
        self.report = report


@dataclass(frozen=True)
class StockFlowDiagram:
    stocks: FinSet
    flows: FinSet
    variables: FinSet
    sumvars: FinSet
    inflows: FinSet          # one entry per (stock, flow) inflow attachment
    inflow_stock: FinMap
    inflow_flow: FinMap
    outflows: FinSet
    outflow_stock: FinMap
    outflow_flow: FinMap
    flow_var: FinMap         # each flow's rate variable
    stock_link: Span         # stocks    <- . -> variables
    stock_sum_link: Span     # stocks    <- . -> sumvars
    sum_link: Span           # sumvars   <- . -> variables
    var_link: Span           # variables <- . -> variables (source, reader)
    in_link: Span            # in ports  <- . -> variables
    out_link: Span           # variables <- . -> out ports
    aux: ex.ExprFun          # (stock, sumvar, var, input) -> variables
    iface: DepInterface

    def __post_init__(self):
        pairs = [
            (self.inflow_stock, self.inflows, self.stocks, "inflow stock map"),
            (self.inflow_flow, self.inflows, self.flows, "inflow flow map"),
            (self.outflow_stock, self.outflows, self.stocks, "outflow stock map"),
            (self.outflow_flow, self.outflows, self.flows, "outflow flow map"),
            (self.flow_var, self.flows, self.variables, "flow rate map"),
        ]
        for fn, dom, cod, what in pairs:
            if fn.dom.size != dom.size or fn.cod.size != cod.size:
                raise ValueError(f"{what} has mismatched endpoints")
        spans = [
            (self.stock_link, self.stocks, self.variables, "stock link"),
            (self.stock_sum_link, self.stocks, self.sumvars, "stock-sum link"),
            (self.sum_link, self.sumvars, self.variables, "sum link"),
            (self.var_link, self.variables, self.variables, "var link"),
        ]
        for sp, left, right, what in spans:
            if sp.left.cod.size != left.size or sp.right.cod.size != right.size:
                raise ValueError(f"{what} has mismatched endpoints")
        if self.in_link.right.cod.size != self.variables.size:
            raise ValueError("in link must target variables")
        if self.out_link.left.cod.size != self.variables.size:
            raise ValueError("out link must start at variables")
        ns = tuple(name for name, _ in self.aux.signature)
        if ns != AUX_NAMESPACES:
            raise ValueError(f"aux must have namespaces {AUX_NAMESPACES}, got {ns}")
        sizes = tuple(fs.size for _, fs in self.aux.signature)
        expect = (self.stocks.size, self.sumvars.size, self.variables.size,
                  self.iface.inputs.size)
        if sizes != expect:
            raise ValueError(f"aux namespace sizes {sizes} do not match {expect}")
        if self.aux.output.size != self.variables.size:
            raise ValueError("aux must produce one value per variable")

    @property
    def inports(self) -> FinSet:
        return self.iface.inputs

    @property
    def outports(self) -> FinSet:
        return self.iface.outputs

    def var_graph(self) -> DiGraph:
        return DiGraph.from_span(self.var_link)


# ---------------------------------------------------------------------------
# Validation
# ---------------------------------------------------------------------------

def _induced_dependency(
    in_link: Span, var_link: Span, out_link: Span, inputs: FinSet, outputs: FinSet
) -> Relation:
    """Port pairs joined by in-link, a (possibly empty) variable path, out-link."""
    reach = path_closure(DiGraph.from_span(var_link), reflexive=True)
    pairs: set[Pair] = set()
    for p, v1 in in_link.pairs():
        for v2, o in out_link.pairs():
            if (v1, v2) in reach.pairs:
                pairs.add((p, o))
    return Relation(inputs, outputs, frozenset(pairs))


def interface_dependency(sf: StockFlowDiagram) -> Relation:
    """The minimal dependency a valid declaration must contain."""
    return _induced_dependency(
        sf.in_link, sf.var_link, sf.out_link, sf.iface.inputs, sf.iface.outputs
    )


def validate_stockflow(sf: StockFlowDiagram) -> ValidationReport:
    """Check the four validity conditions plus the variable-read condition."""
    findings: list[Finding] = []

    if not sf.inflow_flow.is_injective():
        findings.append(Finding("1", "a flow enters more than one stock"))
    if not sf.outflow_flow.is_injective():
        findings.append(Finding("1", "a flow leaves more than one stock"))

    topo = topological_order(sf.var_graph())
    if topo.cycle is not None:
        names = " -> ".join(
            sf.variables.label(v) for v in topo.cycle.vertices
        )
        findings.append(Finding("2", f"variable cycle: {names}"))

    if sf.in_link.left.cod.size != sf.iface.inputs.size:
        findings.append(Finding(
            "3",
            f"in links reference {sf.in_link.left.cod.size} ports but the "
            f"interface has {sf.iface.inputs.size} inputs",
        ))
    if sf.out_link.right.cod.size != sf.iface.outputs.size:
        findings.append(Finding(
            "3",
            f"out links reference {sf.out_link.right.cod.size} ports but the "
            f"interface has {sf.iface.outputs.size} outputs",
        ))

    if not any(f.condition == "3" for f in findings):
        induced = interface_dependency(sf)
        missing = sorted(induced.pairs - sf.iface.dep.pairs)
        if missing:
            names = ", ".join(
                f"({sf.iface.inputs.label(a)} -> {sf.iface.outputs.label(b)})"
                for a, b in missing
            )
            findings.append(Finding(
                "4", f"declared dependency is missing induced pair(s): {names}"
            ))

    link_rel = {
        "stock": {(v, s) for s, v in sf.stock_link.pairs()},
        "sumvar": {(v, z) for z, v in sf.sum_link.pairs()},
        "var": {(v, u) for u, v in sf.var_link.pairs()},
        "input": {(v, p) for p, v in sf.in_link.pairs()},
    }
    for j in range(sf.variables.size):
        for ns in ("stock", "sumvar", "var", "input"):
            allowed = {b for v, b in link_rel[ns] if v == j}
            bad = sf.aux.coord_refs(j, ns) - allowed
            if bad:
                fs = dict(sf.aux.signature)[ns]
                names = [fs.label(b) for b in sorted(bad)]
                findings.append(Finding(
                    "aux",
                    f"variable {sf.variables.label(j)!r} reads unlinked "
                    f"{ns}(s) {names}",
                ))
    return ValidationReport(tuple(findings))


def require_valid(sf: StockFlowDiagram) -> StockFlowDiagram:
    report = validate_stockflow(sf)
    if not report.ok:
        raise StockFlowInvalid(report)
    return sf


# ---------------------------------------------------------------------------
# Builder
# ---------------------------------------------------------------------------

class StockFlowBuilder:
    """Incremental construction with name-based references.

    Links that a variable's expression implies (its free variables) are
    derived automatically; add_link declares extra read permissions beyond
    what the expressions use. Sealing checks references and assembles the
    diagram; full validity is checked by validate_stockflow.
    """

    _LINK_KINDS = ("stock", "stock_sum", "sum", "var", "in", "out")

    def __init__(self):
        self._stocks: list[str] = []
        self._sumvars: list[tuple[str, list[str]]] = []
        self._variables: list[str] = []
        self._aux: dict[str, ex.Expr] = {}
        self._inports: list[str] = []
        self._outports: list[tuple[str, list[str]]] = []
        self._flows: list[tuple[str, str, str | None, str | None]] = []
        self._links: list[tuple[str, str, str]] = []
        self._dependency: list[tuple[str, str]] | None = None

    def add_stock(self, name: str) -> "StockFlowBuilder":
        self._stocks.append(name)
        return self

    def add_sumvar(self, name: str, stocks: Sequence[str] = ()) -> "StockFlowBuilder":
        self._sumvars.append((name, list(stocks)))
        return self

    def add_var(self, name: str, expression: "str | ex.Expr | None" = None) -> "StockFlowBuilder":
        self._variables.append(name)
        if expression is not None:
            self.set_aux(name, expression)
        return self

    def set_aux(self, name: str, expression: "str | ex.Expr") -> "StockFlowBuilder":
        if isinstance(expression, str):
            expression = ex.parse(expression)
        self._aux[name] = expression
        return self

    def add_inport(self, name: str) -> "StockFlowBuilder":
        self._inports.append(name)
        return self

    def add_outport(self, name: str, variables: Sequence[str] = ()) -> "StockFlowBuilder":
        self._outports.append((name, list(variables)))
        return self

    def add_flow(
        self,
        name: str,
        rate: str,
        source: str | None = None,
        target: str | None = None,
    ) -> "StockFlowBuilder":
        """A flow with rate variable `rate`, draining `source` into `target`."""
        self._flows.append((name, rate, source, target))
        return self

    def add_link(self, kind: str, src: str, dst: str) -> "StockFlowBuilder":
        if kind not in self._LINK_KINDS:
            raise BuildError(f"unknown link kind {kind!r}")
        self._links.append((kind, src, dst))
        return self

    def set_dependency(self, pairs: Sequence[tuple[str, str]]) -> "StockFlowBuilder":
        self._dependency = [(a, b) for a, b in pairs]
        return self

    def seal(self) -> StockFlowDiagram:
        def mkset(names: Sequence[str], what: str) -> FinSet:
            if len(set(names)) != len(names):
                dupes = sorted({n for n in names if names.count(n) > 1})
                raise BuildError(f"duplicate {what} name(s): {dupes}")
            return labeled(names)

        stocks = mkset(self._stocks, "stock")
        sumvars = mkset([n for n, _ in self._sumvars], "sumvar")
        variables = mkset(self._variables, "variable")
        inports = mkset(self._inports, "in port")
        outports = mkset([n for n, _ in self._outports], "out port")
        flows = mkset([n for n, *_ in self._flows], "flow")

        cross = self._stocks + [n for n, _ in self._sumvars] + self._variables + self._inports
        clash = sorted({n for n in cross if cross.count(n) > 1})
        if clash:
            raise BuildError(
                f"name(s) used by more than one referenceable kind: {clash}"
            )

        missing_aux = [n for n in self._variables if n not in self._aux]
        if missing_aux:
            raise BuildError(f"variable(s) without an expression: {missing_aux}")
        stray = [n for n in self._aux if n not in self._variables]
        if stray:
            raise BuildError(f"expression(s) for unknown variable(s): {stray}")

        try:
            aux = ex.ExprFun(
                (("stock", stocks), ("sumvar", sumvars), ("var", variables),
                 ("input", inports)),
                variables,
                tuple(self._aux[n] for n in self._variables),
            )
        except ex.ResolutionError as exc:
            raise BuildError(f"expression reference error: {exc.args[0]}") from None

        def idx(fs: FinSet, name: str, what: str) -> int:
            try:
                return fs.index_of(name)
            except KeyError:
                raise BuildError(f"unknown {what} {name!r}") from None

        in_stock, in_flow, out_stock, out_flow = [], [], [], []
        for k, (name, rate, source, target) in enumerate(self._flows):
            idx(variables, rate, "rate variable")
            if source is not None:
                out_stock.append(idx(stocks, source, "stock"))
                out_flow.append(k)
            if target is not None:
                in_stock.append(idx(stocks, target, "stock"))
                in_flow.append(k)
        inflows = FinSet(len(in_stock))
        outflows = FinSet(len(out_stock))
        flow_var = FinMap(
            flows, variables,
            tuple(variables.index_of(rate) for _, rate, *_ in self._flows),
        )

        # links implied by expressions, then explicit declarations, deduped
        link_pairs: dict[str, list[Pair]] = {k: [] for k in self._LINK_KINDS}

        def add_pair(kind: str, pair: Pair):
            if pair not in link_pairs[kind]:
                link_pairs[kind].append(pair)

        for j in range(variables.size):
            for ns, kind in (("stock", "stock"), ("sumvar", "sum"),
                             ("var", "var"), ("input", "in")):
                for b in sorted(aux.coord_refs(j, ns)):
                    add_pair(kind, (b, j))
        for name, members in self._sumvars:
            z = sumvars.index_of(name)
            for s in members:
                add_pair("stock_sum", (idx(stocks, s, "stock"), z))
        for name, members in self._outports:
            o = outports.index_of(name)
            for v in members:
                add_pair("out", (idx(variables, v, "variable"), o))
        endpoint_sets = {
            "stock": (stocks, variables),
            "stock_sum": (stocks, sumvars),
            "sum": (sumvars, variables),
            "var": (variables, variables),
            "in": (inports, variables),
            "out": (variables, outports),
        }
        kindname = {
            "stock": ("stock", "variable"), "stock_sum": ("stock", "sumvar"),
            "sum": ("sumvar", "variable"), "var": ("variable", "variable"),
            "in": ("in port", "variable"), "out": ("variable", "out port"),
        }
        for kind, src, dst in self._links:
            a, b = endpoint_sets[kind]
            wa, wb = kindname[kind]
            add_pair(kind, (idx(a, src, wa), idx(b, dst, wb)))

        def span_of(kind: str) -> Span:
            a, b = endpoint_sets[kind]
            return Span.from_pairs(a, b, link_pairs[kind])

        in_link = span_of("in")
        var_link = span_of("var")
        out_link = span_of("out")
        if self._dependency is None:
            dep = _induced_dependency(in_link, var_link, out_link, inports, outports)
        else:
            dep = Relation(inports, outports, frozenset(
                (idx(inports, a, "in port"), idx(outports, b, "out port"))
                for a, b in self._dependency
            ))

        return StockFlowDiagram(
            stocks=stocks,
            flows=flows,
            variables=variables,
            sumvars=sumvars,
            inflows=inflows,
            inflow_stock=FinMap(inflows, stocks, tuple(in_stock)),
            inflow_flow=FinMap(inflows, flows, tuple(in_flow)),
            outflows=outflows,
            outflow_stock=FinMap(outflows, stocks, tuple(out_stock)),
            outflow_flow=FinMap(outflows, flows, tuple(out_flow)),
            flow_var=flow_var,
            stock_link=span_of("stock"),
            stock_sum_link=span_of("stock_sum"),
            sum_link=span_of("sum"),
            var_link=var_link,
            in_link=in_link,
            out_link=out_link,
            aux=aux,
            iface=DepInterface(Interface(inports, outports), dep),
        )


# ---------------------------------------------------------------------------
# The wiring-diagram algebra
# ---------------------------------------------------------------------------

def apply_wiring_sf(
    f: DepWiringDiagram, sf: StockFlowDiagram
) -> StockFlowDiagram:
    """Rewire a valid diagram along a certified wiring diagram.

    Ports are rethreaded through the in/out wires, and every traced out-port
    becomes variable -> variable links; in-port references inside variable
    expressions are replaced by the sum of their new sources (outer inputs
    plus traced variables), so the result stays expression-backed.
    """
    if (sf.iface.inputs.size != f.diagram.dom.inputs.size
            or sf.iface.outputs.size != f.diagram.dom.outputs.size):
        raise ValueError("diagram interface does not match the wiring's dom")
    if sf.iface.dep.pairs != f.dom_dep.pairs:
        raise ValueError("diagram dependency does not match the wiring's dom")
    require_valid(sf)

    diagram = f.diagram
    new_inports = ensure_labels(diagram.cod.inputs, "in")
    new_outports = ensure_labels(diagram.cod.outputs, "out")

    new_in_link = compose_spans(diagram.w_in, sf.in_link)
    new_in_link = Span(
        new_in_link.apex,
        FinMap(new_in_link.apex, new_inports, new_in_link.left.targets),
        new_in_link.right,
    )
    new_out_link = compose_spans(sf.out_link, diagram.w_out)
    new_out_link = Span(
        new_out_link.apex,
        new_out_link.left,
        FinMap(new_out_link.apex, new_outports, new_out_link.right.targets),
    )
    gained = compose_spans(compose_spans(sf.out_link, diagram.w), sf.in_link)
    # same endpoint sets on both sides: concatenate apexes, no index shift
    apex = FinSet(sf.var_link.apex.size + gained.apex.size)
    new_var_link = Span(
        apex,
        FinMap(apex, sf.variables,
               sf.var_link.left.targets + gained.left.targets),
        FinMap(apex, sf.variables,
               sf.var_link.right.targets + gained.right.targets),
    )

    # replace each in-port reference by its wired-in sum
    out_by_port: dict[int, list[int]] = {}
    for v, q in sf.out_link.pairs():
        out_by_port.setdefault(q, []).append(v)
    repl: dict[tuple[str, str], ex.Expr] = {}
    for p in range(sf.iface.inputs.size):
        terms: list[ex.Expr] = [
            ex.Ref(new_inports.label(yi), "input")
            for yi, p2 in diagram.w_in.pairs() if p2 == p
        ]
        for q, p2 in diagram.w.pairs():
            if p2 != p:
                continue
            terms += [
                ex.Ref(sf.variables.label(v), "var") for v in out_by_port.get(q, [])
            ]
        repl[("input", sf.iface.inputs.label(p))] = ex.sum_exprs(terms)
    new_aux = ex.ExprFun(
        (("stock", sf.stocks), ("sumvar", sf.sumvars), ("var", sf.variables),
         ("input", new_inports)),
        sf.variables,
        tuple(ex.substitute(e, repl) for e in sf.aux.exprs),
    )

    out = replace(
        sf,
        in_link=new_in_link,
        out_link=new_out_link,
        var_link=new_var_link,
        aux=new_aux,
        iface=DepInterface(Interface(new_inports, new_outports), f.cod_dep),
    )
    report = validate_stockflow(out)
    if not report.ok:  # pragma: no cover - law-guaranteed
        raise RuntimeError(f"rewired diagram failed validation: {report}")
    return out


def _par2_sf(a: StockFlowDiagram, b: StockFlowDiagram) -> StockFlowDiagram:
    stocks, _, _ = finset_coproduct(a.stocks, b.stocks)
    flows, _, _ = finset_coproduct(a.flows, b.flows)
    variables, _, _ = finset_coproduct(a.variables, b.variables)
    sumvars, _, _ = finset_coproduct(a.sumvars, b.sumvars)
    inflows, _, _ = finset_coproduct(a.inflows, b.inflows)
    outflows, _, _ = finset_coproduct(a.outflows, b.outflows)
    iface = oplus_dep_interface(a.iface, b.iface)

    def cmap(f: FinMap, g: FinMap, dom: FinSet, cod: FinSet) -> FinMap:
        m = finmap_coproduct(f, g)
        return FinMap(dom, cod, m.targets)

    def cspan(x: Span, y: Span, left: FinSet, right: FinSet) -> Span:
        s = span_coproduct(x, y)
        return Span(
            s.apex,
            FinMap(s.apex, left, s.left.targets),
            FinMap(s.apex, right, s.right.targets),
        )

    def shift(e: ex.Expr, prefix: str) -> ex.Expr:
        return ex.rename_refs(e, prefix, AUX_NAMESPACES)

    aux = ex.ExprFun(
        (("stock", stocks), ("sumvar", sumvars), ("var", variables),
         ("input", iface.inputs)),
        variables,
        tuple(shift(e, "left.") for e in a.aux.exprs)
        + tuple(shift(e, "right.") for e in b.aux.exprs),
    )
    return StockFlowDiagram(
        stocks=stocks,
        flows=flows,
        variables=variables,
        sumvars=sumvars,
        inflows=inflows,
        inflow_stock=cmap(a.inflow_stock, b.inflow_stock, inflows, stocks),
        inflow_flow=cmap(a.inflow_flow, b.inflow_flow, inflows, flows),
        outflows=outflows,
        outflow_stock=cmap(a.outflow_stock, b.outflow_stock, outflows, stocks),
        outflow_flow=cmap(a.outflow_flow, b.outflow_flow, outflows, flows),
        flow_var=cmap(a.flow_var, b.flow_var, flows, variables),
        stock_link=cspan(a.stock_link, b.stock_link, stocks, variables),
        stock_sum_link=cspan(a.stock_sum_link, b.stock_sum_link, stocks, sumvars),
        sum_link=cspan(a.sum_link, b.sum_link, sumvars, variables),
        var_link=cspan(a.var_link, b.var_link, variables, variables),
        in_link=cspan(a.in_link, b.in_link, iface.inputs, variables),
        out_link=cspan(a.out_link, b.out_link, variables, iface.outputs),
        aux=aux,
        iface=iface,
    )


def parallel_sf(sfs: Sequence[StockFlowDiagram]) -> StockFlowDiagram:
    """Side-by-side product (binary fold; labels nest left/right)."""
    if not sfs:
        raise ValueError("parallel_sf needs at least one diagram")
    return reduce(_par2_sf, sfs)

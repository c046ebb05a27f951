"""Directed wiring diagrams with input/output dependency tracking.

A wiring diagram rewires an inner interface (dom) into an outer one (cod)
through three wire spans: outer-in to inner-in, inner-out to inner-in (trace
wires, the feedback), and inner-out to outer-out. A dependency relation on an
interface records which outputs read which inputs instantaneously; a diagram
is only composable with stateful boxes when its trace wires never close an
instantaneous loop, which is witnessed by a topological order of the
dependency graph.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

from .finset import (
    CycleWitness,
    DiGraph,
    FinMap,
    FinSet,
    Pair,
    Relation,
    Span,
    compose_spans,
    finset_coproduct,
    is_acyclic,
    path_closure,
    relation_coproduct,
    span_coproduct,
    span_to_relation,
    topological_order,
)

Dependency = Relation  # inputs -> outputs of a single interface


@dataclass(frozen=True)
class Interface:
    inputs: FinSet
    outputs: FinSet


@dataclass(frozen=True)
class DepInterface:
    """An interface together with its input/output dependency relation."""

    interface: Interface
    dep: Dependency

    def __post_init__(self):
        if (self.dep.src.size != self.interface.inputs.size
                or self.dep.tgt.size != self.interface.outputs.size):
            raise ValueError("dependency endpoints must match the interface")

    @property
    def inputs(self) -> FinSet:
        return self.interface.inputs

    @property
    def outputs(self) -> FinSet:
        return self.interface.outputs


@dataclass(frozen=True)
class WiringDiagram:
    """A morphism of interfaces dom -> cod given by three wire spans."""

    dom: Interface
    cod: Interface
    w_in: Span   # cod.inputs  <- . -> dom.inputs
    w: Span      # dom.outputs <- . -> dom.inputs   (trace wires)
    w_out: Span  # dom.outputs <- . -> cod.outputs

    def __post_init__(self):
        checks = [
            (self.w_in.left.cod, self.cod.inputs, "w_in source"),
            (self.w_in.right.cod, self.dom.inputs, "w_in target"),
            (self.w.left.cod, self.dom.outputs, "trace source"),
            (self.w.right.cod, self.dom.inputs, "trace target"),
            (self.w_out.left.cod, self.dom.outputs, "w_out source"),
            (self.w_out.right.cod, self.cod.outputs, "w_out target"),
        ]
        for got, want, what in checks:
            if got.size != want.size:
                raise ValueError(
                    f"{what} indexes a set of size {got.size}, expected {want.size}"
                )

    @staticmethod
    def from_wires(
        dom: Interface,
        cod: Interface,
        in_wires: Sequence[Pair] = (),
        trace_wires: Sequence[Pair] = (),
        out_wires: Sequence[Pair] = (),
    ) -> "WiringDiagram":
        """Build from wire lists: (outer in, inner in), (inner out, inner in),
        (inner out, outer out)."""
        return WiringDiagram(
            dom,
            cod,
            Span.from_pairs(cod.inputs, dom.inputs, in_wires),
            Span.from_pairs(dom.outputs, dom.inputs, trace_wires),
            Span.from_pairs(dom.outputs, cod.outputs, out_wires),
        )

    @staticmethod
    def identity(iface: Interface) -> "WiringDiagram":
        return WiringDiagram(
            iface,
            iface,
            Span.identity(iface.inputs),
            Span.empty(iface.outputs, iface.inputs),
            Span.identity(iface.outputs),
        )


# ---------------------------------------------------------------------------
# The dependency graph of a diagram and its consequences
# ---------------------------------------------------------------------------

def dep_graph(f: WiringDiagram, d: Dependency) -> DiGraph:
    """Vertices are dom ports (inputs then outputs); edges are trace wires
    (out -> in) followed by dependency pairs (in -> out)."""
    n_in = f.dom.inputs.size
    n_out = f.dom.outputs.size
    vlabels = tuple(
        [f"in.{f.dom.inputs.label(i)}" for i in range(n_in)]
        + [f"out.{f.dom.outputs.label(i)}" for i in range(n_out)]
    )
    vertices = FinSet(n_in + n_out, vlabels if len(set(vlabels)) == len(vlabels) else None)
    srcs: list[int] = []
    tgts: list[int] = []
    elabels: list[str] = []
    for k, (q, p) in enumerate(f.w.pairs()):
        srcs.append(n_in + q)
        tgts.append(p)
        elabels.append(f"wire[{k}]:{f.dom.outputs.label(q)}->{f.dom.inputs.label(p)}")
    for a, b in sorted(d.pairs):
        srcs.append(a)
        tgts.append(n_in + b)
        elabels.append(f"dep:{f.dom.inputs.label(a)}->{f.dom.outputs.label(b)}")
    edges = FinSet(len(srcs), tuple(elabels) if len(set(elabels)) == len(elabels) else None)
    return DiGraph(
        vertices,
        edges,
        FinMap(edges, vertices, tuple(srcs)),
        FinMap(edges, vertices, tuple(tgts)),
    )


def is_acyclic_morphism(f: WiringDiagram, d: Dependency) -> bool:
    return is_acyclic(dep_graph(f, d))


def find_morphism_cycle(f: WiringDiagram, d: Dependency) -> CycleWitness | None:
    return topological_order(dep_graph(f, d)).cycle


def dependency_pushforward(f: WiringDiagram, d: Dependency) -> Dependency:
    """The induced dependency on cod: an outer output depends on an outer
    input when some in-wire target reaches some out-wire source through the
    dependency graph."""
    _check_dep_endpoints(f, d)
    g = dep_graph(f, d)
    reach = path_closure(g)
    n_in = f.dom.inputs.size
    pairs = set()
    for yi, p in f.w_in.pairs():
        for q, yo in f.w_out.pairs():
            if (p, n_in + q) in reach.pairs:
                pairs.add((yi, yo))
    return Relation(f.cod.inputs, f.cod.outputs, frozenset(pairs))


def dependency_pushforward_oracle(f: WiringDiagram, d: Dependency) -> Dependency:
    """Brute-force route: enumerate alternating chains
    in-wire, dep, (trace wire, dep)*, out-wire with matching endpoints,
    bounding the number of dep steps by the number of inner inputs."""
    _check_dep_endpoints(f, d)
    deps = sorted(d.pairs)
    traces = list(f.w.pairs())
    out_by_src: dict[int, list[int]] = {}
    for q, yo in f.w_out.pairs():
        out_by_src.setdefault(q, []).append(yo)
    bound = f.dom.inputs.size
    pairs: set[Pair] = set()

    def chains_from(p: int, steps: int) -> set[int]:
        """Inner outputs reachable from inner input p via alternating chains."""
        reached: set[int] = set()
        if steps > bound:
            return reached
        for a, b in deps:
            if a != p:
                continue
            reached.add(b)
            for q, p2 in traces:
                if q == b:
                    reached |= chains_from(p2, steps + 1)
        return reached

    for yi, p in f.w_in.pairs():
        for b in chains_from(p, 1):
            for yo in out_by_src.get(b, []):
                pairs.add((yi, yo))
    return Relation(f.cod.inputs, f.cod.outputs, frozenset(pairs))


def _check_dep_endpoints(f: WiringDiagram, d: Dependency):
    if d.src.size != f.dom.inputs.size or d.tgt.size != f.dom.outputs.size:
        raise ValueError("dependency endpoints must match the diagram's dom ports")


# ---------------------------------------------------------------------------
# Composition and monoidal product
# ---------------------------------------------------------------------------

def compose_dwd(f: WiringDiagram, g: WiringDiagram) -> WiringDiagram:
    """Composite diagram of f: X->Y then g: Y->Z.

    In-wires thread through Y; out-wires likewise; the composite trace is f's
    trace plus chains out of f into g's trace and back into f.
    """
    if f.cod.inputs.size != g.dom.inputs.size or f.cod.outputs.size != g.dom.outputs.size:
        raise ValueError("middle interfaces do not match")
    w_in = compose_spans(g.w_in, f.w_in)
    w_out = compose_spans(f.w_out, g.w_out)
    threaded = compose_spans(compose_spans(f.w_out, g.w), f.w_in)
    # both spans share f's port sets; concatenate apexes without shifting
    apex = FinSet(f.w.apex.size + threaded.apex.size)
    w = Span(
        apex,
        FinMap(apex, f.dom.outputs, f.w.left.targets + threaded.left.targets),
        FinMap(apex, f.dom.inputs, f.w.right.targets + threaded.right.targets),
    )
    return WiringDiagram(f.dom, g.cod, w_in, w, w_out)


def oplus_interface(x: Interface, y: Interface) -> Interface:
    ins, _, _ = finset_coproduct(x.inputs, y.inputs)
    outs, _, _ = finset_coproduct(x.outputs, y.outputs)
    return Interface(ins, outs)


def oplus_dwd(f: WiringDiagram, g: WiringDiagram) -> WiringDiagram:
    """Side-by-side product: blockwise coproduct of every span."""
    dom = oplus_interface(f.dom, g.dom)
    cod = oplus_interface(f.cod, g.cod)

    def fix(s: Span, left: FinSet, right: FinSet) -> Span:
        return Span(s.apex, FinMap(s.apex, left, s.left.targets),
                    FinMap(s.apex, right, s.right.targets))

    return WiringDiagram(
        dom,
        cod,
        fix(span_coproduct(f.w_in, g.w_in), cod.inputs, dom.inputs),
        fix(span_coproduct(f.w, g.w), dom.outputs, dom.inputs),
        fix(span_coproduct(f.w_out, g.w_out), dom.outputs, cod.outputs),
    )


def oplus_dep_interface(x: DepInterface, y: DepInterface) -> DepInterface:
    return DepInterface(
        oplus_interface(x.interface, y.interface),
        relation_coproduct(x.dep, y.dep),
    )


# ---------------------------------------------------------------------------
# Certified diagrams
# ---------------------------------------------------------------------------

class WiringValidationError(ValueError):
    """A diagram/dependency combination that is not composable."""


class WiringCycleError(WiringValidationError):
    def __init__(self, witness: CycleWitness, graph: DiGraph):
        super().__init__(witness.describe(graph))
        self.witness = witness
        self.graph = graph


class DependencyCoverageError(WiringValidationError):
    def __init__(self, missing: tuple[Pair, ...], f: WiringDiagram):
        names = ", ".join(
            f"({f.cod.inputs.label(a)} -> {f.cod.outputs.label(b)})"
            for a, b in missing
        )
        super().__init__(
            f"declared outer dependency is missing induced pair(s): {names}"
        )
        self.missing = missing


@dataclass(frozen=True)
class DepWiringDiagram:
    """A diagram whose trace loops are broken by the dependency structure.

    The certificate is a topological order of the dependency graph's port
    vertices (dom inputs first block, dom outputs second block); it doubles
    as an evaluation order for feedback.
    """

    diagram: WiringDiagram
    dom_dep: Dependency
    cod_dep: Dependency
    certificate: tuple[int, ...]

    @property
    def dom(self) -> DepInterface:
        return DepInterface(self.diagram.dom, self.dom_dep)

    @property
    def cod(self) -> DepInterface:
        return DepInterface(self.diagram.cod, self.cod_dep)


def validate_ddwd(
    f: WiringDiagram, d_dom: Dependency, d_cod: Dependency
) -> DepWiringDiagram:
    """Certify a diagram: acyclic dependency graph and covered pushforward.

    Raises WiringCycleError (with the witness cycle) or
    DependencyCoverageError (with the missing pairs).
    """
    _check_dep_endpoints(f, d_dom)
    if d_cod.src.size != f.cod.inputs.size or d_cod.tgt.size != f.cod.outputs.size:
        raise ValueError("outer dependency endpoints must match cod ports")
    g = dep_graph(f, d_dom)
    topo = topological_order(g)
    if topo.cycle is not None:
        raise WiringCycleError(topo.cycle, g)
    pushed = dependency_pushforward(f, d_dom)
    missing = tuple(sorted(pushed.pairs - d_cod.pairs))
    if missing:
        raise DependencyCoverageError(missing, f)
    assert topo.order is not None
    return DepWiringDiagram(f, d_dom, d_cod, topo.order)


def compose_ddwd(f: DepWiringDiagram, g: DepWiringDiagram) -> DepWiringDiagram:
    """Composite of certified diagrams; the result is certified afresh."""
    if (f.cod_dep.src.size != g.dom_dep.src.size
            or f.cod_dep.tgt.size != g.dom_dep.tgt.size
            or f.cod_dep.pairs != g.dom_dep.pairs):
        raise ValueError("middle dependencies do not match")
    composite = compose_dwd(f.diagram, g.diagram)
    try:
        return validate_ddwd(composite, f.dom_dep, g.cod_dep)
    except WiringValidationError as exc:  # pragma: no cover - law-guaranteed
        raise RuntimeError(
            f"composite of certified diagrams failed certification: {exc}"
        ) from exc


def oplus_ddwd(f: DepWiringDiagram, g: DepWiringDiagram) -> DepWiringDiagram:
    """Monoidal product of certified diagrams."""
    return validate_ddwd(
        oplus_dwd(f.diagram, g.diagram),
        relation_coproduct(f.dom_dep, g.dom_dep),
        relation_coproduct(f.cod_dep, g.cod_dep),
    )


def identity_ddwd(iface: DepInterface) -> DepWiringDiagram:
    return validate_ddwd(
        WiringDiagram.identity(iface.interface), iface.dep, iface.dep
    )


# ---------------------------------------------------------------------------
# Canonical (relation-level) comparison helpers
# ---------------------------------------------------------------------------

def wiring_relations(f: WiringDiagram) -> tuple[Relation, Relation, Relation]:
    return (
        span_to_relation(f.w_in),
        span_to_relation(f.w),
        span_to_relation(f.w_out),
    )


def wirings_equivalent(f: WiringDiagram, g: WiringDiagram) -> bool:
    """Equality of induced wire relations and apex cardinalities."""
    if (f.dom.inputs.size, f.dom.outputs.size) != (g.dom.inputs.size, g.dom.outputs.size):
        return False
    if (f.cod.inputs.size, f.cod.outputs.size) != (g.cod.inputs.size, g.cod.outputs.size):
        return False
    for a, b in zip(wiring_relations(f), wiring_relations(g)):
        if a.pairs != b.pairs:
            return False
    return (
        f.w_in.apex.size == g.w_in.apex.size
        and f.w.apex.size == g.w.apex.size
        and f.w_out.apex.size == g.w_out.apex.size
    )

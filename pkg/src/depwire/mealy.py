"""Mealy machines over real vector spaces and their wiring-diagram algebra.

A machine has a state set, an update u(a, s) -> s', and a readout r(a, s) -> y
whose instantaneous input use must respect the interface's dependency
relation. Applying a certified wiring diagram feeds traced outputs back into
inputs; the dependency certificate guarantees the inner input/output vectors
are the unique fixed point of one synchronous pass, so a composite machine is
again a machine.

Update/readout are either ExprFun values (checked exactly against the
dependency via free variables, and composed symbolically) or host callables
(a, s) -> array (probe-tested, composed via the numeric fixed point).
"""
from __future__ import annotations

from dataclasses import InitVar, dataclass, field
from functools import reduce
from typing import Callable, Sequence

import numpy as np

from . import expr as ex
from .finset import (
    FinSet,
    ProbeReport,
    RealVec,
    Relation,
    ensure_labels,
    finset_coproduct,
    relation_coproduct,
    respects_probe,
    span_apply_arr,
)
from .wiring import DepInterface, DepWiringDiagram, Interface, oplus_dep_interface

MachineFun = Callable[[np.ndarray, np.ndarray], np.ndarray]


class RespectsError(ValueError):
    """A readout that reads inputs outside the declared dependency."""


class FixedPointError(RuntimeError):
    """The synchronous pass did not settle; undeclared dependency at work."""

    def __init__(self, residual: float, tol: float):
        super().__init__(
            f"fixed point not reached: residual {residual:.3e} > tol {tol:.3e}"
        )
        self.residual = residual
        self.tol = tol


class NonFiniteError(ArithmeticError):
    def __init__(self, what: str, coords: Sequence[int], step: int | None = None):
        where = f" at step {step}" if step is not None else ""
        super().__init__(f"non-finite {what}{where}, coordinate(s) {list(coords)}")
        self.coords = tuple(coords)
        self.step = step


@dataclass(frozen=True, eq=False)
class MealyMachine:
    """A state machine inhabiting a dependency-annotated interface."""

    iface: DepInterface
    states: FinSet
    update: "ex.ExprFun | MachineFun"
    readout: "ex.ExprFun | MachineFun"
    check: InitVar[bool] = True
    residual_cell: list | None = field(default=None, compare=False, repr=False)

    def __post_init__(self, check: bool):
        n_in = self.iface.inputs.size
        if isinstance(self.update, ex.ExprFun):
            self._check_shape(self.update, self.states.size, "update")
        if isinstance(self.readout, ex.ExprFun):
            self._check_shape(self.readout, self.iface.outputs.size, "readout")
            for j in range(self.iface.outputs.size):
                refs = self.readout.coord_refs(j, "input")
                bad = refs - self.iface.dep.related_to(j)
                if bad:
                    names = [self.iface.inputs.label(a) for a in sorted(bad)]
                    raise RespectsError(
                        f"readout {self.iface.outputs.label(j)!r} reads "
                        f"undeclared input(s) {names}"
                    )
        elif check:
            report = probe_readout(self, trials=8)
            if not report.ok:
                v = report.violations[0] if report.violations else None
                detail = (
                    f"output {v.out_coord} moved by {v.change:.3e} when input "
                    f"{v.in_coord} was perturbed" if v else "non-finite output"
                )
                raise RespectsError(f"readout failed dependency probe: {detail}")
        _ = n_in

    def _check_shape(self, fn: ex.ExprFun, n_out: int, what: str):
        ns = tuple(name for name, _ in fn.signature)
        if ns != ("input", "state"):
            raise ValueError(f"{what} must have (input, state) namespaces, got {ns}")
        sizes = tuple(fs.size for _, fs in fn.signature)
        if sizes != (self.iface.inputs.size, self.states.size):
            raise ValueError(f"{what} namespace sizes {sizes} do not match machine")
        if fn.output.size != n_out:
            raise ValueError(f"{what} has {fn.output.size} outputs, expected {n_out}")

    @property
    def expression_backed(self) -> bool:
        return isinstance(self.update, ex.ExprFun) and isinstance(self.readout, ex.ExprFun)

    @property
    def update_fn(self) -> MachineFun:
        return self.update if callable(self.update) and not isinstance(
            self.update, ex.ExprFun) else self.update.__call__

    @property
    def readout_fn(self) -> MachineFun:
        return self.readout if callable(self.readout) and not isinstance(
            self.readout, ex.ExprFun) else self.readout.__call__


def probe_readout(
    m: MealyMachine, trials: int = 32, tol: float = 1e-9, seed: int = 0
) -> ProbeReport:
    """Probe the readout's input use against the declared dependency,
    across a few random frozen states."""
    rng = np.random.default_rng(seed ^ 0x5EED)
    s = rng.standard_normal(m.states.size)
    fn = lambda a: m.readout_fn(a, s)
    return respects_probe(fn, m.iface.dep, trials=trials, tol=tol, seed=seed)


# ---------------------------------------------------------------------------
# The synchronous fixed point
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class IOFixedPoint:
    x_in: RealVec
    x_out: RealVec
    residual: float


def _check_machine_matches(f: DepWiringDiagram, m: MealyMachine):
    if (m.iface.inputs.size != f.diagram.dom.inputs.size
            or m.iface.outputs.size != f.diagram.dom.outputs.size):
        raise ValueError("machine interface does not match the diagram's dom")
    if m.iface.dep.pairs != f.dom_dep.pairs:
        raise ValueError("machine dependency does not match the diagram's dom")


def _fixed_point_arrays(
    f: DepWiringDiagram,
    m: MealyMachine,
    a: np.ndarray,
    s: np.ndarray,
    tol: float,
    x0: tuple[np.ndarray, np.ndarray] | None = None,
) -> tuple[np.ndarray, np.ndarray, float]:
    w = f.diagram.w
    readout = m.readout_fn
    n = m.iface.inputs.size + m.iface.outputs.size
    if x0 is None:
        xi = a.copy()
        xo = np.zeros(m.iface.outputs.size)
    else:
        xi, xo = np.asarray(x0[0], float).copy(), np.asarray(x0[1], float).copy()
    for _ in range(n):
        xi, xo = span_apply_arr(w, xo) + a, np.asarray(readout(xi, s), float)
    xi2, xo2 = span_apply_arr(w, xo) + a, np.asarray(readout(xi, s), float)
    residual = 0.0
    if n:
        residual = max(
            float(np.max(np.abs(xi2 - xi), initial=0.0)),
            float(np.max(np.abs(xo2 - xo), initial=0.0)),
        )
    if residual > tol:
        raise FixedPointError(residual, tol)
    return xi, xo, residual


def io_fixed_point(
    f: DepWiringDiagram,
    m: MealyMachine,
    a: "RealVec | Sequence[float]",
    s: "RealVec | Sequence[float]",
    tol: float = 1e-9,
    x0: "tuple[Sequence[float], Sequence[float]] | None" = None,
) -> IOFixedPoint:
    """Settle the traced input/output vectors for outer input a and state s.

    Iterates the one-pass endomorphism |inputs| + |outputs| times starting
    from (a, 0) (or x0 if given), then verifies the residual against tol.
    """
    _check_machine_matches(f, m)
    a_arr = a.values if isinstance(a, RealVec) else np.asarray(a, float)
    s_arr = s.values if isinstance(s, RealVec) else np.asarray(s, float)
    xi, xo, residual = _fixed_point_arrays(f, m, a_arr, s_arr, tol, x0)
    return IOFixedPoint(
        RealVec(m.iface.inputs, xi), RealVec(m.iface.outputs, xo), residual
    )


# ---------------------------------------------------------------------------
# Applying a wiring diagram
# ---------------------------------------------------------------------------

def apply_wiring(f: DepWiringDiagram, m: MealyMachine, tol: float = 1e-9) -> MealyMachine:
    """The composite machine on f's outer interface.

    Outer input b is pulled along the in-wires, the trace loop is settled,
    then update runs on the settled inner input and readout is pushed along
    the out-wires. Expression-backed machines are composed symbolically by
    walking the certificate; the result is the same function.
    """
    _check_machine_matches(f, m)
    new_iface = DepInterface(f.diagram.cod, f.cod_dep)
    if m.expression_backed:
        return _apply_wiring_symbolic(f, m)
    w_in, w_out = f.diagram.w_in, f.diagram.w_out
    update, readout = m.update_fn, m.readout_fn
    cell = [0.0]

    def track(residual: float):
        if residual > cell[0]:
            cell[0] = residual

    def new_update(b: np.ndarray, s: np.ndarray) -> np.ndarray:
        a = span_apply_arr(w_in, np.asarray(b, float))
        xi, _, residual = _fixed_point_arrays(f, m, a, np.asarray(s, float), tol)
        track(residual)
        return np.asarray(update(xi, s), float)

    def new_readout(b: np.ndarray, s: np.ndarray) -> np.ndarray:
        a = span_apply_arr(w_in, np.asarray(b, float))
        _, xo, residual = _fixed_point_arrays(f, m, a, np.asarray(s, float), tol)
        track(residual)
        return span_apply_arr(w_out, xo)

    _ = readout
    return MealyMachine(
        new_iface, m.states, new_update, new_readout, check=False, residual_cell=cell
    )


def _apply_wiring_symbolic(f: DepWiringDiagram, m: MealyMachine) -> MealyMachine:
    """Substitute port expressions in certificate order."""
    assert isinstance(m.update, ex.ExprFun) and isinstance(m.readout, ex.ExprFun)
    diagram = f.diagram
    n_in = diagram.dom.inputs.size
    cod_in = ensure_labels(diagram.cod.inputs, "in")
    cod_out = ensure_labels(diagram.cod.outputs, "out")
    in_names = tuple(m.iface.inputs.label(i) for i in range(n_in))

    trace_into: dict[int, list[int]] = {}
    for q, p in diagram.w.pairs():
        trace_into.setdefault(p, []).append(q)
    wires_into: dict[int, list[int]] = {}
    for yi, p in diagram.w_in.pairs():
        wires_into.setdefault(p, []).append(yi)

    port_expr: dict[int, ex.Expr] = {}  # vertex index -> expression
    for v in f.certificate:
        if v < n_in:
            terms = [port_expr[n_in + q] for q in trace_into.get(v, [])]
            terms += [
                ex.Ref(cod_in.label(yi), "input") for yi in wires_into.get(v, [])
            ]
            port_expr[v] = ex.sum_exprs(terms)
        else:
            q = v - n_in
            table = {
                ("input", in_names[p]): port_expr[p]
                for p in range(n_in)
                if p in port_expr
            }
            port_expr[v] = ex.substitute(m.readout.exprs[q], table)

    input_table = {("input", in_names[p]): port_expr[p] for p in range(n_in)}
    new_update = ex.ExprFun(
        (("input", cod_in), ("state", m.states)),
        m.states,
        tuple(ex.substitute(e, input_table) for e in m.update.exprs),
    )
    out_terms: list[ex.Expr] = []
    for yo in range(cod_out.size):
        srcs = [q for q, yo2 in diagram.w_out.pairs() if yo2 == yo]
        out_terms.append(ex.sum_exprs([port_expr[n_in + q] for q in srcs]))
    new_readout = ex.ExprFun(
        (("input", cod_in), ("state", m.states)), cod_out, tuple(out_terms)
    )
    new_iface = DepInterface(Interface(cod_in, cod_out), f.cod_dep)
    return MealyMachine(new_iface, m.states, new_update, new_readout, check=False)


# ---------------------------------------------------------------------------
# Parallel (monoidal) product
# ---------------------------------------------------------------------------

def _par2(m1: MealyMachine, m2: MealyMachine) -> MealyMachine:
    iface = oplus_dep_interface(m1.iface, m2.iface)
    states, _, _ = finset_coproduct(m1.states, m2.states)
    n_in1, n_s1 = m1.iface.inputs.size, m1.states.size

    if m1.expression_backed and m2.expression_backed:
        def shift(e: ex.Expr, prefix: str) -> ex.Expr:
            return ex.rename_refs(e, prefix, ("input", "state"))

        iface = DepInterface(
            Interface(
                ensure_labels(iface.inputs, "in"), ensure_labels(iface.outputs, "out")
            ),
            iface.dep,
        )
        states_l = ensure_labels(states, "s")
        sig = (("input", iface.inputs), ("state", states_l))
        update = ex.ExprFun(
            sig,
            states_l,
            tuple(shift(e, "left.") for e in m1.update.exprs)
            + tuple(shift(e, "right.") for e in m2.update.exprs),
        )
        readout = ex.ExprFun(
            sig,
            iface.outputs,
            tuple(shift(e, "left.") for e in m1.readout.exprs)
            + tuple(shift(e, "right.") for e in m2.readout.exprs),
        )
        return MealyMachine(iface, states_l, update, readout, check=False)

    u1, u2 = m1.update_fn, m2.update_fn
    r1, r2 = m1.readout_fn, m2.readout_fn

    def update(a: np.ndarray, s: np.ndarray) -> np.ndarray:
        return np.concatenate([
            np.asarray(u1(a[:n_in1], s[:n_s1]), float),
            np.asarray(u2(a[n_in1:], s[n_s1:]), float),
        ])

    def readout(a: np.ndarray, s: np.ndarray) -> np.ndarray:
        return np.concatenate([
            np.asarray(r1(a[:n_in1], s[:n_s1]), float),
            np.asarray(r2(a[n_in1:], s[n_s1:]), float),
        ])

    return MealyMachine(iface, states, update, readout, check=False)


def parallel(ms: Sequence[MealyMachine]) -> MealyMachine:
    """Side-by-side product of machines (binary fold; labels nest left/right)."""
    if not ms:
        empty = FinSet(0, ())
        iface = DepInterface(Interface(empty, empty), Relation.empty(empty, empty))
        fn = lambda a, s: np.zeros(0)
        return MealyMachine(iface, empty, fn, fn, check=False)
    return reduce(_par2, ms)


# ---------------------------------------------------------------------------
# Running machines
# ---------------------------------------------------------------------------

def step(
    m: MealyMachine, a: "RealVec | Sequence[float]", s: "RealVec | Sequence[float]"
) -> tuple[RealVec, RealVec]:
    """One synchronous step: returns (next state, output)."""
    a_arr = a.values if isinstance(a, RealVec) else np.asarray(a, float)
    s_arr = s.values if isinstance(s, RealVec) else np.asarray(s, float)
    y = np.asarray(m.readout_fn(a_arr, s_arr), float)
    s2 = np.asarray(m.update_fn(a_arr, s_arr), float)
    bad = ex.nonfinite_coords(np.concatenate([s2, y]))
    if bad:
        raise NonFiniteError("step result", bad)
    return RealVec(m.states, s2), RealVec(m.iface.outputs, y)


def run(
    m: MealyMachine,
    inputs: Sequence["RealVec | Sequence[float]"],
    s0: "RealVec | Sequence[float]",
) -> list[tuple[RealVec, RealVec]]:
    """Drive the machine through an input sequence from s0.

    Returns one (state after step, output at step) pair per input; a prefix
    of the inputs yields the same prefix of results.
    """
    s = s0.values if isinstance(s0, RealVec) else np.asarray(s0, float)
    out: list[tuple[RealVec, RealVec]] = []
    state = RealVec(m.states, s)
    for i, a in enumerate(inputs):
        try:
            state, y = step(m, a, state)
        except NonFiniteError as exc:
            raise NonFiniteError("step result", exc.coords, step=i) from None
        out.append((state, y))
    return out

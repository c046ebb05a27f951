"""Continuous semantics: variable solving, machine conversion, integration.

A valid stock-flow diagram determines a machine whose states are the stocks:
solve the variable layer (acyclicity makes the fixed point unique, reached by
substitution in topological order), read outputs off the out links, and move
each stock by its inflow rates minus its outflow rates. Conversion is
symbolic, so the resulting machine serializes and composes like any other
expression-backed machine.

Integration is fixed-step Euler or classic RK4 over a time-indexed input
signal, with a final partial step landing exactly on the end time.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import expr as ex
from .finset import FinSet, ensure_labels, labeled, span_apply_arr, topological_order
from .mealy import FixedPointError, MealyMachine
from .stockflow import StockFlowDiagram, require_valid


# ---------------------------------------------------------------------------
# Input signals
# ---------------------------------------------------------------------------

class Signal:
    """Time-indexed inputs: callable t -> vector over `index`."""

    index: FinSet

    def __call__(self, t: float) -> np.ndarray:  # pragma: no cover - interface
        raise NotImplementedError


@dataclass(frozen=True)
class TableSignal(Signal):
    """Piecewise-constant lookup: row i applies on [times[i], times[i+1])."""

    index: FinSet
    times: np.ndarray
    values: np.ndarray  # shape (len(times), index.size)

    def __post_init__(self):
        t = np.asarray(self.times, dtype=np.float64)
        v = np.asarray(self.values, dtype=np.float64)
        if t.ndim != 1 or len(t) == 0:
            raise ValueError("a table signal needs at least one time row")
        if np.any(np.diff(t) <= 0):
            raise ValueError("table times must be strictly increasing")
        if v.shape != (len(t), self.index.size):
            raise ValueError(
                f"table values must have shape {(len(t), self.index.size)}, "
                f"got {v.shape}"
            )
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "values", v)

    def __call__(self, t: float) -> np.ndarray:
        i = int(np.searchsorted(self.times, t, side="right")) - 1
        return self.values[max(i, 0)]


@dataclass(frozen=True)
class ExprSignal(Signal):
    """Inputs given by closed-form expressions in the time variable t."""

    index: FinSet
    fun: ex.ExprFun

    @staticmethod
    def from_exprs(index: FinSet, exprs) -> "ExprSignal":
        parsed = tuple(ex.parse(e) if isinstance(e, str) else e for e in exprs)
        fun = ex.ExprFun((("time", labeled(["t"])),), index, parsed)
        return ExprSignal(index, fun)

    def __post_init__(self):
        names = tuple(name for name, _ in self.fun.signature)
        if names != ("time",) or self.fun.signature[0][1].size != 1:
            raise ValueError("an expression signal is a function of time only")
        if self.fun.output.size != self.index.size:
            raise ValueError("one expression per signal coordinate required")

    def __call__(self, t: float) -> np.ndarray:
        return self.fun(np.array([t]))


def constant_signal(values, index: FinSet | None = None) -> TableSignal:
    v = np.asarray(values, dtype=np.float64)
    if index is None:
        index = FinSet(v.shape[-1])
    return TableSignal(index, np.array([0.0]), v.reshape(1, -1))


# ---------------------------------------------------------------------------
# Variable layer
# ---------------------------------------------------------------------------

def sumvar_values(sf: StockFlowDiagram, stocks: np.ndarray) -> np.ndarray:
    """Totals of the linked stocks for each summation variable."""
    return span_apply_arr(sf.stock_sum_link, np.asarray(stocks, dtype=np.float64))


def var_fixed_point(
    sf: StockFlowDiagram, a: np.ndarray, s: np.ndarray, tol: float = 1e-9
) -> np.ndarray:
    """Solve the variable equations by iteration from zero.

    With an acyclic variable graph, |var| sweeps settle every variable; a
    final sweep measures the residual, and a residual above tol means the
    equations had no (attained) fixed point.
    """
    a = np.asarray(a, dtype=np.float64)
    s = np.asarray(s, dtype=np.float64)
    z = sumvar_values(sf, s)
    v = np.zeros(sf.variables.size)
    for _ in range(sf.variables.size):
        v = sf.aux(s, z, v, a)
    v2 = sf.aux(s, z, v, a)
    resid = float(np.max(np.abs(v2 - v))) if len(v) else 0.0
    if not resid <= tol:
        raise FixedPointError(resid, tol)
    return v2


# ---------------------------------------------------------------------------
# Stock-flow diagrams as machines
# ---------------------------------------------------------------------------

def to_mealy(sf: StockFlowDiagram) -> MealyMachine:
    """The machine of a valid diagram, built symbolically.

    Variables are substituted out in topological order, so the update and
    readout are closed-form in the inputs and stocks.
    """
    require_valid(sf)
    inports = ensure_labels(sf.iface.inputs, "in")
    stocks = ensure_labels(sf.stocks, "s")

    order = topological_order(sf.var_graph()).order
    assert order is not None  # condition (2) just checked

    sum_members: dict[int, list[int]] = {z: [] for z in range(sf.sumvars.size)}
    for st, z in sf.stock_sum_link.pairs():
        sum_members[z].append(st)

    table: dict[tuple[str, str], ex.Expr] = {}
    for st in range(sf.stocks.size):
        table[("stock", sf.stocks.label(st) if sf.stocks.labels else str(st))] = (
            ex.Ref(stocks.label(st), "state")
        )
    for z in range(sf.sumvars.size):
        name = sf.sumvars.label(z) if sf.sumvars.labels else str(z)
        table[("sumvar", name)] = ex.sum_exprs(
            [ex.Ref(stocks.label(st), "state") for st in sum_members[z]]
        )
    # aux exprs are resolved against the diagram's own label sets
    slabel = dict(sf.aux.signature)

    def key(ns: str, j: int) -> tuple[str, str]:
        fs = slabel[ns]
        return (ns, fs.label(j) if fs.labels else str(j))

    var_expr: list[ex.Expr | None] = [None] * sf.variables.size
    for j in order:
        t = dict(table)
        for u in range(sf.variables.size):
            if var_expr[u] is not None:
                t[key("var", u)] = var_expr[u]
        var_expr[j] = ex.substitute(sf.aux.exprs[j], t)

    signature = (("input", inports), ("state", stocks))

    readout_exprs = []
    for q in range(sf.iface.outputs.size):
        terms = [var_expr[v] for v, q2 in sf.out_link.pairs() if q2 == q]
        readout_exprs.append(ex.sum_exprs(terms))

    update_exprs: list[ex.Expr] = []
    for st in range(sf.stocks.size):
        inflow_terms = [
            var_expr[sf.flow_var(sf.inflow_flow(a))]
            for a in range(sf.inflows.size) if sf.inflow_stock(a) == st
        ]
        e = ex.sum_exprs(inflow_terms)
        for a in range(sf.outflows.size):
            if sf.outflow_stock(a) == st:
                e = ex.BinOp("-", e, var_expr[sf.flow_var(sf.outflow_flow(a))])
        update_exprs.append(e)

    outputs = ensure_labels(sf.iface.outputs, "out")
    return MealyMachine(
        sf.iface,
        stocks,
        ex.ExprFun(signature, stocks, tuple(update_exprs)),
        ex.ExprFun(signature, outputs, tuple(readout_exprs)),
    )


# ---------------------------------------------------------------------------
# Fixed-step integration
# ---------------------------------------------------------------------------

class IntegrationError(RuntimeError):
    """A step produced non-finite values (or an inner solve failed)."""

    def __init__(self, step: int, t: float, detail: str):
        super().__init__(f"integration failed at step {step}, t={t:.17g}: {detail}")
        self.step = step
        self.t = t
        self.detail = detail


@dataclass(frozen=True)
class Trajectory:
    times: np.ndarray
    states: np.ndarray   # (len(times), |states|)
    outputs: np.ndarray  # (len(times), |outputs|)
    state_index: FinSet
    output_index: FinSet
    method: str
    dt: float
    residual_max: float = 0.0


METHODS = ("euler", "rk4")


def _named(index: FinSet, coords, prefix: str) -> str:
    fs = ensure_labels(index, prefix)
    return ", ".join(fs.label(c) for c in sorted(coords))


def integrate(
    m: MealyMachine,
    s0,
    signal: Signal,
    t0: float,
    t1: float,
    dt: float,
    method: str = "rk4",
) -> Trajectory:
    """Run the state equation ds/dt = update(a(t), s) from t0 to t1.

    The last step is shortened so the final sample lands exactly on t1.
    Outputs are the readout at each stored sample.
    """
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}; choose one of {METHODS}")
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    if not t1 > t0:
        raise ValueError(f"end time {t1} must exceed start time {t0}")
    if signal.index.size != m.iface.inputs.size:
        raise ValueError(
            f"signal has {signal.index.size} coordinates; the machine "
            f"expects {m.iface.inputs.size}"
        )
    s = np.asarray(s0, dtype=np.float64).copy()
    if s.shape != (m.states.size,):
        raise ValueError(
            f"initial state must have shape {(m.states.size,)}, got {s.shape}"
        )
    if m.residual_cell is not None:
        m.residual_cell[0] = 0.0

    f = m.update_fn
    g = m.readout_fn
    n = max(1, math.ceil((t1 - t0) / dt - 1e-12))
    times = np.minimum(t0 + dt * np.arange(n + 1), t1)
    times[-1] = t1
    states = np.empty((n + 1, m.states.size))
    outputs = np.empty((n + 1, m.iface.outputs.size))

    def fail_if_nonfinite(arr: np.ndarray, step: int, t: float, what: str, index: FinSet, prefix: str):
        if not np.all(np.isfinite(arr)):
            bad = np.flatnonzero(~np.isfinite(np.asarray(arr)))
            raise IntegrationError(
                step, t, f"non-finite {what} coordinate(s): {_named(index, bad, prefix)}"
            )

    for k in range(n + 1):
        t = float(times[k])
        try:
            a = np.asarray(signal(t), dtype=np.float64)
            y = g(a, s)
        except FixedPointError as e:
            raise IntegrationError(k, t, str(e)) from e
        fail_if_nonfinite(y, k, t, "output", m.iface.outputs, "out")
        states[k] = s
        outputs[k] = y
        if k == n:
            break
        h = float(times[k + 1] - t)
        try:
            if method == "euler":
                s = s + h * f(a, s)
            else:
                k1 = f(a, s)
                amid = np.asarray(signal(t + h / 2), dtype=np.float64)
                k2 = f(amid, s + (h / 2) * k1)
                k3 = f(amid, s + (h / 2) * k2)
                aend = np.asarray(signal(t + h), dtype=np.float64)
                k4 = f(aend, s + h * k3)
                s = s + (h / 6) * (k1 + 2 * k2 + 2 * k3 + k4)
        except FixedPointError as e:
            raise IntegrationError(k, t, str(e)) from e
        fail_if_nonfinite(s, k + 1, float(times[k + 1]), "state", m.states, "s")

    residual_max = m.residual_cell[0] if m.residual_cell is not None else 0.0
    return Trajectory(
        times, states, outputs,
        ensure_labels(m.states, "s"),
        ensure_labels(m.iface.outputs, "out"),
        method, dt, float(residual_max),
    )


def simulate_sf(
    sf: StockFlowDiagram,
    s0,
    signal: Signal,
    t0: float,
    t1: float,
    dt: float,
    method: str = "rk4",
) -> Trajectory:
    """Convert a valid diagram to its machine and integrate it."""
    return integrate(to_mealy(sf), s0, signal, t0, t1, dt, method)

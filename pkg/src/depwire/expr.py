"""A small arithmetic expression language for model equations.

Grammar (in precedence order, loosest first):

    expr   := term  (('+' | '-') term)*
    term   := unary (('*' | '/') unary)*
    unary  := '-' unary | power
    power  := atom ('^' unary)?          # right-associative, binds above unary minus
    atom   := NUMBER | IDENT | IDENT '(' expr (',' expr)* ')' | '(' expr ')'

Identifiers start with a letter or underscore and may contain letters, digits,
underscores, and dots (so coproduct-prefixed names like ``left.x`` survive a
round trip). Known calls: exp, log, sqrt, abs, min(a,b), max(a,b), pow(a,b).
Non-finite results (division by zero and friends) are returned, not raised;
callers decide how to report them.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property
from typing import Mapping, Sequence

import numpy as np

from .finset import FinSet, RealVec

NAMESPACES = ("input", "state", "stock", "sumvar", "var", "time")
FUNCTIONS = {"exp": 1, "log": 1, "sqrt": 1, "abs": 1, "min": 2, "max": 2, "pow": 2}


class ExprSyntaxError(ValueError):
    """A parse failure, carrying the offending position in the source text."""

    def __init__(self, message: str, pos: int, text: str):
        super().__init__(f"{message} at position {pos}: {text!r}")
        self.message = message
        self.pos = pos
        self.text = text


class ResolutionError(KeyError):
    """A variable reference that does not resolve against a signature."""


class Expr:
    """Base class for expression nodes; all nodes are immutable."""

    __slots__ = ()


@dataclass(frozen=True)
class Lit(Expr):
    value: float


@dataclass(frozen=True)
class Ref(Expr):
    name: str
    ns: str | None = None


@dataclass(frozen=True)
class Neg(Expr):
    arg: Expr


@dataclass(frozen=True)
class BinOp(Expr):
    op: str  # one of + - * / ^
    lhs: Expr
    rhs: Expr


@dataclass(frozen=True)
class Call(Expr):
    fn: str
    args: tuple[Expr, ...]


# ---------------------------------------------------------------------------
# Parsing
# ---------------------------------------------------------------------------

def _is_ident_start(c: str) -> bool:
    return c.isalpha() or c == "_"


def _is_ident_char(c: str) -> bool:
    return c.isalnum() or c in "_."


class _Parser:
    def __init__(self, text: str):
        self.text = text
        self.pos = 0

    def error(self, message: str) -> ExprSyntaxError:
        return ExprSyntaxError(message, self.pos, self.text)

    def skip_ws(self):
        while self.pos < len(self.text) and self.text[self.pos].isspace():
            self.pos += 1

    def peek(self) -> str:
        return self.text[self.pos] if self.pos < len(self.text) else ""

    def expect(self, c: str):
        self.skip_ws()
        if self.peek() != c:
            raise self.error(f"expected {c!r}")
        self.pos += 1

    def parse(self) -> Expr:
        e = self.expr()
        self.skip_ws()
        if self.pos != len(self.text):
            raise self.error("trailing input")
        return e

    def expr(self) -> Expr:
        e = self.term()
        while True:
            self.skip_ws()
            c = self.peek()
            if c and c in "+-":
                self.pos += 1
                e = BinOp(c, e, self.term())
            else:
                return e

    def term(self) -> Expr:
        e = self.unary()
        while True:
            self.skip_ws()
            c = self.peek()
            if c and c in "*/":
                self.pos += 1
                e = BinOp(c, e, self.unary())
            else:
                return e

    def unary(self) -> Expr:
        self.skip_ws()
        if self.peek() == "-":
            self.pos += 1
            return Neg(self.unary())
        return self.power()

    def power(self) -> Expr:
        e = self.atom()
        self.skip_ws()
        if self.peek() == "^":
            self.pos += 1
            return BinOp("^", e, self.unary())
        return e

    def atom(self) -> Expr:
        self.skip_ws()
        c = self.peek()
        if c == "(":
            self.pos += 1
            e = self.expr()
            self.expect(")")
            return e
        if c.isdigit() or c == ".":
            return self.number()
        if _is_ident_start(c):
            return self.ident_or_call()
        raise self.error("expected a number, name, or parenthesized expression")

    def number(self) -> Lit:
        start = self.pos
        t = self.text
        while self.pos < len(t) and t[self.pos].isdigit():
            self.pos += 1
        if self.pos < len(t) and t[self.pos] == ".":
            self.pos += 1
            while self.pos < len(t) and t[self.pos].isdigit():
                self.pos += 1
        if self.pos < len(t) and t[self.pos] in "eE":
            mark = self.pos
            self.pos += 1
            if self.pos < len(t) and t[self.pos] in "+-":
                self.pos += 1
            if self.pos < len(t) and t[self.pos].isdigit():
                while self.pos < len(t) and t[self.pos].isdigit():
                    self.pos += 1
            else:
                self.pos = mark  # not an exponent after all
        token = t[start:self.pos]
        try:
            return Lit(float(token))
        except ValueError:
            self.pos = start
            raise self.error(f"bad number {token!r}") from None

    def ident_or_call(self) -> Expr:
        start = self.pos
        t = self.text
        self.pos += 1
        while self.pos < len(t) and _is_ident_char(t[self.pos]):
            self.pos += 1
        name = t[start:self.pos]
        self.skip_ws()
        if self.peek() != "(":
            return Ref(name)
        if name not in FUNCTIONS:
            self.pos = start
            raise self.error(f"unknown function {name!r}")
        self.pos += 1  # consume '('
        args = [self.expr()]
        while True:
            self.skip_ws()
            if self.peek() == ",":
                self.pos += 1
                args.append(self.expr())
            else:
                break
        self.expect(")")
        if len(args) != FUNCTIONS[name]:
            self.pos = start
            raise self.error(
                f"{name} takes {FUNCTIONS[name]} argument(s), got {len(args)}"
            )
        return Call(name, tuple(args))


def parse(text: str) -> Expr:
    """Parse an expression; raises ExprSyntaxError with a position on failure."""
    return _Parser(text).parse()


# ---------------------------------------------------------------------------
# Printing
# ---------------------------------------------------------------------------

_PREC = {"+": 1, "-": 1, "*": 2, "/": 2, "neg": 3, "^": 4, "atom": 5}


def _prec(e: Expr) -> int:
    if isinstance(e, BinOp):
        return _PREC[e.op]
    if isinstance(e, Neg):
        return _PREC["neg"]
    return _PREC["atom"]


def _fmt_lit(v: float) -> str:
    if v == int(v) and abs(v) < 1e16:
        return str(int(v))
    return repr(v)


def to_text(e: Expr) -> str:
    """Render with minimal parentheses; parse(to_text(e)) rebuilds e exactly."""
    if isinstance(e, Lit):
        return _fmt_lit(e.value)
    if isinstance(e, Ref):
        return e.name
    if isinstance(e, Neg):
        inner = to_text(e.arg)
        if _prec(e.arg) < _PREC["neg"]:
            inner = f"({inner})"
        return f"-{inner}"
    if isinstance(e, Call):
        return f"{e.fn}({', '.join(to_text(a) for a in e.args)})"
    assert isinstance(e, BinOp)
    p = _PREC[e.op]
    lhs, rhs = to_text(e.lhs), to_text(e.rhs)
    if e.op == "^":
        if _prec(e.lhs) <= p:
            lhs = f"({lhs})"
        if _prec(e.rhs) < p:
            rhs = f"({rhs})"
    else:
        if _prec(e.lhs) < p:
            lhs = f"({lhs})"
        if _prec(e.rhs) <= p:
            rhs = f"({rhs})"
    return f"{lhs} {e.op} {rhs}"


# ---------------------------------------------------------------------------
# Free variables, substitution, renaming
# ---------------------------------------------------------------------------

def free_vars(e: Expr) -> frozenset[tuple[str | None, str]]:
    """The set of (namespace, name) references appearing in e."""
    out: set[tuple[str | None, str]] = set()

    def walk(n: Expr):
        if isinstance(n, Ref):
            out.add((n.ns, n.name))
        elif isinstance(n, Neg):
            walk(n.arg)
        elif isinstance(n, BinOp):
            walk(n.lhs)
            walk(n.rhs)
        elif isinstance(n, Call):
            for a in n.args:
                walk(a)

    walk(e)
    return frozenset(out)


def substitute(e: Expr, table: Mapping[tuple[str, str], Expr]) -> Expr:
    """Replace resolved references by expressions; untouched nodes are shared."""

    def walk(n: Expr) -> Expr:
        if isinstance(n, Ref):
            if n.ns is not None and (n.ns, n.name) in table:
                return table[(n.ns, n.name)]
            return n
        if isinstance(n, Neg):
            return Neg(walk(n.arg))
        if isinstance(n, BinOp):
            return BinOp(n.op, walk(n.lhs), walk(n.rhs))
        if isinstance(n, Call):
            return Call(n.fn, tuple(walk(a) for a in n.args))
        return n

    return walk(e)


def rename_refs(e: Expr, prefix: str, namespaces: Sequence[str]) -> Expr:
    """Prefix every reference name in the given namespaces."""

    def walk(n: Expr) -> Expr:
        if isinstance(n, Ref):
            if n.ns in namespaces:
                return Ref(prefix + n.name, n.ns)
            return n
        if isinstance(n, Neg):
            return Neg(walk(n.arg))
        if isinstance(n, BinOp):
            return BinOp(n.op, walk(n.lhs), walk(n.rhs))
        if isinstance(n, Call):
            return Call(n.fn, tuple(walk(a) for a in n.args))
        return n

    return walk(e)


def sum_exprs(terms: Sequence[Expr]) -> Expr:
    """Left-associated sum; the empty sum is the literal 0."""
    if not terms:
        return Lit(0.0)
    acc = terms[0]
    for t in terms[1:]:
        acc = BinOp("+", acc, t)
    return acc


# ---------------------------------------------------------------------------
# Evaluation: IEEE-style helpers and compiled vector functions
# ---------------------------------------------------------------------------

def _div(a: float, b: float) -> float:
    try:
        return a / b
    except ZeroDivisionError:
        if a == 0 or a != a:
            return math.nan
        return math.inf if (a > 0) == (math.copysign(1.0, b) > 0) else -math.inf


def _pow(a: float, b: float) -> float:
    try:
        return math.pow(a, b)
    except ValueError:
        return math.nan
    except OverflowError:
        return math.inf


def _exp(a: float) -> float:
    try:
        return math.exp(a)
    except OverflowError:
        return math.inf


def _log(a: float) -> float:
    if a > 0:
        return math.log(a)
    if a == 0:
        return -math.inf
    return math.nan


def _sqrt(a: float) -> float:
    if a >= 0:
        return math.sqrt(a)
    return math.nan


_EVAL_GLOBALS = {
    "_div": _div,
    "_pow": _pow,
    "_exp": _exp,
    "_log": _log,
    "_sqrt": _sqrt,
    "abs": abs,
    "min": min,
    "max": max,
    "__builtins__": {},
}

_CALL_CODE = {"exp": "_exp", "log": "_log", "sqrt": "_sqrt", "abs": "abs",
              "min": "min", "max": "max", "pow": "_pow"}


@dataclass(frozen=True)
class ExprFun:
    """A vector function defined by one expression per output coordinate.

    The signature is an ordered list of (namespace, index set) pairs; every
    namespace set must be labeled, and references are resolved by name at
    construction (a bare name must match exactly one namespace).
    """

    signature: tuple[tuple[str, FinSet], ...]
    output: FinSet
    exprs: tuple[Expr, ...]

    def __post_init__(self):
        object.__setattr__(self, "signature", tuple(
            (ns, fs) for ns, fs in self.signature
        ))
        object.__setattr__(self, "exprs", tuple(self.exprs))
        seen = set()
        for ns, fs in self.signature:
            if ns not in NAMESPACES:
                raise ValueError(f"unknown namespace {ns!r}")
            if ns in seen:
                raise ValueError(f"duplicate namespace {ns!r}")
            seen.add(ns)
            if fs.labels is None:
                raise ValueError(f"namespace {ns!r} must have labeled elements")
        if len(self.exprs) != self.output.size:
            raise ValueError(
                f"{len(self.exprs)} expressions for {self.output.size} outputs"
            )
        object.__setattr__(
            self, "exprs", tuple(self._resolve(e) for e in self.exprs)
        )

    def _resolve(self, e: Expr) -> Expr:
        owners: dict[str, list[str]] = {}
        for ns, fs in self.signature:
            for name in fs.labels or ():
                owners.setdefault(name, []).append(ns)

        def walk(n: Expr) -> Expr:
            if isinstance(n, Ref):
                if n.ns is not None:
                    if not any(
                        ns == n.ns and n.name in (fs.labels or ())
                        for ns, fs in self.signature
                    ):
                        raise ResolutionError(
                            f"{n.ns}.{n.name} not in signature"
                        )
                    return n
                found = owners.get(n.name, [])
                if not found:
                    raise ResolutionError(f"unknown name {n.name!r}")
                if len(found) > 1:
                    raise ResolutionError(
                        f"ambiguous name {n.name!r} (in namespaces {found})"
                    )
                return Ref(n.name, found[0])
            if isinstance(n, Neg):
                return Neg(walk(n.arg))
            if isinstance(n, BinOp):
                return BinOp(n.op, walk(n.lhs), walk(n.rhs))
            if isinstance(n, Call):
                return Call(n.fn, tuple(walk(a) for a in n.args))
            return n

        return walk(e)

    @cached_property
    def _indices(self) -> dict[str, dict[str, int]]:
        return {
            ns: {name: i for i, name in enumerate(fs.labels or ())}
            for ns, fs in self.signature
        }

    @cached_property
    def _ns_pos(self) -> dict[str, int]:
        return {ns: k for k, (ns, _) in enumerate(self.signature)}

    def coord_refs(self, j: int, ns: str) -> frozenset[int]:
        """Indices in namespace ns referenced by output coordinate j."""
        idx = self._indices.get(ns, {})
        return frozenset(
            idx[name] for ns2, name in free_vars(self.exprs[j]) if ns2 == ns
        )

    def _emit(self, e: Expr) -> str:
        if isinstance(e, Lit):
            return repr(e.value)
        if isinstance(e, Ref):
            k = self._ns_pos[e.ns]
            i = self._indices[e.ns][e.name]
            return f"_a{k}[{i}]"
        if isinstance(e, Neg):
            return f"(-{self._emit(e.arg)})"
        if isinstance(e, Call):
            args = ", ".join(self._emit(a) for a in e.args)
            return f"{_CALL_CODE[e.fn]}({args})"
        assert isinstance(e, BinOp)
        lhs, rhs = self._emit(e.lhs), self._emit(e.rhs)
        if e.op == "/":
            return f"_div({lhs}, {rhs})"
        if e.op == "^":
            return f"_pow({lhs}, {rhs})"
        return f"({lhs} {e.op} {rhs})"

    @cached_property
    def _compiled(self):
        args = ", ".join(f"_a{k}" for k in range(len(self.signature)))
        body = ", ".join(self._emit(e) for e in self.exprs)
        src = f"def _f({args}):\n    return ({body}{',' if self.exprs else ''})\n"
        scope: dict = {}
        exec(compile(src, "<exprfun>", "exec"), dict(_EVAL_GLOBALS), scope)
        return scope["_f"]

    def __call__(self, *arrays) -> np.ndarray:
        """Evaluate on one float sequence per namespace, in signature order."""
        if len(arrays) != len(self.signature):
            raise ValueError(
                f"expected {len(self.signature)} argument blocks, got {len(arrays)}"
            )
        args = [tuple(float(v) for v in np.asarray(a).reshape(-1)) for a in arrays]
        for (ns, fs), a in zip(self.signature, args):
            if len(a) != fs.size:
                raise ValueError(
                    f"namespace {ns!r} expects {fs.size} values, got {len(a)}"
                )
        return np.array(self._compiled(*args), dtype=np.float64)


def evaluate(f: ExprFun, env: Mapping[str, "RealVec | Sequence[float]"]) -> RealVec:
    """Evaluate with a namespace -> vector environment; extra keys are errors."""
    known = {ns for ns, _ in f.signature}
    extra = set(env) - known
    if extra:
        raise ValueError(f"unknown namespaces in environment: {sorted(extra)}")
    missing = known - set(env)
    if missing:
        raise ValueError(f"missing namespaces in environment: {sorted(missing)}")
    arrays = []
    for ns, _ in f.signature:
        v = env[ns]
        arrays.append(v.values if isinstance(v, RealVec) else np.asarray(v, float))
    return RealVec(f.output, f(*arrays))


def nonfinite_coords(values: np.ndarray) -> list[int]:
    """Indices of non-finite entries, for diagnostics."""
    return [int(i) for i in np.nonzero(~np.isfinite(np.asarray(values)))[0]]

"""Finite index sets, maps, spans, and relations.

Everything downstream (wiring diagrams, machines, stock-flow models) is built
on dense 0-based index sets and a small pull/push calculus: pullback
(precompose), pushforward (sum over preimages), and their composite along a
span. Labels are presentation metadata only; compatibility checks compare
sizes.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Callable, Iterable, Iterator, Sequence

import numpy as np

Pair = tuple[int, int]


@dataclass(frozen=True)
class FinSet:
    """A finite index set {0, ..., size-1} with optional distinct labels."""

    size: int
    labels: tuple[str, ...] | None = None

    def __post_init__(self):
        if self.size < 0:
            raise ValueError(f"FinSet size must be >= 0, got {self.size}")
        if self.labels is not None:
            object.__setattr__(self, "labels", tuple(self.labels))
            if len(self.labels) != self.size:
                raise ValueError(
                    f"{len(self.labels)} labels for a set of size {self.size}"
                )
            if len(set(self.labels)) != len(self.labels):
                raise ValueError(f"duplicate labels: {self.labels}")

    def __len__(self) -> int:
        return self.size

    def __iter__(self) -> Iterator[int]:
        return iter(range(self.size))

    def label(self, i: int) -> str:
        return self.labels[i] if self.labels is not None else str(i)

    def index_of(self, name: str) -> int:
        if self.labels is None:
            raise KeyError(f"set has no labels, cannot resolve {name!r}")
        try:
            return self.labels.index(name)
        except ValueError:
            raise KeyError(f"unknown label {name!r}") from None


def labeled(names: Sequence[str]) -> FinSet:
    """Convenience constructor from a label list."""
    names = tuple(names)
    return FinSet(len(names), names)


def ensure_labels(fs: FinSet, prefix: str) -> FinSet:
    """Return fs unchanged if labeled, else with synthetic labels prefix0.."""
    if fs.labels is not None:
        return fs
    return FinSet(fs.size, tuple(f"{prefix}{i}" for i in range(fs.size)))


@dataclass(frozen=True)
class FinMap:
    """A total function dom -> cod, stored as a dense target table."""

    dom: FinSet
    cod: FinSet
    targets: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "targets", tuple(int(t) for t in self.targets))
        if len(self.targets) != self.dom.size:
            raise ValueError(
                f"map table has {len(self.targets)} entries for a domain of "
                f"size {self.dom.size}"
            )
        for i, t in enumerate(self.targets):
            if not 0 <= t < self.cod.size:
                raise ValueError(
                    f"target {t} of element {i} outside codomain of size "
                    f"{self.cod.size}"
                )

    @cached_property
    def targets_arr(self) -> np.ndarray:
        return np.array(self.targets, dtype=np.intp)

    def __call__(self, i: int) -> int:
        return self.targets[i]

    def then(self, g: "FinMap") -> "FinMap":
        """self followed by g (i.e. g after self)."""
        if self.cod.size != g.dom.size:
            raise ValueError(
                f"cannot compose: codomain size {self.cod.size} != "
                f"domain size {g.dom.size}"
            )
        return FinMap(self.dom, g.cod, tuple(g.targets[t] for t in self.targets))

    @staticmethod
    def identity(a: FinSet) -> "FinMap":
        return FinMap(a, a, tuple(range(a.size)))

    def is_injective(self) -> bool:
        return len(set(self.targets)) == len(self.targets)

    def fiber(self, b: int) -> tuple[int, ...]:
        """Preimage of b, in ascending order."""
        return tuple(i for i, t in enumerate(self.targets) if t == b)


@dataclass(frozen=True)
class Span:
    """A pair of maps out of a common apex: left.cod <- apex -> right.cod."""

    apex: FinSet
    left: FinMap
    right: FinMap

    def __post_init__(self):
        if self.left.dom.size != self.apex.size or self.right.dom.size != self.apex.size:
            raise ValueError("span legs must share the apex as domain")

    @staticmethod
    def from_pairs(a: FinSet, b: FinSet, pairs: Sequence[Pair]) -> "Span":
        """Build a span over a x b with one apex element per listed pair."""
        pairs = [(int(x), int(y)) for x, y in pairs]
        apex = FinSet(len(pairs))
        return Span(
            apex,
            FinMap(apex, a, tuple(x for x, _ in pairs)),
            FinMap(apex, b, tuple(y for _, y in pairs)),
        )

    @staticmethod
    def identity(a: FinSet) -> "Span":
        return Span(a, FinMap.identity(a), FinMap.identity(a))

    @staticmethod
    def empty(a: FinSet, b: FinSet) -> "Span":
        zero = FinSet(0)
        return Span(zero, FinMap(zero, a, ()), FinMap(zero, b, ()))

    def pairs(self) -> tuple[Pair, ...]:
        """The (left, right) endpoint pair of each apex element, in order."""
        return tuple(zip(self.left.targets, self.right.targets))


@dataclass(frozen=True)
class Relation:
    """A set of (src element, tgt element) pairs between two index sets."""

    src: FinSet
    tgt: FinSet
    pairs: frozenset[Pair]

    def __post_init__(self):
        object.__setattr__(
            self, "pairs", frozenset((int(a), int(b)) for a, b in self.pairs)
        )
        for a, b in self.pairs:
            if not (0 <= a < self.src.size and 0 <= b < self.tgt.size):
                raise ValueError(f"relation pair {(a, b)} out of range")

    @staticmethod
    def empty(src: FinSet, tgt: FinSet) -> "Relation":
        return Relation(src, tgt, frozenset())

    @staticmethod
    def full(src: FinSet, tgt: FinSet) -> "Relation":
        return Relation(
            src, tgt, frozenset((a, b) for a in range(src.size) for b in range(tgt.size))
        )

    @staticmethod
    def diagonal(a: FinSet) -> "Relation":
        return Relation(a, a, frozenset((i, i) for i in range(a.size)))

    def sorted_pairs(self) -> list[Pair]:
        return sorted(self.pairs)

    def related_to(self, b: int) -> frozenset[int]:
        """Source elements related to target element b."""
        return frozenset(a for a, b2 in self.pairs if b2 == b)


@dataclass(frozen=True)
class DiGraph:
    """A directed multigraph: edges are their own index set with endpoint maps."""

    vertices: FinSet
    edges: FinSet
    src: FinMap
    tgt: FinMap

    def __post_init__(self):
        if self.src.dom.size != self.edges.size or self.tgt.dom.size != self.edges.size:
            raise ValueError("edge endpoint maps must be indexed by the edge set")
        if self.src.cod.size != self.vertices.size or self.tgt.cod.size != self.vertices.size:
            raise ValueError("edge endpoints must land in the vertex set")

    @staticmethod
    def from_span(s: Span) -> "DiGraph":
        """Treat a span over vertices x vertices as an edge set."""
        if s.left.cod.size != s.right.cod.size:
            raise ValueError("span endpoints must agree to form a graph")
        return DiGraph(s.left.cod, s.apex, s.left, s.right)

    def out_edges(self, v: int) -> list[int]:
        return [e for e in range(self.edges.size) if self.src(e) == v]


@dataclass(frozen=True, eq=False)
class RealVec:
    """A dense float64 vector indexed by a FinSet."""

    index: FinSet
    values: np.ndarray

    def __post_init__(self):
        arr = np.array(self.values, dtype=np.float64).reshape(-1)
        if arr.shape[0] != self.index.size:
            raise ValueError(
                f"{arr.shape[0]} values for an index set of size {self.index.size}"
            )
        arr.flags.writeable = False
        object.__setattr__(self, "values", arr)

    def __len__(self) -> int:
        return self.index.size

    def __getitem__(self, i: int) -> float:
        return float(self.values[i])

    def allclose(self, other: "RealVec | np.ndarray", tol: float = 1e-9) -> bool:
        other_values = other.values if isinstance(other, RealVec) else np.asarray(other)
        return bool(np.all(np.abs(self.values - other_values) <= tol))


def vec(values: Sequence[float], labels: Sequence[str] | None = None) -> RealVec:
    values = np.array(values, dtype=np.float64).reshape(-1)
    index = labeled(labels) if labels is not None else FinSet(values.shape[0])
    return RealVec(index, values)


# ---------------------------------------------------------------------------
# Pull / push calculus
# ---------------------------------------------------------------------------

def pullback_vec(f: FinMap, x: RealVec) -> RealVec:
    """Precompose: (f* x)(a) = x(f(a))."""
    if x.index.size != f.cod.size:
        raise ValueError(
            f"vector over a set of size {x.index.size} pulled back along a map "
            f"into a set of size {f.cod.size}"
        )
    return RealVec(f.dom, x.values[f.targets_arr])


def pushforward_vec(f: FinMap, x: RealVec) -> RealVec:
    """Sum over preimages: (f_* x)(b) = sum of x(a) for f(a) = b."""
    if x.index.size != f.dom.size:
        raise ValueError(
            f"vector over a set of size {x.index.size} pushed forward along a "
            f"map from a set of size {f.dom.size}"
        )
    out = np.zeros(f.cod.size, dtype=np.float64)
    np.add.at(out, f.targets_arr, x.values)
    return RealVec(f.cod, out)


def span_apply(r: Span, x: RealVec) -> RealVec:
    """Pull back along the left leg, push forward along the right."""
    return pushforward_vec(r.right, pullback_vec(r.left, x))


def span_apply_arr(r: Span, x: np.ndarray) -> np.ndarray:
    """Array-level span_apply for hot loops; no index-set bookkeeping."""
    out = np.zeros(r.right.cod.size, dtype=np.float64)
    np.add.at(out, r.right.targets_arr, x[r.left.targets_arr])
    return out


def fiber_product(f: FinMap, g: FinMap) -> tuple[FinSet, FinMap, FinMap]:
    """Pairs (a, b) with f(a) = g(b), in lexicographic order, with projections."""
    if f.cod.size != g.cod.size:
        raise ValueError(
            f"fiber product needs a shared codomain: {f.cod.size} != {g.cod.size}"
        )
    pairs = [
        (a, b)
        for a in range(f.dom.size)
        for b in range(g.dom.size)
        if f.targets[a] == g.targets[b]
    ]
    apex = FinSet(len(pairs))
    p = FinMap(apex, f.dom, tuple(a for a, _ in pairs))
    q = FinMap(apex, g.dom, tuple(b for _, b in pairs))
    return apex, p, q


def compose_spans(r: Span, s: Span) -> Span:
    """Composite span a <- r.apex x_mid s.apex -> c via the fiber product."""
    if r.right.cod.size != s.left.cod.size:
        raise ValueError(
            f"span middle sets differ: {r.right.cod.size} != {s.left.cod.size}"
        )
    _, p, q = fiber_product(r.right, s.left)
    return Span(p.dom, p.then(r.left), q.then(s.right))


def span_to_relation(r: Span) -> Relation:
    """Forget apex multiplicities; keep the set of endpoint pairs."""
    return Relation(r.left.cod, r.right.cod, frozenset(r.pairs()))


def relation_leq(r: Relation, s: Relation) -> bool:
    """Containment r <= s between relations on the same endpoints."""
    if r.src.size != s.src.size or r.tgt.size != s.tgt.size:
        raise ValueError("cannot compare relations with different endpoints")
    return r.pairs <= s.pairs


# ---------------------------------------------------------------------------
# Graph reachability and topological sorting
# ---------------------------------------------------------------------------

def path_closure(g: DiGraph, reflexive: bool = False) -> Relation:
    """Pairs (u, v) joined by a path of length >= 1 (or >= 0 if reflexive)."""
    n = g.vertices.size
    succ: list[list[int]] = [[] for _ in range(n)]
    for e in range(g.edges.size):
        succ[g.src(e)].append(g.tgt(e))
    pairs: set[Pair] = set()
    for v in range(n):
        seen: set[int] = set()
        frontier = list(succ[v])
        while frontier:
            u = frontier.pop()
            if u in seen:
                continue
            seen.add(u)
            frontier.extend(succ[u])
        pairs.update((v, u) for u in seen)
    if reflexive:
        pairs.update((v, v) for v in range(n))
    return Relation(g.vertices, g.vertices, frozenset(pairs))


@dataclass(frozen=True)
class CycleWitness:
    """A directed cycle: vertices[0] == vertices[-1], edges[i] joins i to i+1."""

    vertices: tuple[int, ...]
    edges: tuple[int, ...]

    def __len__(self) -> int:
        return len(self.edges)

    def describe(self, g: DiGraph) -> str:
        verts = " -> ".join(g.vertices.label(v) for v in self.vertices)
        return f"cycle of length {len(self.edges)}: {verts}"


@dataclass(frozen=True)
class TopoResult:
    order: tuple[int, ...] | None
    cycle: CycleWitness | None


def topological_order(g: DiGraph) -> TopoResult:
    """Kahn's algorithm; on failure, walk the residual graph for a cycle."""
    n = g.vertices.size
    indeg = [0] * n
    succ: list[list[tuple[int, int]]] = [[] for _ in range(n)]  # (edge, head)
    for e in range(g.edges.size):
        indeg[g.tgt(e)] += 1
        succ[g.src(e)].append((e, g.tgt(e)))
    order: list[int] = []
    remaining = set(range(n))
    ready = sorted(v for v in remaining if indeg[v] == 0)
    while ready:
        v = ready.pop(0)
        order.append(v)
        remaining.discard(v)
        for _, u in succ[v]:
            indeg[u] -= 1
            if indeg[u] == 0:
                # keep the smallest-ready-first order deterministic
                i = 0
                while i < len(ready) and ready[i] < u:
                    i += 1
                ready.insert(i, u)
    if not remaining:
        return TopoResult(tuple(order), None)
    # every remaining vertex keeps an in-edge from the remainder (successors
    # may all have been removed), so walk predecessors until one repeats
    pred: list[list[tuple[int, int]]] = [[] for _ in range(n)]
    for e in range(g.edges.size):
        pred[g.tgt(e)].append((e, g.src(e)))
    start = min(remaining)
    trail_v = [start]
    trail_e: list[int] = []
    seen_at = {start: 0}
    v = start
    while True:
        e, u = min((e, u) for e, u in pred[v] if u in remaining)
        if u in seen_at:
            k = seen_at[u]
            # trail edges run backward; flip them into a forward cycle
            cyc_v = (u, *reversed(trail_v[k:]))
            cyc_e = (e, *reversed(trail_e[k:]))
            return TopoResult(None, CycleWitness(cyc_v, cyc_e))
        trail_e.append(e)
        seen_at[u] = len(trail_v)
        trail_v.append(u)
        v = u


def is_acyclic(g: DiGraph) -> bool:
    return topological_order(g).order is not None


# ---------------------------------------------------------------------------
# Numerical dependency probing
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ProbeViolation:
    out_coord: int
    in_coord: int
    base: tuple[float, ...]
    delta: float
    change: float


@dataclass(frozen=True)
class ProbeReport:
    violations: tuple[ProbeViolation, ...]
    nonfinite: tuple[tuple[float, ...], ...]
    trials: int
    tol: float

    @property
    def ok(self) -> bool:
        return not self.violations and not self.nonfinite


def respects_probe(
    fn: Callable[[np.ndarray], np.ndarray],
    rel: Relation,
    trials: int = 32,
    tol: float = 1e-9,
    seed: int = 0,
) -> ProbeReport:
    """Numerically test that fn(x)[b] only reads coordinates related to b.

    For each random base point, every input coordinate is perturbed once
    (uniform in [-1, 1], scaled by max(1, |base|)); any output coordinate to
    which the perturbed input is unrelated must not move by more than tol.
    """
    n, m = rel.src.size, rel.tgt.size
    related = [rel.related_to(b) for b in range(m)]
    rng = np.random.default_rng(seed)
    violations: list[ProbeViolation] = []
    nonfinite: list[tuple[float, ...]] = []
    for _ in range(trials):
        base = rng.standard_normal(n)
        y0 = np.asarray(fn(base), dtype=np.float64)
        if not np.all(np.isfinite(y0)):
            nonfinite.append(tuple(base))
            continue
        for a in range(n):
            delta = float(rng.uniform(-1.0, 1.0)) * max(1.0, abs(float(base[a])))
            x = base.copy()
            x[a] += delta
            y1 = np.asarray(fn(x), dtype=np.float64)
            if not np.all(np.isfinite(y1)):
                nonfinite.append(tuple(x))
                continue
            for b in range(m):
                if a in related[b]:
                    continue
                change = abs(float(y1[b] - y0[b]))
                if change > tol:
                    violations.append(
                        ProbeViolation(b, a, tuple(base), delta, change)
                    )
    return ProbeReport(tuple(violations), tuple(nonfinite), trials, tol)


def expr_respects(free_inputs: Iterable[int], rel: Relation, out_coord: int) -> bool:
    """Exact check: the referenced input coordinates are all related to out_coord."""
    return set(free_inputs) <= set(rel.related_to(out_coord))


# ---------------------------------------------------------------------------
# Coproducts
# ---------------------------------------------------------------------------

def finset_coproduct(a: FinSet, b: FinSet) -> tuple[FinSet, FinMap, FinMap]:
    """Disjoint union with inclusions; labels get left./right. prefixes."""
    if a.labels is not None and b.labels is not None:
        lbls: tuple[str, ...] | None = tuple(
            [f"left.{l}" for l in a.labels] + [f"right.{l}" for l in b.labels]
        )
    else:
        lbls = None
    ab = FinSet(a.size + b.size, lbls)
    inl = FinMap(a, ab, tuple(range(a.size)))
    inr = FinMap(b, ab, tuple(range(a.size, a.size + b.size)))
    return ab, inl, inr


def finmap_coproduct(f: FinMap, g: FinMap) -> FinMap:
    """Blockwise disjoint union of two maps."""
    dom, _, _ = finset_coproduct(f.dom, g.dom)
    cod, _, _ = finset_coproduct(f.cod, g.cod)
    targets = tuple(f.targets) + tuple(t + f.cod.size for t in g.targets)
    return FinMap(dom, cod, targets)


def span_coproduct(r: Span, s: Span) -> Span:
    """Blockwise disjoint union of two spans."""
    left = finmap_coproduct(r.left, s.left)
    right = finmap_coproduct(r.right, s.right)
    return Span(left.dom, left, right)


def relation_coproduct(r: Relation, s: Relation) -> Relation:
    """Shifted union of two relations on the coproduct endpoints."""
    src, _, _ = finset_coproduct(r.src, s.src)
    tgt, _, _ = finset_coproduct(r.tgt, s.tgt)
    pairs = set(r.pairs)
    pairs.update((a + r.src.size, b + r.tgt.size) for a, b in s.pairs)
    return Relation(src, tgt, frozenset(pairs))

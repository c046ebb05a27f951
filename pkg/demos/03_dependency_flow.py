"""
Pushing dependencies through a wiring
=====================================

A wiring diagram does more than route values: it determines what the
*outer* interface can possibly depend on, given what the inner box
depends on.  The fast route composes relations along the wires; a
brute-force route enumerates every chain.  They must agree, and the
result can be rendered (dashed arrows) next to the wires (solid).
"""
from pathlib import Path

from depwire import modelio as mio
from depwire.finset import ensure_labels
from depwire.wiring import (
    dependency_pushforward,
    dependency_pushforward_oracle,
)

MODELS = Path(__file__).resolve().parent.parent / "models"

wd = mio.load(str(MODELS / "fig2.wiring"))
f, dep = wd.diagram, wd.dom_dep
print("inner dependency:",
      [(f.dom.inputs.label(a), f.dom.outputs.label(b))
       for a, b in dep.sorted_pairs()])

pushed = dependency_pushforward(f, dep)
ci = ensure_labels(f.cod.inputs, "in")
co = ensure_labels(f.cod.outputs, "out")
print("outer dependency:")
for a, b in pushed.sorted_pairs():
    print(f"  {ci.label(a)} -> {co.label(b)}")

# Cross-check the closure computation against plain chain enumeration.
slow = dependency_pushforward_oracle(f, dep)
print("oracle agrees:", slow.pairs == pushed.pairs)

# y2 reaches z3 through the trace (xo1 -> x2), while y3 is wired to
# nothing that matters — no z depends on it.
assert all(a != f.cod.inputs.index_of("y3") for a, _ in pushed.sorted_pairs())

out = Path("/tmp/fig2.dot")
out.write_text(mio.export_dot(wd))
print("wrote", out, "- render with: dot -Tpng", out)

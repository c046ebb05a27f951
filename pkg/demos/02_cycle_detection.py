"""
Why dependency annotations matter
=================================

The same wires can be fine or broken depending on what the boxed machine
admits to reading.  Here a two-port box is closed by two feedback loops.
If each output instantaneously depends on an input, the loop has no
well-defined value and certification fails with a concrete cycle to show
the user.  Declare the outputs state-only and the exact same wires pass.
"""
from depwire.finset import Relation, labeled
from depwire.wiring import (
    Interface,
    WiringCycleError,
    WiringDiagram,
    validate_ddwd,
)

dom = Interface(labeled(["a", "b"]), labeled(["xo", "yo"]))
cod = Interface(labeled([]), labeled(["out"]))

# xo feeds b, yo feeds a; xo is also the exposed output.
wd = WiringDiagram.from_wires(
    dom, cod,
    trace_wires=[(0, 1), (1, 0)],
    out_wires=[(0, 0)],
)
empty_cod = Relation.empty(cod.inputs, cod.outputs)

# First attempt: the box claims xo reads a and yo reads b *right now*.
instant = Relation(dom.inputs, dom.outputs, {(0, 0), (1, 1)})
try:
    validate_ddwd(wd, instant, empty_cod)
except WiringCycleError as err:
    print("refused:", err)
    print("witness vertices:",
          [err.graph.vertices.label(v) for v in err.witness.vertices])

# Second attempt: both outputs come from internal state, no live reads.
lazy = Relation.empty(dom.inputs, dom.outputs)
cert = validate_ddwd(wd, lazy, empty_cod)
print("certified with evaluation order:", cert.certificate)

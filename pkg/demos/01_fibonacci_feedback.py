"""
Fibonacci from a feedback loop
==============================

Two one-state machines — an adder and a one-step delay — are placed side
by side and their outputs are traced back into their inputs.  The closed
composite has no inputs left, and stepping it walks the Fibonacci numbers.
"""
from pathlib import Path

import numpy as np

from depwire import modelio as mio
from depwire.expr import to_text
from depwire.mealy import apply_wiring, parallel, run

MODELS = Path(__file__).resolve().parent.parent / "models"

# The adder keeps a running value x; the delay remembers last step's input.
adder = mio.load(str(MODELS / "fib_add.mealy"))
delay = mio.load(str(MODELS / "fib_delay.mealy"))
print(Path(MODELS / "fib_add.mealy").read_text())

pair = parallel([adder, delay])
print("side by side:", pair.iface.inputs.labels, "->",
      pair.iface.outputs.labels)

# fib.wiring traces xo -> b (the delay watches the adder) and yo -> a
# (the adder reads the delayed value), exposing only the adder's output.
# Loading it certifies there is no instantaneous cycle.
cert = mio.load(str(MODELS / "fib.wiring"))
fib = apply_wiring(cert, pair)
for name, e in zip(fib.states.labels, fib.update.exprs):
    print(f"  {name}' = {to_text(e)}")

# Start from (x, y) = (1, 0) and watch x.
steps = run(fib, [np.zeros(0)] * 9, np.array([1.0, 0.0]))
values = [1.0] + [float(s.values[0]) for s, _ in steps]
print("visited:", [int(v) for v in values])

"""Dependency-aware wiring diagrams, Mealy machines, and stock-flow models.

The layers build on each other:

- `finset`: finite index sets, maps, spans, relations, graph closures, and
  numerical respects-probing.
- `expr`: a tiny arithmetic expression language with namespaced references,
  compiled against labeled index sets.
- `wiring`: directed wiring diagrams with port dependencies, acyclicity
  certificates, and the dependency pushforward.
- `mealy`: machines on dependency-annotated interfaces, the synchronous
  feedback fixed point, and the wiring-diagram algebra.
- `stockflow`: open stock-and-flow diagrams with link validity and the same
  compositional algebra.
- `semantics`: stock-flow diagrams as machines; fixed-step integration.
- `modelio`: YAML model files, DOT export, CSV trajectories.
- `cli`: the `depwire` command.
"""

from .finset import (
    CycleWitness,
    DiGraph,
    FinMap,
    FinSet,
    Relation,
    RealVec,
    Span,
    compose_spans,
    fiber_product,
    is_acyclic,
    labeled,
    path_closure,
    pullback_vec,
    pushforward_vec,
    respects_probe,
    span_apply,
    span_to_relation,
    topological_order,
    vec,
)
from .wiring import (
    DepInterface,
    DepWiringDiagram,
    DependencyCoverageError,
    Interface,
    WiringCycleError,
    WiringDiagram,
    compose_ddwd,
    compose_dwd,
    dependency_pushforward,
    identity_ddwd,
    oplus_ddwd,
    validate_ddwd,
)
from .mealy import (
    MealyMachine,
    apply_wiring,
    io_fixed_point,
    parallel,
    probe_readout,
    run,
    step,
)
from .stockflow import (
    StockFlowBuilder,
    StockFlowDiagram,
    StockFlowInvalid,
    apply_wiring_sf,
    interface_dependency,
    parallel_sf,
    validate_stockflow,
)
from .semantics import (
    ExprSignal,
    IntegrationError,
    TableSignal,
    Trajectory,
    constant_signal,
    integrate,
    simulate_sf,
    to_mealy,
    var_fixed_point,
)
from .modelio import (
    ModelError,
    Scenario,
    compose_models,
    dumps,
    export_dot,
    load,
    loads,
    save,
    write_trajectory,
)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]

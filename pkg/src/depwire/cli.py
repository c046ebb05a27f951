"""Command-line front door.

Exit codes separate concerns so CI can tell models from tooling apart:
0 means every check passed, 1 means a domain finding (invalid diagram,
wiring cycle, uncovered dependency, failed simulation), 2 means a usage,
I/O, or schema problem.
"""
from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from . import modelio as mio
from .finset import ensure_labels
from .mealy import MealyMachine, NonFiniteError, RespectsError, probe_readout, run
from .semantics import IntegrationError, to_mealy
from .stockflow import StockFlowDiagram, StockFlowInvalid, validate_stockflow
from .wiring import (
    DependencyCoverageError,
    DepWiringDiagram,
    WiringCycleError,
    WiringDiagram,
    dependency_pushforward,
    dependency_pushforward_oracle,
)

DEFAULT_SEED = 0xC0FFEE
DEFAULT_TRIALS = 32


def _emit(args, payload: dict, text_lines: list[str]):
    if getattr(args, "format", "text") == "json":
        print(json.dumps(payload, indent=2))
    else:
        for line in text_lines:
            print(line)


# ---------------------------------------------------------------------------
# check
# ---------------------------------------------------------------------------

def _findings_for(obj, args) -> list[dict]:
    findings: list[dict] = []
    if isinstance(obj, StockFlowDiagram):
        for f in validate_stockflow(obj).findings:
            findings.append({"condition": f.condition, "message": f.message})
    elif isinstance(obj, MealyMachine):
        # the load already did the exact check; probe as an independent route
        rep = probe_readout(obj, trials=args.trials, seed=args.seed)
        for v in rep.violations:
            findings.append({
                "condition": "respects",
                "message": (
                    f"output {v.out_coord} moved by {v.change:.3e} when "
                    f"undeclared input {v.in_coord} was perturbed"
                ),
            })
        for base in rep.nonfinite:
            findings.append({
                "condition": "respects",
                "message": f"readout non-finite near {list(base)}",
            })
    return findings


def cmd_check(args) -> int:
    results = []
    for path in args.models:
        findings: list[dict] = []
        try:
            obj = mio.load(path)
            findings = _findings_for(obj, args)
        except WiringCycleError as e:
            findings = [{"condition": "cycle", "message": str(e)}]
        except DependencyCoverageError as e:
            findings = [{"condition": "coverage", "message": str(e)}]
        except StockFlowInvalid as e:
            findings = [
                {"condition": f.condition, "message": f.message}
                for f in e.report.findings
            ]
        except RespectsError as e:
            findings = [{"condition": "respects", "message": str(e)}]
        except mio.ModelError as e:
            print(f"error: {e}", file=sys.stderr)
            return 2
        results.append({"path": path, "ok": not findings, "findings": findings})
    lines = []
    for r in results:
        if r["ok"]:
            lines.append(f"{r['path']}: ok")
        else:
            for f in r["findings"]:
                lines.append(f"{r['path']}: [{f['condition']}] {f['message']}")
    _emit(args, {"results": results}, lines)
    return 0 if all(r["ok"] for r in results) else 1


# ---------------------------------------------------------------------------
# deps
# ---------------------------------------------------------------------------

def cmd_deps(args) -> int:
    obj = mio.load(args.wiring)
    if isinstance(obj, DepWiringDiagram):
        f, d = obj.diagram, obj.dom_dep
    elif isinstance(obj, WiringDiagram):
        f, d = obj, None
    else:
        print(f"error: {args.wiring} is not a wiring diagram", file=sys.stderr)
        return 2
    if args.dependency is not None:
        di = mio.load(args.dependency, kind="dependency")
        if (di.inputs.size != f.dom.inputs.size
                or di.outputs.size != f.dom.outputs.size):
            print(
                "error: dependency endpoints do not match the wiring's inner "
                "interface", file=sys.stderr,
            )
            return 2
        d = di.dep
    if d is None:
        print(
            "error: a plain wiring file needs an explicit dependency file",
            file=sys.stderr,
        )
        return 2
    pushed = dependency_pushforward(f, d)
    ci = ensure_labels(f.cod.inputs, "in")
    co = ensure_labels(f.cod.outputs, "out")
    pairs = [[ci.label(a), co.label(b)] for a, b in pushed.sorted_pairs()]
    payload: dict = {"pairs": pairs}
    lines = [f"{a} -> {b}" for a, b in pairs]
    if args.oracle:
        slow = dependency_pushforward_oracle(f, d)
        agree = slow.pairs == pushed.pairs
        payload["oracle_agrees"] = agree
        if agree:
            lines.append(f"oracle agrees ({len(pairs)} pair(s))")
        else:
            lines.append("oracle DISAGREES")
            _emit(args, payload, lines)
            return 1
    _emit(args, payload, lines)
    return 0


# ---------------------------------------------------------------------------
# compose / to-mealy
# ---------------------------------------------------------------------------

def cmd_compose(args) -> int:
    wiring = mio.load(args.wiring, kind="dep_wiring")
    models = [mio.load(p) for p in args.models]
    for p, m in zip(args.models, models):
        if not isinstance(m, (MealyMachine, StockFlowDiagram)):
            print(
                f"error: {p} is not a machine or stock-flow file",
                file=sys.stderr,
            )
            return 2
    result = mio.compose_models(wiring, models)
    mio.save(result, args.output)
    return 0


def cmd_to_mealy(args) -> int:
    sf = mio.load(args.stockflow, kind="stockflow")
    mio.save(to_mealy(sf), args.output)
    return 0


# ---------------------------------------------------------------------------
# simulate / run-discrete
# ---------------------------------------------------------------------------

def cmd_simulate(args) -> int:
    sc = mio.load(args.scenario, kind="scenario")
    from dataclasses import replace

    overrides = {}
    if args.t1 is not None:
        overrides["t1"] = args.t1
    if args.dt is not None:
        overrides["dt"] = args.dt
    if args.method is not None:
        overrides["method"] = args.method
    if overrides:
        sc = replace(sc, **overrides)
    tr = sc.run()
    mio.write_trajectory(tr, args.output)
    return 0


def _parse_state(text: str, m: MealyMachine) -> np.ndarray:
    states = ensure_labels(m.states, "s")
    s = np.zeros(states.size)
    if not text:
        return s
    for part in text.split(","):
        name, eq, value = part.partition("=")
        if not eq:
            raise ValueError(
                f"bad --state entry {part!r}; expected name=value"
            )
        name = name.strip()
        try:
            j = states.index_of(name)
        except KeyError:
            raise ValueError(
                f"unknown state {name!r}; states are {list(states.labels)}"
            ) from None
        try:
            s[j] = float(value)
        except ValueError:
            raise ValueError(f"bad value for state {name!r}: {value!r}") from None
    return s


def cmd_run_discrete(args) -> int:
    m = mio.load(args.machine, kind="mealy")
    steps, rows = mio.read_inputs_csv(args.inputs, m.iface.inputs)
    s0 = _parse_state(args.state, m)
    results = run(m, list(rows), s0)
    states = np.array([st.values for st, _ in results]).reshape(len(results), -1)
    outputs = np.array([y.values for _, y in results]).reshape(len(results), -1)
    mio.write_run_csv(
        args.output, steps, states, outputs, m.states, m.iface.outputs
    )
    return 0


# ---------------------------------------------------------------------------
# export-dot
# ---------------------------------------------------------------------------

def cmd_export_dot(args) -> int:
    obj = mio.load(args.model)
    text = mio.export_dot(obj)
    with open(args.output, "w", encoding="utf-8") as fh:
        fh.write(text)
    return 0


# ---------------------------------------------------------------------------
# wiring
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="depwire",
        description=(
            "Validate, compose, analyze, and simulate dependency-aware "
            "wiring diagrams, machines, and stock-flow models."
        ),
    )
    parser.add_argument(
        "--seed", type=lambda s: int(s, 0), default=DEFAULT_SEED,
        help="seed for randomized checks (default 0xC0FFEE)",
    )
    parser.add_argument(
        "--trials", type=int, default=DEFAULT_TRIALS,
        help="trial count for randomized checks (default 32)",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("check", help="validate model files")
    p.add_argument("models", nargs="+", metavar="MODEL")
    p.add_argument("--format", choices=("text", "json"), default="text")
    p.set_defaults(fn=cmd_check)

    p = sub.add_parser("deps", help="push a dependency through a wiring")
    p.add_argument("wiring", metavar="WIRING")
    p.add_argument("dependency", nargs="?", metavar="DEP",
                   help="dependency file for the inner interface "
                        "(taken from a dep_wiring file when omitted)")
    p.add_argument("--oracle", action="store_true",
                   help="cross-check against brute-force chain enumeration")
    p.add_argument("--format", choices=("text", "json"), default="text")
    p.set_defaults(fn=cmd_deps)

    p = sub.add_parser("compose", help="apply a wiring to machines or diagrams")
    p.add_argument("wiring", metavar="WIRING")
    p.add_argument("models", nargs="+", metavar="MODEL")
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(fn=cmd_compose)

    p = sub.add_parser("to-mealy", help="convert a stock-flow diagram")
    p.add_argument("stockflow", metavar="STOCKFLOW")
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(fn=cmd_to_mealy)

    p = sub.add_parser("simulate", help="integrate a scenario to CSV")
    p.add_argument("scenario", metavar="SCENARIO")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--t1", type=float, default=None)
    p.add_argument("--dt", type=float, default=None)
    p.add_argument("--method", choices=("euler", "rk4"), default=None)
    p.set_defaults(fn=cmd_simulate)

    p = sub.add_parser("run-discrete", help="step a machine over a CSV table")
    p.add_argument("machine", metavar="MACHINE")
    p.add_argument("inputs", metavar="INPUTS_CSV")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--state", default="",
                   help="initial state as name=value,... (default all zeros)")
    p.set_defaults(fn=cmd_run_discrete)

    p = sub.add_parser("export-dot", help="render a model as DOT")
    p.add_argument("model", metavar="MODEL")
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(fn=cmd_export_dot)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except StockFlowInvalid as e:
        print(str(e))
        return 1
    except (WiringCycleError, DependencyCoverageError, RespectsError) as e:
        print(str(e))
        return 1
    except (IntegrationError, NonFiniteError) as e:
        print(str(e))
        return 1
    except mio.ModelError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except ValueError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

"""Command-line front end.

Exit codes: 0 when the run completed with every internal invariant intact
(physical findings such as "not Markov" are report content), 1 when an
internal invariant broke, 2 for bad input.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import scenarios
from .markov import NotMarkov, StructureRecoveryFailed, is_markov, recover_structure, assemble
from .states import (
    DensityMatrix,
    LayoutMismatch,
    StateError,
    maximally_mixed,
    pure,
    random_density,
    validate_density,
)
from .tensor_core import LayoutError, SpaceLayout, trace_distance

EXIT_OK, EXIT_INVARIANT, EXIT_INPUT = 0, 1, 2
COMMANDS = ("demo", "check", "sweep", "witness")
DEMOS = ("example1", "example2", "example3", "example4")


class InputError(ValueError):
    pass


class StateFileError(InputError):
    pass


@dataclass
class RunConfig:
    command: str
    scenario: str = ""
    dims: dict = field(default_factory=dict)
    trials: Optional[int] = None
    seed: int = 0
    tolerance: float = 1e-9
    input_path: Optional[str] = None
    output_path: Optional[str] = None
    figure_path: Optional[str] = None
    equal_dims_only: bool = False
    partition: tuple = ("A", "B", "E")
    rho_ae: str = "bell"
    variant: str = "markov_blocks"
    basis: str = "bell"

    def validate(self) -> "RunConfig":
        if self.command not in COMMANDS:
            raise InputError(f"unknown command {self.command!r}")
        if self.trials is not None and self.trials < 1:
            raise InputError(f"--trials must be >= 1, got {self.trials}")
        if not self.tolerance > 0:
            raise InputError(f"--tolerance must be > 0, got {self.tolerance}")
        if not 0 <= self.seed < 2 ** 64:
            raise InputError(f"seed {self.seed} is not a 64-bit unsigned value")
        for label, d in self.dims.items():
            if d < 1:
                raise InputError(f"dimension of {label} must be >= 1, got {d}")
        return self


# -- file formats ---------------------------------------------------------------

def _dump(obj, indent: int = 0) -> str:
    pad, inner = "  " * indent, "  " * (indent + 1)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{inner}{json.dumps(str(k))}: {_dump(obj[k], indent + 1)}"
                 for k in sorted(obj, key=str)]
        return "{\n" + ",\n".join(items) + "\n" + pad + "}"
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        if all(not isinstance(x, (dict, list, tuple)) for x in obj):
            return "[" + ", ".join(_dump(x) for x in obj) + "]"
        return "[\n" + ",\n".join(inner + _dump(x, indent + 1) for x in obj) + "\n" + pad + "]"
    if isinstance(obj, (bool, np.bool_)):
        return "true" if obj else "false"
    if obj is None:
        return "null"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if not math.isfinite(x):
            return json.dumps(str(x))
        text = "%.17g" % x
        return text if any(c in text for c in ".en") else text + ".0"
    return json.dumps(str(obj))


def dumps_report(report) -> str:
    """Stable JSON: sorted keys, 17 significant digits for every float."""
    return _dump(report.to_dict()) + "\n"


def write_report(path, report) -> None:
    text = dumps_report(report)
    if path is None or path == "-":
        sys.stdout.write(text)
    else:
        with open(path, "w") as fh:
            fh.write(text)


def state_to_json(rho: DensityMatrix) -> dict:
    return {"layout": [{"label": l, "dim": d} for l, d in rho.layout],
            "re": rho.matrix.real.tolist(), "im": rho.matrix.imag.tolist()}


def write_state(path, rho: DensityMatrix) -> None:
    with open(path, "w") as fh:
        fh.write(_dump(state_to_json(rho)) + "\n")


def _parse_matrix(doc: dict, key: str, n: int) -> np.ndarray:
    rows = doc.get(key)
    if not isinstance(rows, list):
        raise StateFileError(f"field {key!r} must be a list of {n} rows")
    if len(rows) != n:
        raise LayoutMismatch(f"field {key!r} has {len(rows)} rows but the layout has dim {n}")
    out = np.empty((n, n))
    for i, row in enumerate(rows):
        if not isinstance(row, list) or len(row) != n:
            got = len(row) if isinstance(row, list) else type(row).__name__
            raise LayoutMismatch(f"{key}[{i}] has length {got}, expected {n}")
        for j, x in enumerate(row):
            if isinstance(x, bool) or not isinstance(x, (int, float)):
                raise StateFileError(f"{key}[{i}][{j}] = {x!r} is not a number")
            out[i, j] = x
    return out


def parse_state(doc) -> DensityMatrix:
    if not isinstance(doc, dict):
        raise StateFileError("state file must hold a JSON object")
    for key in ("layout", "re", "im"):
        if key not in doc:
            raise StateFileError(f"missing field {key!r}")
    factors = []
    for i, f in enumerate(doc["layout"]):
        if not isinstance(f, dict) or "label" not in f or "dim" not in f:
            raise StateFileError(f"layout[{i}] must be an object with 'label' and 'dim'")
        if not isinstance(f["dim"], int) or isinstance(f["dim"], bool):
            raise StateFileError(f"layout[{i}].dim = {f['dim']!r} is not an integer")
        factors.append((str(f["label"]), f["dim"]))
    layout = SpaceLayout(tuple(factors))
    n = layout.total_dim
    m = _parse_matrix(doc, "re", n) + 1j * _parse_matrix(doc, "im", n)
    return validate_density(m, layout)


def read_state(path) -> DensityMatrix:
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise StateFileError(f"cannot read {path}: {exc.strerror}") from None
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise StateFileError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    return parse_state(doc)


# -- commands -------------------------------------------------------------------

def _dims(cfg: RunConfig, **defaults) -> dict:
    d = dict(defaults)
    d.update(cfg.dims)
    return d


def _demo(cfg: RunConfig):
    L = SpaceLayout.of
    g = np.random.default_rng(cfg.seed)
    name = cfg.scenario
    if name == "example1":
        d = _dims(cfg, A=2, B=2, E=2)
        rho_ab = random_density(L(A=d["A"], B=d["B"]), rng=g)
        omega = random_density(L(E=d["E"]), rng=g)
        return scenarios.example1_factorized(rho_ab, omega, seed=cfg.seed, tol=cfg.tolerance,
                                             random_channels=cfg.trials or 20)
    if name == "example2":
        d = _dims(cfg, A=2, B=2)
        n = d["A"] * d["B"]
        if cfg.basis == "bell":
            if d["A"] != 2 or d["B"] != 2:
                raise InputError("the bell basis needs A=2,B=2")
            basis = np.array([[1, 0, 0, 1], [1, 0, 0, -1], [0, 1, 1, 0], [0, 1, -1, 0]]) / np.sqrt(2)
        elif cfg.basis == "computational":
            basis = np.eye(n)
        else:
            raise InputError(f"unknown --basis {cfg.basis!r}; use bell or computational")
        omegas = [pure(np.eye(n)[i], L(E=n)) for i in range(n)]
        p = g.dirichlet(np.ones(n))
        return scenarios.example2_cq(p, basis, omegas, d["A"], d["B"], cfg.seed, cfg.tolerance)
    if name == "example3":
        if cfg.variant not in scenarios.EXAMPLE3_VARIANTS:
            raise InputError(f"--variant must be one of {scenarios.EXAMPLE3_VARIANTS}")
        return scenarios.example3_random(cfg.variant, cfg.seed)
    if name == "example4":
        d = _dims(cfg, B=2)
        rho_ae = scenarios.example4_rho_ae(cfg.rho_ae, d["B"], cfg.seed)
        return scenarios.example4_swap(maximally_mixed(L(B=d["B"])), rho_ae, cfg.seed,
                                       cfg.tolerance)
    raise InputError(f"unknown demo {name!r}; choose from {DEMOS}")


def _partition(cfg: RunConfig, rho: DensityMatrix):
    if len(cfg.partition) != 3:
        raise InputError(f"--partition needs three groups, got {cfg.partition}")
    groups = [g.split("+") for g in cfg.partition]
    flat = [l for g in groups for l in g]
    if sorted(flat) != sorted(rho.layout.labels):
        raise InputError(f"partition {cfg.partition} does not cover layout {rho.layout.labels}")
    if len(groups[1]) != 1:
        raise InputError("the middle group of --partition must be a single label")
    return groups[0], groups[1][0], groups[2]


def _check(cfg: RunConfig):
    if not cfg.input_path:
        raise InputError("check needs --input")
    rho = read_state(cfg.input_path)
    a, b, e = _partition(cfg, rho)
    v = is_markov(rho, a, b, e, cfg.tolerance)
    rep = scenarios.ScenarioReport("check", cfg.seed, {"partition": list(cfg.partition),
                                                       "tolerance": cfg.tolerance,
                                                       "dims": dict(rho.layout.factors)})
    rep.quantities.update(cmi=v.cmi, petz_distance=v.petz_distance)
    rep.verdicts["markov"] = v.markov
    if v.markov:
        try:
            dec = recover_structure(rho, a, b, e, check_markov=False)
            ordered = rho.permuted(a + [b] + e)
            rep.quantities["reconstruction_error"] = trace_distance(assemble(dec).matrix,
                                                                    ordered.matrix)
            rep.quantities["blocks"] = len(dec.blocks)
            rep.inputs["block_dims"] = [[x.d_bL, x.d_bR] for x in dec.blocks]
            rep.verdicts["structureRecovered"] = True
        except StructureRecoveryFailed as exc:
            rep.inputs["recovery_error"] = str(exc)
            rep.verdicts["structureRecovered"] = False
        rep.invariants = {"structureRecovered"}
    return rep


def _sweep(cfg: RunConfig):
    fn = scenarios.SWEEPS.get(cfg.scenario)
    if fn is None:
        raise InputError(f"unknown sweep {cfg.scenario!r}; choose from {sorted(scenarios.SWEEPS)}")
    if cfg.scenario == "weyl":
        return fn(seed=cfg.seed)
    kwargs = {"seed": cfg.seed}
    if cfg.trials is not None:
        kwargs["trials"] = cfg.trials
    if cfg.scenario == "direct-reduction":
        kwargs["tolerance"] = cfg.tolerance
    return fn(**kwargs)


def _witness(cfg: RunConfig):
    if cfg.input_path:
        rho = read_state(cfg.input_path)
        missing = {"A", "B", "E"} - set(rho.layout.labels)
        if missing or len(rho.layout) != 3:
            raise InputError(f"witness needs a state on (A, B, E), got {rho.layout.labels}")
        rho = rho.permuted(["A", "B", "E"])
    else:
        d = _dims(cfg, A=2, B=2, E=2)
        rho = random_density(SpaceLayout.of(A=d["A"], B=d["B"], E=d["E"]), rng=cfg.seed)
    return scenarios.witness_search(rho, cfg.trials or 50, cfg.seed, cfg.equal_dims_only,
                                    cfg.tolerance)


def run(cfg: RunConfig, stderr=None) -> int:
    stderr = stderr or sys.stderr
    try:
        cfg.validate()
        report = {"demo": _demo, "check": _check, "sweep": _sweep, "witness": _witness}[
            cfg.command](cfg)
    except (InputError, StateError, LayoutError, NotMarkov, scenarios.ScenarioInputError) as exc:
        print(f"error: {exc}", file=stderr)
        return EXIT_INPUT
    except StructureRecoveryFailed as exc:
        print(f"internal invariant violated: {exc}", file=stderr)
        return EXIT_INVARIANT
    try:
        write_report(cfg.output_path, report)
        if cfg.figure_path:
            from .plotting import plot_report
            plot_report(report, cfg.figure_path)
    except OSError as exc:
        print(f"error: cannot write output: {exc}", file=stderr)
        return EXIT_INPUT
    broken = report.broken_invariants()
    if broken:
        print(f"internal invariant violated: {', '.join(broken)}", file=stderr)
        return EXIT_INVARIANT
    return EXIT_OK


def _parse_dims(text: str) -> dict:
    dims = {}
    for part in filter(None, text.split(",")):
        label, sep, value = part.partition("=")
        if not sep or not label.strip():
            raise argparse.ArgumentTypeError(f"bad --dims entry {part!r}; expected LABEL=INT")
        try:
            dims[label.strip()] = int(value)
        except ValueError:
            raise argparse.ArgumentTypeError(f"dimension {value!r} for {label} is not an integer")
    return dims


def _default_seed() -> int:
    raw = os.environ.get("QMARKOV_SEED")
    if raw is None or raw == "":
        return 0
    try:
        return int(raw)
    except ValueError:
        raise InputError(f"QMARKOV_SEED={raw!r} is not an integer") from None


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="qmarkov", description=__doc__.splitlines()[0])
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None,
                        help="64-bit seed (default: $QMARKOV_SEED, else 0)")
    common.add_argument("--trials", type=int, default=None)
    common.add_argument("--tolerance", type=float, default=1e-9,
                        help="CMI tolerance in bits for Markov verdicts")
    common.add_argument("--dims", type=_parse_dims, default={}, help="e.g. A=2,B=2,E=2")
    common.add_argument("--input", dest="input_path")
    common.add_argument("--output", dest="output_path", help="report path (default stdout)")
    common.add_argument("--figure", dest="figure_path", help="also render a PNG figure here")
    sub = parser.add_subparsers(dest="command", required=True)

    demo = sub.add_parser("demo", parents=[common], help="run one of the worked examples")
    demo.add_argument("scenario", choices=DEMOS)
    demo.add_argument("--rho-ae", default="bell", choices=("bell", "classical", "product"))
    demo.add_argument("--variant", default="markov_blocks", choices=scenarios.EXAMPLE3_VARIANTS)
    demo.add_argument("--basis", default="bell", choices=("bell", "computational"))

    check = sub.add_parser("check", parents=[common], help="Markov test of a state file")
    check.add_argument("--partition", default="A,B,E",
                       help="left,middle,right labels; join labels in a group with '+'")

    sweep = sub.add_parser("sweep", parents=[common], help="randomized property sweep")
    sweep.add_argument("scenario", choices=sorted(scenarios.SWEEPS))

    wit = sub.add_parser("witness", parents=[common], help="mutual-information witness search")
    wit.add_argument("--equal-dims-only", action="store_true")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        ns = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INPUT if exc.code else EXIT_OK
    try:
        seed = ns.seed if ns.seed is not None else _default_seed()
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    cfg = RunConfig(
        command=ns.command, scenario=getattr(ns, "scenario", ""), dims=ns.dims,
        trials=ns.trials, seed=seed, tolerance=ns.tolerance, input_path=ns.input_path,
        output_path=ns.output_path, figure_path=ns.figure_path,
        equal_dims_only=getattr(ns, "equal_dims_only", False),
        partition=tuple(getattr(ns, "partition", "A,B,E").split(",")),
        rho_ae=getattr(ns, "rho_ae", "bell"), variant=getattr(ns, "variant", "markov_blocks"),
        basis=getattr(ns, "basis", "bell"))
    return run(cfg)


if __name__ == "__main__":
    sys.exit(main())

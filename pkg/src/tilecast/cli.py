"""Command-line interface.

Exit codes: 0 ok, 1 compared inputs differ, 2 user error (flags, schema,
malformed input), 3 resolution or validation failure, 4 simulation deadlock.
Failures print a human line and a JSON diagnostic line on stderr.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from .device import TileKind
from .emitter import DIFF_MODES, emit, design_diff
from .errors import (
    Deadlock,
    ManifestError,
    ResolutionError,
    SimulationError,
    TilecastError,
)
from .manifest import build_program, builtin_manifest, builtin_names, load_manifest
from .placement import SequentialPlacer
from .sim import run as simulate
from .taplib import access_equivalent, pattern_from_json, render_access_map, strictly_equal
from .tiler import TilerSpec, group_tiler

EXIT_OK, EXIT_DIFFERENT, EXIT_USER, EXIT_RESOLVE, EXIT_DEADLOCK = 0, 1, 2, 3, 4

PLACERS = {"sequential": SequentialPlacer, "none": None}


class CliFailure(Exception):
    def __init__(self, error: TilecastError | Exception, exit_code: int):
        super().__init__(str(error))
        self.error = error
        self.exit_code = exit_code


def _diagnose(error, exit_code: int) -> int:
    code = getattr(error, "code", type(error).__name__)
    print(f"tilecast: {code}: {error}", file=sys.stderr)
    diag = {"code": code, "message": str(error), "exit": exit_code}
    details = getattr(error, "details", None)
    if details:
        diag["details"] = details
    print(json.dumps(diag), file=sys.stderr)
    return exit_code


def _read_json(path: str) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except OSError as exc:
        raise ManifestError(f"cannot read {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise ManifestError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from None


def _manifest(ref: str) -> dict:
    """A manifest from a path, or a built-in design by name."""
    if not os.path.exists(ref) and ref in builtin_names():
        return builtin_manifest(ref)
    return load_manifest(ref)


def _load(args):
    manifest = _manifest(args.design)
    return build_program(manifest, device=args.device)


def _resolve(loaded, placer_name: str):
    placer_cls = PLACERS[placer_name]
    try:
        return loaded.program.resolve_program(placer_cls() if placer_cls else None)
    except TilecastError as exc:
        raise CliFailure(exc, EXIT_RESOLVE) from None


def cmd_emit(args) -> int:
    design = _resolve(_load(args), args.placer)
    text = emit(design, canonical=not args.declaration_order)
    if args.output:
        Path(args.output).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def _read_buffer(path: str, shape, dtype) -> np.ndarray:
    p = Path(path)
    try:
        if p.suffix.lower() == ".csv":
            data = np.loadtxt(p, delimiter=",", dtype=dtype, ndmin=1)
        else:
            data = np.fromfile(p, dtype=np.dtype(dtype).newbyteorder("<"))
    except (OSError, ValueError) as exc:
        raise ManifestError(f"cannot read buffer file {path}: {exc}") from None
    if data.size != int(np.prod(shape)):
        raise ManifestError(f"{path} holds {data.size} elements, buffer needs {int(np.prod(shape))}")
    return data.reshape(shape)


def cmd_run(args) -> int:
    design = _resolve(_load(args), args.placer)
    files = {}
    for item in args.inputs:
        name, sep, path = item.partition("=")
        if not sep:
            raise ManifestError(f"--in expects NAME=PATH, got {item!r}")
        files[name] = path
    inputs = {}
    known = {b.name: b for b in design.buffers}
    for name in files:
        if name not in known:
            raise ManifestError(f"unknown buffer {name!r}; design has {', '.join(known)}")
    for b in design.buffers:
        if b.name in files:
            inputs[b.name] = _read_buffer(files[b.name], b.shape, b.dtype)
        else:
            inputs[b.name] = np.arange(int(np.prod(b.shape))).astype(b.dtype).reshape(b.shape)
    try:
        report = simulate(design, inputs, seed=args.seed)
    except SimulationError as exc:
        raise CliFailure(exc, EXIT_RESOLVE) from None
    out = report.to_json()
    if args.out:
        outdir = Path(args.out)
        outdir.mkdir(parents=True, exist_ok=True)
        for name, arr in report.outputs.items():
            path = outdir / f"{name}.bin"
            arr.astype(arr.dtype.newbyteorder("<")).tofile(path)
            out["outputs"][name]["file"] = str(path)
        (outdir / "report.json").write_text(json.dumps(out, indent=2) + "\n")
    print(json.dumps(out, indent=2))
    if not report.completed:
        raise CliFailure(
            Deadlock("no actor can make progress: " + "; ".join(report.blocked), blocked=report.blocked),
            EXIT_DEADLOCK,
        )
    return EXIT_OK


def _pattern(args):
    if args.tiler:
        return group_tiler(TilerSpec.from_json(_read_json(args.tiler)))
    if not args.pattern:
        raise ManifestError("viz needs a pattern file or --tiler")
    return pattern_from_json(_read_json(args.pattern))


def cmd_viz(args) -> int:
    pattern = _pattern(args)
    grid = pattern.access_order() if args.kind == "order" else pattern.access_count()
    data = render_access_map(grid, args.format)
    if args.output:
        Path(args.output).write_bytes(data)
    else:
        sys.stdout.buffer.write(data)
        if args.format == "csv":
            sys.stdout.buffer.write(b"\n")
        sys.stdout.flush()
    return EXIT_OK


def cmd_equiv(args) -> int:
    a = pattern_from_json(_read_json(args.a))
    b = pattern_from_json(_read_json(args.b))
    if strictly_equal(a, b):
        verdict = "strict"
    elif access_equivalent(a, b):
        verdict = "access_equivalent"
    else:
        verdict = "different"
    print(verdict)
    return EXIT_DIFFERENT if verdict == "different" else EXIT_OK


def cmd_diff(args) -> int:
    try:
        a, b = Path(args.a).read_text(), Path(args.b).read_text()
    except OSError as exc:
        raise ManifestError(f"cannot read {exc.filename}: {exc.strerror}") from None
    result = design_diff(a, b, args.mode)
    if result.equal:
        print(f"equal ({args.mode})")
        return EXIT_OK
    print(f"different ({args.mode})")
    for line in result.differences:
        print(line)
    return EXIT_DIFFERENT


def _grid_diagram(design, device) -> str:
    occupants: dict = {}
    for w in design.workers:
        occupants.setdefault(w.tile, []).append(w.name)
    for l in design.links:
        occupants.setdefault(l.tile, []).append(l.name)
    for op in design.dma_ops():
        occupants.setdefault(op.tile, [])
        if "dma" not in occupants[op.tile]:
            occupants[op.tile].append("dma")
    width = max([12] + [len(",".join(v)) + 2 for v in occupants.values()])
    lines = []
    for row in reversed(range(device.n_rows)):
        cells = []
        for col in range(device.n_cols):
            names = occupants.get((col, row))
            kind = device.tile_at(col, row).kind
            label = ",".join(names) if names else {TileKind.SHIM: "shim", TileKind.MEM: "mem"}.get(kind, ".")
            cells.append(f"[{label:^{width - 2}}]")
        lines.append(f"row {row} " + " ".join(cells))
    lines.append("      " + " ".join(f"{'col ' + str(c):^{width}}" for c in range(device.n_cols)))
    return "\n".join(lines)


def cmd_place(args) -> int:
    loaded = _load(args)
    design = _resolve(loaded, args.placer)
    device = loaded.program.device
    print(_grid_diagram(design, device))
    print()
    print(f"{'component':<24} {'tile':<8} role")
    for w in design.workers:
        print(f"{'@' + w.name:<24} {str(w.tile).replace(' ', ''):<8} worker {w.kernel}")
    for l in design.links:
        print(f"{'@' + l.name:<24} {str(l.tile).replace(' ', ''):<8} {l.kind} link")
    seen = set()
    for op in design.dma_ops():
        key = (str(op.port), op.tile)
        if key in seen:
            continue
        seen.add(key)
        print(f"{str(op.port):<24} {str(op.tile).replace(' ', ''):<8} shim dma")
    return EXIT_OK


def cmd_designs(args) -> int:
    if args.action == "list":
        for name in builtin_names():
            desc = builtin_manifest(name).get("description", "")
            print(f"{name:<12} {desc}")
        return EXIT_OK
    if not args.name:
        raise ManifestError("designs show needs a design name")
    print(json.dumps(builtin_manifest(args.name), indent=2))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tilecast", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def design_args(p):
        p.add_argument("design", help="manifest path or built-in design name")
        p.add_argument("--device", default=None, help="preset name or @profile.json")
        p.add_argument("--placer", choices=sorted(PLACERS), default="sequential")

    p = sub.add_parser("emit", help="resolve a design and print its IR")
    design_args(p)
    p.add_argument("--declaration-order", action="store_true", help="skip canonical sorting")
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_emit)

    p = sub.add_parser("run", help="simulate a design")
    design_args(p)
    p.add_argument("--in", dest="inputs", action="append", default=[], metavar="NAME=PATH",
                   help="input buffer from .bin (little-endian) or .csv; default iota")
    p.add_argument("--out", help="directory for output buffers and report.json")
    p.add_argument("--seed", type=int, default=None, help="random schedule seed")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("viz", help="render an access order or count map")
    p.add_argument("pattern", nargs="?", help="tap or tase JSON")
    p.add_argument("--tiler", help="TilerSpec JSON instead of a pattern")
    p.add_argument("--kind", choices=["order", "count"], default="order")
    p.add_argument("--format", choices=["ansi", "csv", "pgm"], default="ansi")
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_viz)

    p = sub.add_parser("equiv", help="compare two access patterns")
    p.add_argument("a")
    p.add_argument("b")
    p.set_defaults(func=cmd_equiv)

    p = sub.add_parser("diff", help="compare two IR files")
    p.add_argument("a")
    p.add_argument("b")
    p.add_argument("--mode", choices=DIFF_MODES, default="modulo_order")
    p.set_defaults(func=cmd_diff)

    p = sub.add_parser("place", help="show where a design lands on the grid")
    design_args(p)
    p.set_defaults(func=cmd_place)

    p = sub.add_parser("designs", help="list or show built-in designs")
    p.add_argument("action", choices=["list", "show"])
    p.add_argument("name", nargs="?")
    p.set_defaults(func=cmd_designs)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USER if exc.code else EXIT_OK
    try:
        return args.func(args)
    except CliFailure as exc:
        return _diagnose(exc.error, exc.exit_code)
    except ResolutionError as exc:
        return _diagnose(exc, EXIT_RESOLVE)
    except TilecastError as exc:
        return _diagnose(exc, EXIT_USER)


if __name__ == "__main__":
    sys.exit(main())

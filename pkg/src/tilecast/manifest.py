"""JSON design manifests.

A manifest declares buffers, fifos, links, workers and runtime operations by
name and builds a :class:`~tilecast.dataflow.Program` from them::

    {
      "name": "vsadd",
      "device": "npu1col1",
      "buffers": [{"name": "a", "type": "int32", "shape": [64]}, ...],
      "fifos": [{"name": "of_in", "type": "int32", "shape": [16], "depth": 2}],
      "links": [{"op": "forward", "parent": "of_in", "child": "of_mid"}],
      "workers": [{"name": "w0", "kernel": "add_scalar",
                   "args": [{"cons": "of_mid"}, {"prod": "of_out"}, 3]}],
      "runtime": [{"op": "start", "workers": ["w0"]},
                  {"op": "fill", "fifo": "of_in", "buffer": "a"},
                  {"op": "drain", "fifo": "of_out", "buffer": "b", "wait": true}]
    }

Each ``{"cons": name}`` worker argument and each link parent mints a new
consumer, so naming a fifo twice is a broadcast. All drains of one fifo share
a single consumer. Fill and drain take a ``tap`` object, a ``taps`` list or a
``tiler`` spec; without one they transfer the whole buffer. Placements are
``[col, row]`` or a hint name.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np

from .dataflow import ObjectFifo, Program, Runtime, Worker
from .device import Device, Tile, device_new
from .errors import ManifestError
from .placement import HINTS
from .taplib import TensorAccessPattern, TensorAccessSequence
from .tiler import TilerSpec, group_tiler

_PLACEMENT = {
    "oneOf": [
        {"type": "array", "items": {"type": "integer", "minimum": 0}, "minItems": 2, "maxItems": 2},
        {"enum": sorted(HINTS)},
    ]
}
_SHAPE = {"type": "array", "items": {"type": "integer", "minimum": 1}, "minItems": 1}
_TAP = {
    "type": "object",
    "properties": {
        "offset": {"type": "integer", "minimum": 0},
        "sizes": {"type": "array", "items": {"type": "integer"}},
        "strides": {"type": "array", "items": {"type": "integer"}},
    },
    "required": ["sizes", "strides"],
    "additionalProperties": False,
}
_NAME = {"type": "string", "pattern": "^[A-Za-z_][A-Za-z0-9_]*$"}

SCHEMA = {
    "type": "object",
    "required": ["fifos", "runtime"],
    "additionalProperties": False,
    "properties": {
        "name": {"type": "string"},
        "description": {"type": "string"},
        "device": {"oneOf": [{"type": "string"}, {"type": "object"}]},
        "buffers": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["name", "type", "shape"],
                "additionalProperties": False,
                "properties": {"name": _NAME, "type": {"type": "string"}, "shape": _SHAPE},
            },
        },
        "fifos": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["name", "type", "shape"],
                "additionalProperties": False,
                "properties": {
                    "name": _NAME,
                    "type": {"type": "string"},
                    "shape": _SHAPE,
                    "depth": {"type": "integer", "minimum": 1},
                },
            },
        },
        "links": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["op", "parent"],
                "additionalProperties": False,
                "properties": {
                    "op": {"enum": ["forward", "split", "join"]},
                    "parent": _NAME,
                    "child": _NAME,
                    "children": {"type": "array", "items": _NAME, "minItems": 1},
                    "depth": {"type": "integer", "minimum": 1},
                    "placement": _PLACEMENT,
                },
            },
        },
        "workers": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["name", "kernel"],
                "additionalProperties": False,
                "properties": {
                    "name": _NAME,
                    "kernel": {"type": "string"},
                    "args": {
                        "type": "array",
                        "items": {
                            "oneOf": [
                                {"type": "number"},
                                {
                                    "type": "object",
                                    "properties": {"cons": _NAME},
                                    "required": ["cons"],
                                    "additionalProperties": False,
                                },
                                {
                                    "type": "object",
                                    "properties": {"prod": _NAME},
                                    "required": ["prod"],
                                    "additionalProperties": False,
                                },
                            ]
                        },
                    },
                    "placement": _PLACEMENT,
                },
            },
        },
        "runtime": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["op"],
                "properties": {
                    "op": {"enum": ["start", "fill", "drain", "inline"]},
                    "workers": {"type": "array", "items": _NAME},
                    "fifo": _NAME,
                    "buffer": _NAME,
                    "wait": {"type": "boolean"},
                    "tap": _TAP,
                    "taps": {"type": "array", "items": _TAP, "minItems": 1},
                    "tiler": {"type": "object"},
                    "placement": _PLACEMENT,
                    "text": {"type": "string"},
                },
                "additionalProperties": False,
            },
        },
    },
}


@dataclass
class LoadedDesign:
    name: str
    manifest: dict
    program: Program
    fifos: dict[str, ObjectFifo]
    workers: dict[str, Worker]


def _placement(value):
    if value is None:
        return None
    if isinstance(value, str):
        return HINTS[value]
    return Tile(*value)


def _dtype(name: str, where: str) -> np.dtype:
    try:
        return np.dtype(name)
    except TypeError:
        raise ManifestError(f"{where}: unknown element type {name!r}") from None


def _tap_fields(op: dict, dims: tuple[int, ...]):
    given = [k for k in ("tap", "taps", "tiler") if k in op]
    if len(given) > 1:
        raise ManifestError("a runtime op takes only one of tap, taps or tiler")
    if not given:
        return None
    if "tap" in op:
        t = op["tap"]
        return TensorAccessPattern(dims, t.get("offset", 0), t["sizes"], t["strides"])
    if "taps" in op:
        return TensorAccessSequence.from_taps(
            [TensorAccessPattern(dims, t.get("offset", 0), t["sizes"], t["strides"]) for t in op["taps"]]
        )
    spec = dict(op["tiler"])
    spec.setdefault("tensor_dims", list(dims))
    return group_tiler(TilerSpec.from_json(spec))


def _lookup(table: dict, name: str, what: str):
    try:
        return table[name]
    except KeyError:
        raise ManifestError(f"unknown {what} {name!r}") from None


def build_program(manifest: dict, device: Device | str | dict | None = None) -> LoadedDesign:
    """Validate ``manifest`` and build its program. ``device`` overrides the
    manifest's own device entry."""
    try:
        jsonschema.validate(manifest, SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ManifestError(f"{where}: {exc.message}") from None
    if device is None:
        device = manifest.get("device")
    dev = device_new(device)

    fifos: dict[str, ObjectFifo] = {}

    def add_fifo(name: str, fifo: ObjectFifo) -> None:
        if name in fifos:
            raise ManifestError(f"fifo {name!r} is declared twice")
        fifos[name] = fifo

    for f in manifest["fifos"]:
        dtype = _dtype(f["type"], f"fifo {f['name']}")
        add_fifo(f["name"], ObjectFifo((tuple(f["shape"]), dtype), f.get("depth", 2), name=f["name"]))

    for l in manifest.get("links", []):
        parent = _lookup(fifos, l["parent"], "fifo")
        place = _placement(l.get("placement", "AnyMemTile"))
        if l["op"] == "forward":
            if "child" not in l:
                raise ManifestError("a forward link needs a child name")
            child = parent.cons().forward(place, depth=l.get("depth"), name=l["child"])
            add_fifo(l["child"], child)
            continue
        names = l.get("children")
        if not names:
            raise ManifestError(f"a {l['op']} link needs children names")
        depths = [l["depth"]] * len(names) if "depth" in l else None
        handle = parent.cons() if l["op"] == "split" else parent.prod()
        method = handle.split if l["op"] == "split" else handle.join
        for name, child in zip(names, method(len(names), place, depths, names)):
            add_fifo(name, child)

    workers: dict[str, Worker] = {}
    for w in manifest.get("workers", []):
        args = []
        for a in w.get("args", []):
            if isinstance(a, dict) and "cons" in a:
                args.append(_lookup(fifos, a["cons"], "fifo").cons())
            elif isinstance(a, dict):
                args.append(_lookup(fifos, a["prod"], "fifo").prod())
            else:
                args.append(a)
        if w["name"] in workers:
            raise ManifestError(f"worker {w['name']!r} is declared twice")
        workers[w["name"]] = Worker(w["kernel"], args, _placement(w.get("placement")), name=w["name"])

    rt = Runtime()
    specs = manifest.get("buffers", [])
    types = [((tuple(b["shape"])), _dtype(b["type"], f"buffer {b['name']}")) for b in specs]
    with rt.sequence(*types, names=[b["name"] for b in specs]) as bufs:
        buffers = {b.name: b for b in bufs}
        drain_handles = {}
        for op in manifest["runtime"]:
            kind = op["op"]
            if kind == "start":
                rt.start(*(_lookup(workers, n, "worker") for n in op.get("workers", [])))
            elif kind == "inline":
                rt.inline_ops(op.get("text", ""))
            else:
                for key in ("fifo", "buffer"):
                    if key not in op:
                        raise ManifestError(f"a {kind} op needs a {key!r}")
                fifo = _lookup(fifos, op["fifo"], "fifo")
                buf = _lookup(buffers, op["buffer"], "buffer")
                tap = _tap_fields(op, buf.shape)
                if kind == "fill":
                    handle = fifo.prod()
                else:
                    handle = drain_handles.get(op["fifo"])
                    if handle is None:
                        handle = drain_handles[op["fifo"]] = fifo.cons()
                getattr(rt, kind)(handle, buf, tap, wait=op.get("wait", False), placement=_placement(op.get("placement")))
    return LoadedDesign(manifest.get("name", "design"), manifest, Program(dev, rt), fifos, workers)


def load_manifest(path: str | Path) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except OSError as exc:
        raise ManifestError(f"cannot read {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise ManifestError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from None


def builtin_names() -> list[str]:
    root = resources.files("tilecast") / "designs"
    return sorted(p.name[: -len(".json")] for p in root.iterdir() if p.name.endswith(".json"))


def builtin_manifest(name: str) -> dict:
    if name not in builtin_names():
        raise ManifestError(f"no built-in design {name!r}; known: {', '.join(builtin_names())}")
    text = (resources.files("tilecast") / "designs" / f"{name}.json").read_text()
    return json.loads(text)

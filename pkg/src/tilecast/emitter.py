"""Resolved designs and their textual IR (``.tir``).

The format is line oriented, one record per line::

    <keyword> @<name> key=value key=value ...

Sections appear in a fixed order (device, tiles, fifos, workers, runtime) and
``#`` starts a comment line. Canonical emission sorts declarations inside a
section by ``(keyword, name)`` using natural ordering of digit runs; runtime
records keep their sequence order because it carries meaning. Values are
integers, ``true``/``false``, ``(col,row)`` tiles, ``[a,b,...]`` lists,
``@name`` references and ``@fifo:prod`` / ``@fifo:cons<k>`` port references.
Element types are written ``<dtype>[d0,d1,...]``. DMA records end with
``tap off=<offset> sizes=[...] strides=[...]``; inline records end with
``text=<json string>``.

Consumer ports are numbered canonically: by consumer tile, then by the
``(keyword, name)`` of the first record that references the port.
"""

from __future__ import annotations

import difflib
import hashlib
import json
import re
from dataclasses import dataclass, field, replace
from typing import Callable, Iterable, Union

import numpy as np

from .errors import ParseError
from .taplib import TensorAccessPattern, TensorAccessSequence

IR_HEADER = "# tilecast-ir v1"

Coord = tuple[int, int]


@dataclass(frozen=True)
class PortRef:
    fifo: str
    role: str  # "prod" | "cons"
    index: int = 0

    def __str__(self) -> str:
        if self.role == "prod":
            return f"@{self.fifo}:prod"
        return f"@{self.fifo}:cons{self.index}"


@dataclass(frozen=True)
class DeviceRecord:
    name: str
    n_cols: int
    rows: tuple[str, ...]


@dataclass(frozen=True)
class FifoRecord:
    name: str
    dtype: str
    shape: tuple[int, ...]
    depth: int
    producer: Coord
    consumers: tuple[Coord, ...]

    @property
    def num_elements(self) -> int:
        return int(np.prod(self.shape))

    @property
    def nbytes(self) -> int:
        return self.num_elements * np.dtype(self.dtype).itemsize


@dataclass(frozen=True)
class LinkRecord:
    name: str
    kind: str  # "forward" | "split" | "join"
    tile: Coord
    sources: tuple[PortRef, ...]
    dests: tuple[PortRef, ...]


Arg = Union[PortRef, int, float]


@dataclass(frozen=True)
class WorkerRecord:
    name: str
    tile: Coord
    kernel: str
    args: tuple[Arg, ...]


@dataclass(frozen=True)
class BufferRecord:
    name: str
    dtype: str
    shape: tuple[int, ...]


@dataclass(frozen=True)
class StartOp:
    name: str
    workers: tuple[str, ...]


@dataclass(frozen=True)
class DmaOp:
    name: str
    op: str  # "fill" | "drain"
    port: PortRef
    buffer: str
    tile: Coord
    wait: bool
    tap: TensorAccessPattern


@dataclass(frozen=True)
class InlineOp:
    name: str
    text: str


RuntimeRecord = Union[StartOp, DmaOp, InlineOp]


@dataclass(frozen=True)
class ResolvedDesign:
    device: DeviceRecord
    fifos: tuple[FifoRecord, ...]
    links: tuple[LinkRecord, ...]
    workers: tuple[WorkerRecord, ...]
    buffers: tuple[BufferRecord, ...]
    runtime: tuple[RuntimeRecord, ...]
    profile: object = field(default=None, compare=False, repr=False)
    kernels: dict = field(default_factory=dict, compare=False, repr=False)

    def fifo(self, name: str) -> FifoRecord:
        for f in self.fifos:
            if f.name == name:
                return f
        raise KeyError(name)

    def buffer(self, name: str) -> BufferRecord:
        for b in self.buffers:
            if b.name == name:
                return b
        raise KeyError(name)

    def dma_ops(self) -> list[DmaOp]:
        return [op for op in self.runtime if isinstance(op, DmaOp)]

    def tiles_in_use(self) -> list[tuple[Coord, str]]:
        used = set()
        for f in self.fifos:
            used.add(f.producer)
            used.update(f.consumers)
        used.update(l.tile for l in self.links)
        used.update(w.tile for w in self.workers)
        used.update(op.tile for op in self.dma_ops())
        rows = self.device.rows
        return [(t, rows[t[1]] if t[1] < len(rows) else "?") for t in sorted(used)]

    def canonical(self) -> "ResolvedDesign":
        return canonicalize(self)

    def __str__(self) -> str:
        return emit(self)


# -- canonical form -----------------------------------------------------------


def _natural(name: str):
    return [int(p) if p.isdigit() else p for p in re.split(r"(\d+)", name)]


def _record_key(keyword: str, name: str):
    return (keyword, _natural(name))


def _port_refs(design: ResolvedDesign):
    """(record key, port) for every port reference in the design."""
    for w in design.workers:
        for a in w.args:
            if isinstance(a, PortRef):
                yield _record_key("worker", w.name), a
    for l in design.links:
        for p in l.sources + l.dests:
            yield _record_key("link", l.name), p
    for op in design.dma_ops():
        yield _record_key("rt", op.name), op.port


def canonicalize(design: ResolvedDesign) -> ResolvedDesign:
    """Renumber consumer ports canonically and sort declarations."""
    first_ref: dict[tuple[str, int], tuple] = {}
    for key, port in _port_refs(design):
        if port.role == "cons":
            k = (port.fifo, port.index)
            if k not in first_ref or key < first_ref[k]:
                first_ref[k] = key

    remap: dict[tuple[str, int], int] = {}
    fifos = []
    for f in design.fifos:
        order = sorted(
            range(len(f.consumers)),
            key=lambda i: (f.consumers[i], first_ref.get((f.name, i), ()), i),
        )
        for new, old in enumerate(order):
            remap[(f.name, old)] = new
        fifos.append(replace(f, consumers=tuple(f.consumers[i] for i in order)))

    def port(p: PortRef) -> PortRef:
        if p.role == "cons":
            return replace(p, index=remap.get((p.fifo, p.index), p.index))
        return p

    links = [
        replace(l, sources=tuple(map(port, l.sources)), dests=tuple(map(port, l.dests)))
        for l in design.links
    ]
    workers = [
        replace(w, args=tuple(port(a) if isinstance(a, PortRef) else a for a in w.args))
        for w in design.workers
    ]
    runtime = [
        replace(op, port=port(op.port)) if isinstance(op, DmaOp) else op
        for op in design.runtime
    ]
    by_name = lambda r: _natural(r.name)  # noqa: E731
    return replace(
        design,
        fifos=tuple(sorted(fifos, key=by_name)),
        links=tuple(sorted(links, key=by_name)),
        workers=tuple(sorted(workers, key=by_name)),
        buffers=tuple(sorted(design.buffers, key=by_name)),
        runtime=tuple(runtime),
    )


# -- emission -----------------------------------------------------------------


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, PortRef):
        return str(value)
    if isinstance(value, tuple) and len(value) == 2 and all(isinstance(v, int) for v in value):
        return f"({value[0]},{value[1]})"
    if isinstance(value, (list, tuple)):
        return "[" + ",".join(_fmt(v) for v in value) + "]"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _fmt_type(dtype: str, shape) -> str:
    return f"{dtype}[{','.join(str(int(s)) for s in shape)}]"


def format_tap(tap: TensorAccessPattern) -> str:
    return f"tap off={tap.offset} sizes={_fmt(list(tap.sizes))} strides={_fmt(list(tap.strides))}"


TapFormatter = Callable[[TensorAccessPattern], str]


def _emit_runtime(op: RuntimeRecord, tap_format: TapFormatter) -> str:
    if isinstance(op, StartOp):
        return f"rt @{op.name} op=start workers=[{','.join('@' + w for w in op.workers)}]"
    if isinstance(op, DmaOp):
        return (
            f"rt @{op.name} op={op.op} port={op.port} buf=@{op.buffer} "
            f"tile={_fmt(op.tile)} wait={_fmt(op.wait)} {tap_format(op.tap)}"
        )
    return f"rt @{op.name} op=inline text={json.dumps(op.text)}"


def emit(
    design: ResolvedDesign,
    *,
    canonical: bool = True,
    tap_format: TapFormatter = format_tap,
) -> str:
    """IR text for ``design``.

    With ``canonical=False`` records are written in declaration order with
    consumer ports numbered by ``cons()`` call order, much like a naive
    emitter would; that text still parses and diffs equal modulo order.
    """
    if canonical:
        design = canonicalize(design)
    d = design.device
    lines = [
        IR_HEADER,
        f"device @{d.name} cols={d.n_cols} rows={_fmt(list(d.rows))}",
        "# tiles",
    ]
    lines += [
        f"tile @t{c}_{r} col={c} row={r} kind={kind}" for (c, r), kind in design.tiles_in_use()
    ]
    lines.append("# fifos")
    lines += [
        f"fifo @{f.name} type={_fmt_type(f.dtype, f.shape)} depth={f.depth} "
        f"prod={_fmt(f.producer)} cons={_fmt(list(f.consumers))}"
        for f in design.fifos
    ]
    lines += [
        f"link @{l.name} kind={l.kind} tile={_fmt(l.tile)} "
        f"src={_fmt(list(l.sources))} dst={_fmt(list(l.dests))}"
        for l in design.links
    ]
    lines.append("# workers")
    lines += [
        f"worker @{w.name} tile={_fmt(w.tile)} kernel={w.kernel} args={_fmt(list(w.args))}"
        for w in design.workers
    ]
    lines.append("# runtime")
    lines += [f"buffer @{b.name} type={_fmt_type(b.dtype, b.shape)}" for b in design.buffers]
    lines += [_emit_runtime(op, tap_format) for op in design.runtime]
    return "\n".join(lines) + "\n"


# -- parsing ------------------------------------------------------------------

_TYPE_RE = re.compile(r"^([A-Za-z_][A-Za-z0-9_]*)\[([0-9,]+)\]$")
_INT_RE = re.compile(r"^-?\d+$")
_FLOAT_RE = re.compile(r"^-?(\d+\.\d*|\d*\.\d+|\d+)([eE][-+]?\d+)?$")
_PORT_RE = re.compile(r"^@([^:\s]+):(prod|cons(\d+))$")


def _split_top(s: str) -> list[str]:
    parts, depth, cur = [], 0, []
    for ch in s:
        if ch in "([":
            depth += 1
        elif ch in ")]":
            depth -= 1
        if ch == "," and depth == 0:
            parts.append("".join(cur))
            cur = []
        else:
            cur.append(ch)
    if cur:
        parts.append("".join(cur))
    return parts


def _value(s: str):
    if s.startswith("["):
        if not s.endswith("]"):
            raise ParseError(f"unterminated list {s!r}")
        inner = s[1:-1]
        return [_value(p) for p in _split_top(inner)] if inner else []
    if s.startswith("("):
        try:
            col, row = s[1:-1].split(",")
            return (int(col), int(row))
        except ValueError:
            raise ParseError(f"bad tile coordinate {s!r}") from None
    if s in ("true", "false"):
        return s == "true"
    m = _PORT_RE.match(s)
    if m:
        if m.group(2) == "prod":
            return PortRef(m.group(1), "prod")
        return PortRef(m.group(1), "cons", int(m.group(3)))
    if s.startswith("@"):
        return s[1:]
    if _INT_RE.match(s):
        return int(s)
    if _FLOAT_RE.match(s):
        return float(s)
    return s


def _type(s: str) -> tuple[str, tuple[int, ...]]:
    m = _TYPE_RE.match(s)
    if not m:
        raise ParseError(f"bad element type {s!r}")
    return m.group(1), tuple(int(x) for x in m.group(2).split(","))


def _fields(tokens: Iterable[str], lineno: int) -> dict:
    out = {}
    for tok in tokens:
        if "=" not in tok:
            raise ParseError(f"line {lineno}: expected key=value, got {tok!r}")
        key, raw = tok.split("=", 1)
        out[key] = raw
    return out


def _need(fields: dict, key: str, lineno: int) -> str:
    try:
        return fields[key]
    except KeyError:
        raise ParseError(f"line {lineno}: missing field {key!r}") from None


def parse_ir(text: str) -> ResolvedDesign:
    """Parse IR text back into a :class:`ResolvedDesign` (records only; kernel
    routines are looked up by name when simulating)."""
    device = None
    fifos, links, workers, buffers, runtime = [], [], [], [], []
    buffer_dims: dict[str, tuple[int, ...]] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        head, _, rest = line.partition(" ")
        name_tok, _, rest = rest.partition(" ")
        if not name_tok.startswith("@"):
            raise ParseError(f"line {lineno}: expected @name after {head!r}")
        name = name_tok[1:]
        try:
            if head == "rt" and " op=inline " in f" {rest} ":
                text_part = rest.split("text=", 1)
                if len(text_part) != 2:
                    raise ParseError(f"line {lineno}: inline record without text")
                runtime.append(InlineOp(name, json.loads(text_part[1])))
                continue
            tap = None
            if " tap " in f" {rest} ":
                rest, _, tap_part = f" {rest} ".partition(" tap ")
                tap = _fields(tap_part.split(), lineno)
            f = _fields(rest.split(), lineno)
            if head == "device":
                device = DeviceRecord(
                    name, int(_need(f, "cols", lineno)), tuple(_value(_need(f, "rows", lineno)))
                )
            elif head == "tile":
                continue
            elif head == "fifo":
                dtype, shape = _type(_need(f, "type", lineno))
                fifos.append(
                    FifoRecord(
                        name,
                        dtype,
                        shape,
                        int(_need(f, "depth", lineno)),
                        _value(_need(f, "prod", lineno)),
                        tuple(_value(_need(f, "cons", lineno))),
                    )
                )
            elif head == "link":
                links.append(
                    LinkRecord(
                        name,
                        _need(f, "kind", lineno),
                        _value(_need(f, "tile", lineno)),
                        tuple(_value(_need(f, "src", lineno))),
                        tuple(_value(_need(f, "dst", lineno))),
                    )
                )
            elif head == "worker":
                workers.append(
                    WorkerRecord(
                        name,
                        _value(_need(f, "tile", lineno)),
                        _need(f, "kernel", lineno),
                        tuple(_value(_need(f, "args", lineno))),
                    )
                )
            elif head == "buffer":
                dtype, shape = _type(_need(f, "type", lineno))
                buffers.append(BufferRecord(name, dtype, shape))
                buffer_dims[name] = shape
            elif head == "rt":
                op = _need(f, "op", lineno)
                if op == "start":
                    runtime.append(StartOp(name, tuple(_value(_need(f, "workers", lineno)))))
                elif op in ("fill", "drain"):
                    if tap is None:
                        raise ParseError(f"line {lineno}: DMA record without tap")
                    buf = _value(_need(f, "buf", lineno))
                    if buf not in buffer_dims:
                        raise ParseError(f"line {lineno}: unknown buffer @{buf}")
                    port = _value(_need(f, "port", lineno))
                    if not isinstance(port, PortRef):
                        raise ParseError(f"line {lineno}: bad port reference")
                    runtime.append(
                        DmaOp(
                            name,
                            op,
                            port,
                            buf,
                            _value(_need(f, "tile", lineno)),
                            _value(_need(f, "wait", lineno)),
                            TensorAccessPattern(
                                buffer_dims[buf],
                                int(_need(tap, "off", lineno)),
                                _value(_need(tap, "sizes", lineno)),
                                _value(_need(tap, "strides", lineno)),
                                max_rank=max(len(_value(tap["sizes"])), 4),
                            ),
                        )
                    )
                else:
                    raise ParseError(f"line {lineno}: unknown runtime op {op!r}")
            else:
                raise ParseError(f"line {lineno}: unknown record {head!r}")
        except ParseError:
            raise
        except (ValueError, TypeError, json.JSONDecodeError) as exc:
            raise ParseError(f"line {lineno}: {exc}") from None
    if device is None:
        raise ParseError("missing device record")
    return ResolvedDesign(
        device, tuple(fifos), tuple(links), tuple(workers), tuple(buffers), tuple(runtime)
    )


# -- comparison ---------------------------------------------------------------

DIFF_MODES = ("strict", "modulo_order", "access_equiv")


@dataclass
class DiffResult:
    mode: str
    equal: bool
    differences: list[str]

    def __bool__(self) -> bool:
        return self.equal


def _access_fingerprint(pattern) -> str:
    order, count = pattern.access_tensors()
    h = hashlib.sha256()
    h.update(repr(tuple(pattern.tensor_dims)).encode())
    h.update(order.astype("<i8").tobytes())
    h.update(count.astype("<i8").tobytes())
    return "access=" + h.hexdigest()[:16]


def _merge_dma_runs(design: ResolvedDesign) -> list[str]:
    """Runtime lines with consecutive DMA ops on one port merged into a single
    access-equivalence fingerprint, and op names dropped."""
    out = []
    run: list[DmaOp] = []

    def flush():
        if not run:
            return
        first = run[0]
        seq = TensorAccessSequence.from_taps([op.tap for op in run])
        out.append(
            f"rt op={first.op} port={first.port} buf=@{first.buffer} tile={_fmt(first.tile)} "
            f"wait={_fmt(run[-1].wait)} {_access_fingerprint(seq)}"
        )
        run.clear()

    for op in design.runtime:
        if isinstance(op, DmaOp):
            same = run and (op.op, op.port, op.buffer, op.tile) == (
                run[0].op,
                run[0].port,
                run[0].buffer,
                run[0].tile,
            )
            if run and not (same and not run[-1].wait):
                flush()
            run.append(op)
            continue
        flush()
        line = _emit_runtime(op, format_tap)
        out.append("rt " + line.split(" ", 2)[2])
    flush()
    return out


def _normalized_lines(text: str, mode: str) -> list[str]:
    design = canonicalize(parse_ir(text))
    lines = emit(design).splitlines()
    if mode == "access_equiv":
        lines = [l for l in lines if not l.startswith("rt ")] + _merge_dma_runs(design)
    return lines


def design_diff(a: str, b: str, mode: str = "modulo_order") -> DiffResult:
    """Compare two IR texts.

    ``strict`` is byte equality. ``modulo_order`` compares canonical forms, so
    declaration order and broadcast recipient order are ignored.
    ``access_equiv`` additionally treats runtime transfers as equal when the
    access patterns are access equivalent.
    """
    if mode not in DIFF_MODES:
        raise ValueError(f"unknown diff mode {mode!r}; expected one of {DIFF_MODES}")
    if mode == "strict":
        la, lb = a.splitlines(), b.splitlines()
        # both must still parse
        parse_ir(a)
        parse_ir(b)
        equal = a == b
    else:
        la, lb = _normalized_lines(a, mode), _normalized_lines(b, mode)
        equal = la == lb
    diff = [] if equal else list(difflib.unified_diff(la, lb, "a", "b", lineterm=""))
    if not equal and not diff:
        diff = ["(texts differ only in whitespace or line endings)"]
    return DiffResult(mode, equal, diff)

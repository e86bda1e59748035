"""Deferred-resolution design layer.

Building ObjectFifos, Workers and Runtime operations only records intent;
names, tiles and the IR are fixed by :meth:`Program.resolve_program`.
"""

from __future__ import annotations

import contextlib
import itertools
import typing
from dataclasses import dataclass
from typing import Callable, Iterator, Sequence, Union

import numpy as np

from .device import Device, Tile, TileKind, check_dma_pattern
from .emitter import (
    BufferRecord,
    DeviceRecord,
    DmaOp,
    FifoRecord,
    InlineOp,
    LinkRecord,
    PortRef,
    ResolvedDesign,
    StartOp,
    WorkerRecord,
)
from .errors import (
    DanglingEndpoint,
    DesignError,
    DmaViolation,
    DuplicateName,
    HandleAlreadyBound,
    InvalidDepth,
    KindMismatch,
    NoCompletion,
    NonDivisible,
    NonMultiple,
    OutsideCoreBody,
    ResourceExhausted,
    RoleMismatch,
    ShapeMismatch,
    Unplaced,
)
from .placement import AnyMemTile, AnyShim, Placeable, PlacementHint, Placer, validate_placement
from .sim import kernels as kernel_registry
from .taplib import TensorAccessPattern, TensorAccessSequence

PRODUCER = "prod"
CONSUMER = "cons"

# construction order, used only for declaration-order emission
_serial = itertools.count()


def parse_obj_type(obj_type) -> tuple[tuple[int, ...], np.dtype]:
    """``np.ndarray[(shape), np.dtype[T]]`` or ``(shape, dtype)``."""
    if typing.get_origin(obj_type) is np.ndarray:
        shape, dt = typing.get_args(obj_type)
        if typing.get_origin(dt) is np.dtype:
            (dt,) = typing.get_args(dt)
    else:
        try:
            shape, dt = obj_type
        except (TypeError, ValueError):
            raise DesignError(f"cannot interpret object type {obj_type!r}") from None
    if isinstance(shape, (int, np.integer)):
        shape = (shape,)
    try:
        shape = tuple(int(s) for s in shape)
        dtype = np.dtype(dt)
    except TypeError:
        raise DesignError(f"cannot interpret object type {obj_type!r}") from None
    if not shape or any(s <= 0 for s in shape):
        raise DesignError(f"object shape must be non-empty and positive, got {shape}")
    return shape, dtype


class ObjectFifoHandle:
    """One end of an ObjectFifo: the producer, or consumer ``index``."""

    def __init__(self, fifo: "ObjectFifo", role: str, index: int = 0):
        self.fifo = fifo
        self.role = role
        self.index = index
        self.endpoint: Placeable | None = None

    def __repr__(self) -> str:
        who = "prod" if self.role == PRODUCER else f"cons{self.index}"
        return f"<{self.fifo.describe()}:{who}>"

    def _bind(self, endpoint: Placeable) -> None:
        if self.endpoint is not None and self.endpoint is not endpoint:
            raise HandleAlreadyBound(f"{self!r} is already bound to {self.endpoint.describe()}")
        self.endpoint = endpoint

    def _need(self, role: str, what: str) -> None:
        if self.role != role:
            raise RoleMismatch(f"{what} needs a {'producer' if role == PRODUCER else 'consumer'} handle, got {self!r}")

    # Access only exists inside a running core body, where the simulator
    # substitutes its own ports for these handles.
    def acquire(self, n: int):
        raise OutsideCoreBody("acquire() is only available inside a worker body during simulation")

    def release(self, n: int):
        raise OutsideCoreBody("release() is only available inside a worker body during simulation")

    def forward(self, placement=AnyMemTile, obj_type=None, depth: int | None = None, name: str | None = None) -> "ObjectFifo":
        """Stage this stream through a mem tile unchanged."""
        self._need(CONSUMER, "forward")
        link = Link("forward", placement)
        child = ObjectFifo(obj_type or (self.fifo.obj_shape, self.fifo.dtype), depth or self.fifo.depth, name)
        if child.num_elements != self.fifo.num_elements:
            raise ShapeMismatch(
                f"forwarded object has {child.num_elements} elements, source has {self.fifo.num_elements}"
            )
        link._connect([self], [child.prod()])
        return child

    def split(self, n: int, placement=AnyMemTile, depths: Sequence[int] | None = None, names: Sequence[str] | None = None) -> list["ObjectFifo"]:
        """Child ``i`` carries the ``i``-th contiguous ``1/n`` slice of each object."""
        self._need(CONSUMER, "split")
        shape = _slice_shape(self.fifo, n)
        link = Link("split", placement)
        children = [
            ObjectFifo((shape, self.fifo.dtype), _pick(depths, i, self.fifo.depth), _pick(names, i, None))
            for i in range(n)
        ]
        link._connect([self], [c.prod() for c in children])
        return children

    def join(self, n: int, placement=AnyMemTile, depths: Sequence[int] | None = None, names: Sequence[str] | None = None) -> list["ObjectFifo"]:
        """Each object is the concatenation of one object from every child, in order."""
        self._need(PRODUCER, "join")
        shape = _slice_shape(self.fifo, n)
        link = Link("join", placement)
        children = [
            ObjectFifo((shape, self.fifo.dtype), _pick(depths, i, self.fifo.depth), _pick(names, i, None))
            for i in range(n)
        ]
        link._connect([c.cons() for c in children], [self])
        return children


def _pick(values, i, default):
    return default if values is None else values[i]


def _slice_shape(fifo: "ObjectFifo", n: int) -> tuple[int, ...]:
    n = int(n)
    if n < 1 or fifo.num_elements % n:
        raise NonDivisible(f"{fifo.num_elements}-element objects cannot be cut into {n} equal slices")
    if fifo.obj_shape[0] % n == 0:
        return (fifo.obj_shape[0] // n, *fifo.obj_shape[1:])
    return (fifo.num_elements // n,)


class ObjectFifo:
    """A typed circular buffer of ``depth`` objects between one producer and
    one or more consumers."""

    def __init__(self, obj_type, depth: int = 2, name: str | None = None):
        if not isinstance(depth, (int, np.integer)) or isinstance(depth, bool) or depth < 1:
            raise InvalidDepth(f"depth must be a positive integer, got {depth!r}")
        self.obj_shape, self.dtype = parse_obj_type(obj_type)
        self.depth = int(depth)
        self.name = name
        self.resolved_name: str | None = None
        self._serial = next(_serial)
        self._prod: ObjectFifoHandle | None = None
        self._cons: list[ObjectFifoHandle] = []

    def describe(self) -> str:
        return f"ObjectFifo({self.name or self.resolved_name or hex(id(self))})"

    def __repr__(self) -> str:
        return f"{self.describe()[:-1]}, {self.dtype}{list(self.obj_shape)}, depth={self.depth})"

    @property
    def num_elements(self) -> int:
        return int(np.prod(self.obj_shape))

    @property
    def nbytes(self) -> int:
        return self.num_elements * self.dtype.itemsize

    def prod(self) -> ObjectFifoHandle:
        if self._prod is None:
            self._prod = ObjectFifoHandle(self, PRODUCER)
        return self._prod

    def cons(self) -> ObjectFifoHandle:
        h = ObjectFifoHandle(self, CONSUMER, len(self._cons))
        self._cons.append(h)
        return h

    @property
    def consumers(self) -> list[ObjectFifoHandle]:
        return list(self._cons)

    def producer_endpoint(self) -> Placeable | None:
        return self._prod.endpoint if self._prod is not None else None

    def consumer_endpoints(self) -> list[Placeable]:
        return [h.endpoint for h in self._cons if h.endpoint is not None]


class Link(Placeable):
    """A mem-tile stage (forward, split or join) created by handle methods."""

    required_kind = TileKind.MEM

    def __init__(self, kind: str, placement=AnyMemTile):
        self.kind = kind
        self._serial = next(_serial)
        self.sources: list[ObjectFifoHandle] = []
        self.dests: list[ObjectFifoHandle] = []
        self._init_placement(placement)

    def _connect(self, sources, dests) -> None:
        for h in (*sources, *dests):
            h._bind(self)
        self.sources, self.dests = list(sources), list(dests)

    def describe(self) -> str:
        return f"{self.kind} link"


class ShimEndpoint(Placeable):
    """The host-side DMA end of a fifo, shared by every fill/drain on one handle."""

    required_kind = TileKind.SHIM

    def __init__(self, handle: ObjectFifoHandle, placement=None):
        self.handle = handle
        self._init_placement(placement if placement is not None else AnyShim)

    def describe(self) -> str:
        return f"shim endpoint of {self.handle!r}"


class Worker(Placeable):
    """A core program bound to fifo handles and scalar parameters.

    ``core_fn`` is a registered kernel name or a generator function with the
    kernel calling convention (see :mod:`tilecast.sim.kernels`). The body is
    iterated implicitly.
    """

    required_kind = TileKind.COMPUTE

    def __init__(self, core_fn: Union[str, Callable], fn_args: Sequence = (), placement=None, name: str | None = None):
        if not (isinstance(core_fn, str) or callable(core_fn)):
            raise DesignError(f"core_fn must be a kernel name or a callable, got {core_fn!r}")
        self.core_fn = core_fn
        self._serial = next(_serial)
        self.fn_args = list(fn_args)
        self.name = name
        self.resolved_name: str | None = None
        for a in self.fn_args:
            if isinstance(a, ObjectFifo):
                raise DesignError("pass fifo.prod() or fifo.cons() to a Worker, not the fifo")
        for a in self.fn_args:
            if isinstance(a, ObjectFifoHandle):
                a._bind(self)
        self._init_placement(placement)

    def describe(self) -> str:
        return f"Worker({self.name or self.resolved_name or self.kernel_name})"

    @property
    def kernel_name(self) -> str:
        if isinstance(self.core_fn, str):
            return self.core_fn
        for name in kernel_registry.kernel_names():
            if kernel_registry.get_kernel(name) is self.core_fn:
                return name
        return getattr(self.core_fn, "__name__", "kernel")

    def handles(self) -> list[ObjectFifoHandle]:
        return [a for a in self.fn_args if isinstance(a, ObjectFifoHandle)]


@dataclass(frozen=True)
class RuntimeBuffer:
    index: int
    shape: tuple[int, ...]
    dtype: np.dtype
    name: str | None = None

    @property
    def label(self) -> str:
        return self.name or f"buf{self.index}"

    @property
    def num_elements(self) -> int:
        return int(np.prod(self.shape))


@dataclass
class _Start:
    workers: tuple[Worker, ...]


@dataclass
class _Dma:
    op: str
    handle: ObjectFifoHandle
    endpoint: ShimEndpoint
    buffer: RuntimeBuffer
    tap: TensorAccessPattern
    wait: bool


@dataclass
class _Inline:
    text: str


class Runtime:
    """Host-side operation sequence: start workers, fill and drain fifos."""

    def __init__(self):
        self.buffers: list[RuntimeBuffer] = []
        self.ops: list = []

    @contextlib.contextmanager
    def sequence(self, *types, names: Sequence[str] | None = None) -> Iterator[tuple[RuntimeBuffer, ...]]:
        """Declare host buffers; ``names`` default to ``buf<k>``."""
        if names is not None and len(names) != len(types):
            raise DesignError("names must match the buffer types one to one")
        bufs = []
        for i, t in enumerate(types):
            shape, dtype = parse_obj_type(t)
            bufs.append(RuntimeBuffer(len(self.buffers), shape, dtype, None if names is None else names[i]))
            self.buffers.append(bufs[-1])
        yield tuple(bufs)

    def start(self, *workers: Worker) -> None:
        for w in workers:
            if not isinstance(w, Worker):
                raise DesignError(f"start() takes Workers, got {w!r}")
        self.ops.append(_Start(tuple(workers)))

    def _endpoint(self, handle: ObjectFifoHandle, placement) -> ShimEndpoint:
        ep = handle.endpoint
        if ep is None:
            ep = ShimEndpoint(handle, placement)
            handle._bind(ep)
        elif not isinstance(ep, ShimEndpoint):
            raise HandleAlreadyBound(f"{handle!r} is already bound to {ep.describe()}")
        elif isinstance(placement, PlacementHint):
            if placement.kind is not TileKind.SHIM:
                raise KindMismatch(f"{ep.describe()} needs a shim tile, got {placement!r}")
        elif placement is not None:
            ep.place(placement)
        return ep

    def _dma(self, op, handle, buffer, tap, wait, placement) -> None:
        if not isinstance(handle, ObjectFifoHandle):
            raise DesignError(f"{op}() needs an ObjectFifoHandle, got {handle!r}")
        handle._need(PRODUCER if op == "fill" else CONSUMER, op)
        if not isinstance(buffer, RuntimeBuffer) or buffer not in self.buffers:
            raise DesignError(f"{op}() needs a buffer from this runtime's sequence()")
        if tap is None:
            taps = [TensorAccessPattern.identity(buffer.shape)]
        elif isinstance(tap, TensorAccessSequence):
            taps = list(tap)
        else:
            taps = [tap]
        for t in taps:
            if tuple(t.tensor_dims) != buffer.shape:
                raise ShapeMismatch(f"tap dims {t.tensor_dims} do not match buffer shape {buffer.shape}")
            n, per = t.num_iterations, handle.fifo.num_elements
            if n < per or n % per:
                raise NonMultiple(f"tap selects {n} elements, not a positive multiple of the {per}-element object")
        ep = self._endpoint(handle, placement)
        for i, t in enumerate(taps):
            self.ops.append(_Dma(op, handle, ep, buffer, t, bool(wait) and i == len(taps) - 1))

    def fill(self, handle: ObjectFifoHandle, buffer: RuntimeBuffer, tap=None, wait: bool = False, placement=None) -> None:
        """Stream ``buffer`` elements in ``tap`` order into the fifo. A tase
        adds one fill per tap."""
        self._dma("fill", handle, buffer, tap, wait, placement)

    def drain(self, handle: ObjectFifoHandle, buffer: RuntimeBuffer, tap=None, wait: bool = False, placement=None) -> None:
        """Scatter fifo objects into ``buffer`` in ``tap`` order."""
        self._dma("drain", handle, buffer, tap, wait, placement)

    def inline_ops(self, text: str) -> None:
        self.ops.append(_Inline(str(text)))


class _Closure:
    """Components reachable from the runtime, in resolution walk order."""

    def __init__(self, rt: Runtime):
        self.workers: list[Worker] = []
        self.fifos: list[ObjectFifo] = []
        self.links: list[Link] = []
        self.shims: list[ShimEndpoint] = []
        self.started: set[int] = set()
        self._seen: set[int] = set()
        for op in rt.ops:
            if isinstance(op, _Start):
                for w in op.workers:
                    self.started.add(id(w))
                    self._worker(w)
            elif isinstance(op, _Dma):
                self._fifo(op.handle.fifo)

    def _once(self, obj) -> bool:
        if id(obj) in self._seen:
            return False
        self._seen.add(id(obj))
        return True

    def _worker(self, w: Worker) -> None:
        if self._once(w):
            self.workers.append(w)
            for h in w.handles():
                self._fifo(h.fifo)

    def _fifo(self, f: ObjectFifo) -> None:
        if not self._once(f):
            return
        self.fifos.append(f)
        for ep in [f.producer_endpoint(), *f.consumer_endpoints()]:
            if isinstance(ep, Link) and self._once(ep):
                self.links.append(ep)
                for h in (*ep.sources, *ep.dests):
                    self._fifo(h.fifo)
            elif isinstance(ep, Worker):
                self._worker(ep)
            elif isinstance(ep, ShimEndpoint) and self._once(ep):
                self.shims.append(ep)

    def placeables(self) -> list[Placeable]:
        return [*self.workers, *self.links, *self.shims]


def _assign_names(items, explicit: Callable, prefix: str) -> dict[int, str]:
    taken: dict[str, object] = {}
    for it in items:
        name = explicit(it)
        if name is None:
            continue
        if name in taken:
            raise DuplicateName(f"two components are named {name!r}")
        taken[name] = it
    counter = itertools.count()
    out = {}
    for it in items:
        name = explicit(it)
        if name is None:
            name = next(n for n in (f"{prefix}{k}" for k in counter) if n not in taken)
            taken[name] = it
        out[id(it)] = name
    return out


def _scalar(value):
    if isinstance(value, (bool, np.bool_)):
        return int(value)
    if isinstance(value, (int, np.integer)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        return float(value)
    raise DesignError(f"worker parameters must be fifo handles or numbers, got {value!r}")


class Program:
    """A runtime applied to a device."""

    def __init__(self, device: Device, rt: Runtime):
        self.device = device
        self.rt = rt

    def resolve_program(self, placer: Placer | None = None) -> ResolvedDesign:
        """Name, place and check the design, returning its resolved records.

        Placements made here are rolled back if resolution fails.
        """
        closure = _Closure(self.rt)
        self._check_structure(closure)
        snapshot = [(c, c._tile) for c in closure.placeables()]
        try:
            design = self._resolve(closure, placer)
        except BaseException:
            for c, tile in snapshot:
                c._tile = tile
            raise
        for f in closure.fifos:
            f.resolved_name = self._names[id(f)]
        for w in closure.workers:
            w.resolved_name = self._names[id(w)]
        return design

    def _check_structure(self, closure: _Closure) -> None:
        for f in closure.fifos:
            if f._prod is None or f._prod.endpoint is None:
                raise DanglingEndpoint(f"{f.describe()} has no producer endpoint")
            if not f._cons:
                raise DanglingEndpoint(f"{f.describe()} has no consumer")
            for h in f._cons:
                if h.endpoint is None:
                    raise DanglingEndpoint(f"{h!r} is never bound to a worker, link or drain")
        for w in closure.workers:
            if id(w) not in closure.started:
                raise DanglingEndpoint(f"{w.describe()} is bound to a fifo but never started")
        if not any(isinstance(op, _Dma) and op.op == "drain" and op.wait for op in self.rt.ops):
            raise NoCompletion("no drain has wait=True, so the run has no completion condition")
        for w in closure.workers:
            if isinstance(w.core_fn, str) and not kernel_registry.has_kernel(w.core_fn):
                kernel_registry.get_kernel(w.core_fn)  # raises UnknownKernel

    def _resolve(self, closure: _Closure, placer: Placer | None) -> ResolvedDesign:
        dev = self.device
        names = {}
        names.update(_assign_names(closure.fifos, lambda f: f.name, "of"))
        names.update(_assign_names(closure.workers, lambda w: w.name, "worker"))
        names.update(_assign_names(closure.links, lambda l: None, "link"))
        self._names = names

        if placer is not None:
            assignment = placer.make_placement(dev, self.rt, list(closure.workers), list(closure.fifos))
            for comp, tile in assignment.items():
                comp.place(tile)

        tiles = {}
        for c in closure.placeables():
            if c.tile is None:
                raise Unplaced(f"{c.describe()} has no tile; place it or pass a placer")
            t = dev.resolve(c.tile)
            if t.kind is not c.required_kind:
                raise KindMismatch(f"{c.describe()} needs a {c.required_kind} tile, {t} is {t.kind}")
            tiles[id(c)] = t.coords

        by_serial = lambda items: sorted(items, key=lambda x: x._serial)  # noqa: E731

        def port(h: ObjectFifoHandle) -> PortRef:
            return PortRef(names[id(h.fifo)], h.role, h.index if h.role == CONSUMER else 0)

        fifos = tuple(
            FifoRecord(
                names[id(f)],
                f.dtype.name,
                f.obj_shape,
                f.depth,
                tiles[id(f.producer_endpoint())],
                tuple(tiles[id(e)] for e in f.consumer_endpoints()),
            )
            for f in by_serial(closure.fifos)
        )
        links = tuple(
            LinkRecord(
                names[id(l)],
                l.kind,
                tiles[id(l)],
                tuple(port(h) for h in l.sources),
                tuple(port(h) for h in l.dests),
            )
            for l in by_serial(closure.links)
        )
        kernels = {}
        workers = []
        for w in by_serial(closure.workers):
            kname = w.kernel_name
            if callable(w.core_fn):
                prev = kernels.get(kname)
                if prev is not None and prev is not w.core_fn:
                    raise DuplicateName(f"two different kernels are both called {kname!r}")
                kernels[kname] = w.core_fn
            args = tuple(port(a) if isinstance(a, ObjectFifoHandle) else _scalar(a) for a in w.fn_args)
            workers.append(WorkerRecord(names[id(w)], tiles[id(w)], kname, args))
        buffers = tuple(BufferRecord(b.label, b.dtype.name, b.shape) for b in self.rt.buffers)
        labels = [b.name for b in buffers]
        if len(set(labels)) != len(labels):
            raise DuplicateName(f"buffer names are not unique: {labels}")
        runtime = []
        for k, op in enumerate(self.rt.ops):
            name = f"rt{k}"
            if isinstance(op, _Start):
                runtime.append(StartOp(name, tuple(names[id(w)] for w in op.workers)))
            elif isinstance(op, _Dma):
                runtime.append(
                    DmaOp(name, op.op, port(op.handle), op.buffer.label, tiles[id(op.endpoint)], op.wait, op.tap)
                )
            else:
                runtime.append(InlineOp(name, op.text))
        p = dev.profile
        design = ResolvedDesign(
            DeviceRecord(p.name, p.n_cols, tuple(k.value for k in p.rows_per_col)),
            fifos,
            links,
            tuple(workers),
            buffers,
            tuple(runtime),
            profile=p,
            kernels=kernels,
        )

        violations = validate_placement(design, dev)
        if violations:
            v = violations[0]
            raise ResourceExhausted(
                "; ".join(str(x) for x in violations),
                tile=list(v.tile),
                resource=v.resource,
                used=v.used,
                limit=v.limit,
            )
        for op in design.dma_ops():
            found = check_dma_pattern(op.tap, dev.dma_constraint(Tile(*op.tile)))
            if found:
                raise DmaViolation(
                    f"@{op.name} on {op.port}: " + "; ".join(str(v) for v in found),
                    op=op.name,
                )
        return design


def resolve_program(program: Program, placer: Placer | None = None) -> ResolvedDesign:
    return program.resolve_program(placer)

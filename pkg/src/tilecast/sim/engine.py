"""Functional simulation of a resolved design.

Every worker, link and runtime DMA operation becomes a generator actor.
An actor yields a :class:`Wait` whenever it cannot make progress; the
scheduler resumes one ready actor per step, round-robin by default or in a
seeded random order. Data moves only through fifo states, so outputs do not
depend on the schedule.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from typing import Callable, Iterator, Mapping, Sequence

import numpy as np

from ..emitter import DmaOp, InlineOp, PortRef, ResolvedDesign, StartOp
from ..errors import (
    Deadlock,
    ExceedsDepth,
    ReleaseUnderflow,
    ShapeMismatch,
    SimulationError,
    UnknownKernel,
    UnsupportedOp,
)
from . import kernels

DEFAULT_STEP_LIMIT = 1_000_000


@dataclass
class Wait:
    ready: Callable[[], bool]
    reason: str


class FifoState:
    """Counters of a circular buffer with one producer and ``n_cons``
    consumers; object ``i`` lives in slot ``i % depth``."""

    def __init__(self, name: str, shape, dtype, depth: int, n_cons: int):
        self.name = name
        self.depth = depth
        self.slots = [np.zeros(shape, dtype=dtype) for _ in range(depth)]
        self.produced = 0
        self.prod_held = 0
        self.released = [0] * n_cons
        self.cons_held = [0] * n_cons

    def port(self, ref: PortRef) -> "Port":
        return Port(self, ref.role, ref.index)


class Port:
    """The view a core body, link or DMA actor has of one fifo end."""

    def __init__(self, state: FifoState, role: str, index: int = 0):
        self.state = state
        self.role = role
        self.index = index

    def __repr__(self) -> str:
        who = "prod" if self.role == "prod" else f"cons{self.index}"
        return f"@{self.state.name}:{who}"

    def _held(self) -> int:
        s = self.state
        return s.prod_held if self.role == "prod" else s.cons_held[self.index]

    def _first(self) -> int:
        # absolute index of the oldest held object
        s = self.state
        return s.produced if self.role == "prod" else s.released[self.index]

    def can_acquire(self, n: int) -> bool:
        s = self.state
        need = n - self._held()
        if need <= 0:
            return True
        if self.role == "prod":
            return s.produced + s.prod_held + need <= min(s.released) + s.depth
        return s.released[self.index] + s.cons_held[self.index] + need <= s.produced

    def _views(self, n: int):
        s = self.state
        out = []
        for i in range(self._first(), self._first() + n):
            slot = s.slots[i % s.depth]
            if self.role == "prod":
                out.append(slot)
            else:
                view = slot.view()
                view.flags.writeable = False
                out.append(view)
        return out[0] if n == 1 else out

    def acquire(self, n: int) -> Iterator[Wait]:
        """Hold exactly ``n`` objects, acquiring only the ones not held yet.
        Returns one array for ``n == 1`` and a list otherwise."""
        s = self.state
        n = int(n)
        if n < 1:
            raise ExceedsDepth(f"{self}: acquire needs n >= 1, got {n}")
        if n > s.depth:
            raise ExceedsDepth(f"{self}: acquire({n}) exceeds depth {s.depth}")
        while not self.can_acquire(n):
            yield Wait(lambda: self.can_acquire(n), f"acquire({n}) on {self}")
        extra = n - self._held()
        if extra > 0:
            if self.role == "prod":
                s.prod_held += extra
            else:
                s.cons_held[self.index] += extra
        return self._views(n)

    def release(self, n: int = 1) -> None:
        s = self.state
        n = int(n)
        if n < 0 or n > self._held():
            raise ReleaseUnderflow(f"{self}: release({n}) but only {self._held()} held")
        if self.role == "prod":
            s.prod_held -= n
            s.produced += n
        else:
            s.cons_held[self.index] -= n
            s.released[self.index] += n


@dataclass
class Actor:
    name: str
    gen: Iterator[Wait]
    required: bool = False  # completion depends on it
    wait: Wait | None = None
    done: bool = False

    def ready(self) -> bool:
        return not self.done and (self.wait is None or self.wait.ready())


@dataclass
class RunReport:
    status: str  # "completed" | "deadlock"
    outputs: dict[str, np.ndarray]
    transferred: dict[str, int]
    delivered: dict[str, list[int]]
    steps: int
    blocked: list[str] = field(default_factory=list)
    pending: list[str] = field(default_factory=list)

    @property
    def completed(self) -> bool:
        return self.status == "completed"

    def raise_for_status(self) -> "RunReport":
        if not self.completed:
            raise Deadlock(
                "no actor can make progress: " + "; ".join(self.blocked), blocked=self.blocked
            )
        return self

    def to_json(self) -> dict:
        return {
            "status": self.status,
            "steps": self.steps,
            "transferred": self.transferred,
            "delivered": self.delivered,
            "blocked": self.blocked,
            "pending": self.pending,
            "outputs": {
                k: {"dtype": v.dtype.name, "shape": list(v.shape)} for k, v in self.outputs.items()
            },
        }


def _last_write_positions(offsets: np.ndarray) -> np.ndarray:
    """Positions in ``offsets`` that hold the final write to each offset."""
    rev = offsets[::-1]
    _, first_in_rev = np.unique(rev, return_index=True)
    return np.sort(len(offsets) - 1 - first_in_rev)


def _fill(op: DmaOp, src: np.ndarray, port: Port) -> Iterator[Wait]:
    offsets = op.tap.offsets()
    per = port.state.slots[0].size
    for i in range(len(offsets) // per):
        obj = yield from port.acquire(1)
        np.copyto(obj, src[offsets[i * per : (i + 1) * per]].reshape(obj.shape), casting="unsafe")
        port.release(1)


def _drain(op: DmaOp, dst: np.ndarray, port: Port) -> Iterator[Wait]:
    offsets = op.tap.offsets()
    per = port.state.slots[0].size
    for i in range(len(offsets) // per):
        obj = yield from port.acquire(1)
        idx = offsets[i * per : (i + 1) * per]
        vals = obj.ravel()
        keep = _last_write_positions(idx)
        dst[idx[keep]] = vals[keep]
        port.release(1)


def _link(kind: str, sources: list[Port], dests: list[Port]) -> Iterator[Wait]:
    while True:
        if kind == "forward":
            a = yield from sources[0].acquire(1)
            b = yield from dests[0].acquire(1)
            np.copyto(b, a.reshape(b.shape), casting="unsafe")
            dests[0].release(1)
            sources[0].release(1)
        elif kind == "split":
            a = yield from sources[0].acquire(1)
            flat = a.ravel()
            step = flat.size // len(dests)
            for i, d in enumerate(dests):
                b = yield from d.acquire(1)
                np.copyto(b, flat[i * step : (i + 1) * step].reshape(b.shape), casting="unsafe")
                d.release(1)
            sources[0].release(1)
        elif kind == "join":
            b = yield from dests[0].acquire(1)
            flat = b.reshape(-1)
            step = flat.size // len(sources)
            for i, s in enumerate(sources):
                a = yield from s.acquire(1)
                np.copyto(flat[i * step : (i + 1) * step], a.ravel(), casting="unsafe")
                s.release(1)
            dests[0].release(1)
        else:
            raise UnsupportedOp(f"unknown link kind {kind!r}")


def _worker(body, args) -> Iterator[Wait]:
    while True:
        gen = body(*args)
        if gen is not None and hasattr(gen, "__next__"):
            yield from gen
        # hand control back once per iteration even if nothing blocked
        yield Wait(lambda: True, "iteration boundary")


def _gated(gate: Callable[[], bool], reason: str, gen: Iterator[Wait]) -> Iterator[Wait]:
    while not gate():
        yield Wait(gate, reason)
    yield from gen


def _coerce_inputs(design: ResolvedDesign, inputs) -> dict[str, np.ndarray]:
    if inputs is None:
        inputs = {}
    if not isinstance(inputs, Mapping):
        inputs = {b.name: x for b, x in zip(design.buffers, inputs)}
    out = {}
    for b in design.buffers:
        if b.name in inputs and inputs[b.name] is not None:
            arr = np.asarray(inputs[b.name])
            if arr.size != int(np.prod(b.shape)):
                raise ShapeMismatch(
                    f"buffer @{b.name} needs shape {list(b.shape)}, got {list(arr.shape)}"
                )
            arr = arr.reshape(b.shape).astype(b.dtype, copy=False)
        else:
            arr = np.zeros(b.shape, dtype=b.dtype)
        out[b.name] = arr
    unknown = set(inputs) - set(out)
    if unknown:
        raise ShapeMismatch(f"unknown buffers {sorted(unknown)}")
    return out


def run(
    design: ResolvedDesign,
    inputs: Mapping[str, np.ndarray] | Sequence[np.ndarray] | None = None,
    *,
    seed: int | None = None,
    step_limit: int = DEFAULT_STEP_LIMIT,
    check: bool = False,
) -> RunReport:
    """Execute ``design``; ``inputs`` map buffer names (or positions) to arrays.

    Drained buffers start zeroed. ``seed`` switches from round-robin to a
    seeded random schedule. Deadlocks are reported in the status, or raised
    when ``check`` is set.
    """
    for op in design.runtime:
        if isinstance(op, InlineOp):
            raise UnsupportedOp(
                f"@{op.name} holds inline IR the simulator cannot execute: {op.text!r}"
            )
    hosts = _coerce_inputs(design, inputs)
    outputs = {
        op.buffer: np.zeros(hosts[op.buffer].shape, hosts[op.buffer].dtype)
        for op in design.dma_ops()
        if op.op == "drain"
    }
    flat_in = {k: v.reshape(-1) for k, v in hosts.items()}
    flat_out = {k: v.reshape(-1) for k, v in outputs.items()}

    states = {
        f.name: FifoState(f.name, f.shape, np.dtype(f.dtype), f.depth, len(f.consumers))
        for f in design.fifos
    }

    def port(ref: PortRef) -> Port:
        if ref.fifo not in states:
            raise SimulationError(f"reference to unknown fifo @{ref.fifo}")
        return states[ref.fifo].port(ref)

    actors: list[Actor] = []
    for l in design.links:
        actors.append(
            Actor(
                f"link @{l.name}",
                _link(l.kind, [port(p) for p in l.sources], [port(p) for p in l.dests]),
            )
        )

    # runtime ops are issued in order; a wait=True op holds back later ones
    workers = {w.name: w for w in design.workers}
    done_flags: dict[str, Actor] = {}
    gates: list[Actor] = []
    last_on_endpoint: dict[PortRef, Actor] = {}
    for op in design.runtime:
        earlier = list(gates)
        if isinstance(op, StartOp):
            for wname in op.workers:
                w = workers[wname]
                body = design.kernels.get(w.kernel)
                if body is None:
                    if not kernels.has_kernel(w.kernel):
                        raise UnknownKernel(f"worker @{w.name} uses unknown kernel {w.kernel!r}")
                    body = kernels.get_kernel(w.kernel)
                args = [port(a) if isinstance(a, PortRef) else a for a in w.args]
                gate = lambda ops=earlier: all(a.done for a in ops)  # noqa: E731
                actors.append(
                    Actor(f"worker @{w.name}", _gated(gate, "waiting for issue", _worker(body, args)))
                )
            continue
        prev = last_on_endpoint.get(op.port)
        deps = earlier + ([prev] if prev is not None else [])
        gate = lambda ops=deps: all(a.done for a in ops)  # noqa: E731
        p = port(op.port)
        if op.op == "fill":
            gen = _fill(op, flat_in[op.buffer], p)
        else:
            gen = _drain(op, flat_out[op.buffer], p)
        actor = Actor(f"{op.op} @{op.name}", _gated(gate, "waiting for issue", gen), required=True)
        actors.append(actor)
        done_flags[op.name] = actor
        last_on_endpoint[op.port] = actor
        if op.wait:
            gates.append(actor)

    wait_drains = [done_flags[op.name] for op in design.dma_ops() if op.wait]
    rng = random.Random(seed) if seed is not None else None
    steps = 0
    cursor = 0
    status = "completed"
    while True:
        if all(a.done for a in actors if a.required):
            break
        ready = [i for i, a in enumerate(actors) if a.ready()]
        if not ready:
            status = "completed" if all(a.done for a in wait_drains) else "deadlock"
            break
        if rng is not None:
            i = rng.choice(ready)
        else:
            i = next((j for j in ready if j >= cursor), ready[0])
            cursor = i + 1
        a = actors[i]
        try:
            a.wait = next(a.gen)
        except StopIteration:
            a.done = True
            a.wait = None
        steps += 1
        if steps > step_limit:
            raise SimulationError(f"step limit of {step_limit} exceeded")

    blocked = [
        f"{a.name}: {a.wait.reason if a.wait else 'not runnable'}"
        for a in actors
        if not a.done and (a.required or status == "deadlock")
        and a.wait is not None
        and a.wait.reason != "iteration boundary"
    ]
    pending = [a.name for a in actors if a.required and not a.done]
    report = RunReport(
        status=status,
        outputs=outputs,
        transferred={n: s.produced for n, s in states.items()},
        delivered={n: list(s.released) for n, s in states.items()},
        steps=steps,
        blocked=blocked if status == "deadlock" else [],
        pending=pending,
    )
    if check:
        report.raise_for_status()
    return report

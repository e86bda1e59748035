import random

import numpy as np
import pytest

from tilecast.dataflow import ObjectFifo, Program, Runtime, Worker
from tilecast.device import NPU1Col1, NPU1Col4, Tile
from tilecast.errors import AlreadyPlaced, GridExhausted, KindMismatch, ResourceExhausted
from tilecast.manifest import build_program, builtin_manifest, builtin_names
from tilecast.placement import (
    AnyComputeTile,
    AnyMemTile,
    SequentialPlacer,
    validate_placement,
)

from builders import chain_program, msadd_program


def test_place_fixed_and_errors():
    dev = NPU1Col1()
    w = Worker("passthrough", [])
    w.place(dev.tile_at(0, 2))
    assert w.tile == Tile(0, 2) and w.is_placed
    w.place(Tile(0, 2))  # same tile again is fine
    with pytest.raises(AlreadyPlaced):
        w.place(dev.tile_at(0, 3))
    with pytest.raises(KindMismatch):
        Worker("passthrough", []).place(dev.tile_at(0, 0))


def test_hint_kind_must_match():
    with pytest.raises(KindMismatch):
        Worker("passthrough", [], placement=AnyMemTile)
    assert Worker("passthrough", [], placement=AnyComputeTile).placement is AnyComputeTile


def test_forward_on_compute_tile_rejected():
    of = ObjectFifo(((8,), np.int32))
    with pytest.raises(KindMismatch):
        of.cons().forward(placement=NPU1Col1().tile_at(0, 2))


def test_msadd_sequential_placement():
    d = msadd_program().resolve_program(SequentialPlacer())
    (w,) = d.workers
    assert w.tile == (0, 2)
    assert {op.tile for op in d.dma_ops()} == {(0, 0)}
    assert validate_placement(d, NPU1Col1()) == []


def test_workers_fill_columns_first():
    prog, workers, _ = chain_program(6, device=NPU1Col4())
    d = prog.resolve_program(SequentialPlacer())
    assert [w.tile for w in d.workers] == [(0, 2), (0, 3), (0, 4), (0, 5), (1, 2), (1, 3)]


def test_grid_exhausted():
    prog, _, _ = chain_program(5)
    with pytest.raises(GridExhausted):
        prog.resolve_program(SequentialPlacer())


def test_partial_placement_respected():
    dev = NPU1Col4()
    prog, workers, _ = chain_program(3, device=dev)
    workers[1].place(Tile(1, 3))
    d = prog.resolve_program(SequentialPlacer())
    tiles = {w.name: w.tile for w in d.workers}
    assert tiles["worker1"] == (1, 3)
    assert tiles["worker0"] == (0, 2) and tiles["worker2"] == (0, 3)


def test_random_fixed_placements_never_move():
    rng = random.Random(3)
    for _ in range(20):
        dev = NPU1Col4()
        prog, workers, _ = chain_program(6, device=dev)
        compute = [t for t in dev.tiles() if t.kind.value == "compute"]
        fixed = {}
        for w, t in zip(workers, rng.sample(compute, len(workers))):
            if rng.random() < 0.5:
                w.place(t)
                fixed[id(w)] = t.coords
        prog.resolve_program(SequentialPlacer())
        for w in workers:
            if id(w) in fixed:
                assert w.tile.coords == fixed[id(w)]
        assert len({w.tile for w in workers}) == len(workers)


def test_failed_resolution_rolls_back_placements():
    prog = build_program(builtin_manifest("overalloc")).program
    with pytest.raises(ResourceExhausted):
        prog.resolve_program(SequentialPlacer())
    # nothing the placer assigned survives a failed resolution
    with pytest.raises(Exception) as info:
        prog.resolve_program(None)
    assert type(info.value).__name__ == "Unplaced"


def test_mem_endpoints_follow_peer_columns():
    dev = NPU1Col4()
    workers = []
    rt = Runtime()
    with rt.sequence(*[((64,), np.int32)] * 4) as bufs:
        for i in range(2):
            src = ObjectFifo(((16,), np.int32))
            mid = src.cons().forward()
            out = ObjectFifo(((16,), np.int32))
            w = Worker("passthrough", [mid.cons(), out.prod()], placement=dev.tile_at(i + 2, 2))
            rt.start(w)
            rt.fill(src.prod(), bufs[2 * i])
            rt.drain(out.cons(), bufs[2 * i + 1], wait=i == 1)
            workers.append(w)
    d = Program(dev, rt).resolve_program(SequentialPlacer())
    assert [l.tile for l in d.links] == [(2, 1), (3, 1)]
    for op in d.dma_ops():
        assert op.tile[1] == 0
    assert sorted(op.tile[0] for op in d.dma_ops()) == [2, 2, 3, 3]


def test_contended_link_alternates_between_peer_columns():
    # each link sees a shim peer in column 0 and a worker peer in column 1
    dev = NPU1Col4()
    rt = Runtime()
    with rt.sequence(*[((64,), np.int32)] * 4) as bufs:
        for i in range(2):
            src = ObjectFifo(((16,), np.int32))
            mid = src.cons().forward()
            out = ObjectFifo(((16,), np.int32))
            w = Worker("passthrough", [mid.cons(), out.prod()], placement=dev.tile_at(1, 2 + i))
            rt.start(w)
            rt.fill(src.prod(), bufs[2 * i], placement=dev.tile_at(0, 0))
            rt.drain(out.cons(), bufs[2 * i + 1], wait=i == 1)
    d = Program(dev, rt).resolve_program(SequentialPlacer())
    assert sorted(l.tile for l in d.links) == [(0, 1), (1, 1)]


def sum3(a, b, c, out):
    x = yield from a.acquire(1)
    y = yield from b.acquire(1)
    z = yield from c.acquire(1)
    o = yield from out.acquire(1)
    o[...] = x + y + z
    for port in (a, b, c, out):
        port.release(1)


def test_validator_channel_violation():
    ins = [ObjectFifo(((16,), np.int32)) for _ in range(3)]
    out = ObjectFifo(((16,), np.int32))
    w = Worker(sum3, [f.cons() for f in ins] + [out.prod()])
    rt = Runtime()
    with rt.sequence(*[((64,), np.int32)] * 4) as b:
        rt.start(w)
        for i, (f, buf) in enumerate(zip(ins, b)):
            rt.fill(f.prod(), buf, placement=Tile(i, 0))
        rt.drain(out.cons(), b[3], wait=True)
    with pytest.raises(ResourceExhausted) as info:
        Program(NPU1Col4(), rt).resolve_program(SequentialPlacer())
    assert info.value.details["resource"] == "in_channels"
    assert str(info.value) == "in_channels on (0,2): 3 > 2"


def test_validator_capacity_violation():
    big = ((8192,), np.int32)  # 32 KiB per object, 64 KiB at depth 2
    fi, fo = ObjectFifo(big), ObjectFifo(big)
    w = Worker("passthrough", [fi.cons(), fo.prod()])
    rt = Runtime()
    with rt.sequence(((8192,), np.int32), ((8192,), np.int32)) as (a, b):
        rt.start(w)
        rt.fill(fi.prod(), a)
        rt.drain(fo.cons(), b, wait=True)
    with pytest.raises(ResourceExhausted) as info:
        Program(NPU1Col1(), rt).resolve_program(SequentialPlacer())
    assert info.value.details["resource"] == "bytes"
    assert info.value.details["used"] == 4 * 32768


def test_overalloc_fails_every_placeable_design_validates():
    for name in builtin_names():
        loaded = build_program(builtin_manifest(name))
        if name == "overalloc":
            with pytest.raises(ResourceExhausted):
                loaded.program.resolve_program(SequentialPlacer())
            continue
        d = loaded.program.resolve_program(SequentialPlacer())
        assert validate_placement(d, loaded.program.device) == []


def test_sequential_placer_is_deterministic():
    a = build_program(builtin_manifest("gemm"), device="npu1col4").program.resolve_program(SequentialPlacer())
    b = build_program(builtin_manifest("gemm"), device="npu1col4").program.resolve_program(SequentialPlacer())
    assert a == b

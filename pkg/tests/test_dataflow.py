import numpy as np
import pytest

from tilecast.dataflow import ObjectFifo, Program, Runtime, Worker, parse_obj_type
from tilecast.device import NPU1Col1, Tile
from tilecast.emitter import emit
from tilecast.errors import (
    DanglingEndpoint,
    DmaViolation,
    DuplicateName,
    HandleAlreadyBound,
    InvalidDepth,
    KindMismatch,
    NoCompletion,
    NonDivisible,
    NonMultiple,
    OutsideCoreBody,
    RoleMismatch,
    ShapeMismatch,
    UnknownKernel,
    Unplaced,
)
from tilecast.placement import SequentialPlacer
from tilecast.taplib import TensorAccessPattern

from builders import mat_ty, msadd_program, one_tile_tap, tile_ty

vec16 = ((16,), np.int32)


def test_obj_type_forms():
    assert parse_obj_type(tile_ty) == ((8, 8), np.dtype(np.int32))
    assert parse_obj_type(((4,), "float32")) == ((4,), np.dtype(np.float32))
    assert parse_obj_type((4, np.int16)) == ((4,), np.dtype(np.int16))


def test_fifo_defaults_and_depth():
    of = ObjectFifo(tile_ty)
    assert of.depth == 2 and of.name is None and of.nbytes == 256
    assert ObjectFifo(tile_ty, depth=1).depth == 1
    with pytest.raises(InvalidDepth):
        ObjectFifo(tile_ty, depth=0)


def test_prod_idempotent_cons_mints():
    of = ObjectFifo(tile_ty)
    assert of.prod() is of.prod()
    handles = [of.cons() for _ in range(3)]
    assert [h.index for h in handles] == [0, 1, 2]
    assert len({id(h) for h in handles}) == 3


def test_auto_names_by_resolution_walk():
    d = msadd_program().resolve_program(SequentialPlacer())
    assert [f.name for f in d.fifos] == ["of0", "of1"]
    assert [w.name for w in d.workers] == ["worker0"]


def test_construction_is_deferred():
    prog = msadd_program()
    w = prog.rt.ops[0].workers[0]
    assert w.tile is None and w.resolved_name is None
    prog.resolve_program(SequentialPlacer())
    assert w.tile == Tile(0, 2) and w.resolved_name == "worker0"


def test_handles_refuse_access_outside_core_body():
    with pytest.raises(OutsideCoreBody):
        ObjectFifo(tile_ty).cons().acquire(1)


def test_runtime_op_errors():
    fi = ObjectFifo(tile_ty)
    rt = Runtime()
    with rt.sequence(mat_ty) as (buf,):
        with pytest.raises(RoleMismatch):
            rt.fill(fi.cons(), buf, one_tile_tap())
        with pytest.raises(RoleMismatch):
            rt.drain(fi.prod(), buf, one_tile_tap())
        with pytest.raises(ShapeMismatch):
            rt.fill(fi.prod(), buf, TensorAccessPattern((8, 8), 0, [8, 8], [8, 1]))
        with pytest.raises(NonMultiple):
            rt.fill(fi.prod(), buf, TensorAccessPattern((16, 16), 0, [1, 1, 4, 8], [0, 0, 16, 1]))


def test_default_tap_is_whole_buffer():
    fi = ObjectFifo(tile_ty)
    rt = Runtime()
    with rt.sequence(mat_ty) as (buf,):
        rt.fill(fi.prod(), buf)
    assert rt.ops[0].tap.num_iterations == 256


def test_handle_bound_twice():
    of = ObjectFifo(vec16)
    h = of.cons()
    Worker("passthrough", [h, ObjectFifo(vec16).prod()])
    with pytest.raises(HandleAlreadyBound):
        Worker("passthrough", [h, ObjectFifo(vec16).prod()])


def test_unplaced_without_placer():
    with pytest.raises(Unplaced):
        msadd_program().resolve_program()


def test_manual_placement_matches_sequential():
    dev = NPU1Col1()
    auto = msadd_program().resolve_program(SequentialPlacer())
    prog = msadd_program(placement=dev.tile_at(0, 2))
    for op in prog.rt.ops[1:]:
        op.endpoint.place(dev.tile_at(0, 0))
    manual = prog.resolve_program()
    assert emit(manual) == emit(auto)


def test_kind_mismatch_at_resolution():
    # a bare coordinate has no kind until the device resolves it
    prog = msadd_program(placement=Tile(0, 1))
    with pytest.raises(KindMismatch):
        prog.resolve_program(SequentialPlacer())


def _single(core="passthrough", drain_wait=True, with_drain=True, cons_extra=False):
    fi, fo = ObjectFifo(vec16), ObjectFifo(vec16)
    w = Worker(core, [fi.cons(), fo.prod()])
    if cons_extra:
        fo.cons()
    rt = Runtime()
    with rt.sequence(((64,), np.int32), ((64,), np.int32)) as (a, b):
        rt.start(w)
        rt.fill(fi.prod(), a)
        if with_drain:
            rt.drain(fo.cons(), b, wait=drain_wait)
    return Program(NPU1Col1(), rt)


def test_dangling_consumer():
    with pytest.raises(DanglingEndpoint):
        _single(cons_extra=True).resolve_program(SequentialPlacer())


def test_dangling_when_fifo_never_drained():
    with pytest.raises(DanglingEndpoint):
        _single(with_drain=False).resolve_program(SequentialPlacer())


def test_worker_never_started():
    fi, fo = ObjectFifo(vec16), ObjectFifo(vec16)
    Worker("passthrough", [fi.cons(), fo.prod()])
    rt = Runtime()
    with rt.sequence(((64,), np.int32), ((64,), np.int32)) as (a, b):
        rt.fill(fi.prod(), a)
        rt.drain(fo.cons(), b, wait=True)
    with pytest.raises(DanglingEndpoint):
        Program(NPU1Col1(), rt).resolve_program(SequentialPlacer())


def test_no_completion():
    with pytest.raises(NoCompletion):
        _single(drain_wait=False).resolve_program(SequentialPlacer())


def test_unknown_kernel():
    with pytest.raises(UnknownKernel):
        _single(core="no_such_kernel").resolve_program(SequentialPlacer())


def test_duplicate_names():
    fi, fo = ObjectFifo(vec16, name="x"), ObjectFifo(vec16, name="x")
    w = Worker("passthrough", [fi.cons(), fo.prod()])
    rt = Runtime()
    with rt.sequence(((64,), np.int32), ((64,), np.int32)) as (a, b):
        rt.start(w)
        rt.fill(fi.prod(), a)
        rt.drain(fo.cons(), b, wait=True)
    with pytest.raises(DuplicateName):
        Program(NPU1Col1(), rt).resolve_program(SequentialPlacer())


def test_auto_names_skip_explicit_ones():
    fi, fo = ObjectFifo(vec16), ObjectFifo(vec16, name="of0")
    w = Worker("passthrough", [fi.cons(), fo.prod()])
    rt = Runtime()
    with rt.sequence(((64,), np.int32), ((64,), np.int32)) as (a, b):
        rt.start(w)
        rt.fill(fi.prod(), a)
        rt.drain(fo.cons(), b, wait=True)
    d = Program(NPU1Col1(), rt).resolve_program(SequentialPlacer())
    assert sorted(f.name for f in d.fifos) == ["of0", "of1"]


def test_dma_violation_on_fill_tap():
    # a rank-5 pattern cannot be merged below the shim's four dimensions
    fi, fo = ObjectFifo(((2,), np.int32)), ObjectFifo(((2,), np.int32))
    w = Worker("passthrough", [fi.cons(), fo.prod()])
    rt = Runtime()
    tap = TensorAccessPattern((1024,), 0, [2, 2, 2, 2, 2], [300, 70, 20, 6, 1], max_rank=5)
    with rt.sequence(((1024,), np.int32), ((32,), np.int32)) as (a, b):
        rt.start(w)
        rt.fill(fi.prod(), a, tap)
        rt.drain(fo.cons(), b, wait=True)
    with pytest.raises(DmaViolation):
        Program(NPU1Col1(), rt).resolve_program(SequentialPlacer())


def test_split_join_shapes():
    of = ObjectFifo(vec16)
    lo, hi = of.cons().split(2)
    assert lo.obj_shape == (8,) and hi.obj_shape == (8,)
    with pytest.raises(NonDivisible):
        ObjectFifo(vec16).cons().split(3)
    parts = ObjectFifo(((3, 4), np.int32)).prod().join(2)
    assert [p.obj_shape for p in parts] == [(6,), (6,)]
    with pytest.raises(RoleMismatch):
        ObjectFifo(vec16).prod().split(2)
    with pytest.raises(RoleMismatch):
        ObjectFifo(vec16).cons().join(2)

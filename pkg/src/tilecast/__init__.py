"""Desk-scale dataflow kit for tile-array NPUs."""

from .dataflow import ObjectFifo, ObjectFifoHandle, Program, Runtime, Worker, resolve_program
from .device import (
    NPU1Col1,
    NPU1Col2,
    NPU1Col3,
    NPU1Col4,
    Device,
    DeviceProfile,
    DmaConstraint,
    Tile,
    TileKind,
    device_new,
)
from .emitter import ResolvedDesign, design_diff, emit, parse_ir
from .placement import (
    AnyComputeTile,
    AnyMemTile,
    AnyShim,
    Placeable,
    Placer,
    SequentialPlacer,
    validate_placement,
)
from .sim import RunReport, register_kernel, run, unregister_kernel
from .taplib import (
    TensorAccessPattern,
    TensorAccessSequence,
    access_equivalent,
    render_access_map,
    strictly_equal,
)
from .tiler import TensorTiler2D, TilerSpec, group_tiler, simple_tiler

__version__ = "0.1.0"

__all__ = [
    "AnyComputeTile",
    "AnyMemTile",
    "AnyShim",
    "Device",
    "DeviceProfile",
    "DmaConstraint",
    "NPU1Col1",
    "NPU1Col2",
    "NPU1Col3",
    "NPU1Col4",
    "ObjectFifo",
    "ObjectFifoHandle",
    "Placeable",
    "Placer",
    "Program",
    "ResolvedDesign",
    "RunReport",
    "Runtime",
    "SequentialPlacer",
    "TensorAccessPattern",
    "TensorAccessSequence",
    "TensorTiler2D",
    "Tile",
    "TileKind",
    "TilerSpec",
    "Worker",
    "access_equivalent",
    "design_diff",
    "device_new",
    "emit",
    "group_tiler",
    "parse_ir",
    "register_kernel",
    "render_access_map",
    "resolve_program",
    "run",
    "simple_tiler",
    "strictly_equal",
    "unregister_kernel",
    "validate_placement",
]

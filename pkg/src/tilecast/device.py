"""Tile-array device model.

A device is a grid of columns; every column stacks the same row kinds, by
default one shim tile (row 0), one mem tile (row 1) and four compute tiles.
Capacities, channel budgets and DMA constraints are profile fields with
illustrative defaults; none of them is meant as a hardware datasheet value.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterator, Mapping

from .errors import InvalidProfile, OutOfGrid
from .taplib import TensorAccessPattern


class TileKind(str, Enum):
    SHIM = "shim"
    MEM = "mem"
    COMPUTE = "compute"

    def __str__(self) -> str:
        return self.value


@dataclass(frozen=True)
class Tile:
    """A grid coordinate. ``kind`` is optional for user-built placements and
    is filled in from the device at resolution."""

    col: int
    row: int
    kind: TileKind | None = field(default=None, compare=False)

    @property
    def coords(self) -> tuple[int, int]:
        return (self.col, self.row)

    def __str__(self) -> str:
        return f"({self.col},{self.row})"


@dataclass(frozen=True)
class DmaConstraint:
    max_dims: int
    max_size_per_dim: int
    max_stride: int

    def __post_init__(self):
        for name in ("max_dims", "max_size_per_dim", "max_stride"):
            if int(getattr(self, name)) <= 0:
                raise InvalidProfile(f"DMA constraint {name} must be positive")


@dataclass(frozen=True)
class DmaViolationInfo:
    kind: str  # "rank" | "size" | "stride"
    dim: int | None
    value: int
    limit: int

    def __str__(self) -> str:
        where = "" if self.dim is None else f" in dim {self.dim}"
        return f"{self.kind} {self.value}{where} exceeds {self.limit}"


def effective_rank(tap: TensorAccessPattern) -> int:
    """Rank without leading unit dimensions, which encode no loop."""
    rank = tap.rank
    for s in tap.sizes[:-1]:
        if s != 1:
            break
        rank -= 1
    return rank


def check_dma_pattern(
    tap: TensorAccessPattern, constraint: DmaConstraint
) -> list[DmaViolationInfo]:
    """Every bound ``tap`` violates; an empty list means the DMA can run it."""
    out = []
    rank = effective_rank(tap)
    if rank > constraint.max_dims:
        out.append(DmaViolationInfo("rank", None, rank, constraint.max_dims))
    for d, (size, stride) in enumerate(zip(tap.sizes, tap.strides)):
        if size > constraint.max_size_per_dim:
            out.append(DmaViolationInfo("size", d, size, constraint.max_size_per_dim))
        if stride > constraint.max_stride:
            out.append(DmaViolationInfo("stride", d, stride, constraint.max_stride))
    return out


DEFAULT_ROWS = (TileKind.SHIM, TileKind.MEM) + (TileKind.COMPUTE,) * 4


def _default_channels():
    return {
        TileKind.SHIM: (2, 2),
        TileKind.MEM: (6, 6),
        TileKind.COMPUTE: (2, 2),
    }


def _default_constraints():
    return {
        TileKind.SHIM: DmaConstraint(4, 65535, 2**20),
        TileKind.MEM: DmaConstraint(4, 65535, 2**20),
        TileKind.COMPUTE: DmaConstraint(3, 65535, 2**20),
    }


@dataclass(frozen=True)
class DeviceProfile:
    name: str
    n_cols: int
    rows_per_col: tuple[TileKind, ...] = DEFAULT_ROWS
    l1_bytes: int = 65536
    l2_bytes: int = 524288
    # (in, out) DMA channels per tile
    channels: Mapping[TileKind, tuple[int, int]] = field(default_factory=_default_channels)
    dma_constraints: Mapping[TileKind, DmaConstraint] = field(
        default_factory=_default_constraints
    )

    def __post_init__(self):
        if not isinstance(self.n_cols, int) or self.n_cols <= 0:
            raise InvalidProfile(f"n_cols must be a positive integer, got {self.n_cols!r}")
        try:
            rows = tuple(TileKind(k) for k in self.rows_per_col)
        except ValueError as exc:
            raise InvalidProfile(str(exc)) from None
        if not rows or rows[0] is not TileKind.SHIM or rows.count(TileKind.SHIM) != 1:
            raise InvalidProfile("row 0 must be the only shim row")
        if TileKind.COMPUTE not in rows:
            raise InvalidProfile("a device needs at least one compute row")
        if self.l1_bytes <= 0 or self.l2_bytes <= 0:
            raise InvalidProfile("memory capacities must be positive")
        channels = {TileKind(k): tuple(int(x) for x in v) for k, v in self.channels.items()}
        constraints = {TileKind(k): v for k, v in self.dma_constraints.items()}
        for kind in set(rows):
            if kind not in channels or len(channels[kind]) != 2 or min(channels[kind]) < 0:
                raise InvalidProfile(f"missing or malformed channel budget for {kind}")
            if kind not in constraints:
                raise InvalidProfile(f"missing DMA constraint for {kind}")
        object.__setattr__(self, "rows_per_col", rows)
        object.__setattr__(self, "channels", channels)
        object.__setattr__(self, "dma_constraints", constraints)

    @classmethod
    def from_json(cls, obj: dict) -> "DeviceProfile":
        obj = dict(obj)
        try:
            if "channels" in obj:
                obj["channels"] = {k: tuple(v) for k, v in obj["channels"].items()}
            if "dma_constraints" in obj:
                obj["dma_constraints"] = {
                    k: DmaConstraint(**v) for k, v in obj["dma_constraints"].items()
                }
            return cls(**obj)
        except (TypeError, AttributeError) as exc:
            raise InvalidProfile(f"malformed device profile: {exc}") from None

    def to_json(self) -> dict:
        return {
            "name": self.name,
            "n_cols": self.n_cols,
            "rows_per_col": [k.value for k in self.rows_per_col],
            "l1_bytes": self.l1_bytes,
            "l2_bytes": self.l2_bytes,
            "channels": {k.value: list(v) for k, v in self.channels.items()},
            "dma_constraints": {
                k.value: {
                    "max_dims": c.max_dims,
                    "max_size_per_dim": c.max_size_per_dim,
                    "max_stride": c.max_stride,
                }
                for k, c in self.dma_constraints.items()
            },
        }


class Device:
    def __init__(self, profile: DeviceProfile):
        self.profile = profile
        self._tiles = {
            (c, r): Tile(c, r, kind)
            for c in range(profile.n_cols)
            for r, kind in enumerate(profile.rows_per_col)
        }

    @property
    def name(self) -> str:
        return self.profile.name

    @property
    def n_cols(self) -> int:
        return self.profile.n_cols

    @property
    def n_rows(self) -> int:
        return len(self.profile.rows_per_col)

    def tile_at(self, col: int, row: int) -> Tile:
        try:
            return self._tiles[(col, row)]
        except KeyError:
            raise OutOfGrid(
                f"tile ({col},{row}) is outside the {self.n_cols}x{self.n_rows} grid of {self.name}"
            ) from None

    def resolve(self, tile: Tile) -> Tile:
        """The device's own tile (with kind) at ``tile``'s coordinates."""
        return self.tile_at(tile.col, tile.row)

    def tiles(self, kind: TileKind | None = None) -> Iterator[Tile]:
        """Tiles in column-major order, optionally of one kind."""
        for c in range(self.n_cols):
            for r in range(self.n_rows):
                t = self._tiles[(c, r)]
                if kind is None or t.kind is kind:
                    yield t

    def capacity(self, tile: Tile) -> int | None:
        """Buffer bytes a tile can hold; shim tiles stream from external memory."""
        kind = self.resolve(tile).kind
        if kind is TileKind.COMPUTE:
            return self.profile.l1_bytes
        if kind is TileKind.MEM:
            return self.profile.l2_bytes
        return None

    def channels(self, tile: Tile) -> tuple[int, int]:
        return self.profile.channels[self.resolve(tile).kind]

    def dma_constraint(self, tile: Tile) -> DmaConstraint:
        return self.profile.dma_constraints[self.resolve(tile).kind]

    def __repr__(self) -> str:
        return f"{type(self).__name__}({self.name!r}, cols={self.n_cols})"


def _npu1(n_cols: int) -> DeviceProfile:
    return DeviceProfile(name=f"npu1col{n_cols}", n_cols=n_cols)


class NPU1Col1(Device):
    def __init__(self):
        super().__init__(_npu1(1))


class NPU1Col2(Device):
    def __init__(self):
        super().__init__(_npu1(2))


class NPU1Col3(Device):
    def __init__(self):
        super().__init__(_npu1(3))


class NPU1Col4(Device):
    def __init__(self):
        super().__init__(_npu1(4))


PRESETS = {
    "npu1col1": NPU1Col1,
    "npu1col2": NPU1Col2,
    "npu1col3": NPU1Col3,
    "npu1col4": NPU1Col4,
}

DEFAULT_PRESET = "npu1col1"


def device_new(spec: str | DeviceProfile | dict | None = None) -> Device:
    """Build a device from a preset name, ``@path/to/profile.json``, a profile
    or its JSON dict. ``None`` picks ``$TILECAST_DEVICE`` or ``npu1col1``."""
    if spec is None:
        spec = os.environ.get("TILECAST_DEVICE", DEFAULT_PRESET)
    if isinstance(spec, Device):
        return spec
    if isinstance(spec, DeviceProfile):
        return Device(spec)
    if isinstance(spec, dict):
        return Device(DeviceProfile.from_json(spec))
    if spec.startswith("@"):
        try:
            obj = json.loads(Path(spec[1:]).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise InvalidProfile(f"cannot read device profile {spec[1:]}: {exc}") from None
        return Device(DeviceProfile.from_json(obj))
    try:
        return PRESETS[spec.lower()]()
    except KeyError:
        raise InvalidProfile(
            f"unknown device preset {spec!r}; known: {', '.join(PRESETS)}"
        ) from None

"""Placement: hints, the Placeable mixin, placers and the resource validator."""

from __future__ import annotations

from abc import ABC, abstractmethod
from collections import Counter, defaultdict
from dataclasses import dataclass
from typing import TYPE_CHECKING, Iterable, Sequence

from .device import Device, Tile, TileKind
from .errors import AlreadyPlaced, GridExhausted, KindMismatch

if TYPE_CHECKING:
    from .emitter import ResolvedDesign


@dataclass(frozen=True)
class PlacementHint:
    """Any tile of ``kind``; a placer picks which."""

    name: str
    kind: TileKind

    def __repr__(self) -> str:
        return self.name


AnyShim = PlacementHint("AnyShim", TileKind.SHIM)
AnyMemTile = PlacementHint("AnyMemTile", TileKind.MEM)
AnyComputeTile = PlacementHint("AnyComputeTile", TileKind.COMPUTE)

HINTS = {h.name: h for h in (AnyShim, AnyMemTile, AnyComputeTile)}


def as_tile(value) -> Tile:
    if isinstance(value, Tile):
        return value
    col, row = value
    return Tile(int(col), int(row))


class Placeable:
    """Mixin for design components that live on a tile."""

    required_kind: TileKind = TileKind.COMPUTE

    def _init_placement(self, placement=None) -> None:
        self._tile: Tile | None = None
        self._hint: PlacementHint | None = None
        if placement is None:
            return
        if isinstance(placement, PlacementHint):
            if placement.kind is not self.required_kind:
                raise KindMismatch(
                    f"{self.describe()} needs a {self.required_kind} tile, got hint {placement!r}"
                )
            self._hint = placement
        else:
            self.place(placement)

    def describe(self) -> str:
        return type(self).__name__

    @property
    def tile(self) -> Tile | None:
        return self._tile

    @property
    def placement(self) -> Tile | PlacementHint | None:
        return self._tile if self._tile is not None else self._hint

    @property
    def is_placed(self) -> bool:
        return self._tile is not None

    def place(self, tile) -> None:
        tile = as_tile(tile)
        if tile.kind is not None and tile.kind is not self.required_kind:
            raise KindMismatch(
                f"{self.describe()} needs a {self.required_kind} tile, {tile} is {tile.kind}"
            )
        if self._tile is not None and self._tile != tile:
            raise AlreadyPlaced(f"{self.describe()} is already placed on {self._tile}, not {tile}")
        self._tile = tile


class Placer(ABC):
    """Assigns tiles to unplaced components.

    ``make_placement`` returns a mapping ``component -> Tile`` covering any
    subset of the unplaced components; already placed components must not
    appear with a different tile.
    """

    @abstractmethod
    def make_placement(self, device: Device, rt, workers: Sequence, object_fifos: Sequence) -> dict:
        ...


def _endpoints(fifo) -> list:
    eps = [fifo.producer_endpoint(), *fifo.consumer_endpoints()]
    return [e for e in eps if e is not None]


def _unique(items: Iterable) -> list:
    seen, out = set(), []
    for x in items:
        if id(x) not in seen:
            seen.add(id(x))
            out.append(x)
    return out


class SequentialPlacer(Placer):
    """Workers fill compute tiles column by column; mem and shim endpoints
    then follow the columns of the components they exchange data with.

    A mem or shim endpoint takes the least loaded column among its placed
    peers' columns (ties go to the first peer's column), which spreads fifos
    round-robin when one column is in demand. Budgets are not checked here.
    """

    def make_placement(self, device: Device, rt, workers: Sequence, object_fifos: Sequence) -> dict:
        assign: dict = {}

        def tile_of(c):
            return assign.get(c) or c.tile

        taken = {w.tile.coords for w in workers if w.tile is not None}
        free = (t for t in device.tiles(TileKind.COMPUTE) if t.coords not in taken)
        for w in workers:
            if w.tile is None:
                t = next(free, None)
                if t is None:
                    n = sum(1 for _ in device.tiles(TileKind.COMPUTE))
                    raise GridExhausted(
                        f"{len(workers)} workers do not fit the {n} compute tiles of {device.name}"
                    )
                assign[w] = t

        components = _unique(e for f in object_fifos for e in _endpoints(f))
        peers: dict = defaultdict(list)
        for f in object_fifos:
            eps = _endpoints(f)
            for e in eps:
                peers[e].extend(p for p in eps if p is not e)

        load: Counter = Counter()
        for c in components:
            if c.tile is not None:
                load[(c.required_kind, c.tile.col)] += 1

        for kind in (TileKind.MEM, TileKind.SHIM):
            pending = [c for c in components if c.required_kind is kind and c.tile is None]
            while pending:
                progressed = False
                for c in list(pending):
                    cols = _unique_cols(tile_of(p) for p in peers[c])
                    if cols:
                        assign[c] = self._pick(device, kind, cols, load)
                        pending.remove(c)
                        progressed = True
                if not progressed:
                    c = pending.pop(0)
                    assign[c] = self._pick(device, kind, list(range(device.n_cols)), load)
        return assign

    @staticmethod
    def _pick(device: Device, kind: TileKind, cols: list[int], load: Counter) -> Tile:
        col = min(cols, key=lambda c: (load[(kind, c)], cols.index(c)))
        load[(kind, col)] += 1
        return next(t for t in device.tiles(kind) if t.col == col)


def _unique_cols(tiles) -> list[int]:
    out = []
    for t in tiles:
        if t is not None and t.col not in out:
            out.append(t.col)
    return out


@dataclass(frozen=True)
class PlacementViolation:
    tile: tuple[int, int]
    resource: str  # "grid" | "kind" | "in_channels" | "out_channels" | "bytes"
    used: int
    limit: int
    detail: str = ""

    def __str__(self) -> str:
        return f"{self.resource} on ({self.tile[0]},{self.tile[1]}): {self.used} > {self.limit} {self.detail}".rstrip()


def validate_placement(design: "ResolvedDesign", device: Device) -> list[PlacementViolation]:
    """Resource violations of a resolved design; empty when it fits.

    Every fifo endpoint costs its tile one DMA channel in its direction and
    ``depth * object bytes`` of local memory (shim tiles stream from external
    memory and hold no buffers).
    """
    out: list[PlacementViolation] = []
    kinds = {}

    def check_tile(coord, want: TileKind | None, what: str) -> bool:
        try:
            t = device.tile_at(*coord)
        except IndexError:
            out.append(PlacementViolation(coord, "grid", 1, 0, f"{what} is outside the grid"))
            return False
        kinds[coord] = t.kind
        if want is not None and t.kind is not want:
            out.append(PlacementViolation(coord, "kind", 1, 0, f"{what} needs {want}, tile is {t.kind}"))
        return True

    for w in design.workers:
        check_tile(w.tile, TileKind.COMPUTE, f"worker @{w.name}")
    for l in design.links:
        check_tile(l.tile, TileKind.MEM, f"link @{l.name}")
    for op in design.dma_ops():
        check_tile(op.tile, TileKind.SHIM, f"@{op.name}")

    ins: Counter = Counter()
    outs: Counter = Counter()
    used_bytes: Counter = Counter()
    for f in design.fifos:
        ends = [("out", f.producer)] + [("in", c) for c in f.consumers]
        for direction, coord in ends:
            if not check_tile(coord, None, f"fifo @{f.name}"):
                continue
            (outs if direction == "out" else ins)[coord] += 1
            if kinds[coord] is not TileKind.SHIM:
                used_bytes[coord] += f.depth * f.nbytes

    for coord in sorted(set(ins) | set(outs) | set(used_bytes)):
        t = device.tile_at(*coord)
        n_in, n_out = device.channels(t)
        if ins[coord] > n_in:
            out.append(PlacementViolation(coord, "in_channels", ins[coord], n_in))
        if outs[coord] > n_out:
            out.append(PlacementViolation(coord, "out_channels", outs[coord], n_out))
        cap = device.capacity(t)
        if cap is not None and used_bytes[coord] > cap:
            out.append(PlacementViolation(coord, "bytes", used_bytes[coord], cap))
    return out

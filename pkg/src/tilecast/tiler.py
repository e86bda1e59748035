"""Generators for 2-D tiling access sequences.

Hand-deriving sizes/strides for tiled transfers is error prone; these helpers
build them from a description of the tiling instead. Every generated tap walks
up to five logical loops, outermost first::

    repeat -> group row -> group col -> tile row -> tile col

(the group and tile pairs swap when their order is ``col_major``). Unit loops
are dropped, and if the rest still exceeds the rank budget adjacent loops are
merged where the merge keeps the offset stream identical.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Sequence

from .errors import NonDivisible, OutOfBounds, PatternError, RankOverflow
from .taplib import DEFAULT_MAX_RANK, TensorAccessPattern, TensorAccessSequence

ORDERS = ("row_major", "col_major")


@dataclass(frozen=True)
class TilerSpec:
    tensor_dims: tuple[int, int]
    tile_dims: tuple[int, int]
    within_tile_order: str = "row_major"
    group_dims: tuple[int, int] = (1, 1)
    # also selects the order in which groups are visited over the tile grid
    within_group_order: str = "row_major"
    group_repeat: int = 1
    group_step: tuple[int, int] = (1, 1)
    max_rank: int = DEFAULT_MAX_RANK

    def __post_init__(self):
        for name in ("tensor_dims", "tile_dims", "group_dims", "group_step"):
            value = tuple(int(v) for v in getattr(self, name))
            if len(value) != 2 or any(v <= 0 for v in value):
                raise PatternError(f"{name} must be two positive integers, got {value}")
            object.__setattr__(self, name, value)
        for name in ("within_tile_order", "within_group_order"):
            if getattr(self, name) not in ORDERS:
                raise PatternError(f"{name} must be one of {ORDERS}")
        if int(self.group_repeat) < 1:
            raise PatternError(f"group_repeat must be >= 1, got {self.group_repeat}")

    @classmethod
    def from_json(cls, obj: dict) -> "TilerSpec":
        known = set(cls.__dataclass_fields__)
        unknown = set(obj) - known
        if unknown:
            raise PatternError(f"unknown tiler fields: {sorted(unknown)}")
        return cls(**obj)

    def to_json(self) -> dict:
        out = asdict(self)
        return {k: list(v) if isinstance(v, tuple) else v for k, v in out.items()}


def _mergeable(outer: tuple[int, int], inner: tuple[int, int]) -> bool:
    return outer[1] == inner[0] * inner[1]


def compact_dims(
    dims: Sequence[tuple[int, int]], max_rank: int = DEFAULT_MAX_RANK
) -> list[tuple[int, int]]:
    """Drop unit loops, then merge adjacent ``(size, stride)`` loops
    innermost-first until at most ``max_rank`` remain.

    ``(s1, t1), (s2, t2)`` merge into ``(s1 * s2, t2)`` when ``t1 == s2 * t2``.
    """
    loops = [(int(s), int(t)) for s, t in dims if s != 1]
    i = len(loops) - 2
    while len(loops) > max_rank and i >= 0:
        if _mergeable(loops[i], loops[i + 1]):
            s2, t2 = loops[i + 1]
            loops[i : i + 2] = [(loops[i][0] * s2, t2)]
            i = min(i, len(loops) - 2)
        else:
            i -= 1
    if len(loops) > max_rank:
        raise RankOverflow(
            f"pattern needs {len(loops)} dimensions, budget is {max_rank}: {loops}"
        )
    return loops


def _pad(loops: list[tuple[int, int]], rank: int) -> tuple[list[int], list[int]]:
    loops = [(1, 0)] * (rank - len(loops)) + loops
    return [s for s, _ in loops], [t for _, t in loops]


def compact(tap: TensorAccessPattern, max_rank: int | None = None) -> TensorAccessPattern:
    """An access-equivalent tap with at most ``max_rank`` significant dims,
    left-padded with unit dims to exactly ``max_rank``."""
    rank = tap.max_rank if max_rank is None else max_rank
    loops = compact_dims(list(zip(tap.sizes, tap.strides)), rank)
    sizes, strides = _pad(loops, rank)
    return TensorAccessPattern(
        tap.tensor_dims, tap.offset, sizes, strides, max_rank=max(rank, tap.max_rank)
    )


def _group_origins(grid: int, group: int, step: int, axis: str) -> list[int]:
    if (group - 1) * step + 1 > grid:
        raise OutOfBounds(
            f"a group of {group} tiles with step {step} escapes the {grid}-tile {axis} axis"
        )
    span = group * step
    if grid % span:
        raise NonDivisible(
            f"{axis} grid of {grid} tiles is not covered by groups spanning {span}"
        )
    return [b * span + k for b in range(grid // span) for k in range(step)]


def group_tiler(spec: TilerSpec) -> TensorAccessSequence:
    rows, cols = spec.tensor_dims
    tr, tc = spec.tile_dims
    if rows % tr or cols % tc:
        raise NonDivisible(f"tile {spec.tile_dims} does not divide tensor {spec.tensor_dims}")
    gr, gc = spec.group_dims
    sr, sc = spec.group_step
    row_origins = _group_origins(rows // tr, gr, sr, "row")
    col_origins = _group_origins(cols // tc, gc, sc, "column")

    tile_loops = [(tr, cols), (tc, 1)]
    if spec.within_tile_order == "col_major":
        tile_loops.reverse()
    group_loops = [(gr, sr * tr * cols), (gc, sc * tc)]
    if spec.within_group_order == "col_major":
        group_loops.reverse()
    loops = compact_dims(
        [(spec.group_repeat, 0), *group_loops, *tile_loops], spec.max_rank
    )
    sizes, strides = _pad(loops, spec.max_rank)

    if spec.within_group_order == "col_major":
        origins = [(r, c) for c in col_origins for r in row_origins]
    else:
        origins = [(r, c) for r in row_origins for c in col_origins]
    taps = [
        TensorAccessPattern(
            spec.tensor_dims, r * tr * cols + c * tc, sizes, strides, max_rank=spec.max_rank
        )
        for r, c in origins
    ]
    return TensorAccessSequence.from_taps(taps)


def simple_tiler(
    tensor_dims: Sequence[int], tile_dims: Sequence[int], **options
) -> TensorAccessSequence:
    """One tap per tile, tiles visited row-major over the tile grid."""
    return group_tiler(TilerSpec(tuple(tensor_dims), tuple(tile_dims), **options))


class TensorTiler2D:
    simple_tiler = staticmethod(simple_tiler)
    group_tiler = staticmethod(group_tiler)

"""Tensor access patterns and sequences of them.

A :class:`TensorAccessPattern` (tap) describes the ordered stream of element
offsets a DMA produces when it walks a row-major tensor with nested loops:
dimension 0 is the outermost loop, the last dimension the innermost, and the
linear offset at iteration ``(i_0, ..., i_{D-1})`` is
``offset + sum(i_d * strides[d])``.

Taps are analyzed through two access maps, both shaped like the tensor:

* the *count* map holds how many times each element is touched;
* the *order* map holds the iteration index of the last touch, or ``-1`` for
  elements that are never touched.

Two taps are *access equivalent* when both maps agree, even if their
sizes/strides encodings differ.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterator, Sequence, Union

import numpy as np

from .errors import (
    DimensionMismatch,
    EmptyDims,
    EmptySequence,
    MismatchedDims,
    OutOfBounds,
    PatternError,
    RankOverflow,
    UnsupportedRank,
)

DEFAULT_MAX_RANK = 4


def _int_tuple(values, what: str) -> tuple[int, ...]:
    try:
        values = list(values)
        out = tuple(int(v) for v in values)
    except (TypeError, ValueError):
        raise PatternError(f"{what} must be a sequence of integers, got {values!r}")
    for raw, v in zip(values, out):
        if raw != v:
            raise PatternError(f"{what} must be integers, got {values!r}")
    return out


def _row_major_strides(dims: Sequence[int]) -> tuple[int, ...]:
    strides = []
    acc = 1
    for d in reversed(dims):
        strides.append(acc)
        acc *= d
    return tuple(reversed(strides))


@dataclass(frozen=True, init=False)
class TensorAccessPattern:
    tensor_dims: tuple[int, ...]
    offset: int
    sizes: tuple[int, ...]
    strides: tuple[int, ...]
    max_rank: int = field(default=DEFAULT_MAX_RANK, compare=False, repr=False)

    def __init__(
        self,
        tensor_dims: Sequence[int],
        offset: int = 0,
        sizes: Sequence[int] | None = None,
        strides: Sequence[int] | None = None,
        *,
        max_rank: int = DEFAULT_MAX_RANK,
    ):
        dims = _int_tuple(tensor_dims, "tensor_dims")
        if not dims or any(d <= 0 for d in dims):
            raise EmptyDims(f"tensor_dims must be non-empty and positive, got {dims}")
        if sizes is None or strides is None:
            raise PatternError("both sizes and strides are required")
        sizes = _int_tuple(sizes, "sizes")
        strides = _int_tuple(strides, "strides")
        if len(sizes) != len(strides):
            raise DimensionMismatch(
                f"len(sizes)={len(sizes)} != len(strides)={len(strides)}"
            )
        if not sizes:
            raise EmptyDims("a tap needs at least one dimension")
        if len(sizes) > max_rank:
            raise RankOverflow(f"rank {len(sizes)} exceeds max rank {max_rank}")
        if any(s <= 0 for s in sizes):
            raise PatternError(f"sizes must be positive, got {sizes}")
        if any(s < 0 for s in strides):
            raise PatternError(f"strides must be non-negative, got {strides}")
        offset = int(offset)
        if offset < 0:
            raise PatternError(f"offset must be non-negative, got {offset}")

        # strides are non-negative, so the all-maximal index is the extreme offset
        last = offset + sum((s - 1) * st for s, st in zip(sizes, strides))
        total = math.prod(dims)
        if last >= total:
            raise OutOfBounds(
                f"pattern reaches offset {last}, tensor {dims} has {total} elements"
            )

        object.__setattr__(self, "tensor_dims", dims)
        object.__setattr__(self, "offset", offset)
        object.__setattr__(self, "sizes", sizes)
        object.__setattr__(self, "strides", strides)
        object.__setattr__(self, "max_rank", max_rank)

    @classmethod
    def identity(cls, tensor_dims: Sequence[int], **kwargs) -> "TensorAccessPattern":
        """Row-major sweep over the whole tensor."""
        dims = tuple(tensor_dims)
        return cls(dims, 0, dims, _row_major_strides(dims), **kwargs)

    @property
    def rank(self) -> int:
        return len(self.sizes)

    @property
    def tensor_size(self) -> int:
        return math.prod(self.tensor_dims)

    @property
    def num_iterations(self) -> int:
        return math.prod(self.sizes)

    def offsets(self) -> np.ndarray:
        idx = np.indices(self.sizes, dtype=np.int64).reshape(self.rank, -1)
        return self.offset + np.asarray(self.strides, dtype=np.int64) @ idx

    def audit(self) -> None:
        """Check every enumerated offset against the tensor bounds."""
        offs = self.offsets()
        bad = offs[(offs < 0) | (offs >= self.tensor_size)]
        if bad.size:
            raise OutOfBounds(f"offset {int(bad[0])} escapes tensor {self.tensor_dims}")

    def access_order(self) -> np.ndarray:
        return _order_map(self.tensor_dims, [self.offsets()])

    def access_count(self) -> np.ndarray:
        return _count_map(self.tensor_dims, [self.offsets()])

    def access_tensors(self) -> tuple[np.ndarray, np.ndarray]:
        return self.access_order(), self.access_count()

    def access_equivalent(self, other: Pattern) -> bool:
        return access_equivalent(self, other)

    def with_offset(self, offset: int) -> "TensorAccessPattern":
        return TensorAccessPattern(
            self.tensor_dims, offset, self.sizes, self.strides, max_rank=self.max_rank
        )

    def to_json(self) -> dict:
        return {
            "dims": list(self.tensor_dims),
            "offset": self.offset,
            "sizes": list(self.sizes),
            "strides": list(self.strides),
        }

    def __str__(self) -> str:
        return (
            f"tap(dims={list(self.tensor_dims)} off={self.offset} "
            f"sizes={list(self.sizes)} strides={list(self.strides)})"
        )


@dataclass(frozen=True)
class TensorAccessSequence:
    """Ordered collection of taps over one tensor shape.

    Iteration indices continue across members, so the order map of a sequence
    numbers the accesses of its second tap after those of the first.
    """

    taps: tuple[TensorAccessPattern, ...]

    def __post_init__(self):
        taps = tuple(self.taps)
        if not taps:
            raise EmptySequence("a tensor access sequence needs at least one tap")
        dims = taps[0].tensor_dims
        for t in taps[1:]:
            if t.tensor_dims != dims:
                raise MismatchedDims(f"tap dims {t.tensor_dims} != {dims}")
        object.__setattr__(self, "taps", taps)

    @classmethod
    def from_taps(cls, taps: Sequence[TensorAccessPattern]) -> "TensorAccessSequence":
        return cls(tuple(taps))

    @property
    def tensor_dims(self) -> tuple[int, ...]:
        return self.taps[0].tensor_dims

    @property
    def num_iterations(self) -> int:
        return sum(t.num_iterations for t in self.taps)

    def __len__(self) -> int:
        return len(self.taps)

    def __iter__(self) -> Iterator[TensorAccessPattern]:
        return iter(self.taps)

    def __getitem__(self, i):
        return self.taps[i]

    def offsets(self) -> np.ndarray:
        return np.concatenate([t.offsets() for t in self.taps])

    def access_order(self) -> np.ndarray:
        return _order_map(self.tensor_dims, [t.offsets() for t in self.taps])

    def access_count(self) -> np.ndarray:
        return _count_map(self.tensor_dims, [t.offsets() for t in self.taps])

    def access_tensors(self) -> tuple[np.ndarray, np.ndarray]:
        return self.access_order(), self.access_count()

    def access_equivalent(self, other: Pattern) -> bool:
        return access_equivalent(self, other)

    def to_json(self) -> dict:
        return {
            "dims": list(self.tensor_dims),
            "taps": [
                {k: v for k, v in t.to_json().items() if k != "dims"} for t in self.taps
            ],
        }


Pattern = Union[TensorAccessPattern, TensorAccessSequence]


def _order_map(dims, offset_runs) -> np.ndarray:
    order = np.full(math.prod(dims), -1, dtype=np.int64)
    start = 0
    for offs in offset_runs:
        # iteration indices increase, so max keeps the last access
        np.maximum.at(order, offs, np.arange(start, start + offs.size, dtype=np.int64))
        start += offs.size
    return order.reshape(dims)


def _count_map(dims, offset_runs) -> np.ndarray:
    size = math.prod(dims)
    count = np.zeros(size, dtype=np.int64)
    for offs in offset_runs:
        count += np.bincount(offs, minlength=size)
    return count.reshape(dims)


def tas_from_taps(taps: Sequence[TensorAccessPattern]) -> TensorAccessSequence:
    return TensorAccessSequence.from_taps(taps)


def strictly_equal(a: Pattern, b: Pattern) -> bool:
    """Field-wise equality: dims, offset, sizes and strides all match."""
    return type(a) is type(b) and a == b


def access_equivalent(a: Pattern, b: Pattern) -> bool:
    if a.tensor_dims != b.tensor_dims:
        return False
    order_a, count_a = a.access_tensors()
    order_b, count_b = b.access_tensors()
    return np.array_equal(order_a, order_b) and np.array_equal(count_a, count_b)


def pattern_from_json(obj: dict, *, max_rank: int = DEFAULT_MAX_RANK) -> Pattern:
    """Build a tap from ``{"dims", "offset", "sizes", "strides"}`` or a tase
    from ``{"dims", "taps": [{"offset", "sizes", "strides"}, ...]}``."""
    if not isinstance(obj, dict) or "dims" not in obj:
        raise PatternError("pattern spec must be an object with a 'dims' field")
    dims = obj["dims"]
    try:
        if "taps" in obj:
            return TensorAccessSequence.from_taps(
                [
                    TensorAccessPattern(
                        dims, t.get("offset", 0), t["sizes"], t["strides"], max_rank=max_rank
                    )
                    for t in obj["taps"]
                ]
            )
        return TensorAccessPattern(
            dims, obj.get("offset", 0), obj["sizes"], obj["strides"], max_rank=max_rank
        )
    except KeyError as exc:
        raise PatternError(f"pattern spec is missing field {exc.args[0]!r}") from None


# -- rendering ---------------------------------------------------------------

RENDER_FORMATS = ("ansi", "csv", "pgm")


def _as_grid(access_map) -> np.ndarray:
    grid = np.asarray(access_map)
    if grid.ndim > 2:
        raise UnsupportedRank(f"can only render 1-D and 2-D maps, got rank {grid.ndim}")
    return np.atleast_2d(grid).astype(np.int64)


def _rescale(grid: np.ndarray) -> np.ndarray:
    # negative entries are the "never accessed" sentinel and land on 0
    lo = min(int(grid.min()), 0)
    hi = int(grid.max())
    if hi == lo:
        return np.zeros(grid.shape, dtype=np.uint8)
    clipped = np.maximum(grid, lo)
    return ((clipped - lo) * 255 // (hi - lo)).astype(np.uint8)


def render_access_map(access_map, fmt: str = "csv") -> bytes:
    """Render an order or count map as CSV, binary PGM (P5) or ANSI blocks."""
    grid = _as_grid(access_map)
    if fmt == "csv":
        rows = (",".join(str(int(v)) for v in row) for row in grid)
        return "\n".join(rows).encode()
    if fmt == "pgm":
        h, w = grid.shape
        return f"P5\n{w} {h}\n255\n".encode() + _rescale(grid).tobytes()
    if fmt == "ansi":
        levels = _rescale(grid).astype(np.int64) * 23 // 255
        lines = []
        for row in levels:
            cells = "".join(f"\x1b[48;5;{232 + int(v)}m  " for v in row)
            lines.append(cells + "\x1b[0m")
        return ("\n".join(lines) + "\n").encode()
    raise ValueError(f"unknown render format {fmt!r}; expected one of {RENDER_FORMATS}")

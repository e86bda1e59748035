"""Kernel registry.

A kernel is a generator function with the worker's bindings as arguments:
fifo ports for handles and plain values for scalar parameters. One call is one
iteration of the worker body; the simulator calls it again forever. Ports are
acquired with ``yield from``::

    def add_one(of_in, of_out):
        a = yield from of_in.acquire(1)
        b = yield from of_out.acquire(1)
        b[...] = a + 1
        of_in.release(1)
        of_out.release(1)
"""

from __future__ import annotations

from typing import Callable

import numpy as np

from ..errors import DuplicateKernel, UnknownKernel

Kernel = Callable[..., object]

_REGISTRY: dict[str, Kernel] = {}


def register_kernel(name: str, routine: Kernel | None = None):
    """Register ``routine`` under ``name``; usable as a decorator."""

    def add(fn: Kernel) -> Kernel:
        if name in _REGISTRY:
            raise DuplicateKernel(f"kernel {name!r} is already registered")
        if not callable(fn):
            raise TypeError(f"kernel {name!r} must be callable")
        _REGISTRY[name] = fn
        return fn

    return add if routine is None else add(routine)


def unregister_kernel(name: str) -> None:
    _REGISTRY.pop(name, None)


def get_kernel(name: str) -> Kernel:
    try:
        return _REGISTRY[name]
    except KeyError:
        raise UnknownKernel(f"no kernel named {name!r}") from None


def has_kernel(name: str) -> bool:
    return name in _REGISTRY


def kernel_names() -> list[str]:
    return sorted(_REGISTRY)


def _store(dst: np.ndarray, value) -> None:
    np.copyto(dst, value, casting="unsafe")


def unary(fn: Callable[..., np.ndarray]) -> Kernel:
    """A one-in one-out kernel applying ``fn(a, *params)`` per object."""

    def body(of_in, of_out, *params):
        a = yield from of_in.acquire(1)
        b = yield from of_out.acquire(1)
        _store(b, fn(a, *params))
        of_in.release(1)
        of_out.release(1)

    body.__name__ = getattr(fn, "__name__", "unary")
    return body


def binary(fn: Callable[[np.ndarray, np.ndarray], np.ndarray]) -> Kernel:
    """A two-in one-out elementwise kernel."""

    def body(of_a, of_b, of_out):
        a = yield from of_a.acquire(1)
        b = yield from of_b.acquire(1)
        c = yield from of_out.acquire(1)
        _store(c, fn(a, b))
        of_a.release(1)
        of_b.release(1)
        of_out.release(1)

    body.__name__ = getattr(fn, "__name__", "binary")
    return body


def matmul_block(of_a, of_b, of_c, k_blocks):
    """One output block: ``c = sum_k a_k @ b_k`` over ``k_blocks`` input pairs."""
    c = yield from of_c.acquire(1)
    acc = np.zeros(c.shape, dtype=np.result_type(c.dtype, np.int64) if c.dtype.kind in "iu" else c.dtype)
    for _ in range(int(k_blocks)):
        a = yield from of_a.acquire(1)
        b = yield from of_b.acquire(1)
        acc += a.astype(acc.dtype) @ b.astype(acc.dtype)
        of_a.release(1)
        of_b.release(1)
    _store(c, acc)
    of_c.release(1)


def _mod(a, b):
    # zero divisors give zero rather than a warning
    return np.mod(a, b, out=np.zeros_like(np.asarray(a, dtype=np.result_type(a, b))), where=b != 0)


BUILTINS: dict[str, Kernel] = {
    "passthrough": unary(lambda a: a),
    "add_scalar": unary(lambda a, k: a + k),
    "mul_scalar": unary(lambda a, k: a * k),
    "relu": unary(lambda a: np.maximum(a, 0)),
    "eltwise_add": binary(np.add),
    "eltwise_mul": binary(np.multiply),
    "eltwise_max": binary(np.maximum),
    "eltwise_min": binary(np.minimum),
    "eltwise_mod": binary(_mod),
    "matmul_block": matmul_block,
}

for _name, _fn in BUILTINS.items():
    register_kernel(_name, _fn)

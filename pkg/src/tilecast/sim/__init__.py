from .engine import FifoState, Port, RunReport, Wait, run
from .kernels import get_kernel, kernel_names, register_kernel, unregister_kernel

__all__ = [
    "FifoState",
    "Port",
    "RunReport",
    "Wait",
    "get_kernel",
    "kernel_names",
    "register_kernel",
    "run",
    "unregister_kernel",
]

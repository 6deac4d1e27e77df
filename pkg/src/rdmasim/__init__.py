"""Packet-level RDMA transport simulator and NIC resource models."""

__version__ = "0.1.0"

from .simkernel import Simulator, RngStream, RunStats, NSEC, USEC, MSEC, SEC

__all__ = [
    "Simulator",
    "RngStream",
    "RunStats",
    "NSEC",
    "USEC",
    "MSEC",
    "SEC",
    "__version__",
]

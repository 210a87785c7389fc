"""Simulated message-passing runtime: ranks, buffers, phased exchanges."""
from .buffers import RecvBuffer, SendBuffer
from .buffersystem import BufferSystem, DONE, IDLE, RECEIVES_SCHEDULED, SENT
from .core import RankContext, RankKilled, SimRuntime

__all__ = [
    "BufferSystem",
    "RankContext",
    "RankKilled",
    "RecvBuffer",
    "SendBuffer",
    "SimRuntime",
    "IDLE",
    "RECEIVES_SCHEDULED",
    "SENT",
    "DONE",
]

"""glibc allocator tuning for the planner's many short-lived arrays.

Rollouts allocate and free arrays of a few hundred kilobytes thousands of
times per second. With glibc defaults each of those is an ``mmap``/``munmap``
pair plus page faults; raising the mmap and trim thresholds keeps the memory
in the heap and roughly halves rollout time. No-op off glibc.
"""
from __future__ import annotations

import ctypes
import ctypes.util

M_TRIM_THRESHOLD = -1
M_MMAP_THRESHOLD = -3
_done = False


def tune_allocator(mmap_threshold: int = 256 << 20, trim_threshold: int = 512 << 20) -> bool:
    """Apply once per process; returns True if glibc accepted the settings."""
    global _done
    if _done:
        return True
    name = ctypes.util.find_library("c")
    try:
        libc = ctypes.CDLL(name or "libc.so.6")
        mallopt = libc.mallopt
    except (OSError, AttributeError):
        return False
    ok = bool(mallopt(M_TRIM_THRESHOLD, trim_threshold)) and bool(mallopt(M_MMAP_THRESHOLD, mmap_threshold))
    _done = ok
    return ok

"""Splittable, platform-independent random seeding.

Every random draw in this package flows through a single scheme:

* A 64-bit *master seed* is split into child seeds with :func:`child_seed`,
  which evaluates the SplitMix64 output function at an offset derived from
  the child index.  Children are independent of evaluation order, so work
  can be dispatched in any order (or in parallel) without changing results.
* Child seeds key a counter-based Philox bit generator
  (:func:`generator`).  Gaussian variates therefore come from NumPy's
  ziggurat implementation on a fixed, documented stream.

Seeds derived from strings (method names, tags) use an FNV-1a fold so the
mapping is stable across processes and platforms, unlike builtin ``hash``.
"""

from __future__ import annotations

import numpy as np

_MASK64 = (1 << 64) - 1
_GAMMA = 0x9E3779B97F4A7C15  # SplitMix64 stream increment


def _mix64(z: int) -> int:
    """SplitMix64 finalizer: bijective 64-bit avalanche mix."""
    z &= _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return (z ^ (z >> 31)) & _MASK64


def child_seed(master: int, *path: int) -> int:
    """Derive the child seed of ``master`` at an integer index path.

    ``child_seed(m, i)`` is the ``(i+1)``-th output of the SplitMix64
    sequence seeded at ``m``; deeper paths recurse, so
    ``child_seed(m, a, b) == child_seed(child_seed(m, a), b)``.
    """
    state = master & _MASK64
    for index in path:
        if index < 0:
            raise ValueError(f"seed path indices must be non-negative, got {index}")
        state = _mix64((state + (index + 1) * _GAMMA) & _MASK64)
    return state


def string_seed(master: int, name: str) -> int:
    """Child seed keyed by a string label (stable across processes)."""
    h = 0xCBF29CE484222325
    for byte in name.encode("utf-8"):
        h = ((h ^ byte) * 0x100000001B3) & _MASK64
    return child_seed(master, _mix64(h) >> 1)


def generator(seed: int) -> np.random.Generator:
    """Counter-based Philox generator keyed by a 64-bit seed."""
    return np.random.Generator(np.random.Philox(key=seed & _MASK64))

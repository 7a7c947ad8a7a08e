"""Gradient storage and the block partitioning used by every collective.

Workers and blocks are numbered from 0. A gradient of ``L`` elements is split
into ``N`` contiguous blocks of ``ceil(L / N)`` elements; the tail blocks may be
short or empty when ``N`` does not divide ``L``.
"""
from __future__ import annotations

from typing import NamedTuple

import numpy as np

from .errors import InvalidArgument, OutOfBounds

MAX_WORKERS = 32
DEFAULT_ELEMENT_WIDTH = 4

_DTYPES = {2: np.float16, 4: np.float32, 8: np.float64}


def dtype_for_width(width: int) -> np.dtype:
    try:
        return np.dtype(_DTYPES[width])
    except KeyError:
        raise InvalidArgument(f"unsupported element width {width}") from None


class BlockRange(NamedTuple):
    index: int
    offset: int
    length: int

    @property
    def stop(self) -> int:
        return self.offset + self.length


def block_size(length: int, n_workers: int) -> int:
    """Uniform slot size, ``ceil(L / N)``."""
    return -(-length // n_workers)


def partition(length: int, n_workers: int) -> list[BlockRange]:
    if length < 1:
        raise InvalidArgument(f"gradient length must be >= 1, got {length}")
    if not 1 <= n_workers <= MAX_WORKERS:
        raise InvalidArgument(f"worker count must be in [1, {MAX_WORKERS}], got {n_workers}")
    size = block_size(length, n_workers)
    blocks = []
    for k in range(n_workers):
        offset = min(k * size, length)
        blocks.append(BlockRange(k, offset, min(size, length - offset)))
    return blocks


class GradientBuffer:
    """A fixed-length vector of gradient elements.

    Wraps a 1-D numpy array; ``element_width`` selects the float dtype.
    """

    def __init__(self, elements, element_width: int = DEFAULT_ELEMENT_WIDTH, copy: bool = True):
        dtype = dtype_for_width(element_width)
        arr = np.array(elements, dtype=dtype, copy=copy) if copy else np.asarray(elements)
        if arr.dtype != dtype:
            raise InvalidArgument(f"expected dtype {dtype}, got {arr.dtype}")
        if arr.ndim != 1 or arr.size < 1:
            raise InvalidArgument("gradient must be a non-empty 1-D vector")
        self.elements = arr
        self.element_width = element_width

    @classmethod
    def zeros(cls, length: int, element_width: int = DEFAULT_ELEMENT_WIDTH) -> GradientBuffer:
        return cls(np.zeros(length, dtype=dtype_for_width(element_width)), element_width, copy=False)

    def __len__(self) -> int:
        return self.elements.size

    @property
    def nbytes(self) -> int:
        return self.elements.size * self.element_width

    def check_finite(self) -> None:
        if not np.isfinite(self.elements).all():
            raise InvalidArgument("gradient contains NaN or Inf")

    def block(self, rng: BlockRange) -> np.ndarray:
        return block_view(self.elements, rng)

    def __repr__(self) -> str:
        return f"GradientBuffer(L={len(self)}, width={self.element_width})"


def block_view(buf, rng: BlockRange) -> np.ndarray:
    """Writable window over ``rng`` of ``buf`` (a GradientBuffer or 1-D array)."""
    arr = buf.elements if isinstance(buf, GradientBuffer) else buf
    if rng.offset < 0 or rng.length < 0 or rng.offset + rng.length > arr.size:
        raise OutOfBounds(f"block {rng} exceeds buffer of {arr.size} elements")
    return arr[rng.offset:rng.offset + rng.length]


class RegisteredRegion:
    """One contiguous allocation carved into a send buffer and N receive slots.

    The send buffer holds the full gradient (N blocks). Receive slot ``k`` is
    ``ceil(L / N)`` elements wide and is written only by sender rank ``k``.
    """

    def __init__(self, length: int, n_workers: int, element_width: int = DEFAULT_ELEMENT_WIDTH):
        self.blocks = partition(length, n_workers)
        self.length = length
        self.n_workers = n_workers
        self.element_width = element_width
        self.slot_size = block_size(length, n_workers)
        self.memory = np.zeros(length + n_workers * self.slot_size, dtype=dtype_for_width(element_width))
        self.send_buffer = GradientBuffer(self.memory[:length], element_width, copy=False)
        self._receive = self.memory[length:].reshape(n_workers, self.slot_size)

    @property
    def dtype(self) -> np.dtype:
        return self.memory.dtype

    def send_block(self, index: int) -> np.ndarray:
        return block_view(self.send_buffer, self.blocks[index])

    def receive_slot(self, sender: int, length: int | None = None) -> np.ndarray:
        """Slot written by ``sender``; trimmed to ``length`` elements if given."""
        slot = self._receive[sender]
        return slot if length is None else slot[:length]

    def load(self, grad) -> None:
        arr = grad.elements if isinstance(grad, GradientBuffer) else np.asarray(grad)
        if arr.shape != (self.length,):
            raise InvalidArgument(f"gradient has shape {arr.shape}, region expects ({self.length},)")
        self.send_buffer.elements[:] = arr

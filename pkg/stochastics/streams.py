"""
Random Streams
Counter-based, splittable random streams keyed by (seed, stream_id)
"""

import logging
from dataclasses import dataclass
from typing import Tuple, Union

import numpy as np

from stochastics.errors import DomainError

logger = logging.getLogger(__name__)

MAX_SEED = 2**64 - 1


@dataclass(frozen=True)
class NoiseStream:
    """
    Address of one independent random stream.

    The generator is Philox (counter-based) keyed through a SeedSequence whose
    spawn key is (stream_id, *lanes). The same address always yields the same
    draws, on any thread and in any order.

    Attributes:
        seed: 64-bit base seed
        stream_id: replicate index
        lanes: sub-stream path used to split one replicate into disjoint parts
    """
    seed: int
    stream_id: int = 0
    lanes: Tuple[int, ...] = ()

    def __post_init__(self):
        if not 0 <= int(self.seed) <= MAX_SEED:
            raise DomainError(f"seed must be a 64-bit unsigned integer, got {self.seed}")
        if int(self.stream_id) < 0:
            raise DomainError(f"stream_id must be nonnegative, got {self.stream_id}")
        if any(int(lane) < 0 for lane in self.lanes):
            raise DomainError(f"lanes must be nonnegative, got {self.lanes}")

    @property
    def spawn_key(self) -> Tuple[int, ...]:
        return (int(self.stream_id),) + tuple(int(lane) for lane in self.lanes)

    def generator(self) -> np.random.Generator:
        """Fresh generator positioned at the start of this stream."""
        sequence = np.random.SeedSequence(int(self.seed), spawn_key=self.spawn_key)
        return np.random.Generator(np.random.Philox(sequence))

    def child(self, lane: int) -> "NoiseStream":
        """Disjoint sub-stream of this stream."""
        return NoiseStream(self.seed, self.stream_id, self.lanes + (int(lane),))

    def replicate(self, offset: int) -> "NoiseStream":
        """Stream of the replicate `offset` positions after this one."""
        return NoiseStream(self.seed, self.stream_id + int(offset), self.lanes)


RandomSource = Union[NoiseStream, np.random.Generator]


def as_generator(source: RandomSource) -> np.random.Generator:
    """Accept either a stream address or an already-positioned generator."""
    if isinstance(source, np.random.Generator):
        return source
    if isinstance(source, NoiseStream):
        return source.generator()
    raise TypeError(f"expected NoiseStream or numpy Generator, got {type(source).__name__}")

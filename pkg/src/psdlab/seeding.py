"""Named random streams derived from one master seed.

Each consumer (dataset generation, poisoning, weight init, shuffling,
detectors, ...) draws from its own stream, so adding draws in one place
never shifts the numbers another place sees.
"""

import zlib

import numpy as np

STREAMS = (
    "dataset",
    "test",
    "reference",
    "poison",
    "trigger",
    "init",
    "shuffle",
    "detector",
    "power",
)


class SeedStreams:
    """Splits a master seed into independent, reproducible generators."""

    def __init__(self, master_seed: int):
        if master_seed < 0:
            raise ValueError(f"seed must be non-negative, got {master_seed}")
        self.master_seed = int(master_seed)

    def _sequence(self, name: str) -> np.random.SeedSequence:
        key = zlib.crc32(name.encode("utf-8"))
        return np.random.SeedSequence(entropy=self.master_seed, spawn_key=(key,))

    def generator(self, name: str) -> np.random.Generator:
        return np.random.default_rng(self._sequence(name))

    def seed(self, name: str) -> int:
        """Integer seed for APIs that take one (scikit-learn, sub-plans)."""
        return int(self._sequence(name).generate_state(1, dtype=np.uint32)[0])

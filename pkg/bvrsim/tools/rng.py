"""Keyed, counter-based random number streams.

Every random draw in a simulation comes from a stream whose identity is a
purpose tag plus integer indices (worker, epoch, round, local step, ...).
A stream is a numpy Philox generator seeded from
SeedSequence(master_seed, spawn_key=(tag, *indices)), so the numbers a stream
produces depend only on (master_seed, stream_id), never on which thread
consumes it or in which order the streams are created.
"""

from dataclasses import dataclass, field

import numpy as np

#stable integer codes; never renumber, saved results depend on them
PURPOSES = {
    'init': 0,          #perturbation of the start point
    'server': 1,        #large-batch pairs feeding the server estimator
    'local': 2,         #minibatches of the sampled worker's local loop
    'ball': 3,          #per-local-step ball perturbation
    'select': 4,        #choice of the sampled worker
    'baseline': 5,      #minibatches of the baseline optimizers
    'baseline_ball': 6, #server-side perturbation of noisy minibatch SGD
    'eigen': 7,         #eigensolver start vectors
    'data': 8,          #synthetic dataset generation
    'partition': 9,     #label-skew partitioning and train/test split
    'model_init': 10,   #initial parameters of the network problems
    'restart': 11,      #seed derivation for repeated runs
}


def stream_key(purpose: str, *indices: int) -> tuple[int, ...]:
    """Turns a purpose tag and indices into a SeedSequence spawn key"""
    try:
        code = PURPOSES[purpose]
    except KeyError:
        raise ValueError(f"Unknown stream purpose '{purpose}'. Known purposes are {sorted(PURPOSES)}")
    key = (code,) + tuple(int(i) for i in indices)
    if any(i < 0 for i in key):
        raise ValueError(f"Stream indices must be non-negative, got {key}")
    return key


@dataclass
class RngStream:
    """A single-consumer random stream identified by (master_seed, stream_id)"""
    master_seed: int
    stream_id: tuple
    generator: np.random.Generator = field(init=False, repr=False)

    def __post_init__(self):
        seq = np.random.SeedSequence(entropy=int(self.master_seed), spawn_key=self.stream_id)
        self.generator = np.random.Generator(np.random.Philox(seq))

    @classmethod
    def for_key(cls, master_seed: int, purpose: str, *indices: int) -> "RngStream":
        return cls(master_seed, stream_key(purpose, *indices))

    def integers(self, low, high=None, size=None):
        return self.generator.integers(low, high, size=size)

    def uniform(self, low=0.0, high=1.0, size=None):
        return self.generator.uniform(low, high, size)

    def normal(self, size=None):
        return self.generator.standard_normal(size)

    def permutation(self, x):
        return self.generator.permutation(x)


def derive_seed(master_seed: int, *indices: int) -> int:
    """A 63-bit child seed, e.g. for trial or restart number i"""
    seq = np.random.SeedSequence(entropy=int(master_seed), spawn_key=stream_key('restart', *indices))
    return int(seq.generate_state(2, dtype=np.uint64)[0] >> np.uint64(1))

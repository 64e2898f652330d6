"""Index-level data splitting: label-skew partitioning across workers and the
seed-stable train/test split of the synthetic datasets.

The homogeneity dial q works per worker: worker p takes round(q * n/P)
samples of its dominant class (classes are assigned round-robin, p mod C) and
fills the rest evenly from the other classes. q = 1/C with P = C gives every
worker a uniform class histogram; q = 1 gives each worker one class only.
"""

import logging

import numpy as np

logger = logging.getLogger(__name__)


def dominant_class(worker_id: int, n_classes: int) -> int:
    return worker_id % n_classes


def label_skew_counts(class_supply: np.ndarray, P: int, q: float) -> np.ndarray:
    """
    Computes how many samples of each class every worker receives.
    :param class_supply: number of available samples per class
    :param P: number of workers
    :param q: homogeneity parameter in [0, 1]
    :return: integer matrix (P, C) whose rows sum to n/P and whose columns respect the supply
    """
    supply = np.asarray(class_supply, dtype=np.int64).copy()
    n_classes = supply.size
    n = int(supply.sum())
    if n % P:
        raise ValueError(f"n={n} is not divisible by P={P}")
    if not 0.0 <= q <= 1.0:
        raise ValueError(f"homogeneity q must lie in [0, 1], got {q}")
    per_worker = n // P
    counts = np.zeros((P, n_classes), dtype=np.int64)

    n_dominant = int(round(q * per_worker))
    for p in range(P):
        c = dominant_class(p, n_classes)
        take = min(n_dominant, supply[c])
        counts[p, c] = take
        supply[c] -= take

    # deal the remainder one sample per worker per turn; each worker takes the
    # non-dominant class it holds least of (ties: most spare supply, then lowest id)
    remaining = per_worker - counts.sum(axis=1)
    while remaining.any():
        for p in range(P):
            if not remaining[p]:
                continue
            own = dominant_class(p, n_classes)
            candidates = [c for c in range(n_classes) if c != own and supply[c] > 0]
            if not candidates:
                #only the dominant class has samples left
                candidates = [c for c in range(n_classes) if supply[c] > 0]
            c = min(candidates, key=lambda c: (counts[p, c], -supply[c], c))
            counts[p, c] += 1
            supply[c] -= 1
            remaining[p] -= 1
    return counts


def label_skew_indices(labels: np.ndarray, P: int, q: float, rng: np.random.Generator) -> list[np.ndarray]:
    """
    Splits sample indices across P workers with label skew q.
    :param labels: integer class label per sample, classes 0..C-1
    :param rng: generator used to shuffle samples inside each class and inside each worker
    :return: list of P index arrays of equal length n/P, disjoint, covering all samples
    """
    labels = np.asarray(labels)
    n_classes = int(labels.max()) + 1
    pools = []
    for c in range(n_classes):
        pool = np.flatnonzero(labels == c)
        pools.append(rng.permutation(pool))
    supply = np.array([len(pool) for pool in pools])
    counts = label_skew_counts(supply, P, q)
    logger.debug(f"label skew counts (q={q}):\n{counts}")

    cursor = np.zeros(n_classes, dtype=np.int64)
    shards = []
    for p in range(P):
        parts = []
        for c in range(n_classes):
            k = counts[p, c]
            parts.append(pools[c][cursor[c]:cursor[c] + k])
            cursor[c] += k
        shards.append(rng.permutation(np.concatenate(parts)))
    return shards


def train_test_split(n_total: int, n_train: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """seed-stable shuffle, the first n_train entries of the permutation are the training set"""
    if not 0 < n_train <= n_total:
        raise ValueError(f"n_train={n_train} must lie in (0, {n_total}]")
    order = rng.permutation(n_total)
    return np.sort(order[:n_train]), np.sort(order[n_train:])

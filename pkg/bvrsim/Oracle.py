"""Minibatch sampling and gradient evaluation with exact cost accounting.

Two counters are kept: budget_units (fresh samples processed, the quantity the
per-round computation budget B constrains) and raw_grad_evals (single
per-sample gradient evaluations, twice the samples for a SARAH pair).
"""

import logging
import threading
from dataclasses import dataclass, field

import numpy as np

from bvrsim.Problems import Problem, Sample, WorkerDataset, ContractViolation
from bvrsim.tools.rng import RngStream

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Minibatch:
    worker_id: int
    indices: np.ndarray

    def __len__(self):
        return len(self.indices)

    @property
    def samples(self) -> list[Sample]:
        return [Sample(self.worker_id, int(i)) for i in self.indices]


def sample_minibatch(stream: RngStream, dataset: WorkerDataset, m: int) -> Minibatch:
    """m i.i.d. draws with replacement from the worker's dataset"""
    if m < 1:
        raise ContractViolation(f"batch size must be at least 1, got {m}")
    if dataset.size == 0:
        raise ContractViolation(f"cannot sample from the empty dataset of worker {dataset.worker_id}")
    return Minibatch(dataset.worker_id, stream.integers(0, dataset.size, size=m))


def full_minibatch(dataset: WorkerDataset) -> Minibatch:
    """the whole local dataset as one batch, used by the full-batch oracles"""
    return Minibatch(dataset.worker_id, np.arange(dataset.size))


@dataclass
class CostLedger:
    """
    Thread-safe gradient-cost counters.
    Increments are attributed to the currently open round; rounds are opened
    by the driver at round boundaries, where the totals are also read.
    """
    raw_grad_evals: int = 0
    budget_units: int = 0
    rounds: list = field(default_factory=list)
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False, compare=False)

    def open_round(self, tag):
        with self._lock:
            self.rounds.append({'tag': tag, 'budget_units': 0, 'raw_grad_evals': 0})

    def charge(self, budget_units: int, raw_grad_evals: int):
        with self._lock:
            self.budget_units += int(budget_units)
            self.raw_grad_evals += int(raw_grad_evals)
            if self.rounds:
                self.rounds[-1]['budget_units'] += int(budget_units)
                self.rounds[-1]['raw_grad_evals'] += int(raw_grad_evals)

    def snapshot(self) -> tuple[int, int]:
        with self._lock:
            return self.budget_units, self.raw_grad_evals


def grad_pair(problem: Problem, batch: Minibatch, x_cur: np.ndarray, x_ref: np.ndarray,
              ledger: CostLedger) -> tuple[np.ndarray, np.ndarray]:
    """
    Minibatch mean gradients at x_cur and x_ref over the same samples.
    Charges |batch| budget units and 2|batch| raw gradient evaluations.
    """
    problem.check_dim(x_cur)
    problem.check_dim(x_ref)
    g = problem.batch_grad(x_cur, batch.worker_id, batch.indices)
    if x_ref is x_cur or np.array_equal(x_ref, x_cur):
        g_ref = g.copy()
    else:
        g_ref = problem.batch_grad(x_ref, batch.worker_id, batch.indices)
    ledger.charge(len(batch), 2 * len(batch))
    return g, g_ref


def minibatch_gradient(problem: Problem, batch: Minibatch, x: np.ndarray, ledger: CostLedger) -> np.ndarray:
    """plain minibatch gradient for the baselines; one evaluation per sample"""
    problem.check_dim(x)
    g = problem.batch_grad(x, batch.worker_id, batch.indices)
    ledger.charge(len(batch), len(batch))
    return g


def full_local_gradient(problem: Problem, p: int, x: np.ndarray, ledger: CostLedger) -> np.ndarray:
    """exact gradient of f_p, charged n/P budget units and n/P evaluations"""
    problem.check_scope(p)
    problem.check_dim(x)
    g = problem.local_gradient(x, p)
    m = problem.samples_per_worker
    ledger.charge(m, m)
    return g

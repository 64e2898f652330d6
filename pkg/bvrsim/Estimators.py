"""Bias-variance reduced gradient estimators.

The server estimator is a SARAH recursion over communication rounds t,
re-anchored at the exact aggregated gradient at the start of every epoch.
The local estimator continues the recursion over the local steps k of the
sampled worker, starting from the server estimator. Every local update is
followed by a perturbation drawn uniformly from the Euclidean ball.
"""

import logging
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from bvrsim.Oracle import CostLedger, grad_pair, sample_minibatch, full_minibatch
from bvrsim.Problems import Problem, ContractViolation
from bvrsim.SimNet import ProtocolError, ordered_average
from bvrsim.tools.rng import RngStream

logger = logging.getLogger(__name__)


class NonFiniteIterateError(FloatingPointError):
    """NaN or Inf in an estimator or an iterate"""

    def __init__(self, message: str, s: int = -1, t: int = -1, k: int = -1):
        super().__init__(f"{message} at (s={s}, t={t}, k={k})")
        self.s, self.t, self.k = s, t, k


def check_finite(vector: np.ndarray, what: str, indices: tuple = (-1, -1, -1)):
    if not np.all(np.isfinite(vector)):
        raise NonFiniteIterateError(f"non-finite {what}", *indices)


# ---------------------------------------------------------------------------
# batch schedule
# ---------------------------------------------------------------------------

def batch_size(k: int, K: int, b: int) -> int:
    """b_k: ceil(sqrt K)*b when k is a multiple of ceil(sqrt K), b otherwise"""
    period = math.isqrt(K - 1) + 1 if K > 1 else 1
    return period * b if k % period == 0 else b


def batch_schedule(K: int, b: int) -> list[int]:
    if K < 1 or b < 1:
        raise ContractViolation(f"need K >= 1 and b >= 1, got K={K}, b={b}")
    return [batch_size(k, K, b) for k in range(K)]


def schedule_total(K: int, b: int) -> int:
    """closed form of sum_k b_k = b (K + (ceil(sqrt K) - 1) ceil(K / ceil(sqrt K)))"""
    period = math.isqrt(K - 1) + 1 if K > 1 else 1
    return b * (K + (period - 1) * -(-K // period))


# ---------------------------------------------------------------------------
# ball perturbation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PerturbationDraw:
    xi: np.ndarray
    stream_id: tuple


def sample_ball(stream: RngStream, d: int, r: float) -> PerturbationDraw:
    """
    Uniform draw from the d-dimensional Euclidean ball of radius r:
    a normalised Gaussian direction scaled by r U^(1/d).
    """
    if r < 0:
        raise ContractViolation(f"the ball radius must be nonnegative, got {r}")
    if r == 0:
        return PerturbationDraw(np.zeros(d), stream.stream_id)
    direction = stream.normal(d)
    norm = np.linalg.norm(direction)
    while norm == 0.0:
        direction = stream.normal(d)
        norm = np.linalg.norm(direction)
    radius = r * stream.uniform() ** (1.0 / d)
    xi = radius * direction / norm
    #rounding can push |xi| a hair past r
    xi_norm = np.linalg.norm(xi)
    if xi_norm > r:
        xi *= r / xi_norm
    return PerturbationDraw(xi, stream.stream_id)


def perturbed_update(x: np.ndarray, v: np.ndarray, eta: float, r: float, stream: RngStream,
                     indices: tuple = (-1, -1, -1)) -> tuple[np.ndarray, np.ndarray]:
    """
    x_tilde = x - eta v, x_next = x_tilde + eta xi with xi uniform on the r-ball.
    Returns both; x_tilde is the candidate point kept for certification.
    """
    if eta <= 0:
        raise ContractViolation(f"eta must be positive, got {eta}")
    check_finite(v, 'estimator', indices)
    x_tilde = x - eta * v
    if r > 0:
        x_next = x_tilde + eta * sample_ball(stream, len(x), r).xi
    else:
        x_next = x_tilde.copy()
    check_finite(x_next, 'iterate', indices)
    return x_tilde, x_next


# ---------------------------------------------------------------------------
# server estimator
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ServerEstimator:
    """v: the aggregated estimate at round t; anchor_x: the point it was formed at"""
    v: np.ndarray
    anchor_x: np.ndarray
    t_index: int = 0


def server_round_update(est: ServerEstimator, pairs: list[tuple[np.ndarray, np.ndarray]], x_cur: np.ndarray,
                        t: int, local_full: list[np.ndarray] = None,
                        average: Callable[[list], np.ndarray] = ordered_average, P: int = None) -> ServerEstimator:
    """
    One server round. Every worker p forms v_p = g_p - g_p_ref + v_old (t >= 1) or
    keeps its exact local gradient (t = 0, given in local_full); the v_p are
    averaged by `average`, which is where the communication is accounted.
    :param pairs: per-worker minibatch gradients at (x_cur, est.anchor_x), ordered by worker id
    :param P: expected number of contributions when `average` does not check it itself
    """
    expected = P if P is not None else len(pairs)
    if len(pairs) != expected:
        raise ProtocolError(f"round t={t}: expected {expected} gradient pairs, got {len(pairs)}")
    if t == 0:
        if local_full is None:
            raise ProtocolError("round t=0 needs the exact local gradients of every worker")
        contributions = list(local_full)
    else:
        contributions = [g - g_ref + est.v for g, g_ref in pairs]
    v = average(contributions)
    check_finite(v, 'server estimator', (-1, t, -1))
    return ServerEstimator(v=v, anchor_x=np.array(x_cur, copy=True), t_index=t)


# ---------------------------------------------------------------------------
# local estimator
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LocalEstimator:
    """v: the estimate at local step k; prev_x: the point of step k, reference of step k+1"""
    v: np.ndarray
    prev_x: np.ndarray
    k_index: int = -1

    @classmethod
    def start(cls, server: ServerEstimator, x: np.ndarray) -> "LocalEstimator":
        return cls(v=server.v, prev_x=x, k_index=-1)


def local_step(est: LocalEstimator, problem: Problem, p: int, k: int, x_cur: np.ndarray, b: int, K: int,
               ledger: CostLedger, stream: RngStream, full_batch: bool = False,
               indices: tuple = (-1, -1, -1)) -> tuple[LocalEstimator, int]:
    """
    Draws b_k samples of worker p and evaluates the pair at (x_cur, est.prev_x).
    For k >= 1 the estimate moves by g - g_ref; at k = 0 it stays the server estimate
    (the pair is still evaluated and charged).
    :return: the new estimator and the number of samples drawn
    """
    if not 0 <= k < K:
        raise ContractViolation(f"local step k={k} outside [0, {K})")
    dataset = problem.datasets[p]
    if full_batch:
        batch = full_minibatch(dataset)
    else:
        batch = sample_minibatch(stream, dataset, batch_size(k, K, b))
    g, g_ref = grad_pair(problem, batch, x_cur, est.prev_x, ledger)
    v = g - g_ref + est.v if k >= 1 else est.v
    check_finite(v, 'local estimator', indices)
    return LocalEstimator(v=v, prev_x=np.array(x_cur, copy=True), k_index=k), len(batch)

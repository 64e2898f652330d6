"""In-process simulated cluster.

Workers are identified by id 0..P-1. Communication is modelled as message
passing with explicit event accounting: every gather and every broadcast is
one communication event, whatever P is. Per-worker computations of a phase
may run on a thread pool; results are always returned and reduced in
ascending worker id, so the observable sequence does not depend on the
number of threads.
"""

import logging
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

logger = logging.getLogger(__name__)

BROADCAST_MODEL = 'broadcast_model'
GATHER_VECTORS = 'gather_vectors'
BROADCAST_VECTOR = 'broadcast_vector'
MESSAGE_KINDS = (BROADCAST_MODEL, GATHER_VECTORS, BROADCAST_VECTOR)


class ProtocolError(RuntimeError):
    """A round received missing, extra or duplicate worker contributions"""


@dataclass(frozen=True)
class RoundMessage:
    kind: str
    payload: tuple
    round_tag: tuple

    def __post_init__(self):
        if self.kind not in MESSAGE_KINDS:
            raise ProtocolError(f"unknown message kind '{self.kind}'")


@dataclass
class CommLedger:
    """communication events per message kind plus the headline round counter"""
    events: dict = field(default_factory=lambda: {kind: 0 for kind in MESSAGE_KINDS})
    rounds: int = 0
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False, compare=False)

    def log_event(self, kind: str):
        with self._lock:
            self.events[kind] += 1

    def complete_round(self):
        with self._lock:
            self.rounds += 1

    @property
    def total_events(self) -> int:
        return sum(self.events.values())


def ordered_average(contributions: list[np.ndarray]) -> np.ndarray:
    """
    Mean as c_0 + sum_p (c_p - c_0)/P accumulated in list order.
    P = 1 and equal contributions both return c_0 bit for bit.
    """
    base = np.asarray(contributions[0], dtype=float)
    total = np.zeros_like(base)
    for c in contributions[1:]:
        total = total + (c - base)
    return base + total / len(contributions)


class Cluster:
    """
    P simulated workers around one server.
    :param P: number of workers
    :param threads: size of the pool used by map_workers, 1 runs inline
    :param keep_messages: retain every RoundMessage (tests and debugging)
    """

    def __init__(self, P: int, threads: int = 1, keep_messages: bool = False):
        if P < 1:
            raise ProtocolError(f"a cluster needs at least one worker, got P={P}")
        self.P = int(P)
        self.threads = max(1, int(threads))
        self.ledger = CommLedger()
        self.keep_messages = keep_messages
        self.messages: list[RoundMessage] = []
        self.worker_models: list = [None] * self.P

    def map_workers(self, fn: Callable[[int], object], workers=None) -> list:
        """applies fn to each worker id and returns the results ordered by worker id"""
        ids = list(range(self.P)) if workers is None else sorted(workers)
        if self.threads == 1 or len(ids) == 1:
            return [fn(p) for p in ids]
        with ThreadPoolExecutor(max_workers=min(self.threads, len(ids))) as executor:
            return list(executor.map(fn, ids))

    def _record(self, kind, payload, round_tag):
        self.ledger.log_event(kind)
        if self.keep_messages:
            self.messages.append(RoundMessage(kind, tuple(payload), tuple(round_tag)))

    def gather_average(self, contributions, round_tag=()) -> np.ndarray:
        """
        Averages one vector per worker. Accepts a list ordered by worker id or a
        mapping {worker_id: vector}; anything but exactly one vector per worker
        raises ProtocolError.
        """
        if isinstance(contributions, dict):
            ids = list(contributions)
            missing = sorted(set(range(self.P)) - set(ids))
            extra = sorted(set(ids) - set(range(self.P)))
            if missing or extra:
                raise ProtocolError(f"gather at {round_tag}: missing workers {missing}, unexpected workers {extra}")
            ordered = [contributions[p] for p in range(self.P)]
        else:
            ordered = list(contributions)
            if len(ordered) != self.P:
                raise ProtocolError(f"gather at {round_tag}: expected {self.P} contributions, got {len(ordered)}")
        self._record(GATHER_VECTORS, ordered, round_tag)
        return ordered_average(ordered)

    def broadcast(self, x: np.ndarray, round_tag=(), kind: str = BROADCAST_MODEL) -> list[np.ndarray]:
        """delivers an identical copy of x to every worker"""
        self._record(kind, [x], round_tag)
        self.worker_models = [np.array(x, copy=True) for _ in range(self.P)]
        return self.worker_models

    def complete_round(self):
        self.ledger.complete_round()

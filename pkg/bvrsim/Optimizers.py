"""Optimizer drivers on the simulated cluster.

run_bvr_l_psgd is the bias-variance reduced local perturbed SGD loop:
S epochs, each anchored at the exact aggregated gradient, T communication
rounds per epoch, and K perturbed local steps of one uniformly sampled
worker per round. The baselines (minibatch SGD, noisy minibatch SGD,
local SGD) and the special cases (minibatch SARAH, BVR-L-SGD) share the
same accounting so their traces can be compared round for round.
"""

import logging
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Optional

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field, model_validator

from bvrsim.Diagnostics import min_eigenvalue
from bvrsim.Estimators import (NonFiniteIterateError, LocalEstimator, ServerEstimator, check_finite,
                               local_step, perturbed_update, sample_ball, schedule_total, server_round_update)
from bvrsim.Oracle import CostLedger, full_local_gradient, full_minibatch, grad_pair, minibatch_gradient, sample_minibatch
from bvrsim.Problems import ContractViolation, OperatingRadiusError, Problem
from bvrsim.Settings import Settings
from bvrsim.SimNet import Cluster
from bvrsim.tools.rng import RngStream

logger = logging.getLogger(__name__)

CRITERIA = ('train_grad_norm', 'train_loss', 'train_accuracy', 'test_grad_norm', 'test_loss', 'test_accuracy')


class BudgetAccountingError(RuntimeError):
    """The measured gradient-cost ledger disagrees with the closed form"""


class RunConfig(BaseModel):
    """Parameters of one optimizer run"""
    model_config = ConfigDict(extra='forbid')

    eta: float = Field(gt=0)
    b: int = Field(ge=1)
    K: int = Field(ge=1)
    T: int = Field(ge=1)
    S: int = Field(ge=1)
    r: float = Field(default=0.0, ge=0)
    P: int = Field(ge=1)
    d: int = Field(ge=1)
    master_seed: int = Field(default=0, ge=0)
    budget_B: Optional[int] = Field(default=None, ge=1)
    record_every: int = Field(default=1, ge=1)
    checkpoint_every: int = Field(default=1, ge=0)
    full_batch: bool = False
    threads: int = Field(default=1, ge=1)
    track_lambda_min: bool = False
    enforce_operating_radius: bool = True
    start: str = 'default'
    notes: dict = Field(default_factory=dict)

    @model_validator(mode='after')
    def check_budget(self):
        if self.budget_B is not None and self.K * self.b > self.budget_B:
            raise ValueError(f"K*b = {self.K * self.b} exceeds the per-round budget budget_B = {self.budget_B}")
        return self

    @property
    def rounds(self) -> int:
        """headline communication rounds"""
        return self.T * self.S

    @property
    def local_budget(self) -> int:
        """samples per worker per round for the baselines"""
        return self.budget_B if self.budget_B is not None else self.K * self.b


@dataclass
class TraceRecord:
    round: int
    s: int
    t: int
    i: int
    train_grad_norm: float
    train_loss: float
    train_accuracy: float
    test_grad_norm: float
    test_loss: float
    test_accuracy: float
    lambda_min: float
    budget_units: int
    raw_grad_evals: int
    comm_events: int
    comm_rounds: int


@dataclass
class Trace:
    """
    Ordered records of one run plus the candidate iterates x_tilde kept for
    certification, as (global step index, vector) pairs.
    """
    algorithm: str
    config: RunConfig
    records: list[TraceRecord] = field(default_factory=list)
    checkpoints: list[tuple[int, np.ndarray]] = field(default_factory=list)
    status: str = 'completed'
    error: str = ''
    ledger: CostLedger = None
    cluster: Cluster = None

    def add_record(self, record: TraceRecord):
        if self.records and record.round <= self.records[-1].round:
            raise ValueError(f"trace rounds must increase, got {record.round} after {self.records[-1].round}")
        self.records.append(record)

    def add_checkpoint(self, i: int, x_tilde: np.ndarray):
        every = self.config.checkpoint_every
        if every and i % every == 0:
            self.checkpoints.append((i, np.array(x_tilde, copy=True)))

    @property
    def completed(self) -> bool:
        return self.status == 'completed'

    def final(self) -> TraceRecord:
        return self.records[-1]

    def to_frame(self) -> pd.DataFrame:
        columns = list(TraceRecord.__dataclass_fields__)
        return pd.DataFrame([vars(r) for r in self.records], columns=columns)

    def budget_per_round_per_worker(self) -> Fraction:
        """exact average of budget units per headline round and worker"""
        last = self.final()
        return Fraction(last.budget_units, self.config.P * max(last.comm_rounds, 1))


# ---------------------------------------------------------------------------
# closed-form accounting
# ---------------------------------------------------------------------------

def expected_budget_per_round(K: int, b: int, T: int, P: int, n: int) -> Fraction:
    """Kb + n/(PT) + (sum_k b_k)/P: server pairs, epoch anchor share and sampled-worker loop share"""
    return K * b + Fraction(n, P * T) + Fraction(schedule_total(K, b), P)


def expected_comm_events(T: int, S: int) -> int:
    return S * (1 + 2 * T)


def expected_epoch_budget(config: RunConfig, samples_per_worker: int) -> int:
    P, T, K, b, m = config.P, config.T, config.K, config.b, samples_per_worker
    if config.full_batch:
        return P * m + T * P * m + T * K * m
    return P * m + T * P * K * b + T * schedule_total(K, b)


# ---------------------------------------------------------------------------
# shared driver plumbing
# ---------------------------------------------------------------------------

class _Run:
    """state shared by every driver: problem, ledgers, trace and recording"""

    def __init__(self, algorithm: str, config: RunConfig, problem: Problem, cluster: Cluster = None):
        if config.d != problem.dim:
            raise ContractViolation(f"config.d={config.d} but the problem has dimension {problem.dim}")
        if config.P != problem.P:
            raise ContractViolation(f"config.P={config.P} but the problem has {problem.P} workers")
        self.config = config
        self.problem = problem
        self.ledger = CostLedger()
        self.cluster = cluster or Cluster(config.P, threads=config.threads)
        self.trace = Trace(algorithm, config, ledger=self.ledger, cluster=self.cluster)

    def stream(self, purpose: str, *indices) -> RngStream:
        return RngStream.for_key(self.config.master_seed, purpose, *indices)

    def initial_point(self, x0) -> np.ndarray:
        if x0 is None:
            x0 = self.problem.initial_point(self.config.master_seed, self.config.start)
        x0 = np.array(x0, dtype=float)
        self.problem.check_dim(x0)
        return x0

    def batch(self, p: int, m: int, stream: RngStream):
        dataset = self.problem.datasets[p]
        return full_minibatch(dataset) if self.config.full_batch else sample_minibatch(stream, dataset, m)

    def check_radius(self, x, where):
        if self.config.enforce_operating_radius:
            self.problem.check_operating_radius(x, where)

    def record(self, x: np.ndarray, s: int, t: int, i: int, last: bool = False):
        comm = self.cluster.ledger
        if not last and comm.rounds % self.config.record_every:
            return
        if self.trace.records and self.trace.records[-1].round == comm.rounds:
            return
        values = self.problem.criteria(x)
        if not self.problem.minimum_hint.holds(values['train_loss']):
            logger.warning(f"train loss {values['train_loss']:.6g} is below the known minimum "
                           f"{self.problem.minimum_hint.f_star:.6g} at round {comm.rounds}")
        lam = min_eigenvalue(self.problem, x)[0] if self.config.track_lambda_min else math.nan
        budget, raw = self.ledger.snapshot()
        self.trace.add_record(TraceRecord(
            round=comm.rounds, s=s, t=t, i=i, lambda_min=float(lam),
            budget_units=budget, raw_grad_evals=raw,
            comm_events=comm.total_events, comm_rounds=comm.rounds,
            **{name: float(values[name]) for name in CRITERIA}))

    def run_guarded(self, body: Callable[[], None]) -> Trace:
        logger.info(f"starting {self.trace.algorithm} on {self.problem} with eta={self.config.eta}, "
                    f"b={self.config.b}, K={self.config.K}, T={self.config.T}, S={self.config.S}, r={self.config.r}")
        try:
            body()
        except (NonFiniteIterateError, OperatingRadiusError, BudgetAccountingError) as e:
            self.trace.status = 'aborted'
            self.trace.error = f"{type(e).__name__}: {e}"
            logger.error(f"{self.trace.algorithm} aborted: {self.trace.error}")
        else:
            logger.info(f"finished {self.trace.algorithm}: {self.cluster.ledger.rounds} rounds, "
                        f"{self.ledger.budget_units} budget units")
        return self.trace


# ---------------------------------------------------------------------------
# bias-variance reduced local perturbed SGD
# ---------------------------------------------------------------------------

def run_bvr_l_psgd(config: RunConfig, problem: Problem, x0: np.ndarray = None, probe=None,
                   algorithm: str = 'bvr-l-psgd') -> Trace:
    """
    Runs S epochs of T rounds with K local steps each.
    :param x0: start point x_tilde_0, defaults to the problem's initial point
    :param probe: optional observer with observe(i, s, t, k, x, v, anchor), called before every local update
    :return: the trace, status 'aborted' with the diagnostic in trace.error on numerical failure
    """
    run = _Run(algorithm, config, problem)
    P, K, T, b, eta, r = config.P, config.K, config.T, config.b, config.eta, config.r
    cluster, ledger, trace = run.cluster, run.ledger, run.trace

    def body():
        x_tilde = run.initial_point(x0)
        x = x_tilde + eta * sample_ball(run.stream('init'), config.d, r).xi
        check_finite(x, 'start point')
        trace.add_checkpoint(0, x_tilde)
        run.record(x, 0, 0, 0, last=True)
        epoch_budget = expected_epoch_budget(config, problem.samples_per_worker)

        for s in range(config.S):
            epoch_start = ledger.budget_units
            anchor = x
            ledger.open_round((s, 'anchor'))
            local_full = cluster.map_workers(lambda p: full_local_gradient(problem, p, x, ledger))
            server = ServerEstimator(v=cluster.gather_average(local_full, (s, 0, 'anchor')), anchor_x=x, t_index=0)
            check_finite(server.v, 'anchor gradient', (s, 0, -1))

            for t in range(T):
                ledger.open_round((s, t))

                def server_pair(p, x=x, server=server, t=t):
                    batch = run.batch(p, K * b, run.stream('server', p, s, t))
                    return grad_pair(problem, batch, x, server.anchor_x, ledger)

                pairs = cluster.map_workers(server_pair)
                server = server_round_update(server, pairs, x, t, local_full=local_full if t == 0 else None,
                                             average=lambda c, t=t: cluster.gather_average(c, (s, t, 'server')))

                selected = int(run.stream('select', s, t).integers(0, P))
                local_stream = run.stream('local', s, t)
                local = LocalEstimator.start(server, x)
                for k in range(K):
                    i = k + K * t + K * T * s
                    local, _ = local_step(local, problem, selected, k, x, b, K, ledger, local_stream,
                                          full_batch=config.full_batch, indices=(s, t, k))
                    if probe is not None:
                        probe.observe(i=i, s=s, t=t, k=k, x=x, v=local.v, anchor=anchor)
                    x_tilde, x = perturbed_update(x, local.v, eta, r, run.stream('ball', s, t, k), (s, t, k))
                    trace.add_checkpoint(i + 1, x_tilde)
                    run.check_radius(x, f"at (s={s}, t={t}, k={k})")

                cluster.broadcast(x, (s, t, 'model'))
                cluster.complete_round()
                run.record(x, s, t, K * (T * s + t + 1), last=(s == config.S - 1 and t == T - 1))

            spent = ledger.budget_units - epoch_start
            logger.debug(f"epoch {s}: {spent} budget units, {ledger.raw_grad_evals} raw evaluations so far")
            if spent != epoch_budget:
                raise BudgetAccountingError(f"epoch {s} used {spent} budget units, expected {epoch_budget}")

    return run.run_guarded(body)


def run_bvr_l_sgd(config: RunConfig, problem: Problem, x0: np.ndarray = None, probe=None) -> Trace:
    """the unperturbed variant, r = 0"""
    return run_bvr_l_psgd(config.model_copy(update={'r': 0.0}), problem, x0, probe, algorithm='bvr-l-sgd')


def run_minibatch_sarah(config: RunConfig, problem: Problem, x0: np.ndarray = None, probe=None) -> Trace:
    """one local step and no perturbation, K = 1 and r = 0"""
    return run_bvr_l_psgd(config.model_copy(update={'K': 1, 'r': 0.0}), problem, x0, probe,
                          algorithm='minibatch-sarah')


# ---------------------------------------------------------------------------
# baselines
# ---------------------------------------------------------------------------

def _run_server_sgd(config: RunConfig, problem: Problem, x0, algorithm: str, noisy: bool) -> Trace:
    run = _Run(algorithm, config, problem)
    cluster, trace = run.cluster, run.trace
    m = config.local_budget

    def body():
        x = run.initial_point(x0)
        trace.add_checkpoint(0, x)
        run.record(x, 0, 0, 0, last=True)
        for j in range(config.rounds):
            s, t = divmod(j, config.T)
            run.ledger.open_round((s, t))

            def worker_gradient(p, x=x, j=j):
                batch = run.batch(p, m, run.stream('baseline', p, j, 0))
                return minibatch_gradient(problem, batch, x, run.ledger)

            g = cluster.gather_average(cluster.map_workers(worker_gradient), (s, t, 'gradient'))
            check_finite(g, 'averaged gradient', (s, t, -1))
            x_tilde = x - config.eta * g
            if noisy and config.r > 0:
                x = x_tilde + config.eta * sample_ball(run.stream('baseline_ball', j), config.d, config.r).xi
            else:
                x = x_tilde
            check_finite(x, 'iterate', (s, t, -1))
            trace.add_checkpoint(j + 1, x_tilde)
            run.check_radius(x, f"at round {j}")
            cluster.broadcast(x, (s, t, 'model'))
            cluster.complete_round()
            run.record(x, s, t, j + 1, last=(j == config.rounds - 1))

    return run.run_guarded(body)


def run_minibatch_sgd(config: RunConfig, problem: Problem, x0: np.ndarray = None, probe=None) -> Trace:
    """every worker spends the whole per-round budget on one minibatch gradient at the shared point"""
    return _run_server_sgd(config, problem, x0, 'minibatch-sgd', noisy=False)


def run_noisy_minibatch_sgd(config: RunConfig, problem: Problem, x0: np.ndarray = None, probe=None) -> Trace:
    """minibatch SGD plus a server-side ball perturbation eta*xi after every step"""
    return _run_server_sgd(config, problem, x0, 'noisy-minibatch-sgd', noisy=True)


def run_local_sgd(config: RunConfig, problem: Problem, x0: np.ndarray = None, probe=None) -> Trace:
    """every worker runs budget/b local SGD steps with batch b; the server averages the local models"""
    run = _Run('local-sgd', config, problem)
    cluster, trace = run.cluster, run.trace
    steps = max(1, config.local_budget // config.b)

    def body():
        x = run.initial_point(x0)
        trace.add_checkpoint(0, x)
        run.record(x, 0, 0, 0, last=True)
        for j in range(config.rounds):
            s, t = divmod(j, config.T)
            run.ledger.open_round((s, t))

            def local_model(p, x=x, j=j):
                stream = run.stream('baseline', p, j, 0)
                x_p = x
                for k in range(steps):
                    batch = run.batch(p, config.b, stream)
                    x_p = x_p - config.eta * minibatch_gradient(problem, batch, x_p, run.ledger)
                    check_finite(x_p, f"local model of worker {p}", (s, t, k))
                return x_p

            x = cluster.gather_average(cluster.map_workers(local_model), (s, t, 'models'))
            trace.add_checkpoint(j + 1, x)
            run.check_radius(x, f"at round {j}")
            cluster.broadcast(x, (s, t, 'model'))
            cluster.complete_round()
            run.record(x, s, t, j + 1, last=(j == config.rounds - 1))

    return run.run_guarded(body)


ALGORITHMS = {
    'bvr-l-psgd': run_bvr_l_psgd,
    'bvr-l-sgd': run_bvr_l_sgd,
    'minibatch-sarah': run_minibatch_sarah,
    'minibatch-sgd': run_minibatch_sgd,
    'noisy-minibatch-sgd': run_noisy_minibatch_sgd,
    'local-sgd': run_local_sgd,
}
PERTURBED = ('bvr-l-psgd', 'noisy-minibatch-sgd')


def run_algorithm(name: str, config: RunConfig, problem: Problem, x0: np.ndarray = None, probe=None) -> Trace:
    try:
        driver = ALGORITHMS[name]
    except KeyError:
        raise ContractViolation(f"unknown algorithm '{name}', expected one of {sorted(ALGORITHMS)}")
    return driver(config, problem, x0, probe)


# ---------------------------------------------------------------------------
# hyperparameters
# ---------------------------------------------------------------------------

def recommend_hyperparameters(L: float, zeta: float, rho: float, G: float, eps: float, budget_B: int, P: int,
                              n: int, f_gap: float, d: int = 1, K: int = None, b: int = None,
                              master_seed: int = 0, c_eta: float = None, c_r: float = None) -> RunConfig:
    """
    Step size, batch sizes, rounds and noise radius following the shapes of the
    convergence guarantee. Hidden constants are the C_ETA_IMPL and C_R_IMPL settings.
    :param K: override of the number of local steps (default floor(budget_B / b))
    :param b: override of the base batch (default ceil(sqrt(budget_B)))
    :return: a RunConfig; notes['batch_lower_bound_violated'] flags a base batch below max(K, 1/(sqrt(K) rho eps), T/(PK))
    """
    if budget_B < 1:
        raise ContractViolation(f"budget_B must be at least 1, got {budget_B}")
    for name, value in (('L', L), ('rho', rho), ('eps', eps), ('P', P), ('n', n)):
        if not value > 0:
            raise ContractViolation(f"{name} must be positive, got {value}")
    if zeta < 0 or f_gap < 0 or G < 0:
        raise ContractViolation(f"zeta, G and f_gap must be nonnegative, got {zeta}, {G}, {f_gap}")
    settings = Settings()
    c_eta = settings.C_ETA_IMPL if c_eta is None else c_eta
    c_r = settings.C_R_IMPL if c_r is None else c_r

    T = math.ceil(1 + n / (budget_B * P))
    b = b or math.ceil(math.sqrt(budget_B))
    K = K or max(1, budget_B // b)
    heterogeneity = 1.0 / (K * zeta) if zeta > 0 else math.inf
    eta = c_eta * min(1.0 / L, heterogeneity, math.sqrt(b / K) / L, math.sqrt(P * b) / (math.sqrt(K * T) * L))
    r = c_r * eps
    S = math.ceil(1 + f_gap / (eta * K * T * eps ** 2))

    lower_bound = max(K, 1.0 / (math.sqrt(K) * rho * eps), T / (P * K))
    notes = {'G': G, 'eps': eps, 'b_lower_bound': lower_bound, 'batch_lower_bound_violated': b < lower_bound}
    if b < lower_bound:
        logger.warning(f"base batch b={b} is below the recommended lower bound {lower_bound:.4g}")
    logger.info(f"recommended eta={eta:.4g}, b={b}, K={K}, T={T}, S={S}, r={r:.4g}")
    return RunConfig(eta=eta, b=b, K=K, T=T, S=S, r=r, P=P, d=d, master_seed=master_seed,
                     budget_B=budget_B, notes=notes)

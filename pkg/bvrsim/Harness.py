"""Experiment orchestration: declarative configs, grid x trial execution,
result tables, tuning and the files a run leaves behind.

Output files of a run directory:
    raw.csv             one row per (algorithm, eta, r, trial, restart, round)
    agg.csv             mean and std over trials and restarts per (algorithm, eta, r, round)
    plot_<criterion>.csv  (algorithm, round, mean, std) at the selected grid points
    selection.json      chosen grid point per algorithm
    manifest.json       config, its hash, seeds and package versions
    sosp_reports.json   certification reports, certify.csv one summary row per run
    checkpoints/*.npz   candidate iterates per run
"""

import hashlib
import json
import logging
import math
import os
import platform
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass, field
from typing import Literal, Optional

import numpy as np
import pandas as pd
import pydantic
import scipy
import yaml
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator
from tqdm import tqdm

import bvrsim
from bvrsim.Diagnostics import DeviationProbe, scan_history_for_sosp
from bvrsim.Optimizers import ALGORITHMS, CRITERIA, PERTURBED, RunConfig, Trace, TraceRecord, recommend_hyperparameters, run_algorithm
from bvrsim.Problems import (QUARTIC_SADDLE, Problem, build_mlp_softplus,
                             build_quartic_saddle, build_softmax_regression)
from bvrsim.Settings import Settings
from bvrsim.tools.rng import derive_seed

logger = logging.getLogger(__name__)

DEFAULT_ETA_GRID = [0.005, 0.01, 0.05, 0.1, 0.5, 1.0]
DEFAULT_R_GRID = [0.5, 2.5, 12.5]
MAX_MIN_TRAIN_ACCURACY = 'max-min-train-accuracy'
MIN_FINAL_TRAIN_LOSS = 'min-final-train-loss'
RUN_KEYS = ['algorithm', 'eta', 'r', 'trial', 'restart']
RAW_COLUMNS = RUN_KEYS + ['seed', 'status', 'error'] + list(TraceRecord.__dataclass_fields__)
LEDGER_COLUMNS = ['budget_units', 'raw_grad_evals', 'comm_events', 'comm_rounds']


class ProblemSpec(BaseModel):
    """Which objective to build; the data seed is fixed for the whole experiment"""
    model_config = ConfigDict(extra='forbid')

    kind: Literal['quartic-saddle', 'softmax-regression', 'mlp-softplus'] = QUARTIC_SADDLE
    seed: int = Field(default=0, ge=0)
    P: int = Field(default=4, ge=1)
    #quartic-saddle
    d: int = Field(default=20, ge=2)
    lambda_neg: float = Field(default=1.0, gt=0)
    gamma: float = Field(default=1.0, gt=0)
    zeta: float = Field(default=0.0, ge=0)
    samples_per_worker: Optional[int] = Field(default=None, ge=1)
    #classification
    n: int = Field(default=1024, ge=1)
    n_classes: int = Field(default=4, ge=2)
    n_features: int = Field(default=10, ge=1)
    q: float = Field(default=0.35, ge=0, le=1)
    hidden: int = Field(default=16, ge=1)
    separation: float = Field(default=3.0, gt=0)

    def build(self) -> Problem:
        match self.kind:
            case 'quartic-saddle':
                return build_quartic_saddle(self.d, self.P, self.lambda_neg, self.gamma, self.zeta, self.seed,
                                            samples_per_worker=self.samples_per_worker)
            case 'softmax-regression':
                return build_softmax_regression(self.n, self.P, self.n_classes, self.n_features, self.q, self.seed,
                                                separation=self.separation)
            case 'mlp-softplus':
                return build_mlp_softplus(self.n, self.P, self.n_classes, self.n_features, self.q, self.seed,
                                          hidden=self.hidden, separation=self.separation)


class RunSpec(BaseModel):
    """RunConfig fields shared by all grid points; S defaults to ceil(rounds_budget / T)"""
    model_config = ConfigDict(extra='forbid')

    b: int = Field(default=16, ge=1)
    K: int = Field(default=64, ge=1)
    T: int = Field(default=1, ge=1)
    S: Optional[int] = Field(default=None, ge=1)
    budget_B: Optional[int] = Field(default=None, ge=1)
    record_every: int = Field(default=1, ge=1)
    checkpoint_every: int = Field(default=0, ge=0)
    full_batch: bool = False
    track_lambda_min: bool = False
    enforce_operating_radius: bool = True
    start: str = 'default'
    probe: bool = False


class TuningSpec(BaseModel):
    model_config = ConfigDict(extra='forbid')

    eta_grid: list[float] = Field(default_factory=lambda: list(DEFAULT_ETA_GRID), min_length=1)
    r_grid: list[float] = Field(default_factory=lambda: list(DEFAULT_R_GRID), min_length=1)
    selection_rule: Literal['max-min-train-accuracy', 'min-final-train-loss'] = MAX_MIN_TRAIN_ACCURACY

    @field_validator('eta_grid')
    @classmethod
    def positive_steps(cls, values):
        if any(v <= 0 for v in values):
            raise ValueError("every step size must be positive")
        return sorted(set(values))

    @field_validator('r_grid')
    @classmethod
    def nonnegative_radii(cls, values):
        if any(v < 0 for v in values):
            raise ValueError("every noise radius must be nonnegative")
        return sorted(set(values))


class RecommendSpec(BaseModel):
    """replaces the grids by the recommended step size and radius for target accuracy eps"""
    model_config = ConfigDict(extra='forbid')

    eps: float = Field(gt=0)
    f_gap: Optional[float] = Field(default=None, ge=0)
    budget_B: Optional[int] = Field(default=None, ge=1)


class CertifySpec(BaseModel):
    model_config = ConfigDict(extra='forbid')

    eps: float = Field(gt=0)
    rho: Optional[float] = Field(default=None, gt=0)


class OutputSpec(BaseModel):
    model_config = ConfigDict(extra='forbid')

    dir: Optional[str] = None
    save_checkpoints: bool = False


class ExperimentConfig(BaseModel):
    model_config = ConfigDict(extra='forbid')

    name: str = 'experiment'
    problem: ProblemSpec = Field(default_factory=ProblemSpec)
    algorithms: list[str] = Field(min_length=1)
    run: RunSpec = Field(default_factory=RunSpec)
    tuning: TuningSpec = Field(default_factory=TuningSpec)
    recommend: Optional[RecommendSpec] = None
    certify: Optional[CertifySpec] = None
    n_trials: int = Field(default=5, ge=1)
    restarts: int = Field(default=1, ge=1)
    master_seed: int = Field(default=0, ge=0)
    rounds_budget: int = Field(default_factory=lambda: Settings().ROUNDS_BUDGET, ge=1)
    threads: int = Field(default_factory=lambda: Settings().THREADS, ge=1)
    output: OutputSpec = Field(default_factory=OutputSpec)

    @field_validator('algorithms')
    @classmethod
    def known_algorithms(cls, values):
        unknown = [v for v in values if v not in ALGORITHMS]
        if unknown:
            raise ValueError(f"unknown algorithms {unknown}, expected some of {sorted(ALGORITHMS)}")
        if len(set(values)) != len(values):
            raise ValueError("algorithms must not repeat")
        return values

    @model_validator(mode='after')
    def check_budget(self):
        if self.run.budget_B is not None and self.run.K * self.run.b > self.run.budget_B:
            raise ValueError(f"run.K * run.b = {self.run.K * self.run.b} exceeds run.budget_B = {self.run.budget_B}")
        return self

    def config_hash(self) -> str:
        canonical = json.dumps(self.model_dump(mode='json'), sort_keys=True)
        return hashlib.sha256(canonical.encode('utf-8')).hexdigest()


# ---------------------------------------------------------------------------
# config files
# ---------------------------------------------------------------------------

def apply_overrides(raw: dict, overrides: list[str]) -> dict:
    """applies 'a.b.c=value' overrides, values parsed as YAML scalars"""
    for override in overrides or []:
        key, sep, value = override.partition('=')
        if not sep or not key.strip():
            raise ValueError(f"override '{override}' is not of the form key=value")
        node = raw
        parts = key.strip().split('.')
        for part in parts[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ValueError(f"override '{override}': '{part}' is not a section")
        node[parts[-1]] = yaml.safe_load(value)
    return raw


def load_config(path: str, overrides: list[str] = None) -> ExperimentConfig:
    """
    Reads a YAML experiment file.
    :raises yaml.YAMLError: syntax errors, with line information
    :raises pydantic.ValidationError: invalid fields, with their location
    """
    with open(path, 'r', encoding='utf-8') as file:
        raw = yaml.safe_load(file) or {}
    if not isinstance(raw, dict):
        raise ValueError(f"{path}: the top level of an experiment file must be a mapping")
    return ExperimentConfig.model_validate(apply_overrides(raw, overrides))


def describe_validation_error(error: pydantic.ValidationError) -> list[str]:
    return [f"{'.'.join(str(part) for part in e['loc']) or '<root>'}: {e['msg']}" for e in error.errors()]


# ---------------------------------------------------------------------------
# grid expansion
# ---------------------------------------------------------------------------

@dataclass(frozen=True, order=True)
class GridPoint:
    algorithm: str
    eta: float
    r: float


@dataclass(frozen=True)
class RunJob:
    order: int
    point: GridPoint
    trial: int
    restart: int
    seed: int
    config: RunConfig


def resolve_run_settings(config: ExperimentConfig, problem: Problem) -> tuple[dict, list[float], list[float]]:
    """the shared RunConfig fields plus the step size and radius grids, after an optional recommendation"""
    run = config.run
    fields = dict(b=run.b, K=run.K, T=run.T, budget_B=run.budget_B, record_every=run.record_every,
                  checkpoint_every=run.checkpoint_every, full_batch=run.full_batch,
                  track_lambda_min=run.track_lambda_min, enforce_operating_radius=run.enforce_operating_radius,
                  start=run.start)
    if not run.checkpoint_every and (config.certify is not None or config.output.save_checkpoints):
        fields['checkpoint_every'] = 1
    eta_grid, r_grid = config.tuning.eta_grid, config.tuning.r_grid
    if config.recommend is not None:
        c = problem.constants
        x0 = problem.initial_point(config.master_seed, run.start)
        f_gap = config.recommend.f_gap
        if f_gap is None:
            f_gap = max(problem.full_loss(x0) - problem.minimum_hint.f_star, 0.0)
        budget = config.recommend.budget_B or run.budget_B or run.K * run.b
        recommended = recommend_hyperparameters(c.L, c.zeta, c.rho, c.G, config.recommend.eps, budget, problem.P,
                                                problem.n, f_gap, d=problem.dim, K=run.K, b=run.b)
        fields.update(T=recommended.T, budget_B=budget)
        eta_grid, r_grid = [recommended.eta], [recommended.r]
    fields['S'] = run.S or math.ceil(config.rounds_budget / fields['T'])
    return fields, eta_grid, r_grid


def expand_grid(config: ExperimentConfig, problem: Problem) -> list[RunJob]:
    """algorithm x eta x r x trial x restart; unperturbed algorithms only get r = 0"""
    fields, eta_grid, r_grid = resolve_run_settings(config, problem)
    jobs = []
    for algorithm in config.algorithms:
        radii = r_grid if algorithm in PERTURBED else [0.0]
        for eta in eta_grid:
            for r in radii:
                point = GridPoint(algorithm, float(eta), float(r))
                for trial in range(config.n_trials):
                    for restart in range(config.restarts):
                        seed = derive_seed(config.master_seed, trial, restart)
                        run_config = RunConfig(eta=eta, r=r, P=problem.P, d=problem.dim, master_seed=seed, **fields)
                        jobs.append(RunJob(len(jobs), point, trial, restart, seed, run_config))
    return jobs


# ---------------------------------------------------------------------------
# results
# ---------------------------------------------------------------------------

@dataclass
class RunResult:
    job: RunJob
    trace: Optional[Trace] = None
    error: str = ''
    deviation: Optional[pd.DataFrame] = None

    @property
    def status(self) -> str:
        if self.trace is None:
            return 'failed'
        return self.trace.status

    def rows(self) -> list[dict]:
        key = {'algorithm': self.job.point.algorithm, 'eta': self.job.point.eta, 'r': self.job.point.r,
               'trial': self.job.trial, 'restart': self.job.restart, 'seed': self.job.seed,
               'status': self.status, 'error': self.error or (self.trace.error if self.trace else '')}
        if self.trace is None or not self.trace.records:
            return [dict(key)]
        return [dict(key, **vars(record)) for record in self.trace.records]


class ResultTable:
    """Raw per-round rows of every run; aggregates are always recomputed from them"""

    def __init__(self, raw: pd.DataFrame):
        self.raw = raw.reindex(columns=RAW_COLUMNS)

    @classmethod
    def from_results(cls, results: list[RunResult]) -> "ResultTable":
        rows = [row for result in results for row in result.rows()]
        return cls(pd.DataFrame(rows, columns=RAW_COLUMNS))

    @classmethod
    def read_csv(cls, path: str) -> "ResultTable":
        return cls(pd.read_csv(path, keep_default_na=True).fillna({'error': ''}))

    @property
    def completed(self) -> pd.DataFrame:
        frame = self.raw[self.raw['status'] == 'completed']
        return frame.astype({'round': int})

    @property
    def failures(self) -> pd.DataFrame:
        failed = self.raw[self.raw['status'] != 'completed']
        return failed.drop_duplicates(subset=RUN_KEYS)

    def aggregate(self) -> pd.DataFrame:
        """mean and population std over trials and restarts per (algorithm, eta, r, round)"""
        columns = list(CRITERIA) + ['lambda_min'] + LEDGER_COLUMNS
        grouped = self.completed.groupby(['algorithm', 'eta', 'r', 'round'], sort=True)[columns]
        mean = grouped.mean().add_suffix('_mean')
        std = grouped.std(ddof=0).add_suffix('_std')
        count = grouped.size().rename('n_runs')
        ordered = [f"{c}_{stat}" for c in columns for stat in ('mean', 'std')]
        return pd.concat([mean, std], axis=1)[ordered].join(count).reset_index()

    def write_csv(self, path: str):
        self.raw.to_csv(path, index=False, float_format=Settings().FLOAT_FORMAT, encoding='utf-8')


def tune_select(results: ResultTable, rule: str = MAX_MIN_TRAIN_ACCURACY) -> dict[str, GridPoint]:
    """
    Chooses one grid point per algorithm.
    max-min-train-accuracy: maximise the minimum over rounds of the trial-mean train accuracy;
    min-final-train-loss: minimise the trial-mean train loss of the last round.
    Ties go to the smaller eta, then the smaller r. Without accuracy values the
    loss rule is used. A grid point with an aborted or failed run is never selected.
    """
    agg = results.aggregate()
    if rule == MAX_MIN_TRAIN_ACCURACY and agg['train_accuracy_mean'].isna().all():
        logger.info("no train accuracy in the results, selecting by minimum final train loss instead")
        rule = MIN_FINAL_TRAIN_LOSS
    failed = results.failures
    disqualified = set(zip(failed['algorithm'], failed['eta'], failed['r']))
    selection = {}
    for algorithm, frame in agg.groupby('algorithm', sort=False):
        candidates = []
        for (eta, r), point in frame.groupby(['eta', 'r']):
            if (algorithm, eta, r) in disqualified:
                logger.info(f"skipping eta={eta}, r={r} for {algorithm}: not every run completed")
                continue
            if rule == MAX_MIN_TRAIN_ACCURACY:
                score = -point['train_accuracy_mean'].min()
            else:
                score = point.sort_values('round')['train_loss_mean'].iloc[-1]
            if not np.isnan(score):
                candidates.append((score, eta, r))
        if not candidates:
            logger.warning(f"no usable grid point for {algorithm}")
            continue
        score, eta, r = min(candidates)
        selection[algorithm] = GridPoint(algorithm, float(eta), float(r))
        logger.info(f"selected eta={eta}, r={r} for {algorithm} ({rule})")
    return {a: selection[a] for a in results.raw['algorithm'].drop_duplicates() if a in selection}


def emit_plot_data(results: ResultTable, out_dir: str = None, selection: dict = None) -> dict[str, pd.DataFrame]:
    """one long-format frame per criterion with columns (algorithm, round, mean, std)"""
    selection = selection if selection is not None else tune_select(results)
    agg = results.aggregate()
    chosen = pd.concat([agg[(agg['algorithm'] == p.algorithm) & (agg['eta'] == p.eta) & (agg['r'] == p.r)]
                        for p in selection.values()]) if selection else agg.iloc[0:0]
    frames = {}
    for criterion in CRITERIA:
        frame = chosen[['algorithm', 'round', f"{criterion}_mean", f"{criterion}_std"]]
        frame = frame.rename(columns={f"{criterion}_mean": 'mean', f"{criterion}_std": 'std'}).reset_index(drop=True)
        frames[criterion] = frame
        if out_dir:
            frame.to_csv(os.path.join(out_dir, f"plot_{criterion}.csv"), index=False,
                         float_format=Settings().FLOAT_FORMAT, encoding='utf-8')
    return frames


# ---------------------------------------------------------------------------
# execution
# ---------------------------------------------------------------------------

@dataclass
class ExperimentResult:
    config: ExperimentConfig
    problem: Problem
    results: list[RunResult]
    table: ResultTable = None
    sosp_reports: list[dict] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return all(result.status == 'completed' for result in self.results)


def execute_job(job: RunJob, problem: Problem, probe: bool = False) -> RunResult:
    observer = DeviationProbe(problem, job.config.b) if probe and job.point.algorithm.startswith('bvr') else None
    try:
        trace = run_algorithm(job.point.algorithm, job.config, problem, probe=observer)
    except Exception as e:
        logger.error(f"run {job.point} trial {job.trial} restart {job.restart} failed: {e}")
        return RunResult(job, error=f"{type(e).__name__}: {e}")
    return RunResult(job, trace, deviation=observer.to_frame() if observer else None)


def run_experiment(config: ExperimentConfig, threads: int = None, progress: bool = True) -> ExperimentResult:
    """Runs every grid point, trial and restart on a thread pool; results come back in grid order"""
    problem = config.problem.build()
    jobs = expand_grid(config, problem)
    threads = threads or config.threads
    logger.info(f"running {len(jobs)} runs of '{config.name}' on {threads} thread(s)")
    results = []
    with ThreadPoolExecutor(max_workers=threads) as executor:
        futures = [executor.submit(execute_job, job, problem, config.run.probe) for job in jobs]
        for future in tqdm(as_completed(futures), total=len(futures), desc="Runs", unit="run", disable=not progress):
            results.append(future.result())
    results.sort(key=lambda result: result.job.order)
    experiment = ExperimentResult(config, problem, results, ResultTable.from_results(results))
    if config.certify is not None:
        experiment.sosp_reports = certify_results(experiment, config.certify.eps, config.certify.rho)
    return experiment


def certify_results(experiment: ExperimentResult, eps: float, rho: float = None) -> list[dict]:
    rho = rho or experiment.problem.constants.rho
    return [certify_checkpoints(experiment.problem, result.job, result.trace.checkpoints, eps, rho)
            for result in experiment.results if result.trace is not None]


def certify_checkpoints(problem: Problem, job: RunJob, checkpoints, eps: float, rho: float) -> dict:
    found, index, report = scan_history_for_sosp(checkpoints, problem, eps, rho)
    return {'algorithm': job.point.algorithm, 'eta': job.point.eta, 'r': job.point.r, 'trial': job.trial,
            'restart': job.restart, 'found': found, 'index': index, 'n_checkpoints': len(checkpoints),
            'report': report.to_dict() if report else None}


def checkpoint_name(job: RunJob) -> str:
    p = job.point
    return f"{p.algorithm}_eta{p.eta:g}_r{p.r:g}_trial{job.trial}_restart{job.restart}.npz"


def package_versions() -> dict:
    return {'bvrsim': bvrsim.__version__, 'numpy': np.__version__, 'scipy': scipy.__version__,
            'pandas': pd.__version__, 'pydantic': pydantic.__version__, 'python': platform.python_version()}


def write_outputs(experiment: ExperimentResult, out_dir: str) -> list[str]:
    """writes the result files of an experiment into out_dir and returns their paths"""
    os.makedirs(out_dir, exist_ok=True)
    settings = Settings()
    written = []

    def path(name):
        written.append(os.path.join(out_dir, name))
        return written[-1]

    table = experiment.table
    table.write_csv(path('raw.csv'))
    table.aggregate().to_csv(path('agg.csv'), index=False, float_format=settings.FLOAT_FORMAT, encoding='utf-8')

    if experiment.config.output.save_checkpoints:
        os.makedirs(os.path.join(out_dir, 'checkpoints'), exist_ok=True)
        for result in experiment.results:
            if result.trace is None or not result.trace.checkpoints:
                continue
            indices = np.array([i for i, _ in result.trace.checkpoints])
            points = np.stack([x for _, x in result.trace.checkpoints])
            np.savez_compressed(path(os.path.join('checkpoints', checkpoint_name(result.job))),
                                indices=indices, points=points)

    for result in experiment.results:
        if result.deviation is not None:
            name = checkpoint_name(result.job).replace('.npz', '.csv')
            result.deviation.to_csv(path(f"deviation_{name}"), index=False, float_format=settings.FLOAT_FORMAT)

    if experiment.sosp_reports:
        write_sosp_reports(experiment.sosp_reports, out_dir, path)

    config = experiment.config
    manifest = {
        'name': config.name,
        'config': config.model_dump(mode='json'),
        'config_sha256': config.config_hash(),
        'master_seed': config.master_seed,
        'seeds': [{'trial': t, 'restart': k, 'seed': derive_seed(config.master_seed, t, k)}
                  for t in range(config.n_trials) for k in range(config.restarts)],
        'problem': repr(experiment.problem),
        'failed_runs': sum(result.status != 'completed' for result in experiment.results),
        'versions': package_versions(),
    }
    manifest_path = path('manifest.json')
    manifest['files'] = [os.path.relpath(p, out_dir) for p in written]
    with open(manifest_path, 'w', encoding='utf-8') as file:
        json.dump(manifest, file, indent=2)
    logger.info(f"wrote {len(written)} files to {out_dir}")
    return written


def write_sosp_reports(reports: list[dict], out_dir: str, path=None):
    path = path or (lambda name: os.path.join(out_dir, name))
    with open(path('sosp_reports.json'), 'w', encoding='utf-8') as file:
        json.dump(reports, file, indent=2)
    summary = pd.DataFrame([{k: v for k, v in report.items() if k != 'report'} for report in reports])
    summary.to_csv(path('certify.csv'), index=False, encoding='utf-8')


def write_tuning(table: ResultTable, out_dir: str, rule: str) -> dict[str, GridPoint]:
    selection = tune_select(table, rule)
    with open(os.path.join(out_dir, 'selection.json'), 'w', encoding='utf-8') as file:
        json.dump({a: {'eta': p.eta, 'r': p.r} for a, p in selection.items()}, file, indent=2)
    emit_plot_data(table, out_dir, selection)
    return selection


def compare_selected(table: ResultTable, selection: dict[str, GridPoint]) -> pd.DataFrame:
    """final-round means of the six criteria at the selected grid point of every algorithm"""
    agg = table.aggregate()
    rows = []
    for algorithm, point in selection.items():
        frame = agg[(agg['algorithm'] == algorithm) & (agg['eta'] == point.eta) & (agg['r'] == point.r)]
        last = frame.sort_values('round').iloc[-1]
        rows.append({'algorithm': algorithm, 'eta': point.eta, 'r': point.r, 'round': int(last['round']),
                     **{c: last[f"{c}_mean"] for c in CRITERIA}})
    return pd.DataFrame(rows)


def load_manifest_config(manifest_path: str) -> ExperimentConfig:
    with open(manifest_path, 'r', encoding='utf-8') as file:
        manifest = json.load(file)
    config = ExperimentConfig.model_validate(manifest['config'])
    if config.config_hash() != manifest.get('config_sha256'):
        logger.warning(f"{manifest_path}: config hash does not match the stored one")
    return config


def certify_saved(out_dir: str, eps: float, rho: float = None) -> list[dict]:
    """re-scans the checkpoints saved in a result directory without re-running"""
    config = load_manifest_config(os.path.join(out_dir, 'manifest.json'))
    problem = config.problem.build()
    rho = rho or problem.constants.rho
    reports = []
    for job in expand_grid(config, problem):
        name = os.path.join(out_dir, 'checkpoints', checkpoint_name(job))
        if not os.path.exists(name):
            continue
        with np.load(name) as saved:
            checkpoints = list(zip(saved['indices'].tolist(), saved['points']))
        reports.append(certify_checkpoints(problem, job, checkpoints, eps, rho))
    if not reports:
        logger.warning(f"no saved checkpoints found in {out_dir}")
    else:
        write_sosp_reports(reports, out_dir)
    return reports

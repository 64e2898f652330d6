import json
import math
import os

import numpy as np
import pandas as pd
import pydantic
import pytest
import yaml

import BVRExperiment
from bvrsim import Harness
from bvrsim.Harness import ExperimentConfig, GridPoint, ResultTable
from bvrsim.tools.rng import derive_seed


def tiny_config(**updates) -> dict:
    raw = {
        'name': 'tiny',
        'master_seed': 3,
        'n_trials': 2,
        'rounds_budget': 4,
        'threads': 1,
        'problem': {'kind': 'quartic-saddle', 'd': 4, 'P': 2, 'zeta': 0.2, 'samples_per_worker': 8},
        'algorithms': ['bvr-l-psgd', 'minibatch-sgd'],
        'run': {'b': 2, 'K': 4, 'T': 2, 'budget_B': 8},
        'tuning': {'eta_grid': [0.05, 0.01], 'r_grid': [0.01], 'selection_rule': 'min-final-train-loss'},
    }
    raw.update(updates)
    return raw


def write_yaml(tmp_path, raw, name='experiment.yaml') -> str:
    path = os.path.join(tmp_path, name)
    with open(path, 'w', encoding='utf-8') as file:
        yaml.safe_dump(raw, file)
    return path


def hand_table(rows: list[dict]) -> ResultTable:
    defaults = {'r': 0.0, 'restart': 0, 'seed': 0, 'status': 'completed', 'error': ''}
    return ResultTable(pd.DataFrame([dict(defaults, **row) for row in rows]))


def read_bytes(path):
    with open(path, 'rb') as file:
        return file.read()


class TestConfig:

    def testOverrides(self):
        raw = Harness.apply_overrides({'run': {'K': 4}}, ['run.K=16', 'problem.zeta=0.5', 'name=x', 'run.full_batch=true'])
        assert raw == {'run': {'K': 16, 'full_batch': True}, 'problem': {'zeta': 0.5}, 'name': 'x'}
        with pytest.raises(ValueError):
            Harness.apply_overrides({}, ['run.K'])
        with pytest.raises(ValueError):
            Harness.apply_overrides({'run': {'K': 4}}, ['run.K.x=1'])

    def testLoadConfig(self, tmp_path):
        config = Harness.load_config(write_yaml(tmp_path, tiny_config()), ['run.K=3'])
        assert config.run.K == 3
        assert config.tuning.eta_grid == [0.01, 0.05]
        assert config.config_hash() != Harness.load_config(write_yaml(tmp_path, tiny_config())).config_hash()

    def testValidationMessages(self, tmp_path):
        raw = tiny_config()
        raw['run']['batch'] = 7
        with pytest.raises(pydantic.ValidationError) as info:
            Harness.load_config(write_yaml(tmp_path, raw))
        assert any(line.startswith('run.batch') for line in Harness.describe_validation_error(info.value))

    @pytest.mark.parametrize('update', [{'algorithms': []}, {'algorithms': ['adam']},
                                        {'algorithms': ['local-sgd', 'local-sgd']},
                                        {'run': {'b': 4, 'K': 16, 'budget_B': 32}}, {'n_trials': 0}])
    def testRejectsInvalid(self, update):
        with pytest.raises(pydantic.ValidationError):
            ExperimentConfig.model_validate(tiny_config(**update))

    @pytest.mark.parametrize('name', ['heterogeneity.yaml', 'label_skew.yaml', 'saddle_escape.yaml'])
    def testShippedExperiments(self, name):
        config = Harness.load_config(os.path.join(os.path.dirname(__file__), os.pardir, 'experiments', name))
        assert config.algorithms and config.n_trials >= 5

    def testDefaultsFromSettings(self, settings):
        config = ExperimentConfig(algorithms=['minibatch-sgd'])
        assert config.rounds_budget == settings.ROUNDS_BUDGET
        assert config.threads == settings.THREADS


class TestGrid:

    def testExpansion(self):
        config = ExperimentConfig.model_validate(tiny_config(restarts=2))
        problem = config.problem.build()
        jobs = Harness.expand_grid(config, problem)
        assert len(jobs) == 2 * 1 * 2 * 2 + 2 * 2 * 2
        assert [job.order for job in jobs] == list(range(len(jobs)))
        assert {job.point.r for job in jobs if job.point.algorithm == 'minibatch-sgd'} == {0.0}
        for job in jobs:
            assert job.seed == derive_seed(3, job.trial, job.restart)
            assert job.config.S == 2 and job.config.master_seed == job.seed

    def testRecommendation(self):
        config = ExperimentConfig.model_validate(tiny_config(recommend={'eps': 0.05}, rounds_budget=9))
        problem = config.problem.build()
        jobs = Harness.expand_grid(config, problem)
        points = {job.point for job in jobs}
        assert len(points) == 2
        bvr = next(job for job in jobs if job.point.algorithm == 'bvr-l-psgd')
        assert bvr.point.r == pytest.approx(0.05)
        assert bvr.config.S == math.ceil(9 / bvr.config.T)

    def testCertifyForcesCheckpoints(self):
        config = ExperimentConfig.model_validate(tiny_config(certify={'eps': 0.1}))
        fields, _, _ = Harness.resolve_run_settings(config, config.problem.build())
        assert fields['checkpoint_every'] == 1


class TestResultTable:

    def testHeader(self):
        assert Harness.RAW_COLUMNS == [
            'algorithm', 'eta', 'r', 'trial', 'restart', 'seed', 'status', 'error',
            'round', 's', 't', 'i', 'train_grad_norm', 'train_loss', 'train_accuracy',
            'test_grad_norm', 'test_loss', 'test_accuracy', 'lambda_min',
            'budget_units', 'raw_grad_evals', 'comm_events', 'comm_rounds']

    def testAggregate(self):
        table = hand_table([
            {'algorithm': 'a', 'eta': 0.1, 'trial': 0, 'round': 0, 'train_loss': 1.0},
            {'algorithm': 'a', 'eta': 0.1, 'trial': 1, 'round': 0, 'train_loss': 3.0},
            {'algorithm': 'a', 'eta': 0.1, 'trial': 2, 'round': 0, 'train_loss': 8.0, 'status': 'aborted'},
            {'algorithm': 'a', 'eta': 0.1, 'trial': 0, 'round': 1, 'train_loss': 0.5},
        ])
        agg = table.aggregate()
        assert agg['round'].tolist() == [0, 1]
        assert agg['train_loss_mean'].tolist() == [2.0, 0.5]
        assert agg['train_loss_std'].tolist() == [1.0, 0.0]
        assert agg['n_runs'].tolist() == [2, 1]
        assert len(table.failures) == 1

    def testSelectionByMinimumAccuracy(self):
        curves = {0.01: [0.5, 0.6], 0.1: [0.4, 0.9], 1.0: [0.55, 0.7]}
        table = hand_table([{'algorithm': 'a', 'eta': eta, 'trial': 0, 'round': k, 'train_accuracy': acc,
                             'train_loss': 1.0} for eta, accs in curves.items() for k, acc in enumerate(accs)])
        assert Harness.tune_select(table) == {'a': GridPoint('a', 1.0, 0.0)}

    def testSelectionTiesGoToSmallerStep(self):
        table = hand_table([{'algorithm': 'a', 'eta': eta, 'trial': 0, 'round': 0, 'train_accuracy': 0.7}
                            for eta in (0.5, 0.05)])
        assert Harness.tune_select(table)['a'].eta == 0.05

    def testSelectionSkipsPointsWithUnfinishedRuns(self):
        rows = [{'algorithm': 'a', 'eta': 0.5, 'trial': t, 'round': 0, 'train_accuracy': 0.95,
                 'status': 'completed' if t == 0 else 'aborted'} for t in range(5)]
        rows += [{'algorithm': 'a', 'eta': 0.05, 'trial': t, 'round': 0, 'train_accuracy': 0.9} for t in range(5)]
        rows += [{'algorithm': 'b', 'eta': 0.1, 'trial': 0, 'round': 0, 'train_accuracy': 0.5},
                 {'algorithm': 'b', 'eta': 0.1, 'trial': 1, 'status': 'failed', 'error': 'RuntimeError: boom'}]
        assert Harness.tune_select(hand_table(rows)) == {'a': GridPoint('a', 0.05, 0.0)}

    def testSelectionFallsBackToLoss(self):
        table = hand_table([{'algorithm': 'a', 'eta': eta, 'trial': 0, 'round': k, 'train_loss': loss}
                            for eta, losses in ((0.1, [2.0, 1.0]), (0.2, [2.0, 0.4])) for k, loss in enumerate(losses)])
        assert Harness.tune_select(table)['a'] == GridPoint('a', 0.2, 0.0)

    def testPlotData(self, tmp_path):
        table = hand_table([{'algorithm': a, 'eta': 0.1, 'trial': 0, 'round': k, 'train_loss': 1.0 / (k + 1),
                             'train_accuracy': 0.5} for a in ('a', 'b') for k in range(10)])
        frames = Harness.emit_plot_data(table, str(tmp_path))
        assert set(frames) == {'train_grad_norm', 'train_loss', 'train_accuracy',
                               'test_grad_norm', 'test_loss', 'test_accuracy'}
        loss = frames['train_loss']
        assert len(loss) == 20
        assert list(loss.columns) == ['algorithm', 'round', 'mean', 'std']
        assert os.path.exists(os.path.join(tmp_path, 'plot_train_loss.csv'))


class TestExperiment:

    def testRerunIsByteIdentical(self, tmp_path):
        config = ExperimentConfig.model_validate(tiny_config())
        first = Harness.run_experiment(config, progress=False)
        second = Harness.run_experiment(config, threads=4, progress=False)
        assert first.ok and second.ok
        assert len(first.table.raw) == 8 * 5
        Harness.write_outputs(first, os.path.join(tmp_path, 'first'))
        Harness.write_outputs(second, os.path.join(tmp_path, 'second'))
        for name in ('raw.csv', 'agg.csv'):
            assert read_bytes(os.path.join(tmp_path, 'first', name)) == read_bytes(os.path.join(tmp_path, 'second', name))

    def testReadBack(self, tmp_path):
        experiment = Harness.run_experiment(ExperimentConfig.model_validate(tiny_config(n_trials=1)), progress=False)
        path = os.path.join(tmp_path, 'raw.csv')
        experiment.table.write_csv(path)
        table = ResultTable.read_csv(path)
        pd.testing.assert_frame_equal(table.aggregate(), experiment.table.aggregate())

    def testCertificationAndCheckpoints(self, tmp_path):
        raw = tiny_config(certify={'eps': 0.5}, output={'save_checkpoints': True}, n_trials=1)
        experiment = Harness.run_experiment(ExperimentConfig.model_validate(raw), progress=False)
        assert len(experiment.sosp_reports) == 4
        out = os.path.join(tmp_path, 'out')
        written = Harness.write_outputs(experiment, out)
        assert os.path.join(out, 'sosp_reports.json') in written
        with open(os.path.join(out, 'manifest.json'), encoding='utf-8') as file:
            manifest = json.load(file)
        assert manifest['failed_runs'] == 0
        assert manifest['seeds'] == [{'trial': 0, 'restart': 0, 'seed': derive_seed(3, 0, 0)}]
        saved = Harness.certify_saved(out, 0.5)
        assert [r['found'] for r in saved] == [r['found'] for r in experiment.sosp_reports]
        with np.load(os.path.join(out, 'checkpoints', Harness.checkpoint_name(experiment.results[0].job))) as data:
            assert len(data['indices']) == len(experiment.results[0].trace.checkpoints)

    def testDeviationProbeOutput(self, tmp_path):
        raw = tiny_config(n_trials=1)
        raw['run']['probe'] = True
        experiment = Harness.run_experiment(ExperimentConfig.model_validate(raw), progress=False)
        with_probe = [result for result in experiment.results if result.deviation is not None]
        assert {result.job.point.algorithm for result in with_probe} == {'bvr-l-psgd'}
        assert all(len(result.deviation) == 2 * 2 * 4 for result in with_probe)

    @pytest.mark.slow
    def testLabelSkewTrend(self):
        """shipped label-skew experiment on a reduced step size grid {0.05, 0.1} with r = 0.5"""
        path = os.path.join(os.path.dirname(__file__), os.pardir, 'experiments', 'label_skew.yaml')
        config = Harness.load_config(path, ['algorithms=[bvr-l-psgd, minibatch-sgd]',
                                            'tuning.eta_grid=[0.05, 0.1]', 'tuning.r_grid=[0.5]'])
        assert (config.run.K, config.run.b, config.problem.q, config.n_trials) == (64, 16, 0.35, 5)
        experiment = Harness.run_experiment(config, progress=False)
        selection = Harness.tune_select(experiment.table, config.tuning.selection_rule)
        final = Harness.compare_selected(experiment.table, selection).set_index('algorithm')
        assert final.loc['bvr-l-psgd', 'round'] == 200
        assert final.loc['bvr-l-psgd', 'train_loss'] <= final.loc['minibatch-sgd', 'train_loss']


class TestCommandLine:

    def testRunAndManifestRerun(self, tmp_path):
        config_path = write_yaml(tmp_path, tiny_config())
        first, second = os.path.join(tmp_path, 'first'), os.path.join(tmp_path, 'second')
        assert BVRExperiment.main(['run', '--config', config_path, '--out', first, '--quiet']) == 0
        assert BVRExperiment.main(['run', '--manifest', os.path.join(first, 'manifest.json'),
                                   '--out', second, '--quiet']) == 0
        assert read_bytes(os.path.join(first, 'raw.csv')) == read_bytes(os.path.join(second, 'raw.csv'))

    def testInvalidConfig(self, tmp_path):
        config_path = write_yaml(tmp_path, tiny_config(algorithms=[]))
        assert BVRExperiment.main(['run', '--config', config_path, '--out', str(tmp_path), '--quiet']) == 2
        broken = os.path.join(tmp_path, 'broken.yaml')
        with open(broken, 'w', encoding='utf-8') as file:
            file.write('run: [unclosed\n')
        assert BVRExperiment.main(['run', '--config', broken, '--quiet']) == 2

    def testAbortedRunsExitWithFailure(self, tmp_path):
        raw = tiny_config(algorithms=['bvr-l-psgd'], n_trials=1)
        raw['run']['start'] = 'benign'
        raw['tuning']['eta_grid'] = [10.0]
        out = os.path.join(tmp_path, 'out')
        assert BVRExperiment.main(['run', '--config', write_yaml(tmp_path, raw), '--out', out, '--quiet']) == 1
        table = ResultTable.read_csv(os.path.join(out, 'raw.csv'))
        assert set(table.raw['status']) == {'aborted'}

    def testSweepThenCompare(self, tmp_path):
        out = os.path.join(tmp_path, 'out')
        config_path = write_yaml(tmp_path, tiny_config(n_trials=1))
        assert BVRExperiment.main(['sweep', '--config', config_path, '--out', out, '--quiet']) == 0
        with open(os.path.join(out, 'selection.json'), encoding='utf-8') as file:
            selection = json.load(file)
        assert set(selection) == {'bvr-l-psgd', 'minibatch-sgd'}
        assert BVRExperiment.main(['compare', '--out', out, '--rule', 'min-final-train-loss']) == 0
        comparison = pd.read_csv(os.path.join(out, 'comparison.csv'))
        assert comparison['algorithm'].tolist() == ['bvr-l-psgd', 'minibatch-sgd']

import math

import numpy as np
import pytest

from bvrsim import Problems
from bvrsim.Problems import ContractViolation, OperatingRadiusError, Sample


def numeric_gradient(f, x, h=1e-6):
    grad = np.zeros_like(x)
    for j in range(len(x)):
        e = np.zeros_like(x)
        e[j] = h
        grad[j] = (f(x + e) - f(x - e)) / (2 * h)
    return grad


class TestConstants:

    @pytest.mark.parametrize('values', [dict(L=-1, rho=1, G=1, zeta=0), dict(L=1, rho=math.inf, G=1, zeta=0),
                                        dict(L=1, rho=1, G=1, zeta=2.5)])
    def testRejectsInvalid(self, values):
        with pytest.raises(ContractViolation):
            Problems.ProblemConstants(**values)

    def testMinimumHint(self):
        hint = Problems.GlobalMinimumHint(-0.25, exact=True)
        assert hint.holds(-0.25)
        assert not hint.holds(-0.3)


class TestQuarticSaddle:

    def testConstruction(self, quartic):
        h_bar = np.eye(6)
        h_bar[0, 0] = -1.0
        np.testing.assert_allclose(quartic.mean_hessian, h_bar, atol=1e-12)
        difference = quartic.local_hessians[0] - quartic.local_hessians[1]
        assert np.linalg.norm(difference, 2) == pytest.approx(0.5, abs=1e-12)
        assert quartic.constants.zeta == 0.5
        assert quartic.n == 24 and quartic.samples_per_worker == 12
        assert quartic.minimum_hint.f_star == pytest.approx(-0.25)

    def testLocalGradientMatchesHessianForm(self, quartic, rng):
        x = rng.normal(size=6)
        for p in range(2):
            expected = quartic.local_hessians[p] @ x + np.dot(x, x) * x
            np.testing.assert_allclose(quartic.local_gradient(x, p), expected, atol=1e-10)
            assert quartic.local_loss(x, p) == pytest.approx(quartic.batch_loss(x, p, quartic.all_indices()), abs=1e-10)

    def testSampleGradient(self, quartic, rng):
        x = rng.normal(size=6)
        z = Sample(1, 5)
        expected = numeric_gradient(lambda y: Problems.eval_loss(quartic, y, z), x)
        np.testing.assert_allclose(Problems.eval_grad(quartic, x, z), expected, rtol=1e-6, atol=1e-6)

    def testFullLocalGradientIsSampleMean(self, quartic, rng):
        x = rng.normal(size=6)
        dataset = quartic.datasets[0]
        mean = np.mean([Problems.eval_grad(quartic, x, z) for z in dataset.samples], axis=0)
        np.testing.assert_allclose(quartic.local_gradient(x, 0), mean, atol=1e-12)

    def testSaddleAndMinimum(self, quartic):
        np.testing.assert_array_equal(quartic.full_gradient(np.zeros(6)), np.zeros(6))
        x_star = np.zeros(6)
        x_star[0] = 1.0
        assert quartic.full_loss(x_star) == pytest.approx(quartic.minimum_hint.f_star, abs=1e-12)
        np.testing.assert_allclose(quartic.full_gradient(x_star), np.zeros(6), atol=1e-12)

    @pytest.mark.parametrize('scope', ['global', 0, 1])
    def testHessianVectorProduct(self, quartic, rng, scope):
        x, v = rng.normal(size=6), rng.normal(size=6)
        analytic = Problems.hessian_vector_product(quartic, x, v, scope)
        np.testing.assert_allclose(analytic, quartic.hessian(x, scope) @ v, atol=1e-12)
        gradient = quartic.scoped_gradient(scope)
        h = 1e-5
        numeric = (gradient(x + h * v) - gradient(x - h * v)) / (2 * h)
        np.testing.assert_allclose(analytic, numeric, rtol=1e-6, atol=1e-6)

    def testContracts(self, quartic):
        with pytest.raises(ContractViolation):
            quartic.check_dim(np.zeros(5))
        with pytest.raises(ContractViolation):
            Problems.eval_grad(quartic, np.zeros(6), Sample(2, 0))
        with pytest.raises(ContractViolation):
            quartic.hvp(np.zeros(6), np.ones(6), scope=7)
        with pytest.raises(ContractViolation):
            Problems.build_quartic_saddle(d=4, P=3, lambda_neg=1, gamma=1, zeta=0.1, seed=0)
        with pytest.raises(ContractViolation):
            Problems.build_quartic_saddle(d=4, P=2, lambda_neg=1, gamma=1, zeta=0.1, seed=0, samples_per_worker=6)
        with pytest.raises(ContractViolation):
            Problems.build_quartic_saddle(d=1, P=2, lambda_neg=1, gamma=1, zeta=0.0, seed=0)

    def testOperatingRadius(self, quartic):
        assert quartic.operating_radius == pytest.approx(2.0)
        quartic.check_operating_radius(np.full(6, 0.1))
        with pytest.raises(OperatingRadiusError):
            quartic.check_operating_radius(np.full(6, 1.0))

    def testFromHessians(self):
        problem = Problems.QuarticSaddle.from_hessians([np.diag([1.0, -1.0])], gamma=0.5)
        np.testing.assert_allclose(problem.hessian(np.zeros(2)), np.diag([1.0, -1.0]), atol=1e-15)
        assert problem.constants.zeta == 0.0
        assert problem.minimum_hint.f_star == pytest.approx(-0.5)

    def testTwoDimensionalWorkerMean(self):
        """each sample is one rank-1 piece of H; the worker mean is 1/2 x'Hx + |x|^4/4"""
        problem = Problems.QuarticSaddle.from_hessians([np.diag([1.0, -1.0])], gamma=1.0)
        x = np.ones(2)
        samples = problem.datasets[0].samples
        losses = [Problems.eval_loss(problem, x, z) for z in samples]
        assert sorted(losses) == pytest.approx([0.0, 2.0])
        assert np.mean(losses) == pytest.approx(1.0)
        grads = np.array([Problems.eval_grad(problem, x, z) for z in samples])
        assert sorted(map(tuple, grads)) == [pytest.approx((2.0, 0.0)), pytest.approx((4.0, 2.0))]
        np.testing.assert_allclose(grads.mean(axis=0), [3.0, 1.0], atol=1e-12)
        assert problem.local_loss(x, 0) == pytest.approx(1.0)

    def testCriteria(self, quartic):
        values = quartic.criteria(np.zeros(6))
        assert set(values) == {'train_grad_norm', 'train_loss', 'train_accuracy',
                               'test_grad_norm', 'test_loss', 'test_accuracy'}
        assert values['train_grad_norm'] == 0.0
        assert math.isnan(values['train_accuracy']) and math.isnan(values['test_loss'])

    def testBenignStart(self, quartic):
        x0 = quartic.initial_point(3, 'benign')
        assert np.linalg.norm(x0) == pytest.approx(0.5)
        np.testing.assert_array_equal(x0, quartic.initial_point(3, 'benign'))
        np.testing.assert_array_equal(quartic.initial_point(3), np.zeros(6))


class TestSoftmaxRegression:

    def testShapes(self, softmax):
        assert softmax.dim == 3 * 5
        assert softmax.P == 4 and softmax.samples_per_worker == 24
        assert softmax.test_set.size == 24
        assert all(ds.features.shape == (24, 5) for ds in softmax.datasets)

    def testGradient(self, softmax, rng):
        x = rng.normal(size=softmax.dim) * 0.3
        expected = numeric_gradient(lambda y: softmax.local_loss(y, 2), x)
        np.testing.assert_allclose(softmax.local_gradient(x, 2), expected, rtol=1e-5, atol=1e-7)

    @pytest.mark.parametrize('scope', ['global', 1])
    def testHessianVectorProduct(self, softmax, rng, scope):
        x, v = rng.normal(size=softmax.dim) * 0.3, rng.normal(size=softmax.dim)
        gradient = softmax.scoped_gradient(scope)
        h = 1e-5
        numeric = (gradient(x + h * v) - gradient(x - h * v)) / (2 * h)
        np.testing.assert_allclose(softmax.hvp(x, v, scope), numeric, rtol=1e-5, atol=1e-7)

    def testGradientAtZero(self, softmax):
        """direct summation of (1/C - onehot(y)) a over every training sample"""
        C, n_inputs = softmax.n_classes, softmax.n_inputs
        expected = np.zeros((C, n_inputs))
        for c in range(C):
            for j in range(n_inputs):
                terms = [(1.0 / C - (y == c)) * a[j] for a, y in zip(softmax.train_features, softmax.train_labels)]
                expected[c, j] = math.fsum(terms) / softmax.n
        np.testing.assert_allclose(softmax.full_gradient(np.zeros(softmax.dim)), expected.ravel(), atol=1e-12)

    def testAccuracyAndTestCriteria(self, softmax):
        values = softmax.criteria(np.zeros(softmax.dim))
        assert 0.0 <= values['train_accuracy'] <= 1.0
        assert values['test_loss'] == pytest.approx(math.log(3))
        assert values['train_loss'] == pytest.approx(math.log(3))

    def testLabelSkew(self):
        data = Problems.make_gaussian_clusters(80, 4, 3, seed=5)
        datasets = Problems.partition_label_skew(data, 4, 1.0, seed=5)
        assert all(ds.size == 20 for ds in datasets)
        for p, ds in enumerate(datasets):
            assert set(ds.targets.tolist()) == {p}
        with pytest.raises(ContractViolation):
            Problems.partition_label_skew(data, 3, 0.5, seed=5)

    def testDatasetsAreReadOnly(self, softmax):
        with pytest.raises(ValueError):
            softmax.datasets[0].features[0, 0] = 1.0


class TestMlpSoftplus:

    def testDimension(self, mlp):
        n_inputs = 4
        assert mlp.dim == 4 * n_inputs + 4 + 4 * 4 + 4 + 3 * 4 + 3
        assert mlp.constants.estimated
        assert mlp.constants.zeta == pytest.approx(2 * mlp.constants.L)

    def testBackprop(self, mlp, rng):
        x = rng.normal(size=mlp.dim) * 0.5
        expected = numeric_gradient(lambda y: mlp.local_loss(y, 0), x)
        np.testing.assert_allclose(mlp.local_gradient(x, 0), expected, rtol=1e-5, atol=1e-7)

    def testInitialPoint(self, mlp):
        x0 = mlp.initial_point(9)
        assert np.abs(x0).max() <= 0.01
        np.testing.assert_array_equal(x0, mlp.initial_point(9))


class TestSampleGradients:

    @pytest.mark.parametrize('name,scale', [('quartic', 0.5), ('softmax', 0.3), ('mlp', 0.5)])
    def testFiniteDifferences(self, request, name, scale):
        problem = request.getfixturevalue(name)
        draw = np.random.default_rng(7)
        for _ in range(10):
            x = draw.normal(size=problem.dim) * scale
            z = Sample(int(draw.integers(problem.P)), int(draw.integers(problem.samples_per_worker)))
            h = 1e-5 * (1 + np.linalg.norm(x))
            analytic = Problems.eval_grad(problem, x, z)
            numeric = numeric_gradient(lambda y: Problems.eval_loss(problem, y, z), x, h)
            assert np.linalg.norm(numeric - analytic) / (1 + np.linalg.norm(analytic)) <= 1e-5

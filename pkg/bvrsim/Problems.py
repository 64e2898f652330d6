# Problems.py
# Copyright (C) 2024  the bvrsim developers
#
# This program is free software: you can redistribute it and/or modify
# it under the terms of the GNU General Public License as published by
# the Free Software Foundation, either version 3 of the License, or
# (at your option) any later version.
#
# This program is distributed in the hope that it will be useful,
# but WITHOUT ANY WARRANTY; without even the implied warranty of
# MERCHANTABILITY or FITNESS FOR A PARTICULAR PURPOSE.  See the
# GNU General Public License for more details.
#
# You should have received a copy of the GNU General Public License
# along with this program.  If not, see <https://www.gnu.org/licenses/>.

"""The objective suite: finite-sum problems f = (1/P) sum_p f_p whose local
objectives f_p are means of a per-sample loss over worker p's dataset.

Three families are provided:
    quartic-saddle      f_p(x) = 1/2 x'H_p x + gamma/4 |x|^4, exact strict saddle at 0,
                        Hessian heterogeneity exactly zeta
    softmax-regression  multinomial logistic regression on Gaussian class clusters
    mlp-softplus        2 hidden layer softplus network with cross-entropy, hand-written backprop

Samples are represented by their position in a worker's dataset; batch
methods take an index array and return means over it.
"""

import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import expit, logsumexp, softmax

from bvrsim.tools.rng import RngStream
from bvrsim.tools.partition import label_skew_indices, train_test_split

logger = logging.getLogger(__name__)

QUARTIC_SADDLE = 'quartic-saddle'
SOFTMAX_REGRESSION = 'softmax-regression'
MLP_SOFTPLUS = 'mlp-softplus'
PROBLEM_KINDS = (QUARTIC_SADDLE, SOFTMAX_REGRESSION, MLP_SOFTPLUS)


class ContractViolation(ValueError):
    """Arguments violate a problem's contract (dimensions, constants, construction rules)"""


class OperatingRadiusError(RuntimeError):
    """An iterate left the ball on which the declared constants hold"""


@dataclass(frozen=True)
class Sample:
    """The datum z of l(x, z): row `index` of worker `worker_id`'s dataset"""
    worker_id: int
    index: int


@dataclass(frozen=True)
class WorkerDataset:
    """
    Local dataset of one worker.
    features: one row per sample (input vectors; unit component vectors for the quartic family)
    targets:  class labels (classification) or component coefficients (quartic family)
    """
    worker_id: int
    features: np.ndarray
    targets: np.ndarray

    def __post_init__(self):
        if len(self.features) != len(self.targets):
            raise ContractViolation(f"worker {self.worker_id}: {len(self.features)} features but {len(self.targets)} targets")
        self.features.flags.writeable = False
        self.targets.flags.writeable = False

    @property
    def size(self) -> int:
        return len(self.targets)

    @property
    def samples(self) -> list[Sample]:
        return [Sample(self.worker_id, i) for i in range(self.size)]


@dataclass(frozen=True)
class LabeledDataset:
    """an unpartitioned classification dataset"""
    features: np.ndarray
    labels: np.ndarray

    @property
    def size(self) -> int:
        return len(self.labels)

    @property
    def n_classes(self) -> int:
        return int(self.labels.max()) + 1


@dataclass(frozen=True)
class ProblemConstants:
    """Declared L (gradient Lipschitz), rho (Hessian Lipschitz), G (gradient bound), zeta (Hessian heterogeneity)"""
    L: float
    rho: float
    G: float
    zeta: float
    estimated: bool = False

    def __post_init__(self):
        for name in ('L', 'rho', 'G', 'zeta'):
            value = getattr(self, name)
            if not math.isfinite(value) or value < 0:
                raise ContractViolation(f"constant {name}={value} must be finite and nonnegative")
        if self.zeta > 2 * self.L:
            raise ContractViolation(f"zeta={self.zeta} exceeds 2L={2 * self.L}")


@dataclass(frozen=True)
class GlobalMinimumHint:
    """f(x) >= f_star everywhere; exact for the quartic family, a lower bound otherwise"""
    f_star: float
    exact: bool = False

    def holds(self, f_value: float, slack: float = 1e-9) -> bool:
        return f_value >= self.f_star - slack * (1.0 + abs(self.f_star))


class Problem:
    """Base class of the finite-sum objectives. Instances are immutable after construction."""
    kind: str = ''

    def __init__(self, dim: int, datasets: list[WorkerDataset], constants: ProblemConstants,
                 minimum_hint: GlobalMinimumHint, operating_radius: float = math.inf):
        self.dim = int(dim)
        self.datasets = tuple(datasets)
        self.P = len(self.datasets)
        sizes = {ds.size for ds in self.datasets}
        if len(sizes) != 1:
            raise ContractViolation(f"worker datasets must have equal sizes, got {sorted(sizes)}")
        if any(ds.worker_id != p for p, ds in enumerate(self.datasets)):
            raise ContractViolation("worker datasets must be ordered by worker id")
        self.samples_per_worker = sizes.pop()
        self.n = self.samples_per_worker * self.P
        self.constants = constants
        self.minimum_hint = minimum_hint
        self.operating_radius = float(operating_radius)

    # -- per-family numerics, means over the rows `idx` of worker p --------

    def batch_loss(self, x: np.ndarray, p: int, idx: np.ndarray) -> float:
        raise NotImplementedError

    def batch_grad(self, x: np.ndarray, p: int, idx: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def hvp(self, x: np.ndarray, v: np.ndarray, scope='global') -> np.ndarray:
        """Hessian-vector product, default by central differences of the gradient"""
        self.check_dim(x)
        self.check_dim(v)
        v_norm = np.linalg.norm(v)
        if v_norm == 0.0:
            return np.zeros(self.dim)
        delta = 1e-4 * (1.0 + np.linalg.norm(x)) / max(v_norm, 1e-12)
        gradient = self.scoped_gradient(scope)
        return (gradient(x + delta * v) - gradient(x - delta * v)) / (2.0 * delta)

    def initial_point(self, master_seed: int, start: str = 'default') -> np.ndarray:
        return np.zeros(self.dim)

    # -- derived quantities ------------------------------------------------

    def check_dim(self, x: np.ndarray):
        if np.shape(x) != (self.dim,):
            raise ContractViolation(f"expected a vector of dimension {self.dim}, got shape {np.shape(x)}")

    def check_sample(self, z: Sample):
        if not 0 <= z.worker_id < self.P or not 0 <= z.index < self.samples_per_worker:
            raise ContractViolation(f"{z} is not a sample of this problem")

    def check_operating_radius(self, x: np.ndarray, where: str = ''):
        radius = float(np.linalg.norm(x))
        if radius > self.operating_radius:
            raise OperatingRadiusError(f"|x|={radius:.6g} left the operating ball of radius {self.operating_radius:.6g} {where}".strip())

    def all_indices(self, p: int = 0) -> np.ndarray:
        return np.arange(self.samples_per_worker)

    def local_loss(self, x: np.ndarray, p: int) -> float:
        return self.batch_loss(x, p, self.all_indices(p))

    def local_gradient(self, x: np.ndarray, p: int) -> np.ndarray:
        return self.batch_grad(x, p, self.all_indices(p))

    def full_loss(self, x: np.ndarray) -> float:
        return float(np.mean([self.local_loss(x, p) for p in range(self.P)]))

    def full_gradient(self, x: np.ndarray) -> np.ndarray:
        return ordered_mean([self.local_gradient(x, p) for p in range(self.P)])

    def scoped_gradient(self, scope):
        if scope == 'global':
            return self.full_gradient
        p = self.check_scope(scope)
        return lambda x: self.local_gradient(x, p)

    def check_scope(self, scope) -> int:
        if scope == 'global':
            return -1
        if not isinstance(scope, (int, np.integer)) or not 0 <= scope < self.P:
            raise ContractViolation(f"scope must be 'global' or a worker id in [0, {self.P}), got {scope!r}")
        return int(scope)

    def dense_hessian(self, x: np.ndarray, scope='global') -> np.ndarray:
        """assembles the Hessian column by column from HVPs on the basis vectors"""
        columns = [self.hvp(x, e, scope) for e in np.eye(self.dim)]
        return np.column_stack(columns)

    # classification problems override these; the quartic family has no labels
    has_accuracy = False

    def accuracy(self, x: np.ndarray) -> float:
        return math.nan

    def test_criteria(self, x: np.ndarray) -> dict:
        return {'test_loss': math.nan, 'test_grad_norm': math.nan, 'test_accuracy': math.nan}

    def criteria(self, x: np.ndarray) -> dict:
        """the six evaluation criteria of a model"""
        values = {
            'train_grad_norm': float(np.linalg.norm(self.full_gradient(x))),
            'train_loss': self.full_loss(x),
            'train_accuracy': self.accuracy(x),
        }
        values.update(self.test_criteria(x))
        return values

    def __repr__(self):
        return f"{type(self).__name__}(kind={self.kind!r}, d={self.dim}, P={self.P}, n={self.n})"


def ordered_mean(vectors: list[np.ndarray]) -> np.ndarray:
    """
    Mean of vectors reduced in list order as base + sum(v_i - base)/m.
    Identical inputs give the input back bit for bit.
    """
    base = vectors[0]
    total = np.zeros_like(base)
    for vector in vectors[1:]:
        total = total + (vector - base)
    return base + total / len(vectors)


# --------------------------------------------------------------------------
# quartic saddle family
# --------------------------------------------------------------------------

class QuarticSaddle(Problem):
    """
    f_p(x) = 1/2 x'H_p x + gamma/4 |x|^4 where every sample i of worker p contributes
    the rank-1 term c_i a_i a_i' (targets c_i, unit features a_i) and the mean of those
    terms over the worker's dataset is H_p.
    """
    kind = QUARTIC_SADDLE

    def __init__(self, hessians: list[np.ndarray], gamma: float, datasets: list[WorkerDataset],
                 constants: ProblemConstants, operating_radius: float):
        self.gamma = float(gamma)
        self.local_hessians = tuple(np.array(h, dtype=float) for h in hessians)
        for h in self.local_hessians:
            h.flags.writeable = False
        self.mean_hessian = ordered_mean(list(self.local_hessians))
        self.mean_hessian.flags.writeable = False
        eigenvalues = np.linalg.eigvalsh(self.mean_hessian)
        self.lambda_neg = -min(float(eigenvalues[0]), 0.0)
        f_star = -self.lambda_neg ** 2 / (4.0 * self.gamma)
        super().__init__(dim=self.mean_hessian.shape[0], datasets=datasets, constants=constants,
                         minimum_hint=GlobalMinimumHint(f_star, exact=True), operating_radius=operating_radius)

    @classmethod
    def from_hessians(cls, hessians: list[np.ndarray], gamma: float, samples_per_worker: int = None,
                      zeta: float = None, operating_radius: float = None) -> "QuarticSaddle":
        """
        Builds the family from explicit local Hessians, splitting each H_p into its
        eigen-components so that every sample is a rank-1 piece.
        :param samples_per_worker: multiple of d, defaults to d
        :param zeta: declared heterogeneity, defaults to the exact max_{p,p'} |H_p - H_p'|
        :param operating_radius: defaults to 2 sqrt(max(lambda_neg, 1)/gamma)
        """
        hessians = [np.asarray(h, dtype=float) for h in hessians]
        if not hessians or hessians[0].ndim != 2:
            raise ContractViolation("need at least one square local Hessian")
        d = hessians[0].shape[0]
        for h in hessians:
            if h.shape != (d, d) or not np.allclose(h, h.T, atol=0.0):
                raise ContractViolation("local Hessians must be symmetric d x d matrices")
        if gamma <= 0:
            raise ContractViolation(f"gamma must be positive, got {gamma}")
        m = samples_per_worker or d
        if m % d:
            raise ContractViolation(f"samples_per_worker={m} must be a multiple of d={d}")

        datasets = []
        coefficient_bound = 0.0
        for p, h in enumerate(hessians):
            eigenvalues, eigenvectors = np.linalg.eigh(h)
            component = np.arange(m) % d
            targets = d * eigenvalues[component]
            features = eigenvectors[:, component].T.copy()
            coefficient_bound = max(coefficient_bound, float(np.abs(targets).max()))
            datasets.append(WorkerDataset(worker_id=p, features=features, targets=targets))

        mean_hessian = ordered_mean(hessians)
        lambda_neg = -min(float(np.linalg.eigvalsh(mean_hessian)[0]), 0.0)
        radius = operating_radius or 2.0 * math.sqrt(max(lambda_neg, 1.0) / gamma)
        if zeta is None:
            zeta = max((np.linalg.norm(a - b, 2) for a in hessians for b in hessians), default=0.0)
        L = coefficient_bound + 3.0 * gamma * radius ** 2
        constants = ProblemConstants(
            L=L,
            rho=6.0 * gamma * radius,
            G=coefficient_bound * radius + gamma * radius ** 3,
            zeta=float(zeta),
        )
        return cls(hessians, gamma, datasets, constants, radius)

    def batch_loss(self, x, p, idx):
        ds = self.datasets[p]
        projections = ds.features[idx] @ x
        return float(0.5 * np.mean(ds.targets[idx] * projections ** 2) + 0.25 * self.gamma * np.dot(x, x) ** 2)

    def batch_grad(self, x, p, idx):
        ds = self.datasets[p]
        a = ds.features[idx]
        weighted = ds.targets[idx] * (a @ x)
        return a.T @ weighted / len(idx) + self.gamma * np.dot(x, x) * x

    def local_loss(self, x, p):
        return float(0.5 * x @ self.local_hessians[p] @ x + 0.25 * self.gamma * np.dot(x, x) ** 2)

    def hvp(self, x, v, scope='global'):
        self.check_dim(x)
        self.check_dim(v)
        p = self.check_scope(scope)
        h = self.mean_hessian if p < 0 else self.local_hessians[p]
        return h @ v + self.gamma * (np.dot(x, x) * v + 2.0 * x * np.dot(x, v))

    def hessian(self, x, scope='global') -> np.ndarray:
        """analytic dense Hessian"""
        p = self.check_scope(scope)
        h = self.mean_hessian if p < 0 else self.local_hessians[p]
        return h + self.gamma * (np.dot(x, x) * np.eye(self.dim) + 2.0 * np.outer(x, x))

    def initial_point(self, master_seed, start='default'):
        if start in ('default', 'saddle'):
            return np.zeros(self.dim)
        if start == 'benign':
            #random direction, half way between the saddle and the minimum shell
            stream = RngStream.for_key(master_seed, 'model_init')
            direction = stream.normal(self.dim)
            direction /= np.linalg.norm(direction)
            return 0.5 * math.sqrt(self.lambda_neg / self.gamma) * direction
        raise ContractViolation(f"unknown start '{start}' for {self.kind}")


def build_quartic_saddle(d: int, P: int, lambda_neg: float, gamma: float, zeta: float, seed: int,
                         samples_per_worker: int = None, operating_radius: float = None) -> QuarticSaddle:
    """
    Local Hessians H_p = Hbar +/- (zeta/2) E with Hbar = diag(-lambda_neg, 1, ..., 1) and
    E = u u' for a random unit vector u: the first P/2 workers get +E, the rest -E, so that
    the mean Hessian is Hbar and max_{p,p'} |H_p - H_p'| = zeta exactly.
    """
    if d < 2:
        raise ContractViolation(f"d must be at least 2, got {d}")
    if lambda_neg <= 0 or gamma <= 0 or zeta < 0:
        raise ContractViolation(f"need lambda_neg > 0, gamma > 0, zeta >= 0 (got {lambda_neg}, {gamma}, {zeta})")
    if P < 1:
        raise ContractViolation(f"P must be positive, got {P}")
    if zeta > 0 and P % 2:
        raise ContractViolation(f"the heterogeneous quartic family needs an even worker count, got P={P}")

    h_bar = np.eye(d)
    h_bar[0, 0] = -lambda_neg
    stream = RngStream.for_key(seed, 'data')
    u = stream.normal(d)
    u /= np.linalg.norm(u)
    e = np.outer(u, u)
    hessians = []
    for p in range(P):
        sign = 1.0 if p < P // 2 else -1.0
        hessians.append(h_bar + sign * 0.5 * zeta * e if zeta > 0 else h_bar.copy())
    problem = QuarticSaddle.from_hessians(hessians, gamma, samples_per_worker=samples_per_worker,
                                          zeta=zeta, operating_radius=operating_radius)
    logger.info(f"built {problem} with lambda_neg={lambda_neg}, gamma={gamma}, zeta={zeta}")
    return problem


# --------------------------------------------------------------------------
# classification families
# --------------------------------------------------------------------------

def make_gaussian_clusters(n_total: int, n_classes: int, n_features: int, seed: int,
                           separation: float = 3.0) -> LabeledDataset:
    """balanced Gaussian class clusters with unit-variance noise, plus a constant bias feature"""
    stream = RngStream.for_key(seed, 'data')
    means = stream.normal((n_classes, n_features))
    means *= separation / np.linalg.norm(means, axis=1, keepdims=True)
    labels = stream.permutation(np.arange(n_total) % n_classes)
    points = means[labels] + stream.normal((n_total, n_features))
    features = np.hstack([points, np.ones((n_total, 1))])
    return LabeledDataset(features=features, labels=labels.astype(np.int64))


def partition_label_skew(dataset: LabeledDataset, P: int, q: float, seed: int) -> list[WorkerDataset]:
    """splits a labeled dataset into P equal worker datasets with homogeneity parameter q"""
    if dataset.size % P:
        raise ContractViolation(f"n={dataset.size} is not divisible by P={P}")
    stream = RngStream.for_key(seed, 'partition', 1)
    try:
        shards = label_skew_indices(dataset.labels, P, q, stream.generator)
    except ValueError as e:
        raise ContractViolation(str(e)) from e
    return [WorkerDataset(worker_id=p, features=dataset.features[idx], targets=dataset.labels[idx])
            for p, idx in enumerate(shards)]


def split_train_test(dataset: LabeledDataset, n_train: int, seed: int) -> tuple[LabeledDataset, LabeledDataset]:
    stream = RngStream.for_key(seed, 'partition', 0)
    train, test = train_test_split(dataset.size, n_train, stream.generator)
    return (LabeledDataset(dataset.features[train], dataset.labels[train]),
            LabeledDataset(dataset.features[test], dataset.labels[test]))


class ClassificationProblem(Problem):
    """Shared plumbing of the cross-entropy problems: per-worker data, a test set and accuracy"""
    has_accuracy = True

    def __init__(self, dim, datasets, test_set: LabeledDataset, n_classes: int, constants: ProblemConstants):
        self.test_set = test_set
        self.n_classes = int(n_classes)
        super().__init__(dim=dim, datasets=datasets, constants=constants,
                         minimum_hint=GlobalMinimumHint(0.0, exact=False))
        self.train_features = np.concatenate([ds.features for ds in self.datasets])
        self.train_labels = np.concatenate([ds.targets for ds in self.datasets])

    def logits(self, x: np.ndarray, features: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def loss_on(self, x, features, labels) -> float:
        z = self.logits(x, features)
        return float(np.mean(logsumexp(z, axis=1) - z[np.arange(len(labels)), labels]))

    def grad_on(self, x, features, labels) -> np.ndarray:
        raise NotImplementedError

    def batch_loss(self, x, p, idx):
        ds = self.datasets[p]
        return self.loss_on(x, ds.features[idx], ds.targets[idx])

    def batch_grad(self, x, p, idx):
        ds = self.datasets[p]
        return self.grad_on(x, ds.features[idx], ds.targets[idx])

    def accuracy(self, x):
        predictions = np.argmax(self.logits(x, self.train_features), axis=1)
        return float(np.mean(predictions == self.train_labels))

    def test_criteria(self, x):
        if self.test_set is None or self.test_set.size == 0:
            return super().test_criteria(x)
        features, labels = self.test_set.features, self.test_set.labels
        predictions = np.argmax(self.logits(x, features), axis=1)
        return {
            'test_loss': self.loss_on(x, features, labels),
            'test_grad_norm': float(np.linalg.norm(self.grad_on(x, features, labels))),
            'test_accuracy': float(np.mean(predictions == labels)),
        }


class SoftmaxRegression(ClassificationProblem):
    """multinomial logistic regression, parameters are the row-major (C, n_inputs) weight matrix"""
    kind = SOFTMAX_REGRESSION

    def __init__(self, datasets, test_set, n_classes):
        self.n_inputs = datasets[0].features.shape[1]
        radius = max(float(np.linalg.norm(ds.features, axis=1).max()) for ds in datasets)
        L = 0.5 * radius ** 2
        constants = ProblemConstants(L=L, rho=radius ** 3, G=math.sqrt(2.0) * radius, zeta=2.0 * L)
        super().__init__(n_classes * self.n_inputs, datasets, test_set, n_classes, constants)

    def weights(self, x):
        return x.reshape(self.n_classes, self.n_inputs)

    def logits(self, x, features):
        return features @ self.weights(x).T

    def grad_on(self, x, features, labels):
        probabilities = softmax(self.logits(x, features), axis=1)
        probabilities[np.arange(len(labels)), labels] -= 1.0
        return (probabilities.T @ features / len(labels)).ravel()

    def hvp(self, x, v, scope='global'):
        self.check_dim(x)
        self.check_dim(v)
        p = self.check_scope(scope)
        if p < 0:
            features = self.train_features
        else:
            features = self.datasets[p].features
        probabilities = softmax(self.logits(x, features), axis=1)
        s = features @ self.weights(v).T
        curvature = probabilities * s - probabilities * np.sum(probabilities * s, axis=1, keepdims=True)
        return (curvature.T @ features / len(features)).ravel()


def build_softmax_regression(n: int, P: int, n_classes: int, n_features: int, q: float, seed: int,
                             separation: float = 3.0) -> SoftmaxRegression:
    """n training samples (80% of the generated data), label-skew partitioned over P workers"""
    train, test = _classification_data(n, P, n_classes, n_features, seed, separation)
    datasets = partition_label_skew(train, P, q, seed)
    problem = SoftmaxRegression(datasets, test, n_classes)
    logger.info(f"built {problem} with q={q}, C={n_classes}")
    return problem


def _classification_data(n, P, n_classes, n_features, seed, separation):
    if n % P:
        raise ContractViolation(f"n={n} is not divisible by P={P}")
    n_test = n // 4
    data = make_gaussian_clusters(n + n_test, n_classes, n_features, seed, separation)
    return split_train_test(data, n, seed)


def softplus(z):
    return np.logaddexp(0.0, z)


class MLPSoftplus(ClassificationProblem):
    """
    Fully connected network n_inputs -> hidden -> hidden -> C with softplus activations
    and cross-entropy loss. Parameters are flattened as W1, b1, W2, b2, W3, b3 (weights row-major).
    """
    kind = MLP_SOFTPLUS

    def __init__(self, datasets, test_set, n_classes, hidden: int = 16, init_scale: float = 0.01,
                 rho: float = 1.0, constants: ProblemConstants = None):
        self.n_inputs = datasets[0].features.shape[1]
        self.hidden = int(hidden)
        self.init_scale = float(init_scale)
        self.shapes = [(self.hidden, self.n_inputs), (self.hidden,),
                       (self.hidden, self.hidden), (self.hidden,),
                       (n_classes, self.hidden), (n_classes,)]
        self.offsets = np.cumsum([0] + [int(np.prod(s)) for s in self.shapes])
        dim = int(self.offsets[-1])
        placeholder = constants or ProblemConstants(L=1.0, rho=rho, G=1.0, zeta=0.0, estimated=True)
        super().__init__(dim, datasets, test_set, n_classes, placeholder)
        if constants is None:
            self.constants = self.estimate_constants(rho)

    def unpack(self, x):
        return [x[self.offsets[i]:self.offsets[i + 1]].reshape(shape) for i, shape in enumerate(self.shapes)]

    def forward(self, x, features):
        w1, b1, w2, b2, w3, b3 = self.unpack(x)
        z1 = features @ w1.T + b1
        a1 = softplus(z1)
        z2 = a1 @ w2.T + b2
        a2 = softplus(z2)
        return z1, a1, z2, a2, a2 @ w3.T + b3

    def logits(self, x, features):
        return self.forward(x, features)[-1]

    def grad_on(self, x, features, labels):
        w1, b1, w2, b2, w3, b3 = self.unpack(x)
        z1, a1, z2, a2, logits = self.forward(x, features)
        delta = softmax(logits, axis=1)
        delta[np.arange(len(labels)), labels] -= 1.0
        delta /= len(labels)
        g_w3 = delta.T @ a2
        g_b3 = delta.sum(axis=0)
        delta2 = (delta @ w3) * expit(z2)
        g_w2 = delta2.T @ a1
        g_b2 = delta2.sum(axis=0)
        delta1 = (delta2 @ w2) * expit(z1)
        g_w1 = delta1.T @ features
        g_b1 = delta1.sum(axis=0)
        return np.concatenate([g.ravel() for g in (g_w1, g_b1, g_w2, g_b2, g_w3, g_b3)])

    def initial_point(self, master_seed, start='default'):
        stream = RngStream.for_key(master_seed, 'model_init')
        return stream.uniform(-self.init_scale, self.init_scale, self.dim)

    def estimate_constants(self, rho: float, iterations: int = 20) -> ProblemConstants:
        """
        Curvature and gradient scale measured at the initial point: L from power iteration on
        the global HVP, G from the largest per-sample gradient, both with a safety factor of 2.
        """
        x = self.initial_point(0)
        stream = RngStream.for_key(0, 'eigen', 0)
        v = stream.normal(self.dim)
        v /= np.linalg.norm(v)
        curvature = 0.0
        for _ in range(iterations):
            w = self.hvp(x, v)
            curvature = float(np.linalg.norm(w))
            if curvature == 0.0:
                break
            v = w / curvature
        L = 2.0 * max(curvature, 1e-3)
        ds = self.datasets[0]
        probe = min(ds.size, 64)
        G = 2.0 * max(float(np.linalg.norm(self.grad_on(x, ds.features[i:i + 1], ds.targets[i:i + 1])))
                      for i in range(probe))
        return ProblemConstants(L=L, rho=rho, G=G, zeta=2.0 * L, estimated=True)


def build_mlp_softplus(n: int, P: int, n_classes: int, n_features: int, q: float, seed: int,
                       hidden: int = 16, separation: float = 3.0) -> MLPSoftplus:
    train, test = _classification_data(n, P, n_classes, n_features, seed, separation)
    datasets = partition_label_skew(train, P, q, seed)
    problem = MLPSoftplus(datasets, test, n_classes, hidden=hidden)
    logger.info(f"built {problem} with q={q}, C={n_classes}, hidden={hidden}")
    return problem


# --------------------------------------------------------------------------
# sample-level operations
# --------------------------------------------------------------------------

def eval_loss(problem: Problem, x: np.ndarray, z: Sample) -> float:
    """l(x, z), deterministic in (x, z)"""
    problem.check_dim(x)
    problem.check_sample(z)
    return problem.batch_loss(x, z.worker_id, np.array([z.index]))


def eval_grad(problem: Problem, x: np.ndarray, z: Sample) -> np.ndarray:
    """analytic gradient of l(., z) at x"""
    problem.check_dim(x)
    problem.check_sample(z)
    return problem.batch_grad(x, z.worker_id, np.array([z.index]))


def hessian_vector_product(problem: Problem, x: np.ndarray, v: np.ndarray, scope='global') -> np.ndarray:
    """Hessian of f (scope='global') or of f_p (scope=p) at x applied to v"""
    return problem.hvp(np.asarray(x, dtype=float), np.asarray(v, dtype=float), scope)

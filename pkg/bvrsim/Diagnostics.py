"""Certification of candidate points and run observers.

Nothing in this module is charged to a run's cost ledger: gradient norms,
eigenvalues and heterogeneity estimates use the exact finite-sum objective.
"""

import logging
import math
from dataclasses import dataclass, asdict, field
from itertools import combinations

import numpy as np
import pandas as pd
from scipy.sparse.linalg import ArpackNoConvergence, LinearOperator, eigsh

from bvrsim.Problems import Problem
from bvrsim.Settings import Settings
from bvrsim.tools.rng import RngStream

logger = logging.getLogger(__name__)

#start vectors of the eigensolvers come from a fixed stream
EIGEN_SEED = 0


def check_sosp_verdict(grad_norm: float, lambda_min: float, eps: float, rho: float, certificate_tol: float = 0.0) -> bool:
    return bool(grad_norm <= eps and lambda_min >= -math.sqrt(rho * eps) - certificate_tol)


@dataclass
class SospReport:
    grad_norm: float
    lambda_min: float
    eps: float
    rho: float
    verdict: bool
    certificate_tol: float
    converged: bool = True
    index: int = -1

    def to_dict(self) -> dict:
        return asdict(self)


def full_gradient_norm(problem: Problem, x: np.ndarray) -> float:
    return float(np.linalg.norm(problem.full_gradient(x)))


def min_eigenvalue(problem: Problem, x: np.ndarray, tol: float = None, scope='global') -> tuple[float, float, bool]:
    """
    Smallest eigenvalue of the Hessian at x by implicitly restarted Lanczos on the
    Hessian-vector product (ARPACK through scipy), restarted from the best Ritz vector
    until the residual |Hv - lambda v| is at most tol (1 + |lambda|).
    :return: (lambda_min, residual, converged); on non-convergence the best estimate with converged=False
    """
    settings = Settings()
    tol = settings.EIGEN_TOL if tol is None else tol
    if tol <= 0:
        raise ValueError(f"tol must be positive, got {tol}")
    x = np.asarray(x, dtype=float)
    problem.check_dim(x)
    d = problem.dim

    if d < 3:
        hessian = problem.dense_hessian(x, scope)
        hessian = 0.5 * (hessian + hessian.T)
        values, vectors = np.linalg.eigh(hessian)
        v = vectors[:, 0]
        residual = float(np.linalg.norm(problem.hvp(x, v, scope) - values[0] * v))
        return float(values[0]), residual, True

    operator = LinearOperator((d, d), matvec=lambda v: problem.hvp(x, np.ravel(v), scope), dtype=float)
    v0 = RngStream.for_key(EIGEN_SEED, 'eigen', 0).normal(d)
    ncv = min(d, settings.LANCZOS_KRYLOV_DIM)
    best = (math.inf, math.inf, v0)
    for attempt in range(settings.LANCZOS_MAX_RESTARTS + 1):
        try:
            values, vectors = eigsh(operator, k=1, which='SA', v0=v0, ncv=ncv, tol=tol)
        except ArpackNoConvergence as e:
            if len(e.eigenvalues) == 0:
                continue
            values, vectors = e.eigenvalues, e.eigenvectors
        v = vectors[:, 0] / np.linalg.norm(vectors[:, 0])
        hv = problem.hvp(x, v, scope)
        lam = float(v @ hv)
        residual = float(np.linalg.norm(hv - lam * v))
        if residual < best[1]:
            best = (lam, residual, v)
        if residual <= tol * (1.0 + abs(lam)):
            return lam, residual, True
        v0 = best[2]
        logger.debug(f"Lanczos restart {attempt + 1}: lambda={lam:.10g}, residual={residual:.3g}")
    logger.warning(f"Lanczos did not converge: best lambda={best[0]:.10g} with residual {best[1]:.3g}")
    return best[0], best[1], False


def certify_point(problem: Problem, x: np.ndarray, eps: float, rho: float, tol: float = None,
                  index: int = -1) -> SospReport:
    grad_norm = full_gradient_norm(problem, x)
    lam, residual, converged = min_eigenvalue(problem, x, tol)
    return SospReport(grad_norm=grad_norm, lambda_min=lam, eps=eps, rho=rho,
                      verdict=check_sosp_verdict(grad_norm, lam, eps, rho, residual),
                      certificate_tol=residual, converged=converged, index=index)


def scan_history_for_sosp(trace, problem: Problem, eps: float, rho: float, tol: float = None,
                          reports: list = None) -> tuple[bool, int, SospReport]:
    """
    Scans the candidate checkpoints in order and returns the first certified point.
    Eigenvalues are only computed where the gradient test passes.
    :param trace: a Trace or a list of (index, x_tilde) checkpoints
    :param reports: if given, every computed report is appended to it
    :return: (found, index, report); (False, None, None) when no checkpoint passes the gradient test
    """
    checkpoints = trace.checkpoints if hasattr(trace, 'checkpoints') else trace
    last = None
    for i, x_tilde in checkpoints:
        if full_gradient_norm(problem, x_tilde) > eps:
            continue
        report = certify_point(problem, x_tilde, eps, rho, tol, index=i)
        if reports is not None:
            reports.append(report)
        if report.verdict:
            logger.info(f"certified {eps}-second-order point at step {i}: |grad|={report.grad_norm:.3g}, "
                        f"lambda_min={report.lambda_min:.4g}")
            return True, i, report
        last = report
    return False, None, last


def estimate_zeta(problem: Problem, x: np.ndarray, tol: float = None, max_iter: int = None) -> float:
    """
    max over worker pairs of |hess f_p(x) - hess f_q(x)| (spectral norm), each by power
    iteration on the difference of the local Hessian-vector products
    """
    settings = Settings()
    tol = settings.EIGEN_TOL if tol is None else tol
    max_iter = settings.POWER_ITER_MAX if max_iter is None else max_iter
    x = np.asarray(x, dtype=float)
    problem.check_dim(x)
    estimate = 0.0
    for p, q in combinations(range(problem.P), 2):
        v = RngStream.for_key(EIGEN_SEED, 'eigen', 1, p, q).normal(problem.dim)
        v /= np.linalg.norm(v)
        norm = 0.0
        for _ in range(max_iter):
            w = problem.hvp(x, v, p) - problem.hvp(x, v, q)
            new_norm = float(np.linalg.norm(w))
            if new_norm == 0.0:
                break
            v = w / new_norm
            done = abs(new_norm - norm) <= tol * new_norm
            norm = new_norm
            if done:
                break
        else:
            logger.warning(f"power iteration for workers ({p}, {q}) stopped after {max_iter} iterations")
        estimate = max(estimate, norm)
    return estimate


@dataclass
class DeviationProbe:
    """
    Records |v - grad f(x)| at every local step next to the envelope
    zeta |x - anchor| + L |x - anchor| / sqrt(b), anchor being the point of the
    last exact gradient.
    """
    problem: Problem
    b: int
    zeta: float = None
    L: float = None
    rows: list = field(default_factory=list)

    def __post_init__(self):
        self.zeta = self.problem.constants.zeta if self.zeta is None else self.zeta
        self.L = self.problem.constants.L if self.L is None else self.L

    def observe(self, i, s, t, k, x, v, anchor):
        deviation = float(np.linalg.norm(v - self.problem.full_gradient(x)))
        distance = float(np.linalg.norm(x - anchor))
        self.rows.append({'i': i, 's': s, 't': t, 'k': k, 'deviation': deviation, 'distance': distance,
                          'envelope': self.zeta * distance + self.L * distance / math.sqrt(self.b)})

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.rows, columns=['i', 's', 't', 'k', 'deviation', 'distance', 'envelope'])

    def within_envelope(self, safety: float = 10.0) -> float:
        """fraction of steps whose deviation is at most safety times the envelope"""
        frame = self.to_frame()
        if frame.empty:
            return 1.0
        return float(np.mean(frame['deviation'] <= safety * frame['envelope'] + 1e-12))

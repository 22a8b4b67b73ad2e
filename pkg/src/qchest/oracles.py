"""
Slow, explicit reference implementations used to cross-check the fast paths.

Nothing here goes through :class:`~qchest.measurement.SensingOperator`:
sensing matrices are built with ``np.kron``, likelihoods are integrated
numerically, and the unquantized estimator uses closed-form ridge solves.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import mpmath
import numpy as np

from .channel import DictionarySet
from .estimator import (HALT_CV_DROP, HALT_MAX_SUPPORT, HALT_ZERO_GRADIENT,
                        ObjectiveSpec, SolveTrace, SparseEstimate, TraceRecord,
                        objective_f, restricted_maximize)
from .measurement import DenseOperator, TrainingSignal, time_rows

__all__ = [
    "DenseProblem",
    "dense_sensing",
    "dense_split",
    "quadrature_log_likelihood",
    "exhaustive_map",
    "unquantized_objective",
    "unquantized_map",
]

DENSE_CAP = 10 ** 6
ENUMERATION_CAP = 10 ** 6


@dataclass(frozen=True)
class DenseProblem:
    """Explicit sensing matrix with real-lifted thresholds and/or raw data.

    ``y`` is the complex unquantized measurement (used by the B = inf
    reference); ``truth`` the generating coefficient vector, if known.
    """

    matrix: np.ndarray = field(repr=False)
    lo: np.ndarray | None = field(default=None, repr=False)
    up: np.ndarray | None = field(default=None, repr=False)
    y: np.ndarray | None = field(default=None, repr=False)
    truth: np.ndarray | None = field(default=None, repr=False)
    cap: int = DENSE_CAP

    def __post_init__(self):
        if self.matrix.size > self.cap:
            raise ValueError(f"dense problem has {self.matrix.size} entries, cap is {self.cap}")

    def spec(self, prior_weight: float = 1.0) -> ObjectiveSpec:
        if self.lo is None or self.up is None:
            raise ValueError("problem has no quantization thresholds")
        return ObjectiveSpec(DenseOperator(self.matrix), self.lo, self.up, prior_weight)

    def rows(self, idx) -> "DenseProblem":
        """Sub-problem on complex measurement rows ``idx``."""
        idx = np.asarray(idx, dtype=int)
        n = self.matrix.shape[0]
        real = np.concatenate([idx, idx + n])
        return DenseProblem(
            self.matrix[idx],
            None if self.lo is None else self.lo[real],
            None if self.up is None else self.up[real],
            None if self.y is None else self.y[idx],
            self.truth, self.cap)


def dense_sensing(dicts: DictionarySet, train: TrainingSignal, cap: int = DENSE_CAP) -> np.ndarray:
    """``S^T P^T kron B`` as an explicit matrix."""
    rows = dicts.aoa_dict.shape[0] * train.n_train
    cols = dicts.size
    if rows * cols > cap:
        raise ValueError(f"dense sensing matrix would have {rows * cols} entries, cap is {cap}")
    left = train.stacked_matrix.T @ dicts.pulse_matrix.T
    return np.kron(left, dicts.aoa_dict)


def dense_split(problem: DenseProblem, n_antennas: int, n_train: int, cv_slots: int):
    """Estimation / CV sub-problems, CV being the last ``cv_slots`` slots."""
    split = n_train - cv_slots
    return (problem.rows(time_rows(np.arange(split), n_antennas)),
            problem.rows(time_rows(np.arange(split, n_train), n_antennas)))


def quadrature_log_likelihood(lo, up, mean, sigma: float = math.sqrt(0.5),
                              dps: int = 40) -> float:
    """Sum of log interval probabilities by adaptive numerical integration."""
    with mpmath.workdps(dps):
        s = mpmath.mpf(sigma)
        norm = 1 / (s * mpmath.sqrt(2 * mpmath.pi))
        total = mpmath.mpf(0)
        for a, b, mu in zip(np.ravel(lo), np.ravel(up), np.ravel(mean)):
            mu = mpmath.mpf(float(mu))
            lower = -mpmath.inf if np.isneginf(a) else mpmath.mpf(float(a))
            upper = mpmath.inf if np.isposinf(b) else mpmath.mpf(float(b))
            # split at the mean so the peak is an endpoint of each piece
            pts = [lower, upper]
            if lower < mu < upper:
                pts = [lower, mu, upper]
            else:
                # tail interval: the integrand decays over s^2 / |edge - mu|
                edge = lower if mu <= lower else upper
                scale = s if edge == mu else min(s, s * s / abs(edge - mu))
                sign = 1 if edge == lower else -1
                inner = [edge + sign * scale * f for f in (1, 4, 16, 64)]
                inner = [p for p in inner if lower < p < upper]
                pts = sorted([lower, upper, *inner])
            p = mpmath.quad(lambda t: norm * mpmath.exp(-((t - mu) / s) ** 2 / 2), pts)
            total += mpmath.log(p)
        return float(total)


def exhaustive_map(problem: DenseProblem, sparsity: int, *, prior_weight: float = 1.0,
                   cap: int = ENUMERATION_CAP, **solver) -> SparseEstimate:
    """Best estimate over every support of size ``<= sparsity``.

    Each candidate support is solved from zero by
    :func:`~qchest.estimator.restricted_maximize`.
    """
    spec = problem.spec(prior_weight)
    size = problem.matrix.shape[1]
    sparsity = min(int(sparsity), size)
    n_supports = sum(math.comb(size, k) for k in range(1, sparsity + 1))
    if n_supports > cap:
        raise ValueError(f"{n_supports} supports exceed the enumeration cap {cap}")
    best = SparseEstimate.zeros(size)
    best_val = objective_f(spec, best.coeffs)
    for k in range(1, sparsity + 1):
        for supp in itertools.combinations(range(size), k):
            res = restricted_maximize(spec, supp, **solver)
            if res.value > best_val:
                best, best_val = res.estimate, res.value
    return best


def unquantized_objective(problem: DenseProblem, x, prior_weight: float = 1.0) -> float:
    """Gaussian MAP objective ``-||y - A x||^2 - w ||x||^2``."""
    r = problem.y - problem.matrix @ x
    return -float(np.vdot(r, r).real) - prior_weight * float(np.vdot(x, x).real)


def _ridge(problem: DenseProblem, support, prior_weight: float) -> np.ndarray:
    cols = problem.matrix[:, list(support)]
    gram = cols.conj().T @ cols + prior_weight * np.eye(len(support))
    return np.linalg.solve(gram, cols.conj().T @ problem.y)


def unquantized_map(problem: DenseProblem, max_support: int,
                    cv: DenseProblem | None = None, *, prior_weight: float = 1.0,
                    nmse=None) -> tuple[SparseEstimate, SolveTrace]:
    """Greedy CV-stopped MAP estimate from unquantized data.

    Same selection and stopping rules as :func:`~qchest.estimator.fcfgs_cv`
    with the Gaussian log-likelihood; each support is solved exactly.
    """
    if problem.y is None:
        raise ValueError("unquantized measurements are required")
    A = problem.matrix
    size = A.shape[1]
    max_support = min(int(max_support), size)

    def f_cv(x):
        return unquantized_objective(cv, x, prior_weight) if cv is not None else math.nan

    def score(x):
        return float(nmse(x)) if nmse is not None else math.nan

    b = np.zeros(size, dtype=complex)
    supp: tuple[int, ...] = ()
    trace = SolveTrace()
    fcv_b = f_cv(b)
    trace.records.append(TraceRecord(0, -1, unquantized_objective(problem, b, prior_weight),
                                     fcv_b, 0, 0, score(b)))
    eps = -math.inf
    halt = HALT_CV_DROP
    x_hat, x_supp = b, supp
    while cv is None or fcv_b > eps:
        x_hat, x_supp = b, supp
        trace.selected = len(trace.records) - 1
        if len(x_supp) >= max_support:
            halt = HALT_MAX_SUPPORT
            break
        grad = 2 * (A.conj().T @ (problem.y - A @ x_hat)) - 2 * prior_weight * x_hat
        scores = np.abs(grad)
        if x_supp:
            scores[list(x_supp)] = -np.inf
        i = int(np.argmax(scores))
        if not scores[i] > 0:
            halt = HALT_ZERO_GRADIENT
            break
        supp = x_supp + (i,)
        b = np.zeros(size, dtype=complex)
        b[list(supp)] = _ridge(problem, supp, prior_weight)
        eps = fcv_b
        fcv_b = f_cv(b)
        trace.records.append(TraceRecord(len(trace.records), i,
                                         unquantized_objective(problem, b, prior_weight),
                                         fcv_b, len(supp), 1, score(b)))
    trace.halt_reason = halt
    return SparseEstimate(x_hat, x_supp), trace

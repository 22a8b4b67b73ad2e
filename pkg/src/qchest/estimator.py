"""
Sparse MAP estimation from interval-censored (quantized) Gaussian data.

Each real measurement ``i`` is only known to lie in ``[lo_i, up_i)``; with
mean ``mu = Re/Im(A x)`` and noise std ``sigma`` its probability is
``Phi((up - mu)/sigma) - Phi((lo - mu)/sigma)``.  The objective is

    f(x) = sum_i log P_i(x) - w * ||x||^2,

concave in ``x``.  :func:`fcfgs_cv` grows the support one grid index at a
time (largest gradient modulus), re-solves on the whole support, and stops
as soon as the objective on held-out measurements stops increasing.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import linalg, special

from .measurement import QuantizedObservation, lift, time_rows, unlift

__all__ = [
    "ObjectiveSpec",
    "SparseEstimate",
    "InnerResult",
    "TraceRecord",
    "SolveTrace",
    "interval_terms",
    "log_likelihood",
    "objective_f",
    "gradient_f",
    "restricted_maximize",
    "fcfgs_cv",
    "split_estimation_cv",
    "default_max_support",
    "HALT_CV_DROP",
    "HALT_MAX_SUPPORT",
    "HALT_INNER_FAILURE",
    "HALT_ZERO_GRADIENT",
]

HALT_CV_DROP = "cv-drop"
HALT_MAX_SUPPORT = "max-support"
HALT_INNER_FAILURE = "inner-solver-failure"
HALT_ZERO_GRADIENT = "zero-gradient"

_LOG_SQRT_2PI = 0.5 * math.log(2 * math.pi)


def interval_terms(lo, up, mean, sigma: float = math.sqrt(0.5), *,
                   curvature: bool = False, log_floor: float = -1e300):
    """Log-probability of ``lo <= mean + sigma*z < up`` and its derivatives.

    Returns ``(logp, d1)`` or ``(logp, d1, d2)`` where the derivatives are
    taken with respect to ``mean``.  Works entirely in the log domain, so
    intervals lying deep in either Gaussian tail keep full precision.
    """
    a = (np.asarray(lo, dtype=float) - mean) / sigma
    b = (np.asarray(up, dtype=float) - mean) / sigma
    if np.isnan(a).any() or np.isnan(b).any():
        raise ValueError("NaN in interval endpoints or mean")

    # Reflect intervals centred right of zero: Phi(b) - Phi(a) = Phi(-a) - Phi(-b).
    with np.errstate(invalid="ignore"):
        flip = (a + b) > 0
    lo_s = np.where(flip, -b, a)
    hi_s = np.where(flip, -a, b)
    log_hi = special.log_ndtr(hi_s)
    log_lo = special.log_ndtr(lo_s)
    with np.errstate(divide="ignore", invalid="ignore"):
        logp = log_hi + np.log(-np.expm1(log_lo - log_hi))
    logp = np.where(np.isfinite(logp), logp, log_floor)
    logp = np.maximum(logp, log_floor)

    with np.errstate(over="ignore"):
        r_a = np.exp(-0.5 * a * a - _LOG_SQRT_2PI - logp)
        r_b = np.exp(-0.5 * b * b - _LOG_SQRT_2PI - logp)
    d1 = (r_a - r_b) / sigma
    if not curvature:
        return logp, d1
    with np.errstate(invalid="ignore"):
        ar = np.where(np.isfinite(a), a * r_a, 0.0)
        br = np.where(np.isfinite(b), b * r_b, 0.0)
    d2 = (ar - br - (r_a - r_b) ** 2) / sigma ** 2
    return logp, d1, np.minimum(d2, 0.0)


@dataclass(frozen=True)
class ObjectiveSpec:
    """Measurement subset, its sensing rows and the Gaussian prior weight.

    ``operator`` is anything with ``shape``, ``apply``, ``adjoint`` and
    ``columns``; ``lo``/``up`` are real-lifted (length ``2 * rows``).
    """

    operator: object
    lo: np.ndarray = field(repr=False)
    up: np.ndarray = field(repr=False)
    prior_weight: float = 1.0
    noise_scale: float = math.sqrt(0.5)
    log_floor: float = -1e300

    def __post_init__(self):
        rows = self.operator.shape[0]
        if self.lo.shape != (2 * rows,) or self.up.shape != (2 * rows,):
            raise ValueError(f"thresholds must have length {2 * rows}")
        if self.prior_weight < 0:
            raise ValueError("prior_weight must be >= 0")

    @property
    def size(self) -> int:
        return self.operator.shape[1]

    def terms(self, mean, curvature=False):
        return interval_terms(self.lo, self.up, mean, self.noise_scale,
                              curvature=curvature, log_floor=self.log_floor)


@dataclass(frozen=True)
class SparseEstimate:
    coeffs: np.ndarray = field(repr=False)
    support: tuple[int, ...] = ()

    @classmethod
    def zeros(cls, size: int) -> "SparseEstimate":
        return cls(np.zeros(size, dtype=complex), ())

    @property
    def sparsity(self) -> int:
        return len(self.support)


def _check_x(x) -> np.ndarray:
    x = np.asarray(getattr(x, "coeffs", x), dtype=complex)
    if np.isnan(x).any():
        raise ValueError("NaN in coefficient vector")
    return x


def log_likelihood(spec: ObjectiveSpec, x) -> float:
    x = _check_x(x)
    logp, _ = spec.terms(lift(spec.operator.apply(x)))
    return float(np.sum(logp))


def objective_f(spec: ObjectiveSpec, x) -> float:
    x = _check_x(x)
    return log_likelihood(spec, x) - spec.prior_weight * float(np.vdot(x, x).real)


def gradient_f(spec: ObjectiveSpec, x) -> np.ndarray:
    """Complex gradient ``d/dRe + j d/dIm`` of :func:`objective_f`."""
    x = _check_x(x)
    _, d1 = spec.terms(lift(spec.operator.apply(x)))
    return spec.operator.adjoint(unlift(d1)) - 2.0 * spec.prior_weight * x


@dataclass(frozen=True)
class InnerResult:
    estimate: SparseEstimate
    value: float
    grad_norm: float
    iterations: int
    converged: bool


class _Restricted:
    """Objective in the real coordinates ``[Re b; Im b]`` of a support."""

    def __init__(self, spec: ObjectiveSpec, support: Sequence[int]):
        self.spec = spec
        self.cols = spec.operator.columns(np.asarray(support, dtype=int))
        self.s = self.cols.shape[1]
        self._real = None

    def real_matrix(self) -> np.ndarray:
        if self._real is None:
            c = self.cols
            self._real = np.block([[c.real, -c.imag], [c.imag, c.real]])
        return self._real

    def value(self, z) -> float:
        b = z[:self.s] + 1j * z[self.s:]
        logp, _ = self.spec.terms(lift(self.cols @ b))
        return float(np.sum(logp)) - self.spec.prior_weight * float(z @ z)

    def value_grad(self, z, curvature=False):
        b = z[:self.s] + 1j * z[self.s:]
        out = self.spec.terms(lift(self.cols @ b), curvature=curvature)
        val = float(np.sum(out[0])) - self.spec.prior_weight * float(z @ z)
        grad = lift(self.cols.conj().T @ unlift(out[1])) - 2.0 * self.spec.prior_weight * z
        if not curvature:
            return val, grad
        Ar = self.real_matrix()
        hess = (Ar.T * out[2]) @ Ar
        hess[np.diag_indices_from(hess)] -= 2.0 * self.spec.prior_weight
        return val, grad, hess


def restricted_maximize(spec: ObjectiveSpec, support: Sequence[int],
                        warm_start: SparseEstimate | np.ndarray | None = None, *,
                        method: str = "newton", tol: float = 1e-6, max_iter: int = 200,
                        step0: float = 1.0, shrink: float = 0.5, armijo: float = 1e-4,
                        max_step: float = 1e3, max_backtracks: int = 60) -> InnerResult:
    """Maximize ``f`` over coefficients supported on ``support``.

    Ascent with an Armijo backtracking line search starting from
    ``warm_start`` (zero by default).  ``method="newton"`` uses the
    support-restricted Hessian as the search metric, ``"gradient"`` plain
    gradient steps.  Iterates never lower the objective.
    """
    if method not in ("newton", "gradient"):
        raise ValueError(f"unknown method {method!r}")
    support = [int(i) for i in support]
    if not support:
        raise ValueError("support must be non-empty")
    if len(set(support)) != len(support):
        raise ValueError("support contains duplicates")
    size = spec.size
    x0 = np.zeros(size, dtype=complex) if warm_start is None else _check_x(warm_start)
    if x0.size != size:
        raise ValueError("warm start has the wrong length")
    off = np.ones(size, dtype=bool)
    off[support] = False
    if np.any(x0[off] != 0):
        raise ValueError("warm start is not supported within `support`")

    prob = _Restricted(spec, support)
    s = prob.s
    z = lift(x0[support])
    newton = method == "newton"
    out = prob.value_grad(z, curvature=newton)
    val, grad = out[0], out[1]
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        gnorm = float(np.linalg.norm(grad))
        if gnorm < tol:
            converged = True
            it -= 1
            break
        if not np.isfinite(val) or not np.isfinite(gnorm):
            break
        direction = grad
        if newton:
            try:
                direction = linalg.cho_solve(linalg.cho_factor(-out[2]), grad)
            except linalg.LinAlgError:
                direction = grad
        slope = float(grad @ direction)
        t = step0
        dnorm = float(np.linalg.norm(direction))
        if t * dnorm > max_step:
            t = max_step / dnorm
        accepted = False
        for _ in range(max_backtracks):
            trial = z + t * direction
            tval = prob.value(trial)
            if tval >= val + armijo * t * slope and tval > val:
                accepted = True
                break
            t *= shrink
        if not accepted:
            # no ascent possible at working precision
            converged = gnorm < 1e3 * tol
            break
        z = trial
        out = prob.value_grad(z, curvature=newton)
        val, grad = out[0], out[1]
    else:
        converged = float(np.linalg.norm(grad)) < tol

    coeffs = np.zeros(size, dtype=complex)
    coeffs[support] = z[:s] + 1j * z[s:]
    return InnerResult(SparseEstimate(coeffs, tuple(support)), val,
                       float(np.linalg.norm(grad)), it, bool(converged))


@dataclass(frozen=True)
class TraceRecord:
    iteration: int
    index: int
    f_e: float
    f_cv: float
    support_size: int
    inner_iterations: int
    nmse: float = math.nan


@dataclass
class SolveTrace:
    records: list[TraceRecord] = field(default_factory=list)
    halt_reason: str = ""
    selected: int = 0

    COLUMNS = ("iteration", "index", "support_size", "f_e", "f_cv",
               "f_e_norm", "f_cv_norm", "nmse", "inner_iterations", "selected")

    @property
    def iterations(self) -> int:
        return len(self.records) - 1

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.records], dtype=float)

    def rows(self) -> list[dict]:
        """Trace rows with min-max normalized objective columns."""
        def norm(v):
            v = np.asarray(v, dtype=float)
            fin = v[np.isfinite(v)]
            if fin.size == 0 or np.ptp(fin) == 0:
                return np.zeros_like(v)
            return (v - fin.min()) / np.ptp(fin)

        fe, fcv = self.column("f_e"), self.column("f_cv")
        fe_n, fcv_n = norm(fe), norm(fcv)
        out = []
        for j, r in enumerate(self.records):
            out.append({
                "iteration": r.iteration, "index": r.index,
                "support_size": r.support_size, "f_e": r.f_e, "f_cv": r.f_cv,
                "f_e_norm": fe_n[j], "f_cv_norm": fcv_n[j], "nmse": r.nmse,
                "inner_iterations": r.inner_iterations,
                "selected": int(r.iteration == self.selected),
            })
        return out


def default_max_support(size: int, n_est: int, n_antennas: int, total_paths: int) -> int:
    """Hard cap on the support: ``min(R, |E| / (2M), 8 L)``, at least 1."""
    return max(1, min(size, n_est // (2 * n_antennas), 8 * total_paths))


def fcfgs_cv(est_spec: ObjectiveSpec, cv_spec: ObjectiveSpec | None,
             max_support: int | None = None, *,
             nmse: Callable[[np.ndarray], float] | None = None,
             **solver) -> tuple[SparseEstimate, SolveTrace]:
    """Greedy forward selection with fully corrective updates and CV stopping.

    Each iteration picks the off-support index with the largest complex
    gradient modulus of ``f_E`` (lowest index on ties), re-maximizes ``f_E``
    over the enlarged support from the previous solution, and continues
    while ``f_CV`` of the new solution exceeds that of the previous one.
    The returned estimate is the last solution that passed the CV test.

    ``cv_spec=None`` disables the CV test; the loop then runs until
    ``max_support``.  ``nmse`` (coefficients -> float) is evaluated on every
    iterate for the trace.  Extra keyword arguments go to
    :func:`restricted_maximize`.
    """
    size = est_spec.size
    if cv_spec is not None and cv_spec.size != size:
        raise ValueError("estimation and CV objectives have different grid sizes")
    if max_support is None:
        max_support = size
    max_support = min(int(max_support), size)

    def f_cv(x):
        return objective_f(cv_spec, x) if cv_spec is not None else math.nan

    def score_nmse(x):
        return float(nmse(x)) if nmse is not None else math.nan

    b = SparseEstimate.zeros(size)
    trace = SolveTrace()
    fcv_b = f_cv(b.coeffs)
    trace.records.append(TraceRecord(0, -1, objective_f(est_spec, b.coeffs), fcv_b, 0, 0,
                                     score_nmse(b.coeffs)))
    eps = -math.inf
    halt = HALT_CV_DROP
    x_hat = b
    while cv_spec is None or fcv_b > eps:
        x_hat = b
        trace.selected = len(trace.records) - 1
        if x_hat.sparsity >= max_support:
            halt = HALT_MAX_SUPPORT
            break
        scores = np.abs(gradient_f(est_spec, x_hat.coeffs))
        if x_hat.support:
            scores[list(x_hat.support)] = -np.inf
        i = int(np.argmax(scores))
        if not scores[i] > 0:
            halt = HALT_ZERO_GRADIENT
            break
        res = restricted_maximize(est_spec, x_hat.support + (i,), x_hat, **solver)
        if not np.isfinite(res.value) or not np.all(np.isfinite(res.estimate.coeffs)):
            halt = HALT_INNER_FAILURE
            break
        b = res.estimate
        eps = fcv_b
        fcv_b = f_cv(b.coeffs)
        trace.records.append(TraceRecord(len(trace.records), i, res.value, fcv_b,
                                         b.sparsity, res.iterations, score_nmse(b.coeffs)))
    trace.halt_reason = halt
    return x_hat, trace


def split_estimation_cv(observation: QuantizedObservation, operator, cv_slots: int, *,
                        prior_weight: float = 1.0, disable_cv: bool = False):
    """Hold out every measurement from the last ``cv_slots`` time slots.

    Returns ``(est_spec, cv_spec)``; with ``disable_cv`` the estimation
    objective uses all measurements and ``cv_spec`` is ``None``.
    """
    n_train = operator.n_train
    m = operator.n_antennas
    if observation.lo.size != 2 * m * n_train:
        raise ValueError("observation does not match the sensing operator")
    if disable_cv:
        if cv_slots != 0:
            raise ValueError("cv_slots must be 0 when CV is disabled")
        est = ObjectiveSpec(operator, observation.lo, observation.up, prior_weight)
        return est, None
    if not 0 < cv_slots < n_train:
        raise ValueError(f"cv_slots must lie in (0, {n_train}), got {cv_slots}")

    def part(times):
        rows = time_rows(times, m)
        real_rows = np.concatenate([rows, rows + m * n_train])
        return ObjectiveSpec(operator.time_subset(times), observation.lo[real_rows],
                             observation.up[real_rows], prior_weight)

    split = n_train - cv_slots
    return part(np.arange(split)), part(np.arange(split, n_train))

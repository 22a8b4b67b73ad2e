"""Quick oracle cross-checks runnable from the command line."""
from __future__ import annotations

import math

import numpy as np

from ..channel import GridSpec, SystemDims, build_dictionaries, sample_channel
from ..estimator import (fcfgs_cv, gradient_f, log_likelihood, objective_f,
                         split_estimation_cv)
from ..measurement import (SensingOperator, agc_input_std, build_training,
                           design_quantizer, lift, observe)
from ..oracles import DenseProblem, dense_sensing, exhaustive_map, quadrature_log_likelihood


def _tiny(rng, *, m=2, k=1, d=2, n=6, r_aoa=4, r_delay=2, bits=2, snr_db=10.0):
    dims = SystemDims(m, k, d, 1)
    dicts = build_dictionaries(dims, GridSpec(r_aoa, r_delay))
    snr = 10 ** (snr_db / 10)
    train = build_training(k, d, n, snr)
    channel = sample_channel(int(rng.integers(2 ** 32)), dims)
    q = design_quantizer(bits, agc_input_std(snr, k))
    obs = observe(channel, train, q, int(rng.integers(2 ** 32)))
    return dicts, train, obs


def _check(name, ok, detail=""):
    print(f"[{'PASS' if ok else 'FAIL'}] {name}{': ' + detail if detail else ''}")
    return bool(ok)


def run_selftest(seed: int = 0) -> bool:
    rng = np.random.default_rng(seed)
    results = []

    worst = 0.0
    for _ in range(10):
        dicts, train, _ = _tiny(rng)
        op = SensingOperator.from_parts(dicts, train)
        A = dense_sensing(dicts, train)
        x = rng.standard_normal(dicts.size) + 1j * rng.standard_normal(dicts.size)
        worst = max(worst, np.linalg.norm(op.apply(x) - A @ x) / np.linalg.norm(A @ x))
    results.append(_check("matrix-free sensing == dense Kronecker", worst < 1e-10, f"max rel err {worst:.1e}"))

    dicts, train, obs = _tiny(rng)
    op = SensingOperator.from_parts(dicts, train)
    est, cv = split_estimation_cv(obs, op, 2)
    worst = 0.0
    for _ in range(5):
        x = 0.3 * (rng.standard_normal(dicts.size) + 1j * rng.standard_normal(dicts.size))
        g = gradient_f(est, x)
        h = 1e-5
        for j in range(dicts.size):
            for unit in (1.0, 1j):
                e = np.zeros(dicts.size, complex)
                e[j] = unit * h
                fd = (objective_f(est, x + e) - objective_f(est, x - e)) / (2 * h)
                an = g[j].real if unit == 1.0 else g[j].imag
                worst = max(worst, abs(fd - an) / max(1.0, abs(an)))
    results.append(_check("gradient == central differences", worst < 1e-5, f"max rel err {worst:.1e}"))

    slack = math.inf
    for _ in range(50):
        x1, x2 = (rng.standard_normal((2, dicts.size)) + 1j * rng.standard_normal((2, dicts.size)))
        lam = rng.uniform()
        gap = (objective_f(est, lam * x1 + (1 - lam) * x2)
               - lam * objective_f(est, x1) - (1 - lam) * objective_f(est, x2))
        slack = min(slack, gap)
    results.append(_check("objective concavity (midpoint)", slack >= -1e-8, f"min gap {slack:.2e}"))

    x = 0.2 * (rng.standard_normal(dicts.size) + 1j * rng.standard_normal(dicts.size))
    mean = lift(est.operator.apply(x))
    ref = quadrature_log_likelihood(est.lo, est.up, mean)
    got = log_likelihood(est, x)
    rel = abs(got - ref) / abs(ref)
    results.append(_check("log-likelihood == quadrature", rel < 1e-8, f"rel err {rel:.1e}"))

    misses = 0
    for _ in range(5):
        dicts, train, obs = _tiny(rng, m=4, n=8, r_aoa=4)
        op = SensingOperator.from_parts(dicts, train)
        est, cv = split_estimation_cv(obs, op, 2)
        x_hat, _ = fcfgs_cv(est, cv, 3)
        A = dense_sensing(dicts, train)
        keep = np.concatenate([np.arange(est.lo.size // 2), A.shape[0] + np.arange(est.lo.size // 2)])
        prob = DenseProblem(A[: est.lo.size // 2], obs.lo[keep], obs.up[keep])
        best = exhaustive_map(prob, x_hat.sparsity)
        if objective_f(est, x_hat.coeffs) < objective_f(prob.spec(), best.coeffs) - 1e-4:
            misses += 1
    results.append(_check("greedy vs exhaustive support search", misses <= 1, f"{misses}/5 suboptimal"))

    ok = all(results)
    print(f"selftest {'passed' if ok else 'FAILED'} ({sum(results)}/{len(results)})")
    return ok

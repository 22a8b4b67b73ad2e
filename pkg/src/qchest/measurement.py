"""
Training, quantized observation and the Kronecker-structured sensing map.

With the stacked training matrix ``S`` (``K*D x N``) and the virtual-channel
factors ``B`` and ``P``, the noiseless measurement ``vec(B X P S)`` equals
``A vec(X)`` with ``A = (P S)^T kron B``.  :class:`SensingOperator` applies
``A`` and its adjoint through the factors and never forms the Kronecker
product.

Vectors are column-major throughout: complex measurement ``n*M + m`` is
antenna ``m`` at time ``n``, and real lifting stacks all real parts before
all imaginary parts.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy import optimize, special

from .channel import ChannelInstance, DictionarySet

__all__ = [
    "TrainingSignal",
    "Quantizer",
    "QuantizedObservation",
    "SensingOperator",
    "DenseOperator",
    "zadoff_chu",
    "build_training",
    "select_zc_root",
    "gaussian_uniform_step",
    "design_quantizer",
    "agc_input_std",
    "noisy_measurements",
    "observe",
    "lift",
    "unlift",
    "time_rows",
]

# MSE-optimal step of a symmetric mid-rise uniform quantizer with 2**B levels
# for a unit-variance Gaussian input.
_GAUSS_UNIFORM_STEP = {
    1: 1.595769121605731,
    2: 0.9956866846356122,
    3: 0.5860194502506525,
    4: 0.3352006178698336,
    5: 0.18813879959939547,
    6: 0.1040630017325273,
    7: 0.05686767554620112,
}


def lift(z: np.ndarray) -> np.ndarray:
    """Complex vector -> ``[Re z; Im z]``."""
    z = np.asarray(z)
    return np.concatenate([z.real, z.imag])


def unlift(r: np.ndarray) -> np.ndarray:
    r = np.asarray(r, dtype=float)
    n = r.size // 2
    if r.size != 2 * n:
        raise ValueError("real-lifted vector must have even length")
    return r[:n] + 1j * r[n:]


def zadoff_chu(n_len: int, root: int = 1, shift: int = 0) -> np.ndarray:
    """Zadoff-Chu sequence of length ``n_len``, circularly delayed by ``shift``.

    Works for odd and even lengths; the root must be coprime with the length.
    """
    if n_len < 1:
        raise ValueError("n_len must be >= 1")
    if math.gcd(root, n_len) != 1:
        raise ValueError(f"root {root} is not coprime with length {n_len}")
    if not 0 <= shift < n_len:
        raise ValueError("shift must lie in [0, n_len)")
    n = np.arange(n_len)
    # n*(n + n_len%2) is always even for odd lengths; reduce mod 2N to keep
    # the phase argument small.
    phase_num = (root * n * (n + n_len % 2)) % (2 * n_len)
    z = np.exp(-1j * np.pi * phase_num / n_len)
    return np.roll(z, shift)


@dataclass(frozen=True)
class TrainingSignal:
    matrix: np.ndarray = field(repr=False)
    power: float
    stacked_matrix: np.ndarray = field(repr=False)
    shifts: tuple[int, ...] = ()

    @property
    def n_train(self) -> int:
        return self.matrix.shape[1]


def build_training(n_users: int, n_taps: int, n_train: int, snr: float,
                   root: int = 1) -> TrainingSignal:
    """Circularly shifted ZC training with a cyclic prefix of ``D - 1``.

    User ``k`` sends the root sequence delayed by ``k * (N // K)``; with
    ``N >= K*D`` every (user, tap) pair sees a distinct cyclic lag, so the
    stacked training has orthogonal rows.
    """
    if n_train < n_users * n_taps:
        raise ValueError(f"need n_train >= K*D = {n_users * n_taps}, got {n_train}")
    if snr <= 0:
        raise ValueError("snr must be positive")
    spacing = n_train // n_users
    shifts = tuple(k * spacing for k in range(n_users))
    base = zadoff_chu(n_train, root)
    S = np.sqrt(snr) * np.stack([np.roll(base, s) for s in shifts])
    # column n, block d  <-  s[(n - d) mod N]
    stacked = np.concatenate([np.roll(S, d, axis=1) for d in range(n_taps)], axis=0)
    return TrainingSignal(S, float(snr), stacked, shifts)


def select_zc_root(n_users: int, n_taps: int, n_train: int, holdout: int) -> int:
    """Coprime ZC root that best conditions the last ``holdout`` slots.

    Over a short contiguous window the delayed copies of a slowly sweeping
    chirp (root 1) are nearly collinear, so a held-out tail would observe
    the channel through a rank-deficient projection.  Picks the root whose
    stacked training restricted to that window has the largest smallest
    singular value; ties go to the smallest root.
    """
    if not 0 < holdout <= n_train:
        raise ValueError("holdout must lie in (0, n_train]")
    best_root, best_sv = 1, -1.0
    for root in range(1, n_train):
        if math.gcd(root, n_train) != 1:
            continue
        window = build_training(n_users, n_taps, n_train, 1.0, root).stacked_matrix[:, n_train - holdout:]
        sv = np.linalg.svd(window, compute_uv=False)
        smallest = sv[min(window.shape) - 1]
        if smallest > best_sv * (1 + 1e-9):
            best_root, best_sv = root, smallest
    return best_root


def _uniform_mse(step: float, bits: int) -> float:
    levels = 2 ** bits
    th = step * (np.arange(1, levels) - levels / 2)
    edges = np.concatenate([[-np.inf], th, [np.inf]])
    rec = step * (np.arange(levels) - levels / 2 + 0.5)
    a, b = edges[:-1], edges[1:]
    prob = special.ndtr(b) - special.ndtr(a)
    with np.errstate(invalid="ignore"):
        return _uniform_mse_terms(a, b, rec, prob)


def _uniform_mse_terms(a, b, rec, prob):
    pdf_a = np.exp(-np.minimum(a * a, 1e300) / 2) / np.sqrt(2 * np.pi)
    pdf_b = np.exp(-np.minimum(b * b, 1e300) / 2) / np.sqrt(2 * np.pi)
    m1 = pdf_a - pdf_b
    m2 = prob + np.where(np.isinf(a), 0.0, a * pdf_a) - np.where(np.isinf(b), 0.0, b * pdf_b)
    return float(np.sum(m2 - 2 * rec * m1 + rec ** 2 * prob))


@lru_cache(maxsize=None)
def gaussian_uniform_step(bits: int) -> float:
    """Distortion-minimizing uniform step for a N(0, 1) input."""
    if bits < 1:
        raise ValueError("bits must be >= 1")
    if bits in _GAUSS_UNIFORM_STEP:
        return _GAUSS_UNIFORM_STEP[bits]
    hi = 8.0 / 2 ** bits * 2
    res = optimize.minimize_scalar(_uniform_mse, bounds=(1e-6, hi), args=(bits,),
                                   method="bounded", options={"xatol": 1e-12})
    return float(res.x)


@dataclass(frozen=True)
class Quantizer:
    """Symmetric mid-rise uniform quantizer for one real dimension."""

    bits: int
    step: float
    thresholds: np.ndarray = field(repr=False)
    levels: np.ndarray = field(repr=False)

    @property
    def n_levels(self) -> int:
        return 2 ** self.bits

    def bin(self, y) -> np.ndarray:
        """Interval label in ``0 .. 2**B - 1``; intervals are ``[lo, up)``."""
        return np.searchsorted(self.thresholds[1:-1], y, side="right")

    def bounds(self, bins):
        bins = np.asarray(bins)
        return self.thresholds[bins], self.thresholds[bins + 1]

    def reconstruct(self, bins) -> np.ndarray:
        return self.levels[np.asarray(bins)]


def design_quantizer(bits: int, input_std: float, step: float | None = None) -> Quantizer:
    """Uniform quantizer with step ``input_std * gaussian_uniform_step(bits)``.

    ``step`` overrides the Gaussian-matched choice.
    """
    if bits < 1:
        raise ValueError("bits must be >= 1")
    if input_std <= 0:
        raise ValueError("input_std must be positive")
    if step is None:
        step = input_std * gaussian_uniform_step(bits)
    if step <= 0:
        raise ValueError("step must be positive")
    n = 2 ** bits
    inner = step * (np.arange(1, n) - n / 2)
    thresholds = np.concatenate([[-np.inf], inner, [np.inf]])
    levels = step * (np.arange(n) - n / 2 + 0.5)
    return Quantizer(int(bits), float(step), thresholds, levels)


def agc_input_std(snr: float, n_users: int) -> float:
    """Per-real-dimension std of one received sample.

    Each antenna collects unit expected energy per user per unit training
    power, plus unit-variance complex noise.
    """
    return math.sqrt((snr * n_users + 1.0) / 2.0)


@dataclass(frozen=True)
class QuantizedObservation:
    bins: np.ndarray = field(repr=False)
    lo: np.ndarray = field(repr=False)
    up: np.ndarray = field(repr=False)
    unquantized: np.ndarray | None = field(default=None, repr=False)
    n_antennas: int = 0
    n_train: int = 0

    def __post_init__(self):
        if not (self.lo.shape == self.up.shape == self.bins.shape):
            raise ValueError("bins/lo/up must share a shape")
        if not np.all(self.lo < self.up):
            raise ValueError("every interval must satisfy lo < up")


def noisy_measurements(channel: ChannelInstance, train: TrainingSignal, seed) -> np.ndarray:
    """``vec(H S + V)`` with ``V`` i.i.d. CN(0, 1)."""
    H, S = channel.taps, train.stacked_matrix
    if H.shape[1] != S.shape[0]:
        raise ValueError(f"channel has {H.shape[1]} columns, training has {S.shape[0]} rows")
    rng = np.random.default_rng(seed)
    shape = (H.shape[0], S.shape[1])
    V = (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2)
    return (H @ S + V).ravel(order="F")


def observe(channel: ChannelInstance, train: TrainingSignal, quantizer: Quantizer,
            seed) -> QuantizedObservation:
    """Quantize the real and imaginary parts of every received sample."""
    y = lift(noisy_measurements(channel, train, seed))
    bins = quantizer.bin(y)
    lo, up = quantizer.bounds(bins)
    return QuantizedObservation(bins, lo, up, y, channel.taps.shape[0], train.n_train)


def time_rows(times, n_antennas: int) -> np.ndarray:
    """Complex measurement indices of all antennas at the given time slots."""
    times = np.asarray(times, dtype=int)
    return (times[:, None] * n_antennas + np.arange(n_antennas)[None, :]).ravel()


class SensingOperator:
    """Matrix-free ``A = (P S)^T kron B`` acting on ``vec(X)``.

    Only ``B`` (``M x R_aoa``) and ``G = P S`` (``R_delay*K x N``) are stored.
    """

    def __init__(self, aoa_dict: np.ndarray, effective_training: np.ndarray):
        self.aoa_dict = np.asarray(aoa_dict, dtype=complex)
        self.effective_training = np.asarray(effective_training, dtype=complex)
        self._bh = self.aoa_dict.conj().T
        self._gh = self.effective_training.conj().T

    @classmethod
    def from_parts(cls, dicts: DictionarySet, train: TrainingSignal) -> "SensingOperator":
        return cls(dicts.aoa_dict, dicts.pulse_matrix @ train.stacked_matrix)

    @property
    def n_antennas(self) -> int:
        return self.aoa_dict.shape[0]

    @property
    def n_train(self) -> int:
        return self.effective_training.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        m, r_aoa = self.aoa_dict.shape
        rows, n = self.effective_training.shape
        return m * n, r_aoa * rows

    def time_subset(self, times) -> "SensingOperator":
        """Operator restricted to the measurements at ``times``."""
        return SensingOperator(self.aoa_dict, self.effective_training[:, np.asarray(times, dtype=int)])

    def apply(self, x) -> np.ndarray:
        x = np.asarray(x)
        if x.size != self.shape[1]:
            raise ValueError(f"expected length {self.shape[1]}, got {x.size}")
        X = x.reshape((self.aoa_dict.shape[1], -1), order="F")
        return (self.aoa_dict @ (X @ self.effective_training)).ravel(order="F")

    def adjoint(self, y) -> np.ndarray:
        y = np.asarray(y)
        if y.size != self.shape[0]:
            raise ValueError(f"expected length {self.shape[0]}, got {y.size}")
        Y = y.reshape((self.n_antennas, -1), order="F")
        return ((self._bh @ Y) @ self._gh).ravel(order="F")

    def columns(self, idx) -> np.ndarray:
        """Dense columns ``A[:, idx]`` built as Kronecker factors."""
        idx = np.asarray(idx, dtype=int)
        r_aoa = self.aoa_dict.shape[1]
        b = self.aoa_dict[:, idx % r_aoa]                    # M x s
        g = self.effective_training[idx // r_aoa, :].T       # N x s
        return (g[:, None, :] * b[None, :, :]).reshape(self.shape[0], idx.size)

    def dense(self, cap: int = 10 ** 6) -> np.ndarray:
        rows, cols = self.shape
        if rows * cols > cap:
            raise ValueError(f"dense sensing matrix has {rows * cols} entries, cap is {cap}")
        return self.columns(np.arange(cols))


class DenseOperator:
    """Explicit-matrix counterpart of :class:`SensingOperator`."""

    def __init__(self, matrix: np.ndarray):
        self.matrix = np.asarray(matrix, dtype=complex)

    @property
    def shape(self) -> tuple[int, int]:
        return self.matrix.shape

    def apply(self, x) -> np.ndarray:
        return self.matrix @ np.asarray(x)

    def adjoint(self, y) -> np.ndarray:
        return self.matrix.conj().T @ np.asarray(y)

    def columns(self, idx) -> np.ndarray:
        return self.matrix[:, np.asarray(idx, dtype=int)]

    def dense(self, cap: int = 10 ** 6) -> np.ndarray:
        return self.matrix

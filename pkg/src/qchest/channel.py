"""
Wideband multipath channel model for a uniform linear receive array.

Each user's tap-domain channel is a superposition of a few paths,

    h_k[d] = sum_l  alpha_{k,l} * p_k(d*T - tau_{k,l}) * a(theta_{k,l}),

where ``a`` is the half-wavelength ULA response and ``p_k`` a raised-cosine
pulse.  The taps of all users are stored column-block-wise as
``H = [H[0] ... H[D-1]]`` with ``H[d]`` of shape ``(M, K)``.

The same pulse normalization is used for the delay dictionary, so a channel
whose angles and delays sit on grid points is exactly sparse in the virtual
(angle x delay) representation ``H = B X P``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

__all__ = [
    "SystemDims",
    "GridSpec",
    "PathParams",
    "ChannelInstance",
    "DictionarySet",
    "array_response",
    "rc_pulse",
    "path_pulse",
    "channel_taps",
    "sample_channel",
    "snap_to_grid",
    "build_dictionaries",
    "grid_index",
    "unvec_virtual",
    "reconstruct_channel",
]

# Half-width of the band around the removable singularity of the RC pulse,
# relative to the symbol period.
_RC_GUARD = 1e-8


@dataclass(frozen=True)
class SystemDims:
    """Array size, user count, tap count and per-user path count."""

    n_antennas: int
    n_users: int
    n_taps: int
    n_paths: int | tuple[int, ...] = 2
    period: float = 1.0

    def __post_init__(self):
        for name in ("n_antennas", "n_users", "n_taps"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.period <= 0:
            raise ValueError("period must be positive")
        paths = self.paths_per_user
        if len(paths) != self.n_users:
            raise ValueError("n_paths must be an int or one entry per user")
        if min(paths) < 1:
            raise ValueError("every user needs at least one path")

    @property
    def paths_per_user(self) -> tuple[int, ...]:
        if isinstance(self.n_paths, (int, np.integer)):
            return (int(self.n_paths),) * self.n_users
        return tuple(int(p) for p in self.n_paths)

    @property
    def total_paths(self) -> int:
        return sum(self.paths_per_user)


@dataclass(frozen=True)
class GridSpec:
    """Virtual-channel grid resolution.

    ``aoa_spacing`` is ``"sin"`` (uniform in sin(theta) over [-1, 1)) or
    ``"angle"`` (uniform in theta over [-pi/2, pi/2)).
    """

    n_aoa: int
    n_delay: int
    aoa_spacing: str = "sin"

    def __post_init__(self):
        if self.aoa_spacing not in ("sin", "angle"):
            raise ValueError(f"unknown aoa_spacing {self.aoa_spacing!r}")


@dataclass(frozen=True)
class PathParams:
    gain: complex
    aoa: float
    delay: float


@dataclass(frozen=True)
class ChannelInstance:
    paths: tuple[tuple[PathParams, ...], ...]
    taps: np.ndarray = field(repr=False)
    sampling_period: float = 1.0
    rolloff: float = 0.35

    @property
    def n_taps(self) -> int:
        return self.taps.shape[1] // len(self.paths)

    def tap(self, d: int) -> np.ndarray:
        """The ``M x K`` matrix ``H[d]``."""
        k = len(self.paths)
        return self.taps[:, d * k:(d + 1) * k]


@dataclass(frozen=True)
class DictionarySet:
    aoa_dict: np.ndarray = field(repr=False)
    delay_dicts: tuple[np.ndarray, ...] = field(repr=False)
    pulse_matrix: np.ndarray = field(repr=False)
    grid_aoas: np.ndarray = field(repr=False)
    grid_delays: np.ndarray = field(repr=False)

    @property
    def n_aoa(self) -> int:
        return self.aoa_dict.shape[1]

    @property
    def n_delay(self) -> int:
        return self.grid_delays.size

    @property
    def n_users(self) -> int:
        return len(self.delay_dicts)

    @property
    def size(self) -> int:
        """Length ``R`` of the vectorized virtual channel."""
        return self.n_aoa * self.n_delay * self.n_users


def array_response(aoa, m: int) -> np.ndarray:
    """Half-wavelength ULA response ``exp(j*pi*i*sin(aoa))``, i = 0..m-1.

    A scalar ``aoa`` gives a length-``m`` vector; an array of angles gives
    an ``(m, len(aoa))`` matrix with one response per column.
    """
    if m < 1:
        raise ValueError("m must be >= 1")
    aoa = np.asarray(aoa, dtype=float)
    i = np.arange(m)
    if aoa.ndim == 0:
        return np.exp(1j * np.pi * i * np.sin(aoa))
    return np.exp(1j * np.pi * np.outer(i, np.sin(aoa)))


def rc_pulse(t, rolloff: float = 0.35, period: float = 1.0):
    """Raised-cosine impulse response, unit peak at t = 0.

    The removable singularities at ``t = +-period / (2 * rolloff)`` are
    replaced by their limit ``(pi/4) * sinc(1 / (2 * rolloff))``.
    """
    if not 0 <= rolloff <= 1:
        raise ValueError("rolloff must lie in [0, 1]")
    if period <= 0:
        raise ValueError("period must be positive")
    t = np.asarray(t, dtype=float)
    x = t / period
    out = np.sinc(x)
    if rolloff == 0:
        return out if out.ndim else float(out)
    denom = 1.0 - (2.0 * rolloff * x) ** 2
    singular = np.abs(np.abs(x) - 1.0 / (2.0 * rolloff)) < _RC_GUARD
    safe = np.where(singular, 1.0, denom)
    out = out * np.cos(np.pi * rolloff * x) / safe
    out = np.where(singular, np.pi / 4 * np.sinc(1.0 / (2.0 * rolloff)), out)
    return out if out.ndim else float(out)


def path_pulse(delays, n_taps: int, n_paths: int, rolloff: float = 0.35,
               period: float = 1.0) -> np.ndarray:
    """Sampled pulse ``p(d*T - tau)`` for each delay, shape ``(len, n_taps)``.

    Each row is scaled to squared norm ``1 / n_paths`` so that a user with
    ``n_paths`` unit-variance paths has expected total energy equal to the
    array gain.
    """
    delays = np.atleast_1d(np.asarray(delays, dtype=float))
    t = np.arange(n_taps)[None, :] * period - delays[:, None]
    raw = rc_pulse(t, rolloff, period)
    norm = np.sqrt(n_paths * np.sum(raw ** 2, axis=1, keepdims=True))
    return raw / norm


def channel_taps(paths: Sequence[Sequence[PathParams]], n_antennas: int,
                 n_taps: int, rolloff: float = 0.35,
                 period: float = 1.0) -> np.ndarray:
    """Stack the per-path superposition into the ``M x (K*D)`` tap matrix."""
    n_users = len(paths)
    taps = np.zeros((n_antennas, n_users * n_taps), dtype=complex)
    for k, user_paths in enumerate(paths):
        if not user_paths:
            raise ValueError(f"user {k} has no paths")
        gains = np.array([p.gain for p in user_paths], dtype=complex)
        aoas = np.array([p.aoa for p in user_paths])
        delays = np.array([p.delay for p in user_paths])
        resp = array_response(aoas, n_antennas)                         # M x L
        pulses = path_pulse(delays, n_taps, len(user_paths), rolloff, period)  # L x D
        taps[:, k::n_users] = resp @ (gains[:, None] * pulses)
    return taps


def sample_channel(seed, dims: SystemDims, rolloff: float = 0.35) -> ChannelInstance:
    """Draw a random channel: CN(0,1) gains, uniform AoAs and delays."""
    rng = np.random.default_rng(seed)
    max_delay = (dims.n_taps - 1) * dims.period
    paths = []
    for n_k in dims.paths_per_user:
        gains = (rng.standard_normal(n_k) + 1j * rng.standard_normal(n_k)) / np.sqrt(2)
        aoas = rng.uniform(-np.pi / 2, np.pi / 2, n_k)
        delays = rng.uniform(0.0, max_delay, n_k)
        paths.append(tuple(PathParams(complex(g), float(a), float(t))
                           for g, a, t in zip(gains, aoas, delays)))
    paths = tuple(paths)
    taps = channel_taps(paths, dims.n_antennas, dims.n_taps, rolloff, dims.period)
    return ChannelInstance(paths, taps, dims.period, rolloff)


def snap_to_grid(channel: ChannelInstance, dicts: DictionarySet) -> ChannelInstance:
    """Move every path to its nearest grid angle (in sin domain) and delay."""
    sin_grid = np.sin(dicts.grid_aoas)
    snapped = []
    for user_paths in channel.paths:
        new = []
        for p in user_paths:
            ia = int(np.argmin(np.abs(sin_grid - np.sin(p.aoa))))
            it = int(np.argmin(np.abs(dicts.grid_delays - p.delay)))
            new.append(PathParams(p.gain, float(dicts.grid_aoas[ia]),
                                  float(dicts.grid_delays[it])))
        snapped.append(tuple(new))
    snapped = tuple(snapped)
    taps = channel_taps(snapped, channel.taps.shape[0], channel.n_taps,
                        channel.rolloff, channel.sampling_period)
    return ChannelInstance(snapped, taps, channel.sampling_period, channel.rolloff)


def _aoa_grid(n_aoa: int, spacing: str) -> np.ndarray:
    if spacing == "sin":
        return np.arcsin(-1.0 + 2.0 * np.arange(n_aoa) / n_aoa)
    return -np.pi / 2 + np.pi * np.arange(n_aoa) / n_aoa


def build_dictionaries(dims: SystemDims, grid: GridSpec,
                       rolloff: float = 0.35) -> DictionarySet:
    """AoA dictionary ``B`` and the block pulse matrix ``P``.

    ``P`` has shape ``(R_delay*K, K*D)``; its column ``d*K + k`` holds user
    ``k``'s delay dictionary for tap ``d`` in rows ``k*R_delay : (k+1)*R_delay``.
    """
    if grid.n_aoa < dims.n_antennas:
        raise ValueError("n_aoa must be >= n_antennas")
    if grid.n_delay < dims.n_taps:
        raise ValueError("n_delay must be >= n_taps")
    grid_aoas = _aoa_grid(grid.n_aoa, grid.aoa_spacing)
    aoa_dict = array_response(grid_aoas, dims.n_antennas)
    max_delay = (dims.n_taps - 1) * dims.period
    grid_delays = np.linspace(0.0, max_delay, grid.n_delay)

    k_users, n_delay, n_taps = dims.n_users, grid.n_delay, dims.n_taps
    delay_dicts = []
    pulse_matrix = np.zeros((n_delay * k_users, k_users * n_taps))
    for k, n_k in enumerate(dims.paths_per_user):
        block = path_pulse(grid_delays, n_taps, n_k, rolloff, dims.period)
        delay_dicts.append(block)
        pulse_matrix[k * n_delay:(k + 1) * n_delay, k::k_users] = block
    return DictionarySet(aoa_dict, tuple(delay_dicts), pulse_matrix,
                         grid_aoas, grid_delays)


def grid_index(aoa_idx: int, delay_idx: int, user: int, dicts: DictionarySet) -> int:
    """Position of virtual-channel entry (angle, delay, user) in ``vec(X)``."""
    return (user * dicts.n_delay + delay_idx) * dicts.n_aoa + aoa_idx


def unvec_virtual(x: np.ndarray, dicts: DictionarySet) -> np.ndarray:
    x = np.asarray(x)
    if x.size != dicts.size:
        raise ValueError(f"expected {dicts.size} coefficients, got {x.size}")
    return x.reshape((dicts.n_aoa, dicts.n_delay * dicts.n_users), order="F")


def reconstruct_channel(x, dicts: DictionarySet) -> np.ndarray:
    """Map a virtual-channel vector (or SparseEstimate) to ``H = B X P``."""
    coeffs = getattr(x, "coeffs", x)
    X = unvec_virtual(coeffs, dicts)
    return dicts.aoa_dict @ X @ dicts.pulse_matrix

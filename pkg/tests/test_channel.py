import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qchest.channel import (ChannelInstance, GridSpec, PathParams, SystemDims, array_response,
                            build_dictionaries, channel_taps, grid_index, path_pulse,
                            rc_pulse, reconstruct_channel, sample_channel, snap_to_grid)
from qchest.estimator import SparseEstimate

from conftest import crandn


def test_array_response_broadside_is_all_ones():
    np.testing.assert_allclose(array_response(0.0, 4), np.ones(4))


def test_array_response_thirty_degrees():
    np.testing.assert_allclose(array_response(np.pi / 6, 2), [1, 1j], atol=1e-15)


def test_array_response_negative_angle_is_conjugate():
    np.testing.assert_allclose(array_response(-np.pi / 6, 3),
                               np.conj(array_response(np.pi / 6, 3)), atol=1e-15)


def test_array_response_matrix_form():
    aoas = np.array([-0.4, 0.1, 1.2])
    mat = array_response(aoas, 5)
    assert mat.shape == (5, 3)
    for j, a in enumerate(aoas):
        np.testing.assert_allclose(mat[:, j], array_response(a, 5))


@given(st.floats(-np.pi / 2, np.pi / 2), st.integers(1, 64))
def test_array_response_norm_equals_m(aoa, m):
    assert np.linalg.norm(array_response(aoa, m)) ** 2 == pytest.approx(m, rel=1e-12)


def test_rc_pulse_peak_and_zero_crossings():
    assert rc_pulse(0.0) == 1.0
    for k in (1, 2, 3, -1, -5):
        assert abs(rc_pulse(float(k))) < 1e-15


def _rc_mp(t, beta):
    t = mpmath.mpf(t)
    return mpmath.sinc(mpmath.pi * t) * mpmath.cos(mpmath.pi * beta * t) / (1 - (2 * beta * t) ** 2)


@pytest.mark.parametrize("beta", [0.35, 0.25, 0.5, 1.0])
def test_rc_pulse_singular_point_matches_limit(beta):
    t0 = 1 / (2 * beta)
    with mpmath.workdps(50):
        # two-sided limit evaluated at high precision
        lim = mpmath.limit(lambda t: _rc_mp(t, mpmath.mpf(beta)), mpmath.mpf(t0))
    for sign in (1, -1):
        v = rc_pulse(sign * t0, beta)
        assert math.isfinite(v)
        assert v == pytest.approx(float(lim), rel=1e-12)


def test_rc_pulse_continuous_near_singularity():
    t0 = 1 / 0.7
    at = rc_pulse(t0)
    for eps in (1e-4, 1e-6, -1e-6):
        assert rc_pulse(t0 + eps) == pytest.approx(at, abs=2 * abs(eps))


@given(st.floats(-20, 20))
def test_rc_pulse_matches_mpmath_away_from_singularity(t):
    beta = 0.35
    if abs(abs(t) - 1 / (2 * beta)) < 1e-3:
        return
    with mpmath.workdps(30):
        ref = float(_rc_mp(t, mpmath.mpf(beta)))
    assert rc_pulse(t, beta) == pytest.approx(ref, rel=1e-9, abs=1e-14)


def test_rc_pulse_rejects_bad_arguments():
    with pytest.raises(ValueError):
        rc_pulse(0.0, rolloff=1.5)
    with pytest.raises(ValueError):
        rc_pulse(0.0, period=0.0)


def test_path_pulse_rows_have_norm_one_over_paths():
    p = path_pulse([0.3, 1.7, 2.9], 4, 3)
    np.testing.assert_allclose(np.sum(p ** 2, axis=1), 1 / 3)


def test_single_path_at_origin_is_scaled_ones():
    paths = ((PathParams(1.0, 0.0, 0.0),),)
    h = channel_taps(paths, 4, 1)
    np.testing.assert_allclose(h[:, 0], np.ones(4))


def test_sample_channel_is_deterministic():
    dims = SystemDims(8, 2, 3, (1, 2))
    a, b = sample_channel(99, dims), sample_channel(99, dims)
    assert a.paths == b.paths
    assert np.array_equal(a.taps, b.taps)
    assert not np.array_equal(a.taps, sample_channel(100, dims).taps)


def test_sample_channel_parameter_ranges():
    dims = SystemDims(8, 3, 4, 3)
    ch = sample_channel(1, dims)
    assert ch.taps.shape == (8, 12)
    for user in ch.paths:
        assert len(user) == 3
        for p in user:
            assert -np.pi / 2 <= p.aoa <= np.pi / 2
            assert 0 <= p.delay <= 3


def test_expected_energy_per_user_equals_antennas():
    dims = SystemDims(16, 2, 4, 2)
    energies = np.array([[np.sum(np.abs(sample_channel(s, dims).taps[:, k::2]) ** 2)
                          for k in range(2)] for s in range(10_000)])
    np.testing.assert_allclose(energies.mean(axis=0), 16, rtol=0.05)


def test_tap_accessor_matches_column_layout():
    ch = sample_channel(3, SystemDims(4, 2, 3, 1))
    for d in range(3):
        np.testing.assert_array_equal(ch.tap(d), ch.taps[:, 2 * d:2 * d + 2])


def test_dictionary_square_sin_grid_is_dft_type():
    dicts = build_dictionaries(SystemDims(4, 1, 2, 1), GridSpec(4, 2))
    B = dicts.aoa_dict
    np.testing.assert_allclose(np.abs(B), 1.0)
    np.testing.assert_allclose(B.conj().T @ B, 4 * np.eye(4), atol=1e-12)
    # columns are the 4-point DFT vectors up to ordering
    dft = np.exp(2j * np.pi * np.outer(np.arange(4), np.arange(4)) / 4)
    for j in range(4):
        assert np.max(np.abs(dft.conj().T @ B[:, j])) == pytest.approx(4)


def test_dictionary_grids():
    dicts = build_dictionaries(SystemDims(4, 2, 3, 1), GridSpec(8, 5))
    np.testing.assert_allclose(np.sin(dicts.grid_aoas), -1 + np.arange(8) / 4)
    np.testing.assert_allclose(dicts.grid_delays, np.linspace(0, 2, 5))
    angle = build_dictionaries(SystemDims(4, 2, 3, 1), GridSpec(8, 5, "angle"))
    np.testing.assert_allclose(np.diff(angle.grid_aoas), np.pi / 8)


def test_delay_blocks_on_sample_instants_are_identity():
    dicts = build_dictionaries(SystemDims(4, 2, 4, 1), GridSpec(4, 4))
    for block in dicts.delay_dicts:
        np.testing.assert_allclose(block, np.eye(4), atol=1e-15)


def test_pulse_matrix_shape_at_large_dims():
    dicts = build_dictionaries(SystemDims(64, 4, 8, 2), GridSpec(128, 16))
    assert dicts.pulse_matrix.shape == (64, 32)
    assert dicts.size == 128 * 16 * 4


def test_dictionary_rejects_coarse_grid():
    with pytest.raises(ValueError):
        build_dictionaries(SystemDims(8, 1, 4, 1), GridSpec(4, 4))
    with pytest.raises(ValueError):
        build_dictionaries(SystemDims(4, 1, 4, 1), GridSpec(4, 2))


def test_reconstruct_zero_and_linearity(rng):
    dicts = build_dictionaries(SystemDims(4, 2, 3, 2), GridSpec(8, 6))
    assert np.all(reconstruct_channel(np.zeros(dicts.size), dicts) == 0)
    x1, x2 = crandn(rng, dicts.size), crandn(rng, dicts.size)
    np.testing.assert_allclose(reconstruct_channel(x1 + x2, dicts),
                               reconstruct_channel(x1, dicts) + reconstruct_channel(x2, dicts),
                               atol=1e-12)


def test_one_hot_matches_single_on_grid_path():
    dims = SystemDims(6, 2, 3, 1)
    dicts = build_dictionaries(dims, GridSpec(12, 6))
    ia, it, k = 5, 3, 1
    paths = [(PathParams(1.0, float(dicts.grid_aoas[0]), 0.0),), None]
    paths[1] = (PathParams(1.0, float(dicts.grid_aoas[ia]), float(dicts.grid_delays[it])),)
    taps = channel_taps(paths, 6, 3)
    x = np.zeros(dicts.size, complex)
    x[grid_index(ia, it, k, dicts)] = 1.0
    x[grid_index(0, 0, 0, dicts)] = 1.0
    np.testing.assert_allclose(reconstruct_channel(SparseEstimate(x, ()), dicts), taps, atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_on_grid_channel_is_exactly_sparse(seed):
    dims = SystemDims(8, 2, 4, (2, 3))
    dicts = build_dictionaries(dims, GridSpec(16, 8))
    ch = snap_to_grid(sample_channel(seed, dims), dicts)
    x = np.zeros(dicts.size, complex)
    for k, user in enumerate(ch.paths):
        for p in user:
            ia = int(np.argmin(np.abs(dicts.grid_aoas - p.aoa)))
            it = int(np.argmin(np.abs(dicts.grid_delays - p.delay)))
            x[grid_index(ia, it, k, dicts)] += p.gain
    assert np.count_nonzero(x) <= dims.total_paths
    err = np.linalg.norm(reconstruct_channel(x, dicts) - ch.taps) / np.linalg.norm(ch.taps)
    assert err < 1e-10


def test_system_dims_validation():
    with pytest.raises(ValueError):
        SystemDims(0, 1, 1)
    with pytest.raises(ValueError):
        SystemDims(4, 2, 1, (1,))
    with pytest.raises(ValueError):
        SystemDims(4, 1, 1, 0)
    with pytest.raises(ValueError):
        GridSpec(4, 4, "log")
    assert SystemDims(4, 3, 2, (1, 2, 3)).total_paths == 6


def test_channel_instance_tap_count():
    ch = ChannelInstance(((), ()), np.zeros((3, 8)))
    assert ch.n_taps == 4

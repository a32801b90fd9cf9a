import math

import mpmath
import numpy as np
import pytest

from cellfree_ra.core import Regime, SystemConfig
from cellfree_ra.metrics import (
    AllocationResult,
    BeamformerSet,
    ScheduleMatrix,
    blocklengths,
    dispersion,
    fbl_bits,
    fbl_bits_raw,
    q_function,
    q_inverse,
    shannon_bits,
    sinr,
    sinr_grid,
    weighted_throughput,
)

from conftest import manual_channel, small_channel


def _wrap(h, w):
    return manual_channel(h), BeamformerSet(np.asarray(w, dtype=complex))


# ---------------------------------------------------------------------------
# SINR
# ---------------------------------------------------------------------------


def test_sinr_single_user_unit_gain():
    h = np.zeros((1, 2, 1, 1), complex)
    h[0, :, 0, 0] = [1.0, 0.0]
    ch, w = _wrap(h, h.copy())
    zeta = ScheduleMatrix.full(1, 1, 1)
    assert sinr(ch, w, zeta, 0, 0, 0) == pytest.approx(1.0, rel=1e-12)


def test_sinr_unscheduled_is_zero():
    h = np.ones((2, 2, 1, 1), complex)
    ch, w = _wrap(h, h.copy())
    z = np.ones((2, 1, 1), dtype=np.int8)
    z[0, 0, 0] = 0
    zeta = ScheduleMatrix(z)
    assert sinr(ch, w, zeta, 0, 0, 0) == 0.0


def test_sinr_orthogonal_users():
    h = np.zeros((2, 2, 1, 1), complex)
    h[0, :, 0, 0] = [1.0, 0.0]
    h[1, :, 0, 0] = [0.0, 1.0]
    w = np.zeros((2, 2, 1, 1), complex)
    w[0, :, 0, 0] = [2.0, 0.0]
    w[1, :, 0, 0] = [0.0, 2.0]
    ch, wset = _wrap(h, w)
    zeta = ScheduleMatrix.full(2, 1, 1)
    assert sinr(ch, wset, zeta, 0, 0, 0) == pytest.approx(4.0, rel=1e-12)
    assert sinr(ch, wset, zeta, 1, 0, 0) == pytest.approx(4.0, rel=1e-12)


def test_sinr_grid_matches_scalar():
    _, ch = small_channel(seed=17)
    rng = np.random.default_rng(1)
    w = BeamformerSet(rng.normal(size=ch.h.shape) + 1j * rng.normal(size=ch.h.shape))
    zeta = ScheduleMatrix(rng.integers(0, 2, size=(3, 2, 2)).astype(np.int8))
    grid = sinr_grid(ch, w, zeta)
    for k in range(3):
        for t in range(2):
            for f in range(2):
                assert grid[k, t, f] == pytest.approx(sinr(ch, w, zeta, k, t, f), rel=1e-12, abs=1e-15)


# ---------------------------------------------------------------------------
# Shannon bits
# ---------------------------------------------------------------------------


def test_shannon_bits_single_re():
    h = np.zeros((1, 1, 2, 2), complex)
    h[0, 0, 0, 0] = 1.0
    w = np.zeros((1, 1, 2, 2), complex)
    w[0, 0, 0, 0] = 1.0  # gamma = 1 on one RE, zero elsewhere
    ch, wset = _wrap(h, w)
    zeta = ScheduleMatrix.full(1, 2, 2)
    assert shannon_bits(ch, wset, zeta, 0) == pytest.approx(1.0, rel=1e-12)


def test_shannon_bits_two_res():
    h = np.zeros((1, 1, 2, 1), complex)
    h[0, 0, :, 0] = 1.0
    w = np.zeros((1, 1, 2, 1), complex)
    w[0, 0, :, 0] = math.sqrt(3.0)  # gamma = 3 on both REs
    ch, wset = _wrap(h, w)
    zeta = ScheduleMatrix.full(1, 2, 1)
    assert shannon_bits(ch, wset, zeta, 0) == pytest.approx(4.0, rel=1e-12)


def test_shannon_bits_nothing_scheduled():
    _, ch = small_channel(seed=3)
    w = BeamformerSet(np.ones(ch.h.shape, complex))
    zeta = ScheduleMatrix.empty(3, 2, 2)
    assert shannon_bits(ch, w, zeta, 0) == 0.0


# ---------------------------------------------------------------------------
# Dispersion and the inverse Gaussian tail
# ---------------------------------------------------------------------------


def test_dispersion_values():
    assert dispersion(0.0) == 0.0
    assert dispersion(1.0) == pytest.approx(0.75, rel=1e-15)
    assert dispersion(1e6) == pytest.approx(1.0, abs=1e-11)


def test_dispersion_range_and_monotone():
    g = np.linspace(0.0, 1e4, 1000)
    v = dispersion(g)
    assert np.all((v >= 0.0) & (v < 1.0))
    assert np.all(np.diff(v) > 0)


def _qinv_oracle(eps: float) -> float:
    # high-precision inversion of the Gaussian tail via mpmath bisection
    mpmath.mp.dps = 50
    target = mpmath.mpf(eps)
    f = lambda x: mpmath.erfc(x / mpmath.sqrt(2)) / 2 - target
    lo, hi = mpmath.mpf(-10), mpmath.mpf(10)
    for _ in range(200):
        mid = (lo + hi) / 2
        if f(mid) > 0:
            lo = mid
        else:
            hi = mid
    return float((lo + hi) / 2)


def test_q_inverse_examples():
    assert q_inverse(0.5) == 0.0
    assert q_inverse(0.0227501319481792) == pytest.approx(2.0, abs=1e-9)
    assert q_inverse(1e-5) == pytest.approx(4.264890794, abs=1e-8)


def test_q_inverse_against_oracle_grid():
    for eps in [0.5] + [10.0 ** (-k) for k in range(1, 10)]:
        assert q_inverse(eps) == pytest.approx(_qinv_oracle(eps), abs=1e-9)


def test_q_inverse_round_trip():
    for eps in np.geomspace(1e-9, 0.49, 40):
        assert q_function(q_inverse(float(eps))) == pytest.approx(eps, rel=1e-9, abs=1e-12)


def test_q_inverse_domain():
    for bad in (0.0, 1.0, -0.1, 1.5):
        with pytest.raises(ValueError):
            q_inverse(bad)


# ---------------------------------------------------------------------------
# FBL bits
# ---------------------------------------------------------------------------


def test_fbl_bits_nothing_scheduled():
    _, ch = small_channel(seed=3)
    w = BeamformerSet(np.ones(ch.h.shape, complex))
    zeta = ScheduleMatrix.empty(3, 2, 2)
    assert fbl_bits(ch, w, zeta, 0, 1e-5) == 0.0
    assert fbl_bits_raw(ch, w, zeta, 0, 1e-5) == 0.0


def test_fbl_bits_one_re_hand_composed():
    # gamma = 1 on a single RE: raw = 1 - Qinv(1e-5) sqrt(0.75)
    h = np.zeros((1, 1, 1, 1), complex)
    h[0, 0, 0, 0] = 1.0
    ch, w = _wrap(h, h.copy())
    zeta = ScheduleMatrix.full(1, 1, 1)
    expected = 1.0 - 4.264890793922602 * math.sqrt(0.75)
    raw = fbl_bits_raw(ch, w, zeta, 0, 1e-5)
    assert raw == pytest.approx(expected, rel=1e-9)
    assert raw == pytest.approx(-2.6935, abs=5e-5)
    assert fbl_bits(ch, w, zeta, 0, 1e-5) == 0.0


def test_fbl_equals_shannon_at_eps_half():
    _, ch = small_channel(seed=5)
    rng = np.random.default_rng(2)
    w = BeamformerSet(rng.normal(size=ch.h.shape) + 1j * rng.normal(size=ch.h.shape))
    zeta = ScheduleMatrix(rng.integers(0, 2, size=(3, 2, 2)).astype(np.int8))
    for k in range(3):
        assert fbl_bits(ch, w, zeta, k, 0.5) == pytest.approx(shannon_bits(ch, w, zeta, k), rel=1e-12)


def test_fbl_monotone_in_sinr():
    # clamped bits never decrease when any per-RE SINR is nudged up
    rng = np.random.default_rng(7)
    qinv = q_inverse(1e-5)

    def clamped(gammas):
        rate = np.sum(np.log2(1 + gammas))
        pen = qinv * math.sqrt(np.sum(dispersion(gammas)))
        return max(0.0, rate - pen)

    for _ in range(200):
        n = int(rng.integers(1, 7))
        g = rng.uniform(0.0, 50.0, size=n)
        base = clamped(g)
        j = int(rng.integers(0, n))
        bumped = g.copy()
        bumped[j] += rng.uniform(1e-4, 1.0)
        assert clamped(bumped) >= base - 1e-12


# ---------------------------------------------------------------------------
# Weighted throughput and blocklengths
# ---------------------------------------------------------------------------


def test_weighted_throughput_weighted_sum():
    cfg, ch = small_channel(seed=11, K=2, T=1, F=2, weights=(1.0, 1.0), min_bits=0.0)
    rng = np.random.default_rng(3)
    w = BeamformerSet(0.01 * (rng.normal(size=ch.h.shape) + 1j * rng.normal(size=ch.h.shape)))
    zeta = ScheduleMatrix.full(2, 1, 2)
    res = weighted_throughput(ch, w, zeta, cfg, Regime.INFBL)
    assert res.weighted_throughput == pytest.approx(float(np.sum(res.per_user_bits)), rel=1e-9)
    assert res.per_user_bits[0] == pytest.approx(shannon_bits(ch, w, zeta, 0), rel=1e-12)


def test_weighted_throughput_power_infeasible():
    cfg, ch = small_channel(seed=11, K=2, T=1, F=2, min_bits=0.0)
    # enormous beamformers blow the per-slot budget
    w = BeamformerSet(1e6 * np.ones(ch.h.shape, complex))
    zeta = ScheduleMatrix.full(2, 1, 2)
    res = weighted_throughput(ch, w, zeta, cfg, Regime.INFBL)
    assert not res.feasible


def test_fbl_wtp_below_infbl_wtp():
    cfg, ch = small_channel(seed=19, bler=1e-5, min_bits=0.0)
    rng = np.random.default_rng(4)
    w = BeamformerSet(rng.normal(size=ch.h.shape) + 1j * rng.normal(size=ch.h.shape))
    zeta = ScheduleMatrix(rng.integers(0, 2, size=(3, 2, 2)).astype(np.int8))
    fbl = weighted_throughput(ch, w, zeta, cfg, Regime.FBL)
    infbl = weighted_throughput(ch, w, zeta, cfg, Regime.INFBL)
    assert fbl.weighted_throughput <= infbl.weighted_throughput + 1e-12


def test_qos_uses_raw_bits():
    cfg, ch = small_channel(seed=23, K=1, T=1, F=1, min_bits=0.5, bler=1e-5)
    h = ch.h
    w = BeamformerSet(h / np.abs(h).max() * 0.01)
    zeta = ScheduleMatrix.full(1, 1, 1)
    res = weighted_throughput(ch, w, zeta, cfg, Regime.FBL)
    if res.raw_per_user_bits[0] < 0.5:
        assert not res.feasible
        assert res.per_user_bits[0] >= 0.0  # clamped for accounting


def test_blocklengths():
    z = np.zeros((2, 6, 1), dtype=np.int8)
    z[0, :, 0] = [1, 0, 1, 0, 1, 0]
    zeta = ScheduleMatrix(z)
    L = blocklengths(zeta)
    assert L[0, 0] == 3
    assert L[1, 0] == 0
    full = ScheduleMatrix.full(2, 6, 1)
    assert np.all(blocklengths(full) == 6)
    assert np.all(blocklengths(full) <= 6)
    res_shape = zeta.blocklengths().shape
    assert res_shape == (2, 1)


def test_schedule_matrix_validation():
    with pytest.raises(ValueError):
        ScheduleMatrix(np.array([[[2]]]))
    with pytest.raises(ValueError):
        ScheduleMatrix(np.zeros((2, 2)))

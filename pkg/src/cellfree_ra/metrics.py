"""Closed-form throughput math: SINR, Shannon bits, short-packet bits.

The short-packet (normal approximation) bit count for user k is

    Phi_k = sum_{scheduled REs} log2(1 + gamma) - Qinv(eps) * sqrt(sum V),

with channel dispersion V = 1 - (1 + gamma)^-2.  Phi_k can go negative
at low SINR; the raw value feeds the QoS constraint while throughput
accounting clamps it at zero.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .core import Regime, SystemConfig, derive_power_budget
from .channel import ChannelRealization

POWER_TOL = 1e-9  # relative slack on the per-slot power constraint


@dataclass(frozen=True)
class ScheduleMatrix:
    """Binary indicator over (user, slot, subcarrier); 1 = scheduled."""

    zeta: np.ndarray  # (K, T, F) of {0, 1}

    def __post_init__(self):
        arr = np.asarray(self.zeta)
        if arr.ndim != 3:
            raise ValueError(f"schedule must be (K, T, F), got shape {arr.shape}")
        if not np.isin(arr, (0, 1)).all():
            raise ValueError("schedule entries must be 0 or 1")
        arr = arr.astype(np.int8)
        arr.setflags(write=False)
        object.__setattr__(self, "zeta", arr)

    @classmethod
    def full(cls, K: int, T: int, F: int) -> "ScheduleMatrix":
        return cls(np.ones((K, T, F), dtype=np.int8))

    @classmethod
    def empty(cls, K: int, T: int, F: int) -> "ScheduleMatrix":
        return cls(np.zeros((K, T, F), dtype=np.int8))

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.zeta.shape

    def users_in_re(self, t: int, f: int) -> np.ndarray:
        return np.flatnonzero(self.zeta[:, t, f])

    def satisfies_su(self) -> bool:
        return bool((self.zeta.sum(axis=0) <= 1).all())

    def is_full(self) -> bool:
        return bool((self.zeta == 1).all())

    def blocklengths(self) -> np.ndarray:
        """L[k, f] = number of slots user k occupies on subcarrier f."""
        return self.zeta.sum(axis=1).astype(int)

    def key(self) -> bytes:
        return self.zeta.tobytes()


@dataclass(frozen=True)
class BeamformerSet:
    """Stacked beamforming vectors, shape (K, N*M, T, F)."""

    w: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.w, dtype=complex)
        if arr.ndim != 4:
            raise ValueError(f"beamformers must be (K, NM, T, F), got shape {arr.shape}")
        arr.setflags(write=False)
        object.__setattr__(self, "w", arr)

    def slot_power(self, t: int) -> float:
        return float(np.sum(np.abs(self.w[:, :, t, :]) ** 2))

    def slot_powers(self) -> np.ndarray:
        return np.sum(np.abs(self.w) ** 2, axis=(0, 1, 3))


@dataclass(frozen=True)
class AllocationResult:
    per_user_bits: np.ndarray  # (K,), clamped at 0 in the FBL regime
    raw_per_user_bits: np.ndarray  # (K,), unclamped, for QoS checking
    weighted_throughput: float
    per_user_blocklength: np.ndarray  # (K, F) integer
    feasible: bool
    trace: tuple[float, ...] = ()
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        for name in ("per_user_bits", "raw_per_user_bits", "per_user_blocklength"):
            arr = np.asarray(getattr(self, name))
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)


# ---------------------------------------------------------------------------
# SINR and rate expressions
# ---------------------------------------------------------------------------


def sinr_grid(ch: ChannelRealization, w: BeamformerSet, zeta: ScheduleMatrix) -> np.ndarray:
    """SINR for every (k, t, f) with scheduling indicators applied.

    Unscheduled users get exactly 0 and unscheduled interferers
    contribute nothing.
    """
    z = zeta.zeta.astype(float)  # (K,T,F)
    # inner[k,j,t,f] = h_k^H w_j
    inner = np.einsum("katf,jatf->kjtf", ch.h.conj(), w.w)
    p = np.abs(inner) ** 2 * z[None, :, :, :]  # mask interferer/desired by zeta_j
    K = ch.n_users
    diag = p[np.arange(K), np.arange(K)]  # |h_k^H w_k|^2 * zeta_k
    interference = p.sum(axis=1) - diag
    return diag * z / (interference + ch.combined_noise)


def sinr(ch: ChannelRealization, w: BeamformerSet, zeta: ScheduleMatrix, k: int, t: int, f: int) -> float:
    z = zeta.zeta
    if z[k, t, f] == 0:
        return 0.0
    hk = ch.h[k, :, t, f]
    num = abs(np.vdot(hk, w.w[k, :, t, f])) ** 2
    interf = 0.0
    for j in range(ch.n_users):
        if j != k and z[j, t, f] == 1:
            interf += abs(np.vdot(hk, w.w[j, :, t, f])) ** 2
    return float(num / (interf + ch.combined_noise[k, t, f]))


def shannon_bits(ch: ChannelRealization, w: BeamformerSet, zeta: ScheduleMatrix, k: int) -> float:
    """Shannon bits over the whole T x F grid for user k."""
    g = sinr_grid(ch, w, zeta)[k]
    return float(np.sum(np.log2(1.0 + g)))


def dispersion(gamma):
    """Channel dispersion V = 1 - (1 + gamma)^-2, in [0, 1)."""
    g = np.asarray(gamma, dtype=float)
    v = 1.0 - 1.0 / (1.0 + g) ** 2
    return float(v) if np.isscalar(gamma) else v


# Rational approximation of the probit (inverse standard normal CDF),
# absolute error below 1.2e-9 everywhere, then one Newton step against
# the double-precision erfc brings it to machine accuracy.
_PROBIT_A = (
    -3.969683028665376e01, 2.209460984245205e02, -2.759285104469687e02,
    1.383577518672690e02, -3.066479806614716e01, 2.506628277459239e00,
)
_PROBIT_B = (
    -5.447609879822406e01, 1.615858368580409e02, -1.556989798598866e02,
    6.680131188771972e01, -1.328068155288572e01,
)
_PROBIT_C = (
    -7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e00,
    -2.549732539343734e00, 4.374664141464968e00, 2.938163982698783e00,
)
_PROBIT_D = (
    7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e00,
    3.754408661907416e00,
)
_PROBIT_P_LOW = 0.02425


def _probit_approx(p: float) -> float:
    a, b, c, d = _PROBIT_A, _PROBIT_B, _PROBIT_C, _PROBIT_D
    if p < _PROBIT_P_LOW:
        q = math.sqrt(-2.0 * math.log(p))
        return (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) / (
            (((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0
        )
    if p <= 1.0 - _PROBIT_P_LOW:
        q = p - 0.5
        r = q * q
        return (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q / (
            ((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0
        )
    q = math.sqrt(-2.0 * math.log(1.0 - p))
    return -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) / (
        (((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0
    )


def q_inverse(eps: float) -> float:
    """Inverse Gaussian tail: returns x with Q(x) = eps, Q the standard
    normal complementary CDF.  Accurate to well under 1e-9 absolute."""
    if not (0.0 < eps < 1.0):
        raise ValueError(f"eps must lie in (0, 1), got {eps!r}")
    if eps == 0.5:
        return 0.0
    x = _probit_approx(eps)
    # Newton step on Phi(x) - eps, with Phi via erfc for tail accuracy.
    phi_x = 0.5 * math.erfc(-x / math.sqrt(2.0))
    pdf = math.exp(-0.5 * x * x) / math.sqrt(2.0 * math.pi)
    x -= (phi_x - eps) / pdf
    return -x


def q_function(x: float) -> float:
    """Standard Gaussian tail Q(x) = P(Z > x)."""
    return 0.5 * math.erfc(x / math.sqrt(2.0))


def fbl_bits_raw(ch: ChannelRealization, w: BeamformerSet, zeta: ScheduleMatrix, k: int, eps: float) -> float:
    """Unclamped normal-approximation bits for user k (may be negative).

    Sums run over scheduled REs only; an unscheduled RE has gamma = 0
    and contributes zero to both the rate and the dispersion sums.
    """
    g = sinr_grid(ch, w, zeta)[k]
    mask = zeta.zeta[k].astype(bool)
    g = np.where(mask, g, 0.0)
    rate = float(np.sum(np.log2(1.0 + g)))
    v_sum = float(np.sum(dispersion(g[mask])))
    return rate - q_inverse(eps) * math.sqrt(v_sum)


def fbl_bits(ch: ChannelRealization, w: BeamformerSet, zeta: ScheduleMatrix, k: int, eps: float) -> float:
    """Normal-approximation bits clamped at zero for throughput accounting."""
    return max(0.0, fbl_bits_raw(ch, w, zeta, k, eps))


def blocklengths(zeta: ScheduleMatrix) -> np.ndarray:
    return zeta.blocklengths()


def weighted_throughput(
    ch: ChannelRealization,
    w: BeamformerSet,
    zeta: ScheduleMatrix,
    cfg: SystemConfig,
    regime: Regime,
    trace: tuple[float, ...] = (),
    diagnostics: dict | None = None,
) -> AllocationResult:
    """Evaluate an allocation: per-user bits, weighted sum, feasibility.

    Feasibility means every user's raw bit count reaches its demand and
    every slot respects the power budget (with tiny relative slack).
    """
    K = ch.n_users
    g = sinr_grid(ch, w, zeta)
    mask = zeta.zeta.astype(bool)
    rates = np.sum(np.log2(1.0 + np.where(mask, g, 0.0)), axis=(1, 2))
    if regime is Regime.INFBL:
        raw = rates
        clamped = rates.copy()
    else:
        qinv = q_inverse(cfg.bler)
        v = np.where(mask, dispersion(g), 0.0).sum(axis=(1, 2))
        raw = rates - qinv * np.sqrt(v)
        clamped = np.maximum(raw, 0.0)

    weights = np.asarray(cfg.weights, dtype=float)
    min_bits = np.asarray(cfg.min_bits, dtype=float)
    p_t = derive_power_budget(cfg)
    chi = w.w * zeta.zeta[:, None, :, :]
    slot_power = np.sum(np.abs(chi) ** 2, axis=(0, 1, 3))
    power_ok = bool(np.all(slot_power <= p_t * (1.0 + POWER_TOL)))
    feasible = power_ok and bool(np.all(raw >= min_bits - 1e-12))
    return AllocationResult(
        per_user_bits=clamped,
        raw_per_user_bits=raw,
        weighted_throughput=float(np.dot(weights, clamped)),
        per_user_blocklength=zeta.blocklengths(),
        feasible=feasible,
        trace=tuple(trace),
        diagnostics=diagnostics or {},
    )

"""Topology and per-RE channel generation for cell-free and colocated layouts.

Channel model: each (user, AP) pair gets a distance-dependent amplitude
gain eta = 1 / (1 + (d/D)^eta0); the small-scale part is i.i.d. CN(0,1)
per antenna, slot, and subcarrier, so the per-entry variance is eta^2.
A colocated deployment is the same machinery with every antenna at the
origin, which also collapses the per-AP quantization structure.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import (
    Deployment,
    STREAM_CHANNEL,
    STREAM_TOPOLOGY_APS,
    STREAM_TOPOLOGY_USERS,
    SystemConfig,
    derive_rng,
)

# Distances below this are clamped during generation to keep gains finite.
MIN_DISTANCE_M = 1.0


@dataclass(frozen=True)
class Topology:
    ap_positions: np.ndarray  # (N, 2), meters
    user_positions: np.ndarray  # (K, 2), meters
    deployment: Deployment

    def __post_init__(self):
        for name in ("ap_positions", "user_positions"):
            arr = np.asarray(getattr(self, name), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)


@dataclass(frozen=True)
class ChannelRealization:
    """Stacked channels h of shape (K, N*M, T, F) plus derived noise terms.

    combined_noise[k,t,f] = sigma_e^2 * ||h_k^{tf}||^2 + sigma^2 is the
    denominator constant of the SINR (quantization plus background).
    """

    h: np.ndarray  # complex, (K, N*M, T, F)
    noise_power: float
    quantization_noise_power: float
    combined_noise: np.ndarray  # (K, T, F)

    def __post_init__(self):
        self.h.setflags(write=False)
        self.combined_noise.setflags(write=False)

    @property
    def n_users(self) -> int:
        return self.h.shape[0]

    @property
    def n_antennas(self) -> int:
        return self.h.shape[1]

    @property
    def n_slots(self) -> int:
        return self.h.shape[2]

    @property
    def n_subcarriers(self) -> int:
        return self.h.shape[3]

    def gram(self, k: int, t: int, f: int) -> np.ndarray:
        """Rank-one Hermitian outer product h h^H for one (user, RE)."""
        hk = self.h[k, :, t, f]
        return np.outer(hk, hk.conj())


def _uniform_disc(rng: np.random.Generator, n: int, radius: float) -> np.ndarray:
    rad = radius * np.sqrt(rng.random(n))
    ang = 2.0 * np.pi * rng.random(n)
    return np.stack([rad * np.cos(ang), rad * np.sin(ang)], axis=1)


def generate_topology(cfg: SystemConfig, deployment: Deployment) -> Topology:
    """Drop users (and APs, when cell-free) uniformly in the disc.

    Users draw from their own substream so the same seed gives the same
    user drop under either deployment, which keeps cross-deployment
    comparisons paired.
    """
    users = _uniform_disc(
        derive_rng(cfg.rng_seed, STREAM_TOPOLOGY_USERS), cfg.n_users, cfg.cell_radius_m
    )
    if deployment is Deployment.CENTRALIZED:
        aps = np.zeros((cfg.n_aps, 2))
    else:
        aps = _uniform_disc(
            derive_rng(cfg.rng_seed, STREAM_TOPOLOGY_APS), cfg.n_aps, cfg.cell_radius_m
        )
    return Topology(ap_positions=aps, user_positions=users, deployment=deployment)


def path_gain(distance_m, cfg: SystemConfig):
    """Amplitude gain 1 / (1 + (d/D)^eta0); accepts scalars or arrays."""
    d = np.asarray(distance_m, dtype=float)
    g = 1.0 / (1.0 + (d / cfg.reference_distance_m) ** cfg.path_loss_exponent)
    return float(g) if np.isscalar(distance_m) else g


def generate_channels(topology: Topology, cfg: SystemConfig) -> ChannelRealization:
    K, N, M = cfg.n_users, cfg.n_aps, cfg.antennas_per_ap
    T, F = cfg.n_slots, cfg.n_subcarriers
    dist = np.linalg.norm(
        topology.user_positions[:, None, :] - topology.ap_positions[None, :, :], axis=2
    )
    gain = path_gain(np.maximum(dist, MIN_DISTANCE_M), cfg)  # (K, N)

    rng = derive_rng(cfg.rng_seed, STREAM_CHANNEL)
    shape = (K, N, M, T, F)
    hbar = (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2.0)
    h = (gain[:, :, None, None, None] * hbar).reshape(K, N * M, T, F)

    q = float(cfg.quantization_noise_power or 0.0)
    combined = q * np.sum(np.abs(h) ** 2, axis=1) + float(cfg.noise_power)
    return ChannelRealization(
        h=h,
        noise_power=float(cfg.noise_power),
        quantization_noise_power=q,
        combined_noise=combined,
    )


def capacity_gap(user_pos, topology: Topology, cfg: SystemConfig) -> float:
    """Pure power-law capacity difference between the distributed layout
    and a single colocated site at the origin, in bits:

        log2( sum_n (D/d_n)^eta0 ) - log2( (D/d_0)^eta0 )

    Uses the unclamped power law, so zero distances are an error.
    """
    if topology.deployment is not Deployment.CELL_FREE:
        raise ValueError("capacity_gap is defined for cell-free topologies")
    pos = np.asarray(user_pos, dtype=float)
    d_n = np.linalg.norm(topology.ap_positions - pos[None, :], axis=1)
    d_0 = float(np.linalg.norm(pos))
    if np.any(d_n == 0.0) or d_0 == 0.0:
        raise ValueError("capacity_gap is singular at zero distance")
    D, eta0 = cfg.reference_distance_m, cfg.path_loss_exponent
    return float(np.log2(np.sum((D / d_n) ** eta0)) - np.log2((D / d_0) ** eta0))


def dump_channels_csv(ch: ChannelRealization, path: str | Path) -> None:
    """Portable dump with columns (k, antenna, t, f, re, im)."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["k", "antenna", "t", "f", "re", "im"])
        K, A, T, F = ch.h.shape
        for k in range(K):
            for a in range(A):
                for t in range(T):
                    for f in range(F):
                        v = ch.h[k, a, t, f]
                        writer.writerow([k, a, t, f, format(v.real, ".9g"), format(v.imag, ".9g")])


def load_channels_csv(path: str | Path, noise_power: float, quantization_noise_power: float) -> ChannelRealization:
    """Inverse of dump_channels_csv (values round to 9 significant digits)."""
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        for row in reader:
            rows.append(row)
    K = max(int(r["k"]) for r in rows) + 1
    A = max(int(r["antenna"]) for r in rows) + 1
    T = max(int(r["t"]) for r in rows) + 1
    F = max(int(r["f"]) for r in rows) + 1
    h = np.zeros((K, A, T, F), dtype=complex)
    for r in rows:
        h[int(r["k"]), int(r["antenna"]), int(r["t"]), int(r["f"])] = float(r["re"]) + 1j * float(r["im"])
    q = float(quantization_noise_power)
    combined = q * np.sum(np.abs(h) ** 2, axis=1) + float(noise_power)
    return ChannelRealization(
        h=h,
        noise_power=float(noise_power),
        quantization_noise_power=q,
        combined_noise=combined,
    )

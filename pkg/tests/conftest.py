import numpy as np
import pytest

from cellfree_ra.channel import ChannelRealization, Topology, generate_channels, generate_topology
from cellfree_ra.core import Deployment, GaConfig, SolverConfig, SystemConfig


def small_config(seed=0, K=3, N=2, M=2, T=2, F=2, **kw) -> SystemConfig:
    defaults = dict(
        n_aps=N,
        antennas_per_ap=M,
        n_users=K,
        n_slots=T,
        n_subcarriers=F,
        min_bits=0.0,
        rng_seed=seed,
    )
    defaults.update(kw)
    return SystemConfig(**defaults)


def small_channel(seed=0, deployment=Deployment.CELL_FREE, **kw):
    cfg = small_config(seed=seed, **kw)
    topo = generate_topology(cfg, deployment)
    return cfg, generate_channels(topo, cfg)


def manual_channel(h, noise_power=1.0, quantization_noise_power=0.0) -> ChannelRealization:
    """Channel realization with hand-picked coefficients."""
    h = np.asarray(h, dtype=complex)
    combined = quantization_noise_power * np.sum(np.abs(h) ** 2, axis=1) + noise_power
    return ChannelRealization(
        h=h,
        noise_power=noise_power,
        quantization_noise_power=quantization_noise_power,
        combined_noise=combined,
    )


@pytest.fixture
def quiet_cvxpy():
    import warnings

    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        yield

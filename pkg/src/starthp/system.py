"""System configuration, Rayleigh channels, DU partitioning and ULA steering.

All randomness flows through :func:`trial_rng`, so a ``(seed, trial)`` pair
fully determines every channel a simulation draws.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .exceptions import ConfigurationError

ARCHITECTURES = ("hybrid", "digital")


@dataclass(frozen=True)
class SystemConfig:
    """Dimensions, powers and quantization of one simulated cell.

    Parameters
    ----------
    n_tx : int
        Transmit antennas at the base station.
    n_users : int
        Number of served users ``K``.
    n_user_ants : int
        Receive antennas per user; the total stream count is
        ``n_users * n_user_ants``.
    n_clusters : int
        Number of decentralized units (DUs) the array is split into.
    du_sizes : sequence of int, optional
        Antennas per DU. Defaults to an equal split, which requires
        ``n_tx`` to be divisible by ``n_clusters``.
    n_rx_sense : int, optional
        Sensing receive antennas. Defaults to ``n_tx``.
    power : float
        Total transmit power (linear).
    noise_var : float
        Per-user noise variance.
    phase_bits : int
        Resolution of the analog phase shifters.
    antenna_spacing : float
        ULA spacing in wavelengths.
    architecture : {"hybrid", "digital"}
        Whether DUs drive their antennas through quantized phase shifters.
    seed : int
        Root seed for all random draws.
    """

    n_tx: int = 64
    n_users: int = 8
    n_user_ants: int = 1
    n_clusters: int = 4
    du_sizes: Optional[tuple] = None
    n_rx_sense: Optional[int] = None
    power: float = 1.0
    noise_var: float = 0.1
    phase_bits: int = 4
    antenna_spacing: float = 0.5
    architecture: str = "hybrid"
    seed: int = 0

    def __post_init__(self):
        for name in ("n_tx", "n_users", "n_user_ants", "n_clusters", "phase_bits"):
            value = getattr(self, name)
            if isinstance(value, bool) or not isinstance(value, (int, np.integer)) or value < 1:
                raise ConfigurationError(f"{name} must be a positive integer, got {value!r}")
        if self.du_sizes is None:
            if self.n_tx % self.n_clusters:
                raise ConfigurationError(
                    f"n_tx={self.n_tx} is not divisible by n_clusters={self.n_clusters}; "
                    "pass du_sizes explicitly")
            sizes = (self.n_tx // self.n_clusters,) * self.n_clusters
        else:
            sizes = tuple(int(s) for s in self.du_sizes)
        object.__setattr__(self, "du_sizes", sizes)
        if len(sizes) != self.n_clusters:
            raise ConfigurationError(
                f"du_sizes has {len(sizes)} entries but n_clusters={self.n_clusters}")
        if any(s < 1 for s in sizes):
            raise ConfigurationError(f"every DU needs at least one antenna, got {sizes}")
        if sum(sizes) != self.n_tx:
            raise ConfigurationError(f"du_sizes sum to {sum(sizes)}, expected n_tx={self.n_tx}")
        if self.n_streams > self.n_tx:
            raise ConfigurationError(
                f"n_users*n_user_ants={self.n_streams} exceeds n_tx={self.n_tx}")
        if self.n_rx_sense is None:
            object.__setattr__(self, "n_rx_sense", self.n_tx)
        elif self.n_rx_sense < 1:
            raise ConfigurationError("n_rx_sense must be positive")
        if not self.power > 0:
            raise ConfigurationError(f"power must be positive, got {self.power}")
        if not self.noise_var > 0:
            raise ConfigurationError(f"noise_var must be positive, got {self.noise_var}")
        if not self.antenna_spacing > 0:
            raise ConfigurationError("antenna_spacing must be positive")
        if self.architecture not in ARCHITECTURES:
            raise ConfigurationError(
                f"architecture must be one of {ARCHITECTURES}, got {self.architecture!r}")
        if self.architecture == "hybrid" and self.n_streams > min(sizes):
            raise ConfigurationError(
                f"hybrid DUs need at least n_streams={self.n_streams} antennas each, "
                f"smallest DU has {min(sizes)}")

    @property
    def n_streams(self) -> int:
        return self.n_users * self.n_user_ants

    @property
    def du_slices(self) -> list:
        """Row slices of the antenna axis owned by each DU."""
        edges = np.concatenate([[0], np.cumsum(self.du_sizes)])
        return [slice(int(a), int(b)) for a, b in zip(edges[:-1], edges[1:])]

    @property
    def user_slices(self) -> list:
        n = self.n_user_ants
        return [slice(k * n, (k + 1) * n) for k in range(self.n_users)]


@dataclass(frozen=True)
class ChannelSet:
    """Per-user channels, their stacked form and the per-DU partition.

    ``partition[k][l]`` is the ``N_k x N_l`` block of user ``k`` seen by DU ``l``.
    """

    per_user: tuple
    stacked: np.ndarray
    partition: tuple
    du_sizes: tuple

    @classmethod
    def from_stacked(cls, H, n_user_ants=1, du_sizes=None):
        H = np.asarray(H, dtype=complex)
        if H.ndim != 2:
            raise ConfigurationError(f"stacked channel must be 2-D, got shape {H.shape}")
        n, n_tx = H.shape
        if n % n_user_ants:
            raise ConfigurationError(f"{n} rows do not split into users of {n_user_ants}")
        du_sizes = (n_tx,) if du_sizes is None else tuple(int(s) for s in du_sizes)
        if sum(du_sizes) != n_tx:
            raise ConfigurationError(f"du_sizes sum to {sum(du_sizes)}, expected {n_tx}")
        H = H.copy()
        H.setflags(write=False)
        per_user = tuple(H[k:k + n_user_ants] for k in range(0, n, n_user_ants))
        edges = np.concatenate([[0], np.cumsum(du_sizes)])
        partition = tuple(
            tuple(Hk[:, a:b] for a, b in zip(edges[:-1], edges[1:])) for Hk in per_user)
        return cls(per_user=per_user, stacked=H, partition=partition, du_sizes=du_sizes)

    @property
    def n_users(self) -> int:
        return len(self.per_user)

    @property
    def n_clusters(self) -> int:
        return len(self.du_sizes)

    def cluster(self, l) -> np.ndarray:
        """All users' blocks for DU ``l`` stacked row-wise (``N x N_l``)."""
        return np.vstack([blocks[l] for blocks in self.partition])


@dataclass(frozen=True)
class SensingScene:
    """Target and clutter description for the monostatic sensing link."""

    target_angle: float
    target_gain: complex = 1.0
    noise_cov: np.ndarray = field(default=None, repr=False)
    interferer_angles: tuple = ()
    interferer_gains: tuple = ()

    def __post_init__(self):
        if not abs(self.target_gain) > 0:
            raise ConfigurationError("target_gain must be nonzero")
        if len(self.interferer_angles) != len(self.interferer_gains):
            raise ConfigurationError("interferer_angles and interferer_gains differ in length")
        if self.noise_cov is not None:
            R = np.asarray(self.noise_cov, dtype=complex)
            if R.ndim != 2 or R.shape[0] != R.shape[1]:
                raise ConfigurationError(f"noise_cov must be square, got {R.shape}")
            if np.max(np.abs(R - R.conj().T)) > 1e-12:
                raise ConfigurationError("noise_cov is not Hermitian")
            if np.linalg.eigvalsh(R).min() <= 0:
                raise ConfigurationError("noise_cov is not positive definite")
            object.__setattr__(self, "noise_cov", R)

    @classmethod
    def white(cls, target_angle, n_rx, noise_var=1.0, target_gain=1.0):
        return cls(target_angle=target_angle, target_gain=target_gain,
                   noise_cov=noise_var * np.eye(n_rx))


def trial_seed(seed: int, trial: int) -> int:
    """Seed of one Monte-Carlo trial; independent of scheduling order."""
    return int(seed) ^ int(trial)


def trial_rng(seed: int, trial: int = 0, redraw: int = 0) -> np.random.Generator:
    s = trial_seed(seed, trial)
    if redraw:
        return np.random.default_rng([s, redraw])
    return np.random.default_rng(s)


def complex_normal(rng, shape):
    """Circularly-symmetric CN(0, 1) samples."""
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2)


def gen_rayleigh_channels(cfg: SystemConfig, rng=None) -> ChannelSet:
    """Draw i.i.d. unit-variance Rayleigh channels for every user.

    Parameters
    ----------
    cfg : SystemConfig
    rng : numpy.random.Generator, optional
        Defaults to a generator seeded with ``cfg.seed``.
    """
    if not isinstance(cfg, SystemConfig):
        raise ConfigurationError("cfg must be a SystemConfig")
    if rng is None:
        rng = np.random.default_rng(cfg.seed)
    H = complex_normal(rng, (cfg.n_streams, cfg.n_tx))
    return ChannelSet.from_stacked(H, n_user_ants=cfg.n_user_ants, du_sizes=cfg.du_sizes)


def steering_vector(psi, n, delta=0.5) -> np.ndarray:
    """ULA response ``exp(j 2 pi delta i sin(psi))`` for ``i = 0..n-1``."""
    if n < 1:
        raise ConfigurationError("antenna count must be >= 1")
    return np.exp(2j * np.pi * delta * np.arange(n) * np.sin(psi))


def steering_derivative(psi, n, delta=0.5) -> np.ndarray:
    """Derivative of :func:`steering_vector` with respect to ``psi``."""
    i = np.arange(n)
    return 2j * np.pi * delta * i * np.cos(psi) * steering_vector(psi, n, delta)


def with_overrides(cfg: SystemConfig, **changes) -> SystemConfig:
    """``dataclasses.replace`` that recomputes default DU sizes when needed."""
    from dataclasses import asdict

    params = asdict(cfg)
    if ("n_tx" in changes or "n_clusters" in changes) and "du_sizes" not in changes:
        params["du_sizes"] = None
    params.update(changes)
    return SystemConfig(**params)


def validate_channel(H, min_rows=1) -> np.ndarray:
    """Return ``H`` as a finite 2-D complex array or raise."""
    H = np.asarray(H)
    if H.ndim != 2:
        raise ConfigurationError(f"expected a 2-D channel matrix, got shape {H.shape}")
    if H.shape[0] < min_rows or H.shape[1] < 1:
        raise ConfigurationError(f"channel has empty dimension: {H.shape}")
    H = H.astype(complex, copy=False)
    if not np.all(np.isfinite(H)):
        raise ConfigurationError("channel contains NaN or inf")
    return H


__all__ = [
    "SystemConfig", "ChannelSet", "SensingScene", "gen_rayleigh_channels",
    "steering_vector", "steering_derivative", "trial_seed", "trial_rng",
    "complex_normal", "with_overrides", "validate_channel",
]

"""Sensing CRB, per-user/sum rate and residual multi-user interference."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import ConfigurationError, DegenerateGeometryError
from .precoders import precoding_matrix
from .system import ChannelSet, SensingScene, steering_derivative, steering_vector

# Below this trace / (upper bound of the trace) the geometry carries no
# information about the angle.
_DEGENERATE_RTOL = 1e-15


@dataclass(frozen=True)
class CrbResult:
    value: float
    direction: float


@dataclass(frozen=True)
class RateReport:
    per_user: np.ndarray
    sum: float
    snr_db: float = float("nan")


def _as_channels(channels) -> ChannelSet:
    if isinstance(channels, ChannelSet):
        return channels
    return ChannelSet.from_stacked(channels)


def steering_derivative_matrix(psi, n, delta=0.5) -> np.ndarray:
    """``d/dpsi [a a^T] = a' a^T + a a'^T`` for an ``n``-element ULA."""
    a = steering_vector(psi, n, delta)
    da = steering_derivative(psi, n, delta)
    return np.outer(da, a) + np.outer(a, da)


def crb(precoder, scene: SensingScene, n_tx=None, delta=0.5) -> CrbResult:
    """Cramer-Rao bound on the target angle for a given precoder.

    ``CRB = 1 / (2 |xi_0|^2 tr(F^H A'^H R_N^{-1} A' F))`` with ``F`` the
    ``N_t x N`` precoding matrix and ``A'`` the angle derivative of
    ``a(psi) a(psi)^T`` at the target direction.
    """
    F = precoding_matrix(precoder)
    if n_tx is None:
        n_tx = F.shape[0]
    if F.shape[0] != n_tx:
        raise ConfigurationError(f"precoder has {F.shape[0]} rows, expected n_tx={n_tx}")
    RN = np.eye(n_tx) if scene.noise_cov is None else scene.noise_cov
    if RN.shape != (n_tx, n_tx):
        raise ConfigurationError(
            f"noise covariance is {RN.shape}, the CRB needs {n_tx}x{n_tx}")
    dA = steering_derivative_matrix(scene.target_angle, n_tx, delta)
    AF = dA @ F
    trace = float(np.real(np.vdot(AF, np.linalg.solve(RN, AF))))
    # ||dA||_2 <= 4 pi delta (n-1) n for unit-modulus steering entries.
    bound = (4 * (2 * np.pi * delta * max(n_tx - 1, 1)) ** 2 * n_tx ** 2
             * np.linalg.norm(F) ** 2 / np.linalg.eigvalsh(RN).min())
    if not trace > _DEGENERATE_RTOL * bound:
        raise DegenerateGeometryError(
            f"no angle information at psi={scene.target_angle:.6g} (trace={trace:.3g})")
    value = 1.0 / (2.0 * abs(scene.target_gain) ** 2 * trace)
    return CrbResult(value=value, direction=float(scene.target_angle))


def effective_channel(channels, precoder, feedback_inv=None) -> np.ndarray:
    """``H F`` or, for THP, ``H F B^{-1}``."""
    H = _as_channels(channels).stacked
    M = H @ precoding_matrix(precoder)
    if feedback_inv is not None:
        M = M @ feedback_inv
    return M


def _user_rows(channels):
    rows, start = [], 0
    for Hk in channels.per_user:
        rows.append(np.arange(start, start + Hk.shape[0]))
        start += Hk.shape[0]
    return rows


def mui_power(channels, precoder, feedback_inv=None) -> float:
    """Energy of the effective channel outside the per-user diagonal blocks."""
    channels = _as_channels(channels)
    M = effective_channel(channels, precoder, feedback_inv)
    off = np.abs(M) ** 2
    for r in _user_rows(channels):
        off[np.ix_(r, r)] = 0
    return float(off.sum())


def sum_rate(channels, precoder, noise_var, feedback=None, snr_db=float("nan")) -> RateReport:
    """Per-user rates in bits/s/Hz.

    ``R_k = log2 det(I + S_k (sigma^2 I + sum_{j != k} I_jk)^{-1})`` on the
    effective channel ``M = H F``. With ``feedback`` (the unit lower
    triangular THP matrix ``B``), interference the transmitter pre-subtracts,
    ``M_ii B_ij`` for ``j < i``, is removed before the rates are evaluated.
    """
    if not noise_var > 0:
        raise ConfigurationError(f"noise_var must be positive, got {noise_var}")
    channels = _as_channels(channels)
    M = effective_channel(channels, precoder)
    residual = M.copy()
    if feedback is not None:
        residual = M - np.diag(M)[:, None] * feedback
    rates = []
    for r in _user_rows(channels):
        others = np.setdiff1d(np.arange(M.shape[1]), r)
        S = M[np.ix_(r, r)]
        Z = residual[np.ix_(r, others)]
        cov = noise_var * np.eye(len(r)) + Z @ Z.conj().T
        K = np.eye(len(r)) + S @ S.conj().T @ np.linalg.inv(cov)
        sign, logdet = np.linalg.slogdet(K)
        rates.append(max(logdet / np.log(2), 0.0))
    per_user = np.array(rates)
    return RateReport(per_user=per_user, sum=float(per_user.sum()), snr_db=float(snr_db))

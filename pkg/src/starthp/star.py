"""Star decentralized baseband processing (DBP) round for ZF/MMSE THP.

One round:

1. every DU uploads the ``N x N`` Gram matrix of its local (effective) channel;
2. the CU sums the Grams, adds ``xi I`` in MMSE mode and Cholesky-factorizes
   the aggregate into ``R``;
3. the CU broadcasts ``R``;
4. each DU forms its own feedforward slice ``(H^l)^H R^{-1}``, the shared
   ``G``/``B^{-1}`` and the power scale, all from ``R`` and local data.

Transport is in-process; every payload is logged with its serialized size.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
from scipy.linalg import cholesky, solve_triangular

from .exceptions import ConfigurationError, SingularChannelError
from .precoders import (
    AnalogBlock, LinearPrecoder, ThpFilters, assemble_hybrid, filters_from_r,
    matched_analog, mmse_regularization, thp_precancel, TAU_QPSK, _RANK_TOL,
)
from .system import ChannelSet, SystemConfig

BYTES_PER_ELEMENT = 16  # complex128
MODES = ("zf", "mmse")


@dataclass
class MessageLog:
    """Byte-accounted record of the CU/DU exchanges of one round."""

    per_message: list = field(default_factory=list)

    def record(self, direction, du_index, element_count, label=""):
        if direction not in ("up", "down"):
            raise ValueError(f"direction must be 'up' or 'down', got {direction!r}")
        self.per_message.append(
            (direction, int(du_index), int(element_count),
             int(element_count) * BYTES_PER_ELEMENT, label))

    def _total(self, direction):
        return sum(rec[3] for rec in self.per_message if rec[0] == direction)

    @property
    def uplink_bytes(self) -> int:
        return self._total("up")

    @property
    def downlink_bytes(self) -> int:
        return self._total("down")

    def elements(self, direction) -> int:
        return sum(rec[2] for rec in self.per_message if rec[0] == direction)

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["direction", "du", "elements", "bytes"])
            for direction, du, n, nbytes, _ in self.per_message:
                writer.writerow([direction, du, n, nbytes])


@dataclass(frozen=True)
class DuState:
    """What DU ``index`` holds before and after a round."""

    index: int
    local_channel: tuple
    analog: Optional[AnalogBlock] = None
    local_feedforward: Optional[np.ndarray] = None
    local_digital: Optional[np.ndarray] = None
    feedback_inv: Optional[np.ndarray] = None
    feedback: Optional[np.ndarray] = None
    weighting: Optional[np.ndarray] = None
    scale: float = 1.0

    @property
    def n_antennas(self) -> int:
        return self.local_channel[0].shape[1]

    @property
    def local_analog(self):
        return None if self.analog is None else self.analog.phases

    @property
    def effective_channel(self) -> np.ndarray:
        """Local stacked channel as seen through this DU's analog stage."""
        H = np.vstack(self.local_channel)
        return H if self.analog is None else H @ self.analog.basis

    @property
    def antenna_feedforward(self) -> np.ndarray:
        """Unscaled feedforward rows for this DU's antennas."""
        if self.analog is None:
            return self.local_feedforward
        return self.analog.basis @ self.local_feedforward


@dataclass(frozen=True)
class CuResult:
    R: np.ndarray
    gram: np.ndarray
    xi: float


@dataclass(frozen=True)
class DecentralizedPrecoder:
    """Outcome of a star round: finalized DUs plus the shared THP filters."""

    per_du: tuple
    filters: ThpFilters
    mode: str
    precoder: object
    scale: float

    def transmit(self, symbols, modulo_base=TAU_QPSK) -> np.ndarray:
        """Each DU runs the (replicated) THP loop and drives its own antennas."""
        return np.concatenate(
            [du_transmit(du, symbols, modulo_base) for du in self.per_du], axis=-1)


def make_du_states(channels: ChannelSet, cfg: SystemConfig) -> list:
    """Initial DU states; hybrid DUs choose their analog block locally."""
    states = []
    for l in range(channels.n_clusters):
        blocks = tuple(channels.partition[k][l] for k in range(channels.n_users))
        analog = None
        if cfg.architecture == "hybrid":
            analog = matched_analog(np.vstack(blocks), cfg.phase_bits)
        states.append(DuState(index=l, local_channel=blocks, analog=analog))
    return states


def du_upload_gram(du: DuState, log: Optional[MessageLog] = None) -> np.ndarray:
    """The ``N x N`` Gram contribution ``H^l (H^l)^H`` of one DU."""
    Hl = du.effective_channel
    gram = Hl @ Hl.conj().T
    gram = 0.5 * (gram + gram.conj().T)
    if log is not None:
        log.record("up", du.index, gram.size, "gram")
    return gram


def cu_aggregate_and_factorize(contribs, mode="zf", xi=0.0) -> CuResult:
    """Sum the Gram contributions and factor ``sum + xi I = R^H R``."""
    if mode not in MODES:
        raise ConfigurationError(f"mode must be one of {MODES}, got {mode!r}")
    if not contribs:
        raise ConfigurationError("need at least one Gram contribution")
    shape = contribs[0].shape
    if any(c.shape != shape for c in contribs):
        raise ConfigurationError("Gram contributions have inconsistent shapes")
    gram = np.sum(contribs, axis=0)
    xi = float(xi) if mode == "mmse" else 0.0
    try:
        R = cholesky(gram + xi * np.eye(shape[0]), lower=False)
    except np.linalg.LinAlgError as exc:
        raise SingularChannelError("aggregate Gram matrix is not positive definite") from exc
    r = np.diag(R).real
    if r.min() <= _RANK_TOL * r.max():
        raise SingularChannelError(
            f"aggregate Gram matrix is rank deficient at stream {int(np.argmin(r))}")
    return CuResult(R=R, gram=gram, xi=xi)


def _local_scale(R, xi, power) -> float:
    # ||F||^2 = tr(R^{-H} (R^H R - xi I) R^{-1}) = N - xi ||R^{-1}||_F^2
    n = R.shape[0]
    norm2 = n
    if xi:
        Rinv = solve_triangular(R, np.eye(n, dtype=complex), lower=False)
        norm2 = n - xi * np.linalg.norm(Rinv) ** 2
    return float(np.sqrt(power / norm2))


def du_finalize(du: DuState, R, xi=0.0, power=1.0, log: Optional[MessageLog] = None) -> DuState:
    """Local feedforward, shared filters and digital block from the broadcast ``R``."""
    if log is not None:
        log.record("down", du.index, R.size, "R")
    Hl = du.effective_channel
    if Hl.shape[0] != R.shape[0]:
        raise ConfigurationError(f"R is {R.shape}, DU {du.index} serves {Hl.shape[0]} streams")
    # (H^l)^H R^{-1}
    local_ff = solve_triangular(R.conj().T, Hl, lower=True).conj().T
    shared = filters_from_r(None, R, xi)
    scale = _local_scale(R, xi, power)
    digital = None
    if du.analog is not None:
        digital = du.analog.digital_for(scale * local_ff)
    return replace(du, local_feedforward=local_ff, local_digital=digital,
                   feedback_inv=shared.feedback_inv, feedback=shared.feedback,
                   weighting=shared.weighting, scale=scale)


def du_transmit(du: DuState, symbols, modulo_base=TAU_QPSK) -> np.ndarray:
    v = thp_precancel(symbols, du.feedback, modulo_base)
    if du.analog is None:
        return v @ (du.scale * du.local_feedforward).T
    return v @ (du.analog.phases @ du.local_digital).T


def run_star_round(channels: ChannelSet, cfg: SystemConfig, mode="zf", xi=None, executor=None):
    """Execute upload, aggregate/factorize, broadcast and finalize.

    Parameters
    ----------
    channels : ChannelSet
        Partitioned with ``cfg.du_sizes``.
    cfg : SystemConfig
    mode : {"zf", "mmse"}
    xi : float, optional
        MMSE regularization; defaults to :func:`mmse_regularization` for
        ``cfg``. Ignored in ZF mode.
    executor : concurrent.futures.Executor, optional
        Runs the DU-side steps concurrently; results do not depend on it.

    Returns
    -------
    DecentralizedPrecoder, MessageLog
    """
    if mode not in MODES:
        raise ConfigurationError(f"mode must be one of {MODES}, got {mode!r}")
    if tuple(channels.du_sizes) != tuple(cfg.du_sizes):
        raise ConfigurationError(
            f"channel partition {channels.du_sizes} does not match du_sizes {cfg.du_sizes}")
    if xi is None:
        xi = mmse_regularization(cfg.n_streams, cfg.noise_var, cfg.power) if mode == "mmse" else 0.0
    xi = xi if mode == "mmse" else 0.0
    run = map if executor is None else executor.map

    log = MessageLog()
    states = make_du_states(channels, cfg)
    grams = list(run(du_upload_gram, states))
    for du, g in zip(states, grams):
        log.record("up", du.index, g.size, "gram")
    cu = cu_aggregate_and_factorize(grams, mode, xi)
    states = list(run(lambda du: du_finalize(du, cu.R, cu.xi, cfg.power), states))
    for du in states:
        log.record("down", du.index, cu.R.size, "R")

    feedforward = np.vstack([du.antenna_feedforward for du in states])
    first = states[0]
    filters = ThpFilters(feedforward=feedforward, feedback_inv=first.feedback_inv,
                         weighting=first.weighting, feedback=first.feedback, R=cu.R, xi=cu.xi)
    if cfg.architecture == "hybrid":
        precoder = assemble_hybrid([du.analog for du in states],
                                   [du.local_digital for du in states],
                                   cfg.du_sizes, first.scale)
    else:
        precoder = LinearPrecoder(matrix=first.scale * feedforward, scale=first.scale)
    result = DecentralizedPrecoder(per_du=tuple(states), filters=filters, mode=mode,
                                   precoder=precoder, scale=first.scale)
    return result, log


def expected_message_counts(n_streams, n_clusters) -> dict:
    """Element counts a round must log: Gram up and ``R`` down, per DU."""
    per_du = n_streams * n_streams
    return {"up": n_clusters * per_du, "down": n_clusters * per_du}

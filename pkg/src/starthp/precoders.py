"""Precoder construction: CZF, ZF/MMSE Tomlinson-Harashima filters and the
partially connected hybrid analog/digital split.

Conventions used throughout:

* ``H`` is the stacked ``N x N_t`` downlink channel, one row per stream.
* THP filters come from an upper-triangular ``R`` with real positive diagonal
  such that ``R^H R = H H^H`` (ZF) or ``H H^H + xi I`` (MMSE). The feedforward
  is ``F = H^H R^{-1}``, the weighting ``G = diag(1/r_ii)`` and the feedback
  ``B = G R^H`` is unit lower triangular, so ``G H F B^{-1} = I`` for ZF.
* Analog entries are taken from a b-bit phase codebook by table lookup, so
  set membership is exact.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_triangular

from .exceptions import ConfigurationError, SingularChannelError
from .system import SystemConfig, validate_channel

TAU_QPSK = 2.0 * np.sqrt(2.0)
# Variance of the modulo-reduced THP sequence for unit-energy QPSK (tau^2 / 6).
THP_SEQUENCE_VAR = TAU_QPSK ** 2 / 6.0
QPSK = np.array([1 + 1j, -1 + 1j, -1 - 1j, 1 - 1j]) / np.sqrt(2)

_RANK_TOL = 1e-10


@dataclass(frozen=True)
class ThpFilters:
    """Feedforward ``F``, inverse feedback ``B^{-1}`` and weighting ``G``.

    ``feedback`` (``B`` itself) and ``R`` are kept alongside so the symbol loop
    does not have to invert ``feedback_inv``.
    """

    feedforward: np.ndarray
    feedback_inv: np.ndarray
    weighting: np.ndarray
    feedback: np.ndarray
    R: np.ndarray
    xi: float = 0.0

    @property
    def gains(self) -> np.ndarray:
        return np.diag(self.weighting).real

    @property
    def n_streams(self) -> int:
        return self.R.shape[0]


@dataclass(frozen=True)
class LinearPrecoder:
    """Full-digital precoder ``W`` with ``||W||_F^2 = P``."""

    matrix: np.ndarray
    scale: float = 1.0


@dataclass(frozen=True)
class HybridPrecoder:
    """Block-diagonal analog stage and stacked digital stage.

    ``analog`` is ``N_t x (L * n_rf)``: DU ``l`` owns ``n_rf`` RF chains, each
    wired to every antenna of that DU and to nothing else (``mask``).
    ``digital`` is ``(L * n_rf) x N`` and already includes ``scale``.
    """

    analog: np.ndarray
    digital: np.ndarray
    mask: np.ndarray
    scale: float = 1.0

    @property
    def matrix(self) -> np.ndarray:
        return self.analog @ self.digital


def precoding_matrix(precoder) -> np.ndarray:
    """The ``N_t x N`` matrix mapping streams to antennas."""
    if isinstance(precoder, (LinearPrecoder, HybridPrecoder)):
        return precoder.matrix
    return np.asarray(precoder, dtype=complex)


# -- linear algebra helpers -------------------------------------------------

def _positive_qr(A):
    """Reduced QR with a real, non-negative diagonal of ``R``."""
    Q, R = np.linalg.qr(A)
    d = np.diag(R)
    phase = np.ones_like(d)
    nz = np.abs(d) > 0
    phase[nz] = d[nz] / np.abs(d[nz])
    Q = Q * phase
    R = phase.conj()[:, None] * R
    R[np.diag_indices_from(R)] = np.abs(d)
    return Q, R


def _check_rank(r_diag, what):
    r = np.abs(r_diag)
    if r.size == 0 or r.max() == 0 or r.min() <= _RANK_TOL * r.max():
        k = int(np.argmin(r)) if r.size else 0
        raise SingularChannelError(
            f"{what} is rank deficient: stream {k} has no independent direction")


def filters_from_r(feedforward, R, xi=0.0) -> ThpFilters:
    """Assemble THP filters from an upper-triangular ``R`` with positive diagonal."""
    r = np.diag(R).real
    G = np.diag(1.0 / r)
    # B^{-1} = (R^H)^{-1} G^{-1}
    feedback_inv = solve_triangular(R.conj().T, np.diag(r.astype(complex)), lower=True)
    feedback = G @ R.conj().T
    feedback[np.diag_indices_from(feedback)] = 1.0
    return ThpFilters(feedforward=feedforward, feedback_inv=feedback_inv, weighting=G,
                      feedback=feedback, R=R, xi=float(xi))


def mmse_regularization(n_streams, noise_var, power) -> float:
    """Noise-to-signal ratio used by MMSE-THP.

    The per-stream signal variance is that of the modulo-reduced THP sequence
    at power ``P / N``.
    """
    return n_streams * noise_var / (power * THP_SEQUENCE_VAR)


# -- precoders ----------------------------------------------------------------

def czf_precoder(H, power=1.0) -> LinearPrecoder:
    """Channel-inversion zero forcing, ``W ~ H^H (H H^H)^{-1}``, ``||W||^2 = P``."""
    H = validate_channel(H)
    n, n_tx = H.shape
    if n > n_tx:
        raise SingularChannelError(
            f"ZF needs N <= N_t, got N={n} streams for N_t={n_tx} antennas")
    _, R = _positive_qr(H.conj().T)
    _check_rank(np.diag(R), "channel")
    # H^H (H H^H)^{-1} = Q R^{-H}
    W = H.conj().T @ np.linalg.inv(H @ H.conj().T)
    scale = np.sqrt(power) / np.linalg.norm(W)
    return LinearPrecoder(matrix=scale * W, scale=float(scale))


def thp_zf_filters(H) -> ThpFilters:
    """ZF-THP filters from ``H^H = Q R``; ``F = Q``, ``G = diag(1/r_ii)``."""
    H = validate_channel(H)
    n, n_tx = H.shape
    if n > n_tx:
        raise SingularChannelError(
            f"ZF-THP needs N <= N_t, got N={n} streams for N_t={n_tx} antennas")
    Q, R = _positive_qr(H.conj().T)
    _check_rank(np.diag(R), "channel")
    return filters_from_r(Q, R)


def thp_mmse_filters(H, xi) -> ThpFilters:
    """MMSE-THP filters for noise-to-signal ratio ``xi``.

    Factorizes the augmented channel ``[H^H; sqrt(xi) I] = Q R`` so that
    ``R^H R = H H^H + xi I``; the feedforward is the top ``N_t`` rows of ``Q``,
    equal to ``H^H R^{-1}``. ``xi = 0`` gives :func:`thp_zf_filters`.
    """
    if xi < 0:
        raise ConfigurationError(f"xi must be non-negative, got {xi}")
    if xi == 0:
        return thp_zf_filters(H)
    H = validate_channel(H)
    n, n_tx = H.shape
    aug = np.vstack([H.conj().T, np.sqrt(xi) * np.eye(n)])
    Q, R = _positive_qr(aug)
    _check_rank(np.diag(R), "regularized channel")
    return filters_from_r(Q[:n_tx], R, xi=xi)


def thp_filters(H, mode="zf", xi=0.0) -> ThpFilters:
    if mode == "zf":
        return thp_zf_filters(H)
    if mode == "mmse":
        return thp_mmse_filters(H, xi)
    raise ConfigurationError(f"unknown THP mode {mode!r}")


# -- analog stage -------------------------------------------------------------

def phase_codebook(bits) -> np.ndarray:
    """The ``2**bits`` unit-modulus phase shifter states, quarter turns exact."""
    if bits < 1:
        raise ConfigurationError("phase_bits must be >= 1")
    theta = 2 * np.pi * np.arange(2 ** bits) / 2 ** bits
    c, s = np.cos(theta), np.sin(theta)
    c[np.abs(c) < 1e-15] = 0.0
    s[np.abs(s) < 1e-15] = 0.0
    return c + 1j * s


def quantize_phase(values, bits) -> np.ndarray:
    """Nearest b-bit phase of each entry's argument (ties toward +angle)."""
    n_states = 2 ** bits
    step = 2 * np.pi / n_states
    k = np.floor(np.angle(values) / step + 0.5).astype(np.int64) % n_states
    return phase_codebook(bits)[k]


def connectivity_mask(du_sizes, n_rf) -> np.ndarray:
    """Partially connected wiring: DU ``l``'s ``n_rf`` chains feed only DU ``l``."""
    n_tx = int(sum(du_sizes))
    mask = np.zeros((n_tx, len(du_sizes) * n_rf), dtype=bool)
    row = 0
    for l, size in enumerate(du_sizes):
        mask[row:row + size, l * n_rf:(l + 1) * n_rf] = True
        row += size
    return mask


def _block_diag(blocks) -> np.ndarray:
    rows = sum(b.shape[0] for b in blocks)
    cols = sum(b.shape[1] for b in blocks)
    out = np.zeros((rows, cols), dtype=complex)
    r = c = 0
    for b in blocks:
        out[r:r + b.shape[0], c:c + b.shape[1]] = b
        r += b.shape[0]
        c += b.shape[1]
    return out


def hybrid_decompose(F_target, cfg: SystemConfig, mask=None) -> HybridPrecoder:
    """Approximate a digital precoder with the partially connected hybrid.

    Each DU quantizes the phases of its rows of ``F_target`` to form its
    analog block and solves for its digital block by least squares. The
    product is then rescaled to total power ``cfg.power``.

    Parameters
    ----------
    F_target : ndarray, shape (N_t, N)
    cfg : SystemConfig
        Supplies ``du_sizes``, ``phase_bits`` and ``power``.
    mask : ndarray of bool, optional
        Connectivity pattern; defaults to :func:`connectivity_mask` with one RF
        chain per stream in every DU.
    """
    F_target = np.asarray(F_target, dtype=complex)
    n_tx, n = F_target.shape
    if n_tx != sum(cfg.du_sizes):
        raise ConfigurationError(f"F_target has {n_tx} rows, config has {sum(cfg.du_sizes)} antennas")
    if mask is None:
        mask = connectivity_mask(cfg.du_sizes, n)
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != (n_tx, cfg.n_clusters * n):
        raise ConfigurationError(f"mask shape {mask.shape} does not match {(n_tx, cfg.n_clusters * n)}")
    empty = np.flatnonzero(~mask.any(axis=1))
    if empty.size:
        raise ConfigurationError(f"antenna {empty[0]} is not connected to any RF chain")

    analog = np.zeros(mask.shape, dtype=complex)
    digital = np.zeros((mask.shape[1], n), dtype=complex)
    for l, rows in enumerate(cfg.du_slices):
        cols = slice(l * n, (l + 1) * n)
        block = quantize_phase(F_target[rows], cfg.phase_bits)
        block[~mask[rows, cols]] = 0
        analog[rows, cols] = block
        digital[cols] = np.linalg.lstsq(block, F_target[rows], rcond=None)[0]
    norm = np.linalg.norm(analog @ digital)
    if norm == 0:
        raise ConfigurationError("hybrid approximation of F_target is identically zero")
    scale = np.sqrt(cfg.power) / norm
    return HybridPrecoder(analog=analog, digital=scale * digital, mask=mask, scale=float(scale))


@dataclass(frozen=True)
class AnalogBlock:
    """One DU's phase-shifter block and its whitening.

    ``phases = basis @ triangular`` with ``basis`` orthonormal, so a digital
    block ``triangular^{-1} d`` realizes ``basis @ d`` on the antennas.
    """

    phases: np.ndarray
    basis: np.ndarray
    triangular: np.ndarray

    def digital_for(self, target) -> np.ndarray:
        """Digital block realizing ``basis @ target``."""
        return solve_triangular(self.triangular, target, lower=False)


def matched_analog(H_block, bits) -> AnalogBlock:
    """Quantized matched-phase analog block for a DU's local channel.

    Column ``n`` steers toward stream ``n`` with the b-bit phases of
    ``conj(H_block[n])``.
    """
    phases = quantize_phase(np.asarray(H_block).conj().T, bits)
    basis, tri = _positive_qr(phases)
    _check_rank(np.diag(tri), "analog block")
    return AnalogBlock(phases=phases, basis=basis, triangular=tri)


def analog_stage(channels, cfg: SystemConfig):
    """Per-DU analog blocks and the whitened effective channel ``H U``.

    Returns
    -------
    blocks : list of AnalogBlock, or None for the digital architecture
    effective : ndarray, shape (N, L * N) or (N, N_t)
    """
    if cfg.architecture == "digital":
        return None, channels.stacked
    blocks = [matched_analog(channels.cluster(l), cfg.phase_bits)
              for l in range(channels.n_clusters)]
    effective = np.hstack([channels.cluster(l) @ b.basis for l, b in enumerate(blocks)])
    return blocks, effective


def assemble_hybrid(blocks, digital_blocks, du_sizes, scale=1.0) -> HybridPrecoder:
    """Stack per-DU analog/digital blocks into one :class:`HybridPrecoder`."""
    n_rf = blocks[0].phases.shape[1]
    analog = _block_diag([b.phases for b in blocks])
    digital = np.vstack(digital_blocks)
    return HybridPrecoder(analog=analog, digital=digital,
                          mask=connectivity_mask(du_sizes, n_rf), scale=float(scale))


# -- symbol-level THP loop ----------------------------------------------------

def qpsk_symbols(rng, shape) -> np.ndarray:
    return QPSK[rng.integers(0, 4, size=shape)]


def qpsk_slice(z) -> np.ndarray:
    """Nearest unit-energy QPSK point."""
    z = np.asarray(z)
    re = np.where(z.real >= 0, 1.0, -1.0)
    im = np.where(z.imag >= 0, 1.0, -1.0)
    return (re + 1j * im) / np.sqrt(2)


def modulo(z, tau=TAU_QPSK):
    """Fold real and imaginary parts into ``[-tau/2, tau/2)``."""
    z = np.asarray(z, dtype=complex)

    def fold(x):
        return x - tau * np.floor(x / tau + 0.5)

    return fold(z.real) + 1j * fold(z.imag)


def thp_precancel(symbols, feedback, modulo_base=TAU_QPSK) -> np.ndarray:
    """Successive interference pre-subtraction through the feedback filter.

    ``symbols`` has shape ``(N,)`` or ``(n_vectors, N)``.
    """
    s = np.atleast_2d(np.asarray(symbols, dtype=complex))
    if modulo_base <= 0:
        raise ConfigurationError("modulo_base must be positive")
    v = np.empty_like(s)
    for i in range(s.shape[1]):
        v[:, i] = modulo(s[:, i] - v[:, :i] @ feedback[i, :i], modulo_base)
    return v.reshape(np.shape(symbols))


def thp_transmit(symbols, filters: ThpFilters, precoder=None, modulo_base=TAU_QPSK):
    """Antenna signals for THP symbol vectors.

    ``precoder`` (hybrid or linear, already power-scaled) maps the
    modulo-reduced sequence to antennas; when omitted the unscaled
    ``filters.feedforward`` is used.
    """
    v = thp_precancel(symbols, filters.feedback, modulo_base)
    F = filters.feedforward if precoder is None else precoding_matrix(precoder)
    return v @ F.T


def thp_receive(y, filters: ThpFilters, modulo_base=TAU_QPSK, scale=1.0):
    """Per-stream weighting, modulo folding and QPSK slicing.

    ``scale`` is the transmit power scale applied on top of the feedforward.
    """
    z = np.asarray(y, dtype=complex) * (filters.gains / scale)
    return qpsk_slice(modulo(z, modulo_base))


def symbol_error_rate(decisions, symbols) -> float:
    return float(np.mean(~np.isclose(decisions, symbols)))


# -- full precoders on the configured architecture -------------------------

def _split_rows(matrix, blocks):
    out, row = [], 0
    for b in blocks:
        n_rf = b.basis.shape[1]
        out.append(matrix[row:row + n_rf])
        row += n_rf
    return out


def realize(F_effective, blocks, cfg: SystemConfig, scale):
    """Map a precoder designed on the (whitened) effective channel to hardware.

    Returns the power-scaled precoder and the unscaled ``N_t x N`` feedforward.
    """
    if blocks is None:
        return LinearPrecoder(matrix=scale * F_effective, scale=float(scale)), F_effective
    parts = _split_rows(F_effective, blocks)
    feedforward = np.vstack([b.basis @ p for b, p in zip(blocks, parts)])
    digital = [b.digital_for(scale * p) for b, p in zip(blocks, parts)]
    return assemble_hybrid(blocks, digital, cfg.du_sizes, scale), feedforward


def centralized_thp(channels, cfg: SystemConfig, mode="zf", xi=None):
    """CU-side THP (CHZF-THP for ``mode="zf"`` on the hybrid architecture).

    Returns ``(filters, precoder)``; ``filters.feedforward`` is the unscaled
    ``N_t x N`` feedforward and ``precoder`` carries the power scale.
    """
    if xi is None:
        xi = mmse_regularization(cfg.n_streams, cfg.noise_var, cfg.power) if mode == "mmse" else 0.0
    blocks, effective = analog_stage(channels, cfg)
    eff = thp_filters(effective, mode, xi)
    scale = np.sqrt(cfg.power) / np.linalg.norm(eff.feedforward)
    precoder, feedforward = realize(eff.feedforward, blocks, cfg, scale)
    filters = ThpFilters(feedforward=feedforward, feedback_inv=eff.feedback_inv,
                         weighting=eff.weighting, feedback=eff.feedback, R=eff.R, xi=eff.xi)
    return filters, precoder


def centralized_czf(channels, cfg: SystemConfig):
    """ZF baseline on the configured architecture (same analog stage as THP)."""
    blocks, effective = analog_stage(channels, cfg)
    W = czf_precoder(effective, cfg.power)
    precoder, _ = realize(W.matrix / W.scale, blocks, cfg, W.scale)
    return precoder

"""scikit-learn style precoders.

``fit(H)`` designs the precoder for a stacked channel, ``transform(S)`` maps
symbol vectors (rows) to antenna signals and ``predict(Y)`` turns received
vectors into QPSK decisions. Hyper-parameters follow the usual
``get_params``/``set_params`` protocol, so these compose with
``sklearn.base.clone`` and friends.

Examples
--------
>>> import numpy as np
>>> from starthp.estimators import StarTHPPrecoder
>>> rng = np.random.default_rng(0)
>>> H = (rng.standard_normal((4, 16)) + 1j * rng.standard_normal((4, 16))) / np.sqrt(2)
>>> est = StarTHPPrecoder(n_clusters=2).fit(H)
>>> est.message_log_.uplink_bytes
512
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .exceptions import ConfigurationError
from .metrics import sum_rate
from .precoders import (
    TAU_QPSK, centralized_czf, centralized_thp, qpsk_slice, thp_receive, thp_transmit,
)
from .star import run_star_round
from .system import ChannelSet, SystemConfig, validate_channel


def check_symbols(S, n_streams) -> np.ndarray:
    """Validate a ``(n_vectors, N)`` (or ``(N,)``) array of complex symbols."""
    S = np.asarray(S)
    if S.ndim not in (1, 2) or S.shape[-1] != n_streams:
        raise ValueError(f"expected symbol vectors of length {n_streams}, got shape {S.shape}")
    S = S.astype(complex, copy=False)
    if not np.all(np.isfinite(S)):
        raise ValueError("symbols contain NaN or inf")
    return S


class _ChannelPrecoder(BaseEstimator):
    def __init__(self, power=1.0, noise_var=0.1, n_clusters=1, du_sizes=None,
                 phase_bits=4, architecture="hybrid", n_user_ants=1):
        self.power = power
        self.noise_var = noise_var
        self.n_clusters = n_clusters
        self.du_sizes = du_sizes
        self.phase_bits = phase_bits
        self.architecture = architecture
        self.n_user_ants = n_user_ants

    def _setup(self, H):
        H = validate_channel(H)
        n, n_tx = H.shape
        if n % self.n_user_ants:
            raise ConfigurationError(f"{n} streams do not split into users of {self.n_user_ants}")
        cfg = SystemConfig(
            n_tx=n_tx, n_users=n // self.n_user_ants, n_user_ants=self.n_user_ants,
            n_clusters=self.n_clusters,
            du_sizes=None if self.du_sizes is None else tuple(self.du_sizes),
            power=self.power, noise_var=self.noise_var, phase_bits=self.phase_bits,
            architecture=self.architecture)
        self.system_ = cfg
        self.channels_ = ChannelSet.from_stacked(H, cfg.n_user_ants, cfg.du_sizes)
        self.n_streams_ = n
        self.n_tx_ = n_tx
        return self.channels_, cfg

    @property
    def precoding_matrix_(self):
        check_is_fitted(self, "precoder_")
        return self.precoder_.matrix

    def sum_rate(self, noise_var=None):
        """Sum rate of the fitted precoder on the fitted channel."""
        check_is_fitted(self, "precoder_")
        noise_var = self.noise_var if noise_var is None else noise_var
        return sum_rate(self.channels_, self.precoder_, noise_var,
                        feedback=getattr(self, "feedback_", None)).sum


class CZFPrecoder(_ChannelPrecoder):
    """Zero-forcing baseline on the same (hybrid or digital) hardware."""

    def fit(self, H, y=None):
        channels, cfg = self._setup(H)
        self.precoder_ = centralized_czf(channels, cfg)
        self.gains_ = np.diag(channels.stacked @ self.precoder_.matrix)
        return self

    def transform(self, S):
        check_is_fitted(self, "precoder_")
        return check_symbols(S, self.n_streams_) @ self.precoder_.matrix.T

    def predict(self, Y):
        check_is_fitted(self, "precoder_")
        return qpsk_slice(check_symbols(Y, self.n_streams_) / self.gains_)


class THPPrecoder(_ChannelPrecoder):
    """Centralized ZF/MMSE Tomlinson-Harashima precoder.

    Parameters
    ----------
    mode : {"zf", "mmse"}
    xi : float, optional
        MMSE regularization. Defaults to ``N * noise_var / (power * 4/3)``.
    modulo_base : float
        THP modulo width; ``2 sqrt(2)`` suits unit-energy QPSK.
    """

    def __init__(self, mode="zf", xi=None, power=1.0, noise_var=0.1, n_clusters=1,
                 du_sizes=None, phase_bits=4, architecture="hybrid", n_user_ants=1,
                 modulo_base=TAU_QPSK):
        super().__init__(power=power, noise_var=noise_var, n_clusters=n_clusters,
                         du_sizes=du_sizes, phase_bits=phase_bits,
                         architecture=architecture, n_user_ants=n_user_ants)
        self.mode = mode
        self.xi = xi
        self.modulo_base = modulo_base

    def _design(self, channels, cfg):
        filters, precoder = centralized_thp(channels, cfg, self.mode, self.xi)
        return filters, precoder, precoder.scale

    def fit(self, H, y=None):
        channels, cfg = self._setup(H)
        self.filters_, self.precoder_, self.scale_ = self._design(channels, cfg)
        self.feedback_ = self.filters_.feedback
        return self

    def transform(self, S):
        check_is_fitted(self, "filters_")
        S = check_symbols(S, self.n_streams_)
        return thp_transmit(S, self.filters_, self.precoder_, self.modulo_base)

    def predict(self, Y):
        check_is_fitted(self, "filters_")
        Y = check_symbols(Y, self.n_streams_)
        return thp_receive(Y, self.filters_, self.modulo_base, self.scale_)


class StarTHPPrecoder(THPPrecoder):
    """THP designed by a star DBP round (sDHZF-THP / sDHMMSE-THP).

    After ``fit``, ``message_log_`` holds the byte-accounted CU/DU traffic and
    ``decentralized_`` the per-DU states.
    """

    def _design(self, channels, cfg):
        result, log = run_star_round(channels, cfg, self.mode, self.xi)
        self.decentralized_ = result
        self.message_log_ = log
        return result.filters, result.precoder, result.scale

    def transform(self, S):
        check_is_fitted(self, "decentralized_")
        S = check_symbols(S, self.n_streams_)
        return self.decentralized_.transmit(S, self.modulo_base)


ALGORITHMS = {
    "CZF": lambda **kw: CZFPrecoder(**kw),
    "CHZF_THP": lambda **kw: THPPrecoder(mode="zf", **kw),
    "SDHZF_THP": lambda **kw: StarTHPPrecoder(mode="zf", **kw),
    "SDHMMSE_THP": lambda **kw: StarTHPPrecoder(mode="mmse", **kw),
}


def make_precoder(algorithm, cfg: SystemConfig):
    """Unfitted estimator for ``algorithm`` with hyper-parameters from ``cfg``."""
    try:
        factory = ALGORITHMS[str(getattr(algorithm, "value", algorithm))]
    except KeyError:
        raise ConfigurationError(f"unknown algorithm {algorithm!r}") from None
    return factory(power=cfg.power, noise_var=cfg.noise_var, n_clusters=cfg.n_clusters,
                   du_sizes=cfg.du_sizes, phase_bits=cfg.phase_bits,
                   architecture=cfg.architecture, n_user_ants=cfg.n_user_ants)

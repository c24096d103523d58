"""Seeded Monte-Carlo experiment driver with long-format CSV output.

Config files are flat ``section.key=value`` text::

    # desk-scale sum-rate sweep
    system.n_tx=64
    system.n_users=8
    system.n_clusters=4
    experiment.kind=SUM_RATE
    experiment.snr_grid_db=0,5,10,15,20
    experiment.n_trials=500
    experiment.algorithms=CZF,SDHZF_THP,SDHMMSE_THP

Unknown keys are rejected with the offending line number.
"""

from __future__ import annotations

import csv
import enum
import io
import math
import os
import tempfile
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields, replace
from typing import Optional

import numpy as np

from .estimators import make_precoder
from .exceptions import ConfigParseError, ConfigurationError, SingularChannelError
from .flops import Algorithm, flops_exact, reduction_percentages
from .metrics import crb
from .precoders import qpsk_symbols, symbol_error_rate
from .star import run_star_round
from .system import (
    SensingScene, SystemConfig, complex_normal, gen_rayleigh_channels, trial_rng, trial_seed,
    with_overrides,
)

CSV_HEADER = ("experiment", "algorithm", "snr_db", "trial_seed", "metric_name", "value")
MAX_REDRAWS = 10


class Experiment(str, enum.Enum):
    SUM_RATE = "SUM_RATE"
    CRB = "CRB"
    FLOPS = "FLOPS"
    SER = "SER"
    MESSAGE_AUDIT = "MESSAGE_AUDIT"


SNR_EXPERIMENTS = (Experiment.SUM_RATE, Experiment.CRB, Experiment.SER)
DECENTRALIZED = (Algorithm.SDHZF_THP, Algorithm.SDHMMSE_THP)


@dataclass(frozen=True)
class ExperimentConfig:
    system: SystemConfig = field(default_factory=SystemConfig)
    snr_grid_db: tuple = (0.0, 5.0, 10.0, 15.0, 20.0)
    n_trials: int = 500
    algorithms: tuple = (Algorithm.CZF, Algorithm.SDHZF_THP, Algorithm.SDHMMSE_THP)
    experiment: Experiment = Experiment.SUM_RATE
    output_path: Optional[str] = None
    target_angle_deg: float = 30.0
    n_symbol_vectors: int = 1000
    flops_n_grid: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "experiment", Experiment(self.experiment))
        object.__setattr__(self, "algorithms", tuple(Algorithm(a) for a in self.algorithms))
        object.__setattr__(self, "snr_grid_db", tuple(float(s) for s in self.snr_grid_db))
        if self.n_trials < 1:
            raise ConfigurationError(f"n_trials must be >= 1, got {self.n_trials}")
        if self.experiment in SNR_EXPERIMENTS and not self.snr_grid_db:
            raise ConfigurationError(f"{self.experiment.value} needs a nonempty snr_grid_db")
        if not self.algorithms:
            raise ConfigurationError("at least one algorithm is required")
        if self.n_symbol_vectors < 1:
            raise ConfigurationError("n_symbol_vectors must be >= 1")


@dataclass(frozen=True)
class ResultRow:
    experiment: str
    algorithm: str
    snr_db: Optional[float]
    trial_seed: int
    metric_name: str
    value: float

    def sort_key(self):
        snr = -math.inf if self.snr_db is None else self.snr_db
        return (self.algorithm, snr, self.trial_seed, self.metric_name)

    def as_csv(self):
        snr = "na" if self.snr_db is None else repr(float(self.snr_db))
        return [self.experiment, self.algorithm, snr, str(self.trial_seed),
                self.metric_name, repr(float(self.value))]


def noise_var_for_snr(snr_db) -> float:
    """Noise variance at a given SNR, referenced to unit transmit power."""
    return 10.0 ** (-float(snr_db) / 10.0)


# -- config files -------------------------------------------------------------

def _parse_list(text, cast):
    return tuple(cast(item.strip()) for item in text.split(",") if item.strip())


_SYSTEM_TYPES = {
    "n_tx": int, "n_users": int, "n_user_ants": int, "n_clusters": int,
    "du_sizes": lambda s: _parse_list(s, int), "n_rx_sense": int, "power": float,
    "noise_var": float, "phase_bits": int, "antenna_spacing": float,
    "architecture": str, "seed": int,
}
_EXPERIMENT_TYPES = {
    "kind": lambda s: Experiment(s.strip().upper()),
    "snr_grid_db": lambda s: _parse_list(s, float),
    "n_trials": int,
    "algorithms": lambda s: _parse_list(s, lambda a: Algorithm(a.upper())),
    "output_path": str,
    "target_angle_deg": float,
    "n_symbol_vectors": int,
    "flops_n_grid": lambda s: _parse_list(s, int),
}


def parse_config_text(text) -> dict:
    """Parse config text into ``{"system": {...}, "experiment": {...}}``."""
    out = {"system": {}, "experiment": {}}
    tables = {"system": _SYSTEM_TYPES, "experiment": _EXPERIMENT_TYPES}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigParseError(f"expected key=value, got {raw.strip()!r}", lineno)
        key, value = (part.strip() for part in line.split("=", 1))
        section, _, name = key.partition(".")
        if section not in tables or name not in tables[section]:
            raise ConfigParseError(f"unknown key {key!r}", lineno)
        if name in out[section]:
            raise ConfigParseError(f"duplicate key {key!r}", lineno)
        try:
            out[section][name] = tables[section][name](value)
        except ValueError as exc:
            raise ConfigParseError(f"bad value for {key}: {exc}", lineno) from None
    return out


def load_config(path) -> ExperimentConfig:
    with open(path) as fh:
        parsed = parse_config_text(fh.read())
    return build_config(parsed["system"], parsed["experiment"])


def build_config(system=None, experiment=None, base: Optional[ExperimentConfig] = None):
    """Overlay parsed/CLI values onto ``base`` (defaults when omitted)."""
    base = base or ExperimentConfig()
    system = dict(system or {})
    experiment = dict(experiment or {})
    sys_cfg = with_overrides(base.system, **system) if system else base.system
    if "kind" in experiment:
        experiment["experiment"] = experiment.pop("kind")
    known = {f.name for f in fields(ExperimentConfig)}
    unknown = set(experiment) - known
    if unknown:
        raise ConfigurationError(f"unknown experiment settings: {sorted(unknown)}")
    return replace(base, system=sys_cfg, **experiment)


# -- experiment kernels -------------------------------------------------------

def _trial_channels(cfg, trial):
    """Channels for one trial plus the number of singular redraws it took."""
    for redraw in range(MAX_REDRAWS + 1):
        channels = gen_rayleigh_channels(cfg, trial_rng(cfg.seed, trial, redraw))
        if np.linalg.matrix_rank(channels.stacked) == cfg.n_streams:
            return channels, redraw
    raise SingularChannelError(f"trial {trial}: no full-rank channel after {MAX_REDRAWS} redraws")


def _noise_dependent(algorithm):
    return algorithm is Algorithm.SDHMMSE_THP


def _fit(algorithm, cfg, channels):
    return make_precoder(algorithm, cfg).fit(channels.stacked)


def _run_trial(config: ExperimentConfig, trial: int) -> list:
    cfg = config.system
    seed = trial_seed(cfg.seed, trial)
    exp = config.experiment
    rows = []

    if exp is Experiment.FLOPS:
        return rows

    channels, redraws = _trial_channels(cfg, trial)
    if redraws:
        rows.append(ResultRow(exp.value, "ALL", None, seed, "redraws", float(redraws)))

    if exp is Experiment.MESSAGE_AUDIT:
        for alg in config.algorithms:
            if alg not in DECENTRALIZED:
                continue
            mode = "mmse" if alg is Algorithm.SDHMMSE_THP else "zf"
            _, log = run_star_round(channels, cfg, mode)
            for metric, value in (("uplink_bytes", log.uplink_bytes),
                                  ("downlink_bytes", log.downlink_bytes),
                                  ("uplink_elements", log.elements("up")),
                                  ("downlink_elements", log.elements("down"))):
                rows.append(ResultRow(exp.value, alg.value, None, seed, metric, float(value)))
        return rows

    fitted = {}
    for i, snr in enumerate(config.snr_grid_db):
        cfg_snr = replace(cfg, noise_var=noise_var_for_snr(snr))
        for alg in config.algorithms:
            if _noise_dependent(alg) or alg not in fitted:
                fitted[alg] = _fit(alg, cfg_snr, channels)
            est = fitted[alg]
            if exp is Experiment.SUM_RATE:
                value = est.sum_rate(cfg_snr.noise_var)
                metric = "sum_rate"
            elif exp is Experiment.CRB:
                scene = SensingScene.white(np.deg2rad(config.target_angle_deg), cfg.n_tx,
                                           cfg_snr.noise_var)
                value = crb(est.precoder_, scene, cfg.n_tx, cfg.antenna_spacing).value
                metric = "crb"
            else:
                rng = np.random.default_rng([seed, i])
                S = qpsk_symbols(rng, (config.n_symbol_vectors, cfg.n_streams))
                noise = np.sqrt(cfg_snr.noise_var) * complex_normal(rng, S.shape)
                Y = est.transform(S) @ channels.stacked.T + noise
                value = symbol_error_rate(est.predict(Y), S)
                metric = "ser"
            rows.append(ResultRow(exp.value, alg.value, snr, seed, metric, float(value)))
    return rows


def _flops_rows(config: ExperimentConfig) -> list:
    cfg = config.system
    m = cfg.n_tx
    grid = config.flops_n_grid or (cfg.n_streams,)
    rows = []
    for n in grid:
        for alg in config.algorithms:
            rows.append(ResultRow(Experiment.FLOPS.value, alg.value, None, cfg.seed,
                                  f"cu_flops_n{n}_m{m}", float(flops_exact(alg, n, m))))
    n = cfg.n_streams
    pct = reduction_percentages(n, m)
    for key, value in pct.items():
        rows.append(ResultRow(Experiment.FLOPS.value, Algorithm.SDHZF_THP.value, None, cfg.seed,
                              f"reduction_{key}_pct_n{n}_m{m}", value))
    return rows


def run_experiment(config: ExperimentConfig, workers=None) -> list:
    """Run every trial, sort the rows and (optionally) write the CSV.

    Rows depend only on the config; ``workers`` changes wall time, not output.
    """
    if config.experiment is Experiment.FLOPS:
        rows = _flops_rows(config)
    elif workers and workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            chunks = list(pool.map(lambda t: _run_trial(config, t), range(config.n_trials)))
        rows = [row for chunk in chunks for row in chunk]
    else:
        rows = [row for t in range(config.n_trials) for row in _run_trial(config, t)]
    rows.sort(key=ResultRow.sort_key)
    for row in rows:
        if not math.isfinite(row.value):
            raise FloatingPointError(f"non-finite value in {row}")
    if config.output_path:
        write_csv(rows, config.output_path)
    return rows


def rows_to_csv_text(rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    for row in rows:
        writer.writerow(row.as_csv())
    return buf.getvalue()


def write_csv(rows, path):
    """Write atomically: temp file in the target directory, then rename."""
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(prefix=".tmp-", suffix=".csv", dir=directory)
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(rows_to_csv_text(rows))
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def read_csv(path) -> list:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = tuple(next(reader))
        if header != CSV_HEADER:
            raise ValueError(f"unexpected header {header}")
        rows = []
        for exp, alg, snr, seed, metric, value in reader:
            rows.append(ResultRow(exp, alg, None if snr == "na" else float(snr), int(seed),
                                  metric, float(value)))
    return rows


def summarize(rows) -> dict:
    """Mean value per ``(algorithm, snr_db, metric_name)``."""
    acc = {}
    for row in rows:
        acc.setdefault((row.algorithm, row.snr_db, row.metric_name), []).append(row.value)
    return {key: float(np.mean(vals)) for key, vals in acc.items()}

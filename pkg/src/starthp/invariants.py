"""Named self-checks run by ``starthp validate``.

Each check takes a seed and returns ``(ok, detail)``.
"""

from __future__ import annotations

import os
import tempfile
from dataclasses import replace

import numpy as np

from .flops import Algorithm, flops_exact, reduction_percentages
from .harness import Experiment, ExperimentConfig, run_experiment
from .metrics import crb, sum_rate
from .precoders import (
    TAU_QPSK, HybridPrecoder, centralized_thp, hybrid_decompose, modulo, phase_codebook,
    qpsk_symbols, thp_filters, thp_mmse_filters, thp_precancel, thp_zf_filters,
)
from .star import run_star_round
from .system import (
    ChannelSet, SensingScene, SystemConfig, complex_normal, gen_rayleigh_channels,
    steering_derivative, steering_vector, trial_rng, with_overrides,
)

DESK = SystemConfig(n_tx=64, n_users=8, n_clusters=4)
DIGITAL = replace(DESK, architecture="digital")


def _channels(cfg, seed, trial=0):
    return gen_rayleigh_channels(cfg, trial_rng(seed, trial))


# -- system model -------------------------------------------------------------

def partition_round_trip(seed):
    rng = np.random.default_rng(seed)
    for du_sizes in [(64,), (32, 32), (16, 16, 16, 16), (8,) * 8, (10, 20, 34)]:
        for n_ants in (1, 2):
            H = complex_normal(rng, (8, 64))
            cs = ChannelSet.from_stacked(H, n_ants, du_sizes)
            rebuilt = np.vstack([np.hstack(blocks) for blocks in cs.partition])
            if not np.array_equal(rebuilt, H):
                return False, f"du_sizes={du_sizes}, n_user_ants={n_ants}"
    return True, ""


def steering_derivative_fd(seed):
    rng = np.random.default_rng(seed)
    h = 1e-6
    worst = 0.0
    for psi in rng.uniform(-np.pi / 2, np.pi / 2, 100):
        fd = (steering_vector(psi + h, 16) - steering_vector(psi - h, 16)) / (2 * h)
        an = steering_derivative(psi, 16)
        worst = max(worst, np.linalg.norm(fd - an) / np.linalg.norm(an))
    return worst < 1e-6, f"max relative error {worst:.2e}"


def channel_unit_variance(seed):
    cfg = SystemConfig(n_tx=128, n_users=100, n_clusters=4, architecture="digital")
    p = np.abs(_channels(cfg, seed).stacked) ** 2
    # |h|^2 ~ Exp(1): standard deviation of the mean is 1/sqrt(n)
    z = abs(p.mean() - 1.0) * np.sqrt(p.size)
    return z < 3.0, f"{p.size} samples, mean {p.mean():.4f} ({z:.2f} sigma)"


# -- precoders ----------------------------------------------------------------

def mui_cancellation(seed):
    worst = 0.0
    for t in range(100):
        channels = _channels(DIGITAL, seed, t)
        result, _ = run_star_round(channels, DIGITAL, "zf")
        f = result.filters
        E = f.weighting @ channels.stacked @ f.feedforward @ f.feedback_inv
        worst = max(worst, np.abs(E - np.eye(E.shape[0])).max())
    return worst < 1e-9, f"max |GHFB^-1 - I| = {worst:.2e}"


def mmse_zf_continuity(seed):
    H = _channels(DESK, seed).stacked
    zf, mm = thp_zf_filters(H), thp_mmse_filters(H, 1e-12)
    worst = max(np.abs(zf.feedforward - mm.feedforward).max(),
                np.abs(zf.feedback_inv - mm.feedback_inv).max(),
                np.abs(zf.weighting - mm.weighting).max())
    return worst < 1e-6, f"max deviation {worst:.2e}"


def hybrid_power(seed):
    rng = np.random.default_rng(seed)
    worst = 0.0
    for power in (0.5, 1.0, 4.0):
        cfg = replace(DESK, power=power)
        dec = hybrid_decompose(complex_normal(rng, (64, 8)), cfg)
        worst = max(worst, abs(np.linalg.norm(dec.matrix) ** 2 / power - 1))
        for mode in ("zf", "mmse"):
            _, prec = centralized_thp(_channels(cfg, seed), cfg, mode)
            worst = max(worst, abs(np.linalg.norm(prec.matrix) ** 2 / power - 1))
    return worst < 1e-9, f"max relative power error {worst:.2e}"


def quantized_phase_membership(seed):
    rng = np.random.default_rng(seed)
    for bits in (1, 2, 3, 4):
        cfg = replace(DESK, phase_bits=bits)
        book = set(phase_codebook(bits).tolist())
        precs = [hybrid_decompose(complex_normal(rng, (64, 8)), cfg),
                 run_star_round(_channels(cfg, seed), cfg, "zf")[0].precoder]
        for prec in precs:
            entries = prec.analog[prec.analog != 0]
            if not all(e in book for e in entries.tolist()):
                return False, f"b={bits}: analog entry outside the codebook"
    return True, ""


def modulo_region(seed):
    rng = np.random.default_rng(seed)
    z = 50 * complex_normal(rng, 100000)
    z = np.concatenate([z, [TAU_QPSK / 2 + 0j, -TAU_QPSK / 2 + 0j, 1j * TAU_QPSK / 2]])
    m = modulo(z)
    half = TAU_QPSK / 2
    ok = np.all((m.real >= -half) & (m.real < half) & (m.imag >= -half) & (m.imag < half))
    H = _channels(DESK, seed).stacked
    v = thp_precancel(qpsk_symbols(rng, (1000, 8)), thp_filters(H).feedback)
    ok = ok and np.all((np.abs(v.real) <= half) & (np.abs(v.imag) <= half))
    return bool(ok), ""


# -- star DBP -----------------------------------------------------------------

def l_invariance(seed):
    base = _channels(DIGITAL, seed).stacked
    ref = thp_zf_filters(base)
    worst = 0.0
    for L in (1, 2, 4, 8):
        cfg = with_overrides(DIGITAL, n_clusters=L)
        cs = ChannelSet.from_stacked(base, 1, cfg.du_sizes)
        for mode in ("zf", "mmse"):
            res, _ = run_star_round(cs, cfg, mode)
            cen = ref if mode == "zf" else thp_mmse_filters(base, res.filters.xi)
            f = res.filters
            worst = max(worst, *(np.abs(a - b).max() for a, b in [
                (f.R, cen.R), (f.weighting, cen.weighting),
                (f.feedback_inv, cen.feedback_inv), (f.feedforward, cen.feedforward)]))
    return worst < 1e-10, f"max deviation {worst:.2e}"


def uplink_antenna_independent(seed):
    sizes = set()
    for n_tx in (64, 128, 256):
        # 16-antenna DUs cannot host 32 RF chains, so audit the digital build
        cfg = SystemConfig(n_tx=n_tx, n_users=32, n_clusters=4, architecture="digital")
        _, log = run_star_round(_channels(cfg, seed), cfg, "zf")
        sizes.add((log.uplink_bytes, tuple(r[2] for r in log.per_message if r[0] == "up")))
    (total, _), = sizes if len(sizes) == 1 else [(None, None)]
    return len(sizes) == 1 and total == 4 * 32 * 32 * 16, f"uplink payloads {sorted(sizes)}"


def message_log_totals(seed):
    _, log = run_star_round(_channels(DESK, seed), DESK, "mmse")
    up = sum(r[3] for r in log.per_message if r[0] == "up")
    down = sum(r[3] for r in log.per_message if r[0] == "down")
    return up == log.uplink_bytes and down == log.downlink_bytes, ""


# -- metrics ------------------------------------------------------------------

def crb_scaling(seed):
    F = run_star_round(_channels(DESK, seed), DESK, "zf")[0].precoder.matrix
    scene = SensingScene.white(np.deg2rad(30), 64, 0.1)
    base = crb(F, scene).value
    worst = 0.0
    for c in (0.5, 2.0, 3.0):
        worst = max(worst, abs(crb(c * F, scene).value * c ** 2 / base - 1))
    return base > 0 and worst < 1e-9, f"CRB {base:.3e}, max relative error {worst:.2e}"


def crb_rotation_invariance(seed):
    rng = np.random.default_rng(seed)
    prec = run_star_round(_channels(DESK, seed), DESK, "zf")[0].precoder
    Q, _ = np.linalg.qr(complex_normal(rng, (8, 8)))
    rotated = HybridPrecoder(prec.analog, prec.digital @ Q, prec.mask, prec.scale)
    scene = SensingScene.white(np.deg2rad(30), 64, 0.1)
    a, b = crb(prec, scene).value, crb(rotated, scene).value
    rel = abs(a - b) / a
    return rel < 1e-10, f"relative difference {rel:.2e}"


def rate_monotone_in_noise(seed):
    channels = _channels(DESK, seed)
    res, _ = run_star_round(channels, DESK, "zf")
    rates = [sum_rate(channels, res.precoder, s, res.filters.feedback).sum
             for s in np.logspace(-3, 2, 30)]
    return bool(np.all(np.diff(rates) <= 0)), ""


def rate_sum_consistent(seed):
    channels = _channels(replace(DESK, n_user_ants=2, n_users=4), seed)
    report = sum_rate(channels, np.eye(64, 8), 0.1)
    return report.sum == float(report.per_user.sum()), ""


# -- FLOPS --------------------------------------------------------------------

def flops_mmse_offset(seed):
    for n in (1, 2, 7, 32, 1024):
        for m in (1, 3, 64, 256, 1024):
            d = flops_exact(Algorithm.SDHMMSE_THP, n, m) - flops_exact(Algorithm.SDHZF_THP, n, m)
            if d != m:
                return False, f"n={n}, m={m}: difference {d}"
    return True, ""


def flops_dominance(seed):
    # 3x the polynomials are integers; compare on the full grid at once
    n = np.arange(1, 1025, dtype=np.int64)[:, None]
    m = np.arange(1, 1025, dtype=np.int64)[None, :]
    ours = 2 * n ** 3 + 3 * (m * n * n + m * n)
    chzf = 2 * n ** 3 + 3 * (m * m + 2 * m * n * n + m * n + m)
    return bool(np.all(ours < chzf)), ""


def flops_reductions(seed):
    pct = reduction_percentages(32, 256)
    ok = abs(pct["vs_czf"] - 92.8) <= 0.5 and abs(pct["vs_chzf"] - 52.8) <= 0.5
    return ok, f"vs CZF {pct['vs_czf']:.2f}%, vs CHZF-THP {pct['vs_chzf']:.2f}%"


# -- harness ------------------------------------------------------------------

def csv_determinism(seed):
    sys_cfg = replace(DESK, seed=seed)
    with tempfile.TemporaryDirectory() as tmp:
        blobs = []
        for i, workers in enumerate((None, 4)):
            path = os.path.join(tmp, f"run{i}.csv")
            cfg = ExperimentConfig(system=sys_cfg, n_trials=3, snr_grid_db=(0.0, 10.0),
                                   experiment=Experiment.SUM_RATE, output_path=path)
            run_experiment(cfg, workers=workers)
            with open(path, "rb") as fh:
                blobs.append(fh.read())
    return blobs[0] == blobs[1], ""


def csv_rows_complete(seed):
    sys_cfg = replace(DESK, seed=seed)
    for exp in Experiment:
        rows = run_experiment(ExperimentConfig(system=sys_cfg, n_trials=2, experiment=exp,
                                               snr_grid_db=(10.0,), n_symbol_vectors=50))
        if not rows:
            return False, f"{exp.value}: no rows"
        for row in rows:
            cells = row.as_csv()
            if not np.isfinite(row.value) or any(c == "" for c in cells):
                return False, f"{exp.value}: incomplete row {cells}"
    return True, ""


CHECKS = {
    "system.partition_round_trip": partition_round_trip,
    "system.steering_derivative_fd": steering_derivative_fd,
    "system.channel_unit_variance": channel_unit_variance,
    "precoders.mui_cancellation": mui_cancellation,
    "precoders.mmse_zf_continuity": mmse_zf_continuity,
    "precoders.hybrid_power": hybrid_power,
    "precoders.quantized_phase_membership": quantized_phase_membership,
    "precoders.modulo_region": modulo_region,
    "star.l_invariance": l_invariance,
    "star.uplink_antenna_independent": uplink_antenna_independent,
    "star.message_log_totals": message_log_totals,
    "metrics.crb_scaling": crb_scaling,
    "metrics.crb_rotation_invariance": crb_rotation_invariance,
    "metrics.rate_monotone_in_noise": rate_monotone_in_noise,
    "metrics.rate_sum_consistent": rate_sum_consistent,
    "flops.mmse_offset": flops_mmse_offset,
    "flops.dominance": flops_dominance,
    "flops.reductions": flops_reductions,
    "harness.csv_determinism": csv_determinism,
    "harness.csv_rows_complete": csv_rows_complete,
}


def run_all(seed=0):
    """``[(name, ok, detail), ...]``; an exception counts as a failure."""
    out = []
    for name, check in CHECKS.items():
        try:
            ok, detail = check(seed)
        except Exception as exc:  # a crash is a violation, report and move on
            ok, detail = False, f"{type(exc).__name__}: {exc}"
        out.append((name, bool(ok), detail))
    return out

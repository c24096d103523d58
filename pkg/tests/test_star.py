from concurrent.futures import ThreadPoolExecutor

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from starthp.exceptions import ConfigurationError, SingularChannelError
from starthp.precoders import centralized_thp, phase_codebook, thp_mmse_filters, thp_zf_filters
from starthp.star import (
    BYTES_PER_ELEMENT, DuState, MessageLog, cu_aggregate_and_factorize, du_finalize,
    du_upload_gram, expected_message_counts, make_du_states, run_star_round,
)
from starthp.system import ChannelSet, SystemConfig, complex_normal, gen_rayleigh_channels, with_overrides

DIGITAL = SystemConfig(architecture="digital")


def test_zero_block_gives_zero_gram():
    du = DuState(index=0, local_channel=(np.zeros((1, 3)), np.zeros((1, 3))))
    assert np.array_equal(du_upload_gram(du), np.zeros((2, 2)))


def test_gram_scalar_sum_oracle():
    rng = np.random.default_rng(0)
    H = complex_normal(rng, (2, 3))
    du = DuState(index=0, local_channel=(H[:1], H[1:]))
    gram = du_upload_gram(du)
    for i in range(2):
        for j in range(2):
            expected = sum(H[i, a] * np.conj(H[j, a]) for a in range(3))
            assert abs(gram[i, j] - expected) < 1e-14


@pytest.mark.parametrize("n_local", [1, 5, 40])
def test_gram_payload_is_n_squared(n_local):
    H = complex_normal(np.random.default_rng(1), (3, n_local))
    log = MessageLog()
    du_upload_gram(DuState(index=2, local_channel=tuple(H[k:k + 1] for k in range(3))), log)
    assert log.per_message == [("up", 2, 9, 9 * BYTES_PER_ELEMENT, "gram")]


def test_orthogonal_supports_block_sum():
    # user 0 only reaches DU 0's antennas and user 1 only DU 1's
    rng = np.random.default_rng(2)
    H = np.zeros((2, 8), dtype=complex)
    H[0, :4] = complex_normal(rng, 4)
    H[1, 4:] = complex_normal(rng, 4)
    cfg = SystemConfig(n_tx=8, n_users=2, n_clusters=2, architecture="digital")
    states = make_du_states(ChannelSet.from_stacked(H, 1, cfg.du_sizes), cfg)
    grams = [du_upload_gram(du) for du in states]
    assert grams[0][1, 1] == 0 and grams[1][0, 0] == 0
    cu = cu_aggregate_and_factorize(grams)
    assert np.allclose(cu.gram, H @ H.conj().T, atol=1e-14)


def test_cu_rejects_singular_and_bad_input():
    H = complex_normal(np.random.default_rng(3), (1, 4))
    H = np.vstack([H, H])
    with pytest.raises(SingularChannelError):
        cu_aggregate_and_factorize([H @ H.conj().T])
    with pytest.raises(ConfigurationError):
        cu_aggregate_and_factorize([np.eye(2), np.eye(3)])
    with pytest.raises(ConfigurationError):
        cu_aggregate_and_factorize([np.eye(2)], mode="lmmse")


@pytest.mark.parametrize("L", [1, 2, 4, 8])
@pytest.mark.parametrize("mode", ["zf", "mmse"])
def test_l_invariance(L, mode):
    H = gen_rayleigh_channels(DIGITAL).stacked
    cfg = with_overrides(DIGITAL, n_clusters=L)
    res, _ = run_star_round(ChannelSet.from_stacked(H, 1, cfg.du_sizes), cfg, mode)
    ref = thp_zf_filters(H) if mode == "zf" else thp_mmse_filters(H, res.filters.xi)
    for a, b in [(res.filters.R, ref.R), (res.filters.weighting, ref.weighting),
                 (res.filters.feedback_inv, ref.feedback_inv),
                 (res.filters.feedforward, ref.feedforward)]:
        assert np.abs(a - b).max() < 1e-10


@settings(max_examples=25, deadline=None)
@given(cuts=st.lists(st.integers(8, 20), min_size=1, max_size=5), seed=st.integers(0, 2 ** 32 - 1))
def test_l_invariance_uneven_partitions(cuts, seed):
    n_tx = sum(cuts)
    cfg = SystemConfig(n_tx=n_tx, n_users=6, n_clusters=len(cuts), du_sizes=tuple(cuts),
                       architecture="digital")
    channels = gen_rayleigh_channels(cfg, np.random.default_rng(seed))
    res, _ = run_star_round(channels, cfg, "zf")
    ref = thp_zf_filters(channels.stacked)
    assert np.abs(res.filters.feedback_inv - ref.feedback_inv).max() < 1e-10
    assert np.abs(res.filters.feedforward - ref.feedforward).max() < 1e-10


def test_every_du_derives_identical_shared_filters():
    res, _ = run_star_round(gen_rayleigh_channels(SystemConfig()), SystemConfig(), "mmse")
    first = res.per_du[0]
    for du in res.per_du[1:]:
        assert np.array_equal(du.weighting, first.weighting)
        assert np.array_equal(du.feedback_inv, first.feedback_inv)
        assert du.scale == first.scale


@pytest.mark.parametrize("mode", ["zf", "mmse"])
def test_stacked_hybrid_meets_power(mode):
    cfg = SystemConfig(power=2.0)
    res, _ = run_star_round(gen_rayleigh_channels(cfg), cfg, mode)
    assert np.linalg.norm(res.precoder.matrix) ** 2 == pytest.approx(2.0, rel=1e-9)
    book = set(phase_codebook(cfg.phase_bits).tolist())
    assert set(res.precoder.analog[res.precoder.mask].tolist()) <= book
    assert np.allclose(res.precoder.matrix, res.scale * res.filters.feedforward, atol=1e-12)


@pytest.mark.parametrize("mode", ["zf", "mmse"])
def test_single_du_matches_centralized(mode):
    cfg = SystemConfig(n_clusters=1)
    channels = gen_rayleigh_channels(cfg)
    res, _ = run_star_round(channels, cfg, mode)
    filters, prec = centralized_thp(channels, cfg, mode)
    assert np.abs(res.precoder.matrix - prec.matrix).max() < 1e-12
    assert np.array_equal(res.precoder.analog, prec.analog)
    assert np.abs(res.filters.feedback - filters.feedback).max() < 1e-12


def test_uplink_bytes_full_scale():
    cfg = SystemConfig(n_tx=256, n_users=32, n_clusters=4)
    _, log = run_star_round(gen_rayleigh_channels(cfg), cfg, "zf")
    assert log.uplink_bytes == 4 * 32 ** 2 * 16 == 65536
    assert log.uplink_bytes == sum(r[3] for r in log.per_message if r[0] == "up")


def test_uplink_independent_of_antennas():
    logs = []
    for n_tx in (64, 128):
        cfg = SystemConfig(n_tx=n_tx, n_users=8, n_clusters=4)
        logs.append(run_star_round(gen_rayleigh_channels(cfg), cfg, "zf")[1])
    up = [[r for r in log.per_message if r[0] == "up"] for log in logs]
    assert up[0] == up[1]


@pytest.mark.parametrize("L", [1, 2, 4])
def test_logged_counts_match_contract(L):
    cfg = SystemConfig(n_clusters=L)
    _, log = run_star_round(gen_rayleigh_channels(cfg), cfg, "zf")
    expected = expected_message_counts(cfg.n_streams, L)
    assert log.elements("up") == expected["up"]
    assert log.elements("down") == expected["down"]
    assert log.downlink_bytes == expected["down"] * BYTES_PER_ELEMENT


def test_concurrent_dus_identical():
    cfg = SystemConfig()
    channels = gen_rayleigh_channels(cfg)
    a, la = run_star_round(channels, cfg, "mmse")
    with ThreadPoolExecutor(4) as pool:
        b, lb = run_star_round(channels, cfg, "mmse", executor=pool)
    assert np.array_equal(a.precoder.matrix, b.precoder.matrix)
    assert la.per_message == lb.per_message


def test_distributed_transmit_matches_global():
    cfg = SystemConfig()
    res, _ = run_star_round(gen_rayleigh_channels(cfg), cfg, "zf")
    from starthp.precoders import qpsk_symbols, thp_transmit
    S = qpsk_symbols(np.random.default_rng(0), (200, 8))
    assert np.allclose(res.transmit(S), thp_transmit(S, res.filters, res.precoder), atol=1e-12)


def test_du_finalize_rejects_mismatched_r():
    states = make_du_states(gen_rayleigh_channels(DIGITAL), DIGITAL)
    with pytest.raises(ConfigurationError):
        du_finalize(states[0], np.eye(3))


def test_partition_mismatch_rejected():
    channels = gen_rayleigh_channels(SystemConfig(n_clusters=2))
    with pytest.raises(ConfigurationError):
        run_star_round(channels, SystemConfig(n_clusters=4), "zf")


def test_message_log_csv(tmp_path):
    cfg = SystemConfig(n_clusters=2)
    _, log = run_star_round(gen_rayleigh_channels(cfg), cfg, "zf")
    path = tmp_path / "log.csv"
    log.to_csv(path)
    lines = path.read_text().splitlines()
    assert lines[0] == "direction,du,elements,bytes"
    assert lines[1:] == ["up,0,64,1024", "up,1,64,1024", "down,0,64,1024", "down,1,64,1024"]
    with pytest.raises(ValueError):
        log.record("sideways", 0, 1)

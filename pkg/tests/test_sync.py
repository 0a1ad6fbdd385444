import numpy as np
import pytest

from fdsim.dsp import SampleStream, add_streams
from fdsim.frontend import ChannelRealization, apply_channel, awgn
from fdsim.runner import build_node
from fdsim.sync import (
    EstimationError,
    SyncError,
    estimate_both,
    estimate_pattern,
    interpolate_linear,
    ls_estimate_rs,
    synchronize,
)
from fdsim.waveform import fd_20mhz, ofdm_demodulate, rs_pattern

CFG0 = fd_20mhz(qam_order=4, node_id=0)
L = CFG0.symbol_len
HALF = CFG0.half_frame_len


def node_stream(node_id, seed, n_frames=2):
    return build_node(fd_20mhz(qam_order=4, node_id=node_id), n_frames, seed).stream


def capture(parts, length):
    rx = add_streams(*parts)
    return SampleStream(rx.view(0, max(rx.end, length))[:length], 0)


CAP_LEN = int(2.2 * HALF) + 3 * L


class TestSynchronize:
    def test_noise_free_loopback_exact(self, rng):
        stream = node_stream(0, seed=3)
        for d in [0, 1, 511, 5000, HALF - 66, HALF - 1]:
            rx = capture([stream.delayed(d)], CAP_LEN + d)
            s = synchronize(CFG0, rx)
            assert s.si_start_index == d + 6 * L, f"offset {d}"
            assert s.si_detected

    def test_zero_input_fails(self):
        with pytest.raises(SyncError):
            synchronize(CFG0, SampleStream(np.zeros(CAP_LEN, complex)))

    def test_too_short_input_fails(self):
        with pytest.raises(SyncError):
            synchronize(CFG0, SampleStream(np.ones(1000, complex)))

    def test_dual_signal_recovery(self, rng):
        # residual SI at -60 dBc, desired at 10 dB SNR and a comparable level:
        # orthogonal roots keep both indices exact despite the overlap
        own = node_stream(0, seed=5)
        peer = node_stream(1, seed=6)
        hits = 0
        trials = 10
        for t in range(trials):
            trng = np.random.default_rng(1000 + t)
            d_si = int(trng.integers(0, HALF))
            d_des = int(trng.integers(0, HALF))
            si = own.delayed(d_si).scaled(10 ** (-60 / 20))
            des = peer.delayed(d_des).scaled(10 ** (-57 / 20))
            rx = capture([si, des], CAP_LEN + max(d_si, d_des))
            noise = des.power() * 10 ** (-10 / 10)
            rx = awgn(rx, noise, trng)
            s = synchronize(CFG0, rx)
            ok = (s.si_start_index == d_si + 6 * L
                  and s.desired_start_index == d_des + 6 * L
                  and s.si_detected and s.desired_detected)
            hits += ok
        assert hits == trials

    def test_reported_peaks_bounded(self, rng):
        stream = node_stream(0, seed=3)
        rx = capture([stream], CAP_LEN)
        s = synchronize(CFG0, rx)
        assert 0.0 <= s.si_peak <= 1.0
        assert 0.0 <= s.desired_peak <= 1.0

    def test_failure_carries_best_peaks(self):
        rng = np.random.default_rng(9)
        # pure noise: nothing to find, error reports the floor values
        rx = SampleStream((rng.standard_normal(CAP_LEN)
                           + 1j * rng.standard_normal(CAP_LEN)) * 1.0)
        try:
            s = synchronize(CFG0, rx, threshold=0.5)
            raised = False
        except SyncError as e:
            raised = True
            assert 0.0 <= e.desired_peak < 0.5
            assert 0.0 <= e.si_peak < 0.5
        assert raised


def received_grid(h_taps, seed=11, noise_power=0.0, n_frames=1, node_id=0, rng=None):
    """Peer-free loopback grid: node `node_id` transmitting over a channel."""
    cfg = fd_20mhz(qam_order=4, node_id=node_id)
    tx = build_node(cfg, n_frames, seed)
    ch = ChannelRealization(tuple(h_taps), noise_power=noise_power)
    rx = apply_channel(ch, tx.stream, rng)
    rx = SampleStream(rx.view(0, rx.end), 0)
    return cfg, tx, ofdm_demodulate(cfg, rx, 0, n_frames * 120)


class TestLsEstimate:
    def test_exact_at_rs_cells_noise_free(self):
        cfg, tx, grid = received_grid([(0, 0.7 - 0.2j)])
        sparse = ls_estimate_rs(grid, rs_pattern(0))
        assert sparse  # RS symbols found
        for t, est in sparse.items():
            assert np.allclose(est, 0.7 - 0.2j, atol=1e-12)

    def test_zero_grid_gives_zero_estimates(self):
        cfg, tx, grid = received_grid([(0, 1.0)])
        grid.values[:] = 0
        sparse = ls_estimate_rs(grid, rs_pattern(0))
        for est in sparse.values():
            assert np.all(est == 0)

    def test_mse_matches_ls_theory(self, rng):
        # flat H = 1, per-bin noise variance N*sigma^2 after the unnormalized
        # DFT; per-cell estimation MSE equals that variance within 10%
        sigma2 = 1e-4
        cfg, tx, grid = received_grid([(0, 1.0)], noise_power=sigma2,
                                      n_frames=2, rng=rng)
        sparse = ls_estimate_rs(grid, rs_pattern(0))
        errs = np.concatenate([est - 1.0 for est in sparse.values()])
        assert len(errs) >= 1e4
        expected = cfg.fft_size * sigma2
        assert np.mean(np.abs(errs) ** 2) == pytest.approx(expected, rel=0.10)


class TestInterpolateLinear:
    def test_constant_extends_everywhere(self):
        cfg = fd_20mhz()
        pat = rs_pattern(0)
        c = 0.3 + 0.8j
        sparse = np.full(len(pat.positions(cfg.used_subcarriers)), c)
        full = interpolate_linear(sparse, pat, cfg)
        assert np.allclose(full, c, atol=1e-15)

    def test_midpoint_of_linear_map(self):
        cfg = fd_20mhz()
        pat = rs_pattern(0)
        pos = pat.positions(cfg.used_subcarriers)
        sparse = pos.astype(complex)  # value k at position k: affine
        full = interpolate_linear(sparse, pat, cfg)
        assert full[3] == pytest.approx(3.0)  # midpoint between RS at 0 and 6

    def test_affine_channel_exact_between_rs(self):
        cfg = fd_20mhz()
        pat = rs_pattern(1)
        pos = pat.positions(cfg.used_subcarriers)
        a, b = 0.5 - 0.1j, (0.002 + 0.003j)
        full = interpolate_linear(a + b * pos, pat, cfg)
        axis = np.arange(cfg.used_subcarriers)
        inside = (axis >= pos[0]) & (axis <= pos[-1])
        assert np.max(np.abs(full[inside] - (a + b * axis[inside]))) < 1e-12
        # outside the RS span: nearest-RS constant extension
        assert np.allclose(full[: pos[0]], a + b * pos[0])
        assert np.allclose(full[pos[-1] + 1 :], a + b * pos[-1])

    def test_too_few_rs_rejected(self):
        cfg = fd_20mhz()
        from fdsim.waveform import RsPattern
        lonely = RsPattern(node_id=0, subcarrier_offset=0, subcarrier_stride=4096)
        with pytest.raises(EstimationError):
            interpolate_linear(np.array([1.0 + 0j]), lonely, cfg)


def two_node_grid(si_gain, des_gain, seed=21, noise_power=0.0, rng=None,
                  si_delay=0, des_delay=0):
    cfg0 = fd_20mhz(qam_order=4, node_id=0)
    cfg1 = fd_20mhz(qam_order=4, node_id=1)
    own = build_node(cfg0, 1, seed)
    peer = build_node(cfg1, 1, seed)
    parts = []
    if si_gain:
        parts.append(apply_channel(ChannelRealization(((si_delay, si_gain),)), own.stream))
    if des_gain:
        parts.append(apply_channel(ChannelRealization(((des_delay, des_gain),)), peer.stream))
    rx = add_streams(*parts)
    rx = SampleStream(rx.view(0, rx.end), 0)
    if noise_power:
        rx = awgn(rx, noise_power, rng)
    return cfg0, ofdm_demodulate(cfg0, rx, 0, 120)


class TestEstimateBoth:
    def test_si_only_reception(self):
        g = 0.05 * np.exp(1j * 0.4)
        cfg0, grid = two_node_grid(si_gain=g, des_gain=0.0)
        inter, intra = estimate_both(grid, cfg0)
        assert np.max(np.abs(intra.h - g)) < 1e-12
        assert np.max(np.abs(inter.h)) < 1e-12

    def test_peer_only_reception(self):
        g = 0.02 * np.exp(-1j * 1.1)
        cfg0, grid = two_node_grid(si_gain=0.0, des_gain=g)
        inter, intra = estimate_both(grid, cfg0)
        assert np.max(np.abs(inter.h - g)) < 1e-12
        assert np.max(np.abs(intra.h)) < 1e-12

    def test_both_active_disjointness_keeps_leakage_down(self, rng):
        # the two signals differ by 20 dB; each estimate tracks its own
        # ground truth because the patterns are cell-disjoint
        g_si, g_des = 0.1, 1.0
        cfg0, grid = two_node_grid(si_gain=g_si, des_gain=g_des,
                                   noise_power=1e-8, rng=rng, si_delay=4)
        inter, intra = estimate_both(grid, cfg0)
        used = cfg0.used_bins()
        h_si_truth = g_si * np.exp(-2j * np.pi * used * 4 / cfg0.fft_size)
        err_si = np.mean(np.abs(intra.h - h_si_truth) ** 2) / g_si ** 2
        err_des = np.mean(np.abs(inter.h - g_des) ** 2) / g_des ** 2
        assert 10 * np.log10(err_si + 1e-300) < -30.0
        assert 10 * np.log10(err_des + 1e-300) < -30.0

    def test_node_role_symmetry(self):
        # swapping the node roles swaps which pattern feeds which estimator
        g_si, g_des = 0.3 + 0.1j, 0.8 - 0.5j
        cfg0, grid0 = two_node_grid(si_gain=g_si, des_gain=g_des)
        inter0, intra0 = estimate_both(grid0, cfg0)

        cfg1 = fd_20mhz(qam_order=4, node_id=1)
        own = build_node(cfg1, 1, 21)
        peer = build_node(fd_20mhz(qam_order=4, node_id=0), 1, 21)
        rx = add_streams(
            apply_channel(ChannelRealization(((0, g_si),)), own.stream),
            apply_channel(ChannelRealization(((0, g_des),)), peer.stream),
        )
        grid1 = ofdm_demodulate(cfg1, SampleStream(rx.view(0, rx.end), 0), 0, 120)
        inter1, intra1 = estimate_both(grid1, cfg1)
        assert np.max(np.abs(intra1.h - g_si)) < 1e-12
        assert np.max(np.abs(inter1.h - g_des)) < 1e-12
        assert np.max(np.abs(intra0.h - g_si)) < 1e-12
        assert np.max(np.abs(inter0.h - g_des)) < 1e-12

    def test_hold_mode_shapes(self):
        cfg0, grid = two_node_grid(si_gain=0.5, des_gain=1.0)
        inter = estimate_pattern(grid, rs_pattern(1), "inter_node", time_mode="hold")
        assert inter.h.shape == (120, cfg0.used_subcarriers)
        assert np.allclose(inter.at(0), inter.at(1))  # held between RS symbols

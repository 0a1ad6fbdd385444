"""Experiment runner: wires two simulated nodes through the front end and
executes the full receive chain, producing LinkReports.

Timeline convention: each node's transmit stream starts at global sample 0
with its frame 0 (propagation and loop delays live in the channel taps), so
the first detected sync occurrence pins the frame phase. The observed node's
receiver runs on the desired-link timing when a peer transmits, else on its
own transmit frame clock (the digital-cancellation measurement mode).

Payloads are seeded per (scenario seed, node, frame) so both directions of a
full-duplex run observe the same transmissions; receiver noise is seeded per
observed node. Cancellation depths are instrumented on the isolated
self-interference component in the grid domain, all three stages against the
same reference power, so total = analog_total + digital holds exactly.
"""

from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import canceller as cn
from . import metrics as mt
from .dsp import SampleStream, add_streams
from .frontend import (
    AnalogCancelConfig,
    TuningError,
    adc_quantize,
    analog_cancel,
    apply_channel,
    apply_impairments,
    awgn,
    passive_gain,
    tune_active_tap,
)
from .scenario import Scenario
from .sync import SyncError, estimate_pattern, synchronize
from .waveform import (
    FrameConfig,
    build_frame,
    frame_payload_bits,
    ofdm_demodulate,
    ofdm_modulate,
    qam_map,
    rs_pattern,
    write_iq,
)

_TAG_PAYLOAD, _TAG_NOISE, _TAG_PROBE, _TAG_CAL = 101, 102, 103, 104


def _rng(seed: int, *key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed) & 0x7FFFFFFF, *key]))


@dataclass
class NodeTx:
    cfg: FrameConfig
    grids: list
    payloads: list
    stream: SampleStream


def build_node(cfg: FrameConfig, n_frames: int, seed: int) -> NodeTx:
    """Seeded PRBS payload per frame, mapped and modulated back to back."""
    grids, payloads, chunks = [], [], []
    nbits = frame_payload_bits(cfg)
    for f in range(n_frames):
        rng = _rng(seed, _TAG_PAYLOAD, cfg.node_id, f)
        bits = rng.integers(0, 2, size=nbits)
        grids.append(build_frame(cfg, bits))
        payloads.append(bits)
        chunks.append(ofdm_modulate(cfg, grids[-1], start=f * cfg.frame_len).samples)
    return NodeTx(cfg=cfg, grids=grids, payloads=payloads,
                  stream=SampleStream(np.concatenate(chunks), 0))


@dataclass
class DirectionResult:
    observed: int
    sync_desired_index: int | None = None
    sync_si_index: int | None = None
    sync_desired_peak: float | None = None
    sync_si_peak: float | None = None
    analog_passive_db: float | None = None
    analog_total_db: float | None = None
    digital_db: float | None = None
    total_cancellation_db: float | None = None
    active_gain_db: float | None = None
    evm_percent: float | None = None
    ber: float | None = None
    good_bits: int = 0
    erased_cells: int = 0
    si_misalignment: int | None = None
    errors: list = field(default_factory=list)
    # optional captures for demo/dump
    data_cells: np.ndarray | None = None
    pre_cells: np.ndarray | None = None
    post_cells: np.ndarray | None = None
    rx: SampleStream | None = None
    inter_h: np.ndarray | None = None
    intra_h: np.ndarray | None = None


def _used_column(cfg: FrameConfig, stream: SampleStream, w0: int) -> np.ndarray:
    bins = cfg.used_bins() % cfg.fft_size
    return np.fft.fft(stream.view(w0 + cfg.cp_len, cfg.fft_size))[bins]


def simulate_direction(sc: Scenario, observed: int, keep_cells: bool = False,
                       keep_iq: bool = False) -> DirectionResult:
    """One receive chain: the observed node decoding its peer (and cancelling
    its own transmission when full duplex)."""
    res = DirectionResult(observed=observed)
    peer = 1 - observed
    full = sc.duplex_mode == "full"
    peer_active = not (peer == 1 and sc.peer_silent)
    cfg_obs = sc.config_for(observed)
    cfg_peer = sc.config_for(peer)
    L = cfg_obs.symbol_len
    n_gen = sc.num_frames + 1

    own = peer_tx = None
    tx_imp = si_passive = si_res = desired_rx = None
    g_pass = passive_gain(AnalogCancelConfig(passive_isolation_db=sc.passive_isolation_db))

    if full:
        own = build_node(cfg_obs, n_gen, sc.seed)
        tx_imp = apply_impairments(sc.impairments, own.stream)
        si_raw = apply_channel(sc.si_channel(), tx_imp)
        p_uniso_time = si_raw.power()
        si_passive = si_raw.scaled(g_pass)
        del si_raw
        if p_uniso_time > 0.0:
            res.analog_passive_db = mt.cancellation_depth_db(
                p_uniso_time, si_passive.power())
    if peer_active:
        peer_tx = build_node(cfg_peer, n_gen, sc.seed)
        desired_rx = apply_channel(sc.desired_channel(),
                                   apply_impairments(sc.impairments, peer_tx.stream))

    def _noise_power(reference_power: float) -> float:
        # receiver noise relative to the desired signal, or to the residual
        # SI when the peer is silent
        if sc.snr_db is None:
            return 0.0
        return reference_power * 10.0 ** (-sc.snr_db / 10.0)

    if full and sc.active_enabled:
        # the active tap is tuned on a short probe; the peer is quiet during
        # analog calibration, but the receiver noise floor is present
        ref_probe = desired_rx.power() if peer_active else si_passive.power()
        probe_len = 2 * L + sc.tune_max_delay
        probe = SampleStream(si_passive.samples[:probe_len], si_passive.start)
        probe = awgn(probe, _noise_power(ref_probe), _rng(sc.seed, _TAG_PROBE, observed))
        try:
            tap = tune_active_tap(tx_imp, probe, max_delay=sc.tune_max_delay)
            acfg = AnalogCancelConfig(passive_isolation_db=sc.passive_isolation_db,
                                      active_enabled=True, active_tap=tap)
            si_res = analog_cancel(acfg, si_passive, tx_imp)
        except TuningError as e:
            res.errors.append(f"analog tuning failed: {e}")
            si_res = si_passive
    elif full:
        acfg = AnalogCancelConfig(passive_isolation_db=sc.passive_isolation_db)
        si_res = analog_cancel(acfg, si_passive, tx_imp)

    parts = [s for s in (si_res, desired_rx) if s is not None]
    if not parts:
        res.errors.append("nothing to receive: no SI path and peer silent")
        return res
    rx = add_streams(*parts)
    # the capture window opens at the receiver's global sample 0
    rx = SampleStream(rx.view(0, rx.end), 0)
    noise_ref = desired_rx.power() if peer_active else si_res.power()
    rx = awgn(rx, _noise_power(noise_ref), _rng(sc.seed, _TAG_NOISE, observed))
    rx = adc_quantize(sc.impairments, rx)
    if keep_iq:
        res.rx = rx

    # --- synchronization ---
    # The SI timing is acquired on a calibration capture (peer quiet, active
    # tap not yet engaged): the loop timing is fixed in the node's own clock
    # domain, so the index stays valid once delivered to the canceller's
    # counter. The desired timing comes from the live capture.
    sync_span = int(2.2 * cfg_obs.half_frame_len) + 2 * L
    si_index = si_peak = None
    if full and (sc.digital_canceller or not peer_active):
        cal = SampleStream(si_passive.samples[: min(len(si_passive), sync_span)],
                           si_passive.start)
        cal = awgn(cal, _noise_power(noise_ref), _rng(sc.seed, _TAG_CAL, observed))
        try:
            cal_sync = synchronize(cfg_obs, cal)
            if cal_sync.si_detected:
                si_index = cal_sync.si_start_index
            si_peak = cal_sync.si_peak
        except SyncError as e:
            res.errors.append(f"SI calibration sync failure: {e}")
            si_peak = e.si_peak
    res.sync_si_index = si_index
    res.sync_si_peak = si_peak

    sres = None
    if peer_active:
        sync_rx = SampleStream(rx.samples[: min(len(rx), sync_span)], rx.start)
        try:
            sres = synchronize(cfg_obs, sync_rx)
            res.sync_desired_index = sres.desired_start_index
            res.sync_desired_peak = sres.desired_peak
        except SyncError as e:
            res.errors.append(f"sync failure: {e}")
            res.sync_desired_peak = e.desired_peak
            return res

    if peer_active and sres is not None and sres.desired_detected:
        f0 = sres.desired_start_index - 6 * L
    else:
        f0 = 0
    p_si = None if si_index is None else si_index - 6 * L

    n_sym = sc.num_frames * cfg_obs.symbols_per_frame
    if f0 < rx.start or f0 + n_sym * L > rx.end:
        res.errors.append(f"decode span [{f0}, {f0 + n_sym * L}) outside capture")
        return res

    # --- channel estimation on the decode-timing grid ---
    grid_est = ofdm_demodulate(cfg_obs, rx, f0, n_sym)
    own_off = 0
    if p_si is not None:
        q, r = divmod(p_si - f0, L)
        own_off = -q
        res.si_misalignment = r
    inter = intra = None
    try:
        if peer_active:
            inter = estimate_pattern(grid_est, rs_pattern(peer), "inter_node",
                                     symbol_offset=0, time_mode=sc.estimator_time_mode)
        if full and p_si is not None:
            intra = estimate_pattern(grid_est, rs_pattern(observed), "intra_node",
                                     symbol_offset=own_off, time_mode=sc.estimator_time_mode)
    except Exception as e:
        res.errors.append(f"estimation failure: {e}")
        return res
    del grid_est
    if inter is not None:
        res.inter_h = inter.at(0).copy()
    if intra is not None:
        res.intra_h = intra.at(0).copy()

    state = None
    if full and sc.digital_canceller and intra is not None:
        state = cn.make_state(cfg_obs, own.grids, intra, f0, p_si)
        if not state.within_cp:
            res.errors.append(
                f"SI misalignment {state.cyclic_offset} exceeds the CP; "
                "frequency-domain cancellation degraded")
        m_lo = state.symbol_offset
        m_hi = n_sym - 1 + state.symbol_offset
        if m_lo < 0 or m_hi >= state.own_symbols.shape[0]:
            res.errors.append(
                f"SI counter offset {state.symbol_offset} points outside the "
                "transmitted range; digital canceller disabled for this run")
            state = None

    # --- depth instrumentation on the SI component (grid domain) ---
    if full:
        p_passive = p_pre = p_post = 0.0
        pre_cells, post_cells = [], []
        for t in range(n_sym):
            w0 = f0 + t * L
            p_passive += float(np.sum(np.abs(_used_column(cfg_obs, si_passive, w0)) ** 2))
            pre = _used_column(cfg_obs, si_res, w0)
            p_pre += float(np.sum(np.abs(pre) ** 2))
            if state is not None:
                state.counter = t
                resid = pre - cn.rebuild_si(state)
                p_post += float(np.sum(np.abs(resid) ** 2))
                if keep_cells:
                    post_cells.append(resid)
            if keep_cells:
                pre_cells.append(pre)
        p_uniso = p_passive / (g_pass ** 2)
        if p_uniso > 0.0:
            res.analog_total_db = mt.cancellation_depth_db(p_uniso, p_pre)
            res.active_gain_db = res.analog_total_db - res.analog_passive_db
        if p_uniso > 0.0 and state is not None and p_pre > 0.0:
            # p_pre == 0 means the analog stage already cancelled to exact
            # zero; the digital stage has nothing to measure against
            res.digital_db = mt.cancellation_depth_db(p_pre, p_post)
            res.total_cancellation_db = mt.cancellation_depth_db(p_uniso, p_post)
        if keep_cells:
            res.pre_cells = np.concatenate(pre_cells) if pre_cells else None
            res.post_cells = np.concatenate(post_cells) if post_cells else None

    # --- decode the desired link ---
    if peer_active and inter is not None:
        dec = cn.decode_frames(rx, cfg_peer, f0, sc.num_frames, inter, state,
                               reference_grids=peer_tx.grids[: sc.num_frames])
        k = int(np.log2(cfg_peer.qam_order))
        tx_bits = np.concatenate(peer_tx.payloads[: sc.num_frames])
        # qam_map(payload) reproduces the grid's data cells in fill order
        ref_cells = qam_map(tx_bits, cfg_peer.qam_order)
        keep = ~dec.erased_mask
        res.evm_percent = mt.evm_percent(dec.data_cells[keep], ref_cells[keep])
        res.ber = mt.bit_error_rate(tx_bits, dec.bits, exclude=dec.erased_mask,
                                    bits_per_cell=k)
        res.good_bits = mt.good_bits(tx_bits, dec.bits, k, exclude=dec.erased_mask)
        res.erased_cells = int(dec.erased_mask.sum())
        if keep_cells:
            res.data_cells = dec.data_cells
    return res


def run_scenario(sc: Scenario, keep_cells: bool = False,
                 keep_iq: bool = False) -> mt.LinkReport:
    """Execute one scenario end to end; failures are recorded in the report,
    never thrown."""
    report = mt.LinkReport(
        scenario_id=sc.id,
        seed=sc.seed,
        duplex_mode=sc.duplex_mode,
        qam_order=sc.qam_up if not sc.peer_silent else sc.qam_down,
        snr_db=sc.snr_db,
    )
    report.details = {}
    try:
        a = simulate_direction(sc, 0, keep_cells=keep_cells, keep_iq=keep_iq)
    except Exception as e:
        report.errors.append(f"direction 0 failed: {e!r}")
        return report
    for name in ("analog_passive_db", "analog_total_db", "digital_db",
                 "total_cancellation_db", "evm_percent", "ber",
                 "sync_desired_index", "sync_si_index",
                 "sync_desired_peak", "sync_si_peak"):
        setattr(report, name, getattr(a, name))
    report.errors.extend(a.errors)
    report.details["direction0"] = a

    good = [a.good_bits]
    if not sc.peer_silent:
        try:
            b = simulate_direction(sc, 1)
            good.append(b.good_bits)
            report.errors.extend(f"direction 1: {e}" for e in b.errors)
            report.details["direction1"] = b
        except Exception as e:
            report.errors.append(f"direction 1 failed: {e!r}")
        report.throughput_bps = mt.throughput_bps(good, sc.num_frames * 0.01)
    return report


def _write_estimate_dump(path: str, d0: DirectionResult) -> None:
    inter = d0.inter_h
    intra = d0.intra_h
    n = len(inter) if inter is not None else (len(intra) if intra is not None else 0)
    if n == 0:
        return
    with open(path, "w") as fh:
        fh.write("subcarrier_position,inter_re,inter_im,intra_re,intra_im\n")
        for i in range(n):
            ir = f"{inter[i].real:.9g},{inter[i].imag:.9g}" if inter is not None else ","
            ia = f"{intra[i].real:.9g},{intra[i].imag:.9g}" if intra is not None else ","
            fh.write(f"{i},{ir},{ia}\n")


def run_suite(scenarios: list[Scenario], out_dir: str, jobs: int = 1,
              dump_iq: bool = False, dump_estimates: bool = False) -> list[mt.LinkReport]:
    """Execute scenarios (optionally in parallel), merge deterministically in
    file order, and write the CSV report."""
    os.makedirs(out_dir, exist_ok=True)
    if jobs > 1 and len(scenarios) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            reports = list(pool.map(run_scenario, scenarios))
    else:
        reports = [run_scenario(s, keep_iq=dump_iq) for s in scenarios]
    for sc, rep in zip(scenarios, reports):
        d0 = getattr(rep, "details", {}).get("direction0")
        if d0 is None:
            continue
        if dump_iq and d0.rx is not None:
            write_iq(os.path.join(out_dir, f"{sc.id}_rx.iq"), d0.rx, {
                "profile": sc.profile, "node_id": 0,
                "qam_order": sc.qam_up or sc.qam_down, "seed": sc.seed,
            })
        if dump_estimates:
            _write_estimate_dump(os.path.join(out_dir, f"{sc.id}_estimates.csv"), d0)
    mt.write_csv(reports, os.path.join(out_dir, "report.csv"))
    return reports

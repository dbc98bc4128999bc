"""Acceptance suite: one test per criterion, each printing a verdict line.

Run with ``pytest tests/test_acceptance.py -v -s`` to see the per-criterion
lines. The end-to-end benchmark (criteria 7, 8, 10) shares one trained
model through session fixtures; the real-data check (criterion 9) skips
unless SPIKESTREAM_CARDS_DIR points at a converted dataset.
"""

import math
import os
import time
from pathlib import Path

import numpy as np
import pytest

from spikestream.events import (Event, SyntheticPatternSpec,
                                concatenate_streams, generate_synthetic,
                                parse_stream)
from spikestream.gabor import (FilterLayerState, FrontendConfig, build_bank,
                               extract_features, spikes_to_train)
from spikestream.model_io import WeightsMeta, save_weights
from spikestream.neuron import (NeuronTrace, PspKernel, SpikeTrain,
                                detect_peak, evaluate_voltage, kernel_value)
from spikestream.readout import (InferenceConfig, classify_stream,
                                 decisions_to_text, evaluate)
from spikestream.training import (TrainerConfig, TrainingSample,
                                  loss_gradient_wrt_peaks,
                                  peak_gradient_wrt_weights, train)

# benchmark scale: four bar orientations at paper-default learning settings
BENCH = dict(width=20, height=20, duration_ms=100.0, velocity=0.35,
             noise_rate=2.0, tau_m_ms=20.0, search_range_ms=20.0,
             train_per_class=50, test_per_class=20, iterations=10,
             population=10, learning_rate=0.1, seed=42)


def verdict(num, name, ok, detail=""):
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {num:2d} {name}"
    if detail:
        line += f": {detail}"
    print(line)
    assert ok, line


def brute_voltage(weights, kernel, train_, t):
    """Direct weighted kernel summation over the whole history."""
    dt = t - train_.times
    k = np.where(dt >= 0,
                 kernel.v0 * (np.exp(-np.clip(dt, 0, None) / kernel.tau_m)
                              - np.exp(-np.clip(dt, 0, None) / kernel.tau_s)),
                 0.0)
    return float(np.sum(np.asarray(weights)[train_.afferents] * k))


def peak_corpus(seed=1234, n=100):
    """Random peak-search instances with microsecond-aligned spikes."""
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n):
        kernel = PspKernel(float(rng.uniform(5, 50)))
        n_aff = int(rng.integers(3, 10))
        n_spk = int(rng.integers(0, 40))
        t_start = int(rng.integers(0, 20_000)) / 1000.0
        t_range = int(rng.integers(2_000, 10_000)) / 1000.0
        horizon = int((t_start + t_range + 5.0) * 1000)
        times = np.sort(rng.integers(0, horizon, n_spk)) / 1000.0
        affs = rng.integers(0, n_aff, n_spk)
        w = rng.uniform(-1, 1, n_aff)
        out.append((kernel, SpikeTrain(times, affs, n_aff), w,
                    t_start, t_range))
    return out


def gradient_corpus(seed=4321, n=100):
    """Small first-segment instances: 2 classes, 5 afferents, <= 10 spikes."""
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n):
        kernel = PspKernel(float(rng.uniform(8, 40)))
        n_spk = int(rng.integers(1, 11))
        times = np.sort(rng.integers(0, 20_000, n_spk)) / 1000.0
        affs = rng.integers(0, 5, n_spk)
        w = rng.uniform(0.0, 0.5, (2, 5))
        label = int(rng.integers(0, 2))
        out.append((kernel, SpikeTrain(times, affs, 5), w, label))
    return out


def test_criterion_1_kernel_normalization():
    t0 = time.perf_counter()
    kernel = PspKernel(80.0)
    grid = np.arange(0, int(10 * kernel.tau_m * 1000) + 1) * 1e-3
    peak = float(kernel_value(kernel, grid).max())
    raw_grid_peak = peak / kernel.v0
    v0_from_grid = 1.0 / raw_grid_peak
    elapsed = time.perf_counter() - t0
    ok = (abs(peak - 1.0) < 1e-6
          and abs(kernel.v0 - v0_from_grid) < 1e-6
          and abs(kernel.v0 - 2.1165347) < 1e-6
          and elapsed < 1.0)
    verdict(1, "kernel normalization", ok,
            f"grid max {peak:.9f}, v0 {kernel.v0:.7f}, {elapsed:.2f}s")


def test_criterion_2_voltage_exactness():
    t0 = time.perf_counter()
    rng = np.random.default_rng(77)
    worst = 0.0
    for _ in range(100):
        kernel = PspKernel(float(rng.uniform(5, 100)))
        n_aff = int(rng.integers(2, 20))
        n_spk = int(rng.integers(1, 201))
        times = np.sort(rng.uniform(0, 400.0, n_spk))
        train_ = SpikeTrain(times, rng.integers(0, n_aff, n_spk), n_aff)
        w = rng.uniform(-1, 1, n_aff)
        trace = NeuronTrace(w, kernel)
        queries = np.sort(rng.uniform(0, 500.0, 100))
        for t in queries:
            got = evaluate_voltage(trace, train_, float(t))
            worst = max(worst, abs(got - brute_voltage(w, kernel, train_,
                                                       float(t))))
    elapsed = time.perf_counter() - t0
    ok = worst < 1e-9 and elapsed < 5.0
    verdict(2, "voltage exactness", ok,
            f"max abs err {worst:.2e}, {elapsed:.2f}s")


def test_criterion_3_peak_detection():
    t0 = time.perf_counter()
    worst_v = worst_t = 0.0
    for kernel, train_, w, t_start, t_range in peak_corpus():
        r = detect_peak(w, kernel, train_, t_start, t_range)
        n_grid = int(round(t_range * 1000))
        grid = t_start + np.arange(1, n_grid + 1) * 1e-3
        dt = grid[:, None] - train_.times[None, :]
        kv = np.where(
            dt >= 0,
            kernel.v0 * (np.exp(-np.clip(dt, 0, None) / kernel.tau_m)
                         - np.exp(-np.clip(dt, 0, None) / kernel.tau_s)),
            0.0)
        vals = kv @ np.asarray(w)[train_.afferents] if len(train_) \
            else np.zeros(n_grid)
        gi = int(np.argmax(vals))
        worst_v = max(worst_v, abs(r.v_peak - vals[gi]))
        worst_t = max(worst_t, abs(r.t_peak - grid[gi]))
    elapsed = time.perf_counter() - t0
    ok = worst_v < 1e-6 and worst_t <= 1e-3 + 1e-12 and elapsed < 10.0
    verdict(3, "peak detection vs grid", ok,
            f"dV {worst_v:.2e}, dt {worst_t * 1000:.3f}us, {elapsed:.2f}s")


def test_criterion_4_gradient_correctness():
    t0 = time.perf_counter()
    lr = 0.1
    h = 1e-5
    worst = 0.0
    for kernel, train_, w, label in gradient_corpus():
        t_range = 30.0
        peaks = [detect_peak(w[j], kernel, train_, 0.0, t_range)
                 for j in range(2)]
        t_peaks = [p.t_peak for p in peaks]
        v_peaks = np.array([p.v_peak for p in peaks])
        d_loss = loss_gradient_wrt_peaks(v_peaks, label)
        delta = np.stack([
            -lr * d_loss[j] * peak_gradient_wrt_weights(train_, 0.0,
                                                        t_peaks[j], kernel)
            for j in range(2)
        ])

        def frozen_loss(weights):
            vp = []
            for j in range(2):
                mask = (train_.times >= 0.0) & (train_.times < t_peaks[j])
                kv = kernel_value(kernel, t_peaks[j] - train_.times[mask])
                vp.append(float(np.sum(
                    weights[j][train_.afferents[mask]] * kv)))
            f = np.log1p(np.exp(vp))
            return float(-np.log(f[label] / f.sum()))

        for j in range(2):
            for i in range(5):
                wp = w.copy()
                wm = w.copy()
                wp[j, i] += h
                wm[j, i] -= h
                fd = -lr * (frozen_loss(wp) - frozen_loss(wm)) / (2 * h)
                if abs(fd) < 1e-12:
                    assert abs(delta[j, i]) < 1e-12
                else:
                    worst = max(worst, abs(delta[j, i] - fd) / abs(fd))
    elapsed = time.perf_counter() - t0
    ok = worst < 1e-5 and elapsed < 10.0
    verdict(4, "gradient correctness", ok,
            f"max rel err {worst:.2e}, {elapsed:.2f}s")


def test_criterion_5_termination():
    t0 = time.perf_counter()
    checked = 0
    for kernel, train_, w, t_start, t_range in peak_corpus():
        duration = float(t_start + t_range + 5.0)
        sample = TrainingSample(train_, 0, duration)
        cfg = TrainerConfig(classes=2, search_range_ms=t_range,
                            tau_m_ms=kernel.tau_m, iterations=1,
                            population=1, seed=0, shuffle=False)
        result = train([sample], cfg)
        starts = [r.t_start for r in result.records]
        assert all(b > a for a, b in zip(starts, starts[1:])), \
            "segment start revisited"
        assert len(starts) <= math.ceil(duration / 1e-3)
        checked += 1
    for kernel, train_, w, label in gradient_corpus():
        duration = 30.0
        sample = TrainingSample(train_, label, duration)
        cfg = TrainerConfig(classes=2, search_range_ms=10.0,
                            tau_m_ms=kernel.tau_m, iterations=1,
                            population=1, seed=0, shuffle=False)
        result = train([sample], cfg)
        starts = [r.t_start for r in result.records]
        assert all(b > a for a, b in zip(starts, starts[1:]))
        assert len(starts) <= math.ceil(duration / 1e-3)
        checked += 1
    elapsed = time.perf_counter() - t0
    verdict(5, "segment loop termination", checked == 200,
            f"{checked} instances, {elapsed:.2f}s")


def test_criterion_6_lateral_inhibition():
    t0 = time.perf_counter()
    rng = np.random.default_rng(99)
    bank = build_bank()
    cfg = FrontendConfig(tau_m_ms=25.0)
    streams = 0
    spikes_seen = 0
    for _ in range(1000):
        state = FilterLayerState(bank, 10, 10, cfg)
        n = int(rng.integers(20, 45))
        ts = np.sort(rng.integers(0, 6000, n))
        for t in ts:
            e = Event(int(rng.integers(1, 11)), int(rng.integers(1, 11)),
                      int(t), int(rng.integers(0, 2)) * 2 - 1)
            fired = state.process_event(e)
            per_unit = set()
            for sp in fired:
                key = (sp.map_index, sp.ux, sp.uy)
                assert key not in per_unit, "unit fired twice in one step"
                per_unit.add(key)
                for px in (2 * sp.ux + 1, 2 * sp.ux + 2):
                    for py in (2 * sp.uy + 1, 2 * sp.uy + 2):
                        if px <= 10 and py <= 10:
                            v = state.voltage(sp.map_index, px, py, e.t)
                            assert v == cfg.v_reset, "unit not reset"
                spikes_seen += 1
        streams += 1
    elapsed = time.perf_counter() - t0
    verdict(6, "lateral inhibition", streams == 1000 and spikes_seen > 0,
            f"{streams} streams, {spikes_seen} spikes checked, {elapsed:.1f}s")


def bench_samples(per_class, seed):
    bank = build_bank()
    fc = FrontendConfig(tau_m_ms=BENCH["tau_m_ms"])
    rng = np.random.default_rng(seed)
    samples, streams = [], []
    for label, orient in enumerate([0.0, 45.0, 90.0, 135.0]):
        for _ in range(per_class):
            spec = SyntheticPatternSpec(
                kind="bar", orientation_deg=orient,
                velocity=BENCH["velocity"] * float(rng.uniform(0.8, 1.2)),
                noise_rate=BENCH["noise_rate"], width=BENCH["width"],
                height=BENCH["height"], duration_ms=BENCH["duration_ms"],
                phase=float(rng.uniform(0, 1)))
            s = generate_synthetic(spec, seed=int(rng.integers(2**63)),
                                   label=label)
            feats = extract_features(s, bank, fc)
            tr = spikes_to_train(feats, bank.n_maps,
                                 (BENCH["width"] + 1) // 2,
                                 (BENCH["height"] + 1) // 2)
            samples.append(TrainingSample(tr, label, s.duration_ms))
            streams.append(s)
    return samples, streams


def bench_trainer_config():
    return TrainerConfig(classes=4, search_range_ms=BENCH["search_range_ms"],
                         tau_m_ms=BENCH["tau_m_ms"],
                         learning_rate=BENCH["learning_rate"],
                         iterations=BENCH["iterations"],
                         population=BENCH["population"], seed=BENCH["seed"])


@pytest.fixture(scope="session")
def benchmark():
    """Trained synthetic model shared by criteria 7, 8 and 10."""
    t0 = time.perf_counter()
    train_samples, _ = bench_samples(BENCH["train_per_class"], seed=1)
    test_samples, test_streams = bench_samples(BENCH["test_per_class"],
                                               seed=777)
    featurize_s = time.perf_counter() - t0
    t0 = time.perf_counter()
    result = train(train_samples, bench_trainer_config())
    train_s = time.perf_counter() - t0
    return dict(train_samples=train_samples, test_samples=test_samples,
                test_streams=test_streams, result=result,
                featurize_s=featurize_s, train_s=train_s)


def test_criterion_7_end_to_end_benchmark(benchmark):
    t0 = time.perf_counter()
    kernel = PspKernel(BENCH["tau_m_ms"])
    report = evaluate(
        [(s.train, s.label, s.duration_ms) for s in benchmark["test_samples"]],
        benchmark["result"].weights, kernel, BENCH["population"],
        InferenceConfig(threshold=1.0), classes=4)
    eval_s = time.perf_counter() - t0
    total = benchmark["featurize_s"] + benchmark["train_s"] + eval_s
    ok = report.accuracy >= 0.95 and total < 300.0
    verdict(7, "end-to-end synthetic benchmark", ok,
            f"accuracy {report.accuracy:.4f} "
            f"(featurize {benchmark['featurize_s']:.0f}s + "
            f"train {benchmark['train_s']:.0f}s + eval {eval_s:.0f}s "
            f"= {total:.0f}s)")


def streaming_run(benchmark):
    """Concatenated multi-class stream and its periodic decisions."""
    streams = benchmark["test_streams"]
    picks = [streams[0], streams[25], streams[50], streams[75],
             streams[10], streams[60]]
    joined = concatenate_streams(picks)
    truth = [s.label for s in picks]
    kernel = PspKernel(BENCH["tau_m_ms"])
    decisions = classify_stream(
        joined, build_bank(), FrontendConfig(tau_m_ms=BENCH["tau_m_ms"]),
        benchmark["result"].weights, kernel, BENCH["population"],
        InferenceConfig(threshold=1.0, period_ms=5.0),
        search_range_ms=BENCH["search_range_ms"])
    return picks, truth, decisions


def test_criterion_8_streaming_behavior(benchmark):
    t0 = time.perf_counter()
    picks, truth, decisions = streaming_run(benchmark)
    span = BENCH["duration_ms"]
    late_wrong = []
    for i, label in enumerate(truth):
        lo = i * span + 15.0 - 1e-9
        hi = (i + 1) * span + 1e-9
        for d in decisions:
            if lo < d.time_ms <= hi and d.predicted != label:
                late_wrong.append((d.time_ms, d.predicted, label))
    elapsed = time.perf_counter() - t0
    ok = len(decisions) > 0 and not late_wrong
    verdict(8, "streaming stabilizes within 15 ms", ok,
            f"{len(decisions)} decisions over {len(truth)} spans"
            + (f", wrong after lock: {late_wrong[:3]}" if late_wrong else "")
            + f", {elapsed:.0f}s")


def test_criterion_9_real_data_hook(tmp_path):
    data_dir = os.environ.get("SPIKESTREAM_CARDS_DIR")
    if not data_dir:
        print("[SKIP] criterion  9 real-data hook: "
              "SPIKESTREAM_CARDS_DIR not set")
        pytest.skip("cards dataset not provided")
    manifest = Path(data_dir) / "manifest.tsv"
    assert manifest.exists(), f"no manifest.tsv under {data_dir}"
    entries = []
    for line in manifest.read_text().splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        name, label = line.split("\t") if "\t" in line else line.split()
        entries.append((manifest.parent / name, int(label)))
    labels = sorted({lb for _, lb in entries})
    classes = len(labels)
    by_class = {lb: [p for p, l2 in entries if l2 == lb] for lb in labels}
    assert all(len(v) >= 10 for v in by_class.values()), \
        "need >= 10 samples per class for 5/5 splits"

    bank = build_bank()
    fc = FrontendConfig(tau_m_ms=8.0)
    kernel = PspKernel(8.0)
    features = {}
    for path, label in entries:
        fmt = "packed" if path.suffix == ".aerb" else "text"
        stream = parse_stream(path.read_bytes(), fmt, label=label)
        feats = extract_features(stream, bank, fc)
        tr = spikes_to_train(feats, bank.n_maps, (stream.width + 1) // 2,
                             (stream.height + 1) // 2)
        features[path] = (tr, label, stream.duration_ms)

    accs = []
    for run in range(10):
        rng = np.random.default_rng(1000 + run)
        tr_set, te_set = [], []
        for lb in labels:
            order = rng.permutation(len(by_class[lb]))
            for i, oi in enumerate(order[:10]):
                rec = features[by_class[lb][int(oi)]]
                (tr_set if i < 5 else te_set).append(rec)
        cfg = TrainerConfig(classes=classes, search_range_ms=8.0,
                            tau_m_ms=8.0, iterations=10, population=10,
                            seed=run)
        result = train([TrainingSample(*rec) for rec in tr_set], cfg)
        report = evaluate(te_set, result.weights, kernel, 10,
                          InferenceConfig(threshold=1.0), classes)
        accs.append(report.accuracy)
    mean_acc = float(np.mean(accs))
    ok = mean_acc >= 0.975
    verdict(9, "real-data hook (cards)", ok,
            f"mean accuracy over 10 partitions {mean_acc:.4f}")


def test_criterion_10_determinism(benchmark, tmp_path):
    t0 = time.perf_counter()
    rerun = train(benchmark["train_samples"], bench_trainer_config())
    w_first = benchmark["result"].weights
    bit_identical = np.array_equal(w_first, rerun.weights) and \
        w_first.tobytes() == rerun.weights.tobytes()

    meta = WeightsMeta(classes=4, population=BENCH["population"],
                       n_afferents=w_first.shape[1],
                       tau_m_ms=BENCH["tau_m_ms"],
                       search_range_ms=BENCH["search_range_ms"])
    p1, p2 = tmp_path / "first.w", tmp_path / "rerun.w"
    save_weights(p1, w_first, meta)
    save_weights(p2, rerun.weights, meta)
    files_identical = p1.read_bytes() == p2.read_bytes()

    _, _, decisions_a = streaming_run(benchmark)
    _, _, decisions_b = streaming_run(benchmark)
    traces_identical = decisions_to_text(decisions_a) == \
        decisions_to_text(decisions_b)
    elapsed = time.perf_counter() - t0
    ok = bit_identical and files_identical and traces_identical
    verdict(10, "determinism of 7 and 8", ok,
            f"weights bit-identical {bit_identical}, files {files_identical},"
            f" traces {traces_identical}, {elapsed:.0f}s")

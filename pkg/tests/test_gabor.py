import math

import numpy as np
import pytest

from spikestream.events import (Event, EventStream, GeometryError,
                                OrderingError, SyntheticPatternSpec,
                                generate_synthetic)
from spikestream.gabor import (FeatureSpike, FilterLayerState, FrontendConfig,
                               ParameterError, bank_from_text,
                               bank_to_text, build_bank, extract_features,
                               feature_spikes_to_text, gabor_kernel,
                               spikes_to_train)


def scalar_gabor(dx, dy, theta_deg, gamma, sigma, wavelength):
    """Independent per-element evaluation of the filter formula."""
    th = math.radians(theta_deg)
    rx = dx * math.cos(th) + dy * math.sin(th)
    ry = -dx * math.sin(th) + dy * math.cos(th)
    return math.exp(-(rx * rx + gamma * gamma * ry * ry) / (2 * sigma * sigma)) \
        * math.cos(2 * math.pi * rx / wavelength)


def brute_force_voltage(events, kernel, half, x, y, t_us, tau_us):
    """Direct summation of every event's decayed kernel contribution."""
    total = 0.0
    for e in events:
        if e.t > t_us:
            break
        if abs(x - e.x) <= half and abs(y - e.y) <= half:
            g = kernel[y - e.y + half, x - e.x + half]
            total += g * math.exp(-(t_us - e.t) / tau_us)
    return total


class TestKernels:
    def test_center_is_one_everywhere(self):
        bank = build_bank()
        for k in bank.kernels:
            s = k.shape[0] // 2
            assert k[s, s] == pytest.approx(1.0, abs=1e-12)

    def test_zero_orientation_mirror_symmetry(self):
        bank = build_bank()
        for size in bank.sizes:
            k = bank.kernel(size, 0.0)
            assert np.allclose(k, k[::-1, :], atol=1e-12)

    def test_3x3_matches_scalar_evaluation(self):
        k = gabor_kernel(3, 0.0, gamma=0.3, sigma=1.2, wavelength=1.5)
        for dy in (-1, 0, 1):
            for dx in (-1, 0, 1):
                want = scalar_gabor(dx, dy, 0.0, 0.3, 1.2, 1.5)
                assert k[dy + 1, dx + 1] == pytest.approx(want, abs=1e-12)

    def test_45_degree_matches_scalar(self):
        k = gabor_kernel(5, 45.0, gamma=0.3, sigma=2.0, wavelength=2.5)
        for dy in range(-2, 3):
            for dx in range(-2, 3):
                want = scalar_gabor(dx, dy, 45.0, 0.3, 2.0, 2.5)
                assert k[dy + 2, dx + 2] == pytest.approx(want, abs=1e-12)

    def test_parameter_errors(self):
        with pytest.raises(ParameterError):
            gabor_kernel(4, 0.0, 0.3, 1.0, 1.0)
        with pytest.raises(ParameterError):
            gabor_kernel(3, 0.0, 0.3, -1.0, 1.0)
        with pytest.raises(ParameterError):
            gabor_kernel(3, 0.0, 0.3, 1.0, 0.0)
        with pytest.raises(ParameterError):
            build_bank(sizes=(3, 11))

    def test_bank_text_round_trip(self):
        bank = build_bank()
        again = bank_from_text(bank_to_text(bank))
        assert again.sizes == bank.sizes
        assert again.orientations == bank.orientations
        assert again.gamma == bank.gamma
        for a, b in zip(again.kernels, bank.kernels):
            assert np.array_equal(a, b)

    def test_bank_text_rejects_garbage(self):
        with pytest.raises(ParameterError):
            bank_from_text("WRONG\n")


class TestProcessEvent:
    def setup_method(self):
        self.bank = build_bank()
        self.cfg = FrontendConfig(tau_m_ms=20.0)

    def test_single_event_center_voltage(self):
        state = FilterLayerState(self.bank, 16, 16, self.cfg)
        spikes = state.process_event(Event(8, 8, 1000, 1))
        assert spikes == []
        for m in range(self.bank.n_maps):
            assert state.voltage(m, 8, 8, 1000) == pytest.approx(1.0)

    def test_single_event_decay(self):
        state = FilterLayerState(self.bank, 16, 16, self.cfg)
        state.process_event(Event(8, 8, 0, 1))
        tau_us = int(self.cfg.tau_m_ms * 1000)
        v = state.voltage(0, 8, 8, tau_us)
        assert v == pytest.approx(math.exp(-1.0), abs=1e-9)

    def test_two_identical_events_sit_at_threshold(self):
        # strict threshold comparison: the center reaches exactly 2.0 from
        # two simultaneous unit-height contributions and must not fire
        state = FilterLayerState(self.bank, 16, 16, self.cfg)
        assert state.process_event(Event(8, 8, 1000, 1)) == []
        assert state.process_event(Event(8, 8, 1000, 1)) == []
        assert state.voltage(0, 8, 8, 1000) == pytest.approx(2.0)

    def test_third_event_fires_once_and_resets_unit(self):
        state = FilterLayerState(self.bank, 16, 16, self.cfg)
        state.process_event(Event(8, 8, 1000, 1))
        state.process_event(Event(8, 8, 1000, 1))
        spikes = state.process_event(Event(8, 8, 1000, 1))
        per_map = {}
        for sp in spikes:
            per_map.setdefault(sp.map_index, []).append(sp)
        # no map may fire the same unit twice within one event
        for sps in per_map.values():
            units = [(sp.ux, sp.uy) for sp in sps]
            assert len(units) == len(set(units))
        fired_map = spikes[0].map_index
        ux, uy = spikes[0].ux, spikes[0].uy
        for px in (2 * ux + 1, 2 * ux + 2):
            for py in (2 * uy + 1, 2 * uy + 2):
                if px <= 16 and py <= 16:
                    assert state.voltage(fired_map, px, py, 1000) == 0.0

    def test_out_of_geometry(self):
        state = FilterLayerState(self.bank, 8, 8, self.cfg)
        with pytest.raises(GeometryError):
            state.process_event(Event(9, 1, 0, 1))

    def test_time_regression(self):
        state = FilterLayerState(self.bank, 8, 8, self.cfg)
        state.process_event(Event(4, 4, 100, 1))
        with pytest.raises(OrderingError):
            state.process_event(Event(4, 4, 99, 1))

    def test_lazy_decay_matches_brute_force(self):
        # below threshold there are no resets, so the state must agree
        # with the full replayed summation at 1e-9
        rng = np.random.default_rng(7)
        cfg = FrontendConfig(tau_m_ms=15.0, threshold=1e9)
        bank = self.bank
        for _ in range(5):
            n = 60
            ts = np.sort(rng.integers(0, 40_000, n))
            events = [Event(int(rng.integers(1, 13)), int(rng.integers(1, 13)),
                            int(t), int(rng.integers(0, 2)) * 2 - 1)
                      for t in ts]
            state = FilterLayerState(bank, 12, 12, cfg)
            for e in events:
                state.process_event(e)
            t_q = int(ts[-1]) + int(rng.integers(0, 5000))
            for m in (0, 5, 10, 15):
                half = bank.kernels[m].shape[0] // 2
                x = int(rng.integers(1, 13))
                y = int(rng.integers(1, 13))
                want = brute_force_voltage(events, bank.kernels[m], half,
                                           x, y, t_q, cfg.tau_m_ms * 1000.0)
                assert state.voltage(m, x, y, t_q) == pytest.approx(
                    want, abs=1e-9)

    def test_linearity_below_threshold(self):
        rng = np.random.default_rng(8)
        cfg = FrontendConfig(tau_m_ms=15.0, threshold=1e9)
        events = [Event(int(rng.integers(1, 9)), int(rng.integers(1, 9)),
                        int(t), 1)
                  for t in np.sort(rng.integers(0, 10_000, 30))]
        alpha = 2.5
        s1 = FilterLayerState(self.bank, 8, 8, cfg)
        s2 = FilterLayerState(self.bank.scaled(alpha), 8, 8, cfg)
        for e in events:
            s1.process_event(e)
            s2.process_event(e)
        for m in (0, 7, 12):
            for x, y in [(4, 4), (2, 6), (7, 1)]:
                v1 = s1.voltage(m, x, y, 10_000)
                v2 = s2.voltage(m, x, y, 10_000)
                assert v2 == pytest.approx(alpha * v1, abs=1e-9)


class TestInhibition:
    def test_unit_reset_and_single_spike_per_step(self):
        rng = np.random.default_rng(21)
        bank = build_bank()
        cfg = FrontendConfig(tau_m_ms=25.0)
        for trial in range(30):
            state = FilterLayerState(bank, 10, 10, cfg)
            ts = np.sort(rng.integers(0, 8000, 60))
            for t in ts:
                e = Event(int(rng.integers(1, 11)), int(rng.integers(1, 11)),
                          int(t), int(rng.integers(0, 2)) * 2 - 1)
                spikes = state.process_event(e)
                seen = set()
                for sp in spikes:
                    key = (sp.map_index, sp.ux, sp.uy)
                    assert key not in seen
                    seen.add(key)
                    for px in (2 * sp.ux + 1, 2 * sp.ux + 2):
                        for py in (2 * sp.uy + 1, 2 * sp.uy + 2):
                            if px <= 10 and py <= 10:
                                assert state.voltage(sp.map_index, px, py,
                                                     e.t) == 0.0


class TestExtractFeatures:
    def test_empty_stream(self):
        stream = EventStream.from_events(8, 8, [], duration=0)
        assert extract_features(stream, build_bank()) == []

    def test_isolated_subthreshold_events_silent(self):
        # gaps of many time constants: single unit-height bumps never
        # cross the threshold of 2
        cfg = FrontendConfig(tau_m_ms=5.0)
        events = [Event(4, 4, t, 1) for t in range(0, 500_000, 100_000)]
        stream = EventStream.from_events(8, 8, events, duration=500_000)
        assert extract_features(stream, build_bank(), cfg) == []

    def test_monotone_output_times(self):
        spec = SyntheticPatternSpec(kind="bar", velocity=0.4, noise_rate=1.0,
                                    width=12, height=12, duration_ms=40.0)
        stream = generate_synthetic(spec, seed=4)
        feats = extract_features(stream, build_bank(),
                                 FrontendConfig(tau_m_ms=20.0))
        times = [sp.t for sp in feats]
        assert times == sorted(times)

    def test_orientation_selectivity(self):
        # a 0 degree bar must drive the 0 degree maps harder than the
        # 90 degree maps across all scales
        bank = build_bank()
        spec = SyntheticPatternSpec(kind="bar", orientation_deg=0.0,
                                    velocity=0.4, noise_rate=0.0,
                                    width=16, height=16, duration_ms=40.0)
        stream = generate_synthetic(spec, seed=2)
        feats = extract_features(stream, bank, FrontendConfig(tau_m_ms=20.0))
        maps = bank.maps
        n0 = sum(1 for sp in feats if maps[sp.map_index][1] == 0.0)
        n90 = sum(1 for sp in feats if maps[sp.map_index][1] == 90.0)
        assert n0 > n90

    def test_polarity_split_doubles_maps(self):
        bank = build_bank()
        cfg = FrontendConfig(tau_m_ms=20.0, polarity_split=True)
        state = FilterLayerState(bank, 8, 8, cfg)
        assert state.n_slots == 32
        state.process_event(Event(4, 4, 0, 1))
        assert state.voltage(0, 4, 4, 0) == pytest.approx(1.0)
        assert state.voltage(bank.n_maps, 4, 4, 0) == 0.0
        state.process_event(Event(4, 4, 0, -1))
        assert state.voltage(bank.n_maps, 4, 4, 0) == pytest.approx(1.0)


class TestFlattening:
    def test_afferent_indexing(self):
        spikes = [FeatureSpike(2, 1, 3, 5000), FeatureSpike(0, 0, 0, 6000)]
        train = spikes_to_train(spikes, n_maps=16, units_w=4, units_h=4)
        assert train.n_afferents == 16 * 16
        assert train.afferents[0] == 2 * 16 + 3 * 4 + 1
        assert train.afferents[1] == 0
        assert train.times[0] == pytest.approx(5.0)

    def test_feature_text_export(self):
        spikes = [FeatureSpike(3, 0, 1, 500)]
        text = feature_spikes_to_text(spikes, 4, 4, 1000)
        assert text.splitlines() == ["AER1 4 4 1000", "1 2 500 3"]

"""Decision-neuron dynamics: PSP kernel, exact event-driven voltage, peaks.

All time arithmetic here is in continuous milliseconds. Every synapse
shares the same pair of decay constants, so the membrane voltage of a
neuron collapses to two exponential accumulators

    V(t) = A * exp(-(t - t_ref) / tau_m) - B * exp(-(t - t_ref) / tau_s)

which are advanced spike by spike; no time grid is involved anywhere
outside the test oracles.
"""

from __future__ import annotations

import math
from typing import NamedTuple

import numpy as np

from .events import OrderingError

PEAK_EPS_MS = 1e-3  # 1 microsecond: candidate resolution at segment starts


class PspKernel:
    """Double-exponential postsynaptic kernel normalized to unit peak.

    K(dt) = v0 * (exp(-dt/tau_m) - exp(-dt/tau_s)) for dt >= 0, else 0,
    with tau_m / tau_s fixed at 4 and v0 chosen so that max K = 1.
    """

    RATIO = 4.0

    def __init__(self, tau_m_ms: float):
        if tau_m_ms <= 0:
            raise ValueError("tau_m must be positive")
        self.tau_m = float(tau_m_ms)
        self.tau_s = self.tau_m / self.RATIO
        # time of the kernel maximum and the normalization making it 1
        self.peak_time = (self.tau_m * self.tau_s / (self.tau_m - self.tau_s)) \
            * math.log(self.tau_m / self.tau_s)
        raw = math.exp(-self.peak_time / self.tau_m) \
            - math.exp(-self.peak_time / self.tau_s)
        self.v0 = 1.0 / raw

    def __repr__(self):
        return f"PspKernel(tau_m_ms={self.tau_m!r})"


def kernel_value(kernel: PspKernel, dt):
    """Kernel response ``dt`` ms after an input spike; 0 for negative dt."""
    dt = np.asarray(dt, dtype=float)
    with np.errstate(over="ignore"):
        v = kernel.v0 * (np.exp(-dt / kernel.tau_m) - np.exp(-dt / kernel.tau_s))
    out = np.where(dt >= 0, v, 0.0)
    return float(out) if out.ndim == 0 else out


class SpikeTrain(NamedTuple):
    """Afferent spikes for the decision layer: parallel (times, afferents).

    Times are float milliseconds and must be non-decreasing; afferent
    indices lie in [0, n_afferents).
    """

    times: np.ndarray
    afferents: np.ndarray
    n_afferents: int

    def check(self) -> "SpikeTrain":
        if len(self.times) != len(self.afferents):
            raise ValueError("times and afferents must have equal length")
        if len(self.times) and np.any(np.diff(self.times) < 0):
            raise OrderingError("spike times must be non-decreasing")
        return self

    def __len__(self):
        return len(self.times)


class PeakResult(NamedTuple):
    t_peak: float
    v_peak: float


class CompressedSpikes:
    """(distinct time, afferent, multiplicity) view of a spike train.

    Built once per sample so that repeated windowed sweeps slice
    contiguous ranges instead of re-deduplicating raw spikes; pairs are
    sorted by time then afferent.
    """

    def __init__(self, train: SpikeTrain):
        self.n_afferents = train.n_afferents
        self.u_times, t_inv = np.unique(train.times, return_inverse=True)
        key = t_inv * train.n_afferents + train.afferents
        ukey, counts = np.unique(key, return_counts=True)
        self.pair_time = (ukey // train.n_afferents).astype(np.int64)
        self.pair_aff = (ukey % train.n_afferents).astype(np.int64)
        self.pair_count = counts.astype(float)
        # pair range per distinct-time index, for O(log) window slicing
        self.pair_start = np.searchsorted(self.pair_time,
                                          np.arange(len(self.u_times) + 1))


class NeuronTrace:
    """Mutable event-driven state of one decision neuron (no reset).

    ``advance`` consumes spikes in time order; ``voltage_at`` reads the
    collapsed accumulators at any time at or after the last advance.
    """

    def __init__(self, weights, kernel: PspKernel, v_rest: float = 0.0):
        self.weights = np.asarray(weights, dtype=float)
        self.kernel = kernel
        self.v_rest = float(v_rest)
        self.a = 0.0
        self.b = 0.0
        self.t_ref = 0.0
        self._cursor = 0

    def advance(self, train: SpikeTrain, t_ms: float):
        """Absorb all spikes with time <= t_ms and re-reference at t_ms."""
        if t_ms < self.t_ref:
            raise OrderingError(f"cannot advance backwards to t={t_ms}")
        k = self.kernel
        times, affs = train.times, train.afferents
        i = self._cursor
        end = int(np.searchsorted(times, t_ms, side="right"))
        while i < end:
            ti = float(times[i])
            self.a *= math.exp((self.t_ref - ti) / k.tau_m)
            self.b *= math.exp((self.t_ref - ti) / k.tau_s)
            drive = k.v0 * float(self.weights[affs[i]])
            # merge simultaneous spikes before re-referencing
            j = i + 1
            while j < end and times[j] == times[i]:
                drive += k.v0 * float(self.weights[affs[j]])
                j += 1
            self.a += drive
            self.b += drive
            self.t_ref = ti
            i = j
        self._cursor = end
        self.a *= math.exp((self.t_ref - t_ms) / k.tau_m)
        self.b *= math.exp((self.t_ref - t_ms) / k.tau_s)
        self.t_ref = t_ms

    def voltage_at(self, t_ms: float) -> float:
        if t_ms < self.t_ref:
            raise OrderingError(f"query at t={t_ms} precedes state at t={self.t_ref}")
        k = self.kernel
        return (
            self.a * math.exp((self.t_ref - t_ms) / k.tau_m)
            - self.b * math.exp((self.t_ref - t_ms) / k.tau_s)
            + self.v_rest
        )


def evaluate_voltage(trace: NeuronTrace, train: SpikeTrain, t_ms: float) -> float:
    """Exact membrane voltage at ``t_ms``: weighted kernel sum over history.

    Advances the trace, so successive queries must be non-decreasing in
    time. Use a fresh trace (or ``threshold_crossings`` for the firing
    mode) per independent sweep.
    """
    trace.advance(train, t_ms)
    return trace.voltage_at(t_ms)


def _local_max_offset(a, b, tau_m, tau_s):
    """Offset of the interior maximum of A e^{-x/tm} - B e^{-x/ts}, or nan."""
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = (b * tau_m) / (a * tau_s)
        x = (tau_m * tau_s / (tau_m - tau_s)) * np.log(ratio)
    return np.where((a > 0) & (b > 0) & (ratio > 0), x, np.nan)


class PastAggregator:
    """Per-afferent exponential sums over consumed spikes, weight free.

    Advancing decays both sums to the new reference time and absorbs the
    newly passed spikes, so a segment loop pays for each spike once
    instead of rescanning its whole history; neuron states follow as
    weight-matrix products against these sums.
    """

    def __init__(self, kernel: PspKernel, n_afferents: int):
        self.kernel = kernel
        self.agg_m = np.zeros(n_afferents)
        self.agg_s = np.zeros(n_afferents)
        self.t_ref = 0.0
        self._cursor = 0

    def advance(self, train: SpikeTrain, t_new: float):
        if t_new < self.t_ref:
            raise OrderingError(f"cannot advance aggregator back to t={t_new}")
        if t_new == self.t_ref:
            return
        k = self.kernel
        self.agg_m *= math.exp((self.t_ref - t_new) / k.tau_m)
        self.agg_s *= math.exp((self.t_ref - t_new) / k.tau_s)
        end = int(np.searchsorted(train.times, t_new, side="right"))
        if end > self._cursor:
            sl = slice(self._cursor, end)
            np.add.at(self.agg_m, train.afferents[sl],
                      np.exp((train.times[sl] - t_new) / k.tau_m))
            np.add.at(self.agg_s, train.afferents[sl],
                      np.exp((train.times[sl] - t_new) / k.tau_s))
            self._cursor = end
        self.t_ref = t_new


def detect_peaks(weights, kernel: PspKernel, train: SpikeTrain,
                 t_start: float, t_range: float, v_rest: float = 0.0,
                 past: PastAggregator | None = None
                 ) -> tuple[np.ndarray, np.ndarray]:
    """Locate each neuron's maximum voltage inside (t_start, t_start + t_range].

    ``weights`` is (n_neurons, n_afferents); all neurons share the input
    train. Candidates per neuron are the segment start (open, resolved at
    1 us), every in-range spike time, the analytic maximum of each
    inter-spike stretch, and the segment end; ties go to the earliest
    time. Returns (t_peaks, v_peaks). A ``past`` aggregator, when given,
    carries the pre-segment history incrementally across calls of a
    forward sweep; otherwise history is summed from scratch.
    """
    if t_range <= 0:
        raise ValueError("search range must be positive")
    w = np.atleast_2d(np.asarray(weights, dtype=float))
    n_neurons, n_aff = w.shape
    tau_m, tau_s, v0 = kernel.tau_m, kernel.tau_s, kernel.v0
    t_end = t_start + t_range

    times, affs = train.times, train.afferents
    i0 = int(np.searchsorted(times, t_start, side="right"))
    i1 = int(np.searchsorted(times, t_end, side="right"))

    # state carried into the segment, referenced at t_start
    if past is not None:
        past.advance(train, t_start)
        a0 = v0 * (w @ past.agg_m)
        b0 = v0 * (w @ past.agg_s)
    elif i0:
        past_t, past_a = times[:i0], affs[:i0]
        agg_m = np.zeros(n_aff)
        agg_s = np.zeros(n_aff)
        np.add.at(agg_m, past_a, np.exp((past_t - t_start) / tau_m))
        np.add.at(agg_s, past_a, np.exp((past_t - t_start) / tau_s))
        a0 = v0 * (w @ agg_m)
        b0 = v0 * (w @ agg_s)
    else:
        a0 = np.zeros(n_neurons)
        b0 = np.zeros(n_neurons)

    seg_t, seg_a = times[i0:i1], affs[i0:i1]
    u = np.unique(seg_t)

    # per distinct spike time, per neuron: summed synaptic weight, built
    # through a (distinct time x active afferent) count table so the cost
    # scales with the compressed segment rather than neurons x spikes
    if len(seg_t):
        t_idx = np.searchsorted(u, seg_t)
        active, a_idx = np.unique(seg_a, return_inverse=True)
        counts = np.zeros((len(u), len(active)))
        np.add.at(counts, (t_idx, a_idx), 1.0)
        drive = w[:, active] @ counts.T  # (n_neurons, m)
    else:
        drive = np.zeros((n_neurons, 0))
    return scan_candidates(kernel, t_start, t_range, a0, b0, u, drive, v_rest)


def scan_candidates(kernel: PspKernel, t_start: float, t_range: float,
                    a0: np.ndarray, b0: np.ndarray, u: np.ndarray,
                    drive: np.ndarray, v_rest: float = 0.0
                    ) -> tuple[np.ndarray, np.ndarray]:
    """Candidate-set maximum search given pre-sliced segment drive.

    ``a0``/``b0`` hold each neuron's accumulator state at ``t_start``,
    ``u`` the distinct in-segment spike times and ``drive`` the per
    (neuron, distinct time) summed synaptic weight. Shared core of
    ``detect_peaks`` and the trainer's segment sweep.
    """
    n_neurons = len(a0)
    m = len(u)
    tau_m, tau_s, v0 = kernel.tau_m, kernel.tau_s, kernel.v0
    # the eps-shifted stand-in for the open left endpoint must stay the
    # earliest candidate even when a spike lands within eps of the start
    eps = min(PEAK_EPS_MS, t_range)
    if m and u[0] - t_start < eps:
        eps = (u[0] - t_start) / 2.0

    # cumulative accumulators referenced at t_start, valid from each spike on
    grow_m = np.exp((u - t_start) / tau_m)[None, :]
    grow_s = np.exp((u - t_start) / tau_s)[None, :]
    cum_a = np.concatenate(
        [a0[:, None], a0[:, None] + np.cumsum(v0 * drive * grow_m, axis=1)], axis=1)
    cum_b = np.concatenate(
        [b0[:, None], b0[:, None] + np.cumsum(v0 * drive * grow_s, axis=1)], axis=1)

    # interval k covers (left_k, right_k]; states cum_[:, k] apply there.
    # Candidates per interval are its interior analytic maximum and its
    # right endpoint, both evaluated with the interval's own state (a
    # spike is never evaluated against its own just-added term, which
    # would leave rounding residue on exact ties); the eps-shifted open
    # segment start comes first. Columns are in non-decreasing time order
    # so the earliest maximum wins ties.
    x_left = np.concatenate([[eps], u - t_start])
    x_right = np.concatenate([u - t_start, [t_range]])
    x_loc = _local_max_offset(cum_a, cum_b, tau_m, tau_s)
    loc_ok = (x_loc > x_left[None, :]) & (x_loc <= x_right[None, :])
    x_loc = np.where(loc_ok, x_loc, x_left[None, :])

    n_int = m + 1
    n_cand = 2 * n_int + 1
    x_cand = np.empty((n_neurons, n_cand))
    x_cand[:, 0] = eps
    x_cand[:, 1::2] = x_loc
    x_cand[:, 2::2] = x_right[None, :]
    interval_of = np.empty(n_cand, dtype=np.int64)
    interval_of[0] = 0
    interval_of[1::2] = np.arange(n_int)
    interval_of[2::2] = np.arange(n_int)

    va = cum_a[:, interval_of]
    vb = cum_b[:, interval_of]
    v_cand = va * np.exp(-x_cand / tau_m) - vb * np.exp(-x_cand / tau_s)
    # suppress rejected interior candidates
    mask = np.ones((n_neurons, n_cand), dtype=bool)
    mask[:, 1::2] = loc_ok
    v_cand = np.where(mask, v_cand, -np.inf)

    v_best = v_cand.max(axis=1)
    # earliest candidate achieving the maximum (columns are time ordered)
    best_idx = np.argmax(v_cand == v_best[:, None], axis=1)
    t_peaks = t_start + x_cand[np.arange(n_neurons), best_idx]
    return t_peaks, v_best + v_rest


def detect_peak(weights, kernel: PspKernel, train: SpikeTrain,
                t_start: float, t_range: float,
                v_rest: float = 0.0) -> PeakResult:
    """Single-neuron peak search; see ``detect_peaks``."""
    t, v = detect_peaks(np.atleast_2d(weights), kernel, train, t_start,
                        t_range, v_rest)
    return PeakResult(float(t[0]), float(v[0]))


def _bisect_crossing(a, b, t_ref, tau_m, tau_s, lo, hi, thr):
    """First time in (lo, hi] where the rising voltage exceeds thr."""
    while hi - lo > 1e-9:
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        v = (a * math.exp((t_ref - mid) / tau_m)
             - b * math.exp((t_ref - mid) / tau_s))
        if v > thr:
            hi = mid
        else:
            lo = mid
    return hi


def group_drive_steps(train: SpikeTrain, weights) -> tuple[np.ndarray, np.ndarray]:
    """Collapse a train into distinct times and per-neuron summed weights.

    Returns (step_times, drives) where drives is (n_neurons, n_steps);
    ``weights`` may be a single weight vector or a (neurons, afferents)
    matrix. Shared preprocessing for the fire-and-reset walks.
    """
    w = np.atleast_2d(np.asarray(weights, dtype=float))
    u, t_idx = np.unique(train.times, return_inverse=True)
    if len(u) == 0:
        return u, np.zeros((w.shape[0], 0))
    active, a_idx = np.unique(train.afferents, return_inverse=True)
    counts = np.zeros((len(u), len(active)))
    np.add.at(counts, (t_idx, a_idx), 1.0)
    return u, w[:, active] @ counts.T


def reset_walk(step_times, step_drive, kernel: PspKernel, t_end: float,
               v_thr: float, v_reset: float = 0.0) -> tuple[np.ndarray, float]:
    """Fire-and-reset scan of one neuron over grouped input steps.

    Whenever the voltage exceeds ``v_thr`` the neuron emits a spike, both
    accumulators are cleared (all prior synaptic history is forgotten)
    and the membrane restarts from ``v_reset``. Returns (crossing times,
    voltage at t_end). A crossing can only occur on a rising stretch,
    which exists only while both accumulators are positive and ends at
    the analytic interior maximum, so each inter-step interval is checked
    in constant time and resolved by bisection.
    """
    tau_m, tau_s, v0 = kernel.tau_m, kernel.tau_s, kernel.v0
    times = list(step_times)
    drives = list(step_drive)
    n = len(times)

    out: list[float] = []
    a = b = 0.0
    t_ref = 0.0
    i = 0
    while True:
        more = i < n and times[i] <= t_end
        t_next = times[i] if more else t_end
        # at most one crossing fits in (t_ref, t_next]: after the reset the
        # voltage stays put until the next input step
        if a > 0.0 and b > 0.0 and t_next > t_ref:
            ratio = (b * tau_m) / (a * tau_s)
            if ratio > 1.0:
                x_max = (tau_m * tau_s / (tau_m - tau_s)) * math.log(ratio)
                rise_end = min(t_ref + x_max, t_next)
                v_rise = (a * math.exp((t_ref - rise_end) / tau_m)
                          - b * math.exp((t_ref - rise_end) / tau_s))
                if v_rise > v_thr:
                    t_cross = _bisect_crossing(a, b, t_ref, tau_m, tau_s,
                                               t_ref, rise_end, v_thr)
                    out.append(t_cross)
                    a, b = float(v_reset), 0.0
                    t_ref = t_cross
        if not more:
            v_end = (a * math.exp((t_ref - t_end) / tau_m)
                     - b * math.exp((t_ref - t_end) / tau_s))
            return np.array(out), v_end
        a *= math.exp((t_ref - t_next) / tau_m)
        b *= math.exp((t_ref - t_next) / tau_s)
        t_ref = t_next
        a += v0 * drives[i]
        b += v0 * drives[i]
        i += 1


def threshold_crossings(weights, kernel: PspKernel, train: SpikeTrain,
                        t_end: float, v_thr: float,
                        v_reset: float = 0.0) -> tuple[np.ndarray, float]:
    """Run one neuron in fire-and-reset mode over [0, t_end]."""
    steps, drives = group_drive_steps(train, weights)
    return reset_walk(steps, drives[0], kernel, t_end, v_thr, v_reset)

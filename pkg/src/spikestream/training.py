"""Segmented peak-probability training of the decision layer.

Each labeled sample is consumed segment by segment: peak detection finds
every decision neuron's maximum-voltage time inside the current search
range, the peak voltages are mapped through a softplus to firing rates,
rates are normalized into class probabilities, and the cross-entropy of
the true class is reduced by one gradient step on the synaptic weights.
The segment start then jumps to the latest detected peak, so one pass
visits every informative burst of the stream exactly once.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from .neuron import (CompressedSpikes, PastAggregator, PspKernel, SpikeTrain,
                     kernel_value, scan_candidates)

log = logging.getLogger(__name__)


class DivergenceError(RuntimeError):
    """Non-finite weights or gradients; reports iteration and segment."""

    def __init__(self, iteration, sample, t_start):
        super().__init__(
            f"non-finite update at iteration {iteration}, sample {sample}, "
            f"segment starting at {t_start:.3f} ms"
        )
        self.iteration = iteration
        self.sample = sample
        self.t_start = t_start


@dataclass(frozen=True)
class TrainerConfig:
    """Hyperparameters of the segmented trainer.

    ``search_range_ms`` is the peak-detection window length and
    ``tau_m_ms`` the membrane constant of the shared PSP kernel; both are
    dataset-scale quantities (80/120/8 ms presets live in the CLI).
    """

    classes: int
    search_range_ms: float
    tau_m_ms: float
    learning_rate: float = 0.1
    iterations: int = 20
    population: int = 10
    weight_init_low: float = 0.0
    weight_init_high: float = 0.05
    seed: int = 0
    shuffle: bool = True
    early_stop: bool = False
    plateau_rel_tol: float = 1e-4
    plateau_patience: int = 3

    def validate(self):
        if self.classes < 2:
            raise ValueError("need at least 2 classes")
        if self.learning_rate < 0:
            raise ValueError("learning rate must be non-negative")
        if self.search_range_ms <= 0:
            raise ValueError("search range must be positive")
        if self.tau_m_ms <= 0:
            raise ValueError("tau_m must be positive")
        if self.population < 1:
            raise ValueError("population must be at least 1")
        if self.iterations < 0:
            raise ValueError("iterations must be non-negative")


class TrainingSample(NamedTuple):
    train: SpikeTrain
    label: int
    duration_ms: float


@dataclass(frozen=True)
class RateVector:
    """Per-class output firing rates and their total.

    Rates are the population means of the softplus-mapped peak voltages,
    so every entry is strictly positive and the normalization in
    ``class_probabilities`` is always well defined.
    """

    rates: np.ndarray
    total: float

    @classmethod
    def from_peaks(cls, v_peaks: np.ndarray, population: int) -> "RateVector":
        per_neuron = softplus_rate(v_peaks)
        rates = per_neuron.reshape(-1, population).mean(axis=1)
        return cls(rates=rates, total=float(rates.sum()))


@dataclass(frozen=True)
class LossRecord:
    """Diagnostics of one training segment."""

    iteration: int
    sample: int
    t_start: float
    t_peaks: tuple[float, ...]  # per class, latest over the population
    loss: float
    predicted: int
    prob_true: float


@dataclass
class TrainingResult:
    weights: np.ndarray
    records: list[LossRecord] = field(default_factory=list)
    iteration_losses: list[float] = field(default_factory=list)


def softplus_rate(v_peak):
    """Map peak voltage to a positive firing rate, log(exp(v) + 1)."""
    out = np.logaddexp(0.0, np.asarray(v_peak, dtype=float))
    return float(out) if out.ndim == 0 else out


def softplus_slope(v_peak):
    """Derivative of the rate map, the logistic sigmoid of the voltage."""
    v = np.asarray(v_peak, dtype=float)
    out = np.empty_like(v)
    pos = v >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-v[pos]))
    ev = np.exp(v[~pos])
    out[~pos] = ev / (1.0 + ev)
    return float(out) if out.ndim == 0 else out


def class_probabilities(rates: RateVector) -> np.ndarray:
    """Share of each class in the total output rate; sums to one."""
    return rates.rates / rates.total


def sample_loss(rates: RateVector, true_class: int) -> float:
    """Cross-entropy of the true class under the rate-share probabilities."""
    return float(-np.log(rates.rates[true_class] / rates.total))


def loss_gradient_wrt_peaks(v_peaks: np.ndarray, true_class: int,
                            population: int = 1) -> np.ndarray:
    """Derivative of the segment loss with respect to each neuron's peak.

    Neuron n of class j contributes its softplus slope, scaled by
    1/population, through the class rate; the class factor is
    -(total - rate_j) / (total * rate_j) for the true class and 1/total
    for the others. With population 1 this is the per-class closed form.
    """
    v_peaks = np.asarray(v_peaks, dtype=float)
    n_classes = len(v_peaks) // population
    if not 0 <= true_class < n_classes:
        raise IndexError(f"class {true_class} out of range 0..{n_classes - 1}")
    rv = RateVector.from_peaks(v_peaks, population)
    class_factor = np.full(n_classes, 1.0 / rv.total)
    f_true = rv.rates[true_class]
    class_factor[true_class] = -(rv.total - f_true) / (rv.total * f_true)
    slope = softplus_slope(v_peaks)
    return np.repeat(class_factor, population) * slope / population


def peak_gradient_wrt_weights(train: SpikeTrain, t_start: float,
                              t_peak: float, kernel: PspKernel) -> np.ndarray:
    """Derivative of one neuron's peak voltage with respect to its weights.

    Sums the kernel response at the peak over each afferent's spikes in
    [t_start, t_peak); afferents silent in that window get zero. The
    dependence of the peak time itself on the weights is ignored.
    """
    times, affs = train.times, train.afferents
    lo = int(np.searchsorted(times, t_start, side="left"))
    hi = int(np.searchsorted(times, t_peak, side="left"))
    grad = np.zeros(train.n_afferents)
    if hi > lo:
        np.add.at(grad, affs[lo:hi], kernel_value(kernel, t_peak - times[lo:hi]))
    return grad


def init_weights(config: TrainerConfig, n_afferents: int,
                 rng: np.random.Generator) -> np.ndarray:
    return rng.uniform(config.weight_init_low, config.weight_init_high,
                       size=(config.classes * config.population, n_afferents))


def _segment_step(weights, kernel, sample, index, past, t_start, config,
                  iteration, sample_index):
    """One peak-detect / gradient-update step; returns (record, next t_start)."""
    t_end = t_start + config.search_range_ms
    past.advance(sample.train, t_start)
    a0 = kernel.v0 * (weights @ past.agg_m)
    b0 = kernel.v0 * (weights @ past.agg_s)

    # voltage inside the segment sees spikes strictly after t_start (those
    # at t_start sit in the carried state); the gradient window is closed
    # on the left, so its slice starts one distinct time earlier
    u_all = index.u_times
    k0 = int(np.searchsorted(u_all, t_start, side="right"))
    k1 = int(np.searchsorted(u_all, t_end, side="right"))
    kg = int(np.searchsorted(u_all, t_start, side="left"))
    p0, p1 = index.pair_start[kg], index.pair_start[k1]
    seg_u = u_all[kg:k1]

    # (time, afferent) pairs are unique, so plain assignment fills the
    # per-window count table; compressing to the window's active afferents
    # keeps both the drive and the gradient as small matrix products
    if len(seg_u):
        active, a_rank = np.unique(index.pair_aff[p0:p1], return_inverse=True)
        counts = np.zeros((k1 - kg, len(active)))
        counts[index.pair_time[p0:p1] - kg, a_rank] = index.pair_count[p0:p1]
        w_act = weights[:, active]
        drive = w_act @ counts[k0 - kg:].T
    else:
        drive = np.zeros((weights.shape[0], 0))
    t_peaks, v_peaks = scan_candidates(kernel, t_start, config.search_range_ms,
                                       a0, b0, u_all[k0:k1], drive)
    d_loss = loss_gradient_wrt_peaks(v_peaks, sample.label, config.population)
    if not (np.isfinite(v_peaks).all() and np.isfinite(d_loss).all()):
        raise DivergenceError(iteration, sample_index, t_start)

    if len(seg_u):
        # kernel response of each in-window spike at every neuron's own
        # peak; spikes at or past a peak contribute zero automatically
        kmat = kernel_value(kernel, t_peaks[:, None] - seg_u[None, :])
        coef = -config.learning_rate * d_loss
        weights[:, active] = w_act + coef[:, None] * (kmat @ counts)

    rv = RateVector.from_peaks(v_peaks, config.population)
    probs = class_probabilities(rv)
    record = LossRecord(
        iteration=iteration,
        sample=sample_index,
        t_start=t_start,
        t_peaks=tuple(t_peaks.reshape(config.classes, config.population)
                      .max(axis=1).tolist()),
        loss=sample_loss(rv, sample.label),
        predicted=int(np.argmax(probs)),
        prob_true=float(probs[sample.label]),
    )
    return record, float(t_peaks.max())


def train(samples: Sequence[TrainingSample], config: TrainerConfig,
          initial_weights: np.ndarray | None = None) -> TrainingResult:
    """Fit decision-layer weights over several passes through the samples.

    Weights start uniform in [init_low, init_high) under the config seed;
    sample order is reshuffled per iteration from the same generator, so
    identical inputs reproduce identical weights bit for bit. Updates are
    applied segment by segment, and the next segment's peaks already see
    them. Samples without feature spikes are skipped with a warning.
    """
    config.validate()
    n_aff = None
    for s in samples:
        s.train.check()
        if not 0 <= s.label < config.classes:
            raise ValueError(f"label {s.label} out of range 0..{config.classes - 1}")
        if n_aff is None:
            n_aff = s.train.n_afferents
        elif s.train.n_afferents != n_aff:
            raise ValueError("samples disagree on afferent count")
    if n_aff is None:
        raise ValueError("need at least one training sample")

    kernel = PspKernel(config.tau_m_ms)
    rng = np.random.default_rng(config.seed)
    if initial_weights is not None:
        weights = np.array(initial_weights, dtype=float)
        if weights.shape != (config.classes * config.population, n_aff):
            raise ValueError("initial weights have the wrong shape")
    else:
        weights = init_weights(config, n_aff, rng)
    if not np.isfinite(weights).all():
        raise DivergenceError(0, -1, 0.0)

    result = TrainingResult(weights=weights)
    indexes = [CompressedSpikes(s.train) if len(s.train) else None
               for s in samples]
    warned: set[int] = set()
    for iteration in range(config.iterations):
        order = rng.permutation(len(samples)) if config.shuffle \
            else np.arange(len(samples))
        losses = []
        for sample_index in order:
            sample = samples[int(sample_index)]
            if len(sample.train) == 0 or sample.duration_ms <= 0:
                if sample_index not in warned:
                    warned.add(sample_index)
                    log.warning("sample %d has no feature spikes; skipped",
                                sample_index)
                continue
            times = sample.train.times
            t_start = 0.0
            past = PastAggregator(kernel, sample.train.n_afferents)
            while t_start < sample.duration_ms:
                record, t_next = _segment_step(
                    weights, kernel, sample, indexes[int(sample_index)],
                    past, t_start, config, iteration, int(sample_index))
                result.records.append(record)
                losses.append(record.loss)
                # a segment whose update window held no spikes changed no
                # weight; every such segment until the next afferent spike
                # is the same no-op, so jump straight to that spike (or end
                # the pass when the tail is silent)
                lo = int(np.searchsorted(times, t_start, side="left"))
                hi = int(np.searchsorted(times, t_next, side="left"))
                if hi == lo:
                    if hi >= len(times):
                        break
                    t_next = max(t_next, float(times[hi]))
                t_start = t_next
            if not np.isfinite(weights).all():
                raise DivergenceError(iteration, int(sample_index), t_start)
        result.iteration_losses.append(float(np.mean(losses)) if losses else
                                       math.nan)
        if config.early_stop and _plateaued(result.iteration_losses, config):
            log.info("loss plateaued; stopping after iteration %d", iteration)
            break
    return result


def _plateaued(losses: list[float], config: TrainerConfig) -> bool:
    n = config.plateau_patience
    if len(losses) < n + 1:
        return False
    window = losses[-(n + 1):]
    base = abs(window[0]) or 1.0
    return all(abs(window[i + 1] - window[i]) / base < config.plateau_rel_tol
               for i in range(n))

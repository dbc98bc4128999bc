"""Inference over trained decision neurons via population firing rates.

After training, decision neurons run in fire-and-reset mode; the class
whose population fires most on average wins. Batch classification counts
spikes over a whole sample, streaming classification emits a ruling
every decision period from the spikes inside a trailing window.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from .events import EventStream
from .gabor import FrontendConfig, GaborBank, extract_features, spikes_to_train
from .neuron import PspKernel, SpikeTrain, group_drive_steps, reset_walk


@dataclass(frozen=True)
class InferenceConfig:
    """Decision-layer firing and readout settings."""

    threshold: float = 1.0
    v_reset: float = 0.0
    period_ms: float = 5.0
    window_ms: float | None = None  # None: use the training search range

    def validate(self):
        if self.threshold <= self.v_reset:
            raise ValueError("threshold must exceed the reset value")
        if self.period_ms <= 0:
            raise ValueError("decision period must be positive")
        if self.window_ms is not None and self.window_ms <= 0:
            raise ValueError("rate window must be positive")


class Decision(NamedTuple):
    """One classification ruling.

    ``class_rates`` holds the average spikes per neuron per window for
    each class; the prediction is its argmax, earliest index on ties.
    """

    time_ms: float
    predicted: int
    class_rates: np.ndarray


def decision_from_counts(counts: np.ndarray, population: int,
                         window_ms: float, time_ms: float) -> Decision:
    """Reduce per-neuron spike counts to a class ruling.

    Rates share the window, so the argmax over mean counts per class is
    the argmax over mean rates; scaling all counts by a positive factor
    leaves the ruling unchanged.
    """
    per_class = np.asarray(counts, dtype=float).reshape(-1, population).mean(axis=1)
    rates = per_class / window_ms
    return Decision(time_ms=time_ms, predicted=int(np.argmax(per_class)),
                    class_rates=rates)


def _output_spikes(train: SpikeTrain, weights: np.ndarray, kernel: PspKernel,
                   config: InferenceConfig, t_end: float) -> list[np.ndarray]:
    """Fire-and-reset spike times of every decision neuron over [0, t_end]."""
    if weights.shape[1] != train.n_afferents:
        raise ValueError(
            f"weights expect {weights.shape[1]} afferents, "
            f"stream provides {train.n_afferents}"
        )
    steps, drives = group_drive_steps(train, weights)
    return [
        reset_walk(steps, drives[j], kernel, t_end,
                   config.threshold, config.v_reset)[0]
        for j in range(weights.shape[0])
    ]


def classify(train: SpikeTrain, weights: np.ndarray, kernel: PspKernel,
             population: int, config: InferenceConfig,
             duration_ms: float) -> Decision:
    """Classify one sample from spike counts over its full duration."""
    config.validate()
    spikes = _output_spikes(train, weights, kernel, config, duration_ms)
    counts = np.array([len(s) for s in spikes], dtype=float)
    window = duration_ms if duration_ms > 0 else 1.0
    return decision_from_counts(counts, population, window, duration_ms)


def classify_stream(stream: EventStream, bank: GaborBank,
                    frontend: FrontendConfig, weights: np.ndarray,
                    kernel: PspKernel, population: int,
                    config: InferenceConfig,
                    search_range_ms: float) -> list[Decision]:
    """Rolling decisions over a continuous stream, one per period.

    Filter-layer and decision-neuron state persist across any sample
    boundaries contained in the stream. Each decision at time T counts
    the output spikes inside the trailing window (T - W, T], where W
    defaults to the training search range.
    """
    config.validate()
    feats = extract_features(stream, bank, frontend)
    units_w = (stream.width + 1) // 2
    units_h = (stream.height + 1) // 2
    n_maps = bank.n_maps * (2 if frontend.polarity_split else 1)
    train = spikes_to_train(feats, n_maps, units_w, units_h)
    duration_ms = stream.duration / 1000.0
    spikes = _output_spikes(train, weights, kernel, config, duration_ms)

    window = config.window_ms if config.window_ms is not None else search_range_ms
    decisions = []
    n_periods = int(np.floor(duration_ms / config.period_ms + 1e-9))
    for k in range(1, n_periods + 1):
        t_d = k * config.period_ms
        counts = np.array([
            np.searchsorted(s, t_d, side="right")
            - np.searchsorted(s, t_d - window, side="right")
            for s in spikes
        ], dtype=float)
        decisions.append(decision_from_counts(counts, population, window, t_d))
    return decisions


def decisions_to_text(decisions: Sequence[Decision]) -> str:
    """One line per decision: time, predicted class, per-class rates."""
    lines = []
    for d in decisions:
        rates = " ".join(f"{r:.6f}" for r in d.class_rates)
        lines.append(f"{d.time_ms:.3f} {d.predicted} {rates}")
    return "\n".join(lines) + ("\n" if lines else "")


@dataclass
class EvaluationReport:
    """Accuracy accounting over a labeled test set.

    ``per_class`` only contains classes present in the test set; the
    confusion matrix has true classes as rows. ``mean_latency_ms`` is
    None outside streaming mode and when no sample ever locks on.
    """

    accuracy: float
    per_class: dict[int, float]
    confusion: np.ndarray
    n_samples: int
    mean_latency_ms: float | None = None

    def to_text(self) -> str:
        lines = [f"samples: {self.n_samples}",
                 f"accuracy: {self.accuracy:.4f}"]
        for c in sorted(self.per_class):
            lines.append(f"class {c}: {self.per_class[c]:.4f}")
        if self.mean_latency_ms is not None:
            lines.append(f"mean latency: {self.mean_latency_ms:.2f} ms")
        lines.append("confusion (rows = true class):")
        for row in self.confusion:
            lines.append("  " + " ".join(f"{int(v):4d}" for v in row))
        return "\n".join(lines) + "\n"

    def to_json(self) -> dict:
        out = {
            "accuracy": self.accuracy,
            "per_class": {str(k): v for k, v in self.per_class.items()},
            "confusion": self.confusion.astype(int).tolist(),
            "n_samples": self.n_samples,
        }
        if self.mean_latency_ms is not None:
            out["mean_latency_ms"] = self.mean_latency_ms
        return out


def lock_on_time(decisions: Sequence[Decision], true_class: int) -> float | None:
    """Earliest decision time after which every ruling matches the truth."""
    lock = None
    for d in decisions:
        if d.predicted == true_class:
            if lock is None:
                lock = d.time_ms
        else:
            lock = None
    return lock


def evaluate(samples: Sequence[tuple[SpikeTrain, int, float]],
             weights: np.ndarray, kernel: PspKernel, population: int,
             config: InferenceConfig, classes: int,
             search_range_ms: float | None = None,
             streaming: bool = False) -> EvaluationReport:
    """Classify a labeled set and tally accuracy per class.

    In streaming mode each sample is judged by its final periodic
    decision and the mean lock-on latency of correctly finished samples
    is reported; batch mode uses whole-sample spike counts.
    """
    if not samples:
        raise ValueError("test set is empty")
    confusion = np.zeros((classes, classes), dtype=np.int64)
    latencies = []
    for train, label, duration_ms in samples:
        if streaming:
            window = config.window_ms if config.window_ms is not None \
                else (search_range_ms or duration_ms)
            spikes = _output_spikes(train, weights, kernel, config, duration_ms)
            decisions = []
            n_periods = int(np.floor(duration_ms / config.period_ms + 1e-9))
            for k in range(1, n_periods + 1):
                t_d = k * config.period_ms
                counts = np.array([
                    np.searchsorted(s, t_d, side="right")
                    - np.searchsorted(s, t_d - window, side="right")
                    for s in spikes
                ], dtype=float)
                decisions.append(decision_from_counts(counts, population,
                                                      window, t_d))
            predicted = decisions[-1].predicted if decisions else 0
            if decisions and predicted == label:
                lock = lock_on_time(decisions, label)
                if lock is not None:
                    latencies.append(lock)
        else:
            predicted = classify(train, weights, kernel, population, config,
                                 duration_ms).predicted
        confusion[label, predicted] += 1

    row_totals = confusion.sum(axis=1)
    per_class = {
        c: float(confusion[c, c] / row_totals[c])
        for c in range(classes) if row_totals[c] > 0
    }
    accuracy = float(np.trace(confusion) / confusion.sum())
    latency = float(np.mean(latencies)) if streaming and latencies else None
    return EvaluationReport(accuracy=accuracy, per_class=per_class,
                            confusion=confusion, n_samples=int(confusion.sum()),
                            mean_latency_ms=latency)

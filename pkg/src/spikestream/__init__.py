"""Event-driven spiking classification engine for AER camera streams."""

__version__ = "0.1.0"

from .events import (Event, EventStream, SyntheticPatternSpec,
                     concatenate_streams, generate_synthetic, parse_stream,
                     serialize_stream)
from .gabor import (FeatureSpike, FrontendConfig, GaborBank, build_bank,
                    extract_features, spikes_to_train)
from .neuron import (NeuronTrace, PeakResult, PspKernel, SpikeTrain,
                     detect_peak, detect_peaks, evaluate_voltage,
                     kernel_value, threshold_crossings)
from .readout import (Decision, EvaluationReport, InferenceConfig, classify,
                      classify_stream, evaluate)
from .training import (LossRecord, RateVector, TrainerConfig, TrainingResult,
                       TrainingSample, class_probabilities,
                       loss_gradient_wrt_peaks, peak_gradient_wrt_weights,
                       softplus_rate, train)

__all__ = [
    "Event", "EventStream", "SyntheticPatternSpec", "concatenate_streams",
    "generate_synthetic", "parse_stream", "serialize_stream",
    "FeatureSpike", "FrontendConfig", "GaborBank", "build_bank",
    "extract_features", "spikes_to_train",
    "NeuronTrace", "PeakResult", "PspKernel", "SpikeTrain", "detect_peak",
    "detect_peaks", "evaluate_voltage", "kernel_value", "threshold_crossings",
    "Decision", "EvaluationReport", "InferenceConfig", "classify",
    "classify_stream", "evaluate",
    "LossRecord", "RateVector", "TrainerConfig", "TrainingResult",
    "TrainingSample", "class_probabilities", "loss_gradient_wrt_peaks",
    "peak_gradient_wrt_weights", "softplus_rate", "train",
]

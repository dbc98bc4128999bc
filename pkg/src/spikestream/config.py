"""Run configuration: flat key=value sections, presets, provenance hash.

Every dataset-scale hyperparameter lives here with its default so that a
written config file documents a reproduction run on its own.
"""

from __future__ import annotations

import configparser
import hashlib
from dataclasses import dataclass, replace
from pathlib import Path

from .gabor import (DEFAULT_ORIENTATIONS, DEFAULT_SCALE_PARAMS, DEFAULT_SIZES,
                    FrontendConfig, GaborBank, build_bank)
from .readout import InferenceConfig
from .training import TrainerConfig


class ConfigError(ValueError):
    """Malformed configuration file or values."""


# dataset-scale presets: search range and membrane constant in ms, geometry
PRESETS = {
    "mnist-dvs": {"tau_m_ms": 80.0, "search_range_ms": 80.0, "geometry": (128, 128)},
    "nmnist": {"tau_m_ms": 120.0, "search_range_ms": 120.0, "geometry": (34, 34)},
    "cards": {"tau_m_ms": 8.0, "search_range_ms": 8.0, "geometry": (128, 128)},
}


@dataclass(frozen=True)
class RunConfig:
    """Merged configuration of the whole pipeline."""

    width: int = 32
    height: int = 32
    # filter bank
    sizes: tuple[int, ...] = DEFAULT_SIZES
    orientations: tuple[float, ...] = DEFAULT_ORIENTATIONS
    gamma: float = 0.3
    scale_params: tuple[tuple[int, tuple[float, float]], ...] = tuple(
        sorted((k, v) for k, v in DEFAULT_SCALE_PARAMS.items()))
    frontend_threshold: float = 2.0
    frontend_v_reset: float = 0.0
    frontend_tau_m_ms: float = 20.0
    polarity_split: bool = False
    # decision-layer kernel and trainer
    tau_m_ms: float = 20.0
    search_range_ms: float = 20.0
    learning_rate: float = 0.1
    iterations: int = 20
    population: int = 10
    weight_init_low: float = 0.0
    weight_init_high: float = 0.05
    seed: int = 0
    early_stop: bool = False
    # inference
    inference_threshold: float = 1.0
    inference_v_reset: float = 0.0
    period_ms: float = 5.0
    window_ms: float | None = None

    def build_bank(self) -> GaborBank:
        return build_bank(self.sizes, self.orientations, self.gamma,
                          dict(self.scale_params))

    def frontend_config(self) -> FrontendConfig:
        return FrontendConfig(tau_m_ms=self.frontend_tau_m_ms,
                              threshold=self.frontend_threshold,
                              v_reset=self.frontend_v_reset,
                              polarity_split=self.polarity_split)

    def trainer_config(self, classes: int) -> TrainerConfig:
        return TrainerConfig(classes=classes,
                             search_range_ms=self.search_range_ms,
                             tau_m_ms=self.tau_m_ms,
                             learning_rate=self.learning_rate,
                             iterations=self.iterations,
                             population=self.population,
                             weight_init_low=self.weight_init_low,
                             weight_init_high=self.weight_init_high,
                             seed=self.seed,
                             early_stop=self.early_stop)

    def inference_config(self) -> InferenceConfig:
        return InferenceConfig(threshold=self.inference_threshold,
                               v_reset=self.inference_v_reset,
                               period_ms=self.period_ms,
                               window_ms=self.window_ms)

    def to_text(self) -> str:
        """Canonical config-file rendering, also the hashing input."""
        lines = ["[geometry]",
                 f"width = {self.width}",
                 f"height = {self.height}",
                 "",
                 "[frontend]",
                 "scales = " + ",".join(str(s) for s in self.sizes),
                 "orientations = " + ",".join(_fmt(o) for o in self.orientations),
                 f"gamma = {_fmt(self.gamma)}"]
        for size, (sigma, wavelength) in self.scale_params:
            if size in self.sizes:
                lines.append(f"sigma_{size} = {_fmt(sigma)}")
                lines.append(f"wavelength_{size} = {_fmt(wavelength)}")
        lines += [f"threshold = {_fmt(self.frontend_threshold)}",
                  f"v_reset = {_fmt(self.frontend_v_reset)}",
                  f"tau_m_ms = {_fmt(self.frontend_tau_m_ms)}",
                  f"polarity_split = {str(self.polarity_split).lower()}",
                  "",
                  "[kernel]",
                  f"tau_m_ms = {_fmt(self.tau_m_ms)}",
                  "# synaptic constant is fixed at tau_m / 4",
                  "",
                  "[training]",
                  f"learning_rate = {_fmt(self.learning_rate)}",
                  f"search_range_ms = {_fmt(self.search_range_ms)}",
                  f"iterations = {self.iterations}",
                  f"population = {self.population}",
                  f"weight_init_low = {_fmt(self.weight_init_low)}",
                  f"weight_init_high = {_fmt(self.weight_init_high)}",
                  f"seed = {self.seed}",
                  f"early_stop = {str(self.early_stop).lower()}",
                  "",
                  "[inference]",
                  f"threshold = {_fmt(self.inference_threshold)}",
                  f"v_reset = {_fmt(self.inference_v_reset)}",
                  f"period_ms = {_fmt(self.period_ms)}",
                  f"window_ms = {'' if self.window_ms is None else _fmt(self.window_ms)}"]
        return "\n".join(lines) + "\n"

    def config_hash(self) -> str:
        return hashlib.sha256(self.to_text().encode()).hexdigest()[:12]

    def with_preset(self, name: str) -> "RunConfig":
        if name not in PRESETS:
            raise ConfigError(
                f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
        p = PRESETS[name]
        return replace(self, tau_m_ms=p["tau_m_ms"],
                       frontend_tau_m_ms=p["tau_m_ms"],
                       search_range_ms=p["search_range_ms"],
                       width=p["geometry"][0], height=p["geometry"][1])


def _fmt(x: float) -> str:
    return repr(float(x))


def load_config(path) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    return parse_config(path.read_text())


def parse_config(text: str) -> RunConfig:
    cp = configparser.ConfigParser(inline_comment_prefixes=("#",))
    try:
        cp.read_string(text)
    except configparser.Error as e:
        raise ConfigError(f"bad config syntax: {e}") from None
    cfg = RunConfig()
    kw: dict = {}

    def grab(section, option, conv, key):
        if cp.has_option(section, option):
            raw = cp.get(section, option).strip()
            try:
                kw[key] = conv(raw)
            except ValueError:
                raise ConfigError(
                    f"bad value for [{section}] {option}: {raw!r}") from None

    as_bool = lambda s: s.lower() in ("1", "true", "yes", "on")
    grab("geometry", "width", int, "width")
    grab("geometry", "height", int, "height")
    grab("frontend", "scales",
         lambda s: tuple(int(v) for v in s.split(",") if v.strip()), "sizes")
    grab("frontend", "orientations",
         lambda s: tuple(float(v) for v in s.split(",") if v.strip()),
         "orientations")
    grab("frontend", "gamma", float, "gamma")
    grab("frontend", "threshold", float, "frontend_threshold")
    grab("frontend", "v_reset", float, "frontend_v_reset")
    grab("frontend", "tau_m_ms", float, "frontend_tau_m_ms")
    grab("frontend", "polarity_split", as_bool, "polarity_split")
    grab("kernel", "tau_m_ms", float, "tau_m_ms")
    grab("training", "learning_rate", float, "learning_rate")
    grab("training", "search_range_ms", float, "search_range_ms")
    grab("training", "iterations", int, "iterations")
    grab("training", "population", int, "population")
    grab("training", "weight_init_low", float, "weight_init_low")
    grab("training", "weight_init_high", float, "weight_init_high")
    grab("training", "seed", int, "seed")
    grab("training", "early_stop", as_bool, "early_stop")
    grab("inference", "threshold", float, "inference_threshold")
    grab("inference", "v_reset", float, "inference_v_reset")
    grab("inference", "period_ms", float, "period_ms")
    grab("inference", "window_ms",
         lambda s: float(s) if s else None, "window_ms")

    sizes = kw.get("sizes", cfg.sizes)
    params = dict(cfg.scale_params)
    for size in sizes:
        sig = f"sigma_{size}"
        wav = f"wavelength_{size}"
        if cp.has_option("frontend", sig) or cp.has_option("frontend", wav):
            if not (cp.has_option("frontend", sig) and cp.has_option("frontend", wav)):
                raise ConfigError(f"need both {sig} and {wav} for size {size}")
            params[size] = (cp.getfloat("frontend", sig),
                            cp.getfloat("frontend", wav))
        elif size not in params:
            raise ConfigError(f"no sigma/wavelength for scale {size}")
    kw["scale_params"] = tuple(sorted((s, params[s]) for s in sizes))
    return replace(cfg, **kw)

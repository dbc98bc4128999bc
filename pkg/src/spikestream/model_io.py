"""Versioned binary persistence of trained decision-layer weights.

Layout: an 8-byte magic, a fixed little-endian header (class count,
population, afferent count, kernel tau_m, search range), then the weight
matrix as row-major float64. A JSON sidecar next to the file carries
free-form metadata (geometry, bank parameters, config hash).
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MAGIC = b"SPIKEW01"
_HEADER = struct.Struct("<IIQdd")  # classes, population, n_afferents, tau_m, t_R


class WeightFileError(ValueError):
    """Corrupt or incompatible weight file."""


@dataclass
class WeightsMeta:
    classes: int
    population: int
    n_afferents: int
    tau_m_ms: float
    search_range_ms: float
    extra: dict = field(default_factory=dict)


def sidecar_path(path) -> Path:
    return Path(str(path) + ".json")


def save_weights(path, weights: np.ndarray, meta: WeightsMeta) -> None:
    weights = np.ascontiguousarray(weights, dtype="<f8")
    n_neurons = meta.classes * meta.population
    if weights.shape != (n_neurons, meta.n_afferents):
        raise WeightFileError(
            f"weights shape {weights.shape} does not match header "
            f"({n_neurons}, {meta.n_afferents})"
        )
    header = _HEADER.pack(meta.classes, meta.population, meta.n_afferents,
                          meta.tau_m_ms, meta.search_range_ms)
    Path(path).write_bytes(MAGIC + header + weights.tobytes())
    sidecar = {
        "format": MAGIC.decode("ascii"),
        "classes": meta.classes,
        "population": meta.population,
        "n_afferents": meta.n_afferents,
        "tau_m_ms": meta.tau_m_ms,
        "search_range_ms": meta.search_range_ms,
    }
    sidecar.update(meta.extra)
    sidecar_path(path).write_text(json.dumps(sidecar, indent=2, sort_keys=True) + "\n")


def load_weights(path) -> tuple[np.ndarray, WeightsMeta]:
    data = Path(path).read_bytes()
    if len(data) < len(MAGIC) + _HEADER.size or data[:len(MAGIC)] != MAGIC:
        raise WeightFileError(f"{path}: not a weight file (bad magic)")
    classes, population, n_aff, tau_m, t_r = _HEADER.unpack_from(data, len(MAGIC))
    body = data[len(MAGIC) + _HEADER.size:]
    expected = classes * population * n_aff * 8
    if len(body) != expected:
        raise WeightFileError(
            f"{path}: body holds {len(body)} bytes, header implies {expected}"
        )
    weights = np.frombuffer(body, dtype="<f8").reshape(
        classes * population, n_aff).copy()
    extra = {}
    side = sidecar_path(path)
    if side.exists():
        known = {"format", "classes", "population", "n_afferents",
                 "tau_m_ms", "search_range_ms"}
        extra = {k: v for k, v in json.loads(side.read_text()).items()
                 if k not in known}
    meta = WeightsMeta(classes=classes, population=population, n_afferents=n_aff,
                       tau_m_ms=tau_m, search_range_ms=t_r, extra=extra)
    return weights, meta

"""Oriented Gabor filtering of event streams with 2x2 winner-take-all pooling.

Stage one integrates every event into leaky feature maps, one map per
(kernel size, orientation) pair. Stage two groups each map into
non-overlapping 2x2 units: the first neuron in a unit to cross threshold
emits a feature spike and the whole unit resets, so only the locally
strongest response propagates downstream.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import NamedTuple, Sequence

import numpy as np

from .events import Event, EventStream, GeometryError, OrderingError, ON
from .neuron import SpikeTrain

# per kernel size: (effective width sigma, carrier wavelength)
DEFAULT_SCALE_PARAMS = {
    3: (1.2, 1.5),
    5: (2.0, 2.5),
    7: (2.8, 3.5),
    9: (3.6, 4.6),
}
DEFAULT_ORIENTATIONS = (0.0, 45.0, 90.0, 135.0)
DEFAULT_SIZES = (3, 5, 7, 9)
DEFAULT_S1_THRESHOLD = 2.0


class ParameterError(ValueError):
    """Invalid filter-bank parameter."""


class FeatureSpike(NamedTuple):
    """Output spike of one pooled 2x2 unit.

    ``ux``/``uy`` are 0-based unit coordinates on the ceil(w/2) x
    ceil(h/2) pooled grid; ``t`` is in microseconds.
    """

    map_index: int
    ux: int
    uy: int
    t: int


@dataclass(frozen=True)
class GaborBank:
    """Gabor kernels over a set of sizes and orientations.

    Kernel weights follow
    ``exp(-(X^2 + gamma^2 Y^2) / (2 sigma^2)) * cos(2 pi X / wavelength)``
    with (X, Y) the offset rotated by the orientation, evaluated on the
    integer offset grid of each kernel. The center weight is always 1.
    """

    sizes: tuple[int, ...]
    orientations: tuple[float, ...]
    gamma: float
    scale_params: tuple[tuple[int, tuple[float, float]], ...]
    kernels: tuple[np.ndarray, ...]

    @property
    def n_maps(self) -> int:
        return len(self.kernels)

    @property
    def maps(self) -> list[tuple[int, float]]:
        """(size, orientation) of each map, size-major order."""
        return [(s, o) for s in self.sizes for o in self.orientations]

    def kernel(self, size: int, orientation: float) -> np.ndarray:
        return self.kernels[self.maps.index((size, orientation))]

    def scaled(self, alpha: float) -> "GaborBank":
        """Bank with every kernel weight multiplied by alpha."""
        return replace(self, kernels=tuple(k * alpha for k in self.kernels))


def gabor_kernel(size: int, orientation_deg: float, gamma: float,
                 sigma: float, wavelength: float) -> np.ndarray:
    if size < 3 or size % 2 == 0:
        raise ParameterError(f"kernel size must be odd and >= 3, got {size}")
    if sigma <= 0 or wavelength <= 0:
        raise ParameterError("sigma and wavelength must be positive")
    s = size // 2
    dy, dx = np.mgrid[-s:s + 1, -s:s + 1].astype(float)
    theta = math.radians(orientation_deg)
    rx = dx * math.cos(theta) + dy * math.sin(theta)
    ry = -dx * math.sin(theta) + dy * math.cos(theta)
    return np.exp(-(rx**2 + gamma**2 * ry**2) / (2.0 * sigma**2)) \
        * np.cos(2.0 * math.pi * rx / wavelength)


def build_bank(sizes: Sequence[int] = DEFAULT_SIZES,
               orientations: Sequence[float] = DEFAULT_ORIENTATIONS,
               gamma: float = 0.3,
               scale_params: dict[int, tuple[float, float]] | None = None) -> GaborBank:
    if gamma <= 0:
        raise ParameterError("gamma must be positive")
    params = dict(DEFAULT_SCALE_PARAMS if scale_params is None else scale_params)
    kernels = []
    for size in sizes:
        if size not in params:
            raise ParameterError(f"no (sigma, wavelength) entry for size {size}")
        sigma, wavelength = params[size]
        for orient in orientations:
            kernels.append(gabor_kernel(size, orient, gamma, sigma, wavelength))
    return GaborBank(
        sizes=tuple(int(s) for s in sizes),
        orientations=tuple(float(o) for o in orientations),
        gamma=float(gamma),
        scale_params=tuple((int(s), (float(params[s][0]), float(params[s][1])))
                           for s in sizes),
        kernels=tuple(kernels),
    )


def bank_to_text(bank: GaborBank) -> str:
    """Small text config for a bank (parameters only, kernels rebuilt)."""
    lines = ["GABOR1", f"gamma {bank.gamma!r}"]
    lines.append("orientations " + " ".join(repr(o) for o in bank.orientations))
    for size, (sigma, wavelength) in bank.scale_params:
        lines.append(f"scale {size} {sigma!r} {wavelength!r}")
    return "\n".join(lines) + "\n"


def bank_from_text(text: str) -> GaborBank:
    gamma = None
    orientations = None
    sizes = []
    params = {}
    lines = [ln.strip() for ln in text.splitlines() if ln.strip() and not ln.startswith("#")]
    if not lines or lines[0] != "GABOR1":
        raise ParameterError("expected 'GABOR1' header")
    for ln in lines[1:]:
        fields = ln.split()
        if fields[0] == "gamma" and len(fields) == 2:
            gamma = float(fields[1])
        elif fields[0] == "orientations":
            orientations = tuple(float(v) for v in fields[1:])
        elif fields[0] == "scale" and len(fields) == 4:
            size = int(fields[1])
            sizes.append(size)
            params[size] = (float(fields[2]), float(fields[3]))
        else:
            raise ParameterError(f"unrecognized bank config line: {ln!r}")
    if gamma is None or orientations is None or not sizes:
        raise ParameterError("bank config missing gamma, orientations or scales")
    return build_bank(sizes, orientations, gamma, params)


@dataclass(frozen=True)
class FrontendConfig:
    """Leaky-integration settings of the filter layer."""

    tau_m_ms: float = 20.0
    threshold: float = DEFAULT_S1_THRESHOLD
    v_reset: float = 0.0
    polarity_split: bool = False  # route ON/OFF into separate map copies

    def validate(self):
        if self.tau_m_ms <= 0:
            raise ParameterError("tau_m_ms must be positive")


class FilterLayerState:
    """Per-pixel membrane state of all feature maps, lazily decayed.

    Each pixel stores its voltage at the last update together with that
    update time; reading at a later time applies exp(-dt/tau). Single
    writer per stream: events must arrive in non-decreasing time order.
    """

    def __init__(self, bank: GaborBank, width: int, height: int,
                 config: FrontendConfig | None = None):
        config = config or FrontendConfig()
        config.validate()
        if width < 1 or height < 1:
            raise GeometryError("geometry must have positive area")
        self.bank = bank
        self.width = width
        self.height = height
        self.config = config
        self.units_w = (width + 1) // 2
        self.units_h = (height + 1) // 2
        self.n_slots = bank.n_maps * (2 if config.polarity_split else 1)
        self._tau_us = config.tau_m_ms * 1000.0
        self._v = np.zeros((self.n_slots, height, width))
        self._t = np.zeros((self.n_slots, height, width))
        self._t_prev = 0
        # maps are size-major, so all orientations of one size form a
        # contiguous slot block and integrate as a single stacked window
        n_or = len(bank.orientations)
        blocks = 2 if config.polarity_split else 1
        self._groups = []
        for block in range(blocks):
            for si, size in enumerate(bank.sizes):
                g0 = block * bank.n_maps + si * n_or
                stack = np.stack(bank.kernels[si * n_or:(si + 1) * n_or])
                self._groups.append((g0, g0 + n_or, size // 2, stack))

    @property
    def n_afferents(self) -> int:
        return self.n_slots * self.units_h * self.units_w

    def _groups_for(self, polarity: int):
        if not self.config.polarity_split:
            return self._groups
        n = len(self._groups) // 2
        return self._groups[:n] if polarity == ON else self._groups[n:]

    def voltage(self, map_index: int, x: int, y: int, t_us: int) -> float:
        """Decayed voltage of one neuron at time t (1-based pixel address)."""
        v = self._v[map_index, y - 1, x - 1]
        t_last = self._t[map_index, y - 1, x - 1]
        return float(v * math.exp((t_last - t_us) / self._tau_us))

    def process_event(self, event: Event) -> list[FeatureSpike]:
        """Integrate one event into every map and collect unit spikes.

        All receptive-field neurons are decayed to the event time and
        incremented by their kernel weight first; threshold checks then
        run in row-major order, and a unit that fires is reset whole and
        cannot fire again within this event.
        """
        t = float(event.t)
        if event.t < self._t_prev:
            raise OrderingError(
                f"event at t={event.t} arrives after t={self._t_prev}"
            )
        if not (1 <= event.x <= self.width and 1 <= event.y <= self.height):
            raise GeometryError(
                f"event address ({event.x}, {event.y}) outside "
                f"{self.width}x{self.height}"
            )
        self._t_prev = event.t
        ex, ey = event.x - 1, event.y - 1
        thr = self.config.threshold
        spikes: list[FeatureSpike] = []
        for g0, g1, s, kstack in self._groups_for(event.p):
            ax0, ax1 = max(0, ex - s), min(self.width, ex + s + 1)
            ay0, ay1 = max(0, ey - s), min(self.height, ey + s + 1)
            sub_v = self._v[g0:g1, ay0:ay1, ax0:ax1]
            sub_t = self._t[g0:g1, ay0:ay1, ax0:ax1]
            sub_v *= np.exp((sub_t - t) / self._tau_us)
            sub_t[...] = t
            sub_v += kstack[:, ay0 - ey + s:ay1 - ey + s,
                            ax0 - ex + s:ax1 - ex + s]
            over = sub_v > thr
            if not over.any():
                continue
            kk, yy, xx = np.nonzero(over)  # slot-major, then row-major
            fired: set[tuple[int, int, int]] = set()
            for dk, dy, dx in zip(kk, yy, xx):
                slot = g0 + int(dk)
                gy, gx = ay0 + int(dy), ax0 + int(dx)
                unit = (slot, gx // 2, gy // 2)
                if unit in fired:
                    continue
                # winner fires; the whole 2x2 unit resets at the event time
                fired.add(unit)
                spikes.append(FeatureSpike(slot, unit[1], unit[2], event.t))
                bx, by = unit[1] * 2, unit[2] * 2
                self._v[slot, by:by + 2, bx:bx + 2] = self.config.v_reset
                self._t[slot, by:by + 2, bx:bx + 2] = t
        return spikes


def extract_features(stream: EventStream, bank: GaborBank,
                     config: FrontendConfig | None = None) -> list[FeatureSpike]:
    """Fold the whole stream through the filter layer, collecting spikes."""
    state = FilterLayerState(bank, stream.width, stream.height, config)
    out: list[FeatureSpike] = []
    for event in stream:
        out.extend(state.process_event(event))
    return out


def afferent_count(bank: GaborBank, width: int, height: int,
                   polarity_split: bool = False) -> int:
    n_maps = bank.n_maps * (2 if polarity_split else 1)
    return n_maps * ((height + 1) // 2) * ((width + 1) // 2)


def spikes_to_train(spikes: Sequence[FeatureSpike], n_maps: int,
                    units_w: int, units_h: int) -> SpikeTrain:
    """Flatten feature spikes into a decision-layer afferent spike train.

    Afferent index = map * (units_h * units_w) + uy * units_w + ux; times
    are converted from integer microseconds to float milliseconds.
    """
    n_aff = n_maps * units_h * units_w
    if not spikes:
        return SpikeTrain(np.empty(0), np.empty(0, dtype=np.int64), n_aff)
    times = np.array([sp.t for sp in spikes], dtype=np.float64) / 1000.0
    affs = np.array(
        [sp.map_index * units_h * units_w + sp.uy * units_w + sp.ux for sp in spikes],
        dtype=np.int64,
    )
    return SpikeTrain(times, affs, n_aff)


def feature_spikes_to_text(spikes: Sequence[FeatureSpike], units_w: int,
                           units_h: int, duration_us: int) -> str:
    """Write feature spikes in the event text format, map index as polarity.

    Unit coordinates are written 1-based like pixel addresses. This is an
    export format only; it does not parse back as an event stream.
    """
    lines = [f"AER1 {units_w} {units_h} {duration_us}"]
    lines.extend(f"{sp.ux + 1} {sp.uy + 1} {sp.t} {sp.map_index}" for sp in spikes)
    return "\n".join(lines) + "\n"

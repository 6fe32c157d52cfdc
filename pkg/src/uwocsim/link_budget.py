"""Link budget: photon-count signal/ISI integrals, receiver noise and channel models.

All signal quantities are stored as expected photoelectron counts per bit;
the charge-domain values used by the Gaussian analytic model are ``q * m``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.constants import Boltzmann as K_B
from scipy.constants import c as C_LIGHT
from scipy.constants import e as Q_E
from scipy.constants import h as H_PLANCK

from .channel_mc import (ImpulseResponse, LinkGeometry, McSettings, WaterType,
                         beer_lambert_gain, simulate_impulse_response)
from .errors import EmptyChannel, InvalidLayout, ResolutionTooCoarse
from .turbulence import CorrelationModel

DEFAULT_TRUNCATION_EPS = 1e-3


@dataclass(frozen=True)
class PulseShape:
    """OOK pulse of peak power ``power`` over one bit period.

    ``samples`` optionally gives a dimensionless pulse shape sampled on the
    impulse-response bin grid; by default the pulse is rectangular on [0, T_b].
    """

    power: float
    T_b: float
    samples: tuple | None = None

    def __post_init__(self):
        if self.power < 0:
            raise ValueError("pulse power must be >= 0")
        if not self.T_b > 0:
            raise ValueError("T_b must be positive")
        if self.samples is not None:
            object.__setattr__(self, "samples", tuple(float(v) for v in self.samples))

    @classmethod
    def from_rate(cls, power: float, data_rate: float):
        return cls(power, 1.0 / data_rate)


@dataclass(frozen=True)
class HardwareParams:
    eta: float = 0.8
    wavelength: float = 532e-9
    T_r: float = 290.0  # K
    R_L: float = 100.0  # ohm
    I_dc: float = 1.226e-9  # A
    n_b: float = 1.8094e8  # background counts per second, whole array
    T_F: float = 0.8
    delta_lambda: float = 10e-9  # m

    def __post_init__(self):
        if not 0 < self.eta <= 1:
            raise ValueError("quantum efficiency must lie in (0, 1]")
        if self.wavelength <= 0 or self.T_r < 0 or self.R_L <= 0 or self.I_dc < 0 or self.n_b < 0:
            raise ValueError("hardware parameters out of range")

    @property
    def frequency(self) -> float:
        return C_LIGHT / self.wavelength

    @property
    def counts_per_joule(self) -> float:
        """eta / (h f): photoelectrons per joule of received optical energy."""
        return self.eta / (H_PLANCK * self.frequency)


def responsivity(hw: HardwareParams) -> float:
    """Photodetector responsivity eta*q/(h f) in A/W."""
    return Q_E * hw.counts_per_joule


def thermal_variance(hw: HardwareParams, T_b: float) -> float:
    """Thermal noise variance in counts^2 over one bit, 2 K_b T_r T_b / (R_L q^2)."""
    if not T_b > 0:
        raise ValueError("T_b must be positive")
    return 2.0 * K_B * hw.T_r * T_b / (hw.R_L * Q_E**2)


def dark_rate(hw: HardwareParams) -> float:
    return hw.I_dc / Q_E


@dataclass(frozen=True)
class SignalIntegrals:
    """Expected counts of the current bit (``m_s``) and of past bits k = -1..-L.

    ``tail`` is the ISI energy beyond the retained memory, kept so that the
    partition ``m_s + sum(m_I) + tail`` is exact.
    """

    m_s: float
    m_I: tuple = ()
    tail: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "m_I", tuple(float(v) for v in self.m_I))
        if self.m_s < 0 or any(v < 0 for v in self.m_I) or self.tail < 0:
            raise ValueError("signal integrals must be >= 0")

    @property
    def L(self) -> int:
        return len(self.m_I)

    @property
    def gamma_s(self) -> float:
        return Q_E * self.m_s

    @property
    def gamma_I(self) -> tuple:
        return tuple(Q_E * v for v in self.m_I)

    @property
    def total(self) -> float:
        return self.m_s + sum(self.m_I) + self.tail

    def scaled(self, factor: float) -> "SignalIntegrals":
        return SignalIntegrals(self.m_s * factor, tuple(v * factor for v in self.m_I), self.tail * factor)


def _split_into_slots(starts, width, energy, T_b):
    """Spread energy uniformly filling [start, start+width) over bit slots of length T_b.

    ``width`` must not exceed ``T_b``, so each cell touches at most two slots.
    """
    starts = np.asarray(starts, dtype=float)
    energy = np.asarray(energy, dtype=float)
    n0 = np.floor(starts / T_b + 1e-12).astype(np.int64)
    boundary = (n0 + 1) * T_b
    first = np.clip((boundary - starts) / width, 0.0, 1.0)
    n_slots = int(n0.max()) + 2 if n0.size else 1
    slots = np.bincount(n0, weights=energy * first, minlength=n_slots)
    slots += np.bincount(n0 + 1, weights=energy * (1.0 - first), minlength=n_slots)
    return slots


def _slot_energies(h0: ImpulseResponse, pulse: PulseShape) -> np.ndarray:
    bw, T_b = h0.bin_width, pulse.T_b
    occupied = np.nonzero(h0.bins)[0]
    if pulse.samples is None:
        # rectangular pulse: every bin launches a block of width T_b at its left edge
        return _split_into_slots(occupied * bw, T_b, pulse.power * T_b * h0.bins[occupied], T_b)
    shape = np.asarray(pulse.samples)
    gamma = np.convolve(h0.bins, shape) * pulse.power * bw
    idx = np.nonzero(gamma)[0]
    return _split_into_slots(idx * bw, bw, gamma[idx], T_b)


def compute_signal_integrals(h0: ImpulseResponse, pulse: PulseShape, hw: HardwareParams,
                             truncation_eps: float = DEFAULT_TRUNCATION_EPS,
                             L_max: int | None = None) -> SignalIntegrals:
    """Desired-signal and ISI photoelectron counts of one link.

    Slot 0 is the current bit [0, T_b) measured from the earliest arrival;
    slot n >= 1 holds the contribution of bit k = -n. The memory L is the
    smallest integer whose discarded tail is below ``truncation_eps * m_s``;
    ``L_max`` caps it.
    """
    if h0.bin_width > pulse.T_b / 10 and h0.occupied_bins() > 1:
        raise ResolutionTooCoarse(
            f"bin width {h0.bin_width:.3g} s exceeds T_b/10 = {pulse.T_b / 10:.3g} s")
    if h0.total_gain <= 0:
        raise EmptyChannel("impulse response has zero total gain")
    slots = _slot_energies(h0, pulse) * hw.counts_per_joule
    m_s, isi = float(slots[0]), slots[1:]
    # tails[L] = energy in slots beyond L
    tails = np.concatenate([np.cumsum(isi[::-1])[::-1], [0.0]])
    L = int(np.argmax(tails <= truncation_eps * m_s))
    if L_max is not None:
        L = min(L, int(L_max))
    return SignalIntegrals(m_s, tuple(isi[:L]), float(tails[L]))


@dataclass(frozen=True)
class NoiseStats:
    """Per-receiver noise in counts for one bit period."""

    sigma_th2: float
    n_d: float
    n_b_per_rx: float
    T_b: float

    @classmethod
    def from_hardware(cls, hw: HardwareParams, T_b: float, N: int = 1) -> "NoiseStats":
        # background light is shared across apertures; dark and thermal noise are per receiver
        return cls(thermal_variance(hw, T_b), dark_rate(hw), hw.n_b / N, T_b)

    @property
    def sigma_Tb2(self) -> float:
        return self.sigma_th2 + (self.n_b_per_rx + self.n_d) * self.T_b

    @property
    def sigma_Tb(self) -> float:
        return equivalent_gaussian_sigma(self)


def equivalent_gaussian_sigma(noise: NoiseStats) -> float:
    """Std of the Gaussian equivalent of thermal, dark and background noise (counts)."""
    return math.sqrt(noise.sigma_Tb2)


# -- channel models -----------------------------------------------------------

CHANNEL_MODELS = ("M1", "M2", "M3", "M4")


@dataclass
class ChannelModel:
    selector: str
    h: list
    fading: bool


def build_channel_model(selector: str, water: WaterType, geom: LinkGeometry,
                        settings: McSettings | None = None, h=None) -> ChannelModel:
    """Channel matrix for one of the four models.

    M1 unit delta with fading, M2 Beer-law delta without fading, M3 Monte
    Carlo response without fading, M4 Monte Carlo response with fading.
    ``h`` may supply a precomputed Monte Carlo matrix for M3/M4.
    """
    selector = selector.upper()
    if selector not in CHANNEL_MODELS:
        raise ValueError(f"unknown channel model {selector!r}, expected one of {CHANNEL_MODELS}")
    settings = settings or McSettings()
    t0 = geom.refractive_index * geom.d0 / C_LIGHT
    if selector in ("M1", "M2"):
        gain = 1.0 if selector == "M1" else beer_lambert_gain(water, geom.d0)
        h = [[ImpulseResponse.delta(gain, settings.bin_width, t0) for _ in range(geom.N)]
             for _ in range(geom.M)]
        return ChannelModel(selector, h, selector == "M1")
    if h is None:
        h = simulate_impulse_response(water, geom, settings)
    return ChannelModel(selector, h, selector == "M4")


# -- diversity layout ---------------------------------------------------------

def dbm_to_watts(dbm) -> float:
    return 10.0 ** ((np.asarray(dbm, dtype=float) - 30.0) / 10.0)


def peak_power_from_average_dbm(avg_dbm) -> float:
    """ON-state power for equiprobable OOK with the given average power per bit."""
    return 2.0 * dbm_to_watts(avg_dbm)


@dataclass(eq=False)
class DiversityLayout:
    """Everything the BER engines need about an M x N link.

    ``m_s`` has shape (M, N); ``m_I`` has shape (M, N, L_max) with links of
    shorter memory zero-padded. ``sigma_X2`` is the per-link log-amplitude
    variance (zero disables fading).
    """

    m_s: np.ndarray
    m_I: np.ndarray
    noise: NoiseStats
    combiner: str = "EGC"
    sigma_X2: np.ndarray = field(default_factory=lambda: np.zeros((1, 1)))
    correlation: CorrelationModel | None = None

    def __post_init__(self):
        self.m_s = np.atleast_2d(np.asarray(self.m_s, dtype=float))
        M, N = self.m_s.shape
        m_I = np.asarray(self.m_I, dtype=float)
        if m_I.size == 0:
            m_I = np.zeros((M, N, 0))
        self.m_I = m_I.reshape(M, N, -1)
        self.sigma_X2 = np.broadcast_to(np.asarray(self.sigma_X2, dtype=float), (M, N)).copy()
        self.combiner = self.combiner.upper()
        if self.combiner not in ("OC", "EGC"):
            raise InvalidLayout(f"combiner must be OC or EGC, got {self.combiner!r}")
        if np.any(self.m_s < 0) or np.any(self.m_I < 0) or np.any(self.sigma_X2 < 0):
            raise InvalidLayout("signal integrals and fading variances must be >= 0")
        if self.correlation is not None and self.correlation.R_MIMO.shape != (M * N, M * N):
            raise InvalidLayout("correlation model does not match the layout dimensions")

    @property
    def M(self) -> int:
        return self.m_s.shape[0]

    @property
    def N(self) -> int:
        return self.m_s.shape[1]

    @property
    def L_max(self) -> int:
        return self.m_I.shape[2]

    @property
    def sigma_Tb(self) -> float:
        return self.noise.sigma_Tb

    @property
    def fading(self) -> bool:
        return bool(np.any(self.sigma_X2 > 0))

    def with_power_scale(self, factor: float) -> "DiversityLayout":
        """Same layout with every signal count multiplied by ``factor``."""
        return replace(self, m_s=self.m_s * factor, m_I=self.m_I * factor)

    def with_memory(self, L: int) -> "DiversityLayout":
        return replace(self, m_I=self.m_I[:, :, :L])


def make_layout(h, peak_power: float, T_b: float, hw: HardwareParams | None = None,
                combiner: str = "EGC", sigma_X2=0.0, correlation: CorrelationModel | None = None,
                truncation_eps: float = DEFAULT_TRUNCATION_EPS, L_max: int | None = None,
                pulse_samples=None) -> DiversityLayout:
    """Build a layout from an M x N impulse-response matrix.

    ``peak_power`` is the total ON power, split equally over the M
    transmitters.
    """
    hw = hw or HardwareParams()
    M, N = len(h), len(h[0])
    pulse = PulseShape(peak_power / M, T_b, pulse_samples)
    ints = [[compute_signal_integrals(h[i][j], pulse, hw, truncation_eps, L_max)
             for j in range(N)] for i in range(M)]
    L = max(s.L for row in ints for s in row)
    m_s = np.array([[s.m_s for s in row] for row in ints])
    m_I = np.zeros((M, N, L))
    for i in range(M):
        for j in range(N):
            m_I[i, j, : ints[i][j].L] = ints[i][j].m_I
    return DiversityLayout(m_s, m_I, NoiseStats.from_hardware(hw, T_b, N), combiner,
                           sigma_X2, correlation)

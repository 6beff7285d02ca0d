"""Parameterized power spectra and random-phase synthesis of single-channel EEG.

The spectral model is a 1/f^beta aperiodic background plus Gaussian peaks::

    S(f) = 10**ap_offset / f**beta + sum_k 10**a_osc_k * exp(-(f - f_osc_k)**2 / (2 w_k**2))

Time series are obtained by interpolating S onto the real-FFT grid, taking
``sqrt(S)`` as bin amplitude, attaching uniform random phases and inverting.
Absolute units are arbitrary: no bin-width or density scaling is applied.
"""

from __future__ import annotations

import dataclasses
from dataclasses import asdict, dataclass, field
from typing import Literal, Sequence

import numpy as np
from scipy import signal as sps

from . import artifacts

SWEEPABLE = ("beta", "ap_offset", "f_osc", "a_osc")

# Standard sweep ranges for each parameter, shipped as the bundled sweep configs.
SWEEP_RANGES = {
    "beta": (1.0, 2.0),
    "ap_offset": (0.1, 3.0),
    "f_osc": (1.0, 60.0),
    "a_osc": (0.1, 3.0),
}


@dataclass(frozen=True)
class Peak:
    f_osc: float
    a_osc: float
    width: float


@dataclass(frozen=True)
class SpectralParams:
    """Aperiodic exponent/offset and a (possibly empty) list of Gaussian peaks."""

    beta: float = 1.5
    ap_offset: float = 1.0
    peaks: tuple[Peak, ...] = (Peak(10.0, 1.0, 2.0),)
    f_min: float = 1.0
    f_max: float = 60.0

    def __post_init__(self):
        object.__setattr__(self, "peaks", tuple(
            p if isinstance(p, Peak) else Peak(**p) for p in self.peaks))
        self.validate()

    def validate(self) -> None:
        vals = [self.beta, self.ap_offset, self.f_min, self.f_max]
        for p in self.peaks:
            vals += [p.f_osc, p.a_osc, p.width]
        if not np.all(np.isfinite(vals)):
            raise ValueError("spectral parameters must be finite")
        if self.beta < 0:
            raise ValueError(f"beta must be >= 0, got {self.beta}")
        if not 0 < self.f_min < self.f_max:
            raise ValueError(
                f"need 0 < f_min < f_max, got f_min={self.f_min}, f_max={self.f_max}")
        for p in self.peaks:
            if p.width <= 0:
                raise ValueError(f"peak width must be > 0, got {p.width}")
            if not self.f_min <= p.f_osc <= self.f_max:
                raise ValueError(
                    f"peak f_osc={p.f_osc} outside [{self.f_min}, {self.f_max}]")

    def with_param(self, name: str, value: float) -> "SpectralParams":
        """Copy with one sweepable parameter replaced (peak params act on the first peak)."""
        if name not in SWEEPABLE:
            raise ValueError(f"unknown sweep parameter {name!r}; expected one of {SWEEPABLE}")
        value = float(value)
        if name in ("beta", "ap_offset"):
            return dataclasses.replace(self, **{name: value})
        if not self.peaks:
            raise ValueError(f"cannot sweep {name!r}: base parameters have no peak")
        first = dataclasses.replace(self.peaks[0], **{name: value})
        return dataclasses.replace(self, peaks=(first,) + self.peaks[1:])

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "SpectralParams":
        d = dict(d)
        d["peaks"] = tuple(Peak(**p) for p in d.get("peaks", ()))
        return cls(**d)


@dataclass(frozen=True)
class SignalConfig:
    fs: float = 200.0
    duration: float = 5.0
    seed: int = 0

    def __post_init__(self):
        if self.fs <= 0 or self.duration <= 0:
            raise ValueError("fs and duration must be positive")
        if self.n_samples < 2:
            raise ValueError("signal must have at least 2 samples")

    @property
    def n_samples(self) -> int:
        return int(round(self.fs * self.duration))

    def check_params(self, params: SpectralParams) -> None:
        if self.fs <= 2 * params.f_max:
            raise ValueError(
                f"fs={self.fs} Hz must exceed 2*f_max={2 * params.f_max} Hz")


@dataclass
class Spectrum:
    """Frequency grid and linear power; ``powers`` may carry leading batch axes."""

    freqs: np.ndarray
    powers: np.ndarray

    def __post_init__(self):
        self.freqs = np.asarray(self.freqs, dtype=float)
        self.powers = np.asarray(self.powers, dtype=float)
        if self.freqs.ndim != 1 or self.powers.shape[-1] != self.freqs.size:
            raise ValueError("freqs and powers lengths differ")
        if np.any(np.diff(self.freqs) <= 0):
            raise ValueError("freqs must be strictly increasing")
        if np.any(self.powers < 0):
            raise ValueError("powers must be non-negative")


@dataclass
class EpochMeta:
    theta: float | None = None
    subject_id: str | None = None
    task_id: str | None = None
    seed_used: int = 0


@dataclass
class EpochSet:
    """N x L signal matrix.

    Multi-channel data is stored channel-major per trial: row ``t * n_channels + c``
    holds channel ``c`` of trial ``t``, and ``meta`` has one record per row.
    """

    data: np.ndarray
    fs: float
    meta: list[EpochMeta] = field(default_factory=list)
    n_channels: int = 1

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=float)
        if self.data.ndim != 2:
            raise ValueError(f"epoch data must be 2-D, got shape {self.data.shape}")
        if not self.meta:
            self.meta = [EpochMeta() for _ in range(self.data.shape[0])]
        if len(self.meta) != self.data.shape[0]:
            raise ValueError(
                f"meta has {len(self.meta)} records for {self.data.shape[0]} epochs")
        if self.fs <= 0:
            raise ValueError("fs must be positive")
        if self.n_channels < 1 or self.data.shape[0] % self.n_channels:
            raise ValueError("row count is not a multiple of n_channels")

    def __len__(self) -> int:
        return self.data.shape[0]

    @property
    def n_samples(self) -> int:
        return self.data.shape[1]

    @property
    def theta(self) -> np.ndarray:
        return np.array([np.nan if m.theta is None else m.theta for m in self.meta])

    def subset(self, idx) -> "EpochSet":
        idx = np.asarray(idx)
        return EpochSet(self.data[idx], self.fs, [self.meta[i] for i in idx])

    def trials(self) -> np.ndarray:
        """Data reshaped to (n_trials, n_channels, L)."""
        return self.data.reshape(-1, self.n_channels, self.n_samples)


@dataclass(frozen=True)
class SweepSpec:
    param_name: str
    theta_min: float
    theta_max: float
    n_samples: int = 1000
    base: SpectralParams = field(default_factory=SpectralParams)
    config: SignalConfig = field(default_factory=SignalConfig)
    df: float = 0.5
    compose: str = "linear"

    def __post_init__(self):
        if self.param_name not in SWEEPABLE:
            raise ValueError(f"param_name must be one of {SWEEPABLE}, got {self.param_name!r}")
        if not self.theta_min < self.theta_max:
            raise ValueError("theta_min must be < theta_max")
        if self.n_samples < 2:
            raise ValueError("n_samples must be >= 2")
        # Both endpoints must yield valid parameters.
        self.base.with_param(self.param_name, self.theta_min)
        self.base.with_param(self.param_name, self.theta_max)


def stream(seed: int, *key: int) -> np.random.Generator:
    """PCG64 stream for (seed, *key); independent of draw order elsewhere."""
    return np.random.Generator(np.random.PCG64(
        np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in key))))


def frequency_grid(f_min: float, f_max: float, df: float) -> np.ndarray:
    if df <= 0:
        raise ValueError("df must be positive")
    if f_min <= 0:
        raise ValueError(
            f"frequency grid starts at {f_min} Hz; f = 0 makes the 1/f^beta term divide by zero")
    n = int(np.floor((f_max - f_min) / df + 1e-9)) + 1
    freqs = f_min + df * np.arange(n)
    if f_max - freqs[-1] > 1e-9 * df:
        freqs = np.append(freqs, f_max)
    return freqs


def gen_power_spectrum(
    params: SpectralParams,
    df: float = 0.5,
    compose: Literal["linear", "logpower"] = "linear",
) -> Spectrum:
    """Evaluate the aperiodic + peaks model on ``[f_min, f_max]`` at step ``df``.

    ``compose="linear"`` adds the peak terms in linear power. ``"logpower"`` adds
    them to the log10 aperiodic power instead, the convention of common spectral
    parameterization tools.
    """
    freqs = frequency_grid(params.f_min, params.f_max, df)
    log_ap = params.ap_offset - params.beta * np.log10(freqs)
    gauss = [np.exp(-(freqs - p.f_osc) ** 2 / (2 * p.width ** 2))
             for p in params.peaks]
    if compose == "linear":
        powers = 10.0 ** log_ap
        for p, g in zip(params.peaks, gauss):
            powers = powers + 10.0 ** p.a_osc * g
    elif compose == "logpower":
        log_p = log_ap.copy()
        for p, g in zip(params.peaks, gauss):
            log_p += p.a_osc * g
        powers = 10.0 ** log_p
    else:
        raise ValueError(f"unknown compose mode {compose!r}")
    return Spectrum(freqs, powers)


def interpolated_bin_power(spec: Spectrum, n_samples: int, fs: float) -> np.ndarray:
    """Power on the rfft grid of (n_samples, 1/fs); zero outside the spectrum support."""
    if not np.all(np.isfinite(spec.powers)):
        raise ValueError("spectrum contains non-finite powers")
    f_fft = np.fft.rfftfreq(n_samples, 1.0 / fs)
    p = np.interp(f_fft, spec.freqs, spec.powers, left=0.0, right=0.0)
    p[(f_fft < spec.freqs[0]) | (f_fft > spec.freqs[-1])] = 0.0
    p[0] = 0.0
    return p


def spectrum_to_timeseries(
    spec: Spectrum, config: SignalConfig, rng: np.random.Generator
) -> np.ndarray:
    """Random-phase inverse real FFT of ``sqrt(P)`` sampled on the FFT grid."""
    n = config.n_samples
    power = interpolated_bin_power(spec, n, config.fs)
    amp = np.sqrt(power)
    phase = rng.uniform(0.0, 2.0 * np.pi, size=amp.size)
    coef = amp * np.exp(1j * phase)
    coef[0] = 0.0
    if n % 2 == 0:
        coef[-1] = amp[-1]
    return np.fft.irfft(coef, n)


def expected_variance(power: np.ndarray, n_samples: int) -> float:
    """Mean square of ``spectrum_to_timeseries`` output given bin powers (Parseval)."""
    w = np.full(power.shape, 2.0)
    w[0] = 1.0
    if n_samples % 2 == 0:
        w[-1] = 1.0
    return float(np.sum(w * power) / n_samples ** 2)


def synthesize(
    params: SpectralParams,
    config: SignalConfig,
    rng: np.random.Generator,
    df: float = 0.5,
    compose: str = "linear",
) -> np.ndarray:
    config.check_params(params)
    return spectrum_to_timeseries(gen_power_spectrum(params, df, compose), config, rng)


def sweep(spec: SweepSpec) -> tuple[EpochSet, np.ndarray]:
    """Linear sweep of one parameter; epoch ``i`` uses ``stream(config.seed, i)``."""
    theta = np.linspace(spec.theta_min, spec.theta_max, spec.n_samples)
    cfg = spec.config
    data = np.empty((spec.n_samples, cfg.n_samples))
    meta = []
    for i, t in enumerate(theta):
        params = spec.base.with_param(spec.param_name, t)
        data[i] = synthesize(params, cfg, stream(cfg.seed, i), spec.df, spec.compose)
        meta.append(EpochMeta(theta=float(t), seed_used=int(cfg.seed)))
    return EpochSet(data, cfg.fs, meta), theta


def welch_psd(
    x: np.ndarray,
    fs: float,
    segment_len: int = 400,
    overlap_frac: float = 0.5,
) -> Spectrum:
    """One-sided Hann-window Welch estimate in density units (power / Hz).

    Works along the last axis, so a 2-D input yields one PSD row per epoch.
    """
    x = np.asarray(x, dtype=float)
    if segment_len < 8:
        raise ValueError(f"segment_len must be >= 8, got {segment_len}")
    if segment_len > x.shape[-1]:
        raise ValueError(f"segment_len={segment_len} exceeds signal length {x.shape[-1]}")
    if not 0 <= overlap_frac < 1:
        raise ValueError("overlap_frac must be in [0, 1)")
    noverlap = int(round(overlap_frac * segment_len))
    freqs, pxx = sps.welch(x, fs=fs, window="hann", nperseg=segment_len,
                           noverlap=noverlap, detrend=False, scaling="density",
                           return_onesided=True, axis=-1)
    return Spectrum(freqs, np.maximum(pxx, 0.0))


def loglog_slope(freqs: Sequence[float], powers: Sequence[float],
                 band: tuple[float, float]) -> float:
    """OLS slope of log10(power) against log10(freq) within ``band``."""
    freqs = np.asarray(freqs)
    sel = (freqs >= band[0]) & (freqs <= band[1])
    return float(np.polyfit(np.log10(freqs[sel]), np.log10(np.asarray(powers)[sel]), 1)[0])


def save_epochs(epochs: EpochSet, path, extra: dict | None = None):
    """Write ``<stem>.epochs.f32`` and its manifest (n, l, fs, per-epoch meta)."""
    n, length = epochs.data.shape
    return artifacts.write_matrix(path, epochs.data, "epochs", "epochs", {
        "n": n, "l": length, "fs": epochs.fs, "n_channels": epochs.n_channels,
        "meta": [asdict(m) for m in epochs.meta], **(extra or {})})


def load_epochs(path) -> tuple[EpochSet, dict]:
    data, manifest = artifacts.read_matrix(path, "epochs", "epochs")
    meta = [EpochMeta(**m) for m in manifest.get("meta", [])] or None
    return EpochSet(data, manifest["fs"], meta or [], manifest.get("n_channels", 1)), manifest

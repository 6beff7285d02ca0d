"""Multi-channel linear forward model: independent aperiodic and oscillatory
sources mixed through a leadfield, plus Gaussian sensor noise."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .spectrum import (
    EpochMeta, EpochSet, Peak, SignalConfig, SpectralParams, expected_variance,
    gen_power_spectrum, interpolated_bin_power, spectrum_to_timeseries, stream,
)

NOISE_STREAM = 1 << 20
CHOL_JITTER = 1e-10
MIN_POOLED = 1000


@dataclass(frozen=True)
class SourceSpec:
    kind: str
    params: SpectralParams
    stream_id: int | None = None

    def __post_init__(self):
        if self.kind not in ("aperiodic", "oscillatory"):
            raise ValueError(f"source kind must be aperiodic or oscillatory, got {self.kind!r}")
        if self.kind == "aperiodic" and self.params.peaks:
            raise ValueError("aperiodic sources cannot carry peaks")
        if self.kind == "oscillatory" and len(self.params.peaks) != 1:
            raise ValueError("oscillatory sources need exactly one peak")

    def power_spectrum(self, df: float):
        """Power of this source's own term only."""
        if self.kind == "aperiodic":
            return gen_power_spectrum(self.params, df)
        p = self.params.peaks[0]
        spec = gen_power_spectrum(SpectralParams(
            beta=0.0, ap_offset=0.0, peaks=(p,), f_min=self.params.f_min,
            f_max=self.params.f_max), df)
        spec.powers = spec.powers - 1.0  # drop the flat 10**0 / f**0 term
        spec.powers[spec.powers < 0] = 0.0
        return spec


@dataclass
class ForwardSpec:
    leadfield: np.ndarray
    sources: list[SourceSpec]
    noise_cov: np.ndarray
    config: SignalConfig = field(default_factory=SignalConfig)
    n_trials: int = 100
    df: float = 0.5

    def __post_init__(self):
        self.leadfield = np.atleast_2d(np.asarray(self.leadfield, dtype=float))
        self.noise_cov = np.atleast_2d(np.asarray(self.noise_cov, dtype=float))
        c, ns = self.leadfield.shape
        if ns < 1 or c < 1 or ns != len(self.sources):
            raise ValueError(f"leadfield shape {self.leadfield.shape} does not match "
                             f"{len(self.sources)} sources")
        if not np.all(np.isfinite(self.leadfield)):
            raise ValueError("leadfield must be finite")
        if self.noise_cov.shape != (c, c):
            raise ValueError(f"noise_cov must be {c}x{c}")
        if not np.allclose(self.noise_cov, self.noise_cov.T, rtol=0, atol=1e-12):
            raise ValueError("noise_cov must be symmetric")
        if np.linalg.eigvalsh(self.noise_cov).min() < -1e-12 * max(1.0, np.abs(self.noise_cov).max()):
            raise ValueError("noise_cov must be positive semi-definite")
        if self.n_trials < 1:
            raise ValueError("n_trials must be >= 1")
        for s in self.sources:
            self.config.check_params(s.params)

    @property
    def n_channels(self) -> int:
        return self.leadfield.shape[0]

    def source_variances(self) -> np.ndarray:
        """Exact per-source signal variance (amplitudes are fixed, phases random)."""
        n = self.config.n_samples
        return np.array([
            expected_variance(interpolated_bin_power(s.power_spectrum(self.df), n, self.config.fs), n)
            for s in self.sources])

    def to_dict(self) -> dict:
        return {
            "leadfield": self.leadfield.tolist(),
            "sources": [{"kind": s.kind, "params": s.params.to_dict(), "stream_id": s.stream_id}
                        for s in self.sources],
            "noise_cov": self.noise_cov.tolist(),
            "config": asdict(self.config),
            "n_trials": self.n_trials,
            "df": self.df,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ForwardSpec":
        return cls(
            leadfield=d["leadfield"],
            sources=[SourceSpec(s["kind"], SpectralParams.from_dict(s["params"]), s.get("stream_id"))
                     for s in d["sources"]],
            noise_cov=d["noise_cov"],
            config=SignalConfig(**d.get("config", {})),
            n_trials=d.get("n_trials", 100),
            df=d.get("df", 0.5),
        )


def default_spec(seed: int = 0, n_trials: int = 100, n_channels: int = 32) -> ForwardSpec:
    """A widespread 1/f^1.5 source (A_ap=1) seen with unit gain on every channel,
    and a 10 Hz rhythm (A_osc=1, w=2) seen on channel 0 only.

    Per source the rhythm carries more power than the background; the
    aperiodic trace dominates through its spatial extent.
    """
    leadfield = np.zeros((n_channels, 2))
    leadfield[:, 0] = 1.0
    leadfield[0, 1] = 1.0
    sources = [
        SourceSpec("aperiodic", SpectralParams(beta=1.5, ap_offset=1.0, peaks=())),
        SourceSpec("oscillatory", SpectralParams(beta=0.0, ap_offset=0.0,
                                                 peaks=(Peak(10.0, 1.0, 2.0),))),
    ]
    return ForwardSpec(leadfield, sources, 1e-6 * np.eye(n_channels), SignalConfig(seed=seed),
                       n_trials)


def _noise_factor(cov: np.ndarray) -> np.ndarray | None:
    if not np.any(cov):
        return None
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        pass
    try:
        return np.linalg.cholesky(cov + CHOL_JITTER * np.eye(len(cov)))
    except np.linalg.LinAlgError:
        raise ValueError(
            f"noise covariance is not factorizable even with jitter {CHOL_JITTER}") from None


def simulate_sources(spec: ForwardSpec, trial: int) -> np.ndarray:
    """(N_s, L) source signals for one trial."""
    cfg = spec.config
    out = np.empty((len(spec.sources), cfg.n_samples))
    for k, src in enumerate(spec.sources):
        key = k if src.stream_id is None else src.stream_id
        out[k] = spectrum_to_timeseries(src.power_spectrum(spec.df), cfg,
                                        stream(cfg.seed, trial, key))
    return out


def simulate(spec: ForwardSpec) -> EpochSet:
    """x_t = A z_t + eps_t for every trial; rows are channel-major per trial."""
    cfg = spec.config
    c = spec.n_channels
    chol = _noise_factor(spec.noise_cov)
    data = np.empty((spec.n_trials * c, cfg.n_samples))
    for t in range(spec.n_trials):
        x = spec.leadfield @ simulate_sources(spec, t)
        if chol is not None:
            x += chol @ stream(cfg.seed, t, NOISE_STREAM).standard_normal((c, cfg.n_samples))
        data[t * c:(t + 1) * c] = x
    meta = [EpochMeta(seed_used=cfg.seed) for _ in range(len(data))]
    return EpochSet(data, cfg.fs, meta, n_channels=c)


@dataclass
class CovarianceReport:
    sigma_x_hat: list[list[float]]
    sigma_x_model: list[list[float]]
    trace_ap: float
    trace_osc: float
    ratio_ap_osc: float | None
    rel_frobenius_err: float
    n_pooled: int

    def to_dict(self) -> dict:
        return asdict(self)


def _fsum_matrix(mats: np.ndarray) -> np.ndarray:
    # exactly rounded, so independent of trial order
    n, c, _ = mats.shape
    out = np.empty((c, c))
    for i in range(c):
        for j in range(c):
            out[i, j] = math.fsum(mats[:, i, j])
    return out


def covariance_check(epochs: EpochSet, spec: ForwardSpec) -> CovarianceReport:
    """Pooled spatial covariance versus ``A diag(v) A^T + noise_cov``."""
    c = spec.n_channels
    if epochs.n_channels != c:
        raise ValueError(f"epochs have {epochs.n_channels} channels, spec has {c}")
    trials = epochs.trials()
    n_pooled = trials.shape[0] * trials.shape[2]
    if n_pooled < MIN_POOLED:
        raise ValueError(f"only {n_pooled} pooled samples; need at least {MIN_POOLED}")
    mean = np.array([math.fsum(trials[:, i, :].ravel()) for i in range(c)]) / n_pooled
    centered = trials - mean[None, :, None]
    sigma_hat = _fsum_matrix(np.einsum("tcl,tdl->tcd", centered, centered)) / (n_pooled - 1)
    sigma_hat = 0.5 * (sigma_hat + sigma_hat.T)

    v = spec.source_variances()
    a = spec.leadfield
    is_ap = np.array([s.kind == "aperiodic" for s in spec.sources])
    cov_ap = (a[:, is_ap] * v[is_ap]) @ a[:, is_ap].T
    cov_osc = (a[:, ~is_ap] * v[~is_ap]) @ a[:, ~is_ap].T
    model = cov_ap + cov_osc + spec.noise_cov
    trace_ap, trace_osc = float(np.trace(cov_ap)), float(np.trace(cov_osc))
    return CovarianceReport(
        sigma_x_hat=sigma_hat.tolist(),
        sigma_x_model=model.tolist(),
        trace_ap=trace_ap,
        trace_osc=trace_osc,
        ratio_ap_osc=trace_ap / trace_osc if trace_osc > 0 else None,
        rel_frobenius_err=float(np.linalg.norm(sigma_hat - model) / np.linalg.norm(model)),
        n_pooled=int(n_pooled),
    )

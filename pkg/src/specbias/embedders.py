"""Embedders: log-PSD and band-power references, a masked-reconstruction
autoencoder, and import/export of externally produced embeddings."""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from . import artifacts
from .optim import AdamW, TrainConfig, cosine_lr
from .spectrum import EpochSet, stream, welch_psd

log = logging.getLogger(__name__)

LOG_FLOOR = 1e-12
DEFAULT_BANDS = ((1.0, 4.0), (4.0, 8.0), (8.0, 13.0), (13.0, 30.0), (30.0, 60.0))


@dataclass
class EmbeddingSet:
    data: np.ndarray
    embedder_id: str
    config_digest: str
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=float)
        if self.data.ndim != 2:
            raise ValueError(f"embeddings must be 2-D, got shape {self.data.shape}")
        bad = ~np.isfinite(self.data)
        if bad.any():
            raise ValueError(f"non-finite embedding in row {int(np.argwhere(bad)[0, 0])}")

    def __len__(self):
        return self.data.shape[0]


@dataclass(frozen=True)
class WelchParams:
    segment_len: int = 400
    overlap_frac: float = 0.5
    f_lo: float = 1.0
    f_hi: float = 90.0


def _single_channel(epochs: EpochSet):
    if epochs.n_channels != 1:
        raise ValueError("reference embedders expect single-channel epochs")


def embed_logpsd(epochs: EpochSet, welch: WelchParams = WelchParams()) -> EmbeddingSet:
    """log10 Welch PSD on the bins inside ``[f_lo, f_hi]`` Hz."""
    _single_channel(epochs)
    if welch.f_hi >= epochs.fs / 2:
        raise ValueError(
            f"fs={epochs.fs} Hz is too low for a band up to {welch.f_hi} Hz")
    spec = welch_psd(epochs.data, epochs.fs, welch.segment_len, welch.overlap_frac)
    sel = (spec.freqs >= welch.f_lo) & (spec.freqs <= welch.f_hi)
    if not sel.any():
        raise ValueError("no Welch bins inside the requested band")
    feats = np.log10(spec.powers[:, sel] + LOG_FLOOR)
    cfg = {"embedder": "logpsd", **asdict(welch), "fs": epochs.fs}
    return EmbeddingSet(feats, "logpsd", artifacts.digest(cfg),
                        {"freqs": spec.freqs[sel].tolist()})


def embed_bandpower(epochs: EpochSet, bands=DEFAULT_BANDS,
                    welch: WelchParams = WelchParams()) -> EmbeddingSet:
    """log10 of the mean Welch PSD within each (lo, hi) band, inclusive."""
    _single_channel(epochs)
    bands = [tuple(map(float, b)) for b in bands]
    for lo, hi in bands:
        if not 0 < lo < hi < epochs.fs / 2:
            raise ValueError(f"band ({lo}, {hi}) must lie inside (0, {epochs.fs / 2}) Hz")
    spec = welch_psd(epochs.data, epochs.fs, welch.segment_len, welch.overlap_frac)
    cols = []
    for lo, hi in bands:
        sel = (spec.freqs >= lo) & (spec.freqs <= hi)
        if not sel.any():
            raise ValueError(f"band ({lo}, {hi}) Hz contains no frequency bins")
        cols.append(np.log10(spec.powers[:, sel].mean(axis=1) + LOG_FLOOR))
    cfg = {"embedder": "bandpower", "bands": bands, **asdict(welch), "fs": epochs.fs}
    return EmbeddingSet(np.column_stack(cols), "bandpower", artifacts.digest(cfg))


# -- masked autoencoder -----------------------------------------------------

@dataclass(frozen=True)
class MaskConfig:
    patch_len: int = 50
    mask_frac: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.patch_len < 1:
            raise ValueError("patch_len must be >= 1")
        if not 0 < self.mask_frac < 1:
            raise ValueError(f"mask_frac must be in (0, 1), got {self.mask_frac}")


@dataclass(frozen=True)
class AEArch:
    """Encoder: Linear-GELU-Linear to the latent. Decoder: GELU-Linear-GELU-Linear.

    ``input_scaling`` is ``"global"`` (divide by one scalar, the training-set
    standard deviation), ``"row"`` (z-score every epoch) or ``"none"``. Row
    scaling discards absolute power and with it most aperiodic information.
    """

    hidden: int = 256
    latent: int = 32
    init_scale: float = 0.3
    input_scaling: str = "global"

    def __post_init__(self):
        if self.hidden < 1 or self.latent < 1:
            raise ValueError("hidden and latent sizes must be >= 1")
        if self.init_scale <= 0:
            raise ValueError("init_scale must be positive")
        if self.input_scaling not in ("global", "row", "none"):
            raise ValueError(f"unknown input_scaling {self.input_scaling!r}")


AE_TRAIN = TrainConfig(epochs=20, batch=64, lr=3e-3)


class TrainingDiverged(RuntimeError):
    def __init__(self, step):
        super().__init__(f"non-finite masked loss at step {step}")
        self.step = step


def sample_mask(rng: np.random.Generator, n: int, length: int, mask: MaskConfig) -> np.ndarray:
    """Keep-mask (1 = visible, 0 = masked); each patch is masked independently."""
    if length % mask.patch_len:
        raise ValueError(f"patch_len={mask.patch_len} does not divide L={length}")
    hidden = rng.random((n, length // mask.patch_len)) < mask.mask_frac
    return np.repeat(~hidden, mask.patch_len, axis=1).astype(float)


def standardize_rows(x: np.ndarray) -> np.ndarray:
    mu = x.mean(axis=1, keepdims=True)
    sd = x.std(axis=1, keepdims=True)
    sd[sd == 0] = 1.0
    return (x - mu) / sd


def init_params(length: int, arch: AEArch, rng: np.random.Generator) -> dict[str, np.ndarray]:
    sizes = [("enc1", length, arch.hidden), ("enc2", arch.hidden, arch.latent),
             ("dec1", arch.latent, arch.hidden), ("dec2", arch.hidden, length)]
    p = {}
    for name, n_in, n_out in sizes:
        p[f"{name}.w"] = rng.normal(0.0, arch.init_scale / np.sqrt(n_in), (n_in, n_out))
        p[f"{name}.b"] = np.zeros(n_out)
    return p


_GELU_C = np.sqrt(2.0 / np.pi)


def gelu(a: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """tanh-approximate GELU and its derivative."""
    t = np.tanh(_GELU_C * (a + 0.044715 * a ** 3))
    return 0.5 * a * (1 + t), 0.5 * (1 + t) + 0.5 * a * (1 - t * t) * _GELU_C * (1 + 3 * 0.044715 * a * a)


def encode(p, x):
    h, _ = gelu(x @ p["enc1.w"] + p["enc1.b"])
    return h @ p["enc2.w"] + p["enc2.b"]


def masked_loss_and_grads(p, x, keep, with_grads=True):
    """Mean squared reconstruction error over masked entries, and its gradients.

    Entries with ``keep == 1`` feed the encoder and are excluded from the loss.
    """
    xt = keep * x
    h1, dh1 = gelu(xt @ p["enc1.w"] + p["enc1.b"])
    z = h1 @ p["enc2.w"] + p["enc2.b"]
    gz, dgz = gelu(z)
    h2, dh2 = gelu(gz @ p["dec1.w"] + p["dec1.b"])
    out = h2 @ p["dec2.w"] + p["dec2.b"]
    hid = 1.0 - keep
    count = hid.sum()
    if count == 0:
        return (0.0, {k: np.zeros_like(v) for k, v in p.items()}) if with_grads else 0.0
    r = hid * (out - x)
    loss = float(np.sum(r * r) / count)
    if not with_grads:
        return loss
    g = {}
    d_out = 2.0 * r / count
    g["dec2.w"] = h2.T @ d_out
    g["dec2.b"] = d_out.sum(axis=0)
    d_a2 = (d_out @ p["dec2.w"].T) * dh2
    g["dec1.w"] = gz.T @ d_a2
    g["dec1.b"] = d_a2.sum(axis=0)
    d_z = (d_a2 @ p["dec1.w"].T) * dgz
    g["enc2.w"] = h1.T @ d_z
    g["enc2.b"] = d_z.sum(axis=0)
    d_a1 = (d_z @ p["enc2.w"].T) * dh1
    g["enc1.w"] = xt.T @ d_a1
    g["enc1.b"] = d_a1.sum(axis=0)
    return loss, g


@dataclass
class MaskedAEModel:
    params: dict[str, np.ndarray]
    arch: AEArch
    mask: MaskConfig
    train: TrainConfig
    input_len: int
    input_scale: float = 1.0
    train_log: list[float] = field(default_factory=list)

    def config(self) -> dict:
        return {"embedder": "masked_ae", "arch": asdict(self.arch), "mask": asdict(self.mask),
                "train": asdict(self.train), "input_len": self.input_len,
                "input_scale": self.input_scale}

    def prepare(self, x: np.ndarray) -> np.ndarray:
        if self.arch.input_scaling == "row":
            return standardize_rows(x)
        return np.asarray(x, dtype=float) / self.input_scale

    def save(self, path) -> None:
        with open(path, "wb") as f:
            np.savez(f, **self.params, _config=artifacts.canonical_json(
                {**self.config(), "train_log": self.train_log}))

    @classmethod
    def load(cls, path) -> "MaskedAEModel":
        with np.load(path) as f:
            cfg = json.loads(str(f["_config"]))
            params = {k: f[k].copy() for k in f.files if k != "_config"}
        train = {**cfg["train"], "betas": tuple(cfg["train"]["betas"])}
        return cls(params, AEArch(**cfg["arch"]), MaskConfig(**cfg["mask"]),
                   TrainConfig(**train), cfg["input_len"], cfg["input_scale"],
                   cfg["train_log"])


def train_masked_ae(epochs: EpochSet, mask: MaskConfig = MaskConfig(), arch: AEArch = AEArch(),
                    train: TrainConfig = AE_TRAIN) -> MaskedAEModel:
    """Fit encoder/decoder by minimizing the masked reconstruction loss.

    Masks are resampled for every example at every step. ``train_log`` holds the
    mean per-batch masked loss of each epoch.
    """
    raw = np.asarray(epochs.data, dtype=float)
    n, length = raw.shape
    if length % mask.patch_len:
        raise ValueError(f"patch_len={mask.patch_len} does not divide L={length}")
    if n < 10 * train.batch:
        raise ValueError(f"need at least {10 * train.batch} epochs for batch={train.batch}, got {n}")
    scale = 1.0
    if arch.input_scaling == "global":
        scale = float(raw.std())
        if not scale > 0:
            raise ValueError("training epochs are constant; cannot scale inputs")
    model = MaskedAEModel(init_params(length, arch, stream(train.seed, 0)), arch, mask, train,
                          length, scale)
    x = model.prepare(raw)
    params = model.params
    opt = AdamW(params, train.betas, train.eps, train.weight_decay)
    order_rng = stream(train.seed, 1)
    mask_rng = stream(mask.seed, 2)
    step = 0
    for ep in range(train.epochs):
        lr = cosine_lr(ep, train.epochs, train.lr, train.lr_min)
        perm = order_rng.permutation(n)
        total = 0.0
        batches = range(0, n, train.batch)
        for start in batches:
            idx = perm[start:start + train.batch]
            keep = sample_mask(mask_rng, len(idx), length, mask)
            loss, grads = masked_loss_and_grads(params, x[idx], keep)
            if not np.isfinite(loss):
                raise TrainingDiverged(step)
            opt.step(grads, lr)
            total += loss
            step += 1
        model.train_log.append(total / len(batches))
        log.debug("epoch %d lr %.2e masked loss %.5f", ep, lr, model.train_log[-1])
    return model


def embed_ae(model: MaskedAEModel, epochs: EpochSet) -> EmbeddingSet:
    """Latent code of the full, unmasked input."""
    if epochs.n_samples != model.input_len:
        raise ValueError(
            f"epoch length {epochs.n_samples} does not match model input {model.input_len}")
    z = encode(model.params, model.prepare(epochs.data))
    return EmbeddingSet(z, "masked_ae", artifacts.digest(model.config()),
                        {"latent_bias": model.params["enc2.b"].tolist()})


# -- file import/export -------------------------------------------------------

def export_embeddings(emb: EmbeddingSet, path):
    n, d = emb.data.shape
    return artifacts.write_matrix(path, emb.data, "embeddings", "emb", {
        "n": n, "d": d, "embedder_id": emb.embedder_id, "config_digest": emb.config_digest})


def import_embeddings(path) -> EmbeddingSet:
    data, manifest = artifacts.read_matrix(path, "emb", "embeddings")
    n, d = manifest.get("n", data.shape[0]), manifest.get("d", data.shape[1])
    if (n, d) != data.shape:
        raise artifacts.ArtifactError(
            f"manifest n={n}, d={d} disagrees with shape {list(manifest['shape'])}")
    return EmbeddingSet(data, manifest["embedder_id"], manifest["config_digest"])

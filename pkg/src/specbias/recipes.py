"""End-to-end pipelines driven by one JSON config and one seed.

``sweep_decode``: sweep -> embed -> decode, one decodability result per sweep.
``subject_task``: corpus -> train-ae -> embed -> probe battery -> geometry.

Every stage seed is derived from the recipe seed, so a rerun with the same
config and seed writes byte-identical reports.
"""

from __future__ import annotations

import dataclasses
import logging
import zlib
from pathlib import Path

import numpy as np

from . import artifacts
from .corpus import CorpusConfig, PretrainConfig, make_pretrain_corpus, make_subject_task_corpus
from .decode import CVConfig, linear_decodability
from .embedders import (
    AE_TRAIN, AEArch, MaskConfig, MaskedAEModel, WelchParams, embed_ae, embed_bandpower,
    embed_logpsd, train_masked_ae,
)
from .geometry import centroids, cluster_distances, pca2d, pca_csv
from .optim import TrainConfig
from .probe import LabelSet, ProbeTrainConfig, confusion_csv, split_csv, subject_task_battery
from .spectrum import EpochSet, SignalConfig, SpectralParams, SweepSpec, sweep

log = logging.getLogger(__name__)


def child_seed(seed: int, name: str) -> int:
    """Deterministic sub-seed for a named stage."""
    ss = np.random.SeedSequence(int(seed), spawn_key=(zlib.crc32(name.encode()),))
    return int(ss.generate_state(1)[0])


def _pick(cls, d: dict | None, **override):
    """Build a dataclass from a dict, rejecting unknown keys."""
    d = dict(d or {})
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(d) - names)
    if unknown:
        raise ValueError(f"unknown {cls.__name__} field(s): {unknown}")
    for key in ("betas", "lrs", "lambda_grid"):
        if key in d and isinstance(d[key], list):
            d[key] = tuple(d[key])
    d.update(override)
    return cls(**d)


def signal_config(d: dict | None, seed: int) -> SignalConfig:
    return _pick(SignalConfig, {k: v for k, v in (d or {}).items() if k != "seed"}, seed=seed)


def sweep_spec(d: dict, seed: int) -> SweepSpec:
    d = dict(d)
    d.pop("name", None)
    base = SpectralParams.from_dict(d.pop("base")) if "base" in d else SpectralParams()
    sig = d.pop("signal", d.pop("config", None))
    return _pick(SweepSpec, d, base=base, config=signal_config(sig, seed))


# -- embedders ---------------------------------------------------------------

@dataclasses.dataclass
class Embedder:
    kind: str
    welch: WelchParams = WelchParams()
    bands: tuple | None = None
    model: MaskedAEModel | None = None

    def __call__(self, epochs: EpochSet):
        if self.kind == "logpsd":
            return embed_logpsd(epochs, self.welch)
        if self.kind == "bandpower":
            return embed_bandpower(epochs, self.bands, self.welch) if self.bands \
                else embed_bandpower(epochs, welch=self.welch)
        return embed_ae(self.model, epochs)


def ae_configs(d: dict, seed: int) -> tuple[PretrainConfig, MaskConfig, AEArch, TrainConfig]:
    pre = dict(d.get("pretrain") or {})
    sig = signal_config(pre.pop("signal", None), child_seed(seed, "pretrain"))
    pretrain = _pick(PretrainConfig, pre, signal=sig)
    mask = _pick(MaskConfig, d.get("mask"), seed=child_seed(seed, "mask"))
    arch = _pick(AEArch, d.get("arch"))
    train = _pick(TrainConfig, {**dataclasses.asdict(AE_TRAIN), **(d.get("train") or {})},
                  seed=child_seed(seed, "train"))
    return pretrain, mask, arch, train


def build_embedder(d: dict, seed: int) -> tuple[Embedder, dict]:
    """Instantiate (and for the AE, train) the embedder described by ``d``."""
    d = dict(d or {"kind": "logpsd"})
    kind = d.get("kind", "logpsd")
    welch = _pick(WelchParams, d.get("welch"))
    if kind == "logpsd":
        return Embedder(kind, welch), {}
    if kind == "bandpower":
        bands = tuple(tuple(b) for b in d["bands"]) if "bands" in d else None
        return Embedder(kind, welch, bands), {}
    if kind != "masked_ae":
        raise ValueError(f"unknown embedder kind {kind!r}")
    pretrain, mask, arch, train = ae_configs(d, seed)
    log.info("pretraining corpus: %d epochs", pretrain.n_epochs)
    corpus = make_pretrain_corpus(pretrain)
    model = train_masked_ae(corpus, mask, arch, train)
    info = {"pretrain": pretrain.to_dict(), "train_log": model.train_log,
            "input_scale": model.input_scale}
    return Embedder(kind, model=model), info


# -- recipes -----------------------------------------------------------------

def decode_csv(y, yhat) -> str:
    return "y,y_hat\n" + "".join(f"{a:.17g},{b:.17g}\n" for a, b in zip(y, yhat))


def run_sweep_decode(cfg: dict, seed: int, out_dir: Path) -> dict:
    if not cfg.get("sweeps"):
        raise ValueError("sweep_decode recipe needs a non-empty 'sweeps' list")
    names = [s.get("name", s.get("param_name")) for s in cfg["sweeps"]]
    if len(set(names)) != len(names):
        raise ValueError(f"sweep names must be unique, got {names}")
    specs = [sweep_spec(s, child_seed(seed, f"sweep:{n}")) for s, n in zip(cfg["sweeps"], names)]
    cv = _pick(CVConfig, cfg.get("cv"), shuffle_seed=child_seed(seed, "cv"))
    embedder, emb_info = build_embedder(cfg.get("embedder"), seed)
    if embedder.model is not None:
        embedder.model.save(out_dir / "model.npz")
    results = {}
    for name, spec in zip(names, specs):
        epochs, theta = sweep(spec)
        emb = embedder(epochs)
        rep = linear_decodability(emb, theta, cv, target_name=spec.param_name)
        artifacts.atomic_write(out_dir / f"decode_{name}.csv", decode_csv(rep.targets, rep.predictions))
        results[name] = {
            "param_name": spec.param_name,
            "theta_range": [spec.theta_min, spec.theta_max],
            "n_samples": spec.n_samples,
            "r2_pooled": rep.r2_pooled,
            "r2_per_fold": rep.r2_per_fold,
            "chosen_lambdas": rep.chosen_lambdas,
            "embedding_digest": emb.config_digest,
        }
        log.info("%s: R^2 = %.3f", name, rep.r2_pooled)
    return {"embedder": {"kind": embedder.kind, **emb_info}, "decodability": results}


def run_subject_task(cfg: dict, seed: int, out_dir: Path) -> dict:
    corpus_d = dict(cfg.get("corpus") or {})
    sig = signal_config(corpus_d.pop("signal", None), child_seed(seed, "corpus"))
    ccfg = _pick(CorpusConfig, corpus_d, signal=sig)
    probe_cfg = _pick(ProbeTrainConfig, cfg.get("probe"), seed=child_seed(seed, "probe"))
    corpus = make_subject_task_corpus(config=ccfg)
    embedder, emb_info = build_embedder(cfg.get("embedder"), seed)
    if embedder.model is not None:
        embedder.model.save(out_dir / "model.npz")
    emb = embedder(corpus.epochs)
    subjects = LabelSet(corpus.subjects, corpus.subject_names, "subject")
    tasks = LabelSet(corpus.tasks, corpus.task_names, "task")
    split = (corpus.train, corpus.test)
    battery = subject_task_battery(emb, subjects, tasks, split, probe_cfg)
    s_ids = [corpus.subject_names[i] for i in corpus.subjects]
    t_ids = [corpus.task_names[i] for i in corpus.tasks]
    geometry = cluster_distances(centroids(emb, s_ids, t_ids))
    artifacts.atomic_write(out_dir / "split.csv", split_csv(*split))
    artifacts.atomic_write(out_dir / "confusion_task.csv", confusion_csv(battery.task))
    artifacts.atomic_write(out_dir / "confusion_subject.csv", confusion_csv(battery.subject))
    artifacts.atomic_write(out_dir / "pca.csv", pca_csv(pca2d(emb), s_ids, t_ids))
    log.info("kappa subject %.3f task %.3f", battery.subject.kappa_mean, battery.task.kappa_mean)
    return {"embedder": {"kind": embedder.kind, **emb_info}, "corpus": ccfg.to_dict(),
            "battery": battery.to_dict(), "geometry": geometry.to_dict()}


RECIPES = {"sweep_decode": run_sweep_decode, "subject_task": run_subject_task}


def run_recipe(cfg: dict, out_dir, seed: int | None = None) -> dict:
    """Run the named pipeline, write ``report.json`` to ``out_dir`` and return it."""
    kind = cfg.get("recipe")
    if kind not in RECIPES:
        raise ValueError(f"recipe must be one of {sorted(RECIPES)}, got {kind!r}")
    seed = int(cfg.get("seed", 0) if seed is None else seed)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    body = RECIPES[kind](cfg, seed, out_dir)
    report = {"recipe": kind, "seed": seed, "config": cfg, "config_digest": artifacts.digest(cfg),
              **body}
    report["digest"] = artifacts.digest(report)
    artifacts.emit_report(report, out_dir / "report.json")
    return report

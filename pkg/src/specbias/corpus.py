"""Synthetic corpora: a subject x task design and a mixed pretraining set.

Subjects fix the aperiodic background (beta, A_ap); tasks fix one oscillatory
peak. Each epoch is an independent random-phase draw.
"""

from __future__ import annotations

import warnings
from dataclasses import asdict, dataclass, field

import numpy as np

from .spectrum import EpochMeta, EpochSet, Peak, SignalConfig, SpectralParams, stream, synthesize

# Per-subject (beta, A_ap) and per-task (f_osc, A_osc); version 1. Steeper
# subjects get a lower offset, so subjects differ in both slope and level.
SUBJECT_TABLE = ((1.1, 2.5), (1.3, 2.0), (1.5, 1.5), (1.7, 1.0), (1.9, 0.5))
TASK_TABLE = ((20.0, 1.0), (20.0, 2.0))
TABLE_VERSION = 1


@dataclass(frozen=True)
class CorpusConfig:
    subjects: tuple[tuple[float, float], ...] = SUBJECT_TABLE
    tasks: tuple[tuple[float, float], ...] = TASK_TABLE
    trials_per_cell: int = 40
    width: float = 2.0
    train_frac: float = 0.8
    compose: str = "logpower"
    signal: SignalConfig = field(default_factory=SignalConfig)
    version: int = TABLE_VERSION

    def __post_init__(self):
        object.__setattr__(self, "subjects", tuple(tuple(map(float, s)) for s in self.subjects))
        object.__setattr__(self, "tasks", tuple(tuple(map(float, t)) for t in self.tasks))
        if len(self.subjects) < 2:
            raise ValueError(
                f"need at least 2 subjects, got {len(self.subjects)}; the subject probe is degenerate")
        if len(self.tasks) < 2:
            raise ValueError(f"need at least 2 tasks, got {len(self.tasks)}")
        if self.trials_per_cell < 2:
            raise ValueError("trials_per_cell must be >= 2")
        if not 0 < self.train_frac < 1:
            raise ValueError("train_frac must be in (0, 1)")
        for what, table in (("subjects", self.subjects), ("tasks", self.tasks)):
            if len(set(table)) < len(table):
                warnings.warn(f"two {what} share identical parameters", stacklevel=3)

    def params(self, s: int, t: int) -> SpectralParams:
        beta, ap = self.subjects[s]
        f, a = self.tasks[t]
        return SpectralParams(beta=beta, ap_offset=ap, peaks=(Peak(f, a, self.width),))

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "CorpusConfig":
        d = dict(d)
        if "signal" in d:
            d["signal"] = SignalConfig(**d["signal"])
        return cls(**d)


@dataclass
class SubjectTaskCorpus:
    epochs: EpochSet
    subjects: np.ndarray
    tasks: np.ndarray
    train: np.ndarray
    test: np.ndarray
    subject_names: list[str]
    task_names: list[str]


def make_subject_task_corpus(n_subjects: int | None = None, n_tasks: int | None = None,
                             trials_per_cell: int | None = None,
                             config: CorpusConfig = CorpusConfig()) -> SubjectTaskCorpus:
    """Cells are ordered subject-major, then task, then trial.

    ``n_subjects`` / ``n_tasks`` take the leading rows of the parameter tables.
    The first ``train_frac`` of each cell's trials go to the train split.
    """
    subjects = config.subjects[:n_subjects] if n_subjects is not None else config.subjects
    tasks = config.tasks[:n_tasks] if n_tasks is not None else config.tasks
    if n_subjects is not None and n_subjects > len(config.subjects):
        raise ValueError(f"only {len(config.subjects)} subjects are defined")
    if n_tasks is not None and n_tasks > len(config.tasks):
        raise ValueError(f"only {len(config.tasks)} tasks are defined")
    config = CorpusConfig(subjects, tasks, trials_per_cell or config.trials_per_cell, config.width,
                          config.train_frac, config.compose, config.signal, config.version)
    cfg, n_tr = config.signal, config.trials_per_cell
    n_train = int(round(config.train_frac * n_tr))
    if not 0 < n_train < n_tr:
        raise ValueError(f"train_frac={config.train_frac} leaves an empty split")
    s_names = [f"S{i + 1}" for i in range(len(subjects))]
    t_names = [f"T{j + 1}" for j in range(len(tasks))]
    rows, meta, s_lab, t_lab, is_train = [], [], [], [], []
    for s in range(len(subjects)):
        for t in range(len(tasks)):
            params = config.params(s, t)
            for k in range(n_tr):
                rows.append(synthesize(params, cfg, stream(cfg.seed, s, t, k), compose=config.compose))
                meta.append(EpochMeta(subject_id=s_names[s], task_id=t_names[t], seed_used=cfg.seed))
                s_lab.append(s)
                t_lab.append(t)
                is_train.append(k < n_train)
    is_train = np.array(is_train)
    return SubjectTaskCorpus(
        EpochSet(np.array(rows), cfg.fs, meta), np.array(s_lab), np.array(t_lab),
        np.flatnonzero(is_train), np.flatnonzero(~is_train), s_names, t_names)


@dataclass(frozen=True)
class PretrainConfig:
    """Mixed corpus: beta, A_ap, f_osc and A_osc drawn uniformly per epoch."""

    n_epochs: int = 8000
    beta: tuple[float, float] = (1.0, 2.0)
    ap_offset: tuple[float, float] = (0.1, 3.0)
    f_osc: tuple[float, float] = (1.0, 60.0)
    a_osc: tuple[float, float] = (0.1, 1.0)
    width: float = 2.0
    compose: str = "logpower"
    signal: SignalConfig = field(default_factory=lambda: SignalConfig(seed=7))

    def __post_init__(self):
        for name in ("beta", "ap_offset", "f_osc", "a_osc"):
            lo, hi = getattr(self, name)
            if not lo <= hi:
                raise ValueError(f"{name} range must satisfy lo <= hi, got ({lo}, {hi})")
            object.__setattr__(self, name, (float(lo), float(hi)))
        if self.n_epochs < 1:
            raise ValueError("n_epochs must be >= 1")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "PretrainConfig":
        d = dict(d)
        if "signal" in d:
            d["signal"] = SignalConfig(**d["signal"])
        return cls(**d)


def make_pretrain_corpus(config: PretrainConfig = PretrainConfig()) -> EpochSet:
    cfg = config.signal
    draw = stream(cfg.seed, 0)
    rows = []
    for i in range(config.n_epochs):
        params = SpectralParams(
            beta=draw.uniform(*config.beta), ap_offset=draw.uniform(*config.ap_offset),
            peaks=(Peak(draw.uniform(*config.f_osc), draw.uniform(*config.a_osc), config.width),),
            f_min=1.0, f_max=60.0)
        rows.append(synthesize(params, cfg, stream(cfg.seed, 1, i), compose=config.compose))
    return EpochSet(np.array(rows), cfg.fs, [EpochMeta(seed_used=cfg.seed)] * config.n_epochs)

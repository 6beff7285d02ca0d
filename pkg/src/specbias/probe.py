"""Linear classification probes on frozen embeddings, scored by Cohen's kappa."""

from __future__ import annotations

import dataclasses
import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from .optim import AdamW, cosine_lr
from .spectrum import stream

log = logging.getLogger(__name__)

PROBE_LRS = (1e-2, 1e-3, 5e-4)


@dataclass
class LabelSet:
    labels: np.ndarray
    label_names: list[str]
    kind: str = "task"

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=int)
        k = len(self.label_names)
        if self.kind not in ("task", "subject"):
            raise ValueError(f"kind must be 'task' or 'subject', got {self.kind!r}")
        if self.labels.ndim != 1 or self.labels.min(initial=0) < 0 or self.labels.max(initial=0) >= k:
            raise ValueError(f"labels must be integers in [0, {k})")
        missing = sorted(set(range(k)) - set(self.labels.tolist()))
        if missing:
            raise ValueError(f"classes never observed: {[self.label_names[i] for i in missing]}")

    @property
    def n_classes(self) -> int:
        return len(self.label_names)

    @classmethod
    def from_values(cls, values, kind="task") -> "LabelSet":
        names = sorted({str(v) for v in values})
        index = {n: i for i, n in enumerate(names)}
        return cls(np.array([index[str(v)] for v in values]), names, kind)


@dataclass(frozen=True)
class ProbeTrainConfig:
    epochs: int = 31
    batch: int = 64
    lrs: tuple[float, ...] = PROBE_LRS
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    weight_decay: float = 1e-2
    lr_min: float = 1e-5
    seed: int = 0
    n_seeds: int = 5
    holdout_frac: float = 0.1
    standardize: bool = False

    def __post_init__(self):
        object.__setattr__(self, "lrs", tuple(float(v) for v in self.lrs))
        object.__setattr__(self, "betas", tuple(float(v) for v in self.betas))
        if not self.lrs or min(self.lrs) <= self.lr_min or self.lr_min <= 0:
            raise ValueError("every candidate lr must exceed lr_min > 0")
        if not all(0 < b < 1 for b in self.betas):
            raise ValueError("betas must lie in (0, 1)")
        if self.epochs < 1 or self.batch < 1 or self.n_seeds < 1:
            raise ValueError("epochs, batch and n_seeds must be >= 1")
        if not 0 < self.holdout_frac < 1:
            raise ValueError("holdout_frac must be in (0, 1)")


@dataclass
class ProbeReport:
    kind: str
    kappa_mean: float
    kappa_std: float
    per_run_kappa: list[float]
    accuracy: float
    confusion: list[list[int]]
    chosen_lrs: list[float]
    label_names: list[str]
    degenerate_kappa: bool = False

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class LinearProbe:
    weight: np.ndarray
    bias: np.ndarray
    mean: np.ndarray | None = None
    scale: np.ndarray | None = None
    loss_log: list[float] = field(default_factory=list)

    def _prep(self, x):
        x = np.asarray(x, dtype=float)
        if self.mean is not None:
            x = (x - self.mean) / self.scale
        return x

    def logits(self, x):
        return self._prep(x) @ self.weight + self.bias

    def predict(self, x):
        return np.argmax(self.logits(x), axis=1)


def confusion_matrix(pred, truth, n_classes: int | None = None) -> np.ndarray:
    pred = np.asarray(pred, dtype=int)
    truth = np.asarray(truth, dtype=int)
    if pred.shape != truth.shape:
        raise ValueError("pred and truth lengths differ")
    k = n_classes or int(max(pred.max(initial=0), truth.max(initial=0)) + 1)
    cm = np.zeros((k, k), dtype=np.int64)
    np.add.at(cm, (truth, pred), 1)
    return cm


def kappa_from_confusion(cm) -> tuple[float, bool]:
    """Cohen's kappa and a flag set when chance agreement is 1 (kappa then 0)."""
    cm = np.asarray(cm, dtype=float)
    n = cm.sum()
    if n == 0:
        raise ValueError("empty confusion matrix")
    p_o = np.trace(cm) / n
    p_e = float(np.sum(cm.sum(axis=1) * cm.sum(axis=0)) / n ** 2)
    if np.isclose(p_e, 1.0, rtol=0, atol=1e-15):
        return 0.0, True
    return float((p_o - p_e) / (1.0 - p_e)), False


def cohens_kappa(pred, truth) -> float:
    """kappa = (p_o - p_e) / (1 - p_e). Returns 0 when p_e == 1."""
    k, degenerate = kappa_from_confusion(confusion_matrix(pred, truth))
    if degenerate:
        log.warning("chance agreement is 1 (single class on both sides); kappa set to 0")
    return k


def _softmax_xent(logits, y):
    z = logits - logits.max(axis=1, keepdims=True)
    p = np.exp(z)
    p /= p.sum(axis=1, keepdims=True)
    n = len(y)
    loss = -np.mean(np.log(p[np.arange(n), y] + 1e-300))
    p[np.arange(n), y] -= 1.0
    return loss, p / n


def fit_probe(x, y, n_classes, lr, cfg: ProbeTrainConfig, seed: int) -> LinearProbe:
    """Softmax regression d -> K with AdamW and a per-epoch cosine learning rate."""
    x = np.asarray(x, dtype=float)
    mean = scale = None
    if cfg.standardize:
        mean = x.mean(axis=0)
        scale = x.std(axis=0)
        scale[scale == 0] = 1.0
        x = (x - mean) / scale
    d = x.shape[1]
    rng = stream(seed, 0)
    bound = 1.0 / np.sqrt(d)
    params = {"w": rng.uniform(-bound, bound, (d, n_classes)),
              "b": rng.uniform(-bound, bound, n_classes)}
    opt = AdamW(params, cfg.betas, cfg.eps, cfg.weight_decay)
    order = stream(seed, 1)
    losses = []
    for ep in range(cfg.epochs):
        step_lr = cosine_lr(ep, cfg.epochs, lr, cfg.lr_min)
        perm = order.permutation(len(y))
        total = 0.0
        for start in range(0, len(y), cfg.batch):
            idx = perm[start:start + cfg.batch]
            loss, dlogits = _softmax_xent(x[idx] @ params["w"] + params["b"], y[idx])
            opt.step({"w": x[idx].T @ dlogits, "b": dlogits.sum(axis=0)}, step_lr)
            total += loss * len(idx)
        losses.append(total / len(y))
    return LinearProbe(params["w"], params["b"], mean, scale, losses)


def _holdout(train_idx, labels, frac, rng):
    """Stratified holdout: about ``frac`` of each class, leaving at least one to train on."""
    val = []
    for c in np.unique(labels[train_idx]):
        members = train_idx[labels[train_idx] == c]
        k = min(len(members) - 1, int(round(frac * len(members))))
        if k > 0:
            val.extend(rng.choice(members, k, replace=False).tolist())
    val = np.sort(np.array(val, dtype=int))
    return np.setdiff1d(train_idx, val), val


def _check_split(labels: LabelSet, train, test):
    train = np.asarray(train, dtype=int)
    test = np.asarray(test, dtype=int)
    if np.intersect1d(train, test).size:
        raise ValueError("train and test splits overlap")
    absent = sorted(set(range(labels.n_classes)) - set(labels.labels[train].tolist()))
    if absent:
        names = [labels.label_names[i] for i in absent]
        raise ValueError(f"class(es) {names} absent from the train split")
    return train, test


def train_linear_probe(emb, labels: LabelSet, split, cfg: ProbeTrainConfig = ProbeTrainConfig()
                       ) -> tuple[list[LinearProbe], ProbeReport]:
    """Train ``cfg.n_seeds`` probes and report kappa on the test split.

    For each seed the learning rate is chosen among ``cfg.lrs`` by kappa on a
    stratified holdout of the train split, then the probe is refit on the full
    train split with that rate.
    """
    x = np.asarray(getattr(emb, "data", emb), dtype=float)
    if x.shape[0] != len(labels.labels):
        raise ValueError(f"{x.shape[0]} embeddings but {len(labels.labels)} labels")
    train, test = _check_split(labels, *split)
    y = labels.labels
    k = labels.n_classes
    probes, kappas, lrs = [], [], []
    cm_total = np.zeros((k, k), dtype=np.int64)
    degenerate = False
    for r in range(cfg.n_seeds):
        seed = cfg.seed + r
        fit_idx, val_idx = _holdout(train, y, cfg.holdout_frac, stream(seed, 7))
        best_lr = cfg.lrs[0]
        if len(cfg.lrs) > 1 and len(val_idx):
            scores = []
            for lr in cfg.lrs:
                probe = fit_probe(x[fit_idx], y[fit_idx], k, lr, cfg, seed)
                scores.append(kappa_from_confusion(
                    confusion_matrix(probe.predict(x[val_idx]), y[val_idx], k))[0])
            # first best wins, i.e. the larger rate on ties
            best_lr = cfg.lrs[int(np.argmax(scores))]
        probe = fit_probe(x[train], y[train], k, best_lr, cfg, seed)
        cm = confusion_matrix(probe.predict(x[test]), y[test], k)
        kap, flag = kappa_from_confusion(cm)
        degenerate |= flag
        probes.append(probe)
        kappas.append(kap)
        lrs.append(best_lr)
        cm_total += cm
    # confusion of the first run; sums to the test-set size
    cm0 = confusion_matrix(probes[0].predict(x[test]), y[test], k)
    report = ProbeReport(
        kind=labels.kind,
        kappa_mean=float(np.mean(kappas)),
        kappa_std=float(np.std(kappas)),
        per_run_kappa=[float(v) for v in kappas],
        accuracy=float(np.trace(cm_total) / cm_total.sum()),
        confusion=cm0.tolist(),
        chosen_lrs=lrs,
        label_names=list(labels.label_names),
        degenerate_kappa=degenerate,
    )
    return probes, report


@dataclass
class BatteryReport:
    task: ProbeReport
    subject: ProbeReport

    @property
    def gap(self) -> float:
        return self.subject.kappa_mean - self.task.kappa_mean

    def to_dict(self) -> dict:
        return {"task": self.task.to_dict(), "subject": self.subject.to_dict(),
                "kappa_gap_subject_minus_task": self.gap}


def subject_task_battery(emb, subjects: LabelSet, tasks: LabelSet, split,
                         cfg: ProbeTrainConfig = ProbeTrainConfig()) -> BatteryReport:
    """Task and subject probes trained and tested on one shared split."""
    if subjects.kind != "subject" or tasks.kind != "task":
        raise ValueError("expected a subject LabelSet and a task LabelSet")
    if subjects.n_classes < 2:
        raise ValueError("subject probe needs at least 2 subjects")
    split = tuple(np.asarray(s, dtype=int).copy() for s in split)
    _, task_rep = train_linear_probe(emb, tasks, split, cfg)
    _, subj_rep = train_linear_probe(emb, subjects, split, cfg)
    return BatteryReport(task_rep, subj_rep)


def read_split_csv(path, n: int | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Rows of ``epoch_index,split`` with split in {train, test}; header optional."""
    train, test = [], []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.lower().startswith("epoch_index"):
                continue
            idx, which = (s.strip() for s in line.split(","))
            i = int(idx)
            if n is not None and not 0 <= i < n:
                raise ValueError(f"{path}:{lineno}: epoch index {i} out of range")
            if which == "train":
                train.append(i)
            elif which == "test":
                test.append(i)
            else:
                raise ValueError(f"{path}:{lineno}: split must be train or test, got {which!r}")
    return np.array(train, dtype=int), np.array(test, dtype=int)


def split_csv(train, test) -> str:
    rows = [(int(i), "train") for i in train] + [(int(i), "test") for i in test]
    return "epoch_index,split\n" + "".join(f"{i},{s}\n" for i, s in sorted(rows))


def confusion_csv(report: ProbeReport) -> str:
    names = report.label_names
    lines = ["truth\\pred," + ",".join(names)]
    for name, row in zip(names, report.confusion):
        lines.append(name + "," + ",".join(str(v) for v in row))
    return "\n".join(lines) + "\n"


def with_seed(cfg: ProbeTrainConfig, seed: int) -> ProbeTrainConfig:
    return dataclasses.replace(cfg, seed=seed)

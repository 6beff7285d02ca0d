"""Linear decodability: ridge regression under nested cross-validation."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .spectrum import stream


def _default_grid() -> tuple[float, ...]:
    return tuple(float(v) for v in np.logspace(-6, 3, 10))


@dataclass(frozen=True)
class CVConfig:
    outer_folds: int = 5
    inner_folds: int = 5
    lambda_grid: tuple[float, ...] = field(default_factory=_default_grid)
    shuffle_seed: int = 0
    standardize: bool = True

    def __post_init__(self):
        object.__setattr__(self, "lambda_grid", tuple(float(v) for v in self.lambda_grid))
        if self.outer_folds < 2 or self.inner_folds < 2:
            raise ValueError("outer_folds and inner_folds must be >= 2")
        if not self.lambda_grid or min(self.lambda_grid) <= 0:
            raise ValueError("lambda_grid must be non-empty and strictly positive")


@dataclass
class DecodabilityReport:
    target_name: str
    r2_pooled: float
    r2_per_fold: list[float | None]
    chosen_lambdas: list[float]
    predictions: list[float]
    targets: list[float]

    def to_dict(self) -> dict:
        return asdict(self)


def _check_finite(name, a):
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name} contains non-finite values")


def ridge_fit(X: np.ndarray, y: np.ndarray, lam: float) -> tuple[np.ndarray, float]:
    """Minimize ||y - Xw - b||^2 + lam ||w||^2 with an unpenalized intercept.

    Solved by SVD of the centered design, never forming X^T X.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.ndim != 2 or y.shape != (X.shape[0],):
        raise ValueError(f"shape mismatch: X {X.shape}, y {y.shape}")
    if X.shape[0] < 2:
        raise ValueError("ridge_fit needs at least 2 samples")
    if not lam > 0:
        raise ValueError(f"lambda must be > 0, got {lam}")
    _check_finite("X", X)
    _check_finite("y", y)
    return _RidgePath(X, y).solve(lam)


class _RidgePath:
    """Centered SVD reused across a lambda grid."""

    def __init__(self, X, y):
        self.x_mean = X.mean(axis=0)
        self.y_mean = y.mean()
        u, self.s, vt = np.linalg.svd(X - self.x_mean, full_matrices=False)
        self.v = vt.T
        self.uty = u.T @ (y - self.y_mean)

    def solve(self, lam):
        w = self.v @ (self.s / (self.s ** 2 + lam) * self.uty)
        return w, float(self.y_mean - self.x_mean @ w)


def _standardizer(X):
    mu = X.mean(axis=0)
    sd = X.std(axis=0)
    sd[sd == 0] = 1.0
    return mu, sd


def r2_score(y, yhat) -> float:
    y = np.asarray(y, dtype=float)
    ss_tot = np.sum((y - y.mean()) ** 2)
    if ss_tot == 0:
        raise ValueError("R^2 undefined: targets are constant")
    return float(1.0 - np.sum((y - np.asarray(yhat)) ** 2) / ss_tot)


def kfold(n: int, k: int) -> list[np.ndarray]:
    if k > n:
        raise ValueError(f"cannot split {n} samples into {k} folds")
    return np.array_split(np.arange(n), k)


def _select_lambda(X, y, cv: CVConfig) -> float:
    folds = kfold(len(y), cv.inner_folds)
    mse = np.zeros(len(cv.lambda_grid))
    for val in folds:
        tr = np.setdiff1d(np.arange(len(y)), val)
        Xtr, Xva = X[tr], X[val]
        if cv.standardize:
            mu, sd = _standardizer(Xtr)
            Xtr, Xva = (Xtr - mu) / sd, (Xva - mu) / sd
        path = _RidgePath(Xtr, y[tr])
        for j, lam in enumerate(cv.lambda_grid):
            w, b = path.solve(lam)
            mse[j] += np.mean((y[val] - Xva @ w - b) ** 2)
    grid = np.asarray(cv.lambda_grid)
    best = mse / len(folds)
    # ties resolve to the smaller lambda
    cands = np.flatnonzero(best == best.min())
    return float(grid[cands].min())


def fit_predict(Xtr, ytr, Xte, lam, standardize=True):
    if standardize:
        mu, sd = _standardizer(Xtr)
        Xtr, Xte = (Xtr - mu) / sd, (Xte - mu) / sd
    w, b = _RidgePath(Xtr, ytr).solve(lam)
    return Xte @ w + b


def outer_folds(n: int, cv: CVConfig) -> list[np.ndarray]:
    perm = stream(cv.shuffle_seed, 0).permutation(n)
    return [np.sort(perm[f]) for f in kfold(n, cv.outer_folds)]


def linear_decodability(emb, targets, cv: CVConfig = CVConfig(),
                        target_name: str = "target") -> DecodabilityReport:
    """Out-of-fold R^2 of ridge regression from embeddings to ``targets``.

    Outer folds partition a seeded permutation of the samples. Within each outer
    training split an inner K-fold picks lambda by mean validation MSE; the
    model is refit on the whole outer training split and scored on its test
    split. Standardization statistics always come from the training side only.
    """
    X = np.asarray(getattr(emb, "data", emb), dtype=float)
    y = np.asarray(targets, dtype=float)
    if X.ndim != 2 or y.shape != (X.shape[0],):
        raise ValueError(f"need {X.shape[0]} targets for {X.shape[0]} embeddings, got {y.shape}")
    _check_finite("embeddings", X)
    _check_finite("targets", y)
    if np.ptp(y) == 0:
        raise ValueError("R^2 undefined: targets are constant")

    pred = np.empty_like(y)
    lambdas, per_fold = [], []
    for test in outer_folds(len(y), cv):
        train = np.setdiff1d(np.arange(len(y)), test)
        lam = _select_lambda(X[train], y[train], cv)
        pred[test] = fit_predict(X[train], y[train], X[test], lam, cv.standardize)
        lambdas.append(lam)
        per_fold.append(r2_score(y[test], pred[test]) if np.ptp(y[test]) > 0 else None)
    return DecodabilityReport(
        target_name=target_name,
        r2_pooled=r2_score(y, pred),
        r2_per_fold=per_fold,
        chosen_lambdas=lambdas,
        predictions=pred.tolist(),
        targets=y.tolist(),
    )

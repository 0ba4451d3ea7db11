"""Feature assembly, class balancing, calibrated SVM training and grid search."""

from __future__ import annotations

import itertools
import json
import logging
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .evaluation import average_precision
from .role_lm import HCP, PAT
from .svm import SvmModel, _check_xy, fit_sigmoid, sq_distances, train_from_kernel, train_svm

logger = logging.getLogger(__name__)

BLOCK_ORDER = ("embed", "liwc", "empath", "cepstrum", "prosody")
BLOCK_DIMS = {"embed": 100, "liwc": 66, "empath": 194, "cepstrum": 84, "prosody": 28}
MODEL_VERSION = 1


@dataclass(frozen=True)
class FeatureCombo:
    blocks: tuple[str, ...]

    def __post_init__(self):
        blocks = tuple(b for b in BLOCK_ORDER if b in set(self.blocks))
        unknown = set(self.blocks) - set(BLOCK_ORDER)
        if unknown:
            raise ValueError(f"unknown feature blocks: {sorted(unknown)}")
        if not blocks:
            raise ValueError("a feature combination needs at least one block")
        object.__setattr__(self, "blocks", blocks)

    @classmethod
    def parse(cls, value) -> "FeatureCombo":
        if isinstance(value, FeatureCombo):
            return value
        if isinstance(value, str):
            value = [s.strip() for s in value.replace(",", "+").split("+") if s.strip()]
        return cls(tuple(value))

    def dimension(self, dims: Mapping[str, int] = BLOCK_DIMS) -> int:
        return 2 * sum(dims[b] for b in self.blocks)

    def __str__(self):
        return "+".join(self.blocks)


def assemble_features(blocks: Mapping[str, Mapping[str, np.ndarray]], combo) -> np.ndarray:
    """Concatenate ``[PAT blocks | HCP blocks]`` in canonical block order.

    ``blocks[role][name]`` holds the (already zero-filled) vector of a block.
    """
    combo = FeatureCombo.parse(combo)
    parts = [np.asarray(blocks[role][name], dtype=float) for role in (PAT, HCP) for name in combo.blocks]
    return np.concatenate(parts)


def undersample(labels, factor: int = 5, seed: int = 0) -> np.ndarray:
    """Indices keeping every positive and ``floor(N_neg / factor)`` negatives.

    Negatives are drawn uniformly without replacement; the returned indices
    are sorted.
    """
    if factor < 1:
        raise ValueError("factor must be >= 1")
    labels = np.asarray(labels)
    pos = np.flatnonzero(labels > 0)
    neg = np.flatnonzero(labels <= 0)
    if factor == 1:
        return np.arange(len(labels))
    keep = np.random.default_rng(seed).choice(neg, size=len(neg) // factor, replace=False)
    return np.sort(np.concatenate([pos, keep]))


@dataclass
class Standardizer:
    mean: np.ndarray
    scale: np.ndarray

    @classmethod
    def fit(cls, X) -> "Standardizer":
        X = np.asarray(X, dtype=float)
        sd = X.std(axis=0)
        return cls(X.mean(axis=0), np.where(sd > 1e-12, sd, 1.0))

    def transform(self, X) -> np.ndarray:
        return (np.asarray(X, dtype=float) - self.mean) / self.scale


def group_folds(labels, groups, n_folds: int, seed: int = 0) -> np.ndarray:
    """Assign each group to a fold so positives spread as evenly as possible.

    Groups are shuffled with ``seed`` and ordered by positive count (largest
    first). Groups holding positives go to the fold with the fewest
    positives; the rest go to the fold with the fewest negatives.
    Raises when fewer than ``n_folds`` groups contain a positive.
    """
    labels = np.asarray(labels)
    groups = np.asarray(groups)
    uniq = sorted(set(groups.tolist()))
    rng = np.random.default_rng(seed)
    order = [uniq[k] for k in rng.permutation(len(uniq))]
    pos_count = {g: 0 for g in uniq}
    size = {g: 0 for g in uniq}
    for g, lab in zip(groups.tolist(), labels.tolist()):
        size[g] += 1
        pos_count[g] += lab > 0
    if sum(1 for g in uniq if pos_count[g]) < n_folds:
        raise ValueError(f"insufficient positives for {n_folds}-fold split: positives occur in "
                         f"{sum(1 for g in uniq if pos_count[g])} groups")
    order.sort(key=lambda g: -pos_count[g])
    fold_pos = [0] * n_folds
    fold_neg = [0] * n_folds
    assign = {}
    for g in order:
        if pos_count[g]:
            k = min(range(n_folds), key=lambda f: (fold_pos[f], fold_neg[f], f))
        else:
            k = min(range(n_folds), key=lambda f: (fold_neg[f], f))
        assign[g] = k
        fold_pos[k] += pos_count[g]
        fold_neg[k] += size[g] - pos_count[g]
    return np.array([assign[g] for g in groups.tolist()])


def _stratified_folds(labels, n_folds, seed):
    labels = np.asarray(labels)
    rng = np.random.default_rng(seed)
    folds = np.empty(len(labels), dtype=int)
    for cls in (True, False):
        idx = np.flatnonzero((labels > 0) == cls)
        idx = idx[rng.permutation(len(idx))]
        folds[idx] = np.arange(len(idx)) % n_folds
    return folds


def make_folds(labels, groups, n_folds, seed):
    if groups is None:
        return _stratified_folds(labels, n_folds, seed)
    return group_folds(labels, groups, n_folds, seed)


@dataclass
class EmpathyClassifier:
    """Standardization + RBF SVM + Platt sigmoid for one feature combination."""

    combo: FeatureCombo
    scaler: Standardizer
    svm: SvmModel

    @property
    def n_features(self) -> int:
        return len(self.scaler.mean)

    def decision_function(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != self.n_features:
            raise ValueError(f"expected {self.n_features} features, got {X.shape[1]}")
        return self.svm.decision_function(self.scaler.transform(X))

    def predict_proba(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != self.n_features:
            raise ValueError(f"expected {self.n_features} features, got {X.shape[1]}")
        return self.svm.predict_proba(self.scaler.transform(X))

    def to_dict(self) -> dict:
        return {
            "version": MODEL_VERSION,
            "combo": list(self.combo.blocks),
            "mean": self.scaler.mean.tolist(),
            "scale": self.scaler.scale.tolist(),
            "svm": self.svm.to_dict(),
        }

    @classmethod
    def from_dict(cls, doc) -> "EmpathyClassifier":
        if doc.get("version") != MODEL_VERSION:
            raise ValueError(f"unsupported model version {doc.get('version')!r}")
        svm = SvmModel.from_dict(doc["svm"])
        scaler = Standardizer(np.asarray(doc["mean"], dtype=float), np.asarray(doc["scale"], dtype=float))
        if svm.support_vectors.size == 0:
            svm.support_vectors = np.zeros((0, len(scaler.mean)))
        return cls(FeatureCombo(tuple(doc["combo"])), scaler, svm)

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, sort_keys=True, separators=(",", ":"))
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "EmpathyClassifier":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


def predict_proba(model, X) -> np.ndarray:
    return model.predict_proba(X)


def _fit_scaled(X, y, C, gamma, W, tol):
    scaler = Standardizer.fit(X)
    return scaler, train_svm(scaler.transform(X), y, C, gamma, W, tol)


def out_of_fold_decisions(X, y, C, gamma, W, groups=None, n_folds=3, seed=0, tol=1e-3) -> np.ndarray:
    """Decision values of each row from a model trained on the other folds."""
    X, y = _check_xy(X, y)
    folds = make_folds(y, groups, n_folds, seed)
    out = np.empty(len(y))
    for k in range(n_folds):
        test = folds == k
        if not test.any():
            continue
        if len(np.unique(y[~test])) < 2:
            raise ValueError("degenerate single-class calibration fold")
        scaler, svm = _fit_scaled(X[~test], y[~test], C, gamma, W, tol)
        out[test] = svm.decision_function(scaler.transform(X[test]))
    return out


def calibrate(X, y, C, gamma, W, groups=None, n_folds=3, seed=0, tol=1e-3) -> tuple[float, float]:
    """Platt ``(A, B)`` fitted on out-of-fold decision values."""
    dec = out_of_fold_decisions(X, y, C, gamma, W, groups, n_folds, seed, tol)
    return fit_sigmoid(dec, y)


def fit_classifier(X, y, combo, C, gamma, W, groups=None, seed=0, calib_folds=3, tol=1e-3):
    """Train on all rows, then attach Platt parameters from internal folds."""
    X, y = _check_xy(X, y)
    scaler, svm = _fit_scaled(X, y, C, gamma, W, tol)
    A, B = calibrate(X, y, C, gamma, W, groups, calib_folds, seed, tol)
    if A >= 0:
        # Fold models disagreeing in offset can invert the pooled fit; an
        # increasing map is required for ranking, so fall back to the final
        # model's own training decisions.
        logger.warning("out-of-fold calibration not increasing (A=%.3g); using training decisions", A)
        A, B = fit_sigmoid(svm.decision_function(scaler.transform(X)), y)
    svm.platt_A, svm.platt_B = A, B
    return EmpathyClassifier(FeatureCombo.parse(combo), scaler, svm)


@dataclass
class TrainConfig:
    C: Sequence[float] = (1e-2, 1e-1, 1.0)
    gamma: Sequence[float] = (1e-4, 1e-3, 1e-2)
    W: Sequence[float] = tuple(range(1, 11))
    folds: int = 5
    undersample_factor: int = 5
    seed: int = 0
    tol: float = 1e-3

    def grid(self) -> list[tuple[float, float, float]]:
        return sorted(itertools.product(self.C, self.gamma, self.W))


@dataclass
class GridResult:
    C: float
    gamma: float
    W: float
    cv_score: float
    table: list[dict] = field(default_factory=list)


def _fold_scores(X, y, folds, k, gammas, params, tol):
    """AP per (C, gamma, W) for held-out fold ``k``."""
    train, test = folds != k, folds == k
    scaler = Standardizer.fit(X[train])
    Xtr, Xte = scaler.transform(X[train]), scaler.transform(X[test])
    ytr, yte = y[train], y[test]
    d_tr = sq_distances(Xtr, Xtr)
    d_te = sq_distances(Xte, Xtr)
    scores = {}
    for g in gammas:
        K = np.exp(-g * d_tr)
        K_te = np.exp(-g * d_te)
        for C, gg, W in params:
            if gg != g:
                continue
            alpha, b, _, _ = train_from_kernel(K, ytr, C, W, tol)
            scores[(C, g, W)] = average_precision(K_te @ (alpha * ytr) + b, yte > 0)
    return scores


def grid_search(X, y, groups=None, config: TrainConfig | None = None, n_jobs: int = 1) -> GridResult:
    """Pick ``(C, gamma, W)`` by mean held-out-fold AP.

    Folds never split a group (session). Ties go to the smaller ``C``,
    then smaller ``gamma``, then smaller ``W``.
    """
    config = config or TrainConfig()
    X, y = _check_xy(X, y)
    params = config.grid()
    if not params:
        raise ValueError("empty parameter grid")
    folds = make_folds(y, groups, config.folds, config.seed)
    gammas = sorted({g for _, g, _ in params})
    jobs = [(k,) for k in range(config.folds)]
    if n_jobs == 1:
        per_fold = [_fold_scores(X, y, folds, k, gammas, params, config.tol) for (k,) in jobs]
    else:
        from joblib import Parallel, delayed

        per_fold = Parallel(n_jobs=n_jobs)(
            delayed(_fold_scores)(X, y, folds, k, gammas, params, config.tol) for (k,) in jobs
        )
    table = []
    best = None
    for p in params:
        fold_ap = [s[p] for s in per_fold]
        mean_ap = float(np.mean(fold_ap))
        table.append({"C": p[0], "gamma": p[1], "W": p[2], "mean_ap": mean_ap, "fold_ap": fold_ap})
        if best is None or mean_ap > best[1]:
            best = (p, mean_ap)
    (C, g, W), score = best
    logger.info("grid_search configs=%d best C=%g gamma=%g W=%g cv_ap=%.4f", len(params), C, g, W, score)
    return GridResult(C, g, W, score, table)


def train_pipeline(X, y, groups, combo, config: TrainConfig | None = None, n_jobs: int = 1):
    """Undersample, grid-search, then fit and calibrate the final model.

    Returns ``(model, grid_result, kept_indices)``.
    """
    config = config or TrainConfig()
    y = np.asarray(y, dtype=float)
    keep = undersample(y, config.undersample_factor, config.seed)
    Xs, ys = np.asarray(X, dtype=float)[keep], y[keep]
    gs = None if groups is None else np.asarray(groups)[keep]
    result = grid_search(Xs, ys, gs, config, n_jobs)
    model = fit_classifier(Xs, ys, combo, result.C, result.gamma, result.W, gs, config.seed, tol=config.tol)
    return model, result, keep

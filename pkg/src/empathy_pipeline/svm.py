"""RBF-kernel C-SVM trained by SMO, with Platt probability calibration.

The dual problem solved is::

    min_a  1/2 a^T Q a - sum(a)    s.t.  y^T a = 0,  0 <= a_i <= C_i

with ``Q_ij = y_i y_j K(x_i, x_j)``, ``K(x, z) = exp(-gamma |x - z|^2)`` and
per-class bounds ``C_i = C * W`` for positives and ``C`` for negatives.
Working pairs are the maximal KKT-violating pair; iteration stops when the
violation gap ``m(a) - M(a)`` drops below ``tol``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

logger = logging.getLogger(__name__)

KKT_TOL = 1e-3
TAU = 1e-12


def sq_distances(A, B) -> np.ndarray:
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    d = (A * A).sum(1)[:, None] + (B * B).sum(1)[None, :] - 2.0 * A @ B.T
    return np.maximum(d, 0.0)


def rbf_kernel(A, B, gamma: float) -> np.ndarray:
    return np.exp(-gamma * sq_distances(A, B))


def _bounds(y, C, W):
    return np.where(y > 0, C * W, C).astype(float)


def _violation_sets(alpha, y, ub):
    up = ((y > 0) & (alpha < ub)) | ((y < 0) & (alpha > 0))
    low = ((y > 0) & (alpha > 0)) | ((y < 0) & (alpha < ub))
    return up, low


def kkt_gap(alpha, G, y, ub) -> float:
    """``max_{I_up} -y G - min_{I_low} -y G`` (0 or less at an exact optimum)."""
    up, low = _violation_sets(alpha, y, ub)
    v = -y * G
    if not up.any() or not low.any():
        return 0.0
    return float(v[up].max() - v[low].min())


def smo_solve(K, y, ub, tol: float = KKT_TOL, max_iter: int | None = None):
    """Solve the dual for a precomputed kernel matrix.

    Returns ``(alpha, b, gap, n_iter)`` where the decision function is
    ``f(x) = sum_i alpha_i y_i K(x_i, x) + b``.
    """
    K = np.asarray(K, dtype=float)
    y = np.asarray(y, dtype=float)
    ub = np.asarray(ub, dtype=float)
    n = len(y)
    if max_iter is None:
        max_iter = max(10_000_000, 100 * n)
    alpha = np.zeros(n)
    G = -np.ones(n)
    diag = np.diag(K).copy()
    it = 0
    while it < max_iter:
        up, low = _violation_sets(alpha, y, ub)
        v = -y * G
        vu = np.where(up, v, -np.inf)
        vl = np.where(low, v, np.inf)
        i = int(np.argmax(vu))
        j = int(np.argmin(vl))
        if vu[i] - vl[j] < tol:
            break
        it += 1
        yi, yj = y[i], y[j]
        Ki, Kj = K[i], K[j]
        ai, aj = alpha[i], alpha[j]
        Ci, Cj = ub[i], ub[j]
        if yi != yj:
            quad = max(diag[i] + diag[j] - 2 * Ki[j], TAU)
            delta = (-G[i] - G[j]) / quad
            diff = ai - aj
            ai_new, aj_new = ai + delta, aj + delta
            if diff > 0:
                if aj_new < 0:
                    aj_new, ai_new = 0.0, diff
            elif ai_new < 0:
                ai_new, aj_new = 0.0, -diff
            if diff > Ci - Cj:
                if ai_new > Ci:
                    ai_new, aj_new = Ci, Ci - diff
            elif aj_new > Cj:
                aj_new, ai_new = Cj, Cj + diff
        else:
            quad = max(diag[i] + diag[j] - 2 * Ki[j], TAU)
            delta = (G[i] - G[j]) / quad
            total = ai + aj
            ai_new, aj_new = ai - delta, aj + delta
            if total > Ci:
                if ai_new > Ci:
                    ai_new, aj_new = Ci, total - Ci
            elif aj_new < 0:
                aj_new, ai_new = 0.0, total
            if total > Cj:
                if aj_new > Cj:
                    aj_new, ai_new = Cj, total - Cj
            elif ai_new < 0:
                ai_new, aj_new = 0.0, total
        dai, daj = ai_new - ai, aj_new - aj
        alpha[i], alpha[j] = ai_new, aj_new
        # G = Q alpha - 1, Q[:, k] = y * y_k * K[:, k]
        G += y * (yi * dai * Ki + yj * daj * Kj)
    else:
        logger.warning("SMO reached max_iter=%d before convergence", max_iter)
    gap = kkt_gap(alpha, G, y, ub)
    b = -_rho(alpha, G, y, ub)
    return alpha, b, gap, it


def _rho(alpha, G, y, ub) -> float:
    yG = y * G
    at_ub = alpha >= ub
    at_lb = alpha <= 0
    free = ~at_ub & ~at_lb
    if free.any():
        return float(yG[free].mean())
    upper_side = (at_ub & (y < 0)) | (at_lb & (y > 0))
    lower_side = (at_ub & (y > 0)) | (at_lb & (y < 0))
    ub_val = yG[upper_side].min() if upper_side.any() else np.inf
    lb_val = yG[lower_side].max() if lower_side.any() else -np.inf
    if not np.isfinite(ub_val):
        return float(lb_val)
    if not np.isfinite(lb_val):
        return float(ub_val)
    return float((ub_val + lb_val) / 2)


def dual_objective(alpha, K, y) -> float:
    """Maximization form ``sum(a) - 1/2 a^T Q a``."""
    ay = np.asarray(alpha) * np.asarray(y)
    return float(np.sum(alpha) - 0.5 * ay @ np.asarray(K) @ ay)


@dataclass
class SvmModel:
    support_vectors: np.ndarray
    dual_coef: np.ndarray  # alpha_i * y_i of the support vectors
    b: float
    gamma: float
    C: float
    W: float
    platt_A: float = -1.0
    platt_B: float = 0.0
    kkt_gap: float = 0.0
    n_iter: int = 0
    support: np.ndarray | None = None  # training-row indices, not serialized

    @property
    def n_features(self) -> int:
        return self.support_vectors.shape[1]

    def decision_function(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != self.n_features:
            raise ValueError(f"expected {self.n_features} features, got {X.shape[1]}")
        if len(self.dual_coef) == 0:
            return np.full(X.shape[0], self.b)
        return rbf_kernel(X, self.support_vectors, self.gamma) @ self.dual_coef + self.b

    def predict_proba(self, X) -> np.ndarray:
        return sigmoid_proba(self.decision_function(X), self.platt_A, self.platt_B)

    def to_dict(self) -> dict:
        return {
            "support_vectors": self.support_vectors.tolist(),
            "dual_coef": self.dual_coef.tolist(),
            "b": self.b,
            "gamma": self.gamma,
            "C": self.C,
            "W": self.W,
            "platt_A": self.platt_A,
            "platt_B": self.platt_B,
        }

    @classmethod
    def from_dict(cls, doc) -> "SvmModel":
        sv = np.asarray(doc["support_vectors"], dtype=float)
        return cls(
            sv.reshape(len(doc["dual_coef"]), -1) if sv.size else sv.reshape(0, 0),
            np.asarray(doc["dual_coef"], dtype=float),
            float(doc["b"]),
            float(doc["gamma"]),
            float(doc["C"]),
            float(doc["W"]),
            float(doc["platt_A"]),
            float(doc["platt_B"]),
        )


def _check_xy(X, y):
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.ndim != 2 or len(X) != len(y):
        raise ValueError("X must be 2-D with one row per label")
    if not np.isfinite(X).all():
        raise ValueError("features contain NaN or inf")
    if set(np.unique(y)) - {-1.0, 1.0}:
        raise ValueError("labels must be -1 or +1")
    if len(np.unique(y)) < 2:
        raise ValueError("training data contains a single class")
    return X, y


def train_from_kernel(K, y, C, W, tol=KKT_TOL):
    """SMO on a precomputed kernel; returns ``(alpha, b, gap, n_iter)``."""
    return smo_solve(K, y, _bounds(y, C, W), tol)


def train_svm(X, y, C: float = 1.0, gamma: float = 1e-3, W: float = 1.0, tol: float = KKT_TOL) -> SvmModel:
    X, y = _check_xy(X, y)
    alpha, b, gap, n_iter = train_from_kernel(rbf_kernel(X, X, gamma), y, C, W, tol)
    sv = np.flatnonzero(alpha > 0)
    return SvmModel(X[sv].copy(), (alpha * y)[sv], b, gamma, C, W, kkt_gap=gap, n_iter=n_iter, support=sv)


def kkt_residual(model: SvmModel, X, y) -> float:
    """KKT violation gap of ``model`` on its training data ``(X, y)``.

    Requires the model returned by :func:`train_svm` (it records which
    training rows are support vectors).
    """
    if model.support is None:
        raise ValueError("model does not record its support indices")
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    alpha = np.zeros(len(y))
    alpha[model.support] = np.abs(model.dual_coef)
    f = model.decision_function(X)
    G = y * (f - model.b) - 1.0
    return kkt_gap(alpha, G, y, _bounds(y, model.C, model.W))


# ---------------------------------------------------------------------------
# Platt scaling


def sigmoid_proba(f, A: float, B: float) -> np.ndarray:
    """``1 / (1 + exp(A f + B))`` evaluated without overflow."""
    z = A * np.asarray(f, dtype=float) + B
    out = np.empty_like(z)
    pos = z >= 0
    ez = np.exp(-z[pos])
    out[pos] = ez / (1.0 + ez)
    out[~pos] = 1.0 / (1.0 + np.exp(z[~pos]))
    return out


def fit_sigmoid(decision, labels, max_iter: int = 100, min_step: float = 1e-10, eps: float = 1e-5):
    """Fit Platt's ``(A, B)`` by Newton's method with backtracking.

    Targets are smoothed to ``(N+ + 1) / (N+ + 2)`` and ``1 / (N- + 2)``,
    which regularizes the fit so separated scores still yield finite
    parameters.
    """
    f = np.asarray(decision, dtype=float)
    y = np.asarray(labels)
    pos = y > 0
    n_pos, n_neg = int(pos.sum()), int((~pos).sum())
    if n_pos == 0 or n_neg == 0:
        raise ValueError("calibration data contains a single class")
    t = np.where(pos, (n_pos + 1.0) / (n_pos + 2.0), 1.0 / (n_neg + 2.0))

    def objective(A, B):
        z = A * f + B
        return float(np.sum(np.where(z >= 0, t * z + np.log1p(np.exp(-z)), (t - 1) * z + np.log1p(np.exp(z)))))

    A, B = 0.0, math.log((n_neg + 1.0) / (n_pos + 1.0))
    fval = objective(A, B)
    for _ in range(max_iter):
        p = sigmoid_proba(f, A, B)  # P(y=1)
        q = 1.0 - p
        d2 = p * q
        h11 = np.sum(f * f * d2) + 1e-12
        h22 = np.sum(d2) + 1e-12
        h21 = np.sum(f * d2)
        d1 = t - p
        g1 = np.sum(f * d1)
        g2 = np.sum(d1)
        if abs(g1) < eps and abs(g2) < eps:
            break
        det = h11 * h22 - h21 * h21
        dA = -(h22 * g1 - h21 * g2) / det
        dB = -(-h21 * g1 + h11 * g2) / det
        gd = g1 * dA + g2 * dB
        step = 1.0
        while step >= min_step:
            nA, nB = A + step * dA, B + step * dB
            nval = objective(nA, nB)
            if nval < fval + 1e-4 * step * gd:
                A, B, fval = nA, nB, nval
                break
            step /= 2.0
        else:
            logger.debug("Platt line search failed")
            break
    return float(A), float(B)

"""Dual SVM over precomputed kernels, solved by SMO.

The dual is::

    min_a  1/2 sum_ij a_i a_j y_i y_j K_ij - sum_i a_i
    s.t.   sum_i a_i y_i = 0,  0 <= a_i <= C / N

and the decision function is ``f(x) = sum_i a_i y_i k(x_i, x) + b``.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from typing import Any

import numpy as np


@dataclass(frozen=True, eq=False)
class TrainingProblem:
    gram: np.ndarray
    labels: np.ndarray
    C: float = 1.0

    def __post_init__(self):
        K = np.asarray(self.gram, dtype=float)
        y = np.asarray(self.labels, dtype=float).ravel()
        if K.ndim != 2 or K.shape[0] != K.shape[1]:
            raise ValueError(f"gram must be square, got shape {K.shape}")
        if len(y) != len(K):
            raise ValueError(f"{len(y)} labels for a {len(K)}x{len(K)} gram")
        if len(y) < 2:
            raise ValueError("need at least two samples")
        if not np.isin(y, (-1.0, 1.0)).all():
            raise ValueError("labels must be +1 or -1")
        if not ((y > 0).any() and (y < 0).any()):
            raise ValueError("labels must contain both classes")
        if np.abs(K - K.T).max() > 1e-10:
            raise ValueError("gram is not symmetric")
        if not self.C > 0:
            raise ValueError("C must be positive")
        object.__setattr__(self, "gram", K)
        object.__setattr__(self, "labels", y)

    @property
    def n(self) -> int:
        return len(self.labels)

    @property
    def box(self) -> float:
        return self.C / self.n

    def objective(self, alpha: np.ndarray) -> float:
        ya = self.labels * alpha
        return float(0.5 * ya @ self.gram @ ya - alpha.sum())


@dataclass(frozen=True, eq=False)
class SvmModel:
    alpha: np.ndarray
    bias: float
    support: np.ndarray
    kernel: Any = field(repr=False)  # anything with .gram(X, Y)
    train_X: np.ndarray = field(repr=False)
    train_y: np.ndarray = field(repr=False)
    C: float = 1.0
    converged: bool = True
    iterations: int = 0
    kkt_residual: float = 0.0
    objective: float = float("nan")

    @property
    def coef(self) -> np.ndarray:
        """``alpha_i y_i`` over the support vectors."""
        return (self.alpha * self.train_y)[self.support]

    def decision_function(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != self.train_X.shape[1]:
            raise ValueError(f"expected rows of length {self.train_X.shape[1]}, got {X.shape[1]}")
        if len(self.support) == 0:
            return np.full(len(X), self.bias)
        K = np.asarray(self.kernel.gram(self.train_X[self.support], X))
        return self.coef @ K + self.bias

    def predict(self, X) -> np.ndarray:
        return np.where(self.decision_function(X) >= 0, 1, -1)

    def weight_norm(self) -> float:
        """``||w||`` from the support-vector Gram."""
        if len(self.support) == 0:
            return 0.0
        S = self.train_X[self.support]
        c = self.coef
        return float(np.sqrt(max(c @ np.asarray(self.kernel.gram(S, S)) @ c, 0.0)))


def _violating_pair(alpha, grad, y, C, order, eps):
    """Maximal violating pair (i in I_up, j in I_low) and the gap ``m - M``."""
    score = -y * grad
    up = ((y > 0) & (alpha < C - eps)) | ((y < 0) & (alpha > eps))
    low = ((y < 0) & (alpha < C - eps)) | ((y > 0) & (alpha > eps))
    up_o, low_o = up[order], low[order]
    if not up_o.any() or not low_o.any():
        return -1, -1, 0.0
    s = score[order]
    i = order[np.flatnonzero(up_o)[np.argmax(s[up_o])]]
    j = order[np.flatnonzero(low_o)[np.argmin(s[low_o])]]
    return int(i), int(j), float(score[i] - score[j])


def _bias(alpha, grad, y, C, eps) -> float:
    score = -y * grad
    free = (alpha > eps) & (alpha < C - eps)
    if free.any():
        return float(score[free].mean())
    at_zero, at_c = alpha <= eps, alpha >= C - eps
    lower = ((y > 0) & at_zero) | ((y < 0) & at_c)
    upper = ((y < 0) & at_zero) | ((y > 0) & at_c)
    lo = score[lower].max() if lower.any() else None
    hi = score[upper].min() if upper.any() else None
    if lo is None:
        return float(hi)
    if hi is None:
        return float(lo)
    return float(0.5 * (lo + hi))


def kkt_residual(problem: TrainingProblem, alpha: np.ndarray) -> float:
    """Maximal violation ``max(0, m(alpha) - M(alpha))`` of the dual KKT conditions."""
    C = problem.box
    y = problem.labels
    grad = y * (problem.gram @ (y * alpha)) - 1.0
    order = np.arange(problem.n)
    return max(0.0, _violating_pair(alpha, grad, y, C, order, 1e-12 * C)[2])


def solve_dual(problem: TrainingProblem, tol: float = 1e-6, max_iter: int = 100_000, seed: int = 0,
               kernel: Any = None, train_X=None) -> SvmModel:
    """Sequential minimal optimization with maximal-violating-pair selection.

    Ties in pair selection are broken by a seeded permutation of the indices,
    so results are reproducible. When ``max_iter`` is exhausted the returned
    model has ``converged=False``.
    """
    K = problem.gram
    y = problem.labels
    n = problem.n
    C = problem.box
    eps = 1e-12 * C
    order = np.random.default_rng(seed).permutation(n)
    alpha = np.zeros(n)
    grad = -np.ones(n)  # gradient of the dual objective, Q alpha - 1 with Q = yy^T * K
    converged = False
    it = 0
    gap = 0.0
    while it < max_iter:
        i, j, gap = _violating_pair(alpha, grad, y, C, order, eps)
        if i < 0 or gap <= tol:
            converged = True
            break
        it += 1
        curv = K[i, i] + K[j, j] - 2.0 * K[i, j]
        if curv <= 1e-12:
            curv = 1e-12
        step = gap / curv
        # move along alpha_i += y_i t, alpha_j -= y_j t, clipped to the box
        step = min(step, C - alpha[i] if y[i] > 0 else alpha[i])
        step = min(step, alpha[j] if y[j] > 0 else C - alpha[j])
        alpha[i] += y[i] * step
        alpha[j] -= y[j] * step
        alpha[i] = min(max(alpha[i], 0.0), C)
        alpha[j] = min(max(alpha[j], 0.0), C)
        grad += step * y * (K[:, i] - K[:, j])
    else:
        i, j, gap = _violating_pair(alpha, grad, y, C, order, eps)
        converged = gap <= tol

    # refresh the gradient to shed accumulated drift before reading off b
    grad = y * (K @ (y * alpha)) - 1.0
    bias = _bias(alpha, grad, y, C, eps)
    support = np.flatnonzero(alpha > eps)
    train_X = np.zeros((n, 0)) if train_X is None else np.atleast_2d(np.asarray(train_X, dtype=float))
    return SvmModel(
        alpha=alpha,
        bias=bias,
        support=support,
        kernel=kernel,
        train_X=train_X,
        train_y=y.copy(),
        C=problem.C,
        converged=converged,
        iterations=it,
        kkt_residual=kkt_residual(problem, alpha),
        objective=problem.objective(alpha),
    )


def fit(kernel, X, y, C: float = 1.0, tol: float = 1e-6, max_iter: int = 100_000, seed: int = 0) -> SvmModel:
    """Train on the rows of ``X`` with any kernel exposing ``gram(X, Y)``."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    problem = TrainingProblem(np.asarray(kernel.gram(X)), y, C)
    return solve_dual(problem, tol=tol, max_iter=max_iter, seed=seed, kernel=kernel, train_X=X)


def decision_value(model: SvmModel, x) -> float:
    return float(model.decision_function(np.asarray(x, dtype=float)[None])[0])


def predict(model: SvmModel, x) -> int:
    return 1 if decision_value(model, x) >= 0 else -1


def margin_of(model: SvmModel, X, y) -> float:
    """Geometric margin ``min_i y_i f(x_i) / ||w||``; nonpositive when ``(X, y)`` is not separated."""
    y = np.asarray(y, dtype=float).ravel()
    f = model.decision_function(X)
    w = model.weight_norm()
    functional = float((y * f).min())
    if w == 0.0:
        return functional
    return functional / w


# ---------------------------------------------------------------------------
# serialization


def save_model(model: SvmModel, path: str | os.PathLike, kernel_spec: str, mode: str = "none",
               reference: str = "") -> None:
    """Plain-text model: header fields, then one line per support vector.

    Support lines are ``index alpha label x_1 .. x_d``.
    """
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("svm-model 1\n")
        fh.write(f"kernel {kernel_spec}\n")
        fh.write(f"mode {mode}\n")
        fh.write(f"reference {reference or '-'}\n")
        fh.write(f"C {float(model.C)!r}\n")
        fh.write(f"bias {float(model.bias)!r}\n")
        fh.write(f"converged {int(model.converged)}\n")
        fh.write(f"n_train {len(model.train_y)}\n")
        fh.write(f"dim {model.train_X.shape[1]}\n")
        fh.write(f"support {len(model.support)}\n")
        for idx in model.support:
            row = " ".join(repr(float(v)) for v in model.train_X[idx])
            fh.write(f"{int(idx)} {float(model.alpha[idx])!r} {int(model.train_y[idx])} {row}\n")


@dataclass(frozen=True)
class ModelFile:
    kernel_spec: str
    mode: str
    reference: str
    model: SvmModel


def load_model(path: str | os.PathLike, kernel_factory=None) -> ModelFile:
    """Read a model file; ``kernel_factory(kernel_spec, mode, reference)`` rebuilds the kernel."""
    with open(path, encoding="utf-8") as fh:
        lines = [ln.rstrip("\n") for ln in fh if ln.strip()]
    if not lines or lines[0].split() != ["svm-model", "1"]:
        raise ValueError(f"{path} is not an svm-model file")
    header = {}
    pos = 1
    while pos < len(lines):
        key, _, value = lines[pos].partition(" ")
        header[key] = value.strip()
        pos += 1
        if key == "support":
            break
    n_train, dim, n_sv = int(header["n_train"]), int(header["dim"]), int(header["support"])
    alpha = np.zeros(n_train)
    labels = np.ones(n_train)
    X = np.zeros((n_train, dim))
    support = []
    for line in lines[pos:pos + n_sv]:
        parts = line.split()
        idx = int(parts[0])
        alpha[idx] = float(parts[1])
        labels[idx] = float(parts[2])
        X[idx] = [float(v) for v in parts[3:]]
        support.append(idx)
    reference = "" if header.get("reference", "-") == "-" else header["reference"]
    kernel = kernel_factory(header["kernel"], header["mode"], reference) if kernel_factory else None
    model = SvmModel(
        alpha=alpha,
        bias=float(header["bias"]),
        support=np.array(support, dtype=int),
        kernel=kernel,
        train_X=X,
        train_y=labels,
        C=float(header.get("C", "1")),
        converged=header.get("converged", "1") == "1",
    )
    return ModelFile(header["kernel"], header["mode"], reference, model)


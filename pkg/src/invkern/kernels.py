"""Base positive semi-definite kernels that depend only on inner products and distances.

All shipped kinds are unitary: ``k(gx, gy) = k(x, y)`` for every orthogonal
``g``, because each reads its inputs only through ``<x, y>`` and
``||x - y||``.
"""

from __future__ import annotations

import contextlib
import re
from dataclasses import dataclass

import numpy as np

from .group_algebra import OrthogonalSet

KINDS = ("linear", "rbf", "poly")

_CALL_LOGS: list[list[tuple[np.ndarray, np.ndarray]]] = []


@dataclass(frozen=True)
class KernelSpec:
    """A base kernel.

    ``rbf`` is ``exp(-||x - y||^2 / (2 sigma^2))``; ``poly`` is
    ``(<x, y> + offset)^degree``; ``linear`` is ``<x, y>``.
    """

    kind: str = "rbf"
    sigma: float = 1.0
    degree: int = 2
    offset: float = 1.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown kernel kind {self.kind!r}; expected one of {KINDS}")
        if not self.sigma > 0:
            raise ValueError("rbf sigma must be positive")
        if int(self.degree) != self.degree or self.degree < 1:
            raise ValueError("polynomial degree must be a positive integer")
        object.__setattr__(self, "degree", int(self.degree))
        object.__setattr__(self, "sigma", float(self.sigma))
        object.__setattr__(self, "offset", float(self.offset))

    @property
    def claims_unitary(self) -> bool:
        return True

    @property
    def is_normalized(self) -> bool:
        """True when ``k(x, x) = 1`` for every ``x``."""
        return self.kind == "rbf"

    def __str__(self) -> str:
        return format_kernel(self)

    def __call__(self, x, y) -> float:
        return kernel_eval(self, x, y)

    def gram(self, X, Y=None) -> np.ndarray:
        return gram_matrix(self, X, X if Y is None else Y)

    def diag(self, X) -> np.ndarray:
        """``k(x, x)`` for each row of ``X``."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        sq = np.einsum("ij,ij->i", X, X)
        if self.kind == "rbf":
            return np.ones(len(X))
        if self.kind == "linear":
            return sq
        return (sq + self.offset) ** self.degree


def linear() -> KernelSpec:
    return KernelSpec("linear")


def rbf(sigma: float = 1.0) -> KernelSpec:
    return KernelSpec("rbf", sigma=sigma)


def polynomial(degree: int = 2, offset: float = 1.0) -> KernelSpec:
    return KernelSpec("poly", degree=degree, offset=offset)


def parse_kernel(text: str) -> KernelSpec:
    """Parse ``linear``, ``rbf:σ=<float>`` or ``poly:d=<int>,c=<float>``.

    ``sigma`` is accepted in place of ``σ``; omitted parameters take the
    defaults (σ = 1, d = 2, c = 1).
    """
    kind, _, rest = text.strip().partition(":")
    kind = kind.strip().lower()
    params = {}
    for item in filter(None, (p.strip() for p in rest.split(","))):
        m = re.fullmatch(r"([^=\s]+)\s*=\s*(\S+)", item)
        if not m:
            raise ValueError(f"bad kernel parameter {item!r} in {text!r}")
        params[m.group(1)] = m.group(2)
    if kind == "linear":
        if params:
            raise ValueError("linear kernel takes no parameters")
        return linear()
    if kind == "rbf":
        sigma = params.pop("σ", params.pop("sigma", "1"))
        if params:
            raise ValueError(f"unknown rbf parameters {sorted(params)}")
        return rbf(float(sigma))
    if kind in ("poly", "polynomial"):
        degree = params.pop("d", params.pop("degree", "2"))
        offset = params.pop("c", params.pop("offset", "1"))
        if params:
            raise ValueError(f"unknown poly parameters {sorted(params)}")
        if not re.fullmatch(r"\d+", degree):
            raise ValueError(f"polynomial degree must be an integer, got {degree!r}")
        return polynomial(int(degree), float(offset))
    raise ValueError(f"unknown kernel {text!r}")


def format_kernel(spec: KernelSpec) -> str:
    if spec.kind == "linear":
        return "linear"
    if spec.kind == "rbf":
        return f"rbf:σ={spec.sigma!r}"
    return f"poly:d={spec.degree},c={spec.offset!r}"


@contextlib.contextmanager
def record_kernel_calls():
    """Log the argument arrays of every Gram evaluation while active."""
    log: list[tuple[np.ndarray, np.ndarray]] = []
    _CALL_LOGS.append(log)
    try:
        yield log
    finally:
        _CALL_LOGS.remove(log)


def _as_rows(X, name: str) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[None]
    if X.ndim != 2:
        raise ValueError(f"{name} must be a vector or a matrix of row samples")
    if not np.isfinite(X).all():
        raise ValueError(f"{name} contains non-finite entries")
    return X


def gram_matrix(spec: KernelSpec, X, Y) -> np.ndarray:
    """Kernel matrix with entry ``(i, j) = k(X[i], Y[j])``."""
    X = _as_rows(X, "X")
    Y = _as_rows(Y, "Y")
    if X.shape[1] != Y.shape[1]:
        raise ValueError(f"dimension mismatch: {X.shape[1]} vs {Y.shape[1]}")
    for log in _CALL_LOGS:
        log.append((X.copy(), Y.copy()))
    same = X is Y or (X.shape == Y.shape and np.array_equal(X, Y))
    inner = X @ Y.T
    if same:
        inner = 0.5 * (inner + inner.T)
    if spec.kind == "linear":
        return inner
    if spec.kind == "poly":
        return (inner + spec.offset) ** spec.degree
    sq = np.einsum("ij,ij->i", X, X)[:, None] + np.einsum("ij,ij->i", Y, Y)[None, :] - 2.0 * inner
    np.maximum(sq, 0.0, out=sq)
    if same:
        np.fill_diagonal(sq, 0.0)
    return np.exp(-sq / (2.0 * spec.sigma**2))


def kernel_eval(spec: KernelSpec, x, y) -> float:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError(f"dimension mismatch: {x.shape} vs {y.shape}")
    if not (np.isfinite(x).all() and np.isfinite(y).all()):
        raise ValueError("kernel inputs must be finite")
    for log in _CALL_LOGS:
        log.append((x[None].copy(), y[None].copy()))
    if spec.kind == "linear":
        return float(x @ y)
    if spec.kind == "poly":
        return float((x @ y + spec.offset) ** spec.degree)
    diff = x - y
    return float(np.exp(-(diff @ diff) / (2.0 * spec.sigma**2)))


def verify_unitarity(spec: KernelSpec, group: OrthogonalSet, trials: int = 100, seed: int = 0) -> float:
    """Largest observed ``|k(gx, gy) - k(x, y)|`` over random unit pairs and elements."""
    if trials < 1:
        raise ValueError("trials must be >= 1")
    rng = np.random.default_rng(seed)
    d = group.dim
    X = rng.standard_normal((trials, d))
    Y = rng.standard_normal((trials, d))
    X /= np.linalg.norm(X, axis=1, keepdims=True)
    Y /= np.linalg.norm(Y, axis=1, keepdims=True)
    idx = rng.integers(0, len(group), size=trials)
    G = group.elements[idx]
    gX = np.einsum("tij,tj->ti", G, X)
    gY = np.einsum("tij,tj->ti", G, Y)
    worst = 0.0
    for x, y, gx, gy in zip(X, Y, gX, gY):
        worst = max(worst, abs(kernel_eval(spec, gx, gy) - kernel_eval(spec, x, y)))
    return worst

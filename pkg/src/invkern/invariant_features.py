"""Pooled invariant signatures.

A signature entry pools one nonlinearity over the projections of a sample
onto every transformed copy of a template. Only templates are transformed;
the sample is used as given.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .group_algebra import OrthogonalSet, transform
from .invariant_kernel import TemplateBank
from .kernels import gram_matrix

POOLING_MODES = ("mean", "max", "moment", "cdf")
NORM_TOL = 1e-8
STABILITY_LIMIT = 1.0 / math.sqrt(2.0)


class StabilityPremiseError(ValueError):
    """The pooling or kernel does not meet the stability premise."""

    def __init__(self, message: str, required_lipschitz: float | None = None):
        super().__init__(message)
        self.required_lipschitz = required_lipschitz


@dataclass(frozen=True)
class PoolingSpec:
    """Pooling nonlinearity applied to the orbit projections of each template.

    ``moment`` with order ``n`` emits the first ``n`` raw moments; ``cdf``
    emits ``bins`` smoothed exceedance fractions ``mean sigmoid((a - b)/s)``
    at thresholds ``b`` evenly spaced over ``[-1, 1]``. Every output is
    multiplied by ``scale``.
    """

    mode: str = "mean"
    order: int = 1
    bins: int = 10
    smoothing: float = 0.1
    scale: float = 1.0

    def __post_init__(self):
        if self.mode not in POOLING_MODES:
            raise ValueError(f"unknown pooling mode {self.mode!r}")
        if self.order < 1:
            raise ValueError("moment order must be >= 1")
        if self.bins < 1:
            raise ValueError("cdf bins must be >= 1")
        if not self.smoothing > 0:
            raise ValueError("cdf smoothing must be positive")
        if not self.scale > 0:
            raise ValueError("scale must be positive")
        for name, cast in (("order", int), ("bins", int), ("smoothing", float), ("scale", float)):
            object.__setattr__(self, name, cast(getattr(self, name)))

    @property
    def n_outputs(self) -> int:
        if self.mode == "moment":
            return self.order
        if self.mode == "cdf":
            return self.bins
        return 1

    @property
    def lipschitz_bound(self) -> float:
        # moments assume |a| <= 1, which holds for normalized projections
        if self.mode == "moment":
            return self.scale * self.order
        if self.mode == "cdf":
            return self.scale / (4.0 * self.smoothing)
        return self.scale

    @property
    def thresholds(self) -> np.ndarray:
        return -1.0 + (2.0 * np.arange(1, self.bins + 1) - 1.0) / self.bins

    def is_stable(self) -> bool:
        return self.mode != "max" and self.n_outputs * self.lipschitz_bound <= STABILITY_LIMIT + 1e-12

    def compliant(self) -> "PoolingSpec":
        """Same pooling rescaled so that ``n_outputs * L = 1/sqrt(2)``."""
        unit = PoolingSpec(self.mode, self.order, self.bins, self.smoothing, 1.0)
        return PoolingSpec(self.mode, self.order, self.bins, self.smoothing,
                           STABILITY_LIMIT / (unit.n_outputs * unit.lipschitz_bound))

    def pool(self, projections: np.ndarray) -> np.ndarray:
        """Pool over the last axis; returns ``(..., n_outputs)``."""
        a = np.asarray(projections, dtype=float)
        if self.mode == "mean":
            out = a.mean(axis=-1, keepdims=True)
        elif self.mode == "max":
            out = a.max(axis=-1, keepdims=True)
        elif self.mode == "moment":
            out = np.stack([(a**n).mean(axis=-1) for n in range(1, self.order + 1)], axis=-1)
        else:
            b = self.thresholds
            out = expit((a[..., None, :] - b[:, None]) / self.smoothing).mean(axis=-1)
        return self.scale * out

    def __str__(self) -> str:
        extra = "" if self.scale == 1.0 else f"scale={self.scale!r}"
        if self.mode == "moment":
            body = f"n={self.order}" + ("," + extra if extra else "")
        elif self.mode == "cdf":
            body = f"bins={self.bins},s={self.smoothing!r}" + ("," + extra if extra else "")
        else:
            body = extra
        return self.mode + (":" + body if body else "")


def parse_pooling(text: str) -> PoolingSpec:
    """Parse ``mean``, ``max``, ``moment:n=<int>`` or ``cdf:bins=<int>,s=<float>``.

    Any form accepts an extra ``scale=<float>``.
    """
    mode, _, rest = text.strip().partition(":")
    params = {}
    for item in filter(None, (p.strip() for p in rest.split(","))):
        key, sep, value = item.partition("=")
        if not sep:
            raise ValueError(f"bad pooling parameter {item!r}")
        params[key.strip()] = value.strip()
    kwargs = {}
    if "scale" in params:
        kwargs["scale"] = float(params.pop("scale"))
    if mode == "moment":
        kwargs["order"] = int(params.pop("n", "1"))
    elif mode == "cdf":
        kwargs["bins"] = int(params.pop("bins", "10"))
        kwargs["smoothing"] = float(params.pop("s", params.pop("smoothing", "0.1")))
    if params:
        raise ValueError(f"unknown pooling parameters {sorted(params)} in {text!r}")
    return PoolingSpec(mode.strip(), **kwargs)


@dataclass(frozen=True, eq=False)
class PooledSignature:
    values: np.ndarray  # (K, n_outputs)
    config: PoolingSpec
    normalized: bool = True

    def __post_init__(self):
        if not np.isfinite(self.values).all():
            raise ValueError("signature contains non-finite entries")

    @property
    def template_count(self) -> int:
        return self.values.shape[0]

    def flat(self) -> np.ndarray:
        return self.values.reshape(-1)


def _unit_rows(X: np.ndarray, what: str) -> None:
    norms = np.linalg.norm(X, axis=1)
    bad = np.flatnonzero(np.abs(norms - 1.0) > NORM_TOL)
    if bad.size:
        raise ValueError(f"{what} {int(bad[0])} has norm {norms[bad[0]]:.6g}; unit norm is required")


def linear_signatures(X, group: OrthogonalSet, templates, pooling: PoolingSpec) -> np.ndarray:
    """Linear signatures of each row of ``X``: shape ``(N, K, n_outputs)``.

    Entry ``[i, k, n]`` pools ``eta_n(<x_i, g t_k>)`` over the set. Samples and
    templates must have unit norm.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    T = np.asarray(templates, dtype=float)
    if T.ndim == 1:
        T = T[:, None]
    if X.shape[1] != group.dim or T.shape[0] != group.dim:
        raise ValueError("sample, template and group dimensions differ")
    _unit_rows(X, "sample")
    _unit_rows(T.T, "template")
    moved = transform(group, T.T)  # (m, K, d)
    proj = np.einsum("ni,gki->nkg", X, moved)
    return pooling.pool(proj)


def linear_signature(x, group: OrthogonalSet, templates, pooling: PoolingSpec) -> PooledSignature:
    values = linear_signatures(np.asarray(x, dtype=float)[None], group, templates, pooling)[0]
    return PooledSignature(values, pooling)


def kernel_projections(X, bank: TemplateBank, normalize: bool = True) -> np.ndarray:
    """``k(x_i, g t_k)`` arranged as ``(N, K, |G|)``.

    With ``normalize`` each value is divided by ``sqrt(k(x,x) k(gt,gt))``,
    which is a no-op for normalized kernels.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.shape[1] != bank.dim:
        raise ValueError(f"expected rows of length {bank.dim}, got {X.shape[1]}")
    m, K = len(bank.group), bank.size
    stacked = np.transpose(bank.transformed, (0, 2, 1)).reshape(m * K, bank.dim)
    proj = gram_matrix(bank.kernel, X, stacked)
    if normalize and not bank.kernel.is_normalized:
        dx = bank.kernel.diag(X)
        dt = bank.kernel.diag(stacked)
        proj = proj / np.sqrt(np.outer(dx, dt))
    return np.transpose(proj.reshape(len(X), m, K), (0, 2, 1))


def kernel_signatures(X, bank: TemplateBank, pooling: PoolingSpec, normalize: bool = True) -> np.ndarray:
    """Kernel signatures of each row of ``X``: shape ``(N, K, n_outputs)``."""
    return pooling.pool(kernel_projections(X, bank, normalize))


def kernel_signature(x, bank: TemplateBank, pooling: PoolingSpec, normalize: bool = True,
                     require_stable: bool = False) -> PooledSignature:
    if require_stable and not pooling.is_stable():
        raise StabilityPremiseError(
            f"pooling {pooling} has n_outputs * L = {pooling.n_outputs * pooling.lipschitz_bound:.4g} > 1/sqrt(2)",
            STABILITY_LIMIT / pooling.n_outputs,
        )
    values = kernel_signatures(np.asarray(x, dtype=float)[None], bank, pooling, normalize)[0]
    return PooledSignature(values, pooling, normalize or bank.kernel.is_normalized)


def partial_signature(x, bank: TemplateBank, pooling: PoolingSpec, normalize: bool = True) -> PooledSignature:
    """Signature over an observed subset G0 that need not be closed.

    The computation matches :func:`kernel_signature`. Invariance to a
    transformation only follows when the projections of the sample vanish
    (or are constant) outside the observed elements.
    """
    return kernel_signature(x, bank, pooling, normalize)


@dataclass(frozen=True)
class StabilityReport:
    pairs: int
    bound: str  # "hausdorff" or "plain"
    violations: int
    max_slack: float  # max over pairs of (distance - bound); negative is comfortable
    hausdorff_violations: int
    plain_violations: int


def check_stability(bank: TemplateBank, pooling: PoolingSpec, pair_count: int = 1000, seed: int = 0,
                    slack: float = 1e-9) -> StabilityReport:
    """Compare signature distances with the kernel-distance bounds on random unit pairs.

    The squared signature distance is averaged over templates. On exact
    groups it is held to ``1 - max_{g,g'} k(gx, g'x')``; on a single-element
    set, or any set that is not a group, to ``1 - k(x, x')``. Both counts are
    reported regardless.
    """
    if pooling.mode == "max":
        raise StabilityPremiseError("max pooling is not smooth; stability is certified for smooth pooling only")
    if not pooling.is_stable():
        need = STABILITY_LIMIT / pooling.n_outputs
        raise StabilityPremiseError(
            f"n_outputs * L = {pooling.n_outputs * pooling.lipschitz_bound:.4g} exceeds 1/sqrt(2); "
            f"need L <= {need:.4g}", need)
    if not bank.kernel.is_normalized:
        raise StabilityPremiseError(f"kernel {bank.kernel} is not normalized (k(x,x) != 1)")
    if pair_count < 1:
        raise ValueError("pair_count must be >= 1")

    rng = np.random.default_rng(seed)
    d = bank.dim
    X = rng.standard_normal((pair_count, d))
    X /= np.linalg.norm(X, axis=1, keepdims=True)
    # half the pairs are close, half unrelated; the first pair is x' = x
    close = np.arange(pair_count) % 2 == 0
    eps = 10.0 ** rng.uniform(-4, 0, pair_count)
    noise = rng.standard_normal((pair_count, d))
    Xp = noise.copy()
    Xp[close] = X[close] + eps[close, None] * noise[close]
    Xp[0] = X[0]
    Xp /= np.linalg.norm(Xp, axis=1, keepdims=True)

    S = kernel_signatures(X, bank, pooling)
    Sp = kernel_signatures(Xp, bank, pooling)
    dist = ((S - Sp) ** 2).sum(axis=(1, 2)) / bank.size

    group = bank.group
    gX = transform(group, X)
    gXp = transform(group, Xp)
    plain = np.empty(pair_count)
    haus = np.empty(pair_count)
    for i in range(pair_count):
        plain[i] = 1.0 - gram_matrix(bank.kernel, X[i], Xp[i])[0, 0]
        haus[i] = 1.0 - gram_matrix(bank.kernel, gX[:, i], gXp[:, i]).max()

    haus_bad = int((dist > haus + slack).sum())
    plain_bad = int((dist > plain + slack).sum())
    use_haus = group.is_exact_group
    bound = haus if use_haus else plain
    return StabilityReport(
        pairs=pair_count,
        bound="hausdorff" if use_haus else "plain",
        violations=haus_bad if use_haus else plain_bad,
        max_slack=float((dist - bound).max()),
        hausdorff_violations=haus_bad,
        plain_violations=plain_bad,
    )


def signature_header(template_count: int, n_outputs: int) -> list[str]:
    return [f"t{k}_eta{n}" for k in range(1, template_count + 1) for n in range(1, n_outputs + 1)]


def write_signatures_csv(path, signatures: np.ndarray) -> None:
    """One row per sample, one column per (template, output) pair."""
    signatures = np.asarray(signatures, dtype=float)
    N, K, n_out = signatures.shape
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(signature_header(K, n_out))
        for row in signatures.reshape(N, K * n_out):
            writer.writerow([repr(float(v)) for v in row])

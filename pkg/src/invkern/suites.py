"""Numerical checks of the algebraic, invariance and stability guarantees.

Each check returns a :class:`Check` with the measured worst-case value and
the tolerance it is held to; the ``verify`` command prints them as a table.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import svm
from .group_algebra import OrthogonalSet, group_average, transform
from .invariant_features import PoolingSpec, check_stability, kernel_signatures
from .invariant_kernel import InvariantKernel, TemplateBank, random_templates
from .kernels import KernelSpec, linear, polynomial, rbf, verify_unitarity


@dataclass(frozen=True)
class Check:
    name: str
    value: float
    tol: float
    passed: bool
    note: str = ""

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{status}  {self.name:<44} {self.value:11.3e}  (tol {self.tol:.0e}) {self.note}".rstrip()


def _le(name: str, value: float, tol: float, note: str = "") -> Check:
    return Check(name, float(value), tol, bool(value <= tol), note)


def default_kernels() -> list[KernelSpec]:
    return [linear(), rbf(1.0), polynomial(2, 1.0)]


def identity_checks(group: OrthogonalSet, trials: int = 1000, seed: int = 0, tol: float = 1e-10) -> list[Check]:
    """The five algebraic identities of the group average Psi."""
    if not group.is_exact_group:
        return []
    psi = group_average(group).matrix
    G = group.elements
    rng = np.random.default_rng(seed)
    W = rng.standard_normal((trials, group.dim))
    Wp = rng.standard_normal((trials, group.dim))
    PW, PWp = W @ psi.T, Wp @ psi.T
    absorbs = np.abs(np.matmul(G, psi) - psi).max()
    symmetric = np.abs(psi.T - psi).max()
    idempotent = np.abs(psi @ psi - psi).max()
    self_adjoint = np.abs(np.einsum("ti,ti->t", W, PWp) - np.einsum("ti,ti->t", PW, Wp)).max()
    lhs = np.einsum("ti,ti->t", PW, PWp)
    gW = transform(group, W)  # (m, t, d)
    projection = np.abs(np.einsum("gti,ti->gt", gW, PWp) - lhs[None]).max()
    tag = group.descriptor
    return [
        _le(f"g'Psi = Psi [{tag}]", absorbs, tol),
        _le(f"Psi^T = Psi [{tag}]", symmetric, tol),
        _le(f"PsiPsi = Psi [{tag}]", idempotent, tol),
        _le(f"<w,Psi w'> = <Psi w,w'> [{tag}]", self_adjoint, tol),
        _le(f"<Psi w,Psi w'> = <g'w,Psi w'> [{tag}]", projection, tol),
    ]


def unitarity_checks(group: OrthogonalSet, kernels=None, trials: int = 1000, seed: int = 0,
                     tol: float = 1e-10) -> list[Check]:
    kernels = default_kernels() if kernels is None else kernels
    return [
        _le(f"unitarity {k} [{group.descriptor}]", verify_unitarity(k, group, trials, seed), tol)
        for k in kernels
    ]


def orbit_invariance(handle: InvariantKernel, X: np.ndarray, Y: np.ndarray) -> float:
    """max over rows i and all (g', g'') of ``|k(g'x_i, g''y_i) - k(x_i, y_i)|``."""
    group = handle.observed
    gX = transform(group, X)
    gY = transform(group, Y)
    worst = 0.0
    for i in range(len(X)):
        K = handle.gram(gX[:, i], gY[:, i])
        ref = handle.gram(X[i:i + 1], Y[i:i + 1])[0, 0]
        worst = max(worst, float(np.abs(K - ref).max()))
    return worst


def invariant_kernel_checks(group: OrthogonalSet, kernels=None, pairs: int = 200, seed: int = 0) -> list[Check]:
    if not group.is_exact_group:
        return []
    kernels = default_kernels() if kernels is None else kernels
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((pairs, group.dim))
    Y = rng.standard_normal((pairs, group.dim))
    X /= np.linalg.norm(X, axis=1, keepdims=True)
    Y /= np.linalg.norm(Y, axis=1, keepdims=True)
    out = []
    for k in kernels:
        direct = InvariantKernel(k, "direct", group=group)
        one = InvariantKernel(k, "one_sided", group=group)
        out.append(_le(f"k_Psi(g'x,g''y) = k_Psi(x,y) {k}", orbit_invariance(direct, X, Y), 1e-8))
        out.append(_le(f"one-sided = direct {k}", np.abs(one.gram(X, Y) - direct.gram(X, Y)).max(), 1e-10))
    return out


def feature_invariance_checks(group: OrthogonalSet, samples: int = 200, templates: int = 5, seed: int = 0,
                              poolings=None) -> list[Check]:
    if not group.is_exact_group:
        return []
    poolings = poolings or [PoolingSpec("mean"), PoolingSpec("max"), PoolingSpec("moment", order=3),
                            PoolingSpec("cdf", bins=5, smoothing=0.2)]
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((samples, group.dim))
    X /= np.linalg.norm(X, axis=1, keepdims=True)
    bank = TemplateBank(random_templates(group.dim, templates, seed + 1), group, rbf(1.0))
    gX = transform(group, X)
    out = []
    for pool in poolings:
        ref = kernel_signatures(X, bank, pool)
        worst = max(np.abs(kernel_signatures(gx, bank, pool) - ref).max() for gx in gX)
        out.append(_le(f"signature invariance {pool}", worst, 1e-8))
    return out


def stability_checks(group: OrthogonalSet, pairs: int = 1000, seed: int = 0) -> list[Check]:
    pool = PoolingSpec("mean").compliant()
    out = []
    sets = [group] if group.is_exact_group else []
    sets.append(group.subset([0], "single-element"))
    for g in sets:
        bank = TemplateBank(random_templates(g.dim, 5, seed + 1), g, rbf(1.0))
        rep = check_stability(bank, pool, pairs, seed)
        out.append(Check(f"stability ({rep.bound} bound) [{g.descriptor}]", float(rep.violations), 0.0,
                         rep.violations == 0, f"max slack {rep.max_slack:.3e}"))
    return out


def svm_checks(seed: int = 0, n: int = 20, dim: int = 3) -> list[Check]:
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n, dim))
    y = np.where(X[:, 0] + 0.3 * X[:, 1] >= 0, 1, -1)
    y[:2] = (1, -1)
    model = svm.fit(rbf(1.0), X, y, C=10.0)
    feas = max(abs(float(model.alpha @ model.train_y)), float(max(-model.alpha.min(), model.alpha.max() - model.C / n)))
    return [
        _le("SVM KKT residual", model.kkt_residual, 1e-6),
        _le("SVM dual feasibility", feas, 1e-8),
    ]


def run_all(group: OrthogonalSet, trials: int = 1000, seed: int = 0) -> list[Check]:
    checks = []
    checks += identity_checks(group, trials, seed)
    checks += unitarity_checks(group, trials=trials, seed=seed)
    checks += invariant_kernel_checks(group, pairs=min(200, trials), seed=seed)
    checks += feature_invariance_checks(group, samples=min(200, trials), seed=seed)
    checks += stability_checks(group, pairs=trials, seed=seed)
    checks += svm_checks(seed)
    return checks

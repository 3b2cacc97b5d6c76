"""Group-invariant kernels built by averaging a unitary base kernel.

Three evaluation modes are offered:

``direct``
    ``(1/|G|^2) sum_{g, g'} k(g x, g' y)``, the inner product of the averaged
    feature maps.
``one_sided``
    ``(1/|G|) sum_g k(x, g y)``; equal to ``direct`` only for exact groups.
``template``
    The group is seen only through transformed copies of unlabelled
    templates. Each sample is represented by its coefficients ``u_x`` in the
    span of the template feature maps, and labelled samples are never
    transformed.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy import linalg

from .group_algebra import (
    OrthogonalSet,
    _data_lines,
    read_orthogonal_set_lines,
    transform,
    write_orthogonal_set,
)
from .kernels import KernelSpec, format_kernel, gram_matrix, parse_kernel

MODES = ("direct", "one_sided", "template")


class TemplateBankError(ValueError):
    pass


def random_templates(dim: int, count: int, seed: int) -> np.ndarray:
    """``dim x count`` matrix of unit-norm Gaussian template columns."""
    if dim < 1 or count < 1:
        raise ValueError("dim and count must be >= 1")
    T = np.random.default_rng(seed).standard_normal((dim, count))
    return T / np.linalg.norm(T, axis=0, keepdims=True)


def orbit_templates(group: OrthogonalSet, templates: np.ndarray) -> np.ndarray:
    """Columns ``g t`` for every element and template (a G-closed template set when G is a group)."""
    moved = transform(group, np.asarray(templates, dtype=float).T)
    return moved.reshape(-1, group.dim).T


@dataclass(frozen=True, eq=False)
class TemplateBank:
    """Unlabelled templates, their transformed copies and the template Gram factorization.

    Parameters
    ----------
    templates : (d, M) array
        Template columns ``t_1 .. t_M``.
    group : OrthogonalSet
        Transformations observed on the templates.
    kernel : KernelSpec
        Unitary base kernel.
    ridge : float, optional
        Regularizer added to ``K(T, T)``. Defaults to ``1e-8 * trace(K(T,T)) / M``.
    """

    templates: np.ndarray
    group: OrthogonalSet
    kernel: KernelSpec
    ridge: float | None = None
    transformed: np.ndarray = field(init=False, repr=False)
    gram_TT: np.ndarray = field(init=False, repr=False)
    cross_grams: np.ndarray = field(init=False, repr=False)
    _factor: tuple = field(init=False, repr=False)

    def __post_init__(self):
        T = np.array(self.templates, dtype=float)
        if T.ndim == 1:
            T = T[:, None]
        if T.ndim != 2 or T.shape[0] != self.group.dim:
            raise TemplateBankError(f"templates must be a ({self.group.dim}, M) matrix, got shape {T.shape}")
        if T.shape[1] < 1:
            raise TemplateBankError("at least one template is required")
        if not self.kernel.claims_unitary:
            raise TemplateBankError("template banks need a unitary base kernel")
        T.setflags(write=False)
        object.__setattr__(self, "templates", T)

        moved = transform(self.group, T.T)  # (m, M, d)
        transformed = np.transpose(moved, (0, 2, 1)).copy()
        transformed.setflags(write=False)
        object.__setattr__(self, "transformed", transformed)

        K = gram_matrix(self.kernel, T.T, T.T)
        object.__setattr__(self, "gram_TT", K)
        ridge = 1e-8 * float(np.trace(K)) / T.shape[1] if self.ridge is None else float(self.ridge)
        if ridge < 0:
            raise TemplateBankError("ridge must be nonnegative")
        object.__setattr__(self, "ridge", ridge)
        try:
            factor = linalg.cho_factor(K + ridge * np.eye(len(K)), lower=True)
        except linalg.LinAlgError as exc:
            raise TemplateBankError(f"K(T,T) + ridge*I is not positive definite for ridge={ridge!r}: {exc}") from None
        object.__setattr__(self, "_factor", factor)

        cross = np.stack([gram_matrix(self.kernel, gT, T.T) for gT in moved])
        cross.setflags(write=False)
        object.__setattr__(self, "cross_grams", cross)

    @property
    def dim(self) -> int:
        return self.group.dim

    @property
    def size(self) -> int:
        return self.templates.shape[1]

    @cached_property
    def one_sided_average(self) -> np.ndarray:
        """``(1/|G|) sum_g K(gT, T)``."""
        return self.cross_grams.mean(axis=0)

    @cached_property
    def two_sided_average(self) -> np.ndarray:
        """``(1/|G|^2) sum_{g, g'} K(gT, g'T)``, always symmetric PSD."""
        m, M = len(self.group), self.size
        stacked = np.transpose(self.transformed, (0, 2, 1)).reshape(m * M, self.dim)
        full = gram_matrix(self.kernel, stacked, stacked).reshape(m, M, m, M)
        avg = full.mean(axis=(0, 2))
        return 0.5 * (avg + avg.T)

    def kernel_to_templates(self, X) -> np.ndarray:
        """``K(T, X)``, shape ``(M, N)``."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != self.dim:
            raise ValueError(f"expected rows of length {self.dim}, got {X.shape[1]}")
        return gram_matrix(self.kernel, self.templates.T, X)

    def coefficients(self, X) -> np.ndarray:
        """Template coefficients ``u_x`` as columns, shape ``(M, N)``."""
        return linalg.cho_solve(self._factor, self.kernel_to_templates(X))

    def solve_residual(self, X) -> float:
        """Relative residual of the coefficient solve for the rows of ``X``."""
        rhs = self.kernel_to_templates(X)
        U = linalg.cho_solve(self._factor, rhs)
        lhs = (self.gram_TT + self.ridge * np.eye(self.size)) @ U
        scale = max(np.abs(rhs).max(), np.finfo(float).tiny)
        return float(np.abs(lhs - rhs).max() / scale)


def project_onto_templates(bank: TemplateBank, x) -> np.ndarray:
    """Coefficients ``u_x`` solving ``(K(T,T) + ridge I) u = k(T, x)``."""
    x = np.asarray(x, dtype=float)
    if x.shape != (bank.dim,):
        raise ValueError(f"expected a vector of length {bank.dim}, got shape {x.shape}")
    return bank.coefficients(x[None])[:, 0]


@dataclass(frozen=True, eq=False)
class InvariantKernel:
    """A G-invariant kernel ``k_Psi`` over a unitary base kernel.

    ``template_form`` picks the template-mode average: ``"one_sided"``
    uses ``mean_g K(gT, T)``, ``"two_sided"`` uses ``mean_{g,g'} K(gT, g'T)``.
    The two agree on exact groups. ``"auto"`` takes the one-sided form for
    exact groups and the two-sided form otherwise, which keeps Gram matrices
    symmetric PSD when the observed set is not closed.
    """

    base_kernel: KernelSpec
    mode: str = "direct"
    group: OrthogonalSet | None = None
    bank: TemplateBank | None = None
    template_form: str = "auto"

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}; expected one of {MODES}")
        if not self.base_kernel.claims_unitary:
            raise ValueError("invariant kernels need a unitary base kernel")
        if self.mode == "template":
            if self.bank is None or self.group is not None:
                raise ValueError("template mode takes a bank and no group")
            if self.bank.kernel != self.base_kernel:
                raise ValueError("bank kernel differs from the handle's base kernel")
        else:
            if self.group is None or self.bank is not None:
                raise ValueError(f"{self.mode} mode takes a group and no bank")
        if self.mode == "one_sided" and not self.group.is_exact_group:
            raise ValueError("one-sided averaging equals the invariant kernel only for exact groups")
        if self.template_form not in ("auto", "one_sided", "two_sided"):
            raise ValueError(f"unknown template form {self.template_form!r}")

    @property
    def observed(self) -> OrthogonalSet:
        return self.bank.group if self.mode == "template" else self.group

    @property
    def dim(self) -> int:
        return self.observed.dim

    def _template_matrix(self) -> np.ndarray:
        form = self.template_form
        if form == "auto":
            form = "one_sided" if self.bank.group.is_exact_group else "two_sided"
        return self.bank.one_sided_average if form == "one_sided" else self.bank.two_sided_average

    def _rows(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.ndim != 2 or X.shape[1] != self.dim:
            raise ValueError(f"expected rows of length {self.dim}, got shape {X.shape}")
        return X

    def gram(self, X, Y=None) -> np.ndarray:
        """Invariant kernel matrix between the rows of ``X`` and ``Y``."""
        same = Y is None
        X = self._rows(X)
        Y = X if same else self._rows(Y)
        if self.mode == "direct":
            m = len(self.group)
            gX = transform(self.group, X).reshape(-1, self.dim)
            gY = gX if same else transform(self.group, Y).reshape(-1, self.dim)
            K = gram_matrix(self.base_kernel, gX, gY).reshape(m, len(X), m, len(Y))
            K = K.mean(axis=(0, 2))
        elif self.mode == "one_sided":
            m = len(self.group)
            gY = transform(self.group, Y).reshape(-1, self.dim)
            K = gram_matrix(self.base_kernel, X, gY).reshape(len(X), m, len(Y)).mean(axis=1)
        else:
            UX = self.bank.coefficients(X)
            UY = UX if same else self.bank.coefficients(Y)
            K = UX.T @ self._template_matrix() @ UY
        if same:
            K = 0.5 * (K + K.T)
        return K

    def evaluate(self, x, y) -> float:
        return float(self.gram(np.asarray(x, dtype=float)[None], np.asarray(y, dtype=float)[None])[0, 0])

    __call__ = evaluate


def _require_mode(handle: InvariantKernel, mode: str) -> None:
    if handle.mode != mode:
        raise ValueError(f"handle is in {handle.mode!r} mode, not {mode!r}")


def invariant_eval_direct(handle: InvariantKernel, x, y) -> float:
    _require_mode(handle, "direct")
    return handle.evaluate(x, y)


def invariant_eval_one_sided(handle: InvariantKernel, x, y) -> float:
    _require_mode(handle, "one_sided")
    return handle.evaluate(x, y)


def invariant_eval_template(handle: InvariantKernel, x, y) -> float:
    _require_mode(handle, "template")
    return handle.evaluate(x, y)


def invariant_gram(handle: InvariantKernel, X, Y=None) -> np.ndarray:
    return handle.gram(X, Y)


# ---------------------------------------------------------------------------
# serialization


def save_bank(bank: TemplateBank, path: str | os.PathLike) -> None:
    """Write the group block, then the template block and the kernel/ridge settings."""
    with open(path, "w", encoding="utf-8") as fh:
        write_orthogonal_set(bank.group, fh)
        d, M = bank.templates.shape
        fh.write(f"templates {d} {M}\n")
        for row in bank.templates:
            fh.write(" ".join(repr(float(v)) for v in row) + "\n")
        fh.write(f"kernel {format_kernel(bank.kernel)}\n")
        fh.write(f"ridge {float(bank.ridge)!r}\n")


def load_bank(path: str | os.PathLike) -> TemplateBank:
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    desc = next((ln[2:].strip() for ln in text.splitlines() if ln.startswith("# ")), f"file({os.fspath(path)})")
    lines = _data_lines(iter(text.splitlines()))
    group = read_orthogonal_set_lines(lines, desc)
    head = next(lines).split()
    if len(head) != 3 or head[0] != "templates":
        raise ValueError(f"expected 'templates d M', got {head!r}")
    d, M = int(head[1]), int(head[2])
    T = np.array([[float(v) for v in next(lines).split()] for _ in range(d)], dtype=float)
    if T.shape != (d, M):
        raise ValueError(f"template block has shape {T.shape}, header says {(d, M)}")
    settings = dict(line.split(None, 1) for line in lines)
    kernel = parse_kernel(settings.get("kernel", "rbf"))
    ridge = float(settings["ridge"]) if "ridge" in settings else None
    return TemplateBank(T, group, kernel, ridge)

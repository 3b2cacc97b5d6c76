"""Finite orthogonal transformation sets and group averaging.

Group integration over a finite set is the arithmetic mean of its elements.
For exact groups the averaging operator is a symmetric projection onto the
invariant subspace; for arbitrary observed subsets none of that is promised.
"""

from __future__ import annotations

import contextlib
import io
import itertools
import math
import os
from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np

ORTHOGONALITY_TOL = 1e-10
CLOSURE_TOL = 1e-10
DISTINCT_TOL = 1e-8
MAX_GROUP_ORDER = 10_000

# Active recorders for group actions applied through ``transform``.
_ACTION_RECORDERS: list[list[np.ndarray]] = []


class GroupError(ValueError):
    """Raised when a transformation set violates its declared structure."""


def _signature_weights(dim: int) -> np.ndarray:
    # Fixed pseudo-random weights used to hash matrices to scalars for matching.
    return np.random.default_rng(12345).uniform(0.5, 1.5, size=(dim, dim))


def _match_indices(candidates: np.ndarray, elements: np.ndarray, tol: float) -> np.ndarray:
    """Index into ``elements`` of each candidate matrix, or -1 when absent."""
    weights = _signature_weights(elements.shape[1])
    sig = np.einsum("mij,ij->m", elements, weights)
    order = np.argsort(sig)
    sorted_sig = sig[order]
    cand_sig = np.einsum("mij,ij->m", candidates, weights)
    pos = np.searchsorted(sorted_sig, cand_sig)
    out = np.full(len(candidates), -1, dtype=int)
    for offset in (-1, 0, 1):
        idx = np.clip(pos + offset, 0, len(sig) - 1)
        hit = order[idx]
        diff = np.abs(candidates - elements[hit]).max(axis=(1, 2))
        ok = (diff <= tol) & (out < 0)
        out[ok] = hit[ok]
    missing = np.flatnonzero(out < 0)
    for c in missing:
        diff = np.abs(elements - candidates[c]).max(axis=(1, 2))
        j = int(np.argmin(diff))
        if diff[j] <= tol:
            out[c] = j
    return out


def _check_distinct(elements: np.ndarray) -> None:
    weights = _signature_weights(elements.shape[1])
    sig = np.einsum("mij,ij->m", elements, weights)
    order = np.argsort(sig)
    window = DISTINCT_TOL * weights.sum()
    for a in range(len(order)):
        b = a + 1
        while b < len(order) and sig[order[b]] - sig[order[a]] <= window:
            i, j = order[a], order[b]
            if np.abs(elements[i] - elements[j]).max() <= DISTINCT_TOL:
                raise GroupError(f"elements {min(i, j)} and {max(i, j)} coincide")
            b += 1


def verify_closure(elements: np.ndarray, tol: float = CLOSURE_TOL) -> None:
    """Check identity, inverses and closure under composition exhaustively.

    Every pairwise product is matched against the element list within ``tol``.
    Raises :class:`GroupError` naming the first failure.
    """
    m, d, _ = elements.shape
    eye = np.eye(d)[None]
    if _match_indices(eye, elements, tol)[0] < 0:
        raise GroupError("identity is missing")
    inv = _match_indices(np.transpose(elements, (0, 2, 1)), elements, tol)
    if (inv < 0).any():
        raise GroupError(f"inverse of element {int(np.flatnonzero(inv < 0)[0])} is missing")
    for i in range(m):
        products = np.matmul(elements[i], elements)
        hits = _match_indices(products, elements, tol)
        if (hits < 0).any():
            j = int(np.flatnonzero(hits < 0)[0])
            raise GroupError(f"product of elements {i} and {j} is not in the set")


@dataclass(frozen=True, eq=False)
class OrthogonalSet:
    """An ordered, immutable collection of ``d x d`` orthogonal matrices.

    ``is_exact_group`` declares closure under composition and inverse; it is
    verified exhaustively at construction, so an instance flagged exact is a
    genuine finite group.
    """

    dim: int
    elements: np.ndarray
    is_exact_group: bool = False
    descriptor: str = ""

    def __post_init__(self):
        arr = np.array(self.elements, dtype=float, copy=True)
        if arr.ndim == 2:
            arr = arr[None]
        if arr.ndim != 3 or arr.shape[1:] != (self.dim, self.dim):
            raise GroupError(f"elements must have shape (m, {self.dim}, {self.dim}), got {arr.shape}")
        if self.dim < 1 or arr.shape[0] < 1:
            raise GroupError("an orthogonal set needs dim >= 1 and at least one element")
        if not np.isfinite(arr).all():
            raise GroupError("elements contain non-finite entries")
        gram = np.matmul(np.transpose(arr, (0, 2, 1)), arr)
        err = np.abs(gram - np.eye(self.dim)).max(axis=(1, 2))
        if (err > ORTHOGONALITY_TOL).any():
            bad = int(np.argmax(err))
            raise GroupError(f"element {bad} is not orthogonal (|g^T g - I|_max = {err[bad]:.3e})")
        _check_distinct(arr)
        if self.is_exact_group:
            if arr.shape[0] > MAX_GROUP_ORDER:
                raise GroupError(f"group order {arr.shape[0]} exceeds cap {MAX_GROUP_ORDER}")
            verify_closure(arr)
        arr.setflags(write=False)
        object.__setattr__(self, "elements", arr)

    def __len__(self) -> int:
        return self.elements.shape[0]

    def __iter__(self) -> Iterator[np.ndarray]:
        return iter(self.elements)

    def __getitem__(self, index: int) -> np.ndarray:
        return self.elements[index]

    @property
    def order(self) -> int:
        return len(self)

    def subset(self, indices: Sequence[int], descriptor: str | None = None) -> "OrthogonalSet":
        """Observed subset G0 (never flagged as an exact group)."""
        idx = list(indices)
        desc = descriptor or f"subset({self.descriptor},{idx})"
        return OrthogonalSet(self.dim, self.elements[idx], False, desc)


@dataclass(frozen=True, eq=False)
class GroupAverageOperator:
    """The mean ``Psi = (1/|G|) sum_g g`` of an orthogonal set."""

    dim: int
    matrix: np.ndarray
    source: OrthogonalSet = field(repr=False)

    def __post_init__(self):
        if self.source.is_exact_group:
            m = self.matrix
            if np.abs(m @ m - m).max() > CLOSURE_TOL or np.abs(m.T - m).max() > CLOSURE_TOL:
                raise GroupError("group average of an exact group is not a symmetric projection")

    def __matmul__(self, other):
        return self.matrix @ other

    def project(self, X: np.ndarray) -> np.ndarray:
        """Apply Psi to a vector or to each row of a matrix."""
        X = np.asarray(X, dtype=float)
        return X @ self.matrix.T


def group_average(group: OrthogonalSet) -> GroupAverageOperator:
    matrix = group.elements.mean(axis=0)
    matrix.setflags(write=False)
    return GroupAverageOperator(group.dim, matrix, group)


# ---------------------------------------------------------------------------
# group actions


@contextlib.contextmanager
def record_group_actions():
    """Collect every array passed through :func:`transform` while active.

    Yields a list that receives the (untransformed) input rows of each call.
    """
    log: list[np.ndarray] = []
    _ACTION_RECORDERS.append(log)
    try:
        yield log
    finally:
        _ACTION_RECORDERS.remove(log)


def transform(group: OrthogonalSet, X: np.ndarray) -> np.ndarray:
    """Apply every element to every row of ``X``.

    Returns an array of shape ``(|G|, N, d)`` whose entry ``[g, i]`` is ``g @ X[i]``.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.shape[1] != group.dim:
        raise ValueError(f"expected rows of length {group.dim}, got {X.shape[1]}")
    for log in _ACTION_RECORDERS:
        log.append(X.copy())
    return np.einsum("gij,nj->gni", group.elements, X)


def apply_group_element(group: OrthogonalSet, index: int, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape != (group.dim,):
        raise ValueError(f"expected a vector of length {group.dim}, got shape {x.shape}")
    if not -len(group) <= index < len(group):
        raise IndexError(f"element index {index} out of range for |G| = {len(group)}")
    for log in _ACTION_RECORDERS:
        log.append(x[None].copy())
    return group.elements[index] @ x


# ---------------------------------------------------------------------------
# constructors


def haar_orthogonal(dim: int, rng: np.random.Generator) -> np.ndarray:
    """One Haar-distributed orthogonal matrix (QR with sign-corrected R diagonal)."""
    z = rng.standard_normal((dim, dim))
    q, r = np.linalg.qr(z)
    signs = np.sign(np.diag(r))
    signs[signs == 0] = 1.0
    return q * signs


def sample_orthogonal_set(dim: int, count: int, seed: int, include_identity: bool = False) -> OrthogonalSet:
    """Draw ``count`` distinct Haar-random orthogonal matrices.

    With ``include_identity`` the first element is the identity and the
    remaining ``count - 1`` are random. The draw is deterministic in
    ``(dim, count, seed, include_identity)``.
    """
    if dim < 1:
        raise ValueError("dim must be >= 1")
    if count < 1:
        raise ValueError("count must be >= 1")
    rng = np.random.default_rng(seed)
    elements: list[np.ndarray] = [np.eye(dim)] if include_identity else []
    attempts = 0
    while len(elements) < count:
        g = haar_orthogonal(dim, rng)
        attempts += 1
        if all(np.abs(g - h).max() > DISTINCT_TOL for h in elements):
            elements.append(g)
        elif attempts > 100 * count:
            raise GroupError(f"cannot draw {count} distinct orthogonal matrices in dimension {dim}")
    tag = ",identity" if include_identity else ""
    return OrthogonalSet(dim, np.stack(elements), False, f"random(seed={seed},m={count}{tag})")


def sample_orthogonal_group(dim: int, order: int, seed: int) -> OrthogonalSet:
    """A random finite group of ``order`` orthogonal matrices.

    The group is cyclic, generated by ``Q R Q^T`` with ``Q`` Haar-random and
    ``R`` block-diagonal with plane rotations by ``2 pi f_p / order``. The
    first frequency is 1, so the generator has exactly the requested order;
    the remaining frequencies are drawn from ``1 .. order - 1``.
    """
    if dim < 1 or order < 1:
        raise ValueError("dim and order must be >= 1")
    _check_cap(order)
    if dim == 1 and order > 2:
        raise GroupError("dimension 1 admits orthogonal groups of order at most 2")
    rng = np.random.default_rng(seed)
    q = haar_orthogonal(dim, rng)
    planes = dim // 2
    freqs = np.ones(max(planes, 1), dtype=int)
    if order > 1 and planes > 1:
        freqs[1:] = rng.integers(1, order, size=planes - 1)
    elements = []
    for j in range(order):
        r = np.eye(dim)
        if dim == 1:
            r[0, 0] = -1.0 if j % 2 else 1.0
        for p in range(planes):
            theta = 2.0 * math.pi * freqs[p] * j / order
            c, s = math.cos(theta), math.sin(theta)
            r[2 * p:2 * p + 2, 2 * p:2 * p + 2] = [[c, -s], [s, c]]
        elements.append(q @ r @ q.T)
    return OrthogonalSet(dim, np.stack(elements), True, f"random-cyclic-group(seed={seed},order={order})")


def _embed(blocks: np.ndarray, dim: int, offset: int = 0) -> np.ndarray:
    m, n, _ = blocks.shape
    if offset + n > dim:
        raise ValueError(f"cannot embed a {n}-dimensional action at offset {offset} into dimension {dim}")
    out = np.tile(np.eye(dim), (m, 1, 1))
    out[:, offset:offset + n, offset:offset + n] = blocks
    return out


def embed_group(group: OrthogonalSet, dim: int, offset: int = 0) -> OrthogonalSet:
    """Act with ``group`` on coordinates ``offset .. offset+group.dim`` of R^dim."""
    elements = _embed(group.elements, dim, offset)
    desc = f"embed({group.descriptor},dim={dim},offset={offset})"
    return OrthogonalSet(dim, elements, group.is_exact_group, desc)


def cyclic_rotation(order: int, dim: int = 2, plane: tuple[int, int] = (0, 1)) -> OrthogonalSet:
    """Rotations by multiples of ``2 pi / order`` in one coordinate plane."""
    if order < 1:
        raise ValueError("order must be >= 1")
    p, q = plane
    if p == q or not (0 <= p < dim and 0 <= q < dim):
        raise ValueError(f"invalid rotation plane {plane} for dimension {dim}")
    if order > MAX_GROUP_ORDER:
        raise GroupError(f"group order {order} exceeds cap {MAX_GROUP_ORDER}")
    elements = np.tile(np.eye(dim), (order, 1, 1))
    for j in range(order):
        theta = 2.0 * math.pi * j / order
        c, s = math.cos(theta), math.sin(theta)
        elements[j, p, p], elements[j, p, q] = c, -s
        elements[j, q, p], elements[j, q, q] = s, c
    return OrthogonalSet(dim, elements, True, f"cyclic-rotation(plane=({p},{q}),order={order})")


def _check_cap(order: int) -> None:
    if order > MAX_GROUP_ORDER:
        raise GroupError(f"group order {order} exceeds cap {MAX_GROUP_ORDER}")


def permutations(n: int, dim: int | None = None) -> OrthogonalSet:
    """All ``n!`` coordinate permutation matrices, acting on the first ``n`` axes of R^dim."""
    if n < 1:
        raise ValueError("n must be >= 1")
    _check_cap(math.factorial(n))
    eye = np.eye(n)
    blocks = np.stack([eye[list(p)] for p in itertools.permutations(range(n))])
    dim = n if dim is None else dim
    return OrthogonalSet(dim, _embed(blocks, dim), True, f"permutations(n={n},dim={dim})")


def signed_permutations(n: int, dim: int | None = None) -> OrthogonalSet:
    """The hyperoctahedral group: ``2^n n!`` signed permutation matrices."""
    if n < 1:
        raise ValueError("n must be >= 1")
    _check_cap(2**n * math.factorial(n))
    eye = np.eye(n)
    blocks = [
        np.diag(signs) @ eye[list(p)]
        for p in itertools.permutations(range(n))
        for signs in itertools.product((1.0, -1.0), repeat=n)
    ]
    dim = n if dim is None else dim
    return OrthogonalSet(dim, _embed(np.stack(blocks), dim), True, f"signed-permutations(n={n},dim={dim})")


def reflection(dim: int = 2, axis: int = 1) -> OrthogonalSet:
    """The order-2 group ``{I, diag(..., -1 at axis, ...)}``."""
    if not 0 <= axis < dim:
        raise ValueError(f"axis {axis} out of range for dimension {dim}")
    flip = np.eye(dim)
    flip[axis, axis] = -1.0
    return OrthogonalSet(dim, np.stack([np.eye(dim), flip]), True, f"reflection(axis={axis},dim={dim})")


def cyclic_shift(n: int, dim: int | None = None) -> OrthogonalSet:
    """Cyclic coordinate shifts of the first ``n`` axes (regular representation of Z_n)."""
    if n < 1:
        raise ValueError("n must be >= 1")
    _check_cap(n)
    eye = np.eye(n)
    blocks = np.stack([np.roll(eye, j, axis=0) for j in range(n)])
    dim = n if dim is None else dim
    return OrthogonalSet(dim, _embed(blocks, dim), True, f"cyclic-shift(n={n},dim={dim})")


def _parse_params(text: str) -> dict[str, str]:
    params = {}
    for item in filter(None, text.split(",")):
        if "=" not in item:
            raise ValueError(f"expected key=value, got {item!r}")
        key, value = item.split("=", 1)
        params[key.strip()] = value.strip()
    return params


def make_exact_group(spec: str, dim: int | None = None) -> OrthogonalSet:
    """Build an exact group from a short textual description.

    Grammar::

        cyclic:order=<int>[,plane=<p>-<q>]
        perm:n=<int>
        signed:n=<int>
        reflection[:axis=<int>]
        shift:n=<int>

    ``dim`` sets the ambient dimension; the action is embedded on the leading
    coordinates when it is larger than the group's natural dimension.
    """
    kind, _, rest = spec.partition(":")
    params = _parse_params(rest)
    kind = kind.strip().lower()
    try:
        if kind in ("cyclic", "cyclic_rotation", "rotation"):
            plane = tuple(int(v) for v in params.pop("plane", "0-1").split("-"))
            group = cyclic_rotation(int(params.pop("order")), dim or 2, plane)
        elif kind in ("perm", "permutations"):
            n = int(params.pop("n", dim or 0))
            group = permutations(n, dim)
        elif kind in ("signed", "signed_permutations"):
            n = int(params.pop("n", dim or 0))
            group = signed_permutations(n, dim)
        elif kind == "reflection":
            group = reflection(dim or 2, int(params.pop("axis", 1)))
        elif kind in ("shift", "cyclic_shift"):
            n = int(params.pop("n", dim or 0))
            group = cyclic_shift(n, dim)
        else:
            raise ValueError(f"unknown group kind {kind!r}")
    except KeyError as exc:
        raise ValueError(f"group spec {spec!r} is missing parameter {exc.args[0]!r}") from None
    if params:
        raise ValueError(f"unused group parameters {sorted(params)} in {spec!r}")
    return group


def resolve_group(spec: str, dim: int | None = None) -> OrthogonalSet:
    """Exact-group spec, a sampled set or group, or a path to a saved set.

    Beyond :func:`make_exact_group` this accepts::

        random:m=<int>,seed=<int>[,identity=1]    independent Haar draws
        random-group:order=<int>,seed=<int>        random conjugate of a cyclic group
    """
    if os.path.isfile(spec):
        group = load_orthogonal_set(spec)
        if dim is not None and group.dim != dim:
            raise GroupError(f"{spec} holds a d={group.dim} set, expected d={dim}")
        return group
    kind, _, rest = spec.partition(":")
    kind = kind.strip().lower()
    if kind not in ("random", "random-group"):
        return make_exact_group(spec, dim)
    if dim is None:
        raise ValueError(f"{kind} groups need an explicit dimension")
    params = _parse_params(rest)
    try:
        seed = int(params.pop("seed", 0))
        if kind == "random":
            identity = params.pop("identity", "0").lower() in ("1", "true", "yes")
            group = sample_orthogonal_set(dim, int(params.pop("m")), seed, identity)
        else:
            group = sample_orthogonal_group(dim, int(params.pop("order")), seed)
    except KeyError as exc:
        raise ValueError(f"group spec {spec!r} is missing parameter {exc.args[0]!r}") from None
    if params:
        raise ValueError(f"unused group parameters {sorted(params)} in {spec!r}")
    return group


# ---------------------------------------------------------------------------
# serialization


def write_orthogonal_set(group: OrthogonalSet, stream) -> None:
    stream.write(f"{group.dim} {len(group)} {int(group.is_exact_group)}\n")
    for g in group.elements:
        for row in g:
            stream.write(" ".join(repr(float(v)) for v in row) + "\n")
    if group.descriptor:
        stream.write(f"# {group.descriptor}\n")


def _data_lines(stream) -> Iterator[str]:
    for line in stream:
        line = line.strip()
        if line and not line.startswith("#"):
            yield line


def read_orthogonal_set_lines(lines: Iterator[str], descriptor: str = "") -> OrthogonalSet:
    header = next(lines).split()
    if len(header) != 3:
        raise ValueError(f"bad orthogonal set header {header!r}")
    dim, count = int(header[0]), int(header[1])
    exact = header[2].lower() in ("1", "true", "yes")
    rows = [[float(v) for v in next(lines).split()] for _ in range(dim * count)]
    if any(len(r) != dim for r in rows):
        raise ValueError("ragged matrix block in orthogonal set file")
    elements = np.array(rows, dtype=float).reshape(count, dim, dim)
    return OrthogonalSet(dim, elements, exact, descriptor)


def save_orthogonal_set(group: OrthogonalSet, path: str | os.PathLike) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        write_orthogonal_set(group, fh)


def load_orthogonal_set(path: str | os.PathLike) -> OrthogonalSet:
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    desc = f"file({os.fspath(path)})"
    for line in text.splitlines():
        if line.startswith("# "):
            desc = line[2:].strip()
    return read_orthogonal_set_lines(_data_lines(io.StringIO(text)), desc)

"""Cross-validated benchmark protocol with transformed test folds.

Training folds are never transformed. Test folds are multiplied by an
observed set G0 of orthogonal transformations, and the group is seen by the
invariant methods only through transformed unlabelled templates.
"""

from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass, field, fields

import numpy as np

from . import svm
from .group_algebra import OrthogonalSet, sample_orthogonal_group, sample_orthogonal_set, transform
from .invariant_features import PoolingSpec, kernel_signatures, linear_signatures, parse_pooling
from .invariant_kernel import InvariantKernel, TemplateBank, orbit_templates, random_templates
from .kernels import KernelSpec, format_kernel, linear, parse_kernel, polynomial, rbf

log = logging.getLogger(__name__)

FEATURE_COLUMNS = ("Raw X_Te", "Raw X_G0Te", "mu(X_G0Te)", "Upsilon(X_G0Te)_RBF", "Upsilon(X_G0Te)_poly")
KERNEL_COLUMNS = ("X_Te", "S.K X_G0Te", "I.K X_G0Te")


@dataclass(frozen=True, eq=False)
class Dataset:
    X: np.ndarray
    y: np.ndarray
    name: str = "data"
    normalized: bool = False

    def __post_init__(self):
        X = np.atleast_2d(np.asarray(self.X, dtype=float))
        y = np.asarray(self.y).ravel().astype(int)
        if len(X) != len(y):
            raise ValueError(f"{len(X)} rows but {len(y)} labels")
        if not np.isfinite(X).all():
            raise ValueError("dataset contains non-finite entries")
        if not np.isin(y, (-1, 1)).all():
            raise ValueError("labels must be +1 or -1")
        if self.normalized:
            err = np.abs(np.linalg.norm(X, axis=1) - 1.0)
            if len(err) and err.max() > 1e-10:
                raise ValueError(f"row {int(np.argmax(err))} is not unit norm")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)

    def __len__(self) -> int:
        return len(self.y)

    @property
    def dim(self) -> int:
        return self.X.shape[1]

    def take(self, idx) -> "Dataset":
        return Dataset(self.X[idx], self.y[idx], self.name, self.normalized)


def normalize_rows(X: np.ndarray) -> np.ndarray:
    """Scale every row to unit Euclidean norm; zero rows are an error."""
    X = np.asarray(X, dtype=float)
    norms = np.linalg.norm(X, axis=1)
    zero = np.flatnonzero(norms == 0)
    if zero.size:
        raise ValueError(f"row {int(zero[0])} has zero norm and cannot be normalized")
    return X / norms[:, None]


def _label_key(value: str):
    try:
        return (0, float(value), value)
    except ValueError:
        return (1, 0.0, value)


def load_csv(path, label_column: str = "last", delimiter: str = ",", normalize: bool = True,
             name: str | None = None) -> Dataset:
    """Read a numeric CSV with one label column.

    The two distinct raw labels are mapped to -1 and +1 in sorted order
    (numerically when both parse as numbers). A non-numeric first row is
    treated as a header.
    """
    if label_column not in ("first", "last"):
        raise ValueError("label_column must be 'first' or 'last'")
    with open(path, newline="", encoding="utf-8") as fh:
        rows = [r for r in csv.reader(fh, delimiter=delimiter) if r and any(c.strip() for c in r)]
    if not rows:
        raise ValueError(f"{path} has no data rows")
    width = len(rows[0])
    for lineno, r in enumerate(rows, 1):
        if len(r) != width:
            raise ValueError(f"ragged row {lineno}: {len(r)} fields, expected {width}")

    def split(r):
        return (r[0], r[1:]) if label_column == "first" else (r[-1], r[:-1])

    try:
        [float(v) for v in split(rows[0])[1]]
    except ValueError:
        rows = rows[1:]
    labels, feats = zip(*(split(r) for r in rows))
    try:
        X = np.array([[float(v) for v in f] for f in feats], dtype=float)
    except ValueError as exc:
        raise ValueError(f"non-numeric feature in {path}: {exc}") from None
    raw = [v.strip() for v in labels]
    distinct = sorted(set(raw), key=_label_key)
    if len(distinct) != 2:
        raise ValueError(f"expected exactly 2 label values, found {len(distinct)}: {distinct[:5]}")
    remap = {distinct[0]: -1, distinct[1]: 1}
    y = np.array([remap[v] for v in raw])
    if normalize:
        X = normalize_rows(X)
    return Dataset(X, y, name or str(path), normalize)


def write_csv(dataset: Dataset, path, delimiter: str = ",") -> None:
    """Write features followed by the label column."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, delimiter=delimiter)
        for x, label in zip(dataset.X, dataset.y):
            writer.writerow([repr(float(v)) for v in x] + [int(label)])


def synthetic_dataset(n: int = 400, dim: int = 20, seed: int = 0, separation: float = 1.2,
                      spread: float = 0.25) -> Dataset:
    """Two Gaussian classes with means ``+/- separation * e`` for a random unit ``e``, then unit-normalized."""
    rng = np.random.default_rng(seed)
    direction = rng.standard_normal(dim)
    direction /= np.linalg.norm(direction)
    y = np.where(np.arange(n) % 2 == 0, 1, -1)
    X = y[:, None] * separation * direction + spread * rng.standard_normal((n, dim))
    perm = rng.permutation(n)
    return Dataset(normalize_rows(X[perm]), y[perm], "synthetic", True)


@dataclass(frozen=True)
class FoldPlan:
    n: int
    test_folds: tuple

    def split(self, k: int) -> tuple[np.ndarray, np.ndarray]:
        test = self.test_folds[k]
        mask = np.ones(self.n, dtype=bool)
        mask[test] = False
        return np.flatnonzero(mask), test

    def __len__(self) -> int:
        return len(self.test_folds)


def make_folds(n: int, folds: int, seed: int) -> FoldPlan:
    """Seeded random partition of ``range(n)`` into ``folds`` near-equal test folds."""
    if folds < 1:
        raise ValueError("folds must be >= 1")
    if folds > n:
        raise ValueError(f"cannot split {n} samples into {folds} folds")
    perm = np.random.default_rng(seed).permutation(n)
    return FoldPlan(n, tuple(np.sort(chunk) for chunk in np.array_split(perm, folds)))


def augment_test_fold(test: Dataset, group: OrthogonalSet) -> Dataset:
    """Every row transformed by every element; row ``g * N + i`` is ``g x_i``."""
    if test.dim != group.dim:
        raise ValueError(f"dataset dimension {test.dim} differs from group dimension {group.dim}")
    moved = transform(group, test.X).reshape(-1, test.dim)
    return Dataset(moved, np.tile(test.y, len(group)), test.name, test.normalized)


# ---------------------------------------------------------------------------
# configuration


def _parse_kernel_list(text: str) -> tuple:
    return tuple(parse_kernel(part) for part in text.split(";") if part.strip())


@dataclass(frozen=True)
class ExperimentConfig:
    folds: int = 10
    group_size: int = 10
    template_count: int = 100
    kernels: tuple = (rbf(1.0), polynomial(2, 1.0))
    pooling: PoolingSpec = PoolingSpec("max")
    group_seed: int = 0
    template_seed: int = 1
    fold_seed: int = 2
    data_seed: int = 3
    include_identity: bool = False
    group_kind: str = "group"
    template_span: str = "orbit"
    C: float = 1e4
    tol: float = 1e-6

    def __post_init__(self):
        for name in ("folds", "group_size", "template_count"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if not self.C > 0:
            raise ValueError("C must be positive")
        if self.group_kind not in ("group", "set"):
            raise ValueError("group_kind must be 'group' or 'set'")
        if self.template_span not in ("orbit", "templates"):
            raise ValueError("template_span must be 'orbit' or 'templates'")

    @classmethod
    def from_mapping(cls, values: dict) -> "ExperimentConfig":
        """Build from flat string values (config file lines or CLI flags)."""
        kwargs = {}
        known = {f.name: f for f in fields(cls)}
        for key, raw in values.items():
            key = key.replace("-", "_")
            if key not in known:
                raise ValueError(f"unknown config key {key!r}")
            if raw is None:
                continue
            if key == "kernels":
                kwargs[key] = _parse_kernel_list(raw) if isinstance(raw, str) else tuple(raw)
            elif key == "pooling":
                kwargs[key] = parse_pooling(raw) if isinstance(raw, str) else raw
            elif key == "include_identity":
                kwargs[key] = raw if isinstance(raw, bool) else str(raw).lower() in ("1", "true", "yes")
            elif key in ("C", "tol"):
                kwargs[key] = float(raw)
            elif key in ("group_kind", "template_span"):
                kwargs[key] = str(raw)
            else:
                kwargs[key] = int(raw)
        return cls(**kwargs)

    @classmethod
    def from_file(cls, path) -> "ExperimentConfig":
        return cls.from_mapping(read_config(path))

    def override(self, values: dict) -> "ExperimentConfig":
        merged = {k: v for k, v in self.to_mapping().items()}
        merged.update({k.replace("-", "_"): v for k, v in values.items() if v is not None})
        return ExperimentConfig.from_mapping(merged)

    def to_mapping(self) -> dict:
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            if f.name == "kernels":
                v = ";".join(format_kernel(k) for k in v)
            elif f.name == "pooling" or isinstance(v, bool):
                v = str(v).lower() if isinstance(v, bool) else str(v)
            else:
                v = repr(v) if isinstance(v, float) else str(v)
            out[f.name] = v
        return out

    def to_text(self) -> str:
        return "".join(f"{k}={v}\n" for k, v in self.to_mapping().items())

    def kernel_of(self, kind: str) -> KernelSpec:
        for k in self.kernels:
            if k.kind == kind:
                return k
        raise ValueError(f"config has no {kind} kernel")


def read_config(path) -> dict:
    """Flat ``key=value`` file; ``#`` starts a comment."""
    values = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, value = line.partition("=")
            if not sep:
                raise ValueError(f"{path}:{lineno}: expected key=value")
            values[key.strip()] = value.strip()
    return values


# ---------------------------------------------------------------------------
# reports


@dataclass
class ReportTable:
    title: str
    columns: tuple
    rows: list = field(default_factory=list)  # (dataset name, [accuracy % per column])
    fold_scores: dict = field(default_factory=dict)  # dataset name -> (folds, columns) array

    def add(self, name: str, scores: np.ndarray) -> None:
        scores = np.asarray(scores, dtype=float)
        self.fold_scores[name] = scores
        self.rows.append((name, [float(v) for v in 100.0 * scores.mean(axis=0)]))

    def value(self, name: str, column: str) -> float:
        for row_name, vals in self.rows:
            if row_name == name:
                return vals[self.columns.index(column)]
        raise KeyError(name)

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(("Dataset",) + tuple(self.columns))
        for name, vals in self.rows:
            writer.writerow([name] + [f"{v:.2f}" for v in vals])
        return buf.getvalue()

    def to_text(self) -> str:
        header = ("Dataset",) + tuple(self.columns)
        body = [[name] + [f"{v:.2f}" for v in vals] for name, vals in self.rows]
        widths = [max(len(str(r[i])) for r in [header] + body) for i in range(len(header))]

        def fmt(r):
            return " | ".join(str(c).ljust(w) if i == 0 else str(c).rjust(w) for i, (c, w) in enumerate(zip(r, widths)))

        rule = "-+-".join("-" * w for w in widths)
        return "\n".join([self.title, fmt(header), rule] + [fmt(r) for r in body]) + "\n"


# ---------------------------------------------------------------------------
# experiments


def observed_group(config: ExperimentConfig, dim: int) -> OrthogonalSet:
    """G0 from the group seed: a random cyclic group, or independent Haar draws for ``group_kind=set``."""
    if config.group_kind == "group":
        return sample_orthogonal_group(dim, config.group_size, config.group_seed)
    return sample_orthogonal_set(dim, config.group_size, config.group_seed, config.include_identity)


def _accuracy(model: svm.SvmModel, X, y) -> float:
    return float((model.predict(X) == y).mean())


def _linear_accuracies(train_F, train_y, tests, config) -> list[float]:
    model = svm.fit(linear(), train_F, train_y, C=config.C, tol=config.tol)
    if not model.converged:
        log.warning("linear SVM hit the iteration cap (KKT residual %.3g)", model.kkt_residual)
    return [_accuracy(model, F, y) for F, y in tests]


def _flatten(S: np.ndarray) -> np.ndarray:
    return S.reshape(len(S), -1)


def run_feature_experiment(config: ExperimentConfig, dataset: Dataset) -> ReportTable:
    """Linear SVMs on raw, linear-signature and kernel-signature features.

    Trained on untransformed training folds, tested on the G0-augmented test
    fold; raw features are also scored on the untransformed test fold.
    """
    if not dataset.normalized:
        raise ValueError("the benchmark protocol expects a normalized dataset")
    group = observed_group(config, dataset.dim)
    templates = random_templates(dataset.dim, config.template_count, config.template_seed)
    banks = {kind: TemplateBank(templates, group, config.kernel_of(kind)) for kind in ("rbf", "poly")}
    plan = make_folds(len(dataset), config.folds, config.fold_seed)
    pool = config.pooling
    scores = []
    for k in range(len(plan)):
        tr, te = plan.split(k)
        train, test = dataset.take(tr), dataset.take(te)
        aug = augment_test_fold(test, group)
        raw_te, raw_aug = _linear_accuracies(train.X, train.y, [(test.X, test.y), (aug.X, aug.y)], config)
        (mu,) = _linear_accuracies(
            _flatten(linear_signatures(train.X, group, templates, pool)), train.y,
            [(_flatten(linear_signatures(aug.X, group, templates, pool)), aug.y)], config)
        ups = []
        for kind in ("rbf", "poly"):
            bank = banks[kind]
            (acc,) = _linear_accuracies(
                _flatten(kernel_signatures(train.X, bank, pool)), train.y,
                [(_flatten(kernel_signatures(aug.X, bank, pool)), aug.y)], config)
            ups.append(acc)
        scores.append([raw_te, raw_aug, mu] + ups)
        log.info("fold %d: %s", k, scores[-1])
    table = ReportTable("Mean %d-fold accuracy (%%), linear SVM on features" % len(plan), FEATURE_COLUMNS)
    table.add(dataset.name, np.array(scores))
    return table


def run_kernel_experiment(config: ExperimentConfig, dataset: Dataset) -> ReportTable:
    """Standard RBF SVM against the template-based invariant-kernel SVM."""
    if not dataset.normalized:
        raise ValueError("the benchmark protocol expects a normalized dataset")
    group = observed_group(config, dataset.dim)
    templates = random_templates(dataset.dim, config.template_count, config.template_seed)
    base = config.kernel_of("rbf")
    if config.template_span == "orbit":
        # span the coefficient solve with every observed transformed template
        templates = orbit_templates(group, templates)
    invariant = InvariantKernel(base, "template", bank=TemplateBank(templates, group, base))
    plan = make_folds(len(dataset), config.folds, config.fold_seed)
    scores = []
    for k in range(len(plan)):
        tr, te = plan.split(k)
        train, test = dataset.take(tr), dataset.take(te)
        aug = augment_test_fold(test, group)
        standard = svm.fit(base, train.X, train.y, C=config.C, tol=config.tol)
        inv = svm.fit(invariant, train.X, train.y, C=config.C, tol=config.tol)
        scores.append([
            _accuracy(standard, test.X, test.y),
            _accuracy(standard, aug.X, aug.y),
            _accuracy(inv, aug.X, aug.y),
        ])
        log.info("fold %d: %s", k, scores[-1])
    table = ReportTable("Mean %d-fold accuracy (%%), standard vs invariant kernel SVM" % len(plan), KERNEL_COLUMNS)
    table.add(dataset.name, np.array(scores))
    return table


def load_dataset(source: str, config: ExperimentConfig, label_column: str = "last", delimiter: str = ",") -> Dataset:
    """``synthetic`` or a CSV path."""
    if source == "synthetic":
        return synthetic_dataset(seed=config.data_seed)
    return load_csv(source, label_column, delimiter, normalize=True)


__all__ = [
    "Dataset",
    "ExperimentConfig",
    "FoldPlan",
    "ReportTable",
    "augment_test_fold",
    "load_csv",
    "load_dataset",
    "make_folds",
    "normalize_rows",
    "run_feature_experiment",
    "run_kernel_experiment",
    "synthetic_dataset",
]

"""Command-line entry point: ``invkern <subcommand> [flags]``.

Exit codes: 0 success, 1 usage error, 2 numerical or validation failure.
"""

from __future__ import annotations

import argparse
import contextlib
import dataclasses
import logging
import os
import sys
import time

import numpy as np

from . import harness, suites, svm
from .group_algebra import resolve_group, write_orthogonal_set
from .invariant_features import (
    StabilityPremiseError,
    kernel_signatures,
    linear_signatures,
    parse_pooling,
    write_signatures_csv,
)
from .invariant_kernel import (
    InvariantKernel,
    TemplateBank,
    load_bank,
    orbit_templates,
    random_templates,
    save_bank,
)
from .kernels import format_kernel, parse_kernel

EXIT_OK, EXIT_USAGE, EXIT_FAILURE = 0, 1, 2
INVARIANT_MODES = ("none", "direct", "one_sided", "template")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """argparse exits with 2 on bad usage; route it to exit code 1 instead."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# ---------------------------------------------------------------------------
# helpers


def _open_out(path):
    if path in (None, "-"):
        return contextlib.nullcontext(sys.stdout)
    return open(path, "w", encoding="utf-8")


def _load_data(args, labelled: bool = True) -> harness.Dataset | np.ndarray:
    if labelled:
        return harness.load_csv(args.data, args.label_column, args.delimiter, normalize=not args.raw)
    rows = np.loadtxt(args.data, delimiter=args.delimiter, ndmin=2)
    return rows if args.raw else harness.normalize_rows(rows)


def _build_kernel(kernel_spec: str, mode: str, group_ref: str | None, bank_ref: str | None, dim: int | None):
    base = parse_kernel(kernel_spec)
    if mode == "none":
        return base
    if mode == "template":
        if not bank_ref:
            raise UsageError("--invariant template needs --bank")
        bank = load_bank(bank_ref)
        if bank.kernel != base:
            raise ValueError(f"bank kernel {bank.kernel} differs from --kernel {base}")
        return InvariantKernel(base, "template", bank=bank)
    if not group_ref:
        raise UsageError(f"--invariant {mode} needs --group")
    return InvariantKernel(base, mode, group=resolve_group(group_ref, dim))


def _reference(mode: str, group_ref: str | None, bank_ref: str | None) -> str:
    if mode == "none":
        return ""
    ref = bank_ref if mode == "template" else group_ref
    return os.path.abspath(ref) if os.path.isfile(ref) else ref


# ---------------------------------------------------------------------------
# subcommands


def cmd_gen_group(args) -> int:
    group = resolve_group(args.group, args.dim)
    with _open_out(args.output) as fh:
        write_orthogonal_set(group, fh)
    return EXIT_OK


def cmd_gen_templates(args) -> int:
    group = resolve_group(args.group, args.dim)
    T = random_templates(group.dim, args.count, args.seed)
    if args.orbit:
        T = orbit_templates(group, T)
    bank = TemplateBank(T, group, parse_kernel(args.kernel), args.ridge)
    save_bank(bank, args.output)
    print(f"wrote {bank.size} templates (d={bank.dim}, |G0|={len(group)}) to {args.output}")
    return EXIT_OK


def cmd_features(args) -> int:
    data = _load_data(args)
    pooling = parse_pooling(args.pooling)
    bank = load_bank(args.bank)
    if args.kind == "linear":
        S = linear_signatures(data.X, bank.group, bank.templates, pooling)
    else:
        if args.require_stable and not pooling.is_stable():
            raise StabilityPremiseError(f"{pooling} violates the stability premise",
                                        pooling.compliant().lipschitz_bound)
        S = kernel_signatures(data.X, bank, pooling)
    write_signatures_csv(args.output, S)
    print(f"wrote {S.shape[0]} signatures of {S.shape[1]}x{S.shape[2]} to {args.output}")
    return EXIT_OK


def cmd_train(args) -> int:
    data = _load_data(args)
    kernel = _build_kernel(args.kernel, args.invariant, args.group, args.bank, data.dim)
    model = svm.fit(kernel, data.X, data.y, C=args.C, tol=args.tol, max_iter=args.max_iter, seed=args.seed)
    svm.save_model(model, args.output, format_kernel(parse_kernel(args.kernel)), args.invariant,
                   _reference(args.invariant, args.group, args.bank))
    acc = 100.0 * float(np.mean(model.predict(data.X) == data.y))
    print(f"trained on {len(data)} samples: {len(model.support)} support vectors, "
          f"kkt residual {model.kkt_residual:.2e}, training accuracy {acc:.2f}%")
    if not model.converged:
        print("warning: solver hit max_iter before reaching tol", file=sys.stderr)
        return EXIT_FAILURE
    return EXIT_OK


def cmd_predict(args) -> int:
    loaded = svm.load_model(args.model)
    ref = loaded.reference
    kernel = _build_kernel(loaded.kernel_spec, loaded.mode, ref, ref, loaded.model.train_X.shape[1])
    model = dataclasses.replace(loaded.model, kernel=kernel)
    if args.unlabelled:
        X, y = _load_data(args, labelled=False), None
    else:
        data = _load_data(args)
        X, y = data.X, data.y
    f = model.decision_function(X)
    pred = np.where(f >= 0, 1, -1)
    with _open_out(args.output) as fh:
        fh.write("decision,prediction\n")
        for v, p in zip(f, pred):
            fh.write(f"{float(v)!r},{int(p)}\n")
    if y is not None:
        print(f"accuracy {100.0 * float(np.mean(pred == y)):.2f}% on {len(y)} samples", file=sys.stderr)
    return EXIT_OK


def _config_from_args(args) -> harness.ExperimentConfig:
    config = harness.ExperimentConfig.from_file(args.config) if args.config else harness.ExperimentConfig()
    values = {key: getattr(args, key) for key in _CONFIG_FLAGS}
    if args.seed is not None:
        base = args.seed
        for offset, key in enumerate(("group_seed", "template_seed", "fold_seed", "data_seed")):
            if values[key] is None:
                values[key] = base + offset
    return config.override(values)


def _bench(args, runner) -> int:
    config = _config_from_args(args)
    dataset = harness.load_dataset(args.dataset, config, args.label_column, args.delimiter)
    start = time.perf_counter()
    table = runner(config, dataset)
    print(table.to_text())
    print(f"({time.perf_counter() - start:.1f} s)")
    if args.csv:
        with open(args.csv, "w", encoding="utf-8") as fh:
            fh.write(table.to_csv())
    return EXIT_OK


def cmd_bench_features(args) -> int:
    return _bench(args, harness.run_feature_experiment)


def cmd_bench_kernel(args) -> int:
    return _bench(args, harness.run_kernel_experiment)


def cmd_verify(args) -> int:
    group = resolve_group(args.group, args.dim)
    print(f"group {group.descriptor}: |G|={len(group)}, d={group.dim}, exact={group.is_exact_group}")
    checks = suites.run_all(group, trials=args.trials, seed=args.seed)
    for c in checks:
        print(c.line())
    failed = sum(not c.passed for c in checks)
    print(f"{len(checks) - failed}/{len(checks)} checks passed")
    return EXIT_FAILURE if failed else EXIT_OK


# ---------------------------------------------------------------------------
# parser

_CONFIG_FLAGS = (
    "folds", "group_size", "template_count", "kernels", "pooling", "group_seed", "template_seed",
    "fold_seed", "data_seed", "include_identity", "group_kind", "template_span", "C", "tol",
)


def _data_flags(p, required: bool = True):
    p.add_argument("--data", required=required, help="CSV file, one sample per row")
    p.add_argument("--label-column", default="last", choices=("first", "last"))
    p.add_argument("--delimiter", default=",")
    p.add_argument("--raw", action="store_true", help="skip unit-norm row normalization")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="invkern", description="Group-invariant kernels, signatures and SVMs.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen-group", help="write an orthogonal set to a file")
    p.add_argument("--group", required=True,
                   help="cyclic:order=4 | perm:n=3 | signed:n=3 | reflection | shift:n=8 | "
                        "random:m=10,seed=0 | random-group:order=10,seed=0")
    p.add_argument("--dim", type=int)
    p.add_argument("-o", "--output", default="-")
    p.set_defaults(func=cmd_gen_group)

    p = sub.add_parser("gen-templates", help="sample a template bank and save it")
    p.add_argument("--group", required=True, help="group spec or file")
    p.add_argument("--dim", type=int)
    p.add_argument("--count", type=int, default=100)
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--kernel", default="rbf:σ=1")
    p.add_argument("--ridge", type=float)
    p.add_argument("--orbit", action="store_true", help="store every transformed template g t")
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_gen_templates)

    p = sub.add_parser("features", help="compute pooled signatures for a CSV")
    _data_flags(p)
    p.add_argument("--bank", required=True)
    p.add_argument("--pooling", default="mean")
    p.add_argument("--kind", choices=("kernel", "linear"), default="kernel")
    p.add_argument("--require-stable", action="store_true")
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_features)

    p = sub.add_parser("train", help="train an SVM and save the model")
    _data_flags(p)
    p.add_argument("--kernel", default="rbf:σ=1")
    p.add_argument("--invariant", choices=INVARIANT_MODES, default="none")
    p.add_argument("--group", help="group spec or file (direct, one_sided)")
    p.add_argument("--bank", help="template bank file (template)")
    p.add_argument("--C", type=float, default=1.0)
    p.add_argument("--tol", type=float, default=1e-6)
    p.add_argument("--max-iter", type=int, default=100_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="apply a saved model to a CSV")
    p.add_argument("--model", required=True)
    _data_flags(p)
    p.add_argument("--unlabelled", action="store_true", help="the CSV has no label column")
    p.add_argument("-o", "--output", default="-")
    p.set_defaults(func=cmd_predict)

    for name, func, what in (("bench-features", cmd_bench_features, "raw vs signature features"),
                             ("bench-kernel", cmd_bench_kernel, "standard vs invariant kernel SVM")):
        p = sub.add_parser(name, help=f"cross-validated benchmark: {what}")
        p.add_argument("--dataset", default="synthetic", help="'synthetic' or a CSV path")
        p.add_argument("--label-column", default="last", choices=("first", "last"))
        p.add_argument("--delimiter", default=",")
        p.add_argument("--config", help="key=value file; flags override it")
        p.add_argument("--seed", type=int, help="base seed for group, template, fold and data seeds")
        p.add_argument("--folds", type=int)
        p.add_argument("--group-size", type=int)
        p.add_argument("--template-count", type=int)
        p.add_argument("--kernels", help="';'-separated kernel specs")
        p.add_argument("--pooling")
        p.add_argument("--group-seed", type=int)
        p.add_argument("--template-seed", type=int)
        p.add_argument("--fold-seed", type=int)
        p.add_argument("--data-seed", type=int)
        p.add_argument("--include-identity", action="store_const", const=True)
        p.add_argument("--group-kind", choices=("group", "set"))
        p.add_argument("--template-span", choices=("orbit", "templates"))
        p.add_argument("--C", type=float)
        p.add_argument("--tol", type=float)
        p.add_argument("--csv", help="also write the table as CSV")
        p.set_defaults(func=func)

    p = sub.add_parser("verify", help="run the invariance and solver checks for a group")
    p.add_argument("--group", required=True)
    p.add_argument("--dim", type=int)
    p.add_argument("--trials", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_verify)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"invkern: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ValueError, OSError, np.linalg.LinAlgError) as exc:
        print(f"invkern: {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())

"""Command line front end: ``steercnn <subcommand> ...``.

Exit codes: 0 success, 1 failed check, 2 usage or parse error.
"""
from __future__ import annotations

import argparse
import json
import sys
from importlib import resources
from pathlib import Path

import numpy as np

from . import __version__
from .data import SyntheticTask, random_element
from .fileio import ParseError, load_json, save_params, write_feature_csv, write_matrix_csv, write_pgm
from .gcnn import GCNN, steerable_twin, to_steerable
from .group import GroupError, build_stabilizer, subgroup_from_labels
from .intertwine import intertwiner_basis, parameter_efficiency
from .reps import (
    RepresentationError,
    character,
    direct_sum,
    filter_space_rep,
    irrep_table,
    isotypic_decompose,
    multiplicity,
    quotient_rep,
    regular_rep,
    rep_from_type,
    trivial_rep,
)
from .steer import AdmissibilityError, NetworkSpec, SpecError, SteerableNetwork, transport
from .train import TrainingError, accuracy, train
from .verify import relative_residual, verify_network

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


# ---------------------------------------------------------------- rep specs


def parse_rep_spec(group, text: str):
    """'+'-joined terms ``[m*]atom``; atoms: trivial, regular, irrep:L,
    quotient:l1,l2,..., type:m1,m2,..., or a whole ``filter:s:<fiber spec>``."""
    text = text.strip()
    if text.startswith("filter:"):
        _, size, rest = text.split(":", 2)
        return filter_space_rep(group, int(size), parse_rep_spec(group, rest))
    parts = []
    for term in text.split("+"):
        term = term.strip()
        mult = 1
        if "*" in term:
            m, term = term.split("*", 1)
            mult = int(m)
        head, _, rest = term.partition(":")
        if head == "trivial":
            rep = trivial_rep(group)
        elif head == "regular":
            rep = regular_rep(group)
        elif head == "irrep":
            rep = irrep_table(group)[rest]
        elif head == "quotient":
            rep = quotient_rep(group, subgroup_from_labels(group, rest.split(",")))
        elif head == "type":
            rep = rep_from_type(irrep_table(group), [int(v) for v in rest.split(",")])
        else:
            raise UsageError(f"unknown representation atom {term!r}")
        parts.extend([rep] * mult)
    if not parts:
        raise UsageError("empty representation spec")
    return parts[0] if len(parts) == 1 else direct_sum(*parts)


# ---------------------------------------------------------------- helpers


def _emit(args, payload: dict, lines: list[str]) -> None:
    if args.json:
        print(json.dumps(payload, indent=2))
    else:
        print("\n".join(lines))


def _out_dir(args, default: str) -> Path:
    path = Path(args.out or default)
    try:
        path.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise UsageError(f"cannot create {path}: {exc.strerror}") from None
    return path


def bundled_spec(name: str) -> Path:
    return Path(str(resources.files("steercnn") / "data" / name))


def load_network(path: str | Path, seed: int) -> SteerableNetwork:
    doc = load_json(path)
    spec = NetworkSpec.from_json(doc)
    params = doc.get("params")
    if params is not None:
        params = {k: np.asarray(v, dtype=np.float64) for k, v in params.items()}
    kernels = {int(k): np.asarray(v, dtype=np.float64) for k, v in doc.get("kernels", {}).items()}
    return SteerableNetwork(spec, params, seed=seed, kernel_overrides=kernels)


def _pi0_summary(name: str) -> dict:
    g = build_stabilizer(name)
    table = irrep_table(g)
    pi0 = filter_space_rep(g, 3)
    return {
        "group": name,
        "elements": list(g.element_labels),
        "irreps": {
            label: [int(round(v)) for v in chars] for label, chars in zip(table.labels, table.characters)
        },
        "pi0_dim": pi0.dim,
        "pi0_character": [int(round(v)) for v in character(pi0)],
        "pi0_type": list(multiplicity(pi0, table)),
    }


# ---------------------------------------------------------------- commands


def cmd_group(args) -> int:
    print(build_stabilizer(args.name).dumps())
    return EXIT_OK


def cmd_tables(args) -> int:
    names = [args.group] if args.group else ["C4", "D4", "S2", "S3"]
    summaries = [_pi0_summary(n) for n in names]
    lines = []
    for s in summaries:
        width = max(len(e) for e in s["elements"]) + 1
        lines.append(f"{s['group']}  (filters of size 3^{build_stabilizer(s['group']).n}, dim {s['pi0_dim']})")
        lines.append("  " + "".ljust(8) + "".join(e.rjust(width) for e in s["elements"]))
        for label, chars in s["irreps"].items():
            lines.append("  " + label.ljust(8) + "".join(str(v).rjust(width) for v in chars))
        lines.append("  " + "pi0".ljust(8) + "".join(str(v).rjust(width) for v in s["pi0_character"]))
        lines.append("  type of pi0: (" + ",".join(str(v) for v in s["pi0_type"]) + ")")
        lines.append("")
    _emit(args, {"tables": summaries}, lines[:-1])
    return EXIT_OK


def cmd_rep_decompose(args) -> int:
    g = build_stabilizer(args.group)
    table = irrep_table(g)
    rep = filter_space_rep(g, args.size)
    mults = multiplicity(rep, table)
    lines = [f"{args.group} filters {args.size}^{g.n}: dim {rep.dim}", "irrep  multiplicity"]
    lines += [f"{label:<6} {m}" for label, m in zip(table.labels, mults)]
    payload = {"group": args.group, "size": args.size, "dim": rep.dim, "type": dict(zip(table.labels, mults))}
    if args.pgm:
        written = _emit_basis_files(g, table, rep, args.size, _out_dir(args, "basis"), csv_too=False)
        payload["files"] = [str(p) for p in written]
        lines.append(f"wrote {len(written)} images to {args.out or 'basis'}")
    _emit(args, payload, lines)
    return EXIT_OK


def _emit_basis_files(g, table, rep, size, out: Path, csv_too: bool = True) -> list[Path]:
    dec = isotypic_decompose(rep, table, seed=0)
    written = []
    for i, copy, off in dec.block_layout:
        label = table.labels[i]
        for comp in range(table.irreps[i].dim):
            vec = dec.basis[:, off + comp].reshape((size,) * g.n)
            image = vec if g.n == 2 else vec.reshape(-1, size)  # n = 3: slices stacked vertically
            stem = out / f"{label}_{copy}_{comp}"
            write_pgm(stem.with_suffix(".pgm"), image)
            written.append(stem.with_suffix(".pgm"))
            if csv_too:
                write_matrix_csv(stem.with_suffix(".csv"), image)
    return written


def cmd_emit_basis(args) -> int:
    g = build_stabilizer(args.group)
    table = irrep_table(g)
    rep = filter_space_rep(g, args.size)
    written = _emit_basis_files(g, table, rep, args.size, _out_dir(args, "basis"))
    _emit(args, {"files": [str(p) for p in written]}, [f"wrote {len(written)} basis vectors to {args.out or 'basis'}"])
    return EXIT_OK


def cmd_hom(args) -> int:
    g = build_stabilizer(args.group)
    pi = parse_rep_spec(g, args.pi)
    rho = parse_rep_spec(g, args.rho)
    basis = intertwiner_basis(pi, rho)
    payload = {"dim_pi": pi.dim, "dim_rho": rho.dim, "dim_hom": basis.dim}
    lines = [f"dim pi = {pi.dim}", f"dim rho = {rho.dim}", f"dim Hom = {basis.dim}"]
    if basis.dim:
        mu = parameter_efficiency(pi, rho, basis.dim)
        payload["mu"] = mu
        lines.append(f"mu = {mu:g}")
    else:
        lines.append("mu = undefined (no intertwiners)")
    if args.csv:
        out = _out_dir(args, "hom")
        for k, b in enumerate(basis.basis):
            write_matrix_csv(out / f"basis_{k}.csv", b)
        lines.append(f"wrote {basis.dim} basis matrices to {out}")
    _emit(args, payload, lines)
    return EXIT_OK


def cmd_verify(args) -> int:
    net = load_network(args.spec, args.seed)
    report = verify_network(net, window=args.window, seed=args.seed, n_translations=args.translations)
    if args.out:
        path = Path(args.out)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(report.to_json(), indent=2))
    _emit(args, report.to_json(), report.lines())
    return EXIT_OK if report.passed else EXIT_FAIL


def cmd_gcnn_equiv(args) -> int:
    g = build_stabilizer(args.group)
    net = GCNN.random(g, [1, 2, 2], s=3, seed=args.seed)
    x = np.random.default_rng(args.seed).standard_normal((2, 1) + (args.window,) * g.n)
    twin = steerable_twin(net)
    res = relative_residual(to_steerable(net(x)).data, twin.features(x))
    ok = res <= 1e-9
    _emit(
        args,
        {"group": args.group, "residual": res, "tolerance": 1e-9, "passed": ok},
        [f"{args.group}: G-CNN vs regular steerable twin, max relative residual {res:.3e} ({'PASS' if ok else 'FAIL'})"],
    )
    return EXIT_OK if ok else EXIT_FAIL


def cmd_gen_data(args) -> int:
    task = SyntheticTask(args.group, args.window, args.classes, seed=args.seed)
    x, y = task.sample(args.count)
    out = _out_dir(args, "data")
    n = build_stabilizer(args.group).n
    for i, (xi, yi) in enumerate(zip(x, y)):
        write_feature_csv(out / f"sample_{i:04d}.csv", xi, n)
    (out / "labels.csv").write_text("index,label\n" + "".join(f"{i},{int(v)}\n" for i, v in enumerate(y)))
    _emit(args, {"count": int(args.count), "dir": str(out)}, [f"wrote {args.count} samples to {out}"])
    return EXIT_OK


def cmd_train(args) -> int:
    net = load_network(args.spec, args.seed)
    cfg = load_json(args.task) if args.task else {}
    cfg = dict({"window": 9, "n_train": 64, "n_test": 32, "lr": 0.05, "batch": 16}, **cfg)
    task = SyntheticTask(net.spec.group, int(cfg["window"]), net.spec.n_classes, seed=args.seed)
    x, y = task.sample(int(cfg["n_train"]), seed=args.seed + 1)
    xt, yt = task.sample(int(cfg["n_test"]), seed=args.seed + 2)
    log = None if args.json else print
    result = train(net, x, y, args.epochs, lr=float(cfg["lr"]), batch=int(cfg["batch"]), seed=args.seed, log=log)
    rng = np.random.default_rng(args.seed + 3)
    moved = np.stack([transport(random_element(net.group, task.window, rng), xi, net.n)[0] for xi in xt])
    s_plain, s_moved = net.forward(xt), net.forward(moved)
    metrics = {
        "losses": result.losses,
        "test_accuracy": accuracy(s_plain, yt),
        "transformed_test_accuracy": accuracy(s_moved, yt),
        "score_drift": relative_residual(s_moved, s_plain),
    }
    out = _out_dir(args, "run")
    save_params(out / "params", result.params)
    (out / "metrics.json").write_text(json.dumps(metrics, indent=2))
    _emit(
        args,
        metrics,
        [
            f"test accuracy {metrics['test_accuracy']:.4f}, on transformed copies {metrics['transformed_test_accuracy']:.4f}",
            f"parameters written to {out / 'params'}",
        ],
    )
    return EXIT_OK


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="random seed (default 0)")
    common.add_argument("--out", default=argparse.SUPPRESS, help="output directory or file")
    common.add_argument("--json", action="store_true", default=argparse.SUPPRESS, help="machine-readable output")

    p = argparse.ArgumentParser(prog="steercnn", description="Finite-group equivariant CNN toolkit.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None)
    p.add_argument("--json", action="store_true", default=False)
    sub = p.add_subparsers(dest="command", required=True)

    grp = sub.add_parser("group", help="group utilities", parents=[common])
    gsub = grp.add_subparsers(dest="action", required=True)
    dump = gsub.add_parser("dump", help="print a stabilizer group as JSON", parents=[common])
    dump.add_argument("name")
    dump.set_defaults(func=cmd_group)

    rep = sub.add_parser("rep", help="representation utilities", parents=[common])
    rsub = rep.add_subparsers(dest="action", required=True)
    dec = rsub.add_parser("decompose", help="irrep multiplicities of the filter space", parents=[common])
    dec.add_argument("--group", required=True)
    dec.add_argument("--size", type=int, default=3)
    dec.add_argument("--pgm", action="store_true", help="also write basis filters as PGM images")
    dec.set_defaults(func=cmd_rep_decompose)

    hom = sub.add_parser("hom", help="intertwiner dimension and efficiency", parents=[common])
    hom.add_argument("--group", required=True)
    hom.add_argument("--pi", required=True, help="input representation spec")
    hom.add_argument("--rho", required=True, help="output representation spec")
    hom.add_argument("--csv", action="store_true", help="dump basis matrices")
    hom.set_defaults(func=cmd_hom)

    ver = sub.add_parser("verify", help="equivariance checks for a network spec", parents=[common])
    ver.add_argument("--spec", required=True)
    ver.add_argument("--window", type=int, default=5)
    ver.add_argument("--translations", type=int, default=16)
    ver.set_defaults(func=cmd_verify)

    ge = sub.add_parser("gcnn-equiv", help="G-CNN versus regular steerable twin", parents=[common])
    ge.add_argument("--group", required=True)
    ge.add_argument("--window", type=int, default=5)
    ge.set_defaults(func=cmd_gcnn_equiv)

    tr = sub.add_parser("train", help="train an invariant classifier on a synthetic task", parents=[common])
    tr.add_argument("--spec", required=True)
    tr.add_argument("--task", help="task config JSON (window, n_train, n_test, lr, batch)")
    tr.add_argument("--epochs", type=int, default=20)
    tr.set_defaults(func=cmd_train)

    eb = sub.add_parser("emit-basis", help="write isotypic basis filters", parents=[common])
    eb.add_argument("--group", required=True)
    eb.add_argument("--size", type=int, default=3)
    eb.set_defaults(func=cmd_emit_basis)

    gd = sub.add_parser("gen-data", help="write a synthetic dataset as CSV tensors", parents=[common])
    gd.add_argument("--group", required=True)
    gd.add_argument("--window", type=int, default=9)
    gd.add_argument("--classes", type=int, default=2)
    gd.add_argument("--count", type=int, default=32)
    gd.set_defaults(func=cmd_gen_data)

    tb = sub.add_parser("tables", help="character tables and filter-space types", parents=[common])
    tb.add_argument("--group", choices=["C4", "D4", "S2", "S3"])
    tb.set_defaults(func=cmd_tables)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ParseError, SpecError, AdmissibilityError, UsageError, GroupError, RepresentationError, ValueError) as exc:
        print(f"steercnn: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except TrainingError as exc:
        print(f"steercnn: training failed: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())

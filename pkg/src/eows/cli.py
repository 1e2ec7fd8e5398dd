"""Command-line interface: eows {gen, denoise, transform, tree, simulate}.

Exit codes: 0 success, 1 input error, 2 numeric error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .errors import EowsError, InputError, NumericError
from .hwt import AtomId, BestBasis2D, CoeffMap, best_basis_2d, inverse_2d, layout_of, tensor_analyze, transform_2d
from .matcore import read_matrix, write_matrix
from .pipeline import METHODS, EowsConfig, run
from .simlab import (NOISE_KINDS, SIM_METHODS, HelixGeometry, NoiseSpec, SignalSpec, derive_rng, gen_noise,
                     gen_signal, run_experiment, worker_count, write_csv, write_json)
from .spectre import ShrinkTarget, shrinker_values
from .treegeo import EmdParams, PartitionTree, questionnaire

log = logging.getLogger("eows")


class _Parser(argparse.ArgumentParser):
    """Usage errors become InputError so they map to exit code 1."""

    def error(self, message):  # type: ignore[override]
        raise InputError(f"{self.prog}: {message}")


def _pair(text: str) -> tuple[float, float]:
    try:
        a, b = (float(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected 'lo,hi', got {text!r}") from None
    return a, b


def _int_list(text: str) -> list[int]:
    try:
        out = [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None
    if not out:
        raise argparse.ArgumentTypeError("empty list")
    return out


def _str_list(choices):
    def parse(text: str) -> list[str]:
        out = [v.strip().lower() for v in text.split(",") if v.strip()]
        bad = [v for v in out if v not in choices]
        if bad or not out:
            raise argparse.ArgumentTypeError(f"choose from {', '.join(choices)}; got {text!r}")
        return out
    return parse


def _add_emd(p: argparse.ArgumentParser) -> None:
    p.add_argument("--emd-a", type=float, default=0.0, help="level weight exponent a in 2^(-a*level)")
    p.add_argument("--emd-b", type=float, default=1.0, help="folder size exponent b")
    p.add_argument("--eps-factor", type=float, default=1.0, help="affinity scale as a multiple of the median EMD")
    p.add_argument("--iters", type=int, default=3, help="Questionnaire iterations")


def _emd(args) -> EmdParams:
    return EmdParams(args.emd_a, args.emd_b, args.eps_factor)


def _add_signal(p: argparse.ArgumentParser) -> None:
    g = HelixGeometry()
    p.add_argument("--signal", choices=("helmholtz", "sinusoid"), required=True)
    p.add_argument("--nu", type=float, default=1.0, help="Helmholtz frequency")
    p.add_argument("--frob2", type=float, default=150.0, help="Helmholtz squared Frobenius norm")
    p.add_argument("--raw-scale", action="store_true", help="sinusoid: keep U, V unnormalized")
    p.add_argument("--helix-radius", type=float, default=g.radius)
    p.add_argument("--helix-pitch", type=float, default=g.pitch)
    p.add_argument("--helix-turns", type=float, default=g.turns)
    p.add_argument("--sheet-x", type=float, default=g.sheet_x)
    p.add_argument("--sheet-y", type=_pair, default=g.sheet_y, metavar="LO,HI")
    p.add_argument("--sheet-z", type=_pair, default=g.sheet_z, metavar="LO,HI")
    p.add_argument("--df", type=float, default=10.0, help="Student-t degrees of freedom of the noise")


def _signal_spec(args) -> SignalSpec:
    geo = HelixGeometry(args.helix_radius, args.helix_pitch, args.helix_turns, args.sheet_x,
                        tuple(args.sheet_y), tuple(args.sheet_z))
    return SignalSpec(args.signal, args.nu, args.frob2, geo, not args.raw_scale)


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="eows", description="Matrix denoising by optimal shrinkage and tree wavelets.")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    ap.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen", help="generate a synthetic signal (optionally plus noise)")
    _add_signal(g)
    g.add_argument("--n", type=int, required=True, help="rows; sinusoid has 2n columns, helmholtz n")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--noise", choices=("none",) + NOISE_KINDS, default="none")
    g.add_argument("--out", required=True, help="output matrix (.eows binary, .txt text)")
    g.add_argument("--truth-out", help="also write the clean signal here when --noise is given")

    d = sub.add_parser("denoise", help="denoise a matrix")
    d.add_argument("--in", dest="inp", required=True)
    d.add_argument("--out", help="denoised matrix (default: <in stem>.denoised<suffix>)")
    d.add_argument("--method", choices=METHODS, default="eows")
    d.add_argument("--loss", choices=[t.value for t in ShrinkTarget], default="fro")
    d.add_argument("--sigma", type=float, help="noise level for --method ws (default 1)")
    d.add_argument("--tree-source", choices=("os", "amp"), default="os")
    d.add_argument("--ell", type=float, default=1.0, help="best-basis cost exponent in (0, 2)")
    d.add_argument("--c", type=float, help="window exponent c (default min(1/2.01, 1/log log n))")
    d.add_argument("--family", choices=("auto", "full", "blocks"), default="auto")
    d.add_argument("--json", help="diagnostics sidecar path (default: <out>.json)")
    _add_emd(d)

    t = sub.add_parser("transform", help="best-basis 2-D transform or its inverse")
    t.add_argument("--in", dest="inp", required=True, help="matrix, or coefficient JSON with --inverse")
    t.add_argument("--out", required=True)
    t.add_argument("--inverse", action="store_true", help="synthesize a matrix from coefficient JSON")
    t.add_argument("--row-tree", help="row tree JSON from `eows tree` (default: run the Questionnaire)")
    t.add_argument("--col-tree", help="column tree JSON; required together with --row-tree")
    t.add_argument("--ell", type=float, default=1.0)
    t.add_argument("--family", choices=("auto", "full", "blocks"), default="auto")
    _add_emd(t)

    tr = sub.add_parser("tree", help="learn row and column partition trees")
    tr.add_argument("--in", dest="inp", required=True)
    tr.add_argument("--rows-out", required=True, help="row tree JSON")
    tr.add_argument("--cols-out", required=True, help="column tree JSON")
    tr.add_argument("--start", choices=("cols", "rows"), default="cols")
    _add_emd(tr)

    s = sub.add_parser("simulate", help="run a synthetic experiment")
    _add_signal(s)
    s.add_argument("--noise", choices=NOISE_KINDS, required=True)
    s.add_argument("--n", type=_int_list, required=True, help="comma-separated sizes")
    s.add_argument("--trials", type=int, default=10)
    s.add_argument("--methods", type=_str_list(SIM_METHODS), default=list(SIM_METHODS[1:]),
                   help=f"comma-separated subset of {','.join(SIM_METHODS)}")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True, help="per-trial CSV")
    s.add_argument("--json", help="aggregate JSON (default: <out>.json)")
    return ap


def _sidecar(out: str, given: str | None) -> Path:
    return Path(given) if given else Path(out + ".json")


def _write_text(path: str | Path, text: str) -> None:
    try:
        Path(path).write_text(text)
    except OSError as exc:
        raise InputError(f"cannot write {path}: {exc}") from exc


def _cmd_gen(args) -> None:
    spec = _signal_spec(args)
    s, _ = gen_signal(spec, args.n, derive_rng(args.seed, "signal"))
    if args.noise != "none":
        z = gen_noise(*s.shape, NoiseSpec(args.noise, args.df), derive_rng(args.seed, "noise"))
        if args.truth_out:
            write_matrix(args.truth_out, s)
        s = s + z
    write_matrix(args.out, s)
    print(f"wrote {s.shape[0]}x{s.shape[1]} matrix to {args.out}")


def _default_out(inp: str) -> str:
    p = Path(inp)
    return str(p.with_name(p.stem + ".denoised" + (p.suffix or ".eows")))


def _cmd_denoise(args) -> None:
    if args.sigma is not None and args.method != "ws":
        raise InputError("--sigma only applies to --method ws")
    y = read_matrix(args.inp)
    out = args.out or _default_out(args.inp)
    cfg = EowsConfig(loss=args.loss, c_exp=args.c, emd=_emd(args), iters=args.iters, ell=args.ell,
                     method=args.method, tree_source=args.tree_source,
                     sigma=1.0 if args.sigma is None else args.sigma, family=args.family)
    res = run(y, cfg)
    write_matrix(out, res.s_hat)
    diag = dict(res.diagnostics)
    spikes = res.est.to_dict()
    phi = shrinker_values(res.est, args.loss) if res.r_hat else []
    for row, v in zip(spikes["spikes"], phi):
        row["phi"] = float(v)
    diag.update(spikes)
    if res.tau_star is not None:
        diag["quantile"] = 0.99
    _write_text(_sidecar(out, args.json), json.dumps(diag, indent=2, sort_keys=True, default=float) + "\n")
    print(f"{args.method}: r_hat={res.r_hat}, wrote {out}")


def _load_tree(path: str) -> PartitionTree:
    try:
        return PartitionTree.from_json(Path(path).read_text())
    except FileNotFoundError:
        raise InputError(f"file not found: {path}") from None
    except InputError as exc:
        raise InputError(f"{path}: {exc}") from exc


def _load_trees(args, shape) -> tuple[PartitionTree, PartitionTree]:
    tr, tc = _load_tree(args.row_tree), _load_tree(args.col_tree)
    if (tr.N, tc.N) != tuple(shape):
        raise InputError(f"trees are {tr.N}x{tc.N} but the matrix is {shape[0]}x{shape[1]}")
    return tr, tc


def _cmd_transform(args) -> None:
    if (args.row_tree is None) != (args.col_tree is None):
        raise InputError("--row-tree and --col-tree must be given together")
    if args.inverse:
        try:
            d = json.loads(Path(args.inp).read_text())
            tr, tc = PartitionTree.from_dict(d["row_tree"]), PartitionTree.from_dict(d["col_tree"])
            lr, lc = layout_of(tr), layout_of(tc)
            acc: dict[tuple[int, int], list] = {}
            for tile in d["tiles"]:
                ra, ca = AtomId(*tile["row_atom"]), AtomId(*tile["col_atom"])
                acc.setdefault((ra.level, ca.level), []).append(
                    (lr.slot(ra) * tc.N + lc.slot(ca), float(tile["value"])))
        except FileNotFoundError:
            raise InputError(f"file not found: {args.inp}") from None
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise InputError(f"malformed coefficient file: {exc}") from exc
        index, values = {}, {}
        for key, pairs in acc.items():
            pairs.sort()
            index[key] = np.array([f for f, _ in pairs], dtype=np.int64)
            values[key] = np.array([v for _, v in pairs])
        write_matrix(args.out, inverse_2d(CoeffMap(BestBasis2D(lr, lc, index), values)))
        print(f"wrote {tr.N}x{tc.N} matrix to {args.out}")
        return
    y = read_matrix(args.inp)
    trees = _load_trees(args, y.shape) if args.row_tree else questionnaire(y, args.iters, _emd(args))
    basis = best_basis_2d(tensor_analyze(y, *trees), args.ell, args.family)
    cm = transform_2d(y, basis)
    out = {
        "shape": list(y.shape), "ell": args.ell, "cost": basis.cost, "family": basis.family,
        "row_tree": trees[0].to_dict(), "col_tree": trees[1].to_dict(),
        "tiles": [{"row_atom": [ra.level, ra.folder, ra.tag], "col_atom": [ca.level, ca.folder, ca.tag],
                   "value": v} for (ra, ca), v in cm.items()],
    }
    _write_text(args.out, json.dumps(out) + "\n")
    print(f"best basis cost {basis.cost:.6g} ({basis.family}), {basis.n_coeffs()} coefficients")


def _cmd_tree(args) -> None:
    y = read_matrix(args.inp)
    tr, tc = questionnaire(y, args.iters, _emd(args), args.start)
    _write_text(args.rows_out, tr.to_json() + "\n")
    _write_text(args.cols_out, tc.to_json() + "\n")
    print(f"row tree depth {tr.depth} (balance {tr.balance()[0]:.2f}), "
          f"column tree depth {tc.depth} (balance {tc.balance()[0]:.2f})")


def _cmd_simulate(args) -> None:
    if args.trials < 1:
        raise InputError("--trials must be at least 1")
    exp = run_experiment(_signal_spec(args), NoiseSpec(args.noise, args.df), args.n, args.trials,
                         args.methods, seed=args.seed, workers=worker_count())
    try:
        write_csv(exp, args.out)
    except OSError as exc:
        raise InputError(f"cannot write {args.out}: {exc}") from exc
    try:
        write_json(exp, _sidecar(args.out, args.json))
    except OSError as exc:
        raise InputError(f"cannot write JSON: {exc}") from exc
    for row in exp.summary:
        print(f"n={row['n']:<6d} {row['method']:<11s} median mse {row['mse']['median']:.4g}")


_COMMANDS = {"gen": _cmd_gen, "denoise": _cmd_denoise, "transform": _cmd_transform,
             "tree": _cmd_tree, "simulate": _cmd_simulate}


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        _COMMANDS[args.command](args)
    except InputError as exc:
        print(f"error{f' [{exc.step}]' if exc.step else ''}: {exc}", file=sys.stderr)
        return 1
    except NumericError as exc:
        print(f"numeric error{f' [{exc.step}]' if exc.step else ''}: {exc}", file=sys.stderr)
        return 2
    except EowsError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())

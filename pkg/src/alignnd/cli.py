"""Command-line entry point: ``alignnd <subcommand> ...``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
Tabular results go to standard output (or ``--out``) as CSV with a header;
diagnostics and logs go to standard error.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np

log = logging.getLogger("alignnd")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

# config-file aliases: conventional hyperparameter symbols
ALIASES = {
    "M": "batch_size",
    "batch": "batch_size",
    "N_ep": "epochs",
    "eta_init": "lr_init",
    "eta_max": "lr_max",
    "rep": "representation",
}


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}\n{self.format_usage()}")


# ------------------------------------------------------------------ config


def read_config(path) -> dict[str, str]:
    """Parse a ``key = value`` file; ``#`` starts a comment."""
    out = {}
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise DataError(f"cannot read config {path}: {exc}") from None
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected key=value")
        k, v = (t.strip() for t in line.split("=", 1))
        out[ALIASES.get(k, k)] = v
    return out


def _coerce(value: str, default):
    if isinstance(default, bool):
        if value.lower() in ("1", "true", "yes"):
            return True
        if value.lower() in ("0", "false", "no"):
            return False
        raise UsageError(f"not a boolean: {value!r}")
    if default is None:
        return None if value.lower() in ("none", "") else float(value)
    try:
        return type(default)(value)
    except ValueError:
        raise UsageError(f"bad value {value!r}") from None


def build_configs(args):
    """Merge defaults, the ``--config`` file and command-line flags."""
    from .model import ModelConfig
    from .training import TrainConfig

    raw = read_config(args.config) if getattr(args, "config", None) else {}
    for name in list(vars(args)):
        val = getattr(args, name)
        if name.startswith("cfg_") and val is not None:
            raw[name[4:]] = str(val)
    mdefault, tdefault = ModelConfig(), TrainConfig()
    mkeys = {f.name for f in fields(ModelConfig)}
    tkeys = {f.name for f in fields(TrainConfig)}
    unknown = set(raw) - mkeys - tkeys
    if unknown:
        raise UsageError(f"unknown config keys: {', '.join(sorted(unknown))}")
    try:
        mcfg = ModelConfig(
            **{k: _coerce(v, getattr(mdefault, k)) for k, v in raw.items() if k in mkeys}
        )
        tcfg = TrainConfig(
            **{k: _coerce(v, getattr(tdefault, k)) for k, v in raw.items() if k in tkeys}
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    return mcfg, tcfg


# ------------------------------------------------------------------ helpers


def _open_out(path):
    if path in (None, "-"):
        return sys.stdout, False
    return open(path, "w", newline=""), True


def _writer(args):
    fh, close = _open_out(getattr(args, "out", None))
    return csv.writer(fh, lineterminator="\n"), fh, close


def _read_structure(path):
    from .geometry import read_xyz

    return read_xyz(path)


def _load_state(path):
    from .model import ModelState

    if path is None:
        raise UsageError("--checkpoint is required")
    return ModelState.load(path)


def _set_threads(n: int):
    if n < 1:
        raise UsageError("--threads must be >= 1")
    import warnings

    import numba

    # an outdated system TBB is reported on first use; numba falls back silently
    warnings.filterwarnings("ignore", message="The TBB threading layer")
    numba.set_num_threads(min(n, numba.config.NUMBA_NUM_THREADS))


# ------------------------------------------------------------------ commands


def cmd_encode(args):
    from .data import rules_for
    from .graphs import build_bundle, edge_counts, edge_rows

    s = _read_structure(args.xyz)
    bundle = build_bundle(s, args.rep, rules_for(s))
    b, a, d, total = edge_counts(bundle)
    print(f"bonds={b} angles={a} dihedrals={d} total={total}")
    if args.edges:
        with open(args.edges, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["kind", "i", "j", "value"])
            for kind, i, j, v in edge_rows(bundle):
                w.writerow([kind, i, j, repr(v)])


def cmd_gen_data(args):
    from .data import SyntheticConfig, generate_synthetic, make_expressiveness_set, save_dataset

    if args.expressiveness:
        records = make_expressiveness_set(args.n, args.seed)
    else:
        probs = {4: args.p4, 5: args.p5, 6: args.p6}
        try:
            cfg = SyntheticConfig(
                n_samples=args.n,
                coordination_probs=probs,
                radial_sigma=args.radial_sigma,
                angular_sigma=args.angular_sigma,
                dihedral_spread=args.dihedral_spread,
                seed=args.seed,
            )
        except ValueError as exc:
            raise UsageError(str(exc)) from None
        records = generate_synthetic(cfg)
    manifest = save_dataset(records, args.out)
    log.info("wrote %d records to %s", len(records), manifest)


def cmd_train(args):
    from dataclasses import replace

    from .data import load_dataset, split
    from .training import train

    mcfg, tcfg = build_configs(args)
    if args.seed is not None:
        tcfg = replace(tcfg, seed=args.seed)
    records = load_dataset(args.data)
    tr, va = split(records, args.train_fraction, seed=tcfg.seed)
    log.info("training %s on %d records, validating on %d", mcfg.representation, len(tr), len(va))
    state, hist = train((tr, va), mcfg, tcfg)
    state.save(args.checkpoint)
    if args.history:
        hist.write_csv(args.history)
    log.info("best validation MSE %.6g; checkpoint %s", hist.best_val, args.checkpoint)


def cmd_predict(args):
    from .data import rules_for
    from .graphs import build_bundle
    from .model import forward

    state = _load_state(args.checkpoint)
    if state.config.head != "peak":
        raise UsageError("predict needs a checkpoint with the peak head")
    w, fh, close = _writer(args)
    w.writerow(["path", "mu", "sigma", "A"])
    for path in args.xyz:
        s = _read_structure(path)
        p = forward(build_bundle(s, state.config.representation, rules_for(s)), state)
        if not np.all(np.isfinite(p.as_array())):
            raise FloatingPointError(f"non-finite prediction for {path}")
        w.writerow([path, repr(p.mu), repr(p.sigma), repr(p.A)])
    if close:
        fh.close()


def cmd_interpret(args):
    from .data import rules_for
    from .graphs import build_bundle
    from .model import forward_interpretable

    state = _load_state(args.checkpoint)
    if state.config.head != "interpretable":
        raise UsageError("interpret needs a checkpoint with the interpretable head")
    s = _read_structure(args.xyz)
    rep = forward_interpretable(build_bundle(s, state.config.representation, rules_for(s)), state)
    w, fh, close = _writer(args)
    w.writerow(["kind", "indices", "value", "total"])
    for kind, idx, v in rep:
        w.writerow([kind, idx, repr(float(v)), repr(rep.total)])
    if close:
        fh.close()


def _read_lines_csv(path):
    """Return {id: SpectrumLines} from an ``E,I`` or ``id,E,I`` CSV."""
    from .spectra import SpectrumLines

    groups: dict[str, list] = {}
    with open(path, newline="") as fh:
        rows = csv.DictReader(fh)
        cols = rows.fieldnames or []
        if "E" not in cols or "I" not in cols:
            raise DataError(f"{path}: expected columns E,I (and optionally id)")
        for lineno, row in enumerate(rows, 2):
            key = row["id"] if "id" in cols else Path(path).stem
            try:
                groups.setdefault(key, []).append((float(row["E"]), float(row["I"])))
            except (TypeError, ValueError):
                raise DataError(f"{path}:{lineno}: bad number") from None
    if not groups:
        raise DataError(f"{path}: no lines")
    return {k: SpectrumLines.from_pairs(v) for k, v in groups.items()}


def cmd_fit_peaks(args):
    from .spectra import broaden, fit_single_gaussian

    w, fh, close = _writer(args)
    w.writerow(["id", "mu", "sigma", "A"])
    for path in args.csv:
        for key, lines in _read_lines_csv(path).items():
            spec = broaden(lines, kernel_sigma=args.kernel_sigma, step=args.step,
                           weighted=not args.unweighted)
            p = fit_single_gaussian(spec)
            w.writerow([key, repr(p.mu), repr(p.sigma), repr(p.A)])
    if close:
        fh.close()


def cmd_csm(args):
    from .shape import coordination_shell, load_shapes, shape_measures

    s = _read_structure(args.xyz)
    shell = coordination_shell(s)
    lib = load_shapes(args.library) if args.library else None
    results = shape_measures(shell, lib)
    winner = min(results, key=lambda r: r.S)
    log.info("closest shape %s (S=%.4f)", winner.shape, winner.S)
    w, fh, close = _writer(args)
    w.writerow(["shape", "S", "best"])
    for r in results:
        w.writerow([r.shape, f"{r.S:.6f}", int(r is winner)])
    if close:
        fh.close()


# ------------------------------------------------------------------ parser


def build_parser() -> argparse.ArgumentParser:
    from .graphs import REPRESENTATIONS

    common = _Parser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="random seed")
    common.add_argument("--threads", type=int, default=1, help="worker threads (default 1)")
    common.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")

    p = _Parser(prog="alignnd", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    sub.required = True

    e = sub.add_parser("encode", parents=[common], help="print graph edge counts")
    e.add_argument("xyz")
    e.add_argument("--rep", choices=REPRESENTATIONS, default="alignn-d")
    e.add_argument("--edges", metavar="CSV", help="also dump the edge list")
    e.set_defaults(func=cmd_encode)

    g = sub.add_parser("gen-data", parents=[common], help="generate a synthetic dataset")
    g.add_argument("--out", required=True, metavar="DIR")
    g.add_argument("--n", type=int, default=1000)
    g.add_argument("--p4", type=float, default=0.35)
    g.add_argument("--p5", type=float, default=0.55)
    g.add_argument("--p6", type=float, default=0.10)
    g.add_argument("--radial-sigma", type=float, default=0.08)
    g.add_argument("--angular-sigma", type=float, default=8.0)
    g.add_argument("--dihedral-spread", type=float, default=360.0)
    g.add_argument("--expressiveness", action="store_true",
                   help="H-O-O-H torsion set instead of copper complexes")
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", parents=[common], help="train a model")
    t.add_argument("--data", required=True, metavar="DIR")
    t.add_argument("--checkpoint", required=True, metavar="PATH", help="output checkpoint")
    t.add_argument("--history", metavar="CSV")
    t.add_argument("--config", metavar="PATH", help="key=value file")
    t.add_argument("--train-fraction", type=float, default=0.9)
    t.add_argument("--rep", dest="cfg_representation", choices=REPRESENTATIONS)
    t.add_argument("--head", dest="cfg_head", choices=("peak", "interpretable"))
    t.add_argument("--L", dest="cfg_L", type=int)
    t.add_argument("--D", dest="cfg_D", type=int)
    t.add_argument("--c-d", dest="cfg_c_d", type=float)
    t.add_argument("--c-alpha", dest="cfg_c_alpha", type=float)
    t.add_argument("--eps-gate", dest="cfg_eps_gate", type=float)
    t.add_argument("--bond-angle-mode", dest="cfg_bond_angle_mode", choices=("cos", "cos_sin"))
    t.add_argument("--per-kind-maps", dest="cfg_per_kind_maps", action="store_const", const=True)
    t.add_argument("--epochs", dest="cfg_epochs", type=int)
    t.add_argument("--batch", dest="cfg_batch_size", type=int)
    t.add_argument("--lr-init", dest="cfg_lr_init", type=float)
    t.add_argument("--lr-max", dest="cfg_lr_max", type=float)
    t.add_argument("--beta1", dest="cfg_beta1", type=float)
    t.add_argument("--beta2", dest="cfg_beta2", type=float)
    t.add_argument("--warmup-fraction", dest="cfg_warmup_fraction", type=float)
    t.add_argument("--target-val-loss", dest="cfg_target_val_loss", type=float)
    t.set_defaults(func=cmd_train)

    pr = sub.add_parser("predict", parents=[common], help="predict (mu, sigma, A)")
    pr.add_argument("xyz", nargs="+")
    pr.add_argument("--checkpoint", metavar="PATH")
    pr.add_argument("--out", metavar="CSV")
    pr.set_defaults(func=cmd_predict)

    i = sub.add_parser("interpret", parents=[common], help="per-component contributions")
    i.add_argument("xyz")
    i.add_argument("--checkpoint", metavar="PATH")
    i.add_argument("--out", metavar="CSV")
    i.set_defaults(func=cmd_interpret)

    f = sub.add_parser("fit-peaks", parents=[common], help="single-Gaussian fits of line spectra")
    f.add_argument("csv", nargs="+")
    f.add_argument("--kernel-sigma", type=float, default=0.2)
    f.add_argument("--step", type=float, default=0.005)
    f.add_argument("--unweighted", action="store_true")
    f.add_argument("--out", metavar="CSV")
    f.set_defaults(func=cmd_fit_peaks)

    c = sub.add_parser("csm", parents=[common], help="continuous shape measures of the Cu shell")
    c.add_argument("xyz")
    c.add_argument("--library", metavar="PATH", help="reference shapes file")
    c.add_argument("--out", metavar="CSV")
    c.set_defaults(func=cmd_csm)
    return p


def main(argv=None) -> int:
    from .geometry import DegenerateGeometryError, StructureError
    from .graphs import GraphError
    from .shape import ShapeError
    from .spectra import FitNotConverged
    from .training import TrainingDiverged

    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(
            level=logging.INFO if args.verbose else logging.WARNING,
            format="%(levelname)s %(name)s: %(message)s",
            stream=sys.stderr,
        )
        _set_threads(args.threads)
        if args.seed is None and args.command != "train":
            args.seed = 0
        args.func(args)
        return EXIT_OK
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except (TrainingDiverged, FitNotConverged, FloatingPointError) as exc:
        print(f"error: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, StructureError, DegenerateGeometryError, GraphError, ShapeError,
            OSError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())

"""Command-line front end.

Exit codes: 0 success, 1 configuration or usage error (and failed
``verify`` suites), 2 assumption failure under ``--strict``.
"""
from __future__ import annotations

import argparse
import configparser
import logging
import sys
from pathlib import Path

from .certification import (ExperimentConfig, ResultTable, guarantee_violations,
                            parse_cluster, parse_ladder, preset, run)
from .errors import ConfigError, EigencertError

EXIT_OK, EXIT_CONFIG, EXIT_ASSUMPTION = 0, 1, 2
_BOOL_KEYS = {"strict", "precise", "quiet"}


class _Parser(argparse.ArgumentParser):
    # argparse exits with status 2 on usage errors; 2 is reserved here
    def error(self, message):
        raise ConfigError(message)


def _add_output(p: argparse.ArgumentParser) -> None:
    p.add_argument("--out", help="CSV output path (6 significant digits)")
    p.add_argument("--precise", action="store_true",
                   help="also write a full-precision CSV next to --out")
    p.add_argument("--svg", help="SVG convergence plot path")
    p.add_argument("--strict", action="store_true",
                   help="exit 2 when a gap assumption fails on any row")
    p.add_argument("--seed", type=int, help="overrides EIGENCERT_SEED")
    p.add_argument("--quiet", action="store_true", help="no text table on stdout")
    p.add_argument("--config", help="key=value file; command-line flags take precedence")


def _add_fem(p: argparse.ArgumentParser, adaptive: bool) -> None:
    p.add_argument("--domain", choices=("square", "lshape"), default="lshape" if adaptive else "square")
    p.add_argument("--cluster", required=True, help="m:M (1-based)")
    p.add_argument("--lower-bound", type=float, help="guaranteed lower bound of lambda_{M+1}")
    p.add_argument("--lower-first", type=float, help="lower bound of lambda_1 (diagnostics only)")
    p.add_argument("--reference", help="analytic | literature | fine:<k>")
    if adaptive:
        p.add_argument("--theta", type=float, default=0.6)
        p.add_argument("--max-dof", type=int, default=32000)
        p.add_argument("--initial-n", type=int, default=5)
        p.add_argument("--snapshot-dir")
    else:
        p.add_argument("--levels", required=True, help="comma-separated mesh levels")
        p.add_argument("--case", choices=("I", "II"), default="I")
        p.add_argument("--delta", type=float)
        p.add_argument("--ci", type=float)
        p.add_argument("--cs", type=float)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="eigencert",
                     description="Guaranteed error bounds for eigenvalue clusters.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("pw", help="planewave ladder on the torus")
    p.add_argument("--dim", type=int, choices=(1, 2), required=True)
    p.add_argument("--alpha", type=float, required=True)
    p.add_argument("--cluster", required=True, help="m:M (1-based)")
    p.add_argument("--ladder", required=True, help="comma-separated cutoffs")
    p.add_argument("--ref-N", type=int, required=True, help="reference cutoff")
    p.add_argument("--K-V", type=int, help="potential truncation (default 2 * ref-N)")
    p.add_argument("--lower-bound", type=float,
                   help="lower bound of lambda_{M+1} (default: free-torus provider)")
    p.add_argument("--cache-dir", help="directory for cached reference solves")
    _add_output(p)

    p = sub.add_parser("fem", help="P1 finite element ladder")
    _add_fem(p, adaptive=False)
    _add_output(p)

    p = sub.add_parser("adaptive", help="adaptive P1 run (case I)")
    _add_fem(p, adaptive=True)
    _add_output(p)

    p = sub.add_parser("verify", help="run the built-in property suites")
    p.add_argument("--instances", type=int, default=200,
                   help="random instances per identity")
    p.add_argument("--seed", type=int)

    p = sub.add_parser("reproduce", help="rerun a published table from its preset")
    p.add_argument("--table", type=int, required=True, choices=range(3, 9),
                   metavar="{3,...,8}")
    p.add_argument("--block", type=int, action="append",
                   help="1-based block number (repeatable; default all)")
    p.add_argument("--out-dir", help="directory for table<T>_block<B>.csv files")
    p.add_argument("--precise", action="store_true")
    p.add_argument("--svg", action="store_true", help="write one SVG per block into --out-dir")
    p.add_argument("--strict", action="store_true")
    p.add_argument("--seed", type=int)
    p.add_argument("--quiet", action="store_true")
    return parser


def _config_tokens(path: str, command: str) -> list[str]:
    """Flags from a key=value file: top-level keys plus the command's section."""
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read --config {path}: {exc.strerror}") from None
    cp = configparser.ConfigParser(delimiters=("=",), comment_prefixes=("#", ";"))
    cp.optionxform = str
    try:
        cp.read_string("[__top__]\n" + text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed --config {path}: {exc}") from None
    items = dict(cp["__top__"])
    if cp.has_section(command):
        items.update(cp[command])
    tokens = []
    for key, value in items.items():
        flag = "--" + key.strip().replace("_", "-")
        if key in _BOOL_KEYS:
            if value.strip().lower() in ("1", "true", "yes", "on"):
                tokens.append(flag)
        else:
            tokens += [flag, value.strip()]
    return tokens


def _expand_config(argv: list[str]) -> list[str]:
    if "--config" not in argv and not any(a.startswith("--config=") for a in argv):
        return argv
    out, path = [], None
    it = iter(argv)
    for a in it:
        if a == "--config":
            path = next(it, None)
            if path is None:
                raise ConfigError("--config needs a path")
        elif a.startswith("--config="):
            path = a.split("=", 1)[1]
        else:
            out.append(a)
    command = next((a for a in out if not a.startswith("-")), None)
    if command is None:
        raise ConfigError("--config given without a subcommand")
    k = out.index(command) + 1
    # file values first so that later command-line flags win
    return out[:k] + _config_tokens(path, command) + out[k:]


def config_from_args(args) -> ExperimentConfig:
    """Map parsed flags onto an :class:`ExperimentConfig` (validated)."""
    m, M = parse_cluster(args.cluster)
    if args.command == "pw":
        cfg = ExperimentConfig("pw", f"torus-{args.dim}d", m, M, ladder=parse_ladder(args.ladder),
                               reference=f"fine:{args.ref_N}", alpha=args.alpha, K_V=args.K_V,
                               lower_bound=args.lower_bound, seed=args.seed,
                               cache_dir=args.cache_dir)
    else:
        adaptive = args.command == "adaptive"
        ref = args.reference
        if ref is None:
            ref = "analytic" if args.domain == "square" else ("fine:2" if not adaptive else "literature")
        cfg = ExperimentConfig(
            "fem", args.domain, m, M, reference=ref, lower_bound=args.lower_bound,
            lower_first=args.lower_first, seed=args.seed, adaptive=adaptive,
            ladder=() if adaptive else parse_ladder(args.levels),
            case="I" if adaptive else args.case,
            delta=None if adaptive else args.delta,
            C_I=None if adaptive else args.ci, C_S=None if adaptive else args.cs,
            theta=args.theta if adaptive else 0.6,
            max_dof=args.max_dof if adaptive else 32000,
            initial_n=args.initial_n if adaptive else 5,
            snapshot_dir=args.snapshot_dir if adaptive else None)
    return cfg.validate()


def emit_outputs(table: ResultTable, out=None, precise: bool = False, svg=None,
                 quiet: bool = False, stream=None) -> list[Path]:
    """Write CSV / precise CSV / SVG files and print the text table."""
    written = []
    if out is not None:
        out = Path(out)
        table.write_csv(out)
        written.append(out)
        if precise:
            p = out.with_name(out.stem + ".precise" + out.suffix)
            table.write_csv(p, precise=True)
            written.append(p)
    if svg is not None:
        svg = Path(svg)
        try:
            svg.write_text(table.to_svg())
        except OSError as exc:
            raise OSError(f"cannot write {svg}: {exc.strerror}") from exc
        written.append(svg)
    if not quiet:
        (stream or sys.stdout).write(table.to_text())
    return written


def _report(table: ResultTable, strict: bool) -> int:
    for msg in guarantee_violations(table):
        print(f"warning: {msg}", file=sys.stderr)
    if table.any_assumption_failed:
        print("warning: gap assumptions failed on some rows; estimators withheld",
              file=sys.stderr)
        if strict:
            return EXIT_ASSUMPTION
    return EXIT_OK


def _cmd_run(args) -> int:
    cfg = config_from_args(args)
    table = run(cfg)
    emit_outputs(table, args.out, args.precise, args.svg, args.quiet)
    return _report(table, args.strict)


def _cmd_reproduce(args) -> int:
    cfgs = preset(args.table)
    blocks = args.block or list(range(1, len(cfgs) + 1))
    if any(b < 1 or b > len(cfgs) for b in blocks):
        raise ConfigError(f"--block must lie in 1..{len(cfgs)} for table {args.table}")
    out_dir = Path(args.out_dir) if args.out_dir else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
    status = EXIT_OK
    for b in blocks:
        cfg = cfgs[b - 1]
        if args.seed is not None:
            cfg.seed = args.seed
        table = run(cfg)
        stem = f"table{args.table}_block{b}"
        emit_outputs(table,
                     out=None if out_dir is None else out_dir / f"{stem}.csv",
                     precise=args.precise,
                     svg=None if (out_dir is None or not args.svg) else out_dir / f"{stem}.svg",
                     quiet=args.quiet)
        if not args.quiet:
            print()
        status = max(status, _report(table, args.strict))
    return status


def _cmd_verify(args) -> int:
    from .verification import run_all
    results = run_all(instances=args.instances, seed=args.seed)
    for r in results:
        print(r.summary())
    return EXIT_OK if all(r.passed for r in results) else EXIT_CONFIG


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = build_parser().parse_args(_expand_config(argv))
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        if args.command == "verify":
            return _cmd_verify(args)
        if args.command == "reproduce":
            return _cmd_reproduce(args)
        return _cmd_run(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except EigencertError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())

"""Command line entry point ``mfbosons``.

Exit status: 0 when every enabled check passes, 1 when a check fails,
2 for invalid input (bad configuration, unsupported size), 3 for numerical
failures (integration accuracy, grid resolution, refinement instability).
Configuration comes from files and flags only; the environment is ignored.
"""

from __future__ import annotations

import argparse
import sys
from typing import Sequence

from . import experiments as ex
from .config import load_config, load_vv_config
from .errors import CapacityError, ConfigError, MFBosonsError


def _common(parser: argparse.ArgumentParser, multi_config: bool = False):
    if multi_config:
        parser.add_argument("--config", action="append", default=[], metavar="PATH",
                            help="scenario file (repeatable)")
        parser.add_argument("--grid", metavar="PATH", help="grid file with a base scenario and parameter lists")
    else:
        parser.add_argument("--config", required=True, metavar="PATH", help="scenario file")
    parser.add_argument("--out", metavar="PATH", help="output CSV (default: config output.path, else stdout)")
    parser.add_argument("--tolerance-profile", choices=["strict", "default"], default=None,
                        help="override the profile named in the config")
    parser.add_argument("--threads", type=int, default=1, metavar="INT",
                        help="worker threads (scenario-level; used by sweep)")
    parser.add_argument("--seed", type=int, default=None, metavar="INT", help="override the scenario seed")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mfbosons", description="Mean-field boson dynamics and condensation bounds.")
    sub = p.add_subparsers(dest="command", required=True)
    _common(sub.add_parser("simulate", help="MGF and bound table over the (t, beta) samples"))
    _common(sub.add_parser("check-bound", help="bound table; nonzero exit on any violated margin"))
    _common(sub.add_parser("verify-algebra", help="explicit excitation-map and generator identities"))
    _common(sub.add_parser("sweep", help="many scenarios, merged table"), multi_config=True)
    _common(sub.add_parser("estimate-vv", help="condensate-weighted potential size by quadrature"))
    return p


def _scenario(args):
    cfg = load_config(args.config)
    if args.seed is not None or args.tolerance_profile is not None:
        cfg = cfg.with_overrides(seed=args.seed, profile=args.tolerance_profile)
    return cfg


def _bound_command(args, check: bool) -> int:
    cfg = _scenario(args)
    result = ex.simulate(cfg)
    max_n = cfg.N if cfg.output.distribution else None
    ex.write_text(ex.render_bound_table(result.rows, max_n), args.out or cfg.output.path)
    if not check:
        return ex.EXIT_OK
    status = ex.check_bound_status(result)
    worst = min((r.margin for r in result.rows if r.margin == r.margin), default=float("nan"))
    msg = f"{cfg.id}: {len(result.rows)} rows, smallest margin {worst:.3e}, {len(result.violations)} violations"
    if result.gronwall is not None:
        msg += f"; Gronwall {'passed' if result.gronwall.passed else 'FAILED'}"
        msg += f" ({int(result.gronwall.warnings.sum())} warnings)"
    print(msg, file=sys.stderr)
    return status


def _verify(args) -> int:
    cfg = _scenario(args)
    checks = ex.run_verify_algebra(cfg)
    text = ex.render_table(ex.ALGEBRA_HEADER, ex.algebra_rows(cfg.id, checks))
    ex.write_text(text, args.out or cfg.output.path)
    failed = [c.check for c in checks if not c.passed]
    print(f"{cfg.id}: {len(checks) - len(failed)}/{len(checks)} checks passed"
          + (f"; failed: {', '.join(failed)}" if failed else ""), file=sys.stderr)
    return ex.algebra_status(checks)


def _sweep(args) -> int:
    configs = [load_config(p) for p in args.config]
    if args.grid:
        configs += ex.expand_grid(args.grid)
    if not configs:
        raise ConfigError("sweep needs at least one --config or a --grid file")
    if args.seed is not None or args.tolerance_profile is not None:
        configs = [c.with_overrides(seed=args.seed, profile=args.tolerance_profile) for c in configs]
    res = ex.run_sweep(configs, args.out, threads=args.threads)
    print(f"sweep: {len(configs)} scenarios, {res.rows_written} rows, {len(res.failures)} failed, "
          f"{res.violations} margin violations", file=sys.stderr)
    for sid, msg in sorted(res.failures.items()):
        print(f"  {sid}: {msg}", file=sys.stderr)
    return res.exit_code


def _vv(args) -> int:
    vc = load_vv_config(args.config)
    est = ex.run_estimate_vv(vc)
    ex.write_text(ex.render_table(ex.VV_HEADER, ex.vv_rows(vc, est)), args.out or vc.output.path)
    print(f"{vc.id}: vv = {est.value:.12g} (K = {est.coupling:.12g})", file=sys.stderr)
    return ex.EXIT_OK


COMMANDS = {
    "simulate": lambda a: _bound_command(a, check=False),
    "check-bound": lambda a: _bound_command(a, check=True),
    "verify-algebra": _verify,
    "sweep": _sweep,
    "estimate-vv": _vv,
}


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, CapacityError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return ex.EXIT_INPUT
    except MFBosonsError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return ex.EXIT_NUMERICAL


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())

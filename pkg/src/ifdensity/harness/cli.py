"""Command line entry point.

    ifdensity sim|solve|firstpassage|iterate|compare|study [--config PATH] [--out DIR]
              [--seed N] [--paths N] [--grid-h H] [--dt DT]

Exit status is 0 iff every evaluated assertion passes.
"""

import argparse
import logging
import sys

from .config import ConfigError, RunConfig, load_config
from .run import ALL_CRITERIA, Context, run

# subcommand -> (pipelines or None for the config's own, criteria, write fields)
COMMANDS = {
    "sim": (("mc",), (), True),
    "solve": (("fpe",), (1, 9), True),
    "firstpassage": (("series",), (4,), False),
    "iterate": (("series",), (4, 6), True),
    "compare": (None, ALL_CRITERIA, True),
    "study": (("fpe", "series"), (6, 8, 11), False),
}


def _fraction(text):
    if "/" in text:
        a, b = text.split("/", 1)
        return float(a) / float(b)
    return float(text)


def build_parser():
    p = argparse.ArgumentParser(prog="ifdensity", description=__doc__.split("\n\n")[0])
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--config", help="key = value config file")
        s.add_argument("--out", help="output directory (overrides 'outputs')")
        s.add_argument("--seed", type=int)
        s.add_argument("--paths", type=int, help="number of MC paths")
        s.add_argument("--grid-h", type=_fraction, help="space step, e.g. 1/400")
        s.add_argument("--dt", type=float, help="time step")
        s.add_argument("-v", "--verbose", action="store_true")
    return p


def _config(args):
    cfg = load_config(args.config) if args.config else RunConfig()
    pipelines = COMMANDS[args.command][0]
    return cfg.with_overrides(mc_seed=args.seed, mc_n_paths=args.paths, grid_h=args.grid_h, dt=args.dt,
                              outputs=args.out, pipelines=pipelines)


def _report(manifest, out):
    for m in manifest.metrics:
        tag = "" if m.criterion is None else f"[{m.criterion:>2}] "
        if m.relation == "info":
            print(f"      {m.name:<36} {m.value:.6g}", file=out)
            continue
        bound = f"{m.lower:g}..{m.threshold:g}" if m.relation in ("in", "open") else f"{m.relation} {m.threshold:g}"
        print(f"{'PASS' if m.passed else 'FAIL'} {tag}{m.name:<32} {m.value:.6g}  ({bound})", file=out)
    if manifest.status != "ok":
        print(f"run failed: {manifest.error}", file=out)


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _config(args)
    except (ConfigError, OSError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    _, criteria, fields = COMMANDS[args.command]
    ctx = Context(cfg)
    manifest = run(cfg, criteria, ctx=ctx, fields=fields)
    _report(manifest, sys.stdout)
    if args.command == "study" and manifest.status == "ok":
        _print_studies(ctx.studies, sys.stdout)
    print(f"outputs written to {cfg.outputs}")
    return 0 if manifest.passed else 1


def _print_studies(studies, out):
    from .compare import fit_order

    for name in ("mms", "temporal", "volterra"):
        f = studies[name]
        errs = " ".join(f"{e:.3e}" for e in f.errors)
        print(f"      {name:<10} order {f.order:.3f}  R2 {f.r2:.5f}  errors {errs}", file=out)
    for name, (hs, r) in studies["weak"].items():
        if name != "one":
            f = fit_order(hs, r)
            print(f"      weak {name:<15} order {f.order:.3f}  R2 {f.r2:.5f}", file=out)
    defects, ratio = studies["defect"]
    print(f"      kink defect h=1/200 {defects[0]:.3e}, h=1/400 {defects[1]:.3e}, ratio {ratio:.3f}", file=out)


if __name__ == "__main__":
    sys.exit(main())

"""Command-line interface.

Four subcommands: ``exponent`` runs a crossing-probability estimate (direct
by default, splitting when ``--population`` is given) and fits the decay
slope; ``good-boxes`` samples one configuration and prints its good-box
report; ``loop-soup`` samples a soup and prints the cluster summary;
``experiment`` dispatches the drivers of :mod:`latwalk.experiments` and
appends their records to the result store.

Exit codes are distinct per failure class: 2 for usage errors (unknown
flags, bad values at parse time), 3 for configuration errors rejected by the
library, 4 for unwritable output, 5 for a store whose hash already belongs
to a different configuration.  All tables printed to stdout are
deterministic functions of the flags, so a rerun prints byte-identical
output; wall times go only into the record file.
"""

from __future__ import annotations

import argparse
import json
import sys

from . import exponents
from .detectors import DetectorConfig, good_boxes_bdp, good_boxes_pdcp, good_boxes_ptp
from .experiments import (
    CSV_HEADER,
    ExperimentSpec,
    StoreCollisionError,
    _atomic_write,
    records_to_csv,
    run_experiment,
    save_records,
    summarize,
)
from .loopsoup import Disc, cluster_report, clusters, sample_conditioned_loop, sample_loop_soup, soup_to_text
from .paths import ExitDisc, rng_stream, sample_walk

__all__ = ["build_parser", "cli_main", "main"]


def parse_scales(text: str) -> tuple[int, ...]:
    """``a..b`` (inclusive) or a comma-separated list."""
    if ".." in text:
        a, b = text.split("..", 1)
        return tuple(range(int(a), int(b) + 1))
    return tuple(int(p) for p in text.split(","))


def parse_lengths(text: str) -> tuple[int, ...]:
    """``a..b`` means the dyadic lengths 2^a .. 2^b; a comma-separated list
    gives explicit lengths."""
    if ".." in text:
        a, b = text.split("..", 1)
        return tuple(1 << e for e in range(int(a), int(b) + 1))
    return tuple(int(p) for p in text.split(","))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="latwalk")
    sub = parser.add_subparsers(dest="command", required=True)

    exp = sub.add_parser("exponent", help="estimate a crossing exponent")
    exp.add_argument("--kind", required=True,
                     choices=("nonintersection", "disconnection", "generalized"))
    exp.add_argument("--k", type=int, default=1)
    exp.add_argument("--l", type=int)
    exp.add_argument("--c", type=float)
    exp.add_argument("--dim", type=int, default=2)
    exp.add_argument("--levels", type=parse_scales, default=(3, 4, 5, 6, 7))
    exp.add_argument("--trials", type=int, default=1000)
    exp.add_argument("--population", type=int,
                     help="use the splitting estimator with this population")
    exp.add_argument("--seed", type=int, default=0)
    exp.add_argument("--out")
    exp.add_argument("--format", choices=("csv", "jsonl"), default="csv")

    gb = sub.add_parser("good-boxes", help="scan one sampled configuration")
    gb.add_argument("--kind", required=True, choices=("ptp", "pdcp", "bdp"))
    gb.add_argument("--n", type=int, required=True)
    gb.add_argument("--delta", type=float, default=2.0**-4)
    gb.add_argument("--iota", type=float, default=0.25)
    gb.add_argument("--resolution", type=int, default=256)
    gb.add_argument("--dim", type=int, default=2)
    gb.add_argument("--c", type=float, default=1.0)
    gb.add_argument("--two-loop", action="store_true")
    gb.add_argument("--seed", type=int, default=0)
    gb.add_argument("--out")

    ls = sub.add_parser("loop-soup", help="sample a loop soup")
    ls.add_argument("--c", type=float, default=1.0)
    ls.add_argument("--resolution", type=int, default=32)
    ls.add_argument("--seed", type=int, default=0)
    ls.add_argument("--out")

    xp = sub.add_parser("experiment", help="run an experiment driver")
    xp.add_argument("name", choices=(
        "moment-scaling", "pair-correlation", "existence-decay",
        "annulus-profile", "discrete-ptp-decay"))
    xp.add_argument("--kind")
    xp.add_argument("--n", type=parse_scales, default=())
    xp.add_argument("--N", type=parse_lengths, default=())
    xp.add_argument("--delta", type=float, default=2.0**-4)
    xp.add_argument("--iota", type=float, default=0.25)
    xp.add_argument("--resolution", type=int, default=256)
    xp.add_argument("--dim", type=int, default=2)
    xp.add_argument("--c", type=float, default=1.0)
    xp.add_argument("--two-loop", action="store_true")
    xp.add_argument("--trials", type=int, default=100)
    xp.add_argument("--offset", type=int, default=0)
    xp.add_argument("--seed", type=int, default=0)
    xp.add_argument("--out")
    xp.add_argument("--format", choices=("csv", "jsonl"), default="jsonl")
    return parser


def _exponent_params(args) -> dict:
    params: dict = {"k": args.k}
    if args.kind == "nonintersection":
        params["l"] = args.l if args.l is not None else 1
        params["d"] = args.dim
    elif args.kind == "generalized":
        if args.c is None:
            raise ValueError("generalized disconnection needs --c")
        params = {"c": args.c, "k": args.k, "d": args.dim}
    else:
        params["d"] = args.dim
    return params


def _exponent_text(curve, est, seed: int) -> str:
    lines = [CSV_HEADER, "kind,params,level,trials,successes"]
    lines += exponents.curve_csv_rows(curve)
    if est is None:
        lines.append("# estimate: n/a (not enough levels with data)")
    else:
        lines.append("# estimate: " + exponents.estimate_csv_row(curve, est, seed))
    return "\n".join(lines) + "\n"


def _cmd_exponent(args) -> int:
    params = _exponent_params(args)
    if args.population is not None:
        curve = exponents.split_estimate(
            args.kind, params, args.levels, args.population, args.seed
        )
    else:
        curve = exponents.estimate_crossing_prob(
            args.kind, params, args.levels, args.trials, args.seed
        )
    est = None
    try:
        est = exponents.fit_exponent(
            curve,
            None if len(curve.levels) >= 5 else (curve.levels[0], curve.levels[-1]),
        )
    except ValueError:
        pass
    text = _exponent_text(curve, est, args.seed)
    sys.stdout.write(text)
    if args.kind != "nonintersection" or args.dim == 2:
        closed_kind = "intersection" if args.kind == "nonintersection" else args.kind
        kw = {"k": args.k}
        if closed_kind == "intersection":
            kw["lam"] = params["l"]
        if closed_kind == "generalized":
            kw["c"] = params["c"]
        print(f"# exact: {exponents.closed_form_exponent(closed_kind, **kw):.8g}")
    if args.out:
        if args.format == "csv":
            _atomic_write(args.out, text)
        else:
            payload = {
                "kind": curve.kind,
                "params": curve.params,
                "levels": list(curve.levels),
                "trials": list(curve.trials),
                "successes": list(int(s) for s in curve.successes),
                "conditional": curve.conditional,
                "truncated": curve.truncated,
                "steps": curve.steps,
                "seed": args.seed,
                "estimate": None
                if est is None
                else {
                    "slope": est.slope,
                    "stderr": est.stderr,
                    "fit_range": list(est.fit_range),
                    "method": est.method,
                },
            }
            _atomic_write(args.out, json.dumps(payload, sort_keys=True) + "\n")
    return 0


def _cmd_good_boxes(args) -> int:
    cfg = DetectorConfig(
        args.kind, args.n, args.delta, args.iota, args.resolution, args.dim,
        args.two_loop,
    )
    rng = rng_stream(args.seed, 0)
    if args.kind in ("ptp", "pdcp"):
        start = (0,) * args.dim
        walk = sample_walk(start, ExitDisc(start, args.resolution), rng)
        scan = good_boxes_ptp if args.kind == "ptp" else good_boxes_pdcp
        report = scan(walk, cfg)
    else:
        domain = Disc((0, 0), args.resolution)
        loop = sample_conditioned_loop(args.iota, domain, rng)
        second = sample_conditioned_loop(args.iota, domain, rng) if args.two_loop else None
        soup = sample_loop_soup(domain, args.c, 0.0, rng)
        report = good_boxes_bdp(loop, soup, cfg, second)
    text = report.to_text() + "\n"
    sys.stdout.write(text)
    if args.out:
        _atomic_write(args.out, text)
    return 0


def _cmd_loop_soup(args) -> int:
    soup = sample_loop_soup(
        Disc((0, 0), args.resolution), args.c, 0.0, rng_stream(args.seed, 0)
    )
    total = sum(loop.length for loop in soup.loops)
    print(f"loops={len(soup.loops)} total_length={total} "
          f"c={args.c} R={args.resolution} seed={args.seed}")
    print(cluster_report(clusters(soup)))
    if args.out:
        _atomic_write(args.out, soup_to_text(soup))
    return 0


def _cmd_experiment(args) -> int:
    spec = ExperimentSpec(
        experiment=args.name,
        kind=args.kind,
        scales=args.n,
        lengths=args.N,
        trials=args.trials,
        seed=args.seed,
        trial_offset=args.offset,
        delta=args.delta,
        iota=args.iota,
        resolution=args.resolution,
        d=args.dim,
        c=args.c,
        two_loop=args.two_loop,
        out=args.out,
    )
    records = run_experiment(spec)
    print(summarize(spec, records))
    if args.out:
        if args.format == "jsonl":
            save_records(args.out, spec, records)
        else:
            _atomic_write(args.out, records_to_csv(records))
    return 0


_COMMANDS = {
    "exponent": _cmd_exponent,
    "good-boxes": _cmd_good_boxes,
    "loop-soup": _cmd_loop_soup,
    "experiment": _cmd_experiment,
}


def cli_main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return _COMMANDS[args.command](args)
    except StoreCollisionError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 5
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


def main() -> None:
    raise SystemExit(cli_main())


if __name__ == "__main__":
    main()

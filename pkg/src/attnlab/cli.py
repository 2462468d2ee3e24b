"""``attnlab`` command line: run, sweep, verify, plot.

stdout carries machine-readable summaries (CSV rows, the verify table);
diagnostics go to stderr.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .errors import AttnLabError
from .harness.config import load_config, with_overrides
from .harness.sweep import grid_sweep
from .harness.train import COMPLETED, run_experiment, summary_csv
from .svg import line_chart

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_DIVERGED = 2


def _load(args):
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = with_overrides(cfg, {"seed": args.seed})
    return cfg


def cmd_run(args) -> int:
    cfg = _load(args)
    out = Path(args.out or Path("runs") / cfg.run_id)
    res = run_experiment(cfg, out_dir=out, keep_model=False)
    sys.stdout.write(summary_csv([res]))
    print(f"{res.run_id}: {res.status} after {res.steps_completed} steps -> {out}", file=sys.stderr)
    return EXIT_OK if res.status == COMPLETED else EXIT_DIVERGED


def cmd_sweep(args) -> int:
    cfg = _load(args)
    with open(args.grid) as f:
        grid = json.load(f)
    if not isinstance(grid, dict):
        raise AttnLabError("grid file must hold a JSON object mapping config paths to value lists")
    out = Path(args.out or Path("runs") / cfg.run_id)
    results = grid_sweep(cfg, grid, out_dir=out, parallel=args.parallel)
    sys.stdout.write(summary_csv(results))
    n_div = sum(r.status != COMPLETED for r in results)
    print(f"{len(results)} runs, {n_div} diverged -> {out / 'sweep_summary.csv'}", file=sys.stderr)
    return EXIT_OK


def cmd_verify(args) -> int:
    from .verify import run_suite

    checks = run_suite(args.suite, seed=args.seed or 0)
    width = max(len(c.name) for c in checks)
    for c in checks:
        print(f"{'PASS' if c.passed else 'FAIL'}  {c.name:<{width}}  {c.detail}")
    n_fail = sum(not c.passed for c in checks)
    print(f"{len(checks) - n_fail}/{len(checks)} checks passed", file=sys.stderr)
    return EXIT_OK if n_fail == 0 else EXIT_ERROR


def _field_values(rec: dict, field: str, path: str):
    """``field`` is a top-level key or ``layers.<i>.<key>``."""
    parts = field.split(".")
    node = rec
    for p in parts:
        if isinstance(node, list):
            try:
                node = node[int(p)]
            except (ValueError, IndexError):
                raise AttnLabError(f"{path}: field {field!r} not present in records") from None
        elif isinstance(node, dict) and p in node:
            node = node[p]
        else:
            raise AttnLabError(f"{path}: field {field!r} not present in records")
    return node


def cmd_plot(args) -> int:
    fields = [f for f in args.fields.split(",") if f]
    logy = set(f for f in (args.logy or "").split(",") if f)
    unknown = logy - set(fields)
    if unknown:
        raise AttnLabError(f"--logy names fields not being plotted: {', '.join(sorted(unknown))}")
    runs = []
    for path in args.metrics:
        recs = [json.loads(line) for line in Path(path).read_text().splitlines() if line.strip()]
        if not recs:
            raise AttnLabError(f"{path}: no records")
        label = Path(path).parent.name or Path(path).stem
        runs.append((label, path, recs))
    panels = []
    for field in fields:
        series = []
        for label, path, recs in runs:
            xs = [r["step"] for r in recs]
            ys = [_field_values(r, field, path) for r in recs]
            series.append((label, xs, [None if y is None else float(y) for y in ys]))
        panels.append({"field": field, "logy": field in logy, "series": series})
    svg = line_chart(panels)
    if args.out:
        Path(args.out).write_text(svg)
    else:
        sys.stdout.write(svg)
    return EXIT_OK


class _Parser(argparse.ArgumentParser):
    # usage errors share exit code 1 with other failures; 2 means DIVERGED
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_ERROR, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="attnlab", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="train one configuration")
    r.add_argument("--config", required=True)
    r.add_argument("--out")
    r.add_argument("--seed", type=int)
    r.set_defaults(fn=cmd_run)

    s = sub.add_parser("sweep", help="run the Cartesian product of a grid")
    s.add_argument("--config", required=True)
    s.add_argument("--grid", required=True, help='JSON object, e.g. {"optimizer.lr": [1e-3, 2e-3]}')
    s.add_argument("--out")
    s.add_argument("--seed", type=int)
    s.add_argument("--parallel", type=int, default=1)
    s.set_defaults(fn=cmd_sweep)

    v = sub.add_parser("verify", help="run a numerical property suite")
    v.add_argument("--suite", choices=("bound", "prop32", "power", "gradcheck", "all"), default="all")
    v.add_argument("--seed", type=int)
    v.set_defaults(fn=cmd_verify)

    pl = sub.add_parser("plot", help="render metrics.jsonl files to an SVG line chart")
    pl.add_argument("metrics", nargs="+")
    pl.add_argument("--fields", required=True, help="comma list, e.g. train_loss,layers.0.mean_entropy")
    pl.add_argument("--logy", help="comma list of fields drawn on a log axis")
    pl.add_argument("--out")
    pl.set_defaults(fn=cmd_plot)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (AttnLabError, OSError, json.JSONDecodeError) as exc:
        print(f"attnlab {args.command}: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())

"""Cartesian grid sweeps over dotted config paths."""

from __future__ import annotations

import itertools
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from ..errors import ConfigError
from .config import ExperimentConfig, with_overrides
from .train import run_experiment, summary_csv


def expand_grid(base: ExperimentConfig, grid: dict) -> list[ExperimentConfig]:
    """One config per point of the product of ``grid`` values, in row-major order.

    Keys are dotted paths (``"optimizer.lr"``, ``"model.norm_mode"``). Run ids
    are ``<base run_id>-<index>``; seeds are left as configured, so every point
    sees the same data and initialisation unless ``seed`` itself is swept.
    """
    if not grid:
        return [base]
    keys = list(grid)
    for k in keys:
        if not isinstance(grid[k], list) or not grid[k]:
            raise ConfigError(f"grid entry {k!r} must be a non-empty list")
    out = []
    for i, combo in enumerate(itertools.product(*(grid[k] for k in keys))):
        over = dict(zip(keys, combo))
        over["run_id"] = f"{base.run_id}-{i:03d}"
        out.append(with_overrides(base, over))
    return out


def _run_one(args):
    cfg, out_dir = args
    res = run_experiment(cfg, out_dir=out_dir, keep_model=False)
    res.entropy_trace = None
    return res


def grid_sweep(base: ExperimentConfig, grid: dict, out_dir=None, parallel: int = 1):
    """Run every grid point; returns results in grid order.

    With ``out_dir`` each run gets its own sub-directory and
    ``sweep_summary.csv`` collects one row per run. ``parallel > 1`` fans runs
    out to worker processes.
    """
    cfgs = expand_grid(base, grid)
    dirs = [None] * len(cfgs)
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        dirs = [out_dir / c.run_id for c in cfgs]
    jobs = list(zip(cfgs, dirs))
    if parallel > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=min(parallel, len(jobs))) as ex:
            results = list(ex.map(_run_one, jobs))
    else:
        results = [run_experiment(c, out_dir=d, keep_model=False) for c, d in jobs]
    if out_dir is not None:
        (out_dir / "sweep_summary.csv").write_text(summary_csv(results))
    return results

"""The training loop and its metric stream."""

from __future__ import annotations

import csv
import io
import json
import math
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from ..diagnostics import adamw_stability_threshold, check_attention_bound, hvp, lanczos_top_eigs
from ..transformer import Model, set_global_temperature
from .config import ExperimentConfig, dump_config
from .optim import Optimizer
from .schedule import lr_at
from .seeds import derive_seed, stream_rng
from .tasks import Dataset, make_task

COMPLETED = "COMPLETED"
DIVERGED = "DIVERGED"

SUMMARY_FIELDS = ("run_id", "status", "final_loss", "final_eval", "first_collapse_step", "max_sharpness", "threshold")

EVAL_CHUNK = 256


def _clean(x):
    """JSON-safe scalar: non-finite floats become null."""
    if x is None:
        return None
    if isinstance(x, (bool, np.bool_)):
        return bool(x)
    if isinstance(x, (int, np.integer)):
        return int(x)
    x = float(x)
    return x if math.isfinite(x) else None


@dataclass
class MetricRecord:
    """One line of ``metrics.jsonl``.

    ``train_loss`` is the loss of the batch drawn at ``step`` (before its
    update); ``eval_metric`` is eval accuracy after the update, or null when no
    evaluation ran at this step. ``layers`` holds one dict per layer with
    ``mean_entropy``, ``min_entropy``, ``sigma_kq`` and ``grad_inf_norm``.
    """

    step: int
    epoch: int
    train_loss: float | None
    eval_metric: float | None
    lr: float
    tau: float
    layers: list
    sharpness: float | None = None
    threshold: float | None = None
    certificate: list | None = None
    wall_ms: float | None = None

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=False, allow_nan=False)

    @classmethod
    def from_json(cls, line: str) -> "MetricRecord":
        return cls(**json.loads(line))


@dataclass
class ExperimentResult:
    run_id: str
    status: str
    records: list
    final_loss: float | None
    final_eval: float | None
    first_collapse_step: int | None
    max_sharpness: float | None
    threshold: float | None
    steps_completed: int
    # per-step mean entropy of every layer (training batch), for analysis
    entropy_trace: np.ndarray = field(repr=False, default=None)
    # (step, sharpness) for every probe
    sharpness_trace: list = field(default_factory=list)
    model: Model | None = field(repr=False, default=None)

    def summary_row(self) -> dict:
        return {k: getattr(self, k) for k in SUMMARY_FIELDS}


def summary_csv(results, header: bool = True) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=SUMMARY_FIELDS, lineterminator="\n")
    if header:
        w.writeheader()
    for r in results:
        row = r.summary_row() if isinstance(r, ExperimentResult) else r
        w.writerow({k: ("" if row[k] is None else row[k]) for k in SUMMARY_FIELDS})
    return buf.getvalue()


def eval_accuracy(model: Model, data: Dataset, tau: float) -> float:
    correct = 0
    total = 0
    for i in range(0, len(data.eval_x), EVAL_CHUNK):
        x = data.eval_x[i : i + EVAL_CHUNK]
        y = data.eval_y[i : i + EVAL_CHUNK]
        pred = model.predict(x, tau=tau)
        correct += int(np.sum(pred == y))
        total += y.size
    return correct / total


def _flat_grad(model: Model, grads: dict) -> np.ndarray:
    return np.concatenate([grads[n].reshape(-1) for n in model.params])


def sharpness_probe(model: Model, x, y, tau: float, probe_cfg, seed: int):
    """Top Hessian eigenvalues of the loss on a fixed batch, at the current parameters.

    Evaluation-mode forwards only, so spectral state is left untouched; the
    parameters are restored exactly afterwards.
    """
    saved = dict(model.params)
    theta0 = model.flat_params()
    p = theta0.size
    eps = probe_cfg.hvp_eps * max(float(np.linalg.norm(theta0)) / math.sqrt(p), 1e-12)

    def loss_and_grad(theta):
        model.set_flat_params(theta)
        res, grads = model.loss_and_grads(x, y, tau=tau, training=False, stats="none")
        res.tape.clear()
        return res.loss, _flat_grad(model, grads)

    try:
        probe = lanczos_top_eigs(
            lambda v: hvp(loss_and_grad, theta0, v, eps),
            p,
            k=min(probe_cfg.top_k, probe_cfg.lanczos_iters),
            iters=probe_cfg.lanczos_iters,
            seed=seed,
            hvp_epsilon=eps,
        )
    finally:
        model.params.clear()
        model.params.update(saved)
    return probe


def _layer_dicts(snapshots):
    out = []
    for s in snapshots:
        st = s.attention_stats
        out.append(
            {
                "mean_entropy": _clean(st.mean_entropy),
                "min_entropy": _clean(st.min_row_entropy),
                "sigma_kq": _clean(st.sigma_kq),
                "grad_inf_norm": _clean(s.grad_inf_norm),
            }
        )
    return out


def _certificates(res, tau):
    out = []
    for snap, cache in zip(res.snapshots, res.attn_cache):
        cert = check_attention_bound(snap.attention_stats, cache["raw"].value / tau)
        out.append({k: _clean(v) for k, v in cert.summary().items()})
    return out


def _threshold(opt_cfg, lr):
    if opt_cfg.kind in ("adam", "adamw") and lr > 0:
        return adamw_stability_threshold(opt_cfg.beta1, lr)
    return None


def run_experiment(cfg: ExperimentConfig, out_dir=None, keep_model: bool = True) -> ExperimentResult:
    """Train one configuration end to end.

    With ``out_dir`` the run writes ``config.json``, ``metrics.jsonl`` (one
    record per line, appended as training proceeds), ``summary.csv`` and
    ``checkpoint.eckp`` there.
    """
    cfg.validate()
    seed = cfg.seed
    tc = cfg.task
    readout = "cls" if tc.kind == "majority" else "token"
    model_cfg = replace(
        cfg.model,
        readout=readout,
        n_classes=tc.vocab if readout == "cls" else cfg.model.n_classes,
        seed=derive_seed(seed, "init"),
    )
    model = Model(model_cfg)
    data = make_task(tc.kind, tc.vocab, tc.t, tc.n_train, tc.n_eval, derive_seed(seed, "data"))
    batch_rng = stream_rng(seed, "batches")
    opt = Optimizer(cfg.optimizer, decay=model.decay)
    probe_seed = derive_seed(seed, "probe")
    probe_x = data.eval_x[: cfg.probe.batch_size]
    probe_y = data.eval_y[: cfg.probe.batch_size]
    probe_every = cfg.probe.every or cfg.steps_per_epoch
    probe_extra = set(cfg.probe.extra_steps)
    intervene_at = cfg.intervention_at
    attn_len = tc.t + (1 if readout == "cls" else 0)
    collapse_level = cfg.collapse_threshold * math.log(attn_len)
    theory_mode = not model_cfg.use_sqrt_d_scaling

    metrics_file = None
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        dump_config(cfg, out_dir / "config.json")
        metrics_file = open(out_dir / "metrics.jsonl", "w", encoding="utf-8", newline="\n")

    records = []
    trace = np.full((cfg.steps, model_cfg.n_layers), np.nan)
    sharp_trace = []
    status = COMPLETED
    bad = 0
    first_collapse = None
    last_loss = None
    last_eval = None
    max_sharp = None
    last_threshold = None
    steps_done = 0
    # overflow on the way to divergence is expected; non-finite losses and grads are handled below
    with np.errstate(over="ignore", invalid="ignore"):
        try:
            for step in range(cfg.steps):
                t0 = time.perf_counter()
                if intervene_at is not None and step == intervene_at:
                    set_global_temperature(model, cfg.intervention.tau_target)
                lr = lr_at(step, cfg.base_lr, cfg.schedule, cfg.steps)
                is_log = step % cfg.log_every == 0 or step == cfg.steps - 1
                full = is_log and cfg.full_stats_every > 0 and step % cfg.full_stats_every == 0
                idx = batch_rng.integers(0, len(data.train_x), size=cfg.batch_size)
                res, grads = model.loss_and_grads(
                    data.train_x[idx], data.train_y[idx], training=True, stats="full" if full else "entropy"
                )
                loss = res.loss
                ents = [s.attention_stats.mean_entropy for s in res.snapshots]
                trace[step] = ents
                if first_collapse is None and min(ents) < collapse_level:
                    first_collapse = step

                ok = math.isfinite(loss) and opt.step(model.params, grads, lr)
                res.tape.clear()
                bad = 0 if ok else bad + 1
                if ok:
                    last_loss = loss
                steps_done = step + 1
                diverged = bad >= cfg.max_bad_steps

                probe = None
                if cfg.probe.enabled and not diverged and ((step + 1) % probe_every == 0 or step in probe_extra):
                    probe = sharpness_probe(model, probe_x, probe_y, model.tau, cfg.probe, probe_seed + step)
                    sharp_trace.append((step, probe.sharpness))
                    max_sharp = probe.sharpness if max_sharp is None else max(max_sharp, probe.sharpness)

                is_eval = not diverged and (step % cfg.eval_every == 0 or step == cfg.steps - 1)
                ev = eval_accuracy(model, data, model.tau) if is_eval else None
                if ev is not None:
                    last_eval = ev
                thr = _threshold(cfg.optimizer, lr)
                if thr is not None:
                    last_threshold = thr

                if is_log or probe is not None or diverged:
                    rec = MetricRecord(
                        step=step,
                        epoch=step // cfg.steps_per_epoch,
                        train_loss=_clean(loss),
                        eval_metric=_clean(ev),
                        lr=float(lr),
                        tau=float(model.tau),
                        layers=_layer_dicts(res.snapshots),
                        sharpness=_clean(probe.sharpness) if probe is not None else None,
                        threshold=_clean(thr) if probe is not None else None,
                        certificate=_certificates(res, model.tau) if (full and theory_mode) else None,
                        wall_ms=(time.perf_counter() - t0) * 1e3 if cfg.record_timing else None,
                    )
                    records.append(rec)
                    if metrics_file is not None:
                        metrics_file.write(rec.to_json() + "\n")
                        metrics_file.flush()
                if diverged:
                    status = DIVERGED
                    break
        finally:
            if metrics_file is not None:
                metrics_file.close()

    result = ExperimentResult(
        run_id=cfg.run_id,
        status=status,
        records=records,
        final_loss=_clean(last_loss),
        final_eval=_clean(last_eval) if status == COMPLETED else None,
        first_collapse_step=first_collapse,
        max_sharpness=_clean(max_sharp),
        threshold=_clean(last_threshold),
        steps_completed=steps_done,
        entropy_trace=trace[:steps_done],
        sharpness_trace=sharp_trace,
        model=model if keep_model else None,
    )
    if out_dir is not None:
        (out_dir / "summary.csv").write_text(summary_csv([result]))
        if cfg.checkpoint:
            with open(out_dir / "checkpoint.eckp", "wb") as f:
                model.save(f, step=steps_done)
    return result

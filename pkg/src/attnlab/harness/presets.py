"""Named experiment configurations for the two dynamics studies.

Both are small enough to run on one CPU core in minutes.

Collapse sweep: the Reverse task at T=16, a post-LN baseline against a
σReparam model without normalisation, each over learning-rate multipliers
1, 2, 4 and 8 of a shared base rate.

Temperature intervention: a pre-LN baseline on Reverse at T=32 with a
300-step warmup. The early branch drops the temperature to 0.1 at the start
of epoch 3 (step 150, mid-warmup); the late branch drops it to 0.5 at step
400, after warmup. Epochs are 50 steps so sharpness probes are frequent.
"""

from __future__ import annotations

from ..transformer import ModelConfig
from .config import ExperimentConfig, InterventionPlan, OptimizerConfig, ProbeConfig, SchedulePlan, TaskConfig

COLLAPSE_BASE_LR = 2.5e-3
COLLAPSE_LR_MULTIPLIERS = (1, 2, 4, 8)

INTERVENTION_STEPS_PER_EPOCH = 50
EARLY_EPOCH = 3
EARLY_TAU = 0.1
LATE_STEP = 400
LATE_TAU = 0.5
INTERVENTION_WARMUP = 300


def collapse_config(arm: str, lr_multiplier: float = 1, seed: int = 0) -> ExperimentConfig:
    """``arm`` is ``"baseline"`` (post-LN, plain) or ``"sigma_reparam"`` (no LN)."""
    if arm == "baseline":
        norm, mode = "post_ln", "plain"
    elif arm == "sigma_reparam":
        norm, mode = "none", "sigma_reparam"
    else:
        raise ValueError(f"unknown arm {arm!r}")
    return ExperimentConfig(
        run_id=f"collapse-{arm}-x{lr_multiplier:g}-s{seed}",
        seed=seed,
        model=ModelConfig(
            n_layers=2, d_model=32, n_heads=4, mlp_dim=128, vocab_size=16, max_seq_len=16,
            norm_mode=norm, reparam_mode=mode, emb_std=0.1,
        ),
        task=TaskConfig(kind="reverse", vocab=16, t=16, n_train=4096, n_eval=256),
        optimizer=OptimizerConfig(kind="adamw", lr=COLLAPSE_BASE_LR * lr_multiplier, beta2=0.98),
        schedule=SchedulePlan(warmup_steps=50),
        steps=600,
        batch_size=32,
        log_every=25,
        eval_every=100,
        full_stats_every=100,
    )


def intervention_config(branch: str, seed: int = 0) -> ExperimentConfig:
    """``branch`` is ``"early"`` (tau 0.1 during warmup), ``"late"`` (tau 0.5
    after warmup) or ``"none"`` (the untouched reference run)."""
    if branch == "early":
        plan = InterventionPlan(kind="temperature", intervention_epoch=EARLY_EPOCH, tau_target=EARLY_TAU)
        steps = EARLY_EPOCH * INTERVENTION_STEPS_PER_EPOCH + 51
        probe = ProbeConfig(enabled=True, extra_steps=[EARLY_EPOCH * INTERVENTION_STEPS_PER_EPOCH])
    elif branch == "late":
        plan = InterventionPlan(kind="temperature", intervention_step=LATE_STEP, tau_target=LATE_TAU)
        steps = LATE_STEP + 501
        probe = ProbeConfig(enabled=False)
    elif branch == "none":
        plan = InterventionPlan()
        steps = LATE_STEP + 501
        probe = ProbeConfig(enabled=False)
    else:
        raise ValueError(f"unknown branch {branch!r}")
    return ExperimentConfig(
        run_id=f"intervention-{branch}-s{seed}",
        seed=seed,
        model=ModelConfig(
            n_layers=2, d_model=32, n_heads=4, mlp_dim=128, vocab_size=32, max_seq_len=32,
            norm_mode="pre_ln", reparam_mode="plain", emb_std=1.0,
        ),
        task=TaskConfig(kind="reverse", vocab=32, t=32, n_train=4096, n_eval=256),
        optimizer=OptimizerConfig(kind="adamw", lr=3e-2, beta2=0.98),
        schedule=SchedulePlan(warmup_steps=INTERVENTION_WARMUP),
        intervention=plan,
        probe=probe,
        steps=steps,
        batch_size=32,
        steps_per_epoch=INTERVENTION_STEPS_PER_EPOCH,
        log_every=10,
        eval_every=100,
        full_stats_every=0,
    )

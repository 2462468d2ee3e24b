"""Learning-rate schedules: linear warmup, then constant, cosine or step decay."""

from __future__ import annotations

import math


def lr_at(step: int, base_lr: float, plan, total_steps: int) -> float:
    """Learning rate used for update ``step`` (0-based).

    Warmup rises linearly from 0 at step 0 to ``base_lr`` at ``warmup_steps``.
    Cosine decays from ``base_lr`` to 0 over the remaining steps; step decay
    multiplies by ``step_factor`` at every step point already passed.
    """
    w = plan.warmup_steps
    if w > 0 and step < w:
        return base_lr * step / w
    if plan.decay == "constant":
        return base_lr
    if plan.decay == "cosine":
        span = max(total_steps - w, 1)
        frac = min(max(step - w, 0) / span, 1.0)
        return base_lr * 0.5 * (1.0 + math.cos(math.pi * frac))
    if plan.decay == "step":
        passed = sum(1 for p in plan.step_points if step >= p)
        return base_lr * plan.step_factor**passed
    raise ValueError(f"unknown decay {plan.decay!r}")

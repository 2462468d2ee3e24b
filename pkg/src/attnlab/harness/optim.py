"""SGD, SGD with momentum, Adam, AdamW and LARS over a dict of named arrays."""

from __future__ import annotations

import numpy as np

from ..errors import ConfigError, ShapeError


def _all_finite(grads: dict) -> bool:
    return all(np.all(np.isfinite(g)) for g in grads.values())


class Optimizer:
    """Holds per-parameter state; :meth:`step` updates ``params`` in place.

    ``decay`` names the parameters that receive weight decay (the weight
    matrices); biases, gains and embeddings are left alone. Adam applies
    decay as an L2 term in the gradient, AdamW decouples it from the
    adaptive update. LARS scales each parameter's step by the trust ratio
    ``trust_coef * |theta| / |g + wd theta|`` and keeps a heavy-ball buffer.
    """

    def __init__(self, cfg, decay=None):
        if cfg.kind not in ("sgd", "sgd_momentum", "adam", "adamw", "lars"):
            raise ConfigError(f"unknown optimizer {cfg.kind!r}")
        self.cfg = cfg
        self.decay = set(decay) if decay is not None else None
        self.t = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def _decays(self, name):
        return self.cfg.weight_decay != 0 and (self.decay is None or name in self.decay)

    def step(self, params: dict, grads: dict, lr: float) -> bool:
        """Apply one update. Returns False (and changes nothing) if any gradient is non-finite."""
        for name, g in grads.items():
            if g.shape != params[name].shape:
                raise ShapeError(f"gradient for {name} has shape {g.shape}, parameter {params[name].shape}")
        if not _all_finite(grads):
            return False
        cfg = self.cfg
        if cfg.grad_clip is not None:
            total = np.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
            if total > cfg.grad_clip:
                scale = cfg.grad_clip / total
                grads = {k: g * scale for k, g in grads.items()}
        self.t += 1
        t = self.t
        wd = cfg.weight_decay
        for name, g in grads.items():
            p = params[name]
            dec = self._decays(name)
            if cfg.kind == "sgd":
                if dec:
                    g = g + wd * p
                params[name] = p - lr * g
            elif cfg.kind == "sgd_momentum":
                if dec:
                    g = g + wd * p
                buf = self.m.get(name)
                buf = g.copy() if buf is None else cfg.momentum * buf + g
                self.m[name] = buf
                params[name] = p - lr * buf
            elif cfg.kind in ("adam", "adamw"):
                if dec and cfg.kind == "adam":
                    g = g + wd * p
                m = self.m.get(name, 0.0)
                v = self.v.get(name, 0.0)
                m = cfg.beta1 * m + (1 - cfg.beta1) * g
                v = cfg.beta2 * v + (1 - cfg.beta2) * (g * g)
                self.m[name], self.v[name] = m, v
                m_hat = m / (1 - cfg.beta1**t)
                v_hat = v / (1 - cfg.beta2**t)
                upd = m_hat / (np.sqrt(v_hat) + cfg.eps)
                if dec and cfg.kind == "adamw":
                    upd = upd + wd * p
                params[name] = p - lr * upd
            else:  # lars
                if dec:
                    g = g + wd * p
                pn = float(np.linalg.norm(p))
                gn = float(np.linalg.norm(g))
                trust = cfg.trust_coef * pn / gn if pn > 0 and gn > 0 else 1.0
                buf = self.m.get(name)
                local = trust * g
                buf = local.copy() if buf is None else cfg.momentum * buf + local
                self.m[name] = buf
                params[name] = p - lr * buf
        return True


def optimizer_step(opt: Optimizer, params: dict, grads: dict, lr_t: float) -> Optimizer:
    """Functional spelling of :meth:`Optimizer.step`; the state object is returned."""
    opt.step(params, grads, lr_t)
    return opt

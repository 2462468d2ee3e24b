"""attnlab: a toy-scale laboratory for attention entropy collapse and
spectrally reparameterised Transformers."""

from .attention import AttentionConfig, AttentionStats, attend, attention_entropy, collect_stats
from .diagnostics import (
    EntropyBoundCertificate,
    SharpnessProbe,
    adamw_stability_threshold,
    check_attention_bound,
    entropy_lower_bound,
    entropy_min_oracle,
    hvp,
    lanczos_top_eigs,
    tight_minimizer,
)
from .errors import AttnLabError, ConfigError, ContractError, DomainError, NumericalError, ShapeError
from .linalg import SvdResult, power_iteration_step, spectral_norm_converged, svd
from .reparam import ReparamMode, SpectralState, adaptive_update_bound, freeze, reparam_forward
from .transformer import Model, ModelConfig, build_model, model_forward, set_global_temperature

__version__ = "0.1.0"

__all__ = [
    "AttentionConfig",
    "AttentionStats",
    "AttnLabError",
    "ConfigError",
    "ContractError",
    "DomainError",
    "EntropyBoundCertificate",
    "Model",
    "ModelConfig",
    "NumericalError",
    "ReparamMode",
    "ShapeError",
    "SharpnessProbe",
    "SpectralState",
    "SvdResult",
    "adamw_stability_threshold",
    "adaptive_update_bound",
    "attend",
    "attention_entropy",
    "build_model",
    "check_attention_bound",
    "collect_stats",
    "entropy_lower_bound",
    "entropy_min_oracle",
    "freeze",
    "hvp",
    "lanczos_top_eigs",
    "model_forward",
    "power_iteration_step",
    "reparam_forward",
    "set_global_temperature",
    "spectral_norm_converged",
    "svd",
    "tight_minimizer",
]

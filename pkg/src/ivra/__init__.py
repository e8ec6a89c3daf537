"""Training-free affinity-guided pooling of visual tokens inside a toy vision-language stack."""

from .affinity import (
    AffinityMap,
    PatchEmbeddings,
    PoolingWeights,
    ZeroNormPatchError,
    apply_ivra_to_tokens,
    compute_affinity,
    mix_tokens,
    pool_tokens,
    pooling_weights,
)
from .estimator import AffinityPooling
from .pipeline import InjectConfig, Position, PromptSpec, ToyDecoderStack, ToyEncoder, parameter_count, run_pipeline

__version__ = "0.1.0"

__all__ = [
    "AffinityMap",
    "AffinityPooling",
    "InjectConfig",
    "PatchEmbeddings",
    "PoolingWeights",
    "Position",
    "PromptSpec",
    "ToyDecoderStack",
    "ToyEncoder",
    "ZeroNormPatchError",
    "apply_ivra_to_tokens",
    "compute_affinity",
    "mix_tokens",
    "parameter_count",
    "pool_tokens",
    "pooling_weights",
    "run_pipeline",
]

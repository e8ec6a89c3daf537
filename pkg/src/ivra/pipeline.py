"""Toy vision encoder and decoder stack with per-layer injection hooks.

Blocks are pre-norm::

    x --(P0)--> LN1 --(P1)--> attention --(P2)--> + x --(P3)--> LN2 --(P4)--> MLP --> + --> out

A hook at a position rewrites only the visual rows of the activation
flowing through that point; text rows are never written.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np

from .affinity import (
    CLIP_MODES,
    AffinityMap,
    PatchEmbeddings,
    PoolingWeights,
    apply_weights,
    check_lambda,
    compute_affinity,
    pooling_weights,
)
from .tensor import DTYPE, DimensionError, LayerNormParams, as_matrix, layer_norm_rows, softmax_rows

Hook = Callable[[np.ndarray], np.ndarray]

_MASKED = DTYPE(-1e30)


class Position(str, enum.Enum):
    """Hook points inside a pre-norm block."""

    P0 = "P0"  # block input
    P1 = "P1"  # after the attention layernorm
    P2 = "P2"  # attention output
    P3 = "P3"  # after the attention residual
    P4 = "P4"  # after the MLP layernorm


class InvalidPositionError(ValueError):
    pass


def as_position(tag) -> Position:
    try:
        return Position(tag)
    except ValueError:
        raise InvalidPositionError(
            f"position must be one of {[p.value for p in Position]}, got {tag!r}"
        ) from None


def default_inject_layer(num_layers: int) -> int:
    """Layer at the same relative depth as layer 20 of a 32-layer model."""
    return min(num_layers - 1, int(round(num_layers * 20 / 32)))


@dataclass(frozen=True)
class InjectConfig:
    """Where and how strongly to inject. ``inject_layers=None`` picks the default depth."""

    lam: float = 0.3
    inject_layers: Optional[tuple] = None
    position: Position = Position.P0
    clip: str = "relu"
    encoder_layer_offset: int = 2

    def __post_init__(self):
        object.__setattr__(self, "lam", check_lambda(self.lam))
        object.__setattr__(self, "position", as_position(self.position))
        if self.inject_layers is not None:
            layers = tuple(int(i) for i in self.inject_layers)
            if len(set(layers)) != len(layers):
                raise ValueError(f"inject_layers has duplicates: {layers}")
            object.__setattr__(self, "inject_layers", tuple(sorted(layers)))
        if self.clip not in CLIP_MODES:
            raise ValueError(f"clip must be one of {CLIP_MODES}, got {self.clip!r}")
        if self.encoder_layer_offset < 0:
            raise ValueError("encoder_layer_offset must be >= 0")

    def layers_for(self, num_layers: int) -> tuple:
        layers = self.inject_layers
        if layers is None:
            layers = (default_inject_layer(num_layers),)
        bad = [i for i in layers if not 0 <= i < num_layers]
        if bad:
            raise ValueError(f"inject layers {bad} outside [0, {num_layers})")
        return layers


@dataclass(frozen=True)
class TokenSequence:
    tokens: np.ndarray
    visual_start: int
    grid_h: int
    grid_w: int

    def __post_init__(self):
        t = as_matrix(self.tokens, "tokens")
        object.__setattr__(self, "tokens", t)
        if self.visual_start < 0 or self.visual_start + self.n_visual > t.shape[0]:
            raise DimensionError(
                f"visual range [{self.visual_start}, {self.visual_start + self.n_visual}) "
                f"does not fit in {t.shape[0]} tokens"
            )

    @property
    def n_visual(self) -> int:
        return self.grid_h * self.grid_w

    @property
    def visual_range(self) -> range:
        return range(self.visual_start, self.visual_start + self.n_visual)

    @property
    def visual_slice(self) -> slice:
        return slice(self.visual_start, self.visual_start + self.n_visual)

    @property
    def visual_tokens(self) -> np.ndarray:
        return self.tokens[self.visual_slice]

    def with_tokens(self, tokens: np.ndarray) -> TokenSequence:
        return replace(self, tokens=tokens)


@dataclass(frozen=True)
class PromptSpec:
    """Text tokens around the single image placeholder."""

    prefix_len: int = 8
    suffix_len: int = 8
    seed: int = 0


@dataclass
class HookRecord:
    layer: int
    position: Position
    before: np.ndarray
    after: np.ndarray


@dataclass
class RunTrace:
    """Per-run instrumentation. Create a fresh one for every run."""

    record_hooks: bool = False
    affinity_calls: int = 0
    hooks: list = field(default_factory=list)
    affinity: Optional[AffinityMap] = None


def _init(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    w = rng.standard_normal((fan_in, fan_out), dtype=DTYPE)
    w *= DTYPE(1.0 / math.sqrt(fan_in))
    return w


def _gelu(x: np.ndarray) -> np.ndarray:
    c = DTYPE(math.sqrt(2.0 / math.pi))
    return DTYPE(0.5) * x * (DTYPE(1.0) + np.tanh(c * (x + DTYPE(0.044715) * x * x * x)))


class Block:
    """Pre-norm transformer block with multi-head self-attention and a GELU MLP."""

    def __init__(self, d_model, num_heads, mlp_ratio=4.0, head_dim=None, causal=False, rng=None):
        if head_dim is None:
            if d_model % num_heads:
                raise ValueError(f"num_heads {num_heads} does not divide d_model {d_model}")
            head_dim = d_model // num_heads
        rng = rng if rng is not None else np.random.default_rng(0)
        self.d_model = d_model
        self.num_heads = num_heads
        self.head_dim = head_dim
        self.causal = causal
        inner = num_heads * head_dim
        hidden = max(1, int(round(mlp_ratio * d_model)))
        self.ln1 = LayerNormParams.identity(d_model)
        self.ln2 = LayerNormParams.identity(d_model)
        self.wq, self.wk, self.wv = (_init(rng, d_model, inner) for _ in range(3))
        self.bq, self.bk, self.bv = (np.zeros(inner, DTYPE) for _ in range(3))
        self.wo = _init(rng, inner, d_model)
        self.bo = np.zeros(d_model, DTYPE)
        self.w1 = _init(rng, d_model, hidden)
        self.b1 = np.zeros(hidden, DTYPE)
        self.w2 = _init(rng, hidden, d_model)
        self.b2 = np.zeros(d_model, DTYPE)

    def parameters(self):
        return [
            self.ln1.gamma, self.ln1.beta, self.ln2.gamma, self.ln2.beta,
            self.wq, self.wk, self.wv, self.bq, self.bk, self.bv, self.wo, self.bo,
            self.w1, self.b1, self.w2, self.b2,
        ]

    def attention(self, h: np.ndarray) -> np.ndarray:
        t = h.shape[0]
        nh, hd = self.num_heads, self.head_dim
        q = (h @ self.wq + self.bq).reshape(t, nh, hd).transpose(1, 0, 2)
        k = (h @ self.wk + self.bk).reshape(t, nh, hd).transpose(1, 0, 2)
        v = (h @ self.wv + self.bv).reshape(t, nh, hd).transpose(1, 0, 2)
        scores = np.matmul(q, k.transpose(0, 2, 1)) * DTYPE(1.0 / math.sqrt(hd))
        if self.causal:
            scores[:, np.triu(np.ones((t, t), dtype=bool), k=1)] = _MASKED
        probs = softmax_rows(scores.reshape(nh * t, t)).reshape(nh, t, t)
        ctx = np.matmul(probs, v).transpose(1, 0, 2).reshape(t, nh * hd)
        return ctx @ self.wo + self.bo

    def mlp(self, h: np.ndarray) -> np.ndarray:
        return _gelu(h @ self.w1 + self.b1) @ self.w2 + self.b2

    def forward(self, x, hook=None, position=Position.P0, visual=None, on_hook=None):
        position = as_position(position)

        def tap(pos, act):
            if hook is None or pos is not position:
                return act
            return _rewrite_visual(act, hook, visual, on_hook)

        x = tap(Position.P0, x)
        h = tap(Position.P1, layer_norm_rows(x, self.ln1))
        a = tap(Position.P2, self.attention(h))
        x = tap(Position.P3, x + a)
        h = tap(Position.P4, layer_norm_rows(x, self.ln2))
        return x + self.mlp(h)


def _rewrite_visual(act, hook, visual: slice, on_hook):
    if visual is None:
        raise ValueError("a hook needs the visual token range")
    rows = act[visual]
    new_rows = np.asarray(hook(rows), dtype=DTYPE)
    if new_rows.shape != rows.shape:
        raise DimensionError(f"hook returned {new_rows.shape}, expected {rows.shape}")
    out = act.copy()
    out[visual] = new_rows
    if on_hook is not None:
        on_hook(act, out)
    return out


def _block_stack(num_layers, d, num_heads, mlp_ratio, head_dim, causal, rng):
    return [Block(d, num_heads, mlp_ratio, head_dim, causal, rng) for _ in range(num_layers)]


def _sincos_2d(grid_h: int, grid_w: int, d: int) -> np.ndarray:
    """Fixed (parameter-free) 2-D sinusoidal position code."""
    quarter = max(1, d // 4)
    freqs = 1.0 / (100.0 ** (np.arange(quarter) / quarter))
    ys, xs = np.meshgrid(np.arange(grid_h), np.arange(grid_w), indexing="ij")
    parts = []
    for coord in (ys.ravel(), xs.ravel()):
        ang = coord[:, None] * freqs[None, :]
        parts += [np.sin(ang), np.cos(ang)]
    code = np.concatenate(parts, axis=1)[:, :d]
    if code.shape[1] < d:
        code = np.pad(code, ((0, 0), (0, d - code.shape[1])))
    return code.astype(DTYPE)


class ToyEncoder:
    """Frozen ViT-style encoder: patchify, linear embed, non-causal blocks."""

    def __init__(self, num_layers=4, d=64, patch_size=4, num_heads=4, mlp_ratio=4.0, seed=0):
        if num_layers < 1 or d < 1 or patch_size < 1:
            raise ValueError("encoder sizes must be positive")
        self.num_layers = num_layers
        self.d = d
        self.patch_size = patch_size
        self.num_heads = num_heads
        self.mlp_ratio = mlp_ratio
        self.seed = seed
        rng = np.random.default_rng([seed, 1])
        self.w_patch = _init(rng, patch_size * patch_size, d)
        self.b_patch = np.zeros(d, DTYPE)
        self.blocks = _block_stack(num_layers, d, num_heads, mlp_ratio, None, False, rng)

    def parameters(self):
        params = [self.w_patch, self.b_patch]
        for b in self.blocks:
            params += b.parameters()
        return params

    def grid_for(self, image: np.ndarray) -> tuple:
        h, w = image.shape
        p = self.patch_size
        if h % p or w % p:
            raise DimensionError(f"image {h}x{w} is not divisible by patch size {p}")
        return h // p, w // p

    def patchify(self, image) -> np.ndarray:
        image = as_matrix(image, "image")
        gh, gw = self.grid_for(image)
        p = self.patch_size
        return np.ascontiguousarray(
            image.reshape(gh, p, gw, p).transpose(0, 2, 1, 3).reshape(gh * gw, p * p)
        )

    def forward_layers(self, image) -> list:
        """Features after every block, index 0 .. num_layers - 1."""
        image = as_matrix(image, "image")
        gh, gw = self.grid_for(image)
        x = self.patchify(image) @ self.w_patch + self.b_patch + _sincos_2d(gh, gw, self.d)
        outs = []
        for block in self.blocks:
            x = block.forward(x)
            outs.append(x)
        return outs

    def tap_index(self, layer_offset: int) -> int:
        if not 0 <= layer_offset < self.num_layers:
            raise ValueError(f"layer offset {layer_offset} outside [0, {self.num_layers})")
        return self.num_layers - 1 - layer_offset


class ToyDecoderStack:
    """Causal decoder with a linear projector for visual features."""

    def __init__(
        self,
        num_layers=8,
        d_model=64,
        num_heads=4,
        mlp_ratio=4.0,
        d_visual=64,
        head_dim=None,
        seed=0,
    ):
        if num_layers < 1 or d_model < 1 or d_visual < 1:
            raise ValueError("decoder sizes must be positive")
        self.num_layers = num_layers
        self.d_model = d_model
        self.num_heads = num_heads
        self.mlp_ratio = mlp_ratio
        self.d_visual = d_visual
        self.head_dim = head_dim
        self.seed = seed
        rng = np.random.default_rng([seed, 2])
        self.w_proj = _init(rng, d_visual, d_model)
        self.b_proj = np.zeros(d_model, DTYPE)
        self.blocks = _block_stack(num_layers, d_model, num_heads, mlp_ratio, head_dim, True, rng)
        self.ln_f = LayerNormParams.identity(d_model)

    def parameters(self):
        params = [self.w_proj, self.b_proj]
        for b in self.blocks:
            params += b.parameters()
        return params + [self.ln_f.gamma, self.ln_f.beta]

    def project(self, features: np.ndarray) -> np.ndarray:
        if features.shape[1] != self.d_visual:
            raise DimensionError(
                f"projector expects {self.d_visual}-dim features, got {features.shape[1]}"
            )
        return features @ self.w_proj + self.b_proj


def parameter_count(dec: ToyDecoderStack, enc: Optional[ToyEncoder] = None) -> int:
    """Learnable weights in the stack; injection adds none."""
    arrays = dec.parameters() + (enc.parameters() if enc is not None else [])
    return int(sum(a.size for a in arrays))


def encode_patches(image, enc: ToyEncoder, layer_offset: int = 0) -> PatchEmbeddings:
    idx = enc.tap_index(layer_offset)
    gh, gw = enc.grid_for(as_matrix(image, "image"))
    feats = enc.forward_layers(image)[idx]
    return PatchEmbeddings(gh, gw, feats, layer_offset)


def build_sequence(
    text_prefix_len: int,
    patches: PatchEmbeddings,
    text_suffix_len: int,
    seed: int,
    decoder: Optional[ToyDecoderStack] = None,
) -> TokenSequence:
    """Lay out ``[prefix | visual tokens | suffix]`` in place of the image placeholder."""
    if text_prefix_len < 0 or text_suffix_len < 0:
        raise ValueError("text lengths must be >= 0")
    if decoder is not None:
        visual = decoder.project(patches.features)
    else:
        visual = patches.features
    d = visual.shape[1]
    rng = np.random.default_rng([seed, 3])
    text = rng.standard_normal((text_prefix_len + text_suffix_len, d), dtype=DTYPE)
    tokens = np.concatenate([text[:text_prefix_len], visual, text[text_prefix_len:]], axis=0)
    return TokenSequence(tokens, text_prefix_len, patches.grid_h, patches.grid_w)


def run_block_with_hook(
    block: Block,
    seq: TokenSequence,
    hook: Optional[Hook] = None,
    position=Position.P0,
    trace: Optional[RunTrace] = None,
    layer: int = -1,
) -> TokenSequence:
    position = as_position(position)
    if seq.tokens.shape[1] != block.d_model:
        raise DimensionError(f"sequence width {seq.tokens.shape[1]} != block width {block.d_model}")
    def record(before, after):
        trace.hooks.append(HookRecord(layer, position, before.copy(), after.copy()))

    recording = trace is not None and trace.record_hooks
    out = block.forward(seq.tokens, hook, position, seq.visual_slice, record if recording else None)
    return seq.with_tokens(out)


def ivra_hook(weights: PoolingWeights, lam: float) -> Hook:
    return lambda v: apply_weights(v, weights, lam)


def run_pipeline(
    image,
    prompt: PromptSpec,
    enc: ToyEncoder,
    dec: ToyDecoderStack,
    cfg: Optional[InjectConfig] = None,
    trace: Optional[RunTrace] = None,
) -> TokenSequence:
    """Encode, build the token sequence, run every block, apply the final norm.

    With ``cfg`` the affinity is computed once from the encoder tap and the
    same pooling weights are reused at every injected layer.
    """
    layers = cfg.layers_for(dec.num_layers) if cfg is not None else ()
    enc_layers = enc.forward_layers(image)
    gh, gw = enc.grid_for(as_matrix(image, "image"))
    visual = PatchEmbeddings(gh, gw, enc_layers[-1], 0)
    seq = build_sequence(prompt.prefix_len, visual, prompt.suffix_len, prompt.seed, dec)

    hook = None
    if layers:
        offset = cfg.encoder_layer_offset
        tap = PatchEmbeddings(gh, gw, enc_layers[enc.tap_index(offset)], offset)
        affinity = compute_affinity(tap)
        if trace is not None:
            trace.affinity_calls += 1
            trace.affinity = affinity
        hook = ivra_hook(pooling_weights(affinity, cfg.clip), cfg.lam)

    position = cfg.position if cfg is not None else Position.P0
    for i, block in enumerate(dec.blocks):
        seq = run_block_with_hook(block, seq, hook if i in layers else None, position, trace, i)
    return seq.with_tokens(layer_norm_rows(seq.tokens, dec.ln_f))


def run_layers(
    seq: TokenSequence,
    blocks: Sequence[Block],
    hooks: dict,
    position=Position.P0,
) -> TokenSequence:
    """Run ``blocks`` in order, hooking block ``i`` with ``hooks.get(i)``."""
    for i, block in enumerate(blocks):
        seq = run_block_with_hook(block, seq, hooks.get(i), position)
    return seq

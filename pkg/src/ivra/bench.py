"""Latency of injected vs. plain forward passes."""

from __future__ import annotations

import json
import math
import statistics
import time
from contextlib import nullcontext
from dataclasses import asdict, dataclass

import numpy as np
from threadpoolctl import threadpool_limits

from .affinity import PoolingWeights, apply_weights
from .pipeline import InjectConfig, PromptSpec, ToyDecoderStack, ToyEncoder, run_pipeline
from .tensor import DTYPE


@dataclass(frozen=True)
class BenchReport:
    n_patches: int
    d_model: int
    num_layers: int
    baseline_ms: float
    injected_ms: float
    overhead_fraction: float
    repetitions: int
    warmups: int
    inject_layers: list
    position: str
    lam: float
    parallel: bool

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)


def grid_shape(n: int) -> tuple:
    """Most nearly square factorization ``h * w == n`` with ``h <= w``."""
    h = math.isqrt(n)
    while n % h:
        h -= 1
    return h, n // h


def _threads(parallel: bool):
    return nullcontext() if parallel else threadpool_limits(limits=1)


def _median_ms(fn, reps: int, warmups: int) -> float:
    for _ in range(warmups):
        fn()
    times = []
    for _ in range(reps):
        t0 = time.perf_counter()
        fn()
        times.append((time.perf_counter() - t0) * 1e3)
    return statistics.median(times)


def bench_models(
    n_patches: int,
    d_model: int,
    num_layers: int,
    num_heads: int = 4,
    head_dim: int | None = 64,
    mlp_ratio: float = 0.25,
    seed: int = 0,
):
    """Encoder, decoder and input image for a benchmark of the given size.

    The decoder residual stream is ``d_model`` wide, but attention and MLP
    inner widths stay narrow so a 4096-wide stack fits in a few hundred MB.
    """
    enc = ToyEncoder(seed=seed)
    dec = ToyDecoderStack(
        num_layers=num_layers,
        d_model=d_model,
        num_heads=num_heads,
        mlp_ratio=mlp_ratio,
        d_visual=enc.d,
        head_dim=head_dim,
        seed=seed,
    )
    gh, gw = grid_shape(n_patches)
    p = enc.patch_size
    image = np.random.default_rng([seed, 21]).standard_normal((gh * p, gw * p), dtype=DTYPE)
    return enc, dec, image


def run_bench(
    n_patches: int,
    d_model: int,
    num_layers: int,
    cfg: InjectConfig,
    reps: int = 9,
    warmups: int = 1,
    parallel: bool = False,
    models=None,
) -> BenchReport:
    if min(n_patches, d_model, num_layers) < 1:
        raise ValueError("sizes must be >= 1")
    if reps < 5:
        raise ValueError(f"need at least 5 repetitions, got {reps}")
    if warmups < 0:
        raise ValueError("warmups must be >= 0")
    enc, dec, image = models or bench_models(n_patches, d_model, num_layers)
    prompt = PromptSpec()
    layers = cfg.layers_for(dec.num_layers)

    with _threads(parallel):
        for _ in range(warmups):
            run_pipeline(image, prompt, enc, dec)
            run_pipeline(image, prompt, enc, dec, cfg)
        arms = {None: [], cfg: []}
        # interleaved, alternating which arm goes first, so drift hits both equally
        for rep in range(reps):
            order = (None, cfg) if rep % 2 == 0 else (cfg, None)
            for arm in order:
                t0 = time.perf_counter()
                run_pipeline(image, prompt, enc, dec, arm)
                arms[arm].append((time.perf_counter() - t0) * 1e3)
        base, inj = arms[None], arms[cfg]

    baseline_ms = statistics.median(base)
    injected_ms = statistics.median(inj)
    return BenchReport(
        n_patches=n_patches,
        d_model=dec.d_model,
        num_layers=dec.num_layers,
        baseline_ms=baseline_ms,
        injected_ms=injected_ms,
        overhead_fraction=injected_ms / baseline_ms - 1.0,
        repetitions=reps,
        warmups=warmups,
        inject_layers=list(layers),
        position=cfg.position.value,
        lam=cfg.lam,
        parallel=parallel,
    )


def _injection_fn(n_patches: int, d: int, seed: int):
    rng = np.random.default_rng([seed, 22])
    raw = rng.random((n_patches, n_patches), dtype=DTYPE) + DTYPE(0.01)
    w = PoolingWeights(raw / raw.sum(axis=1, keepdims=True), np.zeros(n_patches, dtype=bool))
    v = rng.standard_normal((n_patches, d), dtype=DTYPE)
    return lambda: apply_weights(v, w, 0.3)


def time_injection(n_patches: int, d: int, reps: int = 21, warmups: int = 5, seed: int = 0, parallel: bool = False) -> float:
    """Median ms of one pooling-and-mixing pass over ``n_patches`` tokens of width ``d``."""
    fn = _injection_fn(n_patches, d, seed)
    with _threads(parallel):
        return _median_ms(fn, reps, warmups)


def injection_scaling(n_small: int, n_large: int, d: int, reps: int = 21, warmups: int = 5, seed: int = 0) -> tuple:
    """Median injection ms at two token counts, timed alternately; returns ``(small, large, ratio)``.

    A first untimed pass on throwaway inputs lets the allocator settle;
    otherwise fresh-page faults add an O(N*d) term to the first timings.
    """
    with _threads(False):
        for settle in (True, False):
            fns = (_injection_fn(n_small, d, seed), _injection_fn(n_large, d, seed))
            times = ([], [])
            for _ in range(warmups):
                for fn in fns:
                    fn()
            for _ in range(1 if settle else reps):
                for fn, out in zip(fns, times):
                    t0 = time.perf_counter()
                    fn()
                    out.append((time.perf_counter() - t0) * 1e3)
    small, large = statistics.median(times[0]), statistics.median(times[1])
    return small, large, large / small

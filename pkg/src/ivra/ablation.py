"""Cartesian sweeps over injection settings on synthetic scenes.

For each seed a planted-cluster scene is rendered and pushed through the
toy pipeline once without injection and once per sweep cell. The metric is
the affinity contrast of the final visual tokens, an in-model analogue of
the before/after affinity maps.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

from .affinity import PatchEmbeddings, compute_affinity
from .formats import AblationRow
from .pipeline import InjectConfig, PromptSpec, ToyDecoderStack, ToyEncoder, run_pipeline
from .scenes import affinity_contrast, generate_scene, random_scene_spec, render_scene

METRICS = ("contrast_delta", "contrast_before", "contrast_after")


@dataclass(frozen=True)
class SweepSetup:
    grid: int = 8
    n_objects: int = 3
    scene_dim: int = 32
    noise_sigma: float = 0.3
    model_seed: int = 0


def _final_contrast(seq, labels) -> float:
    vis = PatchEmbeddings(seq.grid_h, seq.grid_w, seq.visual_tokens)
    return affinity_contrast(compute_affinity(vis), labels)


def sweep(
    lambdas,
    layer_sets,
    positions,
    clips,
    seeds,
    metrics=("contrast_delta",),
    setup: SweepSetup = SweepSetup(),
    enc: ToyEncoder | None = None,
    dec: ToyDecoderStack | None = None,
) -> list:
    axes = {"lambdas": lambdas, "layers": layer_sets, "positions": positions, "clips": clips, "seeds": seeds}
    for name, values in axes.items():
        if len(values) == 0:
            raise ValueError(f"sweep axis {name} is empty")
    bad = [m for m in metrics if m not in METRICS]
    if bad or not metrics:
        raise ValueError(f"metrics must be a non-empty subset of {METRICS}, got {list(metrics)}")
    enc = enc or ToyEncoder(seed=setup.model_seed)
    dec = dec or ToyDecoderStack(d_visual=enc.d, seed=setup.model_seed)

    scenes = {}
    for seed in seeds:
        spec = random_scene_spec(
            seed, setup.grid, setup.grid, setup.n_objects, setup.scene_dim, setup.noise_sigma
        )
        scene = generate_scene(spec)
        image = render_scene(scene, enc.patch_size, seed)
        prompt = PromptSpec(seed=seed)
        before = _final_contrast(run_pipeline(image, prompt, enc, dec), scene.labels)
        scenes[seed] = (image, prompt, scene.labels, before)

    rows = []
    for lam, layers, pos, clip in itertools.product(lambdas, layer_sets, positions, clips):
        cfg = InjectConfig(lam=lam, inject_layers=tuple(layers), position=pos, clip=clip)
        for seed in seeds:
            image, prompt, labels, before = scenes[seed]
            after = _final_contrast(run_pipeline(image, prompt, enc, dec, cfg), labels)
            values = {"contrast_delta": after - before, "contrast_before": before, "contrast_after": after}
            for m in metrics:
                rows.append(AblationRow(cfg.lam, cfg.inject_layers, cfg.position.value, clip, m, values[m], seed))
    return rows

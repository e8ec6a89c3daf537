"""Planted-cluster patch grids and the affinity-contrast sharpness proxy.

A scene is a grid of patches, each labeled with the id of the rectangle
covering it (0 for background). Each id gets a random unit prototype; a
patch embedding is its prototype plus isotropic gaussian noise, normalized.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .affinity import AffinityMap, PatchEmbeddings, apply_ivra_to_tokens, compute_affinity
from .tensor import DTYPE

MAX_PROTOTYPE_COSINE = 0.5
MAX_ATTEMPTS = 1000


class SceneError(ValueError):
    pass


@dataclass(frozen=True)
class Rect:
    obj_id: int
    top: int
    left: int
    height: int
    width: int


@dataclass(frozen=True)
class SceneSpec:
    grid_h: int
    grid_w: int
    objects: tuple = ()
    d: int = 32
    noise_sigma: float = 0.3
    prototype_seed: int = 0
    noise_seed: int = 0

    def __post_init__(self):
        objs = tuple(o if isinstance(o, Rect) else Rect(**o) for o in self.objects)
        object.__setattr__(self, "objects", objs)
        if self.grid_h < 1 or self.grid_w < 1:
            raise SceneError(f"grid must be positive, got {self.grid_h}x{self.grid_w}")
        if self.d < 2:
            raise SceneError(f"feature dimension must be >= 2, got {self.d}")
        if self.noise_sigma < 0:
            raise SceneError("noise_sigma must be >= 0")
        for o in objs:
            if o.obj_id < 1:
                raise SceneError(f"object ids must be >= 1 (0 is background), got {o.obj_id}")
            if o.height < 1 or o.width < 1:
                raise SceneError(f"object {o.obj_id} has an empty rectangle")
            if o.top < 0 or o.left < 0 or o.top + o.height > self.grid_h or o.left + o.width > self.grid_w:
                raise SceneError(f"object {o.obj_id} does not fit inside the grid")

    def to_dict(self) -> dict:
        out = asdict(self)
        out["objects"] = [asdict(o) for o in self.objects]
        return out

    @classmethod
    def from_dict(cls, data: dict) -> SceneSpec:
        known = {"grid_h", "grid_w", "objects", "d", "noise_sigma", "prototype_seed", "noise_seed"}
        unknown = set(data) - known
        if unknown:
            raise SceneError(f"unknown scene keys: {sorted(unknown)}")
        return cls(**data)


@dataclass(frozen=True)
class LabeledPatches:
    patches: PatchEmbeddings
    labels: np.ndarray = field(repr=False)


def random_scene_spec(seed: int, grid_h=16, grid_w=16, n_objects=3, d=32, noise_sigma=0.3) -> SceneSpec:
    """Random rectangles, each at least 2x2 where the grid allows, every object left visible."""
    rng = np.random.default_rng([seed, 11])
    lo_h, lo_w = min(2, grid_h), min(2, grid_w)
    for _ in range(MAX_ATTEMPTS):
        objs = []
        for obj_id in range(1, n_objects + 1):
            h = int(rng.integers(lo_h, max(lo_h, grid_h // 2) + 1))
            w = int(rng.integers(lo_w, max(lo_w, grid_w // 2) + 1))
            top = int(rng.integers(0, grid_h - h + 1))
            left = int(rng.integers(0, grid_w - w + 1))
            objs.append(Rect(obj_id, top, left, h, w))
        spec = SceneSpec(grid_h, grid_w, tuple(objs), d, noise_sigma, prototype_seed=seed, noise_seed=seed + 1)
        if len(set(label_grid(spec).tolist()) - {0}) == n_objects:
            return spec
    raise SceneError(f"could not place {n_objects} visible objects on a {grid_h}x{grid_w} grid")


def label_grid(spec: SceneSpec) -> np.ndarray:
    grid = np.zeros((spec.grid_h, spec.grid_w), dtype=np.int64)
    for o in spec.objects:
        grid[o.top:o.top + o.height, o.left:o.left + o.width] = o.obj_id
    return grid.ravel()


def draw_prototypes(ids, d: int, seed: int) -> dict:
    """Unit prototypes with pairwise cosine <= 0.5, drawn by rejection in sorted id order."""
    rng = np.random.default_rng([seed, 12])
    protos = {}
    for obj_id in sorted(ids):
        for _ in range(MAX_ATTEMPTS):
            p = rng.standard_normal(d)
            p /= np.linalg.norm(p)
            if all(float(p @ q) <= MAX_PROTOTYPE_COSINE for q in protos.values()):
                protos[obj_id] = p
                break
        else:
            raise SceneError(
                f"could not draw {len(ids)} prototypes with cosine <= {MAX_PROTOTYPE_COSINE} in d={d}"
            )
    return protos


def generate_scene(spec: SceneSpec) -> LabeledPatches:
    labels = label_grid(spec)
    present = set(np.unique(labels).tolist())
    missing = [o.obj_id for o in spec.objects if o.obj_id not in present]
    if missing:
        raise SceneError(f"objects {missing} are fully covered by later objects")
    protos = draw_prototypes(present | {0}, spec.d, spec.prototype_seed)
    noise = np.random.default_rng([spec.noise_seed, 13]).standard_normal((labels.size, spec.d))
    feats = np.stack([protos[l] for l in labels.tolist()]) + spec.noise_sigma * noise
    feats /= np.linalg.norm(feats, axis=1, keepdims=True)
    patches = PatchEmbeddings(spec.grid_h, spec.grid_w, feats.astype(DTYPE))
    return LabeledPatches(patches, labels)


def affinity_contrast(a: AffinityMap, labels) -> float:
    """Mean same-label affinity (off-diagonal) minus mean cross-label affinity."""
    labels = np.asarray(labels).ravel()
    if labels.size != a.n:
        raise ValueError(f"{labels.size} labels for an affinity over {a.n} patches")
    same = labels[:, None] == labels[None, :]
    np.fill_diagonal(same, False)
    diff = labels[:, None] != labels[None, :]
    if not same.any() or not diff.any():
        raise ValueError("contrast needs at least one same-label pair and one cross-label pair")
    v = a.values.astype(np.float64)
    return float(v[same].mean() - v[diff].mean())


def sharpening_trial(spec: SceneSpec, lam, clip: str = "relu") -> tuple:
    """Contrast of the scene affinity before and after one pooling-and-mixing pass."""
    scene = generate_scene(spec)
    p = scene.patches
    a = compute_affinity(p)
    mixed = apply_ivra_to_tokens(p.features, a, lam, clip)
    a_after = compute_affinity(PatchEmbeddings(p.grid_h, p.grid_w, mixed, p.source_layer_offset))
    return affinity_contrast(a, scene.labels), affinity_contrast(a_after, scene.labels)


def render_scene(scene: LabeledPatches, patch_size: int, seed: int = 0) -> np.ndarray:
    """Grayscale image whose patch pixels are a fixed random projection of the patch features."""
    p = scene.patches
    rng = np.random.default_rng([seed, 14])
    proj = rng.standard_normal((p.dim, patch_size * patch_size)).astype(DTYPE)
    pix = p.features @ proj
    img = pix.reshape(p.grid_h, p.grid_w, patch_size, patch_size).transpose(0, 2, 1, 3)
    return np.ascontiguousarray(img.reshape(p.grid_h * patch_size, p.grid_w * patch_size))

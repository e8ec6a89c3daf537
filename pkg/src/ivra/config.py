"""JSON run configuration and its defaults."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

from .pipeline import InjectConfig, ToyDecoderStack, ToyEncoder, as_position, default_inject_layer


class ConfigError(ValueError):
    pass


DECODER_KEYS = {"num_layers", "d_model", "num_heads"}
ENCODER_KEYS = {"num_layers", "d", "patch_size"}
TOP_KEYS = {"lambda", "inject_layers", "position", "clip", "encoder_layer_offset", "seed", "decoder", "encoder"}

DEFAULTS = {
    "lambda": 0.3,
    "position": "P0",
    "clip": "relu",
    "encoder_layer_offset": 2,
    "seed": 0,
    "decoder": {"num_layers": 8, "d_model": 64, "num_heads": 4},
    "encoder": {"num_layers": 4, "d": 64, "patch_size": 4},
}


@dataclass
class RunConfig:
    lam: float = 0.3
    inject_layers: list = field(default_factory=lambda: [default_inject_layer(8)])
    position: str = "P0"
    clip: str = "relu"
    encoder_layer_offset: int = 2
    seed: int = 0
    decoder: dict = field(default_factory=lambda: dict(DEFAULTS["decoder"]))
    encoder: dict = field(default_factory=lambda: dict(DEFAULTS["encoder"]))

    def inject_config(self) -> InjectConfig:
        return InjectConfig(
            lam=self.lam,
            inject_layers=tuple(self.inject_layers),
            position=self.position,
            clip=self.clip,
            encoder_layer_offset=self.encoder_layer_offset,
        )

    def build_models(self):
        enc = ToyEncoder(
            num_layers=self.encoder["num_layers"],
            d=self.encoder["d"],
            patch_size=self.encoder["patch_size"],
            seed=self.seed,
        )
        dec = ToyDecoderStack(
            num_layers=self.decoder["num_layers"],
            d_model=self.decoder["d_model"],
            num_heads=self.decoder["num_heads"],
            d_visual=enc.d,
            seed=self.seed,
        )
        return enc, dec

    def to_dict(self) -> dict:
        out = asdict(self)
        out["lambda"] = out.pop("lam")
        return {k: out[k] for k in ("lambda", "inject_layers", "position", "clip",
                                    "encoder_layer_offset", "seed", "decoder", "encoder")}


def _int(value, name, lo=None):
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(f"{name} must be an integer, got {value!r}")
    if lo is not None and value < lo:
        raise ConfigError(f"{name} must be >= {lo}, got {value}")
    return value


def _section(data, name, keys) -> dict:
    section = dict(DEFAULTS[name])
    given = data.get(name, {})
    if not isinstance(given, dict):
        raise ConfigError(f"{name} must be an object")
    unknown = set(given) - keys
    if unknown:
        raise ConfigError(f"unknown {name} keys: {sorted(unknown)}")
    section.update(given)
    for k in keys:
        _int(section[k], f"{name}.{k}", lo=1)
    return section


def parse_config(data: dict) -> RunConfig:
    """Validate a config document; every key is optional and unknown keys are rejected."""
    if not isinstance(data, dict):
        raise ConfigError("config must be a JSON object")
    unknown = set(data) - TOP_KEYS
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    decoder = _section(data, "decoder", DECODER_KEYS)
    encoder = _section(data, "encoder", ENCODER_KEYS)
    if decoder["d_model"] % decoder["num_heads"]:
        raise ConfigError("decoder.num_heads must divide decoder.d_model")
    if encoder["d"] % 4:
        raise ConfigError("encoder.d must be a multiple of the 4 encoder heads")

    lam = data.get("lambda", DEFAULTS["lambda"])
    if isinstance(lam, bool) or not isinstance(lam, (int, float)) or not 0.0 <= lam <= 1.0:
        raise ConfigError(f"lambda must be a number in [0, 1], got {lam!r}")

    layers = data.get("inject_layers", [default_inject_layer(decoder["num_layers"])])
    if not isinstance(layers, list):
        raise ConfigError("inject_layers must be an array of integers")
    for i in layers:
        _int(i, "inject_layers entry", lo=0)
        if i >= decoder["num_layers"]:
            raise ConfigError(f"inject layer {i} outside [0, {decoder['num_layers']})")
    if len(set(layers)) != len(layers):
        raise ConfigError("inject_layers has duplicates")

    position = data.get("position", DEFAULTS["position"])
    try:
        as_position(position)
    except ValueError as e:
        raise ConfigError(str(e)) from None

    clip = data.get("clip", DEFAULTS["clip"])
    if clip not in ("relu", "none"):
        raise ConfigError(f"clip must be 'relu' or 'none', got {clip!r}")

    offset = _int(data.get("encoder_layer_offset", DEFAULTS["encoder_layer_offset"]), "encoder_layer_offset", lo=0)
    if offset >= encoder["num_layers"]:
        raise ConfigError(f"encoder_layer_offset {offset} must be < encoder.num_layers {encoder['num_layers']}")
    seed = _int(data.get("seed", DEFAULTS["seed"]), "seed", lo=0)

    return RunConfig(float(lam), sorted(layers), position, clip, offset, seed, decoder, encoder)


def load_config(path) -> RunConfig:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: invalid JSON ({e})") from None
    return parse_config(data)

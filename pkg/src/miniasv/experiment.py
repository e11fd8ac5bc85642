"""Resolved experiment configuration: one JSON document with nested sections
for data, encoder, pooling, loss and training.

Resolution order: built-in defaults < config file < --set overrides. The
fully resolved config is echoed into the run's output directory so every
run is self-describing, and parsing the echo reproduces the in-memory
config exactly.
"""

import json
from dataclasses import asdict, dataclass, replace
from pathlib import Path

from .encoder import EncoderConfig
from .errors import ConfigError, InputError
from .margin_loss import LossConfig
from .optim import TrainConfig
from .pooling import PoolingConfig
from .synth import SyntheticSpeakerSpec


@dataclass(frozen=True)
class ExperimentConfig:
    data: SyntheticSpeakerSpec
    encoder: EncoderConfig
    pooling: PoolingConfig
    loss: LossConfig
    train: TrainConfig

    def validate(self) -> None:
        if self.encoder.input_dim != self.data.feat_dim:
            raise ConfigError(
                f"encoder input width {self.encoder.input_dim} != data feat_dim {self.data.feat_dim}"
            )
        if self.encoder.output_dim != self.pooling.dim:
            raise ConfigError(
                f"encoder output width {self.encoder.output_dim} != pooling dim {self.pooling.dim}"
            )
        if self.loss.num_classes != self.data.num_speakers:
            raise ConfigError(
                f"loss num_classes {self.loss.num_classes} != num_speakers {self.data.num_speakers}"
            )


def default_config() -> ExperimentConfig:
    """Desk-scale defaults; the fixed-seed end-to-end run uses these verbatim."""
    return ExperimentConfig(
        data=SyntheticSpeakerSpec(
            num_speakers=20, utts_per_speaker=10, frames=20, feat_dim=24,
            center_scale=1.0, noise_scale=0.5, eval_utts_per_speaker=3, seed=1234,
        ),
        encoder=EncoderConfig(layer_widths=(24, 32, 16), embed_dim=32),
        pooling=PoolingConfig(dim=16, heads=4, queries=2, attn_layers=1,
                              weight_mode="shared"),
        loss=LossConfig(num_classes=20, scale=35.0, margin=0.2, extra_margin=0.06,
                        k_top=5, subcenters=3, penalty_mode="additive"),
        train=TrainConfig(),
    )


_SECTIONS = {
    "data": SyntheticSpeakerSpec,
    "encoder": EncoderConfig,
    "pooling": PoolingConfig,
    "loss": LossConfig,
    "train": TrainConfig,
}


def config_to_dict(cfg: ExperimentConfig) -> dict:
    d = {name: asdict(getattr(cfg, name)) for name in _SECTIONS}
    d["encoder"]["layer_widths"] = list(d["encoder"]["layer_widths"])
    return d


def config_from_dict(d: dict) -> ExperimentConfig:
    kwargs = {}
    for name, cls in _SECTIONS.items():
        section = dict(d.get(name, {}))
        unknown = set(section) - {f for f in cls.__dataclass_fields__}
        if unknown:
            raise ConfigError(f"unknown field(s) in [{name}]: {', '.join(sorted(unknown))}")
        if name == "encoder" and "layer_widths" in section:
            section["layer_widths"] = tuple(section["layer_widths"])
        try:
            kwargs[name] = cls(**section)
        except TypeError as exc:
            raise ConfigError(f"bad [{name}] section: {exc}") from exc
    return ExperimentConfig(**kwargs)


def _coerce(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_overrides(d: dict, overrides: list[str]) -> dict:
    """Apply `section.key=value` strings; values parse as JSON when possible."""
    out = {k: dict(v) for k, v in d.items()}
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override must look like section.key=value, got {item!r}")
        dotted, value = item.split("=", 1)
        parts = dotted.split(".")
        if len(parts) != 2 or parts[0] not in _SECTIONS:
            raise ConfigError(
                f"override key must be one of {sorted(_SECTIONS)} + '.field', got {dotted!r}"
            )
        section, key = parts
        if key not in _SECTIONS[section].__dataclass_fields__:
            raise ConfigError(f"unknown field {key!r} in [{section}]")
        out.setdefault(section, {})[key] = _coerce(value)
    return out


def resolve_config(config_path=None, overrides: list[str] | None = None,
                   num_speakers: int | None = None) -> ExperimentConfig:
    """Defaults, optionally overlaid with a JSON file and --set overrides.

    When ``num_speakers`` is given (from a concrete dataset) the data section
    and the loss head are forced consistent with it unless explicitly set.
    """
    merged = config_to_dict(default_config())
    if config_path is not None:
        path = Path(config_path)
        if not path.is_file():
            raise InputError(f"config file not found: {path}")
        try:
            loaded = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file is not valid JSON: {exc}") from exc
        for name in _SECTIONS:
            if name in loaded:
                merged[name].update(loaded[name])
    merged = apply_overrides(merged, overrides or [])
    cfg = config_from_dict(merged)
    if num_speakers is not None and cfg.loss.num_classes != num_speakers:
        cfg = replace(cfg, loss=replace(cfg.loss, num_classes=num_speakers))
    return cfg


def echo_config(cfg: ExperimentConfig, out_dir) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "config.json"
    path.write_text(json.dumps(config_to_dict(cfg), indent=2) + "\n", encoding="utf-8")
    return path


def read_config_echo(path) -> ExperimentConfig:
    return config_from_dict(json.loads(Path(path).read_text(encoding="utf-8")))

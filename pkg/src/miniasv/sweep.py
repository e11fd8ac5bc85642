"""Ablation sweeps over the pooling grid (heads x queries x attention depth)
and the loss grid (margin, extra inter-class penalty, topK width).

Grid points are validated up front, then each point is a full train +
evaluate run on the same dataset. Results keep grid order regardless of the
``jobs`` setting; with ``jobs > 1`` independent points run in separate
processes, each writing to its own run directory.
"""

import json
import re
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

from .encoder import EncoderConfig
from .errors import ConfigError
from .experiment import ExperimentConfig, default_config
from .model import init_model
from .optim import TrainConfig
from .pooling import PoolingConfig
from .report import result_row
from .synth import SyntheticSpeakerSpec
from .train import evaluate, train

SWEEP_NOTE = (
    "Desk-scale synthetic-data ablation: row set mirrors the standard "
    "head/query and margin/topK grids, but rankings on toy data do not "
    "transfer to full-scale speech benchmarks and no such claim is made."
)

# (label, pooling-field overrides); None marks the frozen-attention baseline.
POOLING_AXIS: list[tuple[str, dict | None]] = [
    ("no attention (baseline)", None),
    ("q=1, h=1, n=1, shared", dict(heads=1, queries=1, attn_layers=1, weight_mode="shared")),
    ("q=1, h=2, n=1, shared", dict(heads=2, queries=1, attn_layers=1, weight_mode="shared")),
    ("q=1, h=4, n=1, shared", dict(heads=4, queries=1, attn_layers=1, weight_mode="shared")),
    ("q=1, h=8, n=1, shared", dict(heads=8, queries=1, attn_layers=1, weight_mode="shared")),
    ("q=1, h=16, n=1, shared", dict(heads=16, queries=1, attn_layers=1, weight_mode="shared")),
    ("q=1, h=32, n=1, shared", dict(heads=32, queries=1, attn_layers=1, weight_mode="shared")),
    ("q=2, h=1, n=1, shared", dict(heads=1, queries=2, attn_layers=1, weight_mode="shared")),
    ("q=4, h=1, n=1, shared", dict(heads=1, queries=4, attn_layers=1, weight_mode="shared")),
    ("q=8, h=1, n=1, shared", dict(heads=1, queries=8, attn_layers=1, weight_mode="shared")),
    ("q=2, h=16, n=1, shared", dict(heads=16, queries=2, attn_layers=1, weight_mode="shared")),
    ("q=4, h=16, n=1, shared", dict(heads=16, queries=4, attn_layers=1, weight_mode="shared")),
    ("q=8, h=16, n=1, shared", dict(heads=16, queries=8, attn_layers=1, weight_mode="shared")),
    ("q=4, h=16, n=2, shared", dict(heads=16, queries=4, attn_layers=2, weight_mode="shared")),
    ("q=4, h=16, n=2, unique", dict(heads=16, queries=4, attn_layers=2, weight_mode="unique")),
]

# (label, loss-field overrides)
LOSS_AXIS: list[tuple[str, dict]] = [
    ("m=0.20, m'=0.00 (baseline)", dict(margin=0.20, extra_margin=0.00, k_top=0)),
    ("m=0.22, m'=0.00", dict(margin=0.22, extra_margin=0.00, k_top=0)),
    ("m=0.24, m'=0.00", dict(margin=0.24, extra_margin=0.00, k_top=0)),
    ("m=0.26, m'=0.00", dict(margin=0.26, extra_margin=0.00, k_top=0)),
    ("m=0.20, m'=0.02, k_top=5", dict(margin=0.20, extra_margin=0.02, k_top=5)),
    ("m=0.20, m'=0.04, k_top=5", dict(margin=0.20, extra_margin=0.04, k_top=5)),
    ("m=0.20, m'=0.06, k_top=5", dict(margin=0.20, extra_margin=0.06, k_top=5)),
    ("m=0.20, m'=0.08, k_top=5", dict(margin=0.20, extra_margin=0.08, k_top=5)),
    ("m=0.20, m'=0.06, k_top=1", dict(margin=0.20, extra_margin=0.06, k_top=1)),
    ("m=0.20, m'=0.06, k_top=2", dict(margin=0.20, extra_margin=0.06, k_top=2)),
    ("m=0.20, m'=0.06, k_top=10", dict(margin=0.20, extra_margin=0.06, k_top=10)),
]


def sweep_base_config() -> ExperimentConfig:
    """Smaller, wider-channel variant of the defaults: 32 pooling channels so
    every head count in the grid divides evenly, fewer steps per point, and
    the strongest grid point (16 heads, 4 queries) as the fixed pooling for
    the loss axis."""
    base = default_config()
    return replace(
        base,
        data=SyntheticSpeakerSpec(
            num_speakers=12, utts_per_speaker=8, frames=10, feat_dim=16,
            center_scale=1.0, noise_scale=2.5, eval_utts_per_speaker=3, seed=1234,
        ),
        encoder=EncoderConfig(layer_widths=(16, 32), embed_dim=24),
        pooling=PoolingConfig(dim=32, heads=16, queries=4, attn_layers=1,
                              hidden_dim=16, weight_mode="shared"),
        loss=replace(base.loss, num_classes=12),
        train=TrainConfig(batch_size=32, max_steps=150, validate_every=50,
                          margin_warmup_steps=75),
    )


def build_grid(axis: str, base: ExperimentConfig) -> list[tuple[str, ExperimentConfig, bool]]:
    """Materialize and validate every grid point before anything runs.

    Returns (label, config, freeze_attention) triples.
    """
    tasks = []
    if axis == "pooling":
        for label, overrides in POOLING_AXIS:
            if overrides is None:
                cfg = replace(base, pooling=replace(
                    base.pooling, heads=1, queries=1, attn_layers=1, weight_mode="shared"
                ))
                tasks.append((label, cfg, True))
            else:
                cfg = replace(base, pooling=replace(base.pooling, **overrides))
                tasks.append((label, cfg, False))
    elif axis == "loss":
        for label, overrides in LOSS_AXIS:
            cfg = replace(base, loss=replace(base.loss, **overrides))
            tasks.append((label, cfg, False))
    else:
        raise ConfigError(f"unknown sweep axis {axis!r} (expected 'pooling' or 'loss')")
    for _, cfg, _ in tasks:
        cfg.validate()
    return tasks


def _slug(label: str) -> str:
    return re.sub(r"[^a-z0-9]+", "-", label.lower()).strip("-")


def _run_point(task) -> dict:
    label, cfg, freeze_attention, dataset = task
    if freeze_attention:
        model = init_model(cfg.encoder, cfg.pooling, cfg.loss, cfg.train.seed)
        model.params["pool_w_out"][:] = 0.0
        frozen = tuple(k for k in model.params if k.startswith("pool_"))
        model, trace = train(dataset, cfg.encoder, cfg.pooling, cfg.loss, cfg.train,
                             model=model, frozen=frozen)
    else:
        model, trace = train(dataset, cfg.encoder, cfg.pooling, cfg.loss, cfg.train)
    rep = evaluate(model, dataset.features_by_id(), dataset.trials)
    row = result_row(label, rep)
    row["final_loss"] = trace["loss"][-1]
    return row


def run_sweep(axis: str, dataset, base: ExperimentConfig, jobs: int = 1,
              out_dir=None) -> dict:
    """Run every grid point of one axis on the dataset; returns a report dict
    (see report.render_table) with rows in grid order.

    With ``out_dir`` set, each point additionally gets its own
    ``runs/<slug>/result.json``.
    """
    tasks = [
        (label, cfg, freeze, dataset) for label, cfg, freeze in build_grid(axis, base)
    ]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(_run_point, tasks))
    else:
        rows = [_run_point(t) for t in tasks]

    if out_dir is not None:
        for (label, _, _, _), row in zip(tasks, rows):
            run_dir = Path(out_dir) / "runs" / _slug(label)
            run_dir.mkdir(parents=True, exist_ok=True)
            (run_dir / "result.json").write_text(
                json.dumps(row, indent=2) + "\n", encoding="utf-8"
            )
    return {
        "title": f"Sweep over the {axis} grid",
        "note": SWEEP_NOTE,
        "axis": axis,
        "rows": rows,
    }

"""Training loop and trial evaluation for the synthetic harness.

Single-threaded and fully deterministic: the dataset seed and the training
seed pin the loss trace bit-for-bit. Batches are plain shuffles of the
train split; class centers are re-projected to unit norm after every
optimizer step; the target margin ramps linearly over the warmup; the
learning rate follows a reduce-on-plateau schedule driven by held-out loss.
"""

from dataclasses import replace

import numpy as np

from .errors import DivergenceError, InputError
from .margin_loss import MarginSchedule, cosine_logits_vjp, inter_topk_loss, margin_schedule
from .metrics import EvalReport, TrialList, cosine_score, evaluate_scores
from .model import SpeakerModel, embed_backward, embed_batch, init_model
from .optim import SGD, PlateauScheduler, TrainConfig
from .synth import Dataset


def _batch_loss(model: SpeakerModel, feats, labels, m_current: float, loss_cfg=None):
    """Forward pass through the full network; returns loss and closures' caches."""
    emb, cache = embed_batch(model, feats)
    cos, _, cos_vjp = cosine_logits_vjp(emb, model.centers())
    loss, grad_cos = inter_topk_loss(cos, labels, loss_cfg or model.loss, m_current)
    return loss, grad_cos, cos_vjp, cache


def train_step(model: SpeakerModel, optimizer: SGD, feats, labels, m_current: float,
               loss_cfg=None) -> float:
    loss, grad_cos, cos_vjp, cache = _batch_loss(model, feats, labels, m_current, loss_cfg)
    grad_emb, grad_centers = cos_vjp(grad_cos)
    grads = embed_backward(model, grad_emb, cache)
    grads["centers"] = grad_centers
    optimizer.step(grads)
    if optimizer.lr != 0.0 and "centers" not in optimizer.frozen:
        model.centers().renormalize()
    return loss


def validation_loss(model: SpeakerModel, dataset: Dataset, margin: float) -> float:
    """Classification loss on all held-out utterances at a fixed margin."""
    idx = dataset.eval_indices
    loss, _, _, _ = _batch_loss(
        model, dataset.features[idx], dataset.speakers[idx], margin
    )
    return loss


def train(dataset: Dataset, encoder_cfg, pooling_cfg, loss_cfg, train_cfg: TrainConfig,
          model: SpeakerModel | None = None, frozen: tuple[str, ...] = ()):
    """Train on the dataset's train split.

    A fresh model is initialized from the training seed unless one is passed
    in; ``frozen`` names parameters the optimizer must not touch. Returns
    ``(model, trace)`` where trace holds the per-step losses, the validation
    history and the per-step learning rate, all JSON-friendly.
    """
    if model is None:
        model = init_model(encoder_cfg, pooling_cfg, loss_cfg, train_cfg.seed)
    optimizer = SGD(
        model.params, lr=train_cfg.learning_rate,
        momentum=train_cfg.momentum, weight_decay=train_cfg.weight_decay,
        frozen=frozen,
    )
    scheduler = PlateauScheduler(
        optimizer, patience=train_cfg.patience,
        factor=train_cfg.lr_decay, min_lr=train_cfg.min_lr,
    )
    schedule = MarginSchedule(
        m_final=loss_cfg.margin, warmup_steps=train_cfg.margin_warmup_steps
    )

    rng = np.random.default_rng(train_cfg.seed)
    train_idx = dataset.train_indices
    order = rng.permutation(train_idx)
    cursor = 0

    losses: list[float] = []
    lrs: list[float] = []
    validations: list[dict] = []
    for step in range(train_cfg.max_steps):
        if cursor + train_cfg.batch_size > order.size:
            order = rng.permutation(train_idx)
            cursor = 0
        batch = order[cursor:cursor + train_cfg.batch_size]
        cursor += train_cfg.batch_size

        m_current = margin_schedule(step, schedule)
        step_loss_cfg = None
        if train_cfg.ramp_extra_margin and loss_cfg.extra_margin > 0.0:
            frac = min(step / train_cfg.margin_warmup_steps, 1.0)
            step_loss_cfg = replace(loss_cfg, extra_margin=frac * loss_cfg.extra_margin)
        loss = train_step(
            model, optimizer,
            dataset.features[batch], dataset.speakers[batch], m_current,
            loss_cfg=step_loss_cfg,
        )
        if not np.isfinite(loss):
            raise DivergenceError(step)
        losses.append(loss)
        lrs.append(optimizer.lr)

        if (step + 1) % train_cfg.validate_every == 0:
            # validate at the final margin so successive values are comparable
            val = validation_loss(model, dataset, loss_cfg.margin)
            decayed = scheduler.update(val)
            validations.append(
                {"step": step + 1, "loss": val, "lr": optimizer.lr, "decayed": decayed}
            )

    trace = {"loss": losses, "lr": lrs, "validations": validations}
    return model, trace


def extract_embeddings(model: SpeakerModel, features_by_id: dict, ids) -> dict:
    """Embeddings (pooling -> linear head, no loss head) for the given ids."""
    out = {}
    for uid in ids:
        if uid not in features_by_id:
            raise InputError(f"unknown utterance id: {uid}")
        if uid not in out:
            emb, _ = embed_batch(model, features_by_id[uid][None])
            out[uid] = emb[0]
    return out


def evaluate(model: SpeakerModel, features_by_id: dict, trials: TrialList) -> EvalReport:
    """Score every trial by embedding cosine and report EER / minDCF."""
    needed = set(trials.enroll) | set(trials.test)
    emb = extract_embeddings(model, features_by_id, sorted(needed))
    scores = np.array([
        cosine_score(emb[e], emb[t]) for e, t in zip(trials.enroll, trials.test)
    ])
    return evaluate_scores(scores, trials.labels)

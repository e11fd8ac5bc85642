"""Synthetic data, encoder/model plumbing, optimizer and scheduler contracts,
and end-to-end training determinism."""

import numpy as np
import pytest

from miniasv.encoder import EncoderConfig, encoder_backward, encoder_forward, init_encoder_params
from miniasv.errors import ConfigError, DivergenceError, InputError
from miniasv.margin_loss import LossConfig
from miniasv.model import (
    embed_batch,
    embed_utterance,
    init_model,
    load_checkpoint,
    save_checkpoint,
)
from miniasv.optim import SGD, PlateauScheduler, TrainConfig
from miniasv.pooling import PoolingConfig
from miniasv.synth import (
    SyntheticSpeakerSpec,
    generate_dataset,
    load_dataset,
    nearest_centroid_accuracy,
    save_dataset,
)
from miniasv.tensor import finite_diff_check
from miniasv.train import evaluate, train, train_step


def tiny_setup(num_speakers=4, noise=0.5, seed=0, **train_kw):
    spec = SyntheticSpeakerSpec(
        num_speakers=num_speakers, utts_per_speaker=6, frames=6, feat_dim=8,
        noise_scale=noise, eval_utts_per_speaker=2, seed=seed,
    )
    encoder = EncoderConfig(layer_widths=(8, 12, 6), embed_dim=10)
    pooling = PoolingConfig(dim=6, heads=2, queries=2, attn_layers=1)
    loss = LossConfig(num_classes=num_speakers, extra_margin=0.06, k_top=2)
    train_cfg = TrainConfig(
        batch_size=train_kw.pop("batch_size", 8),
        max_steps=train_kw.pop("max_steps", 30),
        validate_every=10, margin_warmup_steps=20, seed=1, **train_kw,
    )
    return spec, encoder, pooling, loss, train_cfg


class TestSyntheticData:
    def test_deterministic_per_seed(self):
        spec = SyntheticSpeakerSpec(num_speakers=3, utts_per_speaker=4, frames=5,
                                    feat_dim=6, seed=11)
        a, b = generate_dataset(spec), generate_dataset(spec)
        assert np.array_equal(a.features, b.features)
        assert a.ids == b.ids
        assert np.array_equal(a.trials.labels, b.trials.labels)
        assert a.trials.enroll == b.trials.enroll

    def test_trials_balanced_and_from_heldout(self):
        ds = generate_dataset(SyntheticSpeakerSpec(
            num_speakers=5, utts_per_speaker=6, frames=4, feat_dim=6,
            eval_utts_per_speaker=3, seed=2,
        ))
        labels = ds.trials.labels
        assert labels.sum() == (~labels).sum() == 5 * 3  # C(3,2) pairs per speaker
        eval_ids = {ds.ids[i] for i in ds.eval_indices}
        assert set(ds.trials.enroll) <= eval_ids and set(ds.trials.test) <= eval_ids

    def test_zero_noise_collapses_within_speaker(self):
        ds = generate_dataset(SyntheticSpeakerSpec(
            num_speakers=2, utts_per_speaker=4, frames=3, feat_dim=5,
            noise_scale=0.0, seed=3,
        ))
        # every utterance of a speaker is the speaker center, frame for frame
        for s in range(2):
            utts = ds.features[ds.speakers == s]
            assert np.array_equal(utts, np.broadcast_to(utts[0], utts.shape))

    def test_learnability_floor(self):
        ds = generate_dataset(SyntheticSpeakerSpec(
            num_speakers=20, utts_per_speaker=10, frames=20, feat_dim=24,
            noise_scale=0.5, eval_utts_per_speaker=3, seed=1234,
        ))
        assert nearest_centroid_accuracy(ds) > 0.95

    def test_too_few_speakers(self):
        with pytest.raises(InputError):
            SyntheticSpeakerSpec(num_speakers=1, utts_per_speaker=4, frames=3, feat_dim=4)

    def test_round_trip_is_bit_exact(self, tmp_path):
        spec, *_ = tiny_setup()
        ds = generate_dataset(spec)
        save_dataset(ds, tmp_path / "d")
        back = load_dataset(tmp_path / "d")
        assert np.array_equal(back.features, ds.features)
        assert back.spec == ds.spec
        assert back.ids == ds.ids
        assert np.array_equal(back.is_train, ds.is_train)
        assert back.trials.enroll == ds.trials.enroll

        save_dataset(back, tmp_path / "d2")
        for name in ("meta.json", "features.bin", "trials.txt"):
            assert (tmp_path / "d" / name).read_bytes() == (tmp_path / "d2" / name).read_bytes()

    def test_load_rejects_non_dataset(self, tmp_path):
        with pytest.raises(InputError):
            load_dataset(tmp_path)


class TestEncoder:
    def test_shapes_and_gradient(self):
        cfg = EncoderConfig(layer_widths=(5, 7, 4), embed_dim=8)
        params = init_encoder_params(cfg, 0)
        rng = np.random.default_rng(1)
        x = rng.standard_normal((6, 5))
        out, _ = encoder_forward(x, params, cfg)
        assert out.shape == (6, 4)

        probe = rng.standard_normal((6, 4))
        names = sorted(params)

        def f(vec):
            pos, p = 0, {}
            for n in names:
                p[n] = vec[pos:pos + params[n].size].reshape(params[n].shape)
                pos += params[n].size
            y, acts = encoder_forward(x, p, cfg)
            _, grads = encoder_backward(probe, acts, p, cfg)
            return float((probe * y).sum()), np.concatenate([grads[n].ravel() for n in names])

        packed = np.concatenate([params[n].ravel() for n in names])
        assert finite_diff_check(f, packed) <= 1e-6

    def test_input_gradient(self):
        cfg = EncoderConfig(layer_widths=(4, 6, 3), embed_dim=8)
        params = init_encoder_params(cfg, 2)
        rng = np.random.default_rng(3)
        x = rng.standard_normal((5, 4))
        probe = rng.standard_normal((5, 3))

        def f(vec):
            y, acts = encoder_forward(vec.reshape(5, 4), params, cfg)
            gx, _ = encoder_backward(probe, acts, params, cfg)
            return float((probe * y).sum()), gx.ravel()

        assert finite_diff_check(f, x.ravel()) <= 1e-6


class TestModel:
    def test_width_mismatch_rejected(self):
        with pytest.raises(ConfigError):
            init_model(
                EncoderConfig(layer_widths=(8, 12), embed_dim=10),
                PoolingConfig(dim=6), LossConfig(num_classes=4), seed=0,
            )

    def test_checkpoint_round_trip(self, tmp_path):
        _, encoder, pooling, loss, _ = tiny_setup()
        model = init_model(encoder, pooling, loss, seed=5)
        save_checkpoint(model, tmp_path / "m.npz")
        back = load_checkpoint(tmp_path / "m.npz")
        assert back.encoder == model.encoder
        assert back.pooling == model.pooling
        assert back.loss == model.loss
        assert set(back.params) == set(model.params)
        for k in model.params:
            assert np.array_equal(back.params[k], model.params[k])

    def test_missing_checkpoint(self, tmp_path):
        with pytest.raises(InputError):
            load_checkpoint(tmp_path / "nope.npz")

    def test_embed_single_matches_batch(self):
        _, encoder, pooling, loss, _ = tiny_setup()
        model = init_model(encoder, pooling, loss, seed=5)
        rng = np.random.default_rng(6)
        feats = rng.standard_normal((3, 6, 8))
        batch, _ = embed_batch(model, feats)
        single = embed_utterance(model, feats[1])
        # blas blocks differently for different matrix heights: ulp tolerance
        np.testing.assert_allclose(single, batch[1], rtol=0, atol=1e-12)


class TestOptimizer:
    def test_hand_computed_momentum_steps(self):
        p = {"w": np.array([1.0])}
        opt = SGD(p, lr=0.1, momentum=0.9, weight_decay=0.0)
        opt.step({"w": np.array([1.0])})
        assert p["w"][0] == pytest.approx(0.9)
        opt.step({"w": np.array([1.0])})
        assert p["w"][0] == pytest.approx(0.9 - 0.1 * 1.9)

    def test_weight_decay_term(self):
        p = {"w": np.array([2.0])}
        opt = SGD(p, lr=0.1, momentum=0.0, weight_decay=0.5)
        opt.step({"w": np.array([0.0])})
        assert p["w"][0] == pytest.approx(2.0 - 0.1 * 0.5 * 2.0)

    def test_frozen_params_untouched(self):
        p = {"a": np.ones(2), "b": np.ones(2)}
        opt = SGD(p, lr=0.5, frozen=("b",))
        opt.step({"a": np.ones(2), "b": np.ones(2)})
        assert not np.array_equal(p["a"], np.ones(2))
        np.testing.assert_array_equal(p["b"], np.ones(2))

    def test_zero_learning_rate_keeps_params(self):
        spec, encoder, pooling, loss, train_cfg = tiny_setup(
            learning_rate=0.0, max_steps=10, batch_size=16,  # batch = whole train split
        )
        # margin 0 so the warmup ramp cannot move the loss either
        loss = LossConfig(num_classes=loss.num_classes, margin=0.0,
                          extra_margin=0.06, k_top=2)
        ds = generate_dataset(spec)
        model_before = init_model(encoder, pooling, loss, train_cfg.seed)
        model, trace = train(ds, encoder, pooling, loss, train_cfg)
        for k in model.params:
            np.testing.assert_array_equal(model.params[k], model_before.params[k])
        # same data every step (shuffled order only) with fixed params: flat
        # trace up to the summation order of the batch mean
        assert np.ptp(trace["loss"]) < 1e-12


class TestPlateauScheduler:
    def test_decays_only_after_patience_consecutive_bad(self):
        opt = SGD({"w": np.zeros(1)}, lr=1.0)
        sched = PlateauScheduler(opt, patience=2, factor=0.1, min_lr=1e-6)
        assert not sched.update(1.0)   # first value becomes best
        assert not sched.update(0.9)   # improvement
        assert not sched.update(0.95)  # bad 1
        assert sched.update(0.95)      # bad 2 -> decay
        assert opt.lr == pytest.approx(0.1)
        assert not sched.update(0.95)  # counter reset: bad 1 again
        assert sched.update(0.95)      # bad 2 -> decay
        assert opt.lr == pytest.approx(0.01)

    def test_lr_never_increases_and_floors_at_min(self):
        opt = SGD({"w": np.zeros(1)}, lr=1e-4)
        sched = PlateauScheduler(opt, patience=1, factor=0.1, min_lr=1e-6)
        history = [opt.lr]
        for _ in range(8):
            sched.update(5.0)
            history.append(opt.lr)
        assert all(b <= a for a, b in zip(history, history[1:]))
        assert history[-1] == 1e-6


class TestTraining:
    def test_same_seed_bit_identical_trace(self):
        spec, encoder, pooling, loss, train_cfg = tiny_setup()
        ds = generate_dataset(spec)
        _, t1 = train(ds, encoder, pooling, loss, train_cfg)
        _, t2 = train(ds, encoder, pooling, loss, train_cfg)
        assert t1["loss"] == t2["loss"]
        assert t1["validations"] == t2["validations"]

    def test_loss_decreases_on_easy_data(self):
        spec, encoder, pooling, loss, train_cfg = tiny_setup(max_steps=60)
        ds = generate_dataset(spec)
        _, trace = train(ds, encoder, pooling, loss, train_cfg)
        assert trace["loss"][-1] < 0.5 * trace["loss"][0]

    def test_center_norms_stay_unit(self):
        spec, encoder, pooling, loss, train_cfg = tiny_setup()
        ds = generate_dataset(spec)
        model = init_model(encoder, pooling, loss, 0)
        opt = SGD(model.params, lr=0.05, momentum=0.9, weight_decay=1e-3)
        rng = np.random.default_rng(0)
        for _ in range(10):
            batch = rng.choice(ds.train_indices, size=6, replace=False)
            train_step(model, opt, ds.features[batch], ds.speakers[batch], 0.1)
            norms = np.linalg.norm(model.params["centers"], axis=2)
            np.testing.assert_allclose(norms, 1.0, atol=1e-10)

    def test_pure_decay_shrinks_first_layer_on_zero_batches(self):
        # zero input frames: the first-layer weight gradient vanishes, so its
        # update is weight decay (plus momentum) only -> norm strictly shrinks
        spec, encoder, pooling, loss, train_cfg = tiny_setup()
        ds = generate_dataset(spec)
        model = init_model(encoder, pooling, loss, 0)
        opt = SGD(model.params, lr=0.05, momentum=0.9, weight_decay=1e-2)
        zeros = np.zeros((6, spec.frames, spec.feat_dim))
        labels = np.zeros(6, dtype=int)
        norms = [np.linalg.norm(model.params["enc_w0"])]
        for _ in range(12):
            train_step(model, opt, zeros, labels, 0.0)
            norms.append(np.linalg.norm(model.params["enc_w0"]))
        assert all(b < a for a, b in zip(norms, norms[1:]))

    def test_divergence_raises_with_step(self):
        spec, encoder, pooling, loss, train_cfg = tiny_setup(
            learning_rate=1e12, max_steps=200,
        )
        ds = generate_dataset(spec)
        with np.errstate(all="ignore"):  # the blow-up to inf/nan is the point
            with pytest.raises(DivergenceError) as exc:
                train(ds, encoder, pooling, loss, train_cfg)
        assert exc.value.step >= 0

    def test_ramped_extra_margin_changes_early_losses_only(self):
        spec, encoder, pooling, loss, train_cfg = tiny_setup(max_steps=25)
        ds = generate_dataset(spec)
        _, base = train(ds, encoder, pooling, loss, train_cfg)
        from dataclasses import replace
        _, ramped = train(ds, encoder, pooling, loss,
                          replace(train_cfg, ramp_extra_margin=True))
        assert ramped["loss"][0] != base["loss"][0]  # m' starts at 0 when ramped


class TestEvaluate:
    def test_zero_noise_gives_zero_eer(self):
        spec, encoder, pooling, loss, train_cfg = tiny_setup(noise=0.0, max_steps=5)
        ds = generate_dataset(spec)
        model, _ = train(ds, encoder, pooling, loss, train_cfg)
        report = evaluate(model, ds.features_by_id(), ds.trials)
        assert report.eer == 0.0

    def test_untrained_model_near_chance_on_hard_trials(self):
        spec, encoder, pooling, loss, _ = tiny_setup(num_speakers=8, noise=6.0, seed=9)
        ds = generate_dataset(spec)
        model = init_model(encoder, pooling, loss, seed=3)
        report = evaluate(model, ds.features_by_id(), ds.trials)
        assert abs(report.eer - 0.5) <= 0.12

    def test_unknown_utterance_id(self):
        spec, encoder, pooling, loss, _ = tiny_setup()
        ds = generate_dataset(spec)
        model = init_model(encoder, pooling, loss, 0)
        trials = ds.trials
        trials.enroll[0] = "missing_utt"
        with pytest.raises(InputError):
            evaluate(model, ds.features_by_id(), trials)

    def test_report_counts(self):
        spec, encoder, pooling, loss, train_cfg = tiny_setup(max_steps=5)
        ds = generate_dataset(spec)
        model, _ = train(ds, encoder, pooling, loss, train_cfg)
        report = evaluate(model, ds.features_by_id(), ds.trials)
        assert report.num_target == int(ds.trials.labels.sum())
        assert report.num_nontarget == int((~ds.trials.labels).sum())
        assert set(report.min_dcf) == {0.01, 0.05}

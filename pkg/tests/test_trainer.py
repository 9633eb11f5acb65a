import numpy as np
import pytest

from dipalab.augment import DipaConfig
from dipalab.data import GeneratorConfig, TimeSeriesSample, generate, sample_few_shot, split
from dipalab.model import ModelConfig, init_parameters
from dipalab.trainer import (
    DEFAULT_SEEDS,
    Adam,
    EarlyStopping,
    TrainConfig,
    TrainingDiverged,
    evaluate,
    evaluation_loss,
    pretrain_then_finetune,
    train,
    uniform_prior,
)

TINY = ModelConfig(channels=2, embed_dim=8, num_heads=2, ffn_hidden=16, num_classes=3)


def separable(n_per_class=10, k=3, seed=0):
    rng = np.random.default_rng(seed)
    out = []
    for c in range(k):
        for _ in range(n_per_class):
            days = np.sort(rng.choice(366, size=5, replace=False))
            values = np.full((5, 2), float(c) - 1.0) + rng.normal(scale=0.05, size=(5, 2))
            out.append(TimeSeriesSample(values, days, c, len(out)))
    return out


class TestEarlyStopping:
    @pytest.mark.parametrize("patience", [1, 3, 15])
    def test_stops_exactly_after_patience(self, patience):
        stopper = EarlyStopping(patience)
        losses = [5.0, 4.0, 3.0] + [3.0] * 100
        for epoch, v in enumerate(losses, start=1):
            _, stop = stopper.update(epoch, v)
            if stop:
                break
        assert epoch == 3 + patience
        assert stopper.best_epoch == 3

    def test_ties_are_not_improvements(self):
        stopper = EarlyStopping(2)
        assert stopper.update(1, 1.0) == (True, False)
        assert stopper.update(2, 1.0) == (False, False)
        assert stopper.update(3, 1.0) == (False, True)

    def test_improving_never_stops(self):
        stopper = EarlyStopping(1)
        assert not any(stopper.update(e, 10.0 - 0.01 * e)[1] for e in range(1, 500))

    def test_train_honours_max_epochs(self):
        ep = separable(4)
        cfg = TrainConfig(max_epochs=6, patience=100, learning_rate=1e-3)
        _, trace = train(init_parameters(TINY, np.random.default_rng(0)), ep, ep, cfg, TINY)
        assert trace.epochs_run == 6 and trace.stop_reason == "max_epochs"

    def test_train_stops_on_patience(self):
        ep = separable(4)
        # validation labels rotated, so fitting the episode drives val loss up
        val = [TimeSeriesSample(s.values, s.days, (s.label + 1) % 3, s.uid) for s in ep]
        cfg = TrainConfig(max_epochs=100, patience=3, learning_rate=1e-2)
        _, trace = train(init_parameters(TINY, np.random.default_rng(0)), ep, val, cfg, TINY)
        assert trace.stop_reason == "early_stopping"
        assert trace.epochs_run == trace.best_epoch + 3


class TestAdam:
    def test_first_step_is_sign(self):
        params = init_parameters(TINY, np.random.default_rng(0))
        before = {n: t.copy() for n, t in params.tensors.items()}
        rng = np.random.default_rng(1)
        for n, g in params.grads.items():
            g[...] = rng.choice([-1.0, 1.0], size=g.shape) * rng.uniform(0.1, 5.0, size=g.shape)
        Adam(lr=1e-3).step(params)
        for n in params.names():
            expected = before[n] - 1e-3 * np.sign(params.grads[n])
            np.testing.assert_allclose(params[n], expected, atol=1e-6)

    def test_zero_gradient_is_no_op(self):
        params = init_parameters(TINY, np.random.default_rng(0))
        before = {n: t.copy() for n, t in params.tensors.items()}
        params.zero_grad()
        opt = Adam(lr=1e-2)
        for _ in range(3):
            opt.step(params)
        for n in params.names():
            assert params[n].tobytes() == before[n].tobytes()

    def test_shape_mismatch(self):
        params = init_parameters(TINY, np.random.default_rng(0))
        params.grads["head.bias"] = np.zeros(7)
        with pytest.raises(ValueError):
            Adam(1e-3).step(params)


class TestTrain:
    def test_fits_separable_set(self):
        ep = separable()
        cfg = TrainConfig(learning_rate=1e-2, max_epochs=150, patience=150, batch_size=8)
        params = init_parameters(TINY, np.random.default_rng(0))
        _, trace = train(params, ep, ep, cfg, TINY)
        assert trace.train_loss[-1] < 0.05

    def test_deterministic(self):
        ep = separable(5)
        cfg = TrainConfig(max_epochs=4, seed=7)
        params = init_parameters(TINY, np.random.default_rng(0))
        a, ta = train(params, ep, ep, cfg, TINY)
        b, tb = train(params, ep, ep, cfg, TINY)
        assert ta.val_loss == tb.val_loss
        assert all(a[n].tobytes() == b[n].tobytes() for n in a.names())

    def test_does_not_mutate_input(self):
        ep = separable(3)
        params = init_parameters(TINY, np.random.default_rng(0))
        snapshot = params.copy()
        train(params, ep, ep, TrainConfig(max_epochs=2), TINY)
        assert all(params[n].tobytes() == snapshot[n].tobytes() for n in params.names())

    def test_tau_zero_matches_disabled(self):
        ep = separable(5)
        params = init_parameters(TINY, np.random.default_rng(0))
        off, t_off = train(params, ep, ep, TrainConfig(max_epochs=3), TINY)
        zero, t_zero = train(
            params, ep, ep, TrainConfig(max_epochs=3, dipa=DipaConfig(alpha=0.3, tau=0.0, enabled=True)), TINY
        )
        assert t_off.train_loss == t_zero.train_loss
        assert all(off[n].tobytes() == zero[n].tobytes() for n in off.names())

    @pytest.mark.parametrize("kind", ["ce", "fl"])
    def test_uniform_prior_hook(self, kind):
        ep = separable(5)
        params = init_parameters(TINY, np.random.default_rng(0))
        base = TrainConfig(loss_kind=kind, max_epochs=3)
        on = TrainConfig(loss_kind=kind, max_epochs=3, dipa=DipaConfig(tau=1.7, enabled=True))
        off, _ = train(params, ep, ep, base, TINY)
        hooked, _ = train(params, ep, ep, on, TINY, prior_sampler=uniform_prior)
        for n in off.names():
            np.testing.assert_allclose(hooked[n], off[n], atol=1e-10)

    def test_dipa_changes_training(self):
        ep = separable(5)
        params = init_parameters(TINY, np.random.default_rng(0))
        off, _ = train(params, ep, ep, TrainConfig(max_epochs=2), TINY)
        on, _ = train(params, ep, ep, TrainConfig(max_epochs=2, dipa=DipaConfig(enabled=True)), TINY)
        assert off["head.weight"].tobytes() != on["head.weight"].tobytes()

    def test_returns_best_validation_epoch(self):
        ep = separable(6, seed=1)
        val = separable(6, seed=2)
        cfg = TrainConfig(learning_rate=3e-2, max_epochs=25, patience=5)
        params = init_parameters(TINY, np.random.default_rng(0))
        best, trace = train(params, ep, val, cfg, TINY)
        loss, _ = evaluation_loss(best, TINY, val, cfg)
        assert loss == pytest.approx(trace.val_loss[trace.best_epoch - 1], abs=1e-12)
        assert trace.val_loss[trace.best_epoch - 1] == min(trace.val_loss)

    def test_divergence_is_reported(self):
        ep = separable(3)
        params = init_parameters(TINY, np.random.default_rng(0))
        params["input.weight"][...] = np.nan
        with pytest.raises(TrainingDiverged) as err:
            train(params, ep, ep, TrainConfig(max_epochs=2), TINY)
        assert err.value.trace.stop_reason == "diverged"

    def test_trace_csv(self):
        ep = separable(3)
        _, trace = train(init_parameters(TINY, np.random.default_rng(0)), ep, ep, TrainConfig(max_epochs=2), TINY)
        lines = trace.to_csv().splitlines()
        assert lines[0] == "epoch,train_loss,val_loss,val_acc"
        assert len([l for l in lines if not l.startswith("#")]) == 3

    def test_rejects_bad_labels(self):
        ep = separable(2, k=4)
        with pytest.raises(ValueError):
            train(init_parameters(TINY, np.random.default_rng(0)), ep, ep, TrainConfig(max_epochs=1), TINY)

    @pytest.mark.parametrize(
        "kw", [dict(loss_kind="mse"), dict(learning_rate=0.0), dict(patience=0), dict(focal_gamma=-1.0)]
    )
    def test_config_validation(self, kw):
        with pytest.raises(ValueError):
            TrainConfig(**kw)


def test_default_seeds():
    assert DEFAULT_SEEDS == (0, 1, 42, 123, 1234)


def test_evaluate_metrics():
    ep = separable(4)
    cm, labels, m = evaluate(init_parameters(TINY, np.random.default_rng(0)), TINY, ep)
    assert cm.sum() == 12 and set(m) == {"accuracy", "kappa", "macro_f1"}
    assert 0.0 <= m["accuracy"] <= 1.0


class TestPretrain:
    def setup_method(self):
        gen = GeneratorConfig(num_classes=4, channels=2, total_samples=400, obs_count_range=(4, 8), test_only_classes=0)
        src = generate(gen.source_domain(total_samples=300))
        self.src = split(src, fractions=(0.8, 0.2, 0.0), rng=np.random.default_rng(0))
        self.tgt = split(generate(gen), rng=np.random.default_rng(1))
        self.model = ModelConfig(channels=2, embed_dim=8, num_heads=2, ffn_hidden=16, num_classes=4)

    def test_head_and_backbone(self):
        episode = sample_few_shot(self.tgt.train, 2, np.random.default_rng(0))
        cfg = TrainConfig(max_epochs=3, patience=3)
        tuned, trace, pre = pretrain_then_finetune(
            self.src.train, self.src.validation, episode, self.tgt.validation, self.model, 4, cfg, cfg
        )
        assert tuned["head.weight"].shape == (8, 4)
        assert trace.epochs_run >= 1
        assert any(tuned[n].tobytes() != pre[n].tobytes() for n in pre.backbone_names())

    def test_reuses_pretrained(self):
        episode = sample_few_shot(self.tgt.train, 2, np.random.default_rng(0))
        cfg = TrainConfig(max_epochs=2)
        pre = init_parameters(self.model, np.random.default_rng(5))
        _, _, back = pretrain_then_finetune([], [], episode, self.tgt.validation, self.model, 6, cfg, cfg, pretrained=pre)
        assert back is pre

    def test_channel_mismatch(self):
        wrong = ModelConfig(channels=3, embed_dim=8, num_heads=2, ffn_hidden=16, num_classes=4)
        cfg = TrainConfig(max_epochs=1)
        with pytest.raises(ValueError):
            pretrain_then_finetune(
                self.src.train, self.src.validation, self.tgt.train, self.tgt.validation, wrong, 4, cfg, cfg
            )

import logging
from collections import OrderedDict
from concurrent.futures import ThreadPoolExecutor

import numpy as np
import pytest

from src.config import TrainConfig
from src.data_loader import dataset_from_arrays
from src.errors import ConfigError, DataError, NumericalError
from src.inventory import encode
from src.net import NetConfig, NetParams, ParamGrad
from src.trainer import (TrainState, apply_update, batch_gradient, clip, evaluate, polish,
                         posterior_floor, schedule, train, train_epoch, utterance_gradient)

DUMMY = NetConfig(1, 1, 1, 1)


def toy_params(values):
    return NetParams(DUMMY, OrderedDict(w=np.array(values, dtype=float)))


def toy_grad(values):
    return ParamGrad(DUMMY, OrderedDict(w=np.array(values, dtype=float)))


class TestUpdateRule:
    def test_momentum_steps(self):
        cfg = TrainConfig(learning_rate=0.1, momentum=0.9, l2=0.0, clip=100.0)
        state = TrainState.create(toy_params([1.0, 2.0]), cfg)
        apply_update(state, toy_grad([2.0, 4.0]), frames=2, cfg=cfg)
        assert np.allclose(state.velocity['w'], [-0.1, -0.2])
        assert np.allclose(state.params['w'], [0.9, 1.8])
        apply_update(state, toy_grad([2.0, 4.0]), frames=2, cfg=cfg)
        assert np.allclose(state.velocity['w'], [-0.19, -0.38])
        assert np.allclose(state.params['w'], [0.71, 1.42])

    def test_l2_uses_previous_params(self):
        cfg = TrainConfig(learning_rate=0.1, momentum=0.0, l2=0.5, clip=100.0)
        state = TrainState.create(toy_params([1.0, 2.0]), cfg)
        apply_update(state, toy_grad([2.0, 4.0]), frames=2, cfg=cfg)
        assert np.allclose(state.params['w'], [0.85, 1.7])

    def test_gradient_is_per_frame(self):
        cfg = TrainConfig(learning_rate=1.0, momentum=0.0, l2=0.0, clip=100.0)
        state = TrainState.create(toy_params([0.0]), cfg)
        apply_update(state, toy_grad([10.0]), frames=5, cfg=cfg)
        assert np.allclose(state.params['w'], [-2.0])

    def test_tiny_clip_bounds_the_step(self):
        cfg = TrainConfig(learning_rate=0.5, momentum=0.0, l2=1e-6, clip=1e-8)
        state = TrainState.create(toy_params([3.0, -4.0]), cfg)
        before = state.params['w'].copy()
        apply_update(state, toy_grad([1e3, -1e3]), frames=1, cfg=cfg)
        step = np.abs(state.params['w'] - before)
        assert np.all(step <= 0.5 * 1e-8 + 0.5 * 1e-6 * np.abs(before) + 1e-15)

    def test_no_frames(self):
        cfg = TrainConfig()
        state = TrainState.create(toy_params([0.0]), cfg)
        with pytest.raises(DataError):
            apply_update(state, toy_grad([1.0]), frames=0, cfg=cfg)


class TestClip:
    def test_small_norm_unchanged(self):
        assert np.allclose(clip(toy_grad([0.3, 0.4]), 1.0)['w'], [0.3, 0.4])

    def test_large_norm_scaled(self):
        assert np.allclose(clip(toy_grad([0.0, 4.0]), 1.0)['w'], [0.0, 1.0])

    def test_element_mode(self):
        assert np.allclose(clip(toy_grad([3.7, -0.2, -9.0]), 1.0, 'element')['w'], [1.0, -0.2, -1.0])

    def test_input_not_modified(self):
        grad = toy_grad([0.0, 4.0])
        clip(grad, 1.0)
        assert np.allclose(grad['w'], [0.0, 4.0])


class TestSchedule:
    def test_constant_while_improving(self):
        cfg = TrainConfig(learning_rate=0.5, patience=3)
        state = TrainState.create(toy_params([0.0]), cfg)
        for score in (5.0, 4.0, 3.0, 2.0, 1.0):
            assert schedule(state, score, cfg)
        assert state.lr == 0.5

    def test_decay_after_patience(self):
        cfg = TrainConfig(learning_rate=0.5, patience=3, lr_decay=0.25)
        state = TrainState.create(toy_params([0.0]), cfg)
        schedule(state, 1.0, cfg)
        for _ in range(3):
            assert not schedule(state, 1.0, cfg)
        assert state.lr == 0.125
        for _ in range(3):
            schedule(state, 1.0, cfg)
        assert state.lr == 0.03125
        assert state.num_decays == 2

    def test_keeps_best_params(self):
        cfg = TrainConfig(patience=3)
        state = TrainState.create(toy_params([1.0]), cfg)
        schedule(state, 2.0, cfg)
        state.params['w'] = np.array([7.0])
        schedule(state, 3.0, cfg)
        assert np.allclose(state.best_params['w'], [1.0])


class TestGradients:
    def test_batch_is_sum_of_utterances(self, tiny_params, tiny_dataset):
        batch = list(tiny_dataset)
        summed = batch_gradient(tiny_params, batch, smoothing=0.01)
        parts = [utterance_gradient(tiny_params, u, smoothing=0.01) for u in batch]
        for name in tiny_params:
            assert np.allclose(summed.grad[name], sum(p.grad[name] for p in parts))
        assert np.isclose(summed.loss, sum(p.loss for p in parts))
        assert summed.frames == tiny_dataset.total_frames

    def test_thread_pool_gives_identical_sum(self, tiny_params, tiny_dataset):
        batch = list(tiny_dataset)
        serial = batch_gradient(tiny_params, batch)
        with ThreadPoolExecutor(max_workers=3) as pool:
            threaded = batch_gradient(tiny_params, batch, pool=pool)
        for name in tiny_params:
            assert np.array_equal(serial.grad[name], threaded.grad[name])

    def test_smoothing_changes_error_signal(self, tiny_params, tiny_dataset):
        utt = tiny_dataset[0]
        plain = utterance_gradient(tiny_params, utt, 0.0)
        smoothed = utterance_gradient(tiny_params, utt, 0.05)
        assert not np.allclose(plain.grad['output.b'], smoothed.grad['output.b'])
        assert plain.loss == smoothed.loss

    def test_numerical_failure_is_logged_with_utterance(self, tiny_params, tiny_dataset, caplog):
        utt = tiny_dataset[1]
        utt.features = utt.features.copy()
        utt.features[0, 0] = np.inf
        project_logger = logging.getLogger('GraphemeCTC')
        project_logger.addHandler(caplog.handler)
        try:
            with pytest.raises(NumericalError, match="Utterance 'utt1'"):
                batch_gradient(tiny_params, [tiny_dataset[0], utt])
        finally:
            project_logger.removeHandler(caplog.handler)
        errors = [r for r in caplog.records if r.levelno == logging.ERROR]
        assert errors and "'utt1'" in errors[0].getMessage()


class TestEpochs:
    def test_zero_learning_rate_leaves_params(self, tiny_params, tiny_dataset):
        cfg = TrainConfig(learning_rate=0.0, batch_size=2, l2=1e-3)
        state = TrainState.create(tiny_params.copy(), cfg)
        train_epoch(state, tiny_dataset, cfg)
        assert np.array_equal(state.params.vector(), tiny_params.vector())
        assert state.history[-1]['updates'] == 2

    def test_deterministic_by_seed(self, tiny_params, tiny_dataset):
        cfg = TrainConfig(learning_rate=0.01, batch_size=2)
        a = TrainState.create(tiny_params.copy(), cfg, seed=4)
        b = TrainState.create(tiny_params.copy(), cfg, seed=4)
        train_epoch(a, tiny_dataset, cfg)
        train_epoch(b, tiny_dataset, cfg)
        assert np.array_equal(a.params.vector(), b.params.vector())

    def test_empty_dataset(self, tiny_params):
        cfg = TrainConfig()
        state = TrainState.create(tiny_params, cfg)
        with pytest.raises(DataError):
            train_epoch(state, dataset_from_arrays([], [], [], 'empty'), cfg)

    def test_train_returns_dev_best(self, tmp_path, tiny_params, tiny_dataset):
        cfg = TrainConfig(learning_rate=0.05, batch_size=2, max_epochs=3)
        state = train(tiny_dataset, None, tiny_params.copy(), cfg, run_dir=tmp_path, seed=1)
        assert state.epoch == 3
        assert np.isclose(evaluate(state.params, tiny_dataset), state.best_score)
        assert (tmp_path / 'best.ckpt').exists()
        assert len((tmp_path / 'train_log.jsonl').read_text().splitlines()) == 3

    def test_cer_metric_needs_scorer(self, tiny_params, tiny_dataset):
        cfg = TrainConfig(dev_metric='cer', max_epochs=1)
        with pytest.raises(ConfigError):
            train(tiny_dataset, None, tiny_params.copy(), cfg)

    def test_polish_scale_zero_leaves_params(self, tiny_params, tiny_dataset):
        cfg = TrainConfig(learning_rate=0.5, polish_lr_scale=0.0, polish_epochs=2)
        state = TrainState.create(tiny_params.copy(), cfg)
        polish(state, tiny_dataset, None, cfg)
        assert np.array_equal(state.params.vector(), tiny_params.vector())

    def test_polish_never_degrades_dev(self, tiny_params, tiny_dataset):
        cfg = TrainConfig(learning_rate=0.2, polish_lr_scale=1.0, polish_epochs=2, batch_size=1)
        start = evaluate(tiny_params, tiny_dataset)
        state = TrainState.create(tiny_params.copy(), cfg)
        polish(state, tiny_dataset, tiny_dataset, cfg)
        assert evaluate(state.params, tiny_dataset) <= start + 1e-12

    def test_posterior_floor(self, tiny_params, tiny_dataset):
        floor, mean = posterior_floor(tiny_params, tiny_dataset)
        assert np.isclose(mean.sum(), 1.0)
        assert floor == mean.min()


@pytest.mark.slow
def test_single_utterance_overfit(small_inv):
    """Repeated updates on one utterance drive its loss below 0.1 nats per frame."""
    from src.net import init_params
    rng = np.random.default_rng(0)
    target = encode('yes he has one', small_inv)
    feats = rng.normal(size=(3 * len(target), 6))
    data = dataset_from_arrays(['u'], [feats], [target], 'overfit')
    params = init_params(NetConfig(6, 48, 2, small_inv.size), seed=0)
    cfg = TrainConfig(learning_rate=0.05, momentum=0.9, batch_size=1, smoothing=0.0, clip=1.0)
    state = TrainState.create(params, cfg)
    checkpoints = []
    for update in range(1, 601):
        train_epoch(state, data, cfg)
        if update % 200 == 0:
            checkpoints.append(evaluate(state.params, data))
    assert checkpoints[0] > checkpoints[-1]
    assert checkpoints[-1] < 0.1

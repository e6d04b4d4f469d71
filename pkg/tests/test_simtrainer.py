"""Tests for the synthetic data generator, the toy trainer, and evaluation."""

from __future__ import annotations

import math

import numpy as np
import pytest

from missdiag import (
    CLASSIFICATION,
    REGRESSION,
    ConfigError,
    DimensionError,
    EmptyDatasetError,
    MaskPattern,
    PerfMetric,
    RateVector,
    SynthSpec,
    TrainConfig,
    ablation_table,
    all_patterns,
    apply_mask,
    evaluate_under_combination,
    forward,
    gen_synthetic,
    run_experiment,
    train_step,
)
from missdiag.simtrainer import (
    _acc2,
    _corr,
    _f1_weighted,
    _mae,
    _ua,
    _wa,
    dataset_loss,
    describe_run,
    init_model,
    loss_and_grads,
)

from oracles import fd_gradient


def small_spec(task: str = CLASSIFICATION, **overrides) -> SynthSpec:
    base = dict(
        task=task,
        dims=(5, 4),
        informativeness=(1.0, 1.0),
        n_train=64,
        n_valid=32,
        n_test=32,
        seed=100,
        n_classes=3,
    )
    base.update(overrides)
    return SynthSpec(**base)


def small_model(task: str = CLASSIFICATION, dims=(5, 4), hidden=6,
                n_classes=3, seed=0):
    return init_model(dims, hidden, task, n_classes, np.random.default_rng(seed))


class TestSynthSpec:
    def test_task_validated(self):
        with pytest.raises(ConfigError):
            small_spec(task="ranking")

    def test_dims_and_weights_must_align(self):
        with pytest.raises(ConfigError):
            small_spec(informativeness=(1.0,))

    def test_all_zero_informativeness_rejected(self):
        with pytest.raises(ConfigError):
            small_spec(informativeness=(0.0, 0.0))

    def test_negative_informativeness_rejected(self):
        with pytest.raises(ConfigError):
            small_spec(informativeness=(1.0, -0.5))

    def test_split_sizes_validated(self):
        with pytest.raises(ConfigError):
            small_spec(n_train=0)

    def test_single_modality_rejected(self):
        with pytest.raises(ConfigError):
            small_spec(dims=(5,), informativeness=(1.0,))

    def test_n_classes_validated(self):
        with pytest.raises(ConfigError):
            small_spec(n_classes=1)

    def test_negative_label_noise_rejected(self):
        with pytest.raises(ConfigError):
            small_spec(label_noise=-0.1)


class TestGenSynthetic:
    def test_deterministic(self):
        a = gen_synthetic(small_spec())
        b = gen_synthetic(small_spec())
        for fa, fb in zip(a.train.features, b.train.features):
            np.testing.assert_array_equal(fa, fb)
        np.testing.assert_array_equal(a.train.labels, b.train.labels)
        np.testing.assert_array_equal(a.test.labels, b.test.labels)

    def test_seed_changes_data(self):
        a = gen_synthetic(small_spec(seed=1))
        b = gen_synthetic(small_spec(seed=2))
        assert (a.train.features[0] != b.train.features[0]).any()

    def test_split_shapes(self):
        data = gen_synthetic(small_spec(n_train=50, n_valid=20, n_test=30))
        assert data.train.features[0].shape == (50, 5)
        assert data.train.features[1].shape == (50, 4)
        assert data.valid.n == 20 and data.test.n == 30
        assert data.train.labels.dtype == np.int64

    def test_splits_are_distinct(self):
        data = gen_synthetic(small_spec(n_train=32, n_valid=32, n_test=32))
        assert (data.train.features[0] != data.valid.features[0]).any()
        assert (data.valid.features[0] != data.test.features[0]).any()

    def test_classification_labels_balanced(self):
        # Class scores are exchangeable, so argmax labels are uniform.
        spec = small_spec(n_train=20_000, n_classes=4, label_noise=0.3)
        labels = gen_synthetic(spec).train.labels
        n = labels.shape[0]
        for c in range(4):
            count = int((labels == c).sum())
            sigma = math.sqrt(n * 0.25 * 0.75)
            assert abs(count - n * 0.25) < 4.5 * sigma

    def test_label_noise_perturbs_labels_only(self):
        clean = gen_synthetic(small_spec(task=REGRESSION, label_noise=0.0))
        noisy = gen_synthetic(small_spec(task=REGRESSION, label_noise=0.5))
        for fc, fn in zip(clean.train.features, noisy.train.features):
            np.testing.assert_array_equal(fc, fn)
        residual = noisy.train.labels - clean.train.labels
        assert residual.std() == pytest.approx(0.5, rel=0.5)

    def test_regression_labels_are_floats(self):
        data = gen_synthetic(small_spec(task=REGRESSION))
        assert data.train.labels.dtype == np.float64

    def test_narrow_modality_supported(self):
        # Feature width below the latent width uses unit-norm columns.
        spec = small_spec(dims=(2, 16), n_classes=8)
        data = gen_synthetic(spec)
        assert data.train.features[0].shape == (64, 2)


class TestForward:
    def test_output_shapes(self):
        model = small_model()
        data = gen_synthetic(small_spec())
        out = forward(model, data.test.features, MaskPattern.full(2))
        assert out.shape == (32, 3)
        reg = small_model(task=REGRESSION)
        out = forward(reg, data.test.features, MaskPattern.full(2))
        assert out.shape == (32,)

    def test_masking_equals_zero_imputation(self):
        model = small_model()
        data = gen_synthetic(small_spec())
        pattern = MaskPattern((1, 0))
        direct = forward(model, data.test.features, pattern)
        imputed = forward(
            model, apply_mask(data.test.features, pattern), MaskPattern.full(2)
        )
        np.testing.assert_array_equal(direct, imputed)

    def test_zeroed_encoder_is_inert(self):
        # With encoder 1 zeroed, masking modality 1 changes nothing.
        model = small_model()
        model.enc_W[1][:] = 0.0
        model.enc_b[1][:] = 0.0
        data = gen_synthetic(small_spec())
        full = forward(model, data.test.features, MaskPattern.full(2))
        without = forward(model, data.test.features, MaskPattern((1, 0)))
        np.testing.assert_allclose(full, without, atol=1e-15)

    def test_pattern_width_validated(self):
        model = small_model()
        data = gen_synthetic(small_spec())
        with pytest.raises(DimensionError):
            forward(model, data.test.features, MaskPattern((1, 0, 1)))

    def test_module_count(self):
        assert small_model().module_count == 3


class TestTrainStep:
    def _batch(self, n=8, task=CLASSIFICATION):
        data = gen_synthetic(small_spec(task=task, n_train=n))
        feats, labels = data.train.take(np.arange(n))
        return feats, labels

    def test_zero_learning_rate_leaves_parameters(self):
        model = small_model()
        before = [(name, arr.copy()) for name, arr in model.parameters()]
        feats, labels = self._batch()
        log = train_step(model, feats, np.ones((8, 2)), labels, learning_rate=0.0)
        for (_, old), (_, new) in zip(before, model.parameters()):
            np.testing.assert_array_equal(old, new)
        assert log.task_loss > 0.0
        assert all(v is not None for v in log.modality_losses)

    def test_update_is_plain_gradient_descent(self):
        model = small_model()
        feats, labels = self._batch()
        mask = np.ones((8, 2))
        reference = model.clone()
        _, grads = loss_and_grads(
            reference, feats, mask, labels, np.full(8, 1.0 / 8.0)
        )
        train_step(model, feats, mask, labels, learning_rate=0.1)
        for m in range(2):
            np.testing.assert_allclose(
                model.enc_W[m], reference.enc_W[m] - 0.1 * grads["enc_W"][m],
                atol=1e-15,
            )
        np.testing.assert_allclose(
            model.fus_W, reference.fus_W - 0.1 * grads["fus_W"], atol=1e-15
        )

    def test_absent_modality_yields_none_and_no_samples(self):
        model = small_model()
        feats, labels = self._batch()
        mask = np.ones((8, 2))
        mask[:, 1] = 0.0
        log = train_step(model, feats, mask, labels, learning_rate=0.01)
        assert log.modality_losses[1] is None
        assert all(s.modality != 1 for s in log.grad_samples)
        # modality 0 contributes one sample per module
        assert sum(s.modality == 0 for s in log.grad_samples) == 3

    def test_modality_loss_restricted_to_observed_rows(self):
        model = small_model()
        feats, labels = self._batch()
        mask = np.ones((8, 2))
        mask[:4, 1] = 0.0
        log = train_step(model, feats, mask, labels, learning_rate=0.0)
        assert log.modality_losses[1] is not None
        assert log.modality_losses[1] != pytest.approx(log.task_loss)

    def test_log_grads_flag_suppresses_samples(self):
        model = small_model()
        feats, labels = self._batch()
        log = train_step(model, feats, np.ones((8, 2)), labels,
                         learning_rate=0.01, log_grads=False)
        assert log.grad_samples == ()
        assert log.modality_losses[0] is not None

    def test_empty_batch_rejected(self):
        model = small_model()
        feats, labels = self._batch()
        with pytest.raises(EmptyDatasetError):
            train_step(model, [f[:0] for f in feats], np.ones((0, 2)),
                       labels[:0], learning_rate=0.1)


class TestGradients:
    def _check_model(self, task: str, seed: int, probes: int = 40):
        rng = np.random.default_rng(seed)
        model = small_model(task=task, seed=seed)
        # Zero-imputed rows would otherwise sit exactly on the rectifier
        # kink (u = 0), where the loss is not differentiable and central
        # differences measure half the one-sided slope. Nonzero biases
        # move every pre-activation off the kink.
        for m in range(2):
            model.enc_b[m][:] = rng.uniform(0.05, 0.25, size=model.enc_b[m].shape)
        data = gen_synthetic(small_spec(task=task, n_train=12, seed=seed))
        feats, labels = data.train.take(np.arange(12))
        mask = (rng.random((12, 2)) < 0.8).astype(np.float64)
        mask[:, 0] = np.maximum(mask[:, 0], 1.0 - mask[:, 1])
        for m in range(2):
            u = (feats[m] * mask[:, m : m + 1]) @ model.enc_W[m] + model.enc_b[m]
            assert np.abs(u).min() > 1e-3  # all probes are differentiable
        weights = rng.uniform(0.05, 0.3, size=12)
        _, grads = loss_and_grads(model, feats, mask, labels, weights)
        flat_grads = {
            "enc_W0": grads["enc_W"][0], "enc_W1": grads["enc_W"][1],
            "enc_b0": grads["enc_b"][0], "enc_b1": grads["enc_b"][1],
            "fus_W": grads["fus_W"], "fus_b": grads["fus_b"],
        }
        params = {
            "enc_W0": model.enc_W[0], "enc_W1": model.enc_W[1],
            "enc_b0": model.enc_b[0], "enc_b1": model.enc_b[1],
            "fus_W": model.fus_W, "fus_b": model.fus_b,
        }
        names = sorted(params)
        checked = 0
        for i in range(probes):
            name = names[i % len(names)]
            arr = params[name]
            index = tuple(int(rng.integers(s)) for s in arr.shape)

            def loss_at(values: np.ndarray, arr=arr) -> float:
                saved = arr.copy()
                arr[...] = values
                loss, _ = loss_and_grads(model, feats, mask, labels, weights)
                arr[...] = saved
                return loss

            numeric = fd_gradient(loss_at, arr, index, step=1e-5)
            analytic = float(flat_grads[name][index])
            scale = max(abs(numeric), abs(analytic), 1e-8)
            assert abs(numeric - analytic) / scale < 1e-4
            checked += 1
        assert checked == probes

    def test_classification_backprop_matches_finite_differences(self):
        self._check_model(CLASSIFICATION, seed=7)

    def test_regression_backprop_matches_finite_differences(self):
        self._check_model(REGRESSION, seed=8)


class TestMetrics:
    def test_classification_hand_case(self):
        y_true = np.array([0, 0, 1, 2])
        y_pred = np.array([0, 1, 1, 1])
        assert _wa(y_true, y_pred) == 0.5
        assert _ua(y_true, y_pred) == pytest.approx((0.5 + 1.0 + 0.0) / 3.0)
        # class F1: 2/3 for class 0 (p=1, r=1/2), 1/2 for class 1
        # (p=1/3, r=1), 0 for class 2; supports 2, 1, 1.
        expected = (2 / 4) * (2 / 3) + (1 / 4) * 0.5 + (1 / 4) * 0.0
        assert _f1_weighted(y_true, y_pred) == pytest.approx(expected)

    def test_perfect_prediction(self):
        y = np.array([2, 0, 1, 1])
        assert _ua(y, y) == 1.0
        assert _wa(y, y) == 1.0
        assert _f1_weighted(y, y) == pytest.approx(1.0)

    def test_ua_ignores_absent_classes(self):
        # Class 2 never occurs in y_true, so it has no recall term.
        y_true = np.array([0, 0, 1, 1])
        y_pred = np.array([0, 2, 1, 2])
        assert _ua(y_true, y_pred) == 0.5

    def test_regression_metrics(self):
        y_true = np.array([1.0, -1.0, 2.0, 0.0])
        y_pred = np.array([1.5, -1.0, 1.0, -1.0])
        assert _mae(y_true, y_pred) == pytest.approx(0.625)
        assert _corr(y_true, y_true) == pytest.approx(1.0)
        assert _corr(y_true, -y_true) == pytest.approx(-1.0)
        assert _corr(y_true, np.zeros(4)) == 0.0
        assert _acc2(y_true, y_pred) == 0.75  # zero counts as nonnegative

    def test_acc2_zero_is_nonnegative(self):
        assert _acc2(np.array([0.0]), np.array([0.0])) == 1.0
        assert _acc2(np.array([0.0]), np.array([-0.1])) == 0.0


class TestEvaluation:
    def test_metric_task_mismatch_rejected(self):
        model = small_model()
        data = gen_synthetic(small_spec())
        with pytest.raises(ConfigError):
            evaluate_under_combination(
                model, data.test, MaskPattern.full(2), PerfMetric.named("MAE")
            )

    def test_ablation_table_complete_and_consistent(self):
        model = small_model()
        data = gen_synthetic(small_spec())
        metric = PerfMetric.named("WA")
        table = ablation_table(model, data.test, metric)
        assert table.M == 2
        assert set(table.entries) == {MaskPattern((0, 1)), MaskPattern((1, 0))}
        direct = evaluate_under_combination(
            model, data.test, MaskPattern.full(2), metric
        )
        assert table.perf_full == direct

    def test_evaluation_is_clean_of_training_protocol(self):
        # Ablation scores depend only on (model, split, pattern).
        model = small_model()
        data = gen_synthetic(small_spec())
        metric = PerfMetric.named("UA")
        a = evaluate_under_combination(model, data.test, MaskPattern((0, 1)), metric)
        b = evaluate_under_combination(model, data.test, MaskPattern((0, 1)), metric)
        assert a == b


def quick_config(rates=(0.0, 0.0), **overrides) -> TrainConfig:
    base = dict(
        protocol=RateVector(("m0", "m1"), rates),
        epochs=4,
        batch_size=16,
        learning_rate=0.05,
        seed=9,
        hidden=6,
        mei_epoch_stride=2,
    )
    base.update(overrides)
    return TrainConfig(**base)


class TestRunExperiment:
    def test_protocol_width_must_match_data(self):
        spec = small_spec()
        config = quick_config(protocol=RateVector(("a", "b", "c"), (0.1, 0.1, 0.1)))
        with pytest.raises(DimensionError):
            run_experiment(spec, config)

    def test_deterministic_replay(self):
        spec = small_spec()
        config = quick_config(rates=(0.2, 0.4))
        a = run_experiment(spec, config)
        b = run_experiment(spec, config)
        np.testing.assert_array_equal(a.trace.values, b.trace.values)
        np.testing.assert_array_equal(
            a.mask_matrices[0].masks, b.mask_matrices[0].masks
        )
        assert [s.task_loss for s in a.steps] == [s.task_loss for s in b.steps]
        assert a.mli_result == b.mli_result
        assert a.config_hash == b.config_hash
        for (na, ra), (nb, rb) in zip(a.mei_results, b.mei_results):
            assert na == nb and ra.value == rb.value

    def test_step_and_table_bookkeeping(self):
        spec = small_spec(n_train=64)
        config = quick_config(epochs=4, batch_size=16, mei_epoch_stride=2)
        run = run_experiment(spec, config)
        assert len(run.steps) == 4 * 4
        assert [s.step for s in run.steps] == list(range(1, 17))
        # validation tables at epochs 2 and 4; one table per metric
        assert [epoch for epoch, _ in run.valid_tables] == [2, 4]
        assert len(run.test_tables) == 3
        assert {t.metric.name for t in run.test_tables} == {"UA", "WA", "F1"}
        # both index modes computed per metric
        assert len(run.mei_results) == 6

    def test_module_accounting(self):
        spec = small_spec()
        config = quick_config(rates=(0.3, 0.6), batch_size=4)
        run = run_experiment(spec, config)
        for log in run.steps:
            for m, loss in enumerate(log.modality_losses):
                samples = [s for s in log.grad_samples if s.modality == m]
                if loss is None:
                    assert samples == []
                else:
                    assert sorted(s.module for s in samples) == [0, 1, 2]

    def test_mask_matrix_fixed_across_epochs_by_default(self):
        run = run_experiment(small_spec(), quick_config(rates=(0.3, 0.3)))
        assert len(run.mask_matrices) == 1

    def test_mask_resampling_per_epoch(self):
        config = quick_config(rates=(0.3, 0.3), resample_masks_per_epoch=True)
        run = run_experiment(small_spec(), config)
        assert len(run.mask_matrices) == 4
        assert (run.mask_matrices[0].masks != run.mask_matrices[1].masks).any()

    def test_loss_decreases_without_masking(self):
        spec = small_spec(n_train=128)
        config = quick_config(epochs=6, batch_size=16, learning_rate=0.05)
        run = run_experiment(spec, config)
        first_epoch = [s.task_loss for s in run.steps[:8]]
        last_epoch = [s.task_loss for s in run.steps[-8:]]
        assert np.mean(last_epoch) < np.mean(first_epoch)

    def test_grad_log_stride_thins_trace(self):
        spec = small_spec(n_train=64)
        config = quick_config(grad_log_stride=2)
        run = run_experiment(spec, config)
        logged = {s.step for s in run.steps if s.grad_samples}
        assert logged == set(range(1, 17, 2))

    def test_uninformative_modality_scores_at_chance(self):
        # Modality 1 carries no label signal: an ablation that keeps
        # only modality 1 performs at chance level, while keeping only
        # modality 0 stays well above it.
        spec = small_spec(
            dims=(8, 8),
            informativeness=(1.0, 0.0),
            n_train=1200,
            n_test=2500,
            n_classes=4,
            seed=5,
        )
        config = quick_config(epochs=6, batch_size=32, learning_rate=0.1)
        run = run_experiment(spec, config)
        ua = next(t for t in run.test_tables if t.metric.name == "UA")
        only_informative = ua.score(MaskPattern((1, 0)))
        only_noise = ua.score(MaskPattern((0, 1)))
        assert abs(only_noise - 0.25) < 0.06
        assert only_informative > 0.45

    def test_exposure_counts_follow_marginals(self):
        # With batch size 4 a modality is absent from a step's batch
        # with probability marginal^4, so high-rate modalities produce
        # markedly fewer defined cells.
        rates = RateVector(("a", "b", "c"), (0.1, 0.2, 0.9))
        spec = small_spec(
            dims=(4, 4, 4), informativeness=(1.0, 1.0, 1.0), n_train=400
        )
        config = quick_config(protocol=rates, epochs=1, batch_size=4,
                              learning_rate=0.01)
        run = run_experiment(spec, config)
        from missdiag import marginal_missing_rate

        n_steps = len(run.steps)
        assert n_steps == 100
        undefined = [
            sum(log.modality_losses[m] is None for log in run.steps)
            for m in range(3)
        ]
        for m in range(3):
            p_gap = marginal_missing_rate(rates, m) ** 4
            sigma = math.sqrt(n_steps * p_gap * (1.0 - p_gap))
            assert abs(undefined[m] - n_steps * p_gap) < 4.5 * sigma + 1.0
        assert undefined[2] > undefined[0]

    def test_describe_run_is_stable(self):
        spec = small_spec()
        config = quick_config()
        assert describe_run(spec, config) == describe_run(spec, config)

    def test_dataset_loss_drops_after_training(self):
        spec = small_spec(n_train=128)
        data = gen_synthetic(spec)
        model = init_model(spec.dims, 6, spec.task, spec.n_classes,
                           np.random.default_rng(3))
        before = dataset_loss(model, data.train)
        for _ in range(5):
            feats, labels = data.train.take(np.arange(128))
            train_step(model, feats, np.ones((128, 2)), labels, learning_rate=0.2)
        assert dataset_loss(model, data.train) < before


class TestTrainConfig:
    def test_validation(self):
        with pytest.raises(ConfigError):
            quick_config(epochs=0)
        with pytest.raises(ConfigError):
            quick_config(learning_rate=0.0)
        with pytest.raises(ConfigError):
            quick_config(batch_size=0)
        with pytest.raises(ConfigError):
            quick_config(epsilon=0.0)

    def test_pattern_width_guard_via_all_patterns(self):
        # The ablation grid is capped; a >20-modality table is refused
        # long before 2^M evaluation could run.
        with pytest.raises(DimensionError):
            all_patterns(24)

# SPDX-FileCopyrightText: 2026 mimo-pilot-design contributors
# SPDX-License-Identifier: Apache-2.0
import os
from dataclasses import replace

import numpy as np
import pytest

import pilotlib.trainer as trainer
from pilotlib.core import STREAM_TEST
from pilotlib.core import STREAM_TRAIN
from pilotlib.core import Diagnostics
from pilotlib.core import DimensionError
from pilotlib.core import DivergenceError
from pilotlib.core import NonFiniteGradientError
from pilotlib.core import complex_normal
from pilotlib.core import make_rng
from pilotlib.mimo_model import SampleStream
from pilotlib.mimo_model import SystemConfig
from pilotlib.mimo_model import iid_covariances
from pilotlib.tape import Tape
from pilotlib.trainer import TrainConfig
from pilotlib.trainer import baseline_table
from pilotlib.trainer import build_joint_model
from pilotlib.trainer import empirical_loss
from pilotlib.trainer import evaluate
from pilotlib.trainer import heuristic_baselines
from pilotlib.trainer import resolve_system
from pilotlib.trainer import snr_sweep
from pilotlib.trainer import snr_to_noise
from pilotlib.trainer import tape_loss
from pilotlib.trainer import train
from pilotlib.trainer import train_step

SLOW = os.environ.get("PILOTGEN_SLOW_TESTS") == "1"


def tiny_system() -> SystemConfig:
    return SystemConfig(K=2, N=2, antennas_per_user=(1, 1), L=2, power_budgets=(1.0, 1.0))


def tiny_config(**kwargs) -> TrainConfig:
    defaults = dict(
        batch_size=100,
        train_samples=400,
        test_samples=200,
        eval_batch_size=100,
        epochs=2,
        hidden_layers=2,
        hidden_width=8,
        train_snr_db=10.0,
        seed=5,
    )
    defaults.update(kwargs)
    return TrainConfig(**defaults)


def zero_outputs(model) -> None:
    for net in model.estimator_nets:
        net.layers[-1].weight.data[:] = 0.0
        net.layers[-1].bias.data[:] = 0.0


class TestSnrModel:
    @pytest.mark.parametrize(
        "snr_db,power,L,expected",
        [(0.0, 1.0, 1, 1.0), (25.0, 1.0, 8, 1 / (10**2.5 * 8)), (10.0, 2.0, 4, 0.05)],
    )
    def test_snr_to_noise(self, snr_db, power, L, expected):
        assert snr_to_noise(snr_db, power, L) == pytest.approx(expected, rel=1e-12)

    @pytest.mark.parametrize("args", [(10.0, 1.0, 0), (np.inf, 1.0, 2), (10.0, -1.0, 2)])
    def test_snr_to_noise_invalid(self, args):
        with pytest.raises(ValueError):
            snr_to_noise(*args)

    def test_three_user_offsets(self):
        system = SystemConfig(K=3, N=4, antennas_per_user=(4, 4, 4), L=8, power_budgets=(1.0, 1.0, 1.0))
        resolved = resolve_system(system, TrainConfig(), 25.0)
        assert resolved.power_budgets == pytest.approx((10**0.3, 1.0, 10**-0.3))
        assert resolved.noise_variance == pytest.approx(1 / (10**2.5 * 8))

    def test_strict_budgets(self):
        system = SystemConfig(K=3, N=4, antennas_per_user=(4, 4, 4), L=8, power_budgets=(1.0, 1.0, 1.0))
        resolved = resolve_system(system, TrainConfig(strict_budgets=True), 15.0)
        assert resolved.power_budgets == (1.0, 1.0, 1.0)

    def test_offsets_length(self):
        with pytest.raises(DimensionError):
            resolve_system(tiny_system(), TrainConfig(snr_offsets_db=(1.0, 2.0, 3.0)))


class TestTrainConfig:
    @pytest.mark.parametrize(
        "kwargs",
        [
            dict(step_size=-1.0),
            dict(batch_size=0),
            dict(epochs=-1),
            dict(pilot_init="orthogonal"),
            dict(divergence_factor=1.0),
        ],
    )
    def test_invalid(self, kwargs):
        with pytest.raises(ValueError):
            TrainConfig(**kwargs)

    def test_as_dict_lists(self):
        data = TrainConfig(snr_offsets_db=(1, 0), sic_order=(1, 0)).as_dict()
        assert data["snr_offsets_db"] == [1.0, 0.0]
        assert data["sic_order"] == [1, 0]


class TestLoss:
    def test_zero_and_unit(self):
        g = complex_normal(make_rng(0), (3, 4))
        assert empirical_loss(g, g) == 0.0
        e1 = np.zeros((1, 4), dtype=complex)
        e1[0, 0] = 1.0
        assert empirical_loss(e1, np.zeros((1, 4))) == 1.0

    def test_hand_sum(self):
        rng = make_rng(1)
        g, g_hat = complex_normal(rng, (5, 3)), complex_normal(rng, (5, 3))
        expected = sum(sum(abs(a - b) ** 2 for a, b in zip(row, row_hat)) for row, row_hat in zip(g, g_hat)) / 5
        assert empirical_loss(g, g_hat) == pytest.approx(expected, rel=1e-12)

    def test_empty_batch(self):
        with pytest.raises(DimensionError):
            empirical_loss(np.zeros((0, 2)), np.zeros((0, 2)))

    def test_minibatch_consistency(self):
        system = tiny_system().with_noise(0.1)
        model = build_joint_model(system, tiny_config())
        g, z = next(iter(SampleStream(system, iid_covariances(system), 0, STREAM_TRAIN, 6, 6)))
        tape = Tape(enabled=False)
        batch = float(tape_loss(tape, model.forward(tape, g, z), g).data)
        single = [float(tape_loss(tape, model.forward(tape, g[b], z[b]), g[b]).data) for b in range(6)]
        assert batch == pytest.approx(np.mean(single), rel=1e-12)


class TestModel:
    def test_zero_nets_give_prior_energy(self):
        system = tiny_system().with_noise(0.1)
        model = build_joint_model(system, tiny_config())
        zero_outputs(model)
        stream = SampleStream(system, model.covariances, 0, STREAM_TEST, 10**5, 5000)
        assert evaluate(model, stream) == pytest.approx(system.N * system.M, rel=0.02)

    def test_evaluate_is_deterministic(self):
        system = tiny_system().with_noise(0.1)
        model = build_joint_model(system, tiny_config())
        stream = SampleStream(system, model.covariances, 0, STREAM_TEST, 300, 100)
        assert evaluate(model, stream) == evaluate(model, stream)

    def test_zero_step_keeps_parameters(self):
        system = tiny_system().with_noise(0.1)
        model = build_joint_model(system, tiny_config())
        before = model.state()
        for g, z in SampleStream(system, model.covariances, 0, STREAM_TRAIN, 300, 100):
            train_step(model, g, z, 0.0)
        after = model.state()
        for name, data in before.items():
            np.testing.assert_array_equal(after[name], data)

    def test_pilots_stay_feasible(self):
        system = tiny_system().with_noise(0.1)
        model = build_joint_model(system, tiny_config())
        for step, (g, z) in enumerate(SampleStream(system, model.covariances, 0, STREAM_TRAIN, 5000, 50)):
            train_step(model, g, z, 0.05, step)
            for net in model.pilot_nets:
                assert net.energy() <= net.power_budget

    def test_estimate_shape(self):
        system = tiny_system().with_noise(0.1)
        model = build_joint_model(system, tiny_config())
        y = complex_normal(make_rng(2), (7, system.N * system.L))
        assert model.estimate(y).shape == (7, system.N * system.M)


class TestTrain:
    def test_zero_epochs(self):
        cfg = tiny_config(epochs=0)
        report = train(tiny_system(), cfg)
        assert report.per_epoch_train_mse == [] and report.per_epoch_test_mse == []
        initial = build_joint_model(resolve_system(tiny_system(), cfg), cfg).pilots()
        for X, X0 in zip(report.final_pilots, initial):
            np.testing.assert_array_equal(X, X0)

    def test_zero_step_curves_are_flat(self):
        report = train(tiny_system(), tiny_config(step_size=0.0))
        assert report.per_epoch_test_mse == [report.initial_test_mse] * 2

    def test_deterministic(self):
        first = train(tiny_system(), tiny_config())
        second = train(tiny_system(), tiny_config())
        assert first.per_epoch_train_mse == second.per_epoch_train_mse
        assert first.per_epoch_test_mse == second.per_epoch_test_mse
        assert first.as_dict()["final_pilots"] == second.as_dict()["final_pilots"]

    def test_report(self):
        report = train(tiny_system(), tiny_config(fair_baseline=True))
        assert len(report.per_epoch_test_mse) == 2
        assert all(mse >= 0 for mse in report.per_epoch_train_mse + report.per_epoch_test_mse)
        assert report.baseline_mse == report.baseline_mse_fair
        assert report.designed_lmmse_mse is not None
        data = report.as_dict()
        assert data["metadata"]["batch_size"] == 100
        assert data["metadata"]["sic_order"] == [1, 2]

    def test_divergence_guard(self, monkeypatch):
        losses = iter([1.0] + [1.0] * 3 + [100.0] * 4)
        monkeypatch.setattr(trainer, "train_step", lambda *args: next(losses))
        with pytest.raises(DivergenceError) as e:
            train(tiny_system(), tiny_config(epochs=3))
        assert "epoch 2" in str(e.value)
        assert len(e.value.report.per_epoch_train_mse) == 2

    def test_non_finite_gradient_is_divergence(self, monkeypatch):
        def failing_step(model, g, z, step_size, step):
            raise NonFiniteGradientError(step, "dnn1.output.weight")

        monkeypatch.setattr(trainer, "train_step", failing_step)
        with pytest.raises(DivergenceError) as e:
            train(tiny_system(), tiny_config())
        assert e.value.report.per_epoch_train_mse == []


class TestBaselines:
    def test_table(self):
        system = SystemConfig(K=2, N=2, antennas_per_user=(2, 2), L=4, power_budgets=(1.0, 1.0))
        rows = baseline_table(system, tiny_config(), [5.0, 25.0], 20000)
        assert [(row.snr_db, row.normalized) for row in rows] == [(5.0, False), (5.0, True), (25.0, False), (25.0, True)]
        for row in rows:
            assert row.mse_monte_carlo == pytest.approx(row.mse_closed_form, rel=0.05)
        assert rows[2].mse_closed_form < rows[0].mse_closed_form

    def test_unsupported_shape(self):
        system = SystemConfig(K=1, N=2, antennas_per_user=(2,), L=3, power_budgets=(1.0,), noise_variance=0.1)
        diagnostics = Diagnostics(warn_to_stderr=False)
        stream = SampleStream(system, iid_covariances(system), 0, STREAM_TEST, 10, 10)
        assert heuristic_baselines(system, iid_covariances(system), stream, diagnostics) == (None, None)
        assert diagnostics.warnings[0].startswith("warning: no LMMSE baseline")


class TestSweep:
    def test_cross_snr(self):
        rows = snr_sweep(tiny_system(), tiny_config(cross_snr=True, epochs=1), [5.0, 25.0])
        assert [row.snr_db for row in rows] == [5.0, 25.0]
        for row in rows:
            assert row.gap == pytest.approx(row.mse_lmmse_fair - row.mse_proposed)
        # one shared model, so the higher SNR can only help the LMMSE with its pilots
        assert rows[1].mse_lmmse_designed < rows[0].mse_lmmse_designed

    def test_single_point_equals_train(self):
        cfg = tiny_config(epochs=1)
        (row,) = snr_sweep(tiny_system(), cfg, [10.0])
        report = train(tiny_system(), cfg)
        assert row.mse_proposed == report.per_epoch_test_mse[-1]

    def test_empty(self):
        with pytest.raises(ValueError):
            snr_sweep(tiny_system(), tiny_config(), [])


@pytest.mark.skipif(not SLOW, reason="set PILOTGEN_SLOW_TESTS=1 to run desk-scale training runs")
class TestDeskScale:
    def reference_setup(self):
        system = SystemConfig(K=3, N=4, antennas_per_user=(4, 4, 4), L=8, power_budgets=(1.0, 1.0, 1.0))
        cfg = TrainConfig(train_samples=10**5, test_samples=10**4, epochs=5, fair_baseline=True)
        return system, cfg

    def test_training_curve(self):
        system, cfg = self.reference_setup()
        report = train(system, cfg)
        curve = report.per_epoch_test_mse
        steps = list(zip(curve[:2], curve[1:3]))
        assert sum(later > earlier for earlier, later in steps) <= 1
        assert all(later <= 1.02 * earlier for earlier, later in steps)
        assert min(curve) < report.baseline_mse_fair
        assert curve[-1] <= report.initial_test_mse

    def test_sweep_trends(self):
        system, cfg = self.reference_setup()
        rows = snr_sweep(system, replace(cfg, epochs=3), [5.0, 15.0, 25.0])
        proposed = [row.mse_proposed for row in rows]
        gaps = [row.gap for row in rows]
        assert proposed[0] > proposed[1] > proposed[2]
        assert gaps[0] < gaps[1] < gaps[2]

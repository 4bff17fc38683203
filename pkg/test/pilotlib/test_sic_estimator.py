# SPDX-FileCopyrightText: 2026 mimo-pilot-design contributors
# SPDX-License-Identifier: Apache-2.0
import numpy as np
import pytest

from pilotlib.core import DimensionError
from pilotlib.core import complex_normal
from pilotlib.core import make_rng
from pilotlib.mimo_model import SystemConfig
from pilotlib.mimo_model import expand_pilot
from pilotlib.mimo_model import iid_covariances
from pilotlib.mimo_model import sample_channel
from pilotlib.mimo_model import simulate_reception
from pilotlib.pilot_tnn import init_pilot_nets
from pilotlib.sic_estimator import SIC_ORDER_INDEX
from pilotlib.sic_estimator import SIC_ORDER_SNR
from pilotlib.sic_estimator import EstimatorNet
from pilotlib.sic_estimator import dnn_estimate
from pilotlib.sic_estimator import estimate_all
from pilotlib.sic_estimator import estimator_input_gain
from pilotlib.sic_estimator import resolve_sic_order
from pilotlib.sic_estimator import run_sic
from pilotlib.sic_estimator import sic_input
from pilotlib.tape import IDENTITY
from pilotlib.tape import DenseLayer
from pilotlib.tape import Tape
from pilotlib.tape import backward
from pilotlib.tape import complex_constant
from pilotlib.trainer import TrainConfig
from pilotlib.trainer import build_joint_model

N, L = 2, 3


@pytest.fixture
def system():
    return SystemConfig(K=3, N=N, antennas_per_user=(1, 2, 1), L=L, power_budgets=(1.0, 2.0, 2.0))


@pytest.fixture
def nets(system):
    rng = make_rng(0, 4)
    return [
        EstimatorNet.create(k + 1, N, L, m, rng, hidden_layers=2, hidden_width=8)
        for k, m in enumerate(system.antennas_per_user)
    ]


class TestEstimatorNet:
    def test_shapes_and_names(self):
        net = EstimatorNet.create(2, 4, 8, 4, make_rng(0))
        assert net.input_width == 64
        assert net.output_width == 32
        assert net.hidden_layers == 5
        names = [p.name for p in net.parameters()]
        assert names[0] == "dnn2.hidden1.weight"
        assert names[-1] == "dnn2.output.bias"
        assert len(names) == 12

    def test_widths_must_chain(self):
        rng = make_rng(1)
        layers = [DenseLayer.create("a", 4, 3, IDENTITY, rng), DenseLayer.create("b", 5, 2, IDENTITY, rng)]
        with pytest.raises(DimensionError):
            EstimatorNet(1, layers)

    def test_output_must_be_affine(self):
        rng = make_rng(1)
        with pytest.raises(DimensionError):
            EstimatorNet(1, [DenseLayer.create("a", 4, 2, "relu", rng)])

    def test_estimate_shape(self, nets):
        y = complex_normal(make_rng(2), (7, N * L))
        h_hat = dnn_estimate(nets[1], y, Tape(enabled=False))
        assert h_hat.shape == (7, N * 2)

    def test_wrong_input(self, nets):
        with pytest.raises(DimensionError):
            dnn_estimate(nets[0], np.zeros(5, dtype=complex), Tape())

    def test_positively_homogeneous_without_biases(self, nets):
        y = complex_normal(make_rng(9), (6, N * L))
        tape = Tape(enabled=False)
        for net in nets:
            base = dnn_estimate(net, y, tape).numpy()
            for c in (0.25, 3.0):
                np.testing.assert_allclose(dnn_estimate(net, c * y, tape).numpy(), c * base, rtol=1e-12, atol=1e-12)

    def test_piecewise_linear(self, nets):
        rng = make_rng(10)
        net = nets[1]
        for layer in net.layers:
            layer.bias.data[:] = rng.standard_normal(layer.bias.shape)
        y = complex_normal(rng, (20, N * L))
        d = complex_normal(rng, (20, N * L))
        tape = Tape(enabled=False)
        # a step this small almost surely crosses no ReLU kink, so the second difference vanishes
        step = 1e-6
        f0, f1, f2 = (dnn_estimate(net, y + t * step * d, tape).numpy() for t in range(3))
        np.testing.assert_allclose(f2 - 2 * f1 + f0, 0.0, atol=1e-12)
        assert np.max(np.abs(f1 - f0)) > 1e-9

    def test_invalid_input_gain(self):
        layers = [DenseLayer.create("a", 4, 2, IDENTITY, make_rng(1))]
        for gain in (0.0, -1.0, np.inf):
            with pytest.raises(ValueError, match="input gain"):
                EstimatorNet(1, layers, gain)


class TestInputGain:
    def test_formula(self):
        system = SystemConfig(K=1, N=1, antennas_per_user=(1,), L=2, power_budgets=(2.0,), noise_variance=1.0)
        assert estimator_input_gain(system) == pytest.approx(1.0)
        system = SystemConfig(K=2, N=2, antennas_per_user=(1, 2), L=4, power_budgets=(6.0, 2.0), noise_variance=0.5)
        assert estimator_input_gain(system) == pytest.approx(np.sqrt(2.0 / 2.5))

    def test_scales_the_received_signal(self):
        rng = make_rng(11)
        layers = [DenseLayer.create("a", 2 * N * L, 2 * N, IDENTITY, rng)]
        scaled = EstimatorNet(1, layers, input_gain=2.0)
        plain = EstimatorNet(1, layers)
        y = complex_normal(rng, (4, N * L))
        tape = Tape(enabled=False)
        np.testing.assert_allclose(dnn_estimate(scaled, y, tape).numpy(), dnn_estimate(plain, 2.0 * y, tape).numpy())

    def test_joint_model_nets_carry_gain(self, system):
        system = system.with_noise(0.2)
        model = build_joint_model(system, TrainConfig(hidden_layers=1, hidden_width=4))
        for net in model.estimator_nets:
            assert net.input_gain == estimator_input_gain(system)

    def test_unit_variance_at_full_budget(self, system):
        system = system.with_noise(0.3)
        rng = make_rng(12)
        # constant-modulus pilots spend p_k / L per slot
        pilots = [
            np.sqrt(p / (m * L)) * np.exp(2j * np.pi * rng.random((m, L)))
            for m, p in zip(system.antennas_per_user, system.power_budgets)
        ]
        channel = sample_channel(system, iid_covariances(system), rng, 40000)
        y = simulate_reception(pilots, channel, rng, system).vector_form
        scaled = estimator_input_gain(system) * y
        assert np.mean(scaled.real**2) == pytest.approx(1.0, rel=0.03)
        assert np.mean(scaled.imag**2) == pytest.approx(1.0, rel=0.03)


class TestSicInput:
    def test_first_stage_is_received_signal(self):
        y = complex_normal(make_rng(3), (N * L,))
        np.testing.assert_array_equal(sic_input(y, [], [], Tape()).numpy(), y)

    def test_subtracts_reconstruction(self):
        rng = make_rng(4)
        y = complex_normal(rng, (N * L,))
        X1, X2 = complex_normal(rng, (1, L)), complex_normal(rng, (2, L))
        h1, h2 = complex_normal(rng, (N,)), complex_normal(rng, (2 * N,))
        tape = Tape(enabled=False)
        residual = sic_input(y, [X1, X2], [complex_constant(tape, h1), complex_constant(tape, h2)], tape)
        expected = y - expand_pilot(X1, N) @ h1 - expand_pilot(X2, N) @ h2
        np.testing.assert_allclose(residual.numpy(), expected, atol=1e-12)

    def test_missing_estimate(self):
        with pytest.raises(DimensionError, match="missing prior estimate"):
            sic_input(np.zeros(N * L, dtype=complex), [np.ones((1, L))], [], Tape())


class TestOrder:
    def test_strongest_first(self, system):
        assert resolve_sic_order(system, SIC_ORDER_SNR) == (1, 2, 0)
        assert resolve_sic_order(system, SIC_ORDER_INDEX) == (0, 1, 2)
        assert resolve_sic_order(system, [2, 0, 1]) == (2, 0, 1)

    @pytest.mark.parametrize("order", [[0, 0, 1], [0, 1]])
    def test_not_a_permutation(self, system, order):
        with pytest.raises(DimensionError):
            resolve_sic_order(system, order)

    def test_unknown_name(self, system):
        with pytest.raises(ValueError):
            resolve_sic_order(system, "random")


class TestChain:
    def test_residuals_follow_decoding_order(self, system, nets):
        pilots = init_pilot_nets(system, 0)
        y = complex_normal(make_rng(5), (4, N * L))
        tape = Tape(enabled=False)
        result = run_sic(nets, y, pilots, tape, order=(1, 2, 0))
        np.testing.assert_array_equal(result.residuals[1].numpy(), y)
        first = expand_pilot(pilots[1].pilot_matrix(), N)
        second = expand_pilot(pilots[2].pilot_matrix(), N)
        expected = y - result.estimates[1].numpy() @ first.T
        np.testing.assert_allclose(result.residuals[2].numpy(), expected, atol=1e-12)
        expected = expected - result.estimates[2].numpy() @ second.T
        np.testing.assert_allclose(result.residuals[0].numpy(), expected, atol=1e-12)

    def test_without_sic_every_dnn_sees_y(self, system, nets):
        pilots = init_pilot_nets(system, 0)
        y = complex_normal(make_rng(6), (N * L,))
        result = run_sic(nets, y, pilots, Tape(enabled=False), order=(1, 2, 0), use_sic=False)
        for residual in result.residuals:
            np.testing.assert_array_equal(residual.numpy(), y)

    def test_concatenated_in_user_order(self, system, nets):
        pilots = init_pilot_nets(system, 0)
        y = complex_normal(make_rng(7), (3, N * L))
        tape = Tape(enabled=False)
        result = run_sic(nets, y, pilots, tape, order=(2, 0, 1))
        g_hat = estimate_all(nets, y, pilots, tape, order=(2, 0, 1)).numpy()
        assert g_hat.shape == (3, N * 4)
        np.testing.assert_allclose(g_hat, np.concatenate([h.numpy() for h in result.estimates], axis=-1))

    def test_pilot_gradient_flows_through_cancellation(self, system, nets):
        pilots = init_pilot_nets(system, 0)
        y = complex_normal(make_rng(8), (5, N * L))

        def pilot_gradients(use_sic):
            tape = Tape()
            g_hat = estimate_all(nets, y, pilots, tape, order=(0, 1, 2), use_sic=use_sic)
            return backward(tape, loss=tape.add(tape.sum_squares(g_hat.re), tape.sum_squares(g_hat.im)))

        with_sic = pilot_gradients(True)
        # the last user is never cancelled, so only the first two pilots take part
        assert np.any(with_sic["pilot1.re"] != 0)
        assert np.any(with_sic["pilot2.im"] != 0)
        assert "pilot3.re" not in with_sic
        without_sic = pilot_gradients(False)
        assert not any(name.startswith("pilot") for name in without_sic)

    def test_mismatched_lengths(self, system, nets):
        with pytest.raises(DimensionError):
            run_sic(nets, np.zeros(N * L, dtype=complex), init_pilot_nets(system, 0)[:2], Tape())

    def test_early_stages_ignore_later_pilots(self, system, nets):
        rng = make_rng(13)
        pilots = [complex_normal(rng, (m, L)) for m in system.antennas_per_user]
        y = complex_normal(rng, (5, N * L))
        tape = Tape(enabled=False)
        reference = run_sic(nets, y, pilots, tape, order=(0, 1, 2)).estimates

        shuffled_last = pilots[:2] + [np.roll(pilots[2], 1, axis=1)]
        estimates = run_sic(nets, y, shuffled_last, tape, order=(0, 1, 2)).estimates
        for k in (0, 1, 2):
            np.testing.assert_array_equal(estimates[k].numpy(), reference[k].numpy())

        shuffled_later = [pilots[0]] + [np.roll(X, 1, axis=1) for X in pilots[1:]]
        estimates = run_sic(nets, y, shuffled_later, tape, order=(0, 1, 2)).estimates
        np.testing.assert_array_equal(estimates[0].numpy(), reference[0].numpy())
        np.testing.assert_array_equal(estimates[1].numpy(), reference[1].numpy())
        assert not np.allclose(estimates[2].numpy(), reference[2].numpy())

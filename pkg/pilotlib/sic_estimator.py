# SPDX-FileCopyrightText: 2026 mimo-pilot-design contributors
# SPDX-License-Identifier: Apache-2.0
#
# Channel estimator: one DNN per user, chained by successive interference cancellation. DNN_k sees
#
#   yhat_k = y - sum_{i before k} Xbar_i hhat_i
#
# where "before" follows the SIC order. The cancellation uses the live pilot parameters, so the
# gradient of the loss reaches the pilots through the cancellation path as well.
#
from dataclasses import dataclass
from dataclasses import field
from typing import List
from typing import Optional
from typing import Sequence
from typing import Tuple
from typing import Union

import numpy as np

from .core import DimensionError
from .mimo_model import SystemConfig
from .pilot_tnn import StructuredPilotNet
from .tape import IDENTITY
from .tape import RELU
from .tape import ComplexValue
from .tape import DenseLayer
from .tape import Parameter
from .tape import Tape
from .tape import complex_constant
from .tape import complex_kron_apply
from .tape import complex_sub
from .tape import forward_dense
from .tape import pack
from .tape import unpack

SIC_ORDER_SNR = "snr"
SIC_ORDER_INDEX = "index"

DEFAULT_HIDDEN_LAYERS = 5
DEFAULT_HIDDEN_WIDTH = 60

PilotLike = Union[StructuredPilotNet, np.ndarray]


class EstimatorNet:
    """
    DNN_k: hidden_layers ReLU layers followed by an affine output layer. Input is the packed residual
    (2NL reals), output the packed channel estimate (2 N M_k reals).
    The packed residual is multiplied by the fixed `input_gain` before the first layer.
    """

    def __init__(self, user: int, layers: Sequence[DenseLayer], input_gain: float = 1.0):
        if not layers:
            raise DimensionError(f"estimator of user {user} needs at least an output layer")
        for previous, layer in zip(layers, layers[1:]):
            if previous.fan_out != layer.fan_in:
                raise DimensionError(
                    f"estimator of user {user}: layer widths do not chain ({previous.fan_out} -> {layer.fan_in})"
                )
        if any(layer.activation != RELU for layer in layers[:-1]) or layers[-1].activation != IDENTITY:
            raise DimensionError(f"estimator of user {user}: hidden layers must be ReLU and the output affine")
        if not (np.isfinite(input_gain) and input_gain > 0.0):
            raise ValueError(f"estimator of user {user}: input gain must be positive, got {input_gain}")
        self.user = user
        self.layers = list(layers)
        self.input_gain = float(input_gain)

    @classmethod
    def create(
        cls,
        user: int,
        N: int,
        L: int,
        antennas: int,
        rng: np.random.Generator,
        hidden_layers: int = DEFAULT_HIDDEN_LAYERS,
        hidden_width: int = DEFAULT_HIDDEN_WIDTH,
        input_gain: float = 1.0,
    ) -> "EstimatorNet":
        widths = [2 * N * L] + [hidden_width] * hidden_layers
        layers = [
            DenseLayer.create(f"dnn{user}.hidden{v}", fan_in, fan_out, RELU, rng)
            for v, (fan_in, fan_out) in enumerate(zip(widths, widths[1:]), start=1)
        ]
        layers.append(DenseLayer.create(f"dnn{user}.output", widths[-1], 2 * N * antennas, IDENTITY, rng))
        return cls(user, layers, input_gain)

    @property
    def input_width(self) -> int:
        return self.layers[0].fan_in

    @property
    def output_width(self) -> int:
        return self.layers[-1].fan_out

    @property
    def hidden_layers(self) -> int:
        return len(self.layers) - 1

    def parameters(self) -> List[Parameter]:
        return [param for layer in self.layers for param in layer.parameters()]


def estimator_input_gain(system: SystemConfig) -> float:
    """
    Gain that gives the received signal unit variance per real component when every user spends its
    whole budget on unit-variance channels: E|y_i|^2 = sum_k p_k / L + sigma^2.
    """
    power = sum(system.power_budgets) / system.L + system.noise_variance
    return float(np.sqrt(2.0 / power))


@dataclass
class SicState:
    """Current residual and the estimates produced so far, in chain order."""

    residual: ComplexValue
    estimates: List[ComplexValue] = field(default_factory=list)


@dataclass
class SicResult:
    """Per-user estimates and the residual each DNN consumed, both indexed by user."""

    estimates: List[ComplexValue]
    residuals: List[ComplexValue]
    order: Tuple[int, ...]


def _as_complex(value: Union[ComplexValue, np.ndarray], tape: Tape) -> ComplexValue:
    return value if isinstance(value, ComplexValue) else complex_constant(tape, value)


def _contribution(pilot: PilotLike, h_hat: ComplexValue, tape: Tape) -> ComplexValue:
    if isinstance(pilot, StructuredPilotNet):
        return complex_kron_apply(tape, pilot.re, pilot.im, h_hat)
    pilot = np.asarray(pilot)
    return complex_kron_apply(tape, tape.constant(pilot.real), tape.constant(np.imag(pilot)), h_hat)


def dnn_estimate(net: EstimatorNet, y_hat_k: Union[ComplexValue, np.ndarray], tape: Tape) -> ComplexValue:
    y_hat_k = _as_complex(y_hat_k, tape)
    if 2 * y_hat_k.shape[-1] != net.input_width:
        raise DimensionError(
            f"estimator of user {net.user} expects {net.input_width // 2} complex inputs, got {y_hat_k.shape[-1]}"
        )
    out = pack(tape, y_hat_k)
    if net.input_gain != 1.0:
        out = tape.scale(out, net.input_gain)
    for layer in net.layers:
        out = forward_dense(layer, out, tape)
    return unpack(tape, out)


def sic_input(
    y: Union[ComplexValue, np.ndarray],
    pilots: Sequence[PilotLike],
    estimates: Sequence[ComplexValue],
    tape: Tape,
) -> ComplexValue:
    """
    Residual for the next stage: y minus the reconstructed contribution of every user already
    estimated. `pilots` are those users' pilots (pilot nets, or plain M_i x L matrices), aligned with
    `estimates`. With no prior estimates y is returned unchanged.
    """
    if len(pilots) != len(estimates):
        raise DimensionError(f"missing prior estimate: {len(pilots)} prior pilots but {len(estimates)} estimates")
    residual = _as_complex(y, tape)
    for pilot, h_hat in zip(pilots, estimates):
        residual = complex_sub(tape, residual, _contribution(pilot, _as_complex(h_hat, tape), tape))
    return residual


def resolve_sic_order(system: SystemConfig, order: Union[str, Sequence[int]] = SIC_ORDER_SNR) -> Tuple[int, ...]:
    """
    0-based user indices in decoding order. SIC_ORDER_SNR decodes the strongest user first (all users
    share one noise level, so the per-user SNR ranks like the power budget; ties keep index order).
    """
    if order == SIC_ORDER_INDEX:
        return tuple(range(system.K))
    if order == SIC_ORDER_SNR:
        return tuple(sorted(range(system.K), key=lambda k: (-system.power_budgets[k], k)))
    if isinstance(order, str):
        raise ValueError(f"unknown SIC order {order}, expected {SIC_ORDER_SNR}, {SIC_ORDER_INDEX} or a permutation")
    order = tuple(int(k) for k in order)
    if sorted(order) != list(range(system.K)):
        raise DimensionError(f"SIC order {order} is not a permutation of the {system.K} users")
    return order


def run_sic(
    nets: Sequence[EstimatorNet],
    y: Union[ComplexValue, np.ndarray],
    pilots: Sequence[PilotLike],
    tape: Tape,
    order: Optional[Sequence[int]] = None,
    use_sic: bool = True,
) -> SicResult:
    """
    Run the estimator chain. `order` lists 0-based users in decoding order (default: index order).
    With use_sic=False every DNN sees y itself.
    """
    if len(nets) != len(pilots):
        raise DimensionError(f"got {len(nets)} estimators but {len(pilots)} pilots")
    order = tuple(range(len(nets))) if order is None else tuple(order)
    if sorted(order) != list(range(len(nets))):
        raise DimensionError(f"SIC order {order} is not a permutation of the {len(nets)} users")

    y = _as_complex(y, tape)
    state = SicState(residual=y)
    estimates: List[Optional[ComplexValue]] = [None] * len(nets)
    residuals: List[Optional[ComplexValue]] = [None] * len(nets)
    done: List[int] = []
    for k in order:
        if use_sic and done:
            state.residual = complex_sub(tape, state.residual, _contribution(pilots[done[-1]], state.estimates[-1], tape))
        residuals[k] = state.residual if use_sic else y
        h_hat = dnn_estimate(nets[k], residuals[k], tape)
        state.estimates.append(h_hat)
        estimates[k] = h_hat
        done.append(k)
    return SicResult(estimates=estimates, residuals=residuals, order=order)


def estimate_all(
    nets: Sequence[EstimatorNet],
    y: Union[ComplexValue, np.ndarray],
    pilots: Sequence[PilotLike],
    tape: Tape,
    order: Optional[Sequence[int]] = None,
    use_sic: bool = True,
) -> ComplexValue:
    """g_DL = [hhat_1; ...; hhat_K], always in user order."""
    result = run_sic(nets, y, pilots, tape, order, use_sic)
    return ComplexValue(
        tape.concat([h.re for h in result.estimates]),
        tape.concat([h.im for h in result.estimates]),
    )

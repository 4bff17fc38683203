# SPDX-FileCopyrightText: 2026 mimo-pilot-design contributors
# SPDX-License-Identifier: Apache-2.0
#
# Pilot designer: user k's pilot transmission ytilde_k = Xbar_k h_k is a linear two-layer network whose
# NL x N*M_k weight matrix is Xbar_k = X_k^T (x) I_N. Only the M_k x L entries of X_k are stored, so the
# tied diagonals of Xbar_k are equal and all other entries are zero by construction.
#
from typing import List
from typing import Sequence
from typing import Union

import numpy as np

from .core import STREAM_PILOT_INIT
from .core import DimensionError
from .core import complex_normal
from .core import make_rng
from .lmmse import heuristic_pilots
from .mimo_model import SystemConfig
from .mimo_model import expand_pilot
from .mimo_model import pilot_energy
from .mimo_model import unvec
from .mimo_model import vec
from .tape import ComplexValue
from .tape import GradientMap
from .tape import Parameter
from .tape import Tape
from .tape import complex_add
from .tape import complex_constant
from .tape import complex_kron_apply

PILOT_INIT_RANDOM = "random"
PILOT_INIT_HEURISTIC = "heuristic"
PILOT_INIT_SCHEMES = (PILOT_INIT_RANDOM, PILOT_INIT_HEURISTIC)

# Random initial pilots start strictly inside the feasible ball.
INITIAL_ENERGY_FRACTION = 0.9


class StructuredPilotNet:
    """
    Pilot network of one user. The trainable values are the real and imaginary parts of X_k
    (parameters "pilot<k>.re" and "pilot<k>.im"); free_params is the complex vector vec(X_k).
    """

    def __init__(self, user: int, pilot: np.ndarray, power_budget: float, N: int):
        pilot = np.asarray(pilot)
        if pilot.ndim != 2:
            raise DimensionError(f"pilot of user {user} must be a matrix, got shape {pilot.shape}")
        self.user = user
        self.N = N
        self.power_budget = float(power_budget)
        self.re = Parameter(f"pilot{user}.re", pilot.real)
        self.im = Parameter(f"pilot{user}.im", np.imag(pilot))

    @property
    def antennas(self) -> int:
        return self.re.shape[0]

    @property
    def length(self) -> int:
        return self.re.shape[1]

    @property
    def free_params(self) -> np.ndarray:
        return vec(self.pilot_matrix())

    def set_free_params(self, free_params: np.ndarray) -> None:
        free_params = np.asarray(free_params)
        if free_params.shape != (self.antennas * self.length,):
            raise DimensionError(
                f"pilot {self.user} has {self.antennas * self.length} free entries, got {free_params.shape}"
            )
        X = unvec(free_params, self.antennas)
        self.re.data = np.array(X.real, dtype=np.float64)
        self.im.data = np.array(np.imag(X), dtype=np.float64)

    def pilot_matrix(self) -> np.ndarray:
        return self.re.data + 1j * self.im.data

    def materialize(self) -> np.ndarray:
        """Dense Xbar_k, NL x N*M_k."""
        return expand_pilot(self.pilot_matrix(), self.N)

    def energy(self) -> float:
        return pilot_energy(self.pilot_matrix())

    def parameters(self) -> List[Parameter]:
        return [self.re, self.im]

    def gradient(self, gradients: GradientMap) -> np.ndarray:
        """Complex gradient dJ/dRe + j dJ/dIm, arranged like free_params."""
        grad_re = gradients.get(self.re.name, np.zeros(self.re.shape))
        grad_im = gradients.get(self.im.name, np.zeros(self.im.shape))
        return vec(grad_re + 1j * grad_im)


def build_pilot_nets(system: SystemConfig, pilots: Sequence[np.ndarray]) -> List[StructuredPilotNet]:
    if len(pilots) != system.K:
        raise DimensionError(f"expected {system.K} pilots, got {len(pilots)}")
    nets = []
    for user, (X, m, p) in enumerate(zip(pilots, system.antennas_per_user, system.power_budgets), start=1):
        if np.shape(X) != (m, system.L):
            raise DimensionError(f"pilot of user {user} must be {m}x{system.L}, got {np.shape(X)}")
        nets.append(StructuredPilotNet(user, X, p, system.N))
    return nets


def init_pilot_nets(system: SystemConfig, seed: int, scheme: str = PILOT_INIT_RANDOM) -> List[StructuredPilotNet]:
    """
    Random: i.i.d. CN(0, 1) entries scaled to energy 0.9 p_k. Heuristic: the heuristic pilots scaled
    to the budget.
    """
    if scheme == PILOT_INIT_HEURISTIC:
        return build_pilot_nets(system, heuristic_pilots(system, normalize_to_budget=True))
    if scheme != PILOT_INIT_RANDOM:
        raise ValueError(f"unknown pilot initialization {scheme}, expected one of {PILOT_INIT_SCHEMES}")

    pilots = []
    for user, (m, p) in enumerate(zip(system.antennas_per_user, system.power_budgets), start=1):
        X = complex_normal(make_rng(seed, STREAM_PILOT_INIT, user), (m, system.L))
        X *= np.sqrt(INITIAL_ENERGY_FRACTION * p / pilot_energy(X))
        pilots.append(X)
    return build_pilot_nets(system, pilots)


def tnn_forward(net: StructuredPilotNet, h_k: Union[ComplexValue, np.ndarray], tape: Tape) -> ComplexValue:
    """ytilde_k = Xbar_k h_k, computed from the free entries only."""
    if not isinstance(h_k, ComplexValue):
        h_k = complex_constant(tape, h_k)
    if h_k.shape[-1] != net.N * net.antennas:
        raise DimensionError(f"channel of user {net.user} has length {h_k.shape[-1]}, expected {net.N * net.antennas}")
    return complex_kron_apply(tape, net.re, net.im, h_k)


def superpose(outputs: Sequence[ComplexValue], z: Union[ComplexValue, np.ndarray], tape: Tape) -> ComplexValue:
    """y = sum_k ytilde_k + z"""
    if not isinstance(z, ComplexValue):
        z = complex_constant(tape, z)
    y = z
    for output in outputs:
        if output.shape != z.shape:
            raise DimensionError(f"cannot superpose a signal of shape {output.shape} onto {z.shape}")
        y = complex_add(tape, output, y)
    return y


# Largest double below 1; multiplying by it lowers every nonzero entry by at least one ulp.
_SHRINK = np.nextafter(1.0, 0.0)


def _energy(v: np.ndarray) -> float:
    return float(np.sum(v.real**2 + v.imag**2))


def project_to_ball(u: np.ndarray, power_budget: float) -> np.ndarray:
    """
    Euclidean projection of u onto {v : ||v||^2 <= power_budget}. The result satisfies the constraint
    exactly in floating point: a rescaled vector that rounds to just above the budget is shrunk by one
    ulp at a time.
    """
    norm_sq = _energy(u)
    if norm_sq <= power_budget:
        return u
    v = np.sqrt(power_budget) * u / np.sqrt(norm_sq)
    while _energy(v) > power_budget:
        v = v * _SHRINK
    return v


def project_power(net: StructuredPilotNet, gradient: np.ndarray, step_size: float) -> StructuredPilotNet:
    """
    Projected gradient step on the free entries: u = xbar - step_size * gradient, then back onto the
    power ball ||xbar||^2 <= p_k.
    """
    gradient = np.asarray(gradient)
    if gradient.shape != net.free_params.shape:
        raise DimensionError(f"gradient of pilot {net.user} has shape {gradient.shape}, expected {net.free_params.shape}")
    u = net.free_params - step_size * gradient
    net.set_free_params(project_to_ball(u, net.power_budget))
    while net.energy() > net.power_budget:
        net.set_free_params(net.free_params * _SHRINK)
    return net


def read_designed_pilots(nets: Sequence[StructuredPilotNet]) -> List[np.ndarray]:
    return [net.pilot_matrix() for net in nets]

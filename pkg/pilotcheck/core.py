#!/usr/bin/env python
#
# Command line tool running the numerical property suite of pilotlib: vectorization identity, weight
# tying of the pilot networks, end-to-end gradients, power projection, LMMSE Monte-Carlo agreement,
# SIC cancellation and minibatch consistency.
#
# SPDX-FileCopyrightText: 2026 mimo-pilot-design contributors
# SPDX-License-Identifier: Apache-2.0
import argparse
from dataclasses import dataclass
from typing import Callable
from typing import Dict
from typing import List
from typing import Optional
from typing import Sequence

import numpy as np

from mimo_pilot import __version__
from pilotlib.core import STREAM_BASELINE
from pilotlib.core import complex_normal
from pilotlib.core import make_rng
from pilotlib.lmmse import build_lmmse
from pilotlib.lmmse import heuristic_pilots
from pilotlib.lmmse import lmmse_mse_closed_form
from pilotlib.lmmse import lmmse_mse_monte_carlo
from pilotlib.mimo_model import SampleStream
from pilotlib.mimo_model import SystemConfig
from pilotlib.mimo_model import expand_pilot
from pilotlib.mimo_model import iid_covariances
from pilotlib.mimo_model import pilot_energy
from pilotlib.mimo_model import split_stacked
from pilotlib.mimo_model import vec
from pilotlib.pilot_tnn import init_pilot_nets
from pilotlib.pilot_tnn import project_to_ball
from pilotlib.pilot_tnn import tnn_forward
from pilotlib.sic_estimator import SIC_ORDER_INDEX
from pilotlib.sic_estimator import sic_input
from pilotlib.tape import Parameter
from pilotlib.tape import Tape
from pilotlib.tape import backward
from pilotlib.tape import complex_constant
from pilotlib.trainer import JointModel
from pilotlib.trainer import TrainConfig
from pilotlib.trainer import build_joint_model
from pilotlib.trainer import empirical_loss
from pilotlib.trainer import snr_to_noise
from pilotlib.trainer import tape_loss

# Exit code of a failed verification (shared with pilotgen verify).
EXIT_VERIFY_FAILED = 4

DEFAULT_SAMPLES = 10**4

# Monte-Carlo tolerance at 10^5 samples; it grows with 1/sqrt(samples) below that.
REFERENCE_SAMPLES = 10**5
REFERENCE_TOLERANCE = 0.02

GRADIENT_TOLERANCE = 1e-4
PROJECTION_TOLERANCE = 1e-10
CANCELLATION_TOLERANCE = 1e-12

FAULTS = ("tying",)


def monte_carlo_tolerance(samples: int) -> float:
    """2 % at 10^5 samples, scaled by sqrt(10^5 / samples)."""
    return REFERENCE_TOLERANCE * np.sqrt(REFERENCE_SAMPLES / samples)


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str = ""

    def __str__(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{status} {self.name}" + (f": {self.detail}" if self.detail else "")


class BaseCheck(object):
    """
    Base class for all property checks
    """

    name = ""

    def __init__(self, seed: int = 0):
        self.seed = seed

    def check(self) -> CheckResult:
        """
        Abstract method; returns the outcome of the property
        """
        raise NotImplementedError("This method needs to be defined in the subclass")

    def run(self) -> CheckResult:
        try:
            return self.check()
        except Exception as e:
            return CheckResult(self.name, False, f"raised {type(e).__name__}: {e}")


class VectorizationCheck(BaseCheck):
    """
    vec(H X) == (X^T (x) I_N) vec(H) for random complex matrices.
    """

    name = "vectorization identity"

    def check(self) -> CheckResult:
        rng = make_rng(self.seed, 101)
        worst = 0.0
        for N, M, L in ((1, 1, 1), (2, 3, 4), (4, 4, 8), (5, 2, 3)):
            H = complex_normal(rng, (N, M))
            X = complex_normal(rng, (M, L))
            lhs = vec(H @ X)
            rhs = expand_pilot(X, N) @ vec(H)
            worst = max(worst, float(np.max(np.abs(lhs - rhs)) / max(1.0, float(np.max(np.abs(lhs))))))
        return CheckResult(self.name, worst <= 1e-12, f"max deviation {worst:.3e}")


class TyingCheck(BaseCheck):
    """
    The dense weight of every pilot network has N x N blocks equal to x_ml I_N (tied diagonals, zero
    elsewhere) and the structured forward pass equals the dense product.
    """

    name = "pilot weight tying"

    def __init__(self, seed: int = 0, inject_fault: bool = False):
        super().__init__(seed)
        self.inject_fault = inject_fault

    def check(self) -> CheckResult:
        system = SystemConfig(K=2, N=3, antennas_per_user=(2, 1), L=3, power_budgets=(1.0, 2.0))
        rng = make_rng(self.seed, 102)
        for net in init_pilot_nets(system, self.seed):
            W = net.materialize()
            if self.inject_fault:
                W[0, 1] += 1.0
            X = net.pilot_matrix()
            for l in range(net.length):
                for m in range(net.antennas):
                    block = W[l * net.N : (l + 1) * net.N, m * net.N : (m + 1) * net.N]
                    if not np.array_equal(block, X[m, l] * np.eye(net.N)):
                        return CheckResult(self.name, False, f"pilot {net.user}: block ({l + 1}, {m + 1}) is not x I_N")
            h = complex_normal(rng, (net.N * net.antennas,))
            structured = tnn_forward(net, h, Tape(enabled=False)).numpy()
            if not np.allclose(structured, W @ h, rtol=1e-12, atol=1e-12):
                return CheckResult(self.name, False, f"pilot {net.user}: structured forward differs from dense product")
        return CheckResult(self.name, True)


def finite_difference_gradients(
    loss: Callable[[], float], params: Sequence[Parameter], eps: float = 1e-6
) -> Dict[str, np.ndarray]:
    """Central differences of loss() with respect to every entry of every parameter."""
    gradients = {}
    for param in params:
        grad = np.zeros(param.shape)
        for index in np.ndindex(*param.shape):
            original = param.data[index]
            param.data[index] = original + eps
            upper = loss()
            param.data[index] = original - eps
            lower = loss()
            param.data[index] = original
            grad[index] = (upper - lower) / (2.0 * eps)
        gradients[param.name] = grad
    return gradients


def gradient_check_model(seed: int) -> JointModel:
    """K=2, N=2, one antenna per user, L=2, two hidden layers of width 8."""
    system = SystemConfig(K=2, N=2, antennas_per_user=(1, 1), L=2, power_budgets=(1.0, 1.0), noise_variance=0.1)
    cfg = TrainConfig(hidden_layers=2, hidden_width=8, seed=seed, sic_order=SIC_ORDER_INDEX)
    return build_joint_model(system, cfg)


class GradientCheck(BaseCheck):
    """
    Tape gradients of the loss with respect to all estimator weights and all pilot entries, through the
    cancellation paths, match central finite differences.
    """

    name = "end-to-end gradients"

    def check(self) -> CheckResult:
        model = gradient_check_model(self.seed)
        rng = make_rng(self.seed, 103)
        g = complex_normal(rng, (4, model.system.N * model.system.M))
        z = complex_normal(rng, (4, model.system.N * model.system.L), model.system.noise_variance)

        tape = Tape()
        analytic = backward(tape, loss=tape_loss(tape, model.forward(tape, g, z), g))

        def loss() -> float:
            evaluator = Tape(enabled=False)
            return float(tape_loss(evaluator, model.forward(evaluator, g, z), g).data)

        numeric = finite_difference_gradients(loss, model.parameters())
        worst_name, worst = "", 0.0
        for name, expected in numeric.items():
            scale = max(float(np.linalg.norm(expected)), float(np.linalg.norm(analytic[name])), 1e-12)
            error = float(np.linalg.norm(analytic[name] - expected)) / scale
            if error > worst:
                worst_name, worst = name, error
        return CheckResult(
            self.name, worst <= GRADIENT_TOLERANCE, f"max relative error {worst:.3e} ({worst_name or 'all zero'})"
        )


class ProjectionCheck(BaseCheck):
    """
    The power projection returns the closest point of the ball: ||v||^2 <= p with no tolerance, and at
    distance max(0, ||u|| - sqrt(p)) from u.
    """

    name = "power projection"

    def __init__(self, seed: int = 0, trials: int = 1000):
        super().__init__(seed)
        self.trials = trials

    def check(self) -> CheckResult:
        rng = make_rng(self.seed, 104)
        worst = 0.0
        violations = 0
        for _ in range(self.trials):
            u = complex_normal(rng, (int(rng.integers(1, 17)),), variance=float(rng.uniform(0.01, 4.0)))
            p = float(rng.uniform(0.0, 8.0))
            v = project_to_ball(u, p)
            violations += int(pilot_energy(v) > p)
            expected = max(0.0, float(np.linalg.norm(u)) - np.sqrt(p))
            worst = max(worst, abs(float(np.linalg.norm(u - v)) - expected))
        return CheckResult(
            self.name,
            violations == 0 and worst <= PROJECTION_TOLERANCE,
            f"{violations} infeasible results, max distance deviation {worst:.3e}",
        )


class LmmseCheck(BaseCheck):
    """
    Closed-form LMMSE error agrees with the Monte-Carlo error of D_bar y, for the heuristic pilots of
    K=3, N=4, M_k=4, L=8 at 5, 15 and 25 dB.
    """

    name = "LMMSE Monte-Carlo agreement"

    def __init__(self, seed: int = 0, samples: int = DEFAULT_SAMPLES):
        super().__init__(seed)
        self.samples = samples

    def check(self) -> CheckResult:
        tolerance = monte_carlo_tolerance(self.samples)
        worst = 0.0
        for snr_db in (5.0, 15.0, 25.0):
            system = SystemConfig(K=3, N=4, antennas_per_user=(4, 4, 4), L=8, power_budgets=(1.0, 1.0, 1.0))
            system = system.with_noise(snr_to_noise(snr_db, 1.0, system.L))
            covariances = iid_covariances(system)
            pilots = heuristic_pilots(system)
            C_z = system.noise_variance * np.eye(system.N * system.L)
            closed_form = lmmse_mse_closed_form(pilots, covariances, C_z)
            stream = SampleStream(system, covariances, self.seed, STREAM_BASELINE, self.samples, 2000)
            monte_carlo = lmmse_mse_monte_carlo(build_lmmse(pilots, covariances, C_z), stream)
            worst = max(worst, abs(monte_carlo - closed_form) / closed_form)
        return CheckResult(self.name, worst <= tolerance, f"max relative gap {worst:.3e} (tolerance {tolerance:.3e})")


class CancellationCheck(BaseCheck):
    """
    Noiseless reception with exact estimates of the earlier users leaves exactly Xbar_K h_K at the
    last stage.
    """

    name = "SIC cancellation"

    def __init__(self, seed: int = 0, instances: int = 100):
        super().__init__(seed)
        self.instances = instances

    def check(self) -> CheckResult:
        system = SystemConfig(K=3, N=4, antennas_per_user=(2, 1, 3), L=5, power_budgets=(2.0, 1.0, 0.5))
        rng = make_rng(self.seed, 105)
        nets = init_pilot_nets(system, self.seed)
        g = complex_normal(rng, (self.instances, system.N * system.M))
        per_user = split_stacked(system, g)
        tape = Tape(enabled=False)
        y = sum(tnn_forward(net, h, tape).numpy() for net, h in zip(nets, per_user))
        estimates = [complex_constant(tape, h) for h in per_user[:-1]]
        residual = sic_input(y, nets[:-1], estimates, tape).numpy()
        expected = per_user[-1] @ nets[-1].materialize().T
        error = np.linalg.norm(residual - expected, axis=1) / np.linalg.norm(expected, axis=1)
        worst = float(np.max(error))
        return CheckResult(self.name, worst <= CANCELLATION_TOLERANCE, f"max relative residual {worst:.3e}")


class MinibatchCheck(BaseCheck):
    """
    The loss of a batch equals the mean of the per-sample losses.
    """

    name = "minibatch consistency"

    def check(self) -> CheckResult:
        model = gradient_check_model(self.seed)
        rng = make_rng(self.seed, 106)
        g = complex_normal(rng, (7, model.system.N * model.system.M))
        z = complex_normal(rng, (7, model.system.N * model.system.L), model.system.noise_variance)
        tape = Tape(enabled=False)
        batch = float(tape_loss(tape, model.forward(tape, g, z), g).data)
        singles = [
            empirical_loss(g[b : b + 1], model.forward(tape, g[b : b + 1], z[b : b + 1]).numpy())
            for b in range(g.shape[0])
        ]
        gap = abs(batch - float(np.mean(singles))) / max(batch, 1e-300)
        return CheckResult(self.name, gap <= 1e-12, f"relative gap {gap:.3e}")


def build_checks(seed: int = 0, samples: int = DEFAULT_SAMPLES, inject_fault: Optional[str] = None) -> List[BaseCheck]:
    if inject_fault is not None and inject_fault not in FAULTS:
        raise ValueError(f"unknown fault {inject_fault}, expected one of {FAULTS}")
    return [
        VectorizationCheck(seed),
        TyingCheck(seed, inject_fault=inject_fault == "tying"),
        GradientCheck(seed),
        ProjectionCheck(seed),
        LmmseCheck(seed, samples),
        CancellationCheck(seed),
        MinibatchCheck(seed),
    ]


def run_checks(seed: int = 0, samples: int = DEFAULT_SAMPLES, inject_fault: Optional[str] = None) -> List[CheckResult]:
    return [check.run() for check in build_checks(seed, samples, inject_fault)]


def report(results: Sequence[CheckResult]) -> int:
    """Prints one line per property and returns the exit code."""
    for result in results:
        print(result)
    failed = [result.name for result in results if not result.passed]
    if failed:
        print(f"{len(failed)} properties failed: {', '.join(failed)}")
        return EXIT_VERIFY_FAILED
    print(f"{len(results)} properties have been successfully checked.")
    return 0


def add_arguments(parser: argparse.ArgumentParser) -> None:
    parser.add_argument(
        "--samples",
        type=int,
        default=DEFAULT_SAMPLES,
        help="Monte-Carlo samples of the LMMSE check; the tolerance scales with sqrt(100000 / samples)",
    )
    parser.add_argument("--seed", type=int, default=0, help="Seed of all random draws")
    parser.add_argument("--inject-fault", choices=FAULTS, default=None, help=argparse.SUPPRESS)


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = argparse.ArgumentParser(description=f"pilotcheck v{__version__} - numerical property checks")
    add_arguments(parser)
    args = parser.parse_args(argv)
    if args.samples < 1:
        parser.error("--samples must be positive")
    return report(run_checks(args.seed, args.samples, args.inject_fault))

# SPDX-FileCopyrightText: 2026 mimo-pilot-design contributors
# SPDX-License-Identifier: Apache-2.0
#
# Joint offline training of the pilot networks and the SIC estimator chain.
#
# Every minibatch: sample channels and noise, transmit through the pilot networks, superpose, run
# the estimator chain, take the empirical MSE
#
#   J = 1/B sum_b ||g_b - g_DL,b||^2
#
# and back-propagate through the whole graph. Estimator weights take a plain SGD step, pilot entries
# take a projected gradient step onto their power ball.
#
import time
from dataclasses import asdict
from dataclasses import dataclass
from dataclasses import field
from dataclasses import replace
from typing import Dict
from typing import Iterable
from typing import List
from typing import Optional
from typing import Sequence
from typing import Tuple
from typing import Union

import numpy as np

from mimo_pilot import __version__

from .core import QUIET
from .core import STREAM_BASELINE
from .core import STREAM_DNN_INIT
from .core import STREAM_TEST
from .core import STREAM_TRAIN
from .core import DimensionError
from .core import Diagnostics
from .core import DivergenceError
from .core import NonFiniteGradientError
from .core import SingularMatrixError
from .core import UnsupportedPilotShapeError
from .core import db_to_linear
from .core import make_rng
from .lmmse import build_lmmse
from .lmmse import heuristic_pilots
from .lmmse import lmmse_mse_closed_form
from .lmmse import lmmse_mse_estimator_form
from .lmmse import lmmse_mse_monte_carlo
from .mimo_model import SampleStream
from .mimo_model import SystemConfig
from .mimo_model import iid_covariances
from .mimo_model import split_stacked
from .pilot_tnn import PILOT_INIT_RANDOM
from .pilot_tnn import PILOT_INIT_SCHEMES
from .pilot_tnn import StructuredPilotNet
from .pilot_tnn import init_pilot_nets
from .pilot_tnn import project_power
from .pilot_tnn import read_designed_pilots
from .pilot_tnn import superpose
from .pilot_tnn import tnn_forward
from .sic_estimator import DEFAULT_HIDDEN_LAYERS
from .sic_estimator import DEFAULT_HIDDEN_WIDTH
from .sic_estimator import SIC_ORDER_SNR
from .sic_estimator import EstimatorNet
from .sic_estimator import estimator_input_gain
from .sic_estimator import estimate_all
from .sic_estimator import resolve_sic_order
from .tape import ComplexValue
from .tape import Parameter
from .tape import Tape
from .tape import Value
from .tape import backward
from .tape import complex_constant
from .tape import complex_sub
from .tape import sgd_step

# Per-user SNR offsets used for three users when none are configured.
DEFAULT_THREE_USER_OFFSETS_DB = (3.0, 0.0, -3.0)


@dataclass(frozen=True)
class TrainConfig:
    step_size: float = 0.001
    batch_size: int = 200
    train_samples: int = 10**6
    test_samples: int = 10**5
    epochs: int = 20
    train_snr_db: float = 25.0
    snr_offsets_db: Optional[Tuple[float, ...]] = None
    hidden_layers: int = DEFAULT_HIDDEN_LAYERS
    hidden_width: int = DEFAULT_HIDDEN_WIDTH
    pilot_init: str = PILOT_INIT_RANDOM
    use_sic: bool = True
    sic_order: Union[str, Tuple[int, ...]] = SIC_ORDER_SNR
    divergence_factor: float = 10.0
    eval_batch_size: int = 2000
    seed: int = 0
    strict_budgets: bool = False
    fair_baseline: bool = False
    cross_snr: bool = False

    def __post_init__(self) -> None:
        if self.snr_offsets_db is not None:
            object.__setattr__(self, "snr_offsets_db", tuple(float(o) for o in self.snr_offsets_db))
        if not isinstance(self.sic_order, str):
            object.__setattr__(self, "sic_order", tuple(int(k) for k in self.sic_order))
        if not (np.isfinite(self.step_size) and self.step_size >= 0):
            raise ValueError(f"step_size must be finite and nonnegative, got {self.step_size}")
        for name in ("batch_size", "train_samples", "test_samples", "hidden_width", "eval_batch_size"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        for name in ("epochs", "hidden_layers"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative, got {getattr(self, name)}")
        if self.pilot_init not in PILOT_INIT_SCHEMES:
            raise ValueError(f"unknown pilot initialization {self.pilot_init}, expected one of {PILOT_INIT_SCHEMES}")
        if self.divergence_factor <= 1.0:
            raise ValueError(f"divergence_factor must exceed 1, got {self.divergence_factor}")

    def offsets(self, K: int) -> Tuple[float, ...]:
        if self.snr_offsets_db is None:
            return DEFAULT_THREE_USER_OFFSETS_DB if K == 3 else (0.0,) * K
        if len(self.snr_offsets_db) != K:
            raise DimensionError(f"snr_offsets_db has {len(self.snr_offsets_db)} entries, expected K={K}")
        return self.snr_offsets_db

    def as_dict(self) -> dict:
        data = asdict(self)
        for key in ("snr_offsets_db", "sic_order"):
            if isinstance(data[key], tuple):
                data[key] = list(data[key])
        return data


def snr_to_noise(snr_db: float, power: float, L: int) -> float:
    """sigma^2 = p / (rho L) with rho = 10^(snr_db / 10)."""
    if L <= 0:
        raise ValueError(f"pilot length must be positive, got {L}")
    rho = db_to_linear(snr_db)
    if not (np.isfinite(rho) and rho > 0.0):
        raise ValueError(f"SNR of {snr_db} dB is not a positive finite ratio")
    if not (np.isfinite(power) and power > 0.0):
        raise ValueError(f"power must be positive, got {power}")
    return power / (rho * L)


def resolve_system(system: SystemConfig, cfg: TrainConfig, snr_db: Optional[float] = None) -> SystemConfig:
    """
    Apply the SNR model to the configured (base) system. One noise level is shared by all users,
    fixed so that a user with the mean base budget sees `snr_db`. Unless strict_budgets is set, user k's
    budget is scaled by its SNR offset so that it sees snr_db + offset_k.
    """
    snr_db = cfg.train_snr_db if snr_db is None else snr_db
    noise = snr_to_noise(snr_db, float(np.mean(system.power_budgets)), system.L)
    budgets = system.power_budgets
    if not cfg.strict_budgets:
        budgets = [p * db_to_linear(offset) for p, offset in zip(budgets, cfg.offsets(system.K))]
    return system.with_budgets(budgets).with_noise(noise)


def empirical_loss(g: np.ndarray, g_hat: np.ndarray) -> float:
    """Mean over the batch of ||g - g_hat||^2."""
    g = np.atleast_2d(g)
    g_hat = np.atleast_2d(g_hat)
    if g.shape != g_hat.shape:
        raise DimensionError(f"estimate has shape {g_hat.shape}, channel {g.shape}")
    if g.shape[0] == 0:
        raise DimensionError("empirical loss of an empty batch")
    error = g - g_hat
    return float(np.sum(error.real**2 + error.imag**2) / g.shape[0])


def tape_loss(tape: Tape, g_hat: ComplexValue, g: np.ndarray) -> Value:
    """empirical_loss() recorded on the tape."""
    g = np.asarray(g)
    if g.shape != g_hat.shape:
        raise DimensionError(f"estimate has shape {g_hat.shape}, channel {g.shape}")
    batch = g.shape[0] if g.ndim == 2 else 1
    if batch == 0:
        raise DimensionError("empirical loss of an empty batch")
    error = complex_sub(tape, g_hat, complex_constant(tape, g))
    total = tape.add(tape.sum_squares(error.re), tape.sum_squares(error.im))
    return tape.scale(total, 1.0 / batch)


@dataclass
class JointModel:
    """Pilot networks and estimator chain of one resolved system."""

    system: SystemConfig
    covariances: List[np.ndarray]
    pilot_nets: List[StructuredPilotNet]
    estimator_nets: List[EstimatorNet]
    sic_order: Tuple[int, ...]
    use_sic: bool = True

    def pilot_parameters(self) -> List[Parameter]:
        return [param for net in self.pilot_nets for param in net.parameters()]

    def estimator_parameters(self) -> List[Parameter]:
        return [param for net in self.estimator_nets for param in net.parameters()]

    def parameters(self) -> List[Parameter]:
        return self.pilot_parameters() + self.estimator_parameters()

    def pilots(self) -> List[np.ndarray]:
        return read_designed_pilots(self.pilot_nets)

    def forward(self, tape: Tape, g: np.ndarray, z: np.ndarray) -> ComplexValue:
        outputs = [tnn_forward(net, h, tape) for net, h in zip(self.pilot_nets, split_stacked(self.system, g))]
        y = superpose(outputs, z, tape)
        return estimate_all(self.estimator_nets, y, self.pilot_nets, tape, self.sic_order, self.use_sic)

    def estimate(self, y: np.ndarray) -> np.ndarray:
        """Online estimation of g from received signals, no recording."""
        tape = Tape(enabled=False)
        return estimate_all(self.estimator_nets, y, self.pilot_nets, tape, self.sic_order, self.use_sic).numpy()

    def state(self) -> Dict[str, np.ndarray]:
        return {param.name: param.data.copy() for param in self.parameters()}

    def with_system(self, system: SystemConfig) -> "JointModel":
        """Same networks, different noise level (used for cross-SNR evaluation)."""
        return replace(self, system=system)


def build_joint_model(
    system: SystemConfig, cfg: TrainConfig, covariances: Optional[Sequence[np.ndarray]] = None
) -> JointModel:
    """Initial model for an already resolved system. Seeds are derived from cfg.seed."""
    gain = estimator_input_gain(system)
    estimator_nets = [
        EstimatorNet.create(
            user,
            system.N,
            system.L,
            m,
            make_rng(cfg.seed, STREAM_DNN_INIT, user),
            hidden_layers=cfg.hidden_layers,
            hidden_width=cfg.hidden_width,
            input_gain=gain,
        )
        for user, m in enumerate(system.antennas_per_user, start=1)
    ]
    return JointModel(
        system=system,
        covariances=list(covariances) if covariances is not None else iid_covariances(system),
        pilot_nets=init_pilot_nets(system, cfg.seed, cfg.pilot_init),
        estimator_nets=estimator_nets,
        sic_order=resolve_sic_order(system, cfg.sic_order),
        use_sic=cfg.use_sic,
    )


def train_step(model: JointModel, g: np.ndarray, z: np.ndarray, step_size: float, step: int = 0) -> float:
    """One synchronous update on a minibatch. Returns the loss before the update."""
    tape = Tape()
    loss = tape_loss(tape, model.forward(tape, g, z), g)
    gradients = backward(tape, loss=loss)

    pilot_gradients = []
    for net in model.pilot_nets:
        gradient = net.gradient(gradients)
        if not np.all(np.isfinite(gradient)):
            raise NonFiniteGradientError(step, net.re.name)
        pilot_gradients.append(gradient)

    sgd_step(model.estimator_parameters(), gradients, step_size, step)
    for net, gradient in zip(model.pilot_nets, pilot_gradients):
        project_power(net, gradient, step_size)
    return float(loss.data)


def evaluate(model: JointModel, samples: Iterable[Tuple[np.ndarray, np.ndarray]]) -> float:
    """Test MSE of the frozen model over (g, z) batches."""
    total = 0.0
    count = 0
    for g, z in samples:
        tape = Tape(enabled=False)
        error = model.forward(tape, g, z).numpy() - g
        total += float(np.sum(error.real**2 + error.imag**2))
        count += g.shape[0]
    if count == 0:
        raise DimensionError("evaluation needs at least one sample")
    return total / count


def lmmse_on_stream(
    system: SystemConfig, covariances: Sequence[np.ndarray], pilots: Sequence[np.ndarray], samples: SampleStream
) -> float:
    """Monte-Carlo MSE of the LMMSE estimator for the given pilots."""
    C_z = system.noise_variance * np.eye(system.N * system.L)
    return lmmse_mse_monte_carlo(build_lmmse(pilots, covariances, C_z), samples)


def heuristic_baselines(
    system: SystemConfig,
    covariances: Sequence[np.ndarray],
    samples: SampleStream,
    diagnostics: Diagnostics = QUIET,
) -> Tuple[Optional[float], Optional[float]]:
    """(literal, budget-fair) LMMSE MSE of the heuristic pilots, or (None, None) for unsupported shapes."""
    try:
        literal = heuristic_pilots(system)
        fair = heuristic_pilots(system, normalize_to_budget=True)
    except UnsupportedPilotShapeError as e:
        diagnostics.warn(f"no LMMSE baseline: {e}")
        return None, None
    return lmmse_on_stream(system, covariances, literal, samples), lmmse_on_stream(system, covariances, fair, samples)


@dataclass
class BaselineRow:
    snr_db: float
    mse_closed_form: float
    mse_monte_carlo: float
    normalized: bool
    samples: int


def baseline_table(
    system: SystemConfig,
    cfg: TrainConfig,
    snr_list_db: Sequence[float],
    samples: int,
    covariances: Optional[Sequence[np.ndarray]] = None,
) -> List[BaselineRow]:
    """
    LMMSE with the heuristic pilots at every SNR, as written and normalized to the budget. The closed
    form falls back to tr(C_h) - tr(D_bar S C_h) when a covariance is singular.
    """
    rows = []
    for snr_db in snr_list_db:
        resolved = resolve_system(system, cfg, snr_db)
        covs = list(covariances) if covariances is not None else iid_covariances(resolved)
        stream = SampleStream(resolved, covs, cfg.seed, STREAM_BASELINE, samples, cfg.eval_batch_size)
        C_z = resolved.noise_variance * np.eye(resolved.N * resolved.L)
        for normalized in (False, True):
            pilots = heuristic_pilots(resolved, normalize_to_budget=normalized)
            est = build_lmmse(pilots, covs, C_z)
            try:
                closed_form = lmmse_mse_closed_form(pilots, covs, C_z)
            except SingularMatrixError:
                closed_form = lmmse_mse_estimator_form(est)
            rows.append(
                BaselineRow(
                    snr_db=float(snr_db),
                    mse_closed_form=closed_form,
                    mse_monte_carlo=lmmse_mse_monte_carlo(est, stream),
                    normalized=normalized,
                    samples=samples,
                )
            )
    return rows


@dataclass
class TrainReport:
    per_epoch_train_mse: List[float] = field(default_factory=list)
    per_epoch_test_mse: List[float] = field(default_factory=list)
    final_pilots: List[np.ndarray] = field(default_factory=list)
    baseline_mse: Optional[float] = None
    baseline_mse_literal: Optional[float] = None
    baseline_mse_fair: Optional[float] = None
    designed_lmmse_mse: Optional[float] = None
    initial_test_mse: Optional[float] = None
    wall_time_s: float = 0.0
    metadata: dict = field(default_factory=dict)
    model: Optional[JointModel] = field(default=None, repr=False)

    def as_dict(self) -> dict:
        return {
            "metadata": self.metadata,
            "per_epoch_train_mse": list(self.per_epoch_train_mse),
            "per_epoch_test_mse": list(self.per_epoch_test_mse),
            "initial_test_mse": self.initial_test_mse,
            "baseline_mse": self.baseline_mse,
            "baseline_mse_literal": self.baseline_mse_literal,
            "baseline_mse_fair": self.baseline_mse_fair,
            "designed_lmmse_mse": self.designed_lmmse_mse,
            "final_pilots": [{"re": X.real.tolist(), "im": np.imag(X).tolist()} for X in self.final_pilots],
            "wall_time_s": self.wall_time_s,
        }


def _metadata(model: JointModel, cfg: TrainConfig) -> dict:
    return {
        "version": __version__,
        "seed": cfg.seed,
        "batch_size": cfg.batch_size,
        "step_size": cfg.step_size,
        "pilot_init": cfg.pilot_init,
        "use_sic": cfg.use_sic,
        "sic_order": [k + 1 for k in model.sic_order],
        "snr_mode": "strict_budgets" if cfg.strict_budgets else "offsets",
        "train_snr_db": cfg.train_snr_db,
        "noise_variance": model.system.noise_variance,
        "power_budgets": list(model.system.power_budgets),
        "estimator_input_gain": model.estimator_nets[0].input_gain,
    }


def train(
    system: SystemConfig,
    cfg: TrainConfig,
    covariances: Optional[Sequence[np.ndarray]] = None,
    diagnostics: Diagnostics = QUIET,
    model: Optional[JointModel] = None,
) -> TrainReport:
    """
    Train from scratch (or continue `model`) on the base `system`, which is resolved with the SNR model
    first. Deterministic for a given (system, cfg).
    """
    start = time.perf_counter()
    resolved = resolve_system(system, cfg)
    covariances = list(covariances) if covariances is not None else iid_covariances(resolved)
    if model is None:
        model = build_joint_model(resolved, cfg, covariances)

    train_stream = SampleStream(resolved, covariances, cfg.seed, STREAM_TRAIN, cfg.train_samples, cfg.batch_size)
    test_stream = SampleStream(resolved, covariances, cfg.seed, STREAM_TEST, cfg.test_samples, cfg.eval_batch_size)

    report = TrainReport(metadata=_metadata(model, cfg), model=model)
    report.initial_test_mse = evaluate(model, test_stream)
    report.baseline_mse_literal, report.baseline_mse_fair = heuristic_baselines(
        resolved, covariances, test_stream, diagnostics
    )
    report.baseline_mse = report.baseline_mse_fair if cfg.fair_baseline else report.baseline_mse_literal
    diagnostics.info(f"initial test MSE {report.initial_test_mse:.6g}")

    def finish() -> TrainReport:
        report.final_pilots = model.pilots()
        report.wall_time_s = time.perf_counter() - start
        return report

    initial_loss = None
    step = 0
    for epoch in range(1, cfg.epochs + 1):
        total = 0.0
        count = 0
        diverged = True
        for g, z in train_stream:
            try:
                loss = train_step(model, g, z, cfg.step_size, step)
            except NonFiniteGradientError as e:
                raise DivergenceError(str(e), finish()) from e
            if initial_loss is None:
                initial_loss = loss
            diverged = diverged and loss > cfg.divergence_factor * initial_loss
            total += loss * g.shape[0]
            count += g.shape[0]
            step += 1

        report.per_epoch_train_mse.append(total / count)
        report.per_epoch_test_mse.append(evaluate(model, test_stream))
        diagnostics.info(
            f"epoch {epoch}/{cfg.epochs}: train MSE {report.per_epoch_train_mse[-1]:.6g}, "
            f"test MSE {report.per_epoch_test_mse[-1]:.6g}"
        )
        if diverged:
            raise DivergenceError(
                f"training diverged in epoch {epoch}: every batch loss exceeded "
                f"{cfg.divergence_factor:g} x the initial loss {initial_loss:.6g}",
                finish(),
            )

    report.designed_lmmse_mse = lmmse_on_stream(resolved, covariances, model.pilots(), test_stream)
    if report.per_epoch_test_mse and report.per_epoch_test_mse[-1] > report.initial_test_mse:
        diagnostics.warn(
            f"trained test MSE {report.per_epoch_test_mse[-1]:.6g} is above the initial {report.initial_test_mse:.6g}"
        )
    return finish()


@dataclass
class SweepRow:
    snr_db: float
    mse_proposed: float
    mse_lmmse_literal: Optional[float]
    mse_lmmse_fair: Optional[float]
    mse_lmmse_designed: float

    @property
    def gap(self) -> Optional[float]:
        """Budget-fair LMMSE minus proposed."""
        if self.mse_lmmse_fair is None:
            return None
        return self.mse_lmmse_fair - self.mse_proposed


def snr_sweep(
    system: SystemConfig,
    cfg: TrainConfig,
    snr_list_db: Sequence[float],
    covariances: Optional[Sequence[np.ndarray]] = None,
    diagnostics: Diagnostics = QUIET,
) -> List[SweepRow]:
    """
    Proposed scheme against the LMMSE baselines at every SNR, all evaluated on test sets drawn from the
    same white sources. A model is trained per SNR point, or once at cfg.train_snr_db with cfg.cross_snr.
    """
    if not snr_list_db:
        raise ValueError("the SNR list of a sweep must not be empty")

    shared = train(system, cfg, covariances, diagnostics).model if cfg.cross_snr else None
    rows = []
    for snr_db in snr_list_db:
        point_cfg = replace(cfg, train_snr_db=float(snr_db))
        resolved = resolve_system(system, point_cfg)
        covs = list(covariances) if covariances is not None else iid_covariances(resolved)
        if shared is None:
            diagnostics.info(f"training at {snr_db:g} dB")
            model = train(system, point_cfg, covs, diagnostics).model
        else:
            model = shared.with_system(resolved)

        test_stream = SampleStream(resolved, covs, cfg.seed, STREAM_TEST, cfg.test_samples, cfg.eval_batch_size)
        literal, fair = heuristic_baselines(resolved, covs, test_stream, diagnostics)
        rows.append(
            SweepRow(
                snr_db=float(snr_db),
                mse_proposed=evaluate(model, test_stream),
                mse_lmmse_literal=literal,
                mse_lmmse_fair=fair,
                mse_lmmse_designed=lmmse_on_stream(resolved, covs, model.pilots(), test_stream),
            )
        )
        diagnostics.info(f"{snr_db:g} dB: proposed {rows[-1].mse_proposed:.6g}, LMMSE (fair) {fair}")
    return rows

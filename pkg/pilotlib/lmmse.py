# SPDX-FileCopyrightText: 2026 mimo-pilot-design contributors
# SPDX-License-Identifier: Apache-2.0
#
# Linear MMSE channel estimation for the stacked uplink model y = S g + z and the heuristic
# nonorthogonal pilots it is compared with.
#
from dataclasses import dataclass
from typing import Iterable
from typing import List
from typing import Sequence
from typing import Tuple

import numpy as np
import scipy.linalg

from .core import DimensionError
from .core import SingularMatrixError
from .core import UnsupportedPilotShapeError
from .mimo_model import PSD_TOLERANCE
from .mimo_model import SystemConfig
from .mimo_model import build_stacked_pilot
from .mimo_model import pilot_energy

# Phases of the diagonal generator used for the heuristic pilots (user k uses its (k-1)-th power).
HEURISTIC_PHASES = (0.0, np.pi, 5.0 * np.pi / 6.0, 2.0 * np.pi / 3.0)


@dataclass
class LmmseEstimator:
    """
    g_hat = D_bar y, with D_bar = [D_1; ...; D_K] and

        D_k = R_k Xbar_k^H (sum_i Xbar_i R_i Xbar_i^H + C_z)^-1
    """

    D_bar: np.ndarray
    per_user_blocks: List[np.ndarray]
    C_h: np.ndarray
    C_z: np.ndarray
    S: np.ndarray


def _min_eigenvalue(matrix: np.ndarray) -> float:
    return float(scipy.linalg.eigh(matrix, eigvals_only=True).min())


def _infer_N(pilots: Sequence[np.ndarray], covariances: Sequence[np.ndarray]) -> int:
    if len(pilots) != len(covariances):
        raise DimensionError(f"got {len(pilots)} pilots but {len(covariances)} covariances")
    sizes = set()
    for user, (X, R) in enumerate(zip(pilots, covariances), start=1):
        m = np.shape(X)[0]
        if np.shape(R)[0] % m:
            raise DimensionError(f"covariance of user {user} ({np.shape(R)}) does not match {m} antennas")
        sizes.add(np.shape(R)[0] // m)
    if len(sizes) != 1:
        raise DimensionError(f"covariances imply different numbers of base-station antennas: {sorted(sizes)}")
    return sizes.pop()


def build_lmmse(
    pilots: Sequence[np.ndarray], covariances: Sequence[np.ndarray], C_z: np.ndarray
) -> LmmseEstimator:
    N = _infer_N(pilots, covariances)
    S = build_stacked_pilot(pilots, N)
    C_h = scipy.linalg.block_diag(*[np.asarray(R, dtype=complex) for R in covariances])
    C_z = np.asarray(C_z, dtype=complex)
    if C_z.shape != (S.shape[0], S.shape[0]):
        raise DimensionError(f"C_z must be {S.shape[0]}x{S.shape[0]}, got {C_z.shape}")
    if _min_eigenvalue(C_z) <= 0.0:
        raise SingularMatrixError("noise covariance C_z is not positive definite")

    inner = S @ C_h @ S.conj().T + C_z
    # One Hermitian solve serves all users: D_bar^H = inner^-1 S C_h.
    try:
        D_bar = scipy.linalg.solve(inner, S @ C_h, assume_a="her").conj().T
    except np.linalg.LinAlgError as e:
        raise SingularMatrixError(f"LMMSE inner matrix is singular: {e}")

    bounds = np.cumsum([np.shape(R)[0] for R in covariances])[:-1]
    blocks = np.split(D_bar, bounds, axis=0)
    return LmmseEstimator(D_bar=D_bar, per_user_blocks=blocks, C_h=C_h, C_z=C_z, S=S)


def lmmse_estimate(est: LmmseEstimator, y: np.ndarray) -> np.ndarray:
    y = np.asarray(y)
    if y.shape[-1] != est.D_bar.shape[1]:
        raise DimensionError(f"received signal has length {y.shape[-1]}, estimator expects {est.D_bar.shape[1]}")
    return y @ est.D_bar.T


def lmmse_mse_closed_form(
    pilots: Sequence[np.ndarray], covariances: Sequence[np.ndarray], C_z: np.ndarray
) -> float:
    """tr{(C_h^-1 + S^H C_z^-1 S)^-1}. Requires invertible covariances."""
    N = _infer_N(pilots, covariances)
    S = build_stacked_pilot(pilots, N)
    C_z = np.asarray(C_z, dtype=complex)
    if _min_eigenvalue(C_z) <= 0.0:
        raise SingularMatrixError("noise covariance C_z is not positive definite")

    inverses = []
    for user, R in enumerate(covariances, start=1):
        R = np.asarray(R, dtype=complex)
        if _min_eigenvalue(R) <= PSD_TOLERANCE:
            raise SingularMatrixError(
                f"covariance of user {user} is singular; regularize it or use lmmse_mse_estimator_form()"
            )
        inverses.append(scipy.linalg.solve(R, np.eye(R.shape[0]), assume_a="her"))
    C_h_inv = scipy.linalg.block_diag(*inverses)

    information = C_h_inv + S.conj().T @ scipy.linalg.solve(C_z, S, assume_a="her")
    error_cov = scipy.linalg.solve(information, np.eye(information.shape[0]), assume_a="her")
    return float(np.trace(error_cov).real)


def lmmse_mse_estimator_form(est: LmmseEstimator) -> float:
    """tr(C_h) - tr(D_bar S C_h); valid for singular covariances as well."""
    return float((np.trace(est.C_h) - np.trace(est.D_bar @ est.S @ est.C_h)).real)


def lmmse_mse_monte_carlo(est: LmmseEstimator, samples: Iterable[Tuple[np.ndarray, np.ndarray]]) -> float:
    """Empirical mean of ||g - D_bar y||^2 over (g, z) batches."""
    total = 0.0
    count = 0
    for g, z in samples:
        y = g @ est.S.T + z
        error = g - lmmse_estimate(est, y)
        total += float(np.sum(error.real**2 + error.imag**2))
        count += g.shape[0]
    if count == 0:
        raise DimensionError("Monte-Carlo evaluation needs at least one sample")
    return total / count


def diagonal_mse(pilots: Sequence[np.ndarray], noise_variance: float, N: int) -> float:
    """
    LMMSE error for i.i.d. unit-variance channels when S^H S is diagonal (orthogonal pilots):
    sum_i 1 / (1 + ||s_i||^2 / sigma^2).
    """
    S = build_stacked_pilot(pilots, N)
    gram = S.conj().T @ S
    off_diagonal = gram - np.diag(np.diag(gram))
    if np.max(np.abs(off_diagonal), initial=0.0) > 1e-9 * max(1.0, float(np.max(np.abs(gram)))):
        raise DimensionError("pilots are not orthogonal, S^H S is not diagonal")
    column_energy = np.diag(gram).real
    return float(np.sum(1.0 / (1.0 + column_energy / noise_variance)))


def heuristic_pilots(config: SystemConfig, normalize_to_budget: bool = False) -> List[np.ndarray]:
    """
    Nonorthogonal pilots X_k = sqrt(p_k / 2) [U_k, U_k] with U_k = diag(1, e^{j pi}, e^{j 5pi/6},
    e^{j 2pi/3})^(k-1), truncated to M_k antennas.

    As written, tr(X_k X_k^H) = M_k p_k exceeds the budget p_k. With normalize_to_budget every X_k is
    rescaled to energy p_k.
    """
    pilots = []
    for k, (m, p) in enumerate(zip(config.antennas_per_user, config.power_budgets), start=1):
        if config.L != 2 * m or m > len(HEURISTIC_PHASES):
            raise UnsupportedPilotShapeError(
                f"heuristic pilots need L = 2 * M_k and M_k <= {len(HEURISTIC_PHASES)} "
                f"(user {k}: M_k={m}, L={config.L})"
            )
        phases = (k - 1) * np.asarray(HEURISTIC_PHASES[:m])
        U = np.diag(np.exp(1j * phases))
        X = np.sqrt(p / 2.0) * np.concatenate([U, U], axis=1)
        if normalize_to_budget:
            energy = pilot_energy(X)
            if energy > 0.0:
                X = X * np.sqrt(p / energy)
        pilots.append(X)
    return pilots

# SPDX-FileCopyrightText: 2026 mimo-pilot-design contributors
# SPDX-License-Identifier: Apache-2.0
#
# Physical signal model of the uplink pilot phase:
#
#   Y = sum_k H_k X_k + Z               (matrix form, N x L)
#   y = S g + z,  S = [X_1^T (x) I_N, ..., X_K^T (x) I_N]   (vector form, NL x 1)
#
# Complex matrices are numpy complex128 arrays; vec() is column-major stacking.
#
from dataclasses import dataclass
from dataclasses import field
from dataclasses import replace
from typing import Iterator
from typing import List
from typing import Optional
from typing import Sequence
from typing import Tuple
from typing import Union

import numpy as np
import scipy.linalg

from .core import CovarianceError
from .core import DimensionError
from .core import complex_normal
from .core import make_rng

# Eigenvalues in [-PSD_TOLERANCE, 0] are treated as rounding noise and clamped to zero.
PSD_TOLERANCE = 1e-10


@dataclass(frozen=True)
class SystemConfig:
    """
    Dimensions and power/noise parameters of the uplink system.

    - K users, user k has antennas_per_user[k] antennas and a total pilot energy budget power_budgets[k]
    - N base-station antennas, pilots of L symbols
    - noise_variance is the per-complex-dimension noise variance sigma^2
    """

    K: int
    N: int
    antennas_per_user: Sequence[int]
    L: int
    power_budgets: Sequence[float]
    noise_variance: float = 1.0
    M: int = field(init=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "antennas_per_user", tuple(int(m) for m in self.antennas_per_user))
        object.__setattr__(self, "power_budgets", tuple(float(p) for p in self.power_budgets))
        for name in ("K", "N", "L"):
            if int(getattr(self, name)) < 1:
                raise DimensionError(f"{name} must be a positive integer, got {getattr(self, name)}")
        if len(self.antennas_per_user) != self.K:
            raise DimensionError(f"antennas_per_user has {len(self.antennas_per_user)} entries, expected K={self.K}")
        if len(self.power_budgets) != self.K:
            raise DimensionError(f"power_budgets has {len(self.power_budgets)} entries, expected K={self.K}")
        if any(m < 1 for m in self.antennas_per_user):
            raise DimensionError("every user needs at least one antenna")
        if any(p < 0 or not np.isfinite(p) for p in self.power_budgets):
            raise DimensionError("power budgets must be finite and nonnegative")
        if not (self.noise_variance > 0 and np.isfinite(self.noise_variance)):
            raise DimensionError(f"noise_variance must be positive, got {self.noise_variance}")
        object.__setattr__(self, "M", int(sum(self.antennas_per_user)))

    def user_offsets(self) -> List[int]:
        """Start index of every user's block inside the stacked channel vector g."""
        offsets = []
        start = 0
        for m in self.antennas_per_user:
            offsets.append(start)
            start += self.N * m
        return offsets

    def with_budgets(self, power_budgets: Sequence[float]) -> "SystemConfig":
        return replace(self, power_budgets=tuple(power_budgets))

    def with_noise(self, noise_variance: float) -> "SystemConfig":
        return replace(self, noise_variance=float(noise_variance))

    def as_dict(self) -> dict:
        return {
            "K": self.K,
            "N": self.N,
            "antennas_per_user": list(self.antennas_per_user),
            "L": self.L,
            "power_budgets": list(self.power_budgets),
            "noise_variance": self.noise_variance,
        }


@dataclass
class ChannelRealization:
    """
    Channel vectors h_k = vec(H_k) per user and their stack g = [h_1; ...; h_K].

    With a batch of realizations, every array carries a leading sample axis.
    """

    per_user: List[np.ndarray]
    stacked: np.ndarray
    covariances: List[np.ndarray]

    def matrices(self, N: int) -> List[np.ndarray]:
        """Per-user channel matrices H_k (N x M_k), inverse of vec()."""
        return [unvec(h, N) for h in self.per_user]


@dataclass
class ReceivedSignal:
    matrix_form: np.ndarray  # Y, N x L (or B x N x L)
    vector_form: np.ndarray  # y = vec(Y)
    noise: np.ndarray  # z = vec(Z)


def vec(matrix: np.ndarray) -> np.ndarray:
    """Column-major stacking. A leading batch axis is preserved."""
    matrix = np.asarray(matrix)
    if matrix.ndim == 2:
        return matrix.reshape(-1, order="F")
    return np.swapaxes(matrix, -1, -2).reshape(matrix.shape[:-2] + (-1,))


def unvec(vector: np.ndarray, rows: int) -> np.ndarray:
    """Inverse of vec() for a matrix with the given number of rows."""
    vector = np.asarray(vector)
    if vector.shape[-1] % rows:
        raise DimensionError(f"vector of length {vector.shape[-1]} cannot be split into columns of {rows} rows")
    cols = vector.shape[-1] // rows
    return np.swapaxes(vector.reshape(vector.shape[:-1] + (cols, rows)), -1, -2)


def iid_covariances(config: SystemConfig) -> List[np.ndarray]:
    return [np.eye(config.N * m, dtype=complex) for m in config.antennas_per_user]


def exponential_covariances(config: SystemConfig, correlation: float) -> List[np.ndarray]:
    """
    Covariances with exponential correlation r^|i-j| between base-station antennas and independent user
    antennas, i.e. R_k = I_Mk (x) T since h_k stacks the columns of H_k.
    """
    if not 0.0 <= correlation < 1.0:
        raise DimensionError(f"correlation must lie in [0, 1), got {correlation}")
    idx = np.arange(config.N)
    bs = correlation ** np.abs(idx[:, None] - idx[None, :])
    return [np.kron(np.eye(m), bs).astype(complex) for m in config.antennas_per_user]


def covariance_sqrt(covariance: np.ndarray, user: int = 0) -> np.ndarray:
    """Hermitian square root via eigendecomposition with clamping of tiny negative eigenvalues."""
    covariance = np.asarray(covariance, dtype=complex)
    if covariance.ndim != 2 or covariance.shape[0] != covariance.shape[1]:
        raise DimensionError(f"covariance of user {user} must be square, got shape {covariance.shape}")
    if not np.allclose(covariance, covariance.conj().T, rtol=0.0, atol=PSD_TOLERANCE):
        raise CovarianceError(user, "matrix is not Hermitian")
    eigenvalues, eigenvectors = scipy.linalg.eigh(covariance)
    if eigenvalues.size and eigenvalues.min() < -PSD_TOLERANCE:
        raise CovarianceError(user, f"matrix is not positive semidefinite (eigenvalue {eigenvalues.min():.3e})")
    eigenvalues = np.clip(eigenvalues, 0.0, None)
    return (eigenvectors * np.sqrt(eigenvalues)) @ eigenvectors.conj().T


def _check_covariances(config: SystemConfig, covariances: Sequence[np.ndarray]) -> None:
    if len(covariances) != config.K:
        raise DimensionError(f"expected {config.K} covariances, got {len(covariances)}")
    for user, (cov, m) in enumerate(zip(covariances, config.antennas_per_user), start=1):
        size = config.N * m
        if np.shape(cov) != (size, size):
            raise DimensionError(f"covariance of user {user} must be {size}x{size}, got {np.shape(cov)}")


def sample_channel(
    config: SystemConfig,
    covariances: Sequence[np.ndarray],
    rng_seed: Union[int, np.random.Generator],
    num_samples: Optional[int] = None,
) -> ChannelRealization:
    """
    Draw h_k = R_k^{1/2} w with w ~ CN(0, I). Deterministic for an integer seed.

    Without `num_samples` a single realization (1-D vectors) is returned, otherwise arrays of shape
    (num_samples, N * M_k).
    """
    _check_covariances(config, covariances)
    rng = rng_seed if isinstance(rng_seed, np.random.Generator) else make_rng(rng_seed)
    roots = [covariance_sqrt(cov, user) for user, cov in enumerate(covariances, start=1)]
    shape_prefix = () if num_samples is None else (int(num_samples),)

    per_user = []
    for root in roots:
        white = complex_normal(rng, shape_prefix + (root.shape[0],))
        per_user.append(white @ root.T)
    stacked = np.concatenate(per_user, axis=-1)
    return ChannelRealization(per_user=per_user, stacked=stacked, covariances=[np.asarray(c) for c in covariances])


def split_stacked(config: SystemConfig, stacked: np.ndarray) -> List[np.ndarray]:
    """Split g into the per-user blocks h_k."""
    stacked = np.asarray(stacked)
    if stacked.shape[-1] != config.N * config.M:
        raise DimensionError(f"stacked channel has length {stacked.shape[-1]}, expected {config.N * config.M}")
    bounds = np.cumsum([config.N * m for m in config.antennas_per_user])[:-1]
    return np.split(stacked, bounds, axis=-1)


def channel_from_stacked(
    config: SystemConfig, stacked: np.ndarray, covariances: Optional[Sequence[np.ndarray]] = None
) -> ChannelRealization:
    return ChannelRealization(
        per_user=split_stacked(config, stacked),
        stacked=np.asarray(stacked),
        covariances=list(covariances) if covariances is not None else iid_covariances(config),
    )


def sample_noise(
    config: SystemConfig, rng_seed: Union[int, np.random.Generator], num_samples: Optional[int] = None
) -> np.ndarray:
    """Draw z = vec(Z) ~ CN(0, sigma^2 I) of length N * L."""
    rng = rng_seed if isinstance(rng_seed, np.random.Generator) else make_rng(rng_seed)
    shape_prefix = () if num_samples is None else (int(num_samples),)
    return complex_normal(rng, shape_prefix + (config.N * config.L,), config.noise_variance)


def expand_pilot(X_k: np.ndarray, N: int) -> np.ndarray:
    """Return X_k^T (x) I_N (NL x N*M_k)."""
    X_k = np.asarray(X_k)
    if X_k.ndim != 2:
        raise DimensionError(f"pilot must be a matrix, got shape {X_k.shape}")
    return np.kron(X_k.T, np.eye(N))


def build_stacked_pilot(pilots: Sequence[np.ndarray], N: int) -> np.ndarray:
    """S = [X_1^T (x) I_N, ..., X_K^T (x) I_N] (NL x NM)."""
    if not pilots:
        raise DimensionError("at least one pilot is required")
    lengths = {np.shape(X)[1] for X in pilots}
    if len(lengths) != 1:
        raise DimensionError(f"all pilots must have the same length L, got {sorted(lengths)}")
    return np.concatenate([expand_pilot(X, N) for X in pilots], axis=1).astype(complex)


def pilot_energy(X_k: np.ndarray) -> float:
    """tr(X_k X_k^H), i.e. the squared Frobenius norm of X_k."""
    X_k = np.asarray(X_k)
    return float(np.sum(X_k.real**2 + X_k.imag**2))


def check_pilots(config: SystemConfig, pilots: Sequence[np.ndarray]) -> None:
    if len(pilots) != config.K:
        raise DimensionError(f"expected {config.K} pilots, got {len(pilots)}")
    for user, (X, m) in enumerate(zip(pilots, config.antennas_per_user), start=1):
        if np.shape(X) != (m, config.L):
            raise DimensionError(f"pilot of user {user} must be {m}x{config.L}, got {np.shape(X)}")


def simulate_reception(
    pilots: Sequence[np.ndarray],
    channel: ChannelRealization,
    noise: Union[np.ndarray, int, np.random.Generator, None],
    config: SystemConfig,
) -> ReceivedSignal:
    """
    Compute the received pilot signal in both formulations.

    `noise` is either the noise vector z itself, a seed/generator to draw it from, or None for a
    noiseless reception.
    """
    check_pilots(config, pilots)
    if len(channel.per_user) != config.K:
        raise DimensionError(f"channel has {len(channel.per_user)} users, expected {config.K}")
    batch_shape = np.shape(channel.stacked)[:-1]
    if np.shape(channel.stacked)[-1] != config.N * config.M:
        raise DimensionError(f"stacked channel has length {np.shape(channel.stacked)[-1]}, expected {config.N * config.M}")

    if noise is None:
        z = np.zeros(batch_shape + (config.N * config.L,), dtype=complex)
    elif isinstance(noise, (int, np.integer, np.random.Generator)):
        z = sample_noise(config, noise, batch_shape[0] if batch_shape else None)
    else:
        z = np.asarray(noise, dtype=complex)
        if z.shape != batch_shape + (config.N * config.L,):
            raise DimensionError(f"noise has shape {z.shape}, expected {batch_shape + (config.N * config.L,)}")

    # vector form
    S = build_stacked_pilot(pilots, config.N)
    y = channel.stacked @ S.T + z

    # matrix form
    Y = unvec(z, config.N).astype(complex)
    for H, X in zip(channel.matrices(config.N), pilots):
        Y = Y + H @ np.asarray(X)

    return ReceivedSignal(matrix_form=Y, vector_form=y, noise=z)


@dataclass
class SampleStream:
    """
    Deterministic source of (g, z) batches.

    Iterating restarts the stream from its seed, so every pass sees the same realizations. The noise is
    drawn with the configured sigma^2 of `config`.
    """

    config: SystemConfig
    covariances: Sequence[np.ndarray]
    seed: int
    stream_id: int
    num_samples: int
    batch_size: int

    def __post_init__(self) -> None:
        if self.batch_size < 1:
            raise DimensionError(f"batch_size must be positive, got {self.batch_size}")
        if self.num_samples < 0:
            raise DimensionError(f"num_samples must be nonnegative, got {self.num_samples}")

    def __len__(self) -> int:
        """Number of batches."""
        return -(-self.num_samples // self.batch_size)

    def __iter__(self) -> Iterator[Tuple[np.ndarray, np.ndarray]]:
        rng = make_rng(self.seed, self.stream_id)
        remaining = self.num_samples
        while remaining > 0:
            size = min(self.batch_size, remaining)
            channel = sample_channel(self.config, self.covariances, rng, size)
            noise = sample_noise(self.config, rng, size)
            yield channel.stacked, noise
            remaining -= size

    def with_config(self, config: SystemConfig) -> "SampleStream":
        """Same realizations of the white sources, different noise level or budgets."""
        return replace(self, config=config)

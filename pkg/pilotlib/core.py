# SPDX-FileCopyrightText: 2026 mimo-pilot-design contributors
# SPDX-License-Identifier: Apache-2.0
#
# Shared pieces of pilotlib: the exception hierarchy, stderr diagnostics and
# seeded random streams.
#
import sys
from typing import List
from typing import Optional
from typing import Sequence

import numpy as np

# Stream identifiers mixed into the top-level seed. Every consumer of randomness
# draws from its own stream so that adding one does not shift the others.
STREAM_TRAIN = 1
STREAM_TEST = 2
STREAM_PILOT_INIT = 3
STREAM_DNN_INIT = 4
STREAM_BASELINE = 5
STREAM_EXPORT = 6


class PilotlibError(Exception):
    """
    Base class for all errors raised by pilotlib.
    """


class DimensionError(PilotlibError, ValueError):
    """
    Raised when array shapes do not agree with each other or with the system configuration.
    """


class CovarianceError(PilotlibError, ValueError):
    """
    Raised for a channel covariance that is not Hermitian positive semidefinite.
    """

    def __init__(self, user: int, msg: str):
        super().__init__(f"covariance of user {user}: {msg}")
        self.user = user


class SingularMatrixError(PilotlibError, np.linalg.LinAlgError):
    """
    Raised when a matrix that has to be inverted (or solved against) is singular.
    """


class UnsupportedPilotShapeError(PilotlibError, ValueError):
    """
    Raised when the heuristic pilot construction is asked for a shape it does not cover.
    """


class TapeError(PilotlibError, RuntimeError):
    """
    Raised on misuse of the differentiation tape (e.g. backward before forward).
    """


class NonFiniteGradientError(PilotlibError, FloatingPointError):
    """
    Raised when a gradient contains NaN or Inf. Identifies the optimizer step and the parameter.
    """

    def __init__(self, step: int, parameter: str, msg: str = ""):
        text = f"non-finite gradient at step {step} for parameter {parameter}"
        if msg:
            text += f" ({msg})"
        super().__init__(text)
        self.step = step
        self.parameter = parameter


class DivergenceError(PilotlibError, RuntimeError):
    """
    Raised when training diverges. The partial report is kept in `report`.
    """

    def __init__(self, msg: str, report=None):
        super().__init__(msg)
        self.report = report


class CheckpointError(PilotlibError, ValueError):
    """
    Raised for unreadable checkpoints or checkpoints that do not match the system shapes.
    """


class ConfigError(PilotlibError, ValueError):
    """
    Represents an error in a configuration file. Formatted as <path>:<line>: <message>.
    """

    def __init__(self, path: Optional[str], line: Optional[int], msg: str):
        location = ""
        if path is not None:
            location = f"{path}:{line}: " if line is not None else f"{path}: "
        super().__init__(f"{location}{msg}")
        self.path = path
        self.line = line
        self.msg = msg


class Diagnostics:
    """
    Collects warnings and prints warnings/info lines on stderr, prefixed with "warning: " and "info: ".

    Warnings are always kept in `warnings`, even when printing is disabled, so that callers (and tests)
    can inspect them.
    """

    def __init__(self, warn: bool = True, info: bool = True, warn_to_stderr: bool = True):
        self.warn_enabled = warn
        self.info_enabled = info
        self.warn_to_stderr = warn_to_stderr
        self.warnings: List[str] = []

    def warn(self, msg: str, filename: Optional[str] = None, linenr: Optional[int] = None) -> None:
        if not self.warn_enabled:
            return

        msg = "warning: " + msg
        if filename is not None:
            msg = f"{filename}:{linenr}: {msg}"

        self.warnings.append(msg)
        if self.warn_to_stderr:
            sys.stderr.write(msg + "\n")

    def info(self, msg: str) -> None:
        if not self.info_enabled:
            return

        sys.stderr.write(f"info: {msg}\n")


# Used when the caller does not care about diagnostics at all.
QUIET = Diagnostics(warn=False, info=False)


def make_rng(seed: int, *stream: int) -> np.random.Generator:
    """Return a generator for the given seed and stream path (e.g. make_rng(seed, STREAM_TEST))."""
    return np.random.default_rng([int(seed), *[int(s) for s in stream]])


def complex_normal(rng: np.random.Generator, shape: Sequence[int], variance: float = 1.0) -> np.ndarray:
    """
    Draw circularly-symmetric complex Gaussian samples CN(0, variance).

    Real and imaginary parts are i.i.d. N(0, variance / 2).
    """
    scale = np.sqrt(variance / 2.0)
    real = rng.standard_normal(shape)
    imag = rng.standard_normal(shape)
    return scale * (real + 1j * imag)


def db_to_linear(value_db: float) -> float:
    return float(10.0 ** (value_db / 10.0))

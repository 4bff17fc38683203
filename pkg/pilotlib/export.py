# SPDX-FileCopyrightText: 2026 mimo-pilot-design contributors
# SPDX-License-Identifier: Apache-2.0
#
# Result files. Every CSV starts with a "# manifest=<sha256>" line naming the run manifest that
# produced it; numbers are written with 9 significant digits.
#
import csv
import hashlib
import json
import struct
from dataclasses import dataclass
from dataclasses import field
from datetime import datetime
from datetime import timezone
from typing import Iterable
from typing import List
from typing import Optional
from typing import Sequence

import numpy as np

from mimo_pilot import __version__

from .core import DimensionError
from .mimo_model import SystemConfig
from .mimo_model import split_stacked
from .trainer import BaselineRow
from .trainer import SweepRow
from .trainer import TrainReport

SAMPLES_MAGIC = b"MPSAMP01"

BASELINE_HEADER = ["snr_db", "mse_closed_form", "mse_monte_carlo", "normalized_flag", "samples"]
CURVES_HEADER = ["epoch", "train_mse", "test_mse"]
SWEEP_HEADER = ["snr_db", "mse_proposed", "mse_lmmse_literal", "mse_lmmse_fair", "mse_lmmse_designed"]
PILOTS_HEADER = ["user", "row", "col", "re", "im"]
ESTIMATES_HEADER = ["sample", "user", "element", "re", "im"]


def fmt(value: Optional[float]) -> str:
    """%.9g, or an empty field for a missing value."""
    if value is None:
        return ""
    return "%.9g" % value


@dataclass
class RunManifest:
    """
    Resolved inputs of one command. The digest covers everything except the creation time, so two runs
    of the same command with the same inputs share it.
    """

    command: str
    config: dict
    seed: int
    flags: dict
    version: str = __version__
    created: str = field(default_factory=lambda: datetime.now(timezone.utc).isoformat())

    def hashed_content(self) -> dict:
        return {
            "command": self.command,
            "config": self.config,
            "seed": self.seed,
            "flags": self.flags,
            "version": self.version,
        }

    @property
    def digest(self) -> str:
        canonical = json.dumps(self.hashed_content(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()

    def write(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as f:
            json.dump({**self.hashed_content(), "created": self.created, "digest": self.digest}, f, indent=4)
            f.write("\n")


def write_csv(path: str, header: Sequence[str], rows: Iterable[Sequence[str]], digest: str) -> None:
    with open(path, "w", encoding="utf-8", newline="") as f:
        f.write(f"# manifest={digest}\n")
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


def write_baseline_csv(path: str, rows: Sequence[BaselineRow], digest: str) -> None:
    write_csv(
        path,
        BASELINE_HEADER,
        (
            [fmt(r.snr_db), fmt(r.mse_closed_form), fmt(r.mse_monte_carlo), str(int(r.normalized)), str(r.samples)]
            for r in rows
        ),
        digest,
    )


def write_curves_csv(path: str, report: TrainReport, digest: str) -> None:
    write_csv(
        path,
        CURVES_HEADER,
        (
            [str(epoch), fmt(train_mse), fmt(test_mse)]
            for epoch, (train_mse, test_mse) in enumerate(
                zip(report.per_epoch_train_mse, report.per_epoch_test_mse), start=1
            )
        ),
        digest,
    )


def write_sweep_csv(path: str, rows: Sequence[SweepRow], digest: str) -> None:
    write_csv(
        path,
        SWEEP_HEADER,
        (
            [fmt(r.snr_db), fmt(r.mse_proposed), fmt(r.mse_lmmse_literal), fmt(r.mse_lmmse_fair), fmt(r.mse_lmmse_designed)]
            for r in rows
        ),
        digest,
    )


def write_pilots_csv(path: str, pilots: Sequence[np.ndarray], digest: str) -> None:
    """One row per pilot entry; user, row and column are 1-based."""
    rows: List[List[str]] = []
    for user, X in enumerate(pilots, start=1):
        X = np.asarray(X)
        for row in range(X.shape[0]):
            for col in range(X.shape[1]):
                rows.append([str(user), str(row + 1), str(col + 1), fmt(X[row, col].real), fmt(X[row, col].imag)])
    write_csv(path, PILOTS_HEADER, rows, digest)


def write_estimates_csv(path: str, system: SystemConfig, g_hat: np.ndarray, digest: str) -> None:
    """One row per estimated channel coefficient; sample and element are 0-based, user 1-based."""
    g_hat = np.atleast_2d(g_hat)
    rows: List[List[str]] = []
    for sample, stacked in enumerate(g_hat):
        for user, h in enumerate(split_stacked(system, stacked), start=1):
            for element, value in enumerate(h):
                rows.append([str(sample), str(user), str(element), fmt(value.real), fmt(value.imag)])
    write_csv(path, ESTIMATES_HEADER, rows, digest)


def _interleave(values: np.ndarray) -> np.ndarray:
    """(B, n) complex -> (B, 2n) real as re0, im0, re1, im1, ..."""
    out = np.empty(values.shape[:-1] + (2 * values.shape[-1],))
    out[..., 0::2] = values.real
    out[..., 1::2] = values.imag
    return out


def _check_samples(g: np.ndarray, z: np.ndarray) -> None:
    if g.ndim != 2 or z.ndim != 2 or g.shape[0] != z.shape[0]:
        raise DimensionError(f"expected batches of channels and noise with equal length, got {g.shape} and {z.shape}")


def write_samples_csv(path: str, g: np.ndarray, z: np.ndarray, digest: str) -> None:
    _check_samples(g, z)
    header = ["sample"]
    header += [f"g{i}_{part}" for i in range(g.shape[1]) for part in ("re", "im")]
    header += [f"z{i}_{part}" for i in range(z.shape[1]) for part in ("re", "im")]
    values = np.concatenate([_interleave(g), _interleave(z)], axis=1)
    write_csv(path, header, ([str(sample)] + [fmt(v) for v in row] for sample, row in enumerate(values)), digest)


def write_samples_binary(path: str, g: np.ndarray, z: np.ndarray, digest: str) -> None:
    """
    b"MPSAMP01" | uint32 LE header length | JSON header (rows, g_len, z_len, dtype, manifest) |
    row-major float64 LE rows of interleaved g then interleaved z.
    """
    _check_samples(g, z)
    header = {"rows": g.shape[0], "g_len": g.shape[1], "z_len": z.shape[1], "dtype": "<f8", "manifest": digest}
    encoded = json.dumps(header, sort_keys=True).encode("utf-8")
    values = np.concatenate([_interleave(g), _interleave(z)], axis=1)
    with open(path, "wb") as f:
        f.write(SAMPLES_MAGIC)
        f.write(struct.pack("<I", len(encoded)))
        f.write(encoded)
        f.write(np.ascontiguousarray(values, dtype="<f8").tobytes())


def read_samples_binary(path: str):
    """Inverse of write_samples_binary(). Returns (g, z, header)."""
    with open(path, "rb") as f:
        data = f.read()
    if data[: len(SAMPLES_MAGIC)] != SAMPLES_MAGIC:
        raise DimensionError(f"{path}: not a sample file")
    (length,) = struct.unpack_from("<I", data, len(SAMPLES_MAGIC))
    offset = len(SAMPLES_MAGIC) + 4
    header = json.loads(data[offset : offset + length].decode("utf-8"))
    width = 2 * (header["g_len"] + header["z_len"])
    values = np.frombuffer(data, dtype="<f8", offset=offset + length).reshape(header["rows"], width)
    pairs = values[:, 0::2] + 1j * values[:, 1::2]
    return pairs[:, : header["g_len"]], pairs[:, header["g_len"] :], header


def write_report_json(path: str, report: TrainReport, digest: str) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump({"manifest": digest, **report.as_dict()}, f, indent=4)
        f.write("\n")

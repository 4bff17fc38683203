# SPDX-FileCopyrightText: 2026 mimo-pilot-design contributors
# SPDX-License-Identifier: Apache-2.0
#
# Flat binary checkpoints of a JointModel:
#
#   b"MPCKPT01" | uint32 LE header length | UTF-8 JSON header | float64 LE arrays
#
# The header names the manifest digest of the run that produced the model. The arrays are the
# parameters in registry order (pilots, then estimators, user by user), followed by the real and
# imaginary parts of every channel covariance.
#
import json
import re
import struct
from typing import Optional
from typing import Tuple

import numpy as np

from mimo_pilot import __version__

from .core import CheckpointError
from .mimo_model import SystemConfig
from .trainer import JointModel
from .trainer import TrainConfig
from .trainer import build_joint_model

MAGIC = b"MPCKPT01"
FORMAT_VERSION = 1
_LENGTH = struct.Struct("<I")
_DIGEST = re.compile(r"[0-9a-f]{64}")


def save_checkpoint(path: str, model: JointModel, cfg: TrainConfig, manifest_digest: str) -> None:
    if not _DIGEST.fullmatch(manifest_digest):
        raise CheckpointError(f"{path}: {manifest_digest!r} is not a manifest digest")
    params = model.parameters()
    header = {
        "format": MAGIC.decode("ascii"),
        "version": FORMAT_VERSION,
        "code_version": __version__,
        "manifest": manifest_digest,
        "seed": cfg.seed,
        "system": model.system.as_dict(),
        "train": cfg.as_dict(),
        "sic_order": list(model.sic_order),
        "use_sic": model.use_sic,
        "input_gains": [net.input_gain for net in model.estimator_nets],
        "parameters": [{"name": param.name, "shape": list(param.shape)} for param in params],
        "covariances": [list(np.shape(cov)) for cov in model.covariances],
    }
    encoded = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(_LENGTH.pack(len(encoded)))
        f.write(encoded)
        for param in params:
            f.write(np.ascontiguousarray(param.data, dtype="<f8").tobytes())
        for cov in model.covariances:
            cov = np.asarray(cov, dtype=complex)
            f.write(np.ascontiguousarray(cov.real, dtype="<f8").tobytes())
            f.write(np.ascontiguousarray(cov.imag, dtype="<f8").tobytes())


def _read_header(path: str, data: bytes) -> Tuple[dict, int]:
    if data[: len(MAGIC)] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    offset = len(MAGIC) + _LENGTH.size
    if len(data) < offset:
        raise CheckpointError(f"{path}: truncated header")
    (length,) = _LENGTH.unpack_from(data, len(MAGIC))
    try:
        header = json.loads(data[offset : offset + length].decode("utf-8"))
    except (UnicodeDecodeError, ValueError) as e:
        raise CheckpointError(f"{path}: unreadable header: {e}")
    if header.get("version") != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {header.get('version')}")
    if not isinstance(header.get("manifest"), str) or not _DIGEST.fullmatch(header["manifest"]):
        raise CheckpointError(f"{path}: header does not name the manifest of the producing run")
    return header, offset + length


def _read(path: str) -> bytes:
    try:
        with open(path, "rb") as f:
            return f.read()
    except OSError as e:
        raise CheckpointError(f"{path}: {e.strerror}")


def checkpoint_manifest(path: str) -> str:
    """Manifest digest of the run that wrote the checkpoint."""
    header, _ = _read_header(path, _read(path))
    return header["manifest"]


def load_checkpoint(
    path: str, expected_system: Optional[SystemConfig] = None, expected_manifest: Optional[str] = None
) -> Tuple[JointModel, TrainConfig]:
    """
    Rebuild the model stored in `path`. With `expected_system`, the stored system must have the same
    shapes (K, N, antennas per user, L). With `expected_manifest`, the checkpoint must come from that run.
    """
    data = _read(path)
    header, offset = _read_header(path, data)
    if expected_manifest is not None and header["manifest"] != expected_manifest:
        raise CheckpointError(f"{path}: written by run {header['manifest']}, expected {expected_manifest}")

    try:
        system = SystemConfig(**header["system"])
        cfg = TrainConfig(**header["train"])
    except (KeyError, TypeError, ValueError) as e:
        raise CheckpointError(f"{path}: invalid configuration in header: {e}")
    if expected_system is not None:
        stored = (system.K, system.N, system.antennas_per_user, system.L)
        expected = (expected_system.K, expected_system.N, expected_system.antennas_per_user, expected_system.L)
        if stored != expected:
            raise CheckpointError(f"{path}: checkpoint shapes (K, N, M, L) = {stored} do not match {expected}")

    def take(shape) -> np.ndarray:
        nonlocal offset
        size = int(np.prod(shape)) * 8
        if offset + size > len(data):
            raise CheckpointError(f"{path}: truncated data")
        array = np.frombuffer(data, dtype="<f8", count=size // 8, offset=offset).reshape(shape)
        offset += size
        return array.astype(np.float64)

    model = build_joint_model(system, cfg)
    params = model.parameters()
    stored_names = [entry["name"] for entry in header["parameters"]]
    if stored_names != [param.name for param in params]:
        raise CheckpointError(f"{path}: parameter layout does not match the configured architecture")
    for param, entry in zip(params, header["parameters"]):
        if tuple(entry["shape"]) != param.shape:
            raise CheckpointError(f"{path}: parameter {param.name} has shape {tuple(entry['shape'])}, expected {param.shape}")
        param.data = take(param.shape)

    model.covariances = [take(tuple(shape)) + 1j * take(tuple(shape)) for shape in header["covariances"]]
    if offset != len(data):
        raise CheckpointError(f"{path}: {len(data) - offset} trailing bytes")
    model.sic_order = tuple(header["sic_order"])
    model.use_sic = bool(header["use_sic"])
    gains = header.get("input_gains", [])
    if len(gains) != len(model.estimator_nets):
        raise CheckpointError(f"{path}: expected {len(model.estimator_nets)} estimator input gains, got {len(gains)}")
    for net, gain in zip(model.estimator_nets, gains):
        net.input_gain = float(gain)
    return model, cfg

"""Binary policy checkpoints with a JSON sidecar manifest.

File layout (all integers little-endian)::

    b"SGRPOCKP"                      8-byte magic
    u32  header length H
    H    bytes of JSON header {format_version, V, W_ctx, F, T_max, version}, sorted keys
    f64  context_weights, problem_weights, bias, each row-major
    32   bytes sha256 of everything above

The manifest ``<file>.json`` holds {stage, step, config_hash, metrics}.
Token ids follow ``lang.MNEMONICS``; changing that order breaks
compatibility and must bump FORMAT_VERSION.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .lang import V
from .policy import PolicyParams

MAGIC = b"SGRPOCKP"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


class ConfigMismatch(CheckpointError):
    pass


@dataclass(frozen=True)
class Manifest:
    stage: str
    step: int
    config_hash: str
    metrics: dict = field(default_factory=dict)


def to_bytes(params: PolicyParams, t_max: int) -> bytes:
    header = {"format_version": FORMAT_VERSION, "V": V, "W_ctx": params.w_ctx, "F": params.n_features,
              "T_max": t_max, "version": params.version}
    h = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    body = MAGIC + struct.pack("<I", len(h)) + h + params.flat().astype("<f8").tobytes()
    return body + hashlib.sha256(body).digest()


def from_bytes(blob: bytes) -> tuple[PolicyParams, dict]:
    if len(blob) < len(MAGIC) + 4 + 32 or blob[:len(MAGIC)] != MAGIC:
        raise CheckpointError("not a policy checkpoint")
    body, digest = blob[:-32], blob[-32:]
    if hashlib.sha256(body).digest() != digest:
        raise CheckpointError("checksum mismatch")
    (n,) = struct.unpack("<I", body[len(MAGIC):len(MAGIC) + 4])
    start = len(MAGIC) + 4
    header = json.loads(body[start:start + n])
    if header.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(f"format version {header.get('format_version')} != {FORMAT_VERSION}")
    if header["V"] != V:
        raise CheckpointError(f"vocabulary size {header['V']} != {V}")
    template = PolicyParams.zeros(n_features=header["F"], w_ctx=header["W_ctx"])
    vec = np.frombuffer(body[start + n:], dtype="<f8").astype(np.float64)
    if vec.size != template.flat().size:
        raise CheckpointError("parameter block has the wrong size")
    return template.with_flat(vec, version=header["version"]), header


def save(path, params: PolicyParams, manifest: Manifest, t_max: int = 24) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(to_bytes(params, t_max))
    meta = {"stage": manifest.stage, "step": manifest.step, "config_hash": manifest.config_hash,
            "metrics": manifest.metrics}
    manifest_path(path).write_text(json.dumps(meta, indent=1, sort_keys=True) + "\n")
    return path


def manifest_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".json")


def load(path, expected_config_hash: str | None = None, *,
         allow_config_mismatch: bool = False) -> tuple[PolicyParams, Manifest]:
    """Read a checkpoint; refuse a different config hash unless explicitly allowed."""
    params, _ = from_bytes(Path(path).read_bytes())
    mp = manifest_path(path)
    meta = json.loads(mp.read_text()) if mp.exists() else {"stage": "", "step": 0, "config_hash": "", "metrics": {}}
    manifest = Manifest(meta["stage"], meta["step"], meta["config_hash"], meta.get("metrics", {}))
    if (expected_config_hash is not None and manifest.config_hash != expected_config_hash
            and not allow_config_mismatch):
        raise ConfigMismatch(f"checkpoint config hash {manifest.config_hash} != {expected_config_hash}")
    return params, manifest

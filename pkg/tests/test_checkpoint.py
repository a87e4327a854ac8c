import hashlib
import json
import struct

import numpy as np
import pytest

from stackgrpo.checkpoint import (
    FORMAT_VERSION, MAGIC, CheckpointError, ConfigMismatch, Manifest, from_bytes, load, manifest_path, save,
    to_bytes,
)
from stackgrpo.policy import PolicyParams


def params(seed=0):
    z = PolicyParams.zeros()
    return z.with_flat(np.random.default_rng(seed).normal(size=z.flat().size), version=7)


def test_bytes_round_trip():
    p = params()
    blob = to_bytes(p, t_max=16)
    assert blob[:8] == MAGIC
    back, header = from_bytes(blob)
    assert np.array_equal(back.flat(), p.flat()) and back.version == 7
    assert header == {"format_version": FORMAT_VERSION, "V": 22, "W_ctx": 4, "F": 64, "T_max": 16, "version": 7}
    assert to_bytes(back, 16) == blob


def test_identical_params_identical_files(tmp_path):
    a, b = params(1), params(1)
    m = Manifest("stage1", 32, "abc", {"x": 1.0})
    save(tmp_path / "a.ckpt", a, m)
    save(tmp_path / "b.ckpt", b, m)
    assert (tmp_path / "a.ckpt").read_bytes() == (tmp_path / "b.ckpt").read_bytes()
    assert manifest_path(tmp_path / "a.ckpt").name == "a.ckpt.json"


def test_save_load_manifest(tmp_path):
    p = params()
    save(tmp_path / "x.ckpt", p, Manifest("stage2", 96, "h1", {"mean_reward": 0.5}), t_max=24)
    back, m = load(tmp_path / "x.ckpt", expected_config_hash="h1")
    assert np.array_equal(back.flat(), p.flat())
    assert m == Manifest("stage2", 96, "h1", {"mean_reward": 0.5})
    with pytest.raises(ConfigMismatch):
        load(tmp_path / "x.ckpt", expected_config_hash="other")
    _, m2 = load(tmp_path / "x.ckpt", expected_config_hash="other", allow_config_mismatch=True)
    assert m2.config_hash == "h1"


def test_corruption_refused(tmp_path):
    path = tmp_path / "c.ckpt"
    save(path, params(), Manifest("stage1", 1, "h"))
    blob = bytearray(path.read_bytes())
    blob[100] ^= 0xFF
    path.write_bytes(bytes(blob))
    with pytest.raises(CheckpointError, match="checksum"):
        load(path)
    with pytest.raises(CheckpointError):
        from_bytes(b"garbage")


def test_version_mismatch_refused():
    blob = to_bytes(params(), 16)
    (n,) = struct.unpack("<I", blob[8:12])
    header = json.loads(blob[12:12 + n])
    header["format_version"] = FORMAT_VERSION + 1
    h = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    body = MAGIC + struct.pack("<I", len(h)) + h + blob[12 + n:-32]
    with pytest.raises(CheckpointError, match="format version"):
        from_bytes(body + hashlib.sha256(body).digest())

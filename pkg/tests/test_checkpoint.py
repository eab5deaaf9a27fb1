"""Checkpoint round trips are byte-exact; corruption and config mismatch
are detected and attributed."""

import json

import numpy as np
import pytest

from cxrgen.checkpoint import (load_checkpoint, parameter_checksum, read_manifest,
                               save_checkpoint)
from cxrgen.errors import ConfigError, ContractError, IntegrityError
from cxrgen.model import ModelConfig, generate, init_parameters

CFG = ModelConfig(feature_dim=6, d_model=8, d_embed=8, n_heads=2, vocab_size=15,
                  max_len=6, demographic_dim=4, dropout_rate=0.0)


@pytest.fixture
def params():
    return init_parameters(CFG, seed=3)


def test_round_trip_bit_exact(tmp_path, params):
    save_checkpoint(params, CFG, tmp_path / "ckpt")
    loaded, cfg = load_checkpoint(tmp_path / "ckpt")
    assert cfg == CFG
    assert set(loaded) == set(params)
    for name in params:
        assert loaded[name].data.tobytes() == params[name].data.tobytes()
    assert parameter_checksum(loaded, cfg) == parameter_checksum(params, CFG)


def test_round_trip_preserves_generation(tmp_path, params):
    features = np.linspace(-1, 1, 6)
    demo = np.eye(4)[2]
    before = generate(features, demo, params, CFG, temperature=0.5, seed=11)
    save_checkpoint(params, CFG, tmp_path / "ckpt")
    loaded, cfg = load_checkpoint(tmp_path / "ckpt")
    after = generate(features, demo, loaded, cfg, temperature=0.5, seed=11)
    assert before == after


def test_manifest_lists_every_parameter_exactly_once(tmp_path, params):
    save_checkpoint(params, CFG, tmp_path / "ckpt")
    manifest = read_manifest(tmp_path / "ckpt")
    names = [entry["name"] for entry in manifest["tensors"]]
    assert len(names) == len(set(names))
    assert set(names) == set(params)


def test_single_byte_corruption_detected_with_tensor_name(tmp_path, params):
    save_checkpoint(params, CFG, tmp_path / "ckpt")
    blob_path = tmp_path / "ckpt" / "params.bin"
    blob = bytearray(blob_path.read_bytes())
    manifest = read_manifest(tmp_path / "ckpt")
    victim = manifest["tensors"][len(manifest["tensors"]) // 2]
    index = victim["offset"] + victim["nbytes"] // 2
    blob[index] ^= 0xFF
    blob_path.write_bytes(bytes(blob))
    with pytest.raises(IntegrityError, match=victim["name"]):
        load_checkpoint(tmp_path / "ckpt")


def test_truncated_blob_detected(tmp_path, params):
    save_checkpoint(params, CFG, tmp_path / "ckpt")
    blob_path = tmp_path / "ckpt" / "params.bin"
    blob_path.write_bytes(blob_path.read_bytes()[:-10])
    with pytest.raises(IntegrityError):
        load_checkpoint(tmp_path / "ckpt")


def test_config_mismatch_on_resume(tmp_path, params):
    save_checkpoint(params, CFG, tmp_path / "ckpt")
    other = ModelConfig(feature_dim=6, d_model=8, d_embed=8, n_heads=2, vocab_size=15,
                        max_len=12, demographic_dim=4, dropout_rate=0.0)
    with pytest.raises(ConfigError):
        load_checkpoint(tmp_path / "ckpt", expect_cfg=other)
    load_checkpoint(tmp_path / "ckpt", expect_cfg=CFG)


def test_missing_manifest(tmp_path):
    with pytest.raises(IntegrityError):
        load_checkpoint(tmp_path / "nothing")


def test_garbage_manifest(tmp_path):
    (tmp_path / "ckpt").mkdir()
    (tmp_path / "ckpt" / "manifest.json").write_text("{not json")
    with pytest.raises(IntegrityError):
        load_checkpoint(tmp_path / "ckpt")


def test_non_finite_parameters_rejected(tmp_path, params):
    params["classifier.b"].data[0] = np.nan
    with pytest.raises(ContractError, match="classifier.b"):
        save_checkpoint(params, CFG, tmp_path / "ckpt")


def test_wrong_parameter_set_rejected(tmp_path, params):
    del params["classifier.b"]
    with pytest.raises(ContractError):
        save_checkpoint(params, CFG, tmp_path / "ckpt")


def test_extra_payload_round_trip(tmp_path, params):
    save_checkpoint(params, CFG, tmp_path / "ckpt", extra={"vocab": ["<pad>", "x"]})
    manifest = read_manifest(tmp_path / "ckpt")
    assert manifest["extra"]["vocab"] == ["<pad>", "x"]


def test_tensor_list_must_match_model(tmp_path, params):
    save_checkpoint(params, CFG, tmp_path / "ckpt")
    manifest_path = tmp_path / "ckpt" / "manifest.json"
    manifest = json.loads(manifest_path.read_text())
    manifest["tensors"] = manifest["tensors"][:-1]
    manifest_path.write_text(json.dumps(manifest))
    with pytest.raises(IntegrityError):
        load_checkpoint(tmp_path / "ckpt")

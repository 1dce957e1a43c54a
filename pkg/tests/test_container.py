

import numpy as np
import pytest
from conftest import random_model

from mclearn.container import load_container, save_model, save_table
from mclearn.data import make_synthetic
from mclearn.errors import FormatError
from mclearn.training import TrainConfig, finetune_server_side


def test_model_roundtrip(tmp_path):
    model = random_model(mask_min=(1, 1, 1))
    path = tmp_path / "m.mcl"
    save_model(model, path)
    loaded = load_container(path)
    assert loaded.kind == "model"
    assert loaded.model.class_count == model.class_count
    assert loaded.model.input_shape == model.input_shape
    assert loaded.model.mask_spec == model.mask_spec
    assert loaded.model.training_mode == model.training_mode
    before, after = model.parameters(), loaded.model.parameters()
    assert set(before) == set(after)
    for name in before:
        np.testing.assert_array_equal(before[name], after[name])


def test_save_load_save_byte_identical(tmp_path):
    model = random_model()
    p1, p2 = tmp_path / "a.mcl", tmp_path / "b.mcl"
    save_model(model, p1)
    loaded = load_container(p1)
    save_model(loaded.model, p2, created_at=loaded.metadata["created_at"])
    assert p1.read_bytes() == p2.read_bytes()


def test_source_date_epoch_pins_bytes(tmp_path, monkeypatch):
    monkeypatch.setenv("SOURCE_DATE_EPOCH", "1700000000")
    model = random_model()
    p1, p2 = tmp_path / "a.mcl", tmp_path / "b.mcl"
    save_model(model, p1)
    save_model(model, p2)
    assert p1.read_bytes() == p2.read_bytes()


def test_timestamp_excluded_from_crc(tmp_path):
    model = random_model()
    p1, p2 = tmp_path / "a.mcl", tmp_path / "b.mcl"
    save_model(model, p1, created_at="2026-01-01T00:00:00Z")
    save_model(model, p2, created_at="2026-02-02T02:02:02Z")
    a, b = p1.read_bytes(), p2.read_bytes()
    assert a != b
    diffs = [i for i, (x, y) in enumerate(zip(a, b)) if x != y]
    assert len(a) == len(b)
    assert len(diffs) <= len("2026-01-01T00:00:00Z")
    load_container(p1), load_container(p2)  # both crc-valid


def test_corruption_detected(tmp_path):
    model = random_model()
    path = tmp_path / "m.mcl"
    save_model(model, path)
    raw = bytearray(path.read_bytes())
    raw[len(raw) // 2] ^= 0xFF
    path.write_bytes(bytes(raw))
    with pytest.raises(FormatError):
        load_container(path)


def test_bad_magic_and_truncation(tmp_path):
    path = tmp_path / "m.mcl"
    path.write_bytes(b"NOPE" + bytes(20))
    with pytest.raises(FormatError):
        load_container(path)
    model = random_model()
    save_model(model, path)
    truncated = path.read_bytes()[:-10]
    path.write_bytes(truncated)
    with pytest.raises(FormatError):
        load_container(path)


def test_table_roundtrip(tmp_path):
    model = random_model(input_shape=(8, 8, 2), measurement_shape=(4, 4, 2),
                         class_count=4, mask_min=(2, 2, 1), training_mode="adaptive")
    ds = make_synthetic(4, 6, (8, 8, 2), seed=3)
    cfg = TrainConfig(epochs=1, seed=4, lr=1e-4)
    table = {dims: finetune_server_side(model, dims, ds, cfg)
             for dims in [(2, 2, 1), (4, 4, 2)]}
    path = tmp_path / "t.mcl"
    save_table(model, table, path)
    loaded = load_container(path)
    assert loaded.kind == "table"
    assert set(loaded.table) == {(2, 2, 1), (4, 4, 2)}
    for dims, (synth, net) in table.items():
        lsynth, lnet = loaded.table[dims]
        for a, b in zip(synth.matrices, lsynth.matrices):
            np.testing.assert_array_equal(a, b)
        for name in net.params:
            np.testing.assert_array_equal(net.params[name], lnet.params[name])
    # sensing matrices shared and identical with the base model
    for k, a in enumerate(model.sensing.matrices):
        np.testing.assert_array_equal(loaded.model.sensing.matrices[k], a)

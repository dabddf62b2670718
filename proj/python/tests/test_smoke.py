"""Smoke tests for the python bindings against hand-derived fixture values."""

import json
import math
import os
import subprocess
from pathlib import Path

import numpy as np
import pytest

import marsrec as mr


def test_ntxent_orthogonal_pairs():
    # Two orthogonal pairs, tau=1: per-anchor -log(e / (e + 2)).
    z = np.array([[1, 0], [1, 0], [0, 1], [0, 1]], float)
    got = mr.ntxent(z, [1, 0, 3, 2], tau=1.0)
    assert got == pytest.approx(0.5514447139320509, abs=1e-12)


def test_ntxent_collapsed_batch():
    # All views identical: log(#negatives + 1), independent of tau.
    z = np.tile([0.3, 0.4, 0.5], (6, 1))
    got = mr.ntxent(z, [1, 0, 3, 2, 5, 4], tau=0.07)
    assert got == pytest.approx(math.log(5.0), abs=1e-9)


def test_supcon_fixture():
    z = np.array(
        [[1.0, 0.2], [0.8, 0.6], [-0.3, 1.0], [0.1, 0.9], [-1.0, -0.4], [-0.7, -0.9]]
    )
    got = mr.supcon(z, [0, 0, 1, 1, 2, 2], tau=0.5)
    assert got == pytest.approx(0.4457072541413271, abs=1e-12)


def test_proxy_anchor_fixture():
    z = np.array([[1.0, 0.0]])
    proxies = np.eye(2)
    got = mr.proxy_anchor(z, proxies, [0], delta=0.1, alpha=32.0)
    assert got == pytest.approx(1.6199766665815258, abs=1e-12)


def test_gem_pool_values():
    x = np.array([1.0, 2.0, 3.0, 4.0]).reshape(1, 1, 4)
    assert mr.gem(x, 1.0)[0, 0] == pytest.approx(2.5, abs=1e-12)
    assert mr.gem(x, 3.0)[0, 0] == pytest.approx(2.924017738212866, abs=1e-12)
    assert mr.gem(x, 100.0)[0, 0] == pytest.approx(3.9449308179734492, abs=1e-10)


def test_cosine_pair_mean_extremes():
    same = np.array([[0.3, -0.2, 0.9], [0.3, -0.2, 0.9]])
    assert mr.cosine_pair_mean(same) == pytest.approx(0.0, abs=1e-12)
    flipped = np.array([[0.3, -0.2, 0.9], [-0.3, 0.2, -0.9]])
    assert mr.cosine_pair_mean(flipped) == pytest.approx(2.0, abs=1e-12)


def test_ms_mine_keeps_hard_negatives_only():
    z = np.array([[1, 0], [1, 0], [0.8, 0.6], [0.8, 0.6]], float)
    twin = [1, 0, 3, 2]
    easy = mr.ms_mine(z, [0, 0, 1, 1], twin, eps=0.1)
    assert easy["ap"] == [0, 1, 2, 3]
    assert easy["p"] == twin
    assert easy["an"] == [] and easy["n"] == []

    # cross-label similarity 0.8 exceeds (1.0 - 0.25), so every
    # directed cross pair becomes a negative.
    hard = mr.ms_mine(z, [0, 0, 1, 1], twin, eps=0.25)
    assert sorted(zip(hard["an"], hard["n"])) == [
        (0, 2), (0, 3), (1, 2), (1, 3), (2, 0), (2, 1), (3, 0), (3, 1),
    ]


def test_warp_identity_and_brightness():
    rng = np.random.default_rng(5)
    img = rng.uniform(0.1, 0.9, size=(8, 8))
    assert np.array_equal(mr.warp(img), img)
    assert np.allclose(mr.warp(img, brightness=0.5), img * 0.5, atol=1e-12)


def test_pose_normalize_inverts_quarter_turn():
    rng = np.random.default_rng(7)
    img = rng.uniform(0.0, 1.0, size=(8, 8))
    rotated = mr.warp(img, rotation_deg=90.0)
    restored = mr.pose_normalize(rotated[None, :, :], rotation_deg=90.0)
    assert restored.shape == (1, 8, 8)
    assert np.allclose(restored[0], img, atol=1e-6)


def test_eigencam_rank_one():
    u = np.array([0.5, 1.0, 2.0])
    v = np.arange(12.0).reshape(3, 4) / 11.0
    act = u[:, None, None] * v[None, :, :]
    heat = mr.eigencam(act)
    assert heat.shape == (3, 4)
    assert np.allclose(heat, v / v.max(), atol=1e-9)
    assert heat.min() == pytest.approx(0.0) and heat.max() == pytest.approx(1.0)


def test_nms_keeps_highest_scoring_overlap():
    boxes = np.array(
        [[0, 0, 10, 10], [1, 1, 10, 10], [40, 40, 5, 5]], float
    )
    kept = mr.nms(boxes, np.array([0.9, 0.8, 0.5]), iou_threshold=0.5)
    assert sorted(kept) == [0, 2]


def test_synth_patches_deterministic():
    a = mr.synth_patches(3, 16, seed=5)
    b = mr.synth_patches(3, 16, seed=5)
    assert a.shape == (3, 16, 16)
    assert np.array_equal(a, b)
    assert a.min() >= 0.0 and a.max() <= 1.0
    assert not np.array_equal(a[0], a[1])


def test_shipped_schemas_are_valid_draft7():
    schema_dir = os.environ.get("MARSREC_SCHEMA_DIR")
    if not schema_dir:
        schema_dir = str(Path(__file__).resolve().parents[2] / "schemas")
    jsonschema = pytest.importorskip("jsonschema")
    for name in ("run_config.schema.json", "ra_report.schema.json"):
        schema = json.loads((Path(schema_dir) / name).read_text())
        jsonschema.Draft7Validator.check_schema(schema)

    report_schema = json.loads((Path(schema_dir) / "ra_report.schema.json").read_text())
    sample = {
        "protocol": "incremental",
        "seed": 0,
        "transform_subset": "all",
        "correct": 9,
        "incorrect": 1,
        "missed": 0,
        "ra": 90.0,
    }
    jsonschema.validate(sample, report_schema)
    with pytest.raises(jsonschema.ValidationError):
        jsonschema.validate({**sample, "protocol": "bogus"}, report_schema)


def test_recognizer_round_trip(tmp_path):
    cli = os.environ.get("MARSREC_BIN")
    if not cli or not Path(cli).exists():
        pytest.skip("marsrec CLI not available")

    subprocess.run(
        [cli, "synth", "--instances", "6", "--frames", "0", "--res", "16",
         "--seed", "4", "--out", str(tmp_path / "data")],
        check=True,
    )
    config = {
        "train": {
            "epochs": 1,
            "batch_size": 4,
            "lr": 0.001,
            "seed": 9,
            "dataset_path": str(tmp_path / "data"),
            "model": {
                "conv_kind": "standard",
                "attention_kind": "ca",
                "mars_enabled": True,
                "num_blocks": 2,
                "channels": [8, 16],
                "embedding_dim": 8,
                "reduction_r": 4,
                "input_h": 16,
                "input_w": 16,
            },
        },
        "out_dir": str(tmp_path / "run"),
    }
    (tmp_path / "run.json").write_text(json.dumps(config))
    subprocess.run([cli, "train", "--config", str(tmp_path / "run.json")], check=True)

    rec = mr.Recognizer(str(tmp_path / "run" / "checkpoint_final.ckpt"))
    assert rec.input_shape == (16, 16)
    assert rec.embedding_dim == 8
    assert rec.num_blocks == 2

    patch = mr.synth_patches(6, 16, seed=4)[0]
    z1 = rec.embed(patch)
    z2 = rec.embed(patch)
    assert z1.shape == (8,)
    assert np.array_equal(z1, z2)
    assert np.isfinite(z1).all()

    upscaled = rec.embed(np.kron(patch, np.ones((2, 2), dtype=np.float32)))
    assert upscaled.shape == (8,)

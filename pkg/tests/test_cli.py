import json
import subprocess
import sys

import numpy as np
import pytest

from vitinflate import checkpoint_io as cio
from vitinflate.checkpoint_io import Checkpoint, SegmentationMask, Volume
from vitinflate.cli import main
from vitinflate.inflation import InflationSpec, Strategy, inflate_checkpoint, inflate_config
from vitinflate.seg_pipeline import WindowSpec, predict_volume
from vitinflate.vit3d import ViTConfig, random_checkpoint


@pytest.fixture
def files(tmp_path, rng):
    cfg = ViTConfig(image_h=8, image_w=8, patch_p=4, in_channels=3, hidden_d=8, layers_l=1, heads=2, num_classes=3)
    ckpt = random_checkpoint(cfg, seed=4)
    cio.save(ckpt, tmp_path / "w2d.tns")
    (tmp_path / "cfg.json").write_text(cfg.to_json())
    cio.save(Volume(rng.uniform(-400, 400, (8, 8, 6)), modality="CT", clip_range=(-175, 250)), tmp_path / "ct.vol")
    return tmp_path, cfg, ckpt


def test_inflate_collapse(files, capsys):
    tmp, cfg, ckpt = files
    code = main(["inflate", str(tmp / "w2d.tns"), "--strategy", "centering", "--depth", "5",
                 "--channels", "collapse", str(tmp / "w3d.tns")])
    assert code == 0
    out = cio.load_checkpoint(tmp / "w3d.tns")
    assert out["embed.kernel"].shape == (8, 1, 5, 4, 4)
    expected = inflate_checkpoint(ckpt, cfg, InflationSpec(Strategy.CENTERING, 5, "collapse"))
    assert out.bit_equal(expected)
    summary = json.loads(capsys.readouterr().out)
    assert summary["embed_kernel_before"] == [8, 3, 4, 4]
    assert summary["embed_kernel_after"] == [8, 1, 5, 4, 4]
    assert summary["inflation_spec"]["strategy"] == "centering"


def test_inflate_depth_one_keep_is_bit_equal(files):
    tmp, _, ckpt = files
    assert main(["inflate", str(tmp / "w2d.tns"), "--depth", "1", "--channels", "keep", str(tmp / "o.tns")]) == 0
    out = cio.load_checkpoint(tmp / "o.tns")
    for name in ckpt.names():
        assert out[name].tobytes() == ckpt[name].tobytes()
    assert out["embed.kernel"].shape == (8, 3, 1, 4, 4)


def test_inflate_average_channels(files):
    tmp, _, _ = files
    assert main(["inflate", str(tmp / "w2d.tns"), "--strategy", "average", "--depth", "3",
                 "--channels", "average:4", str(tmp / "o.tns")]) == 0
    assert cio.load_checkpoint(tmp / "o.tns")["embed.kernel"].shape == (8, 4, 3, 4, 4)


def test_missing_input_exit_2(tmp_path, capsys):
    missing = tmp_path / "nope.tns"
    assert main(["inflate", str(missing), str(tmp_path / "o.tns")]) == 2
    assert str(missing) in capsys.readouterr().err


def test_parse_errors_exit_1(files):
    tmp, _, _ = files
    assert main(["inflate", str(tmp / "w2d.tns")]) == 1
    assert main(["inflate", str(tmp / "w2d.tns"), str(tmp / "o"), "--strategy", "bogus"]) == 1
    assert main(["inflate", str(tmp / "w2d.tns"), str(tmp / "o"), "--channels", "average:x"]) == 1
    assert main(["frobnicate"]) == 1


def test_validation_error_exit_3(files):
    tmp, _, _ = files
    (tmp / "bad.tns").write_bytes(b"\x05\x00\x00\x00\x00\x00\x00\x00{nope")
    assert main(["inflate", str(tmp / "bad.tns"), str(tmp / "o.tns")]) == 3


def test_options_file(files):
    tmp, _, _ = files
    (tmp / "opts.json").write_text(json.dumps({"strategy": "average", "depth": 3}))
    assert main(["inflate", str(tmp / "w2d.tns"), str(tmp / "o.tns"), "--options", str(tmp / "opts.json"),
                 "--depth", "7"]) == 0
    spec = InflationSpec.from_json(cio.load_checkpoint(tmp / "o.tns").metadata["inflation_spec"])
    assert spec.strategy is Strategy.AVERAGE and spec.depth == 7
    (tmp / "bad.json").write_text(json.dumps({"strategy": "average", "colour": "red"}))
    assert main(["inflate", str(tmp / "w2d.tns"), str(tmp / "o.tns"), "--options", str(tmp / "bad.json")]) == 1


def test_predict_matches_library(files):
    tmp, cfg, ckpt = files
    assert main(["predict", str(tmp / "w2d.tns"), str(tmp / "ct.vol"), str(tmp / "p.msk"), "--window", "1"]) == 0
    got = cio.load_volume(tmp / "p.msk")
    ref = predict_volume(cio.load_volume(tmp / "ct.vol"), ckpt, cfg, WindowSpec(1))
    assert got.data.tobytes() == ref.data.tobytes()


def test_predict_centering_equals_2d(files):
    tmp, _, _ = files
    main(["inflate", str(tmp / "w2d.tns"), "--strategy", "centering", "--depth", "5", str(tmp / "w3d.tns")])
    main(["predict", str(tmp / "w2d.tns"), str(tmp / "ct.vol"), str(tmp / "a.msk")])
    assert main(["predict", str(tmp / "w3d.tns"), str(tmp / "ct.vol"), str(tmp / "b.msk"), "--threads", "3"]) == 0
    np.testing.assert_array_equal(cio.load_volume(tmp / "a.msk").data, cio.load_volume(tmp / "b.msk").data)


def test_predict_resolution_mismatch_exit_3(files, rng):
    tmp, _, _ = files
    cio.save(Volume(rng.standard_normal((12, 12, 3))), tmp / "big.vol")
    assert main(["predict", str(tmp / "w2d.tns"), str(tmp / "big.vol"), str(tmp / "p.msk")]) == 3


def test_evaluate(files, capsys):
    tmp, _, _ = files
    a = np.zeros((4, 4, 2), dtype=int)
    a[:2] = 1
    b = np.zeros_like(a)
    b[2:] = 1
    cio.save(SegmentationMask(a, 2), tmp / "a.msk")
    cio.save(SegmentationMask(b, 2), tmp / "b.msk")
    assert main(["evaluate", str(tmp / "a.msk"), str(tmp / "a.msk"), "--classes", "1"]) == 0
    assert json.loads(capsys.readouterr().out)["mean_dsc"] == 1.0
    assert main(["evaluate", str(tmp / "a.msk"), str(tmp / "b.msk"), "--classes", "1", "--out", str(tmp / "r.json")]) == 0
    assert json.loads((tmp / "r.json").read_text())["mean_dsc"] == 0.0


def test_verify_random_and_given(files, capsys):
    tmp, _, _ = files
    assert main(["verify"]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert lines and all(line.startswith("[PASS]") for line in lines)
    assert main(["verify", str(tmp / "w2d.tns"), "--config", str(tmp / "cfg.json"), "--depth", "1"]) == 0


def test_verify_detects_corrupted_kernel(files, capsys):
    tmp, cfg, ckpt = files
    main(["inflate", str(tmp / "w2d.tns"), "--depth", "5", str(tmp / "w3d.tns")])
    good = cio.load_checkpoint(tmp / "w3d.tns")
    assert main(["verify", str(tmp / "w2d.tns"), "--inflated", str(tmp / "w3d.tns")]) == 0
    tensors = dict(good.tensors)
    kernel = tensors["embed.kernel"].copy()
    # a per-feature-constant shift would vanish in layer norm, so corrupt with noise
    kernel[:, :, 0] = np.random.default_rng(0).normal(0, 0.05, kernel[:, :, 0].shape)
    tensors["embed.kernel"] = kernel
    cio.save(Checkpoint(tensors, good.metadata), tmp / "bad.tns")
    capsys.readouterr()
    assert main(["verify", str(tmp / "w2d.tns"), "--inflated", str(tmp / "bad.tns")]) == 4
    out = capsys.readouterr().out
    assert "[FAIL] centering kernel structure" in out
    assert "[FAIL] centering forward equivalence" in out


def test_flops(tmp_path, capsys):
    a, b = ViTConfig.base(in_channels=3), ViTConfig.base(in_channels=1, window_k=5)
    (tmp_path / "a.json").write_text(a.to_json())
    (tmp_path / "b.json").write_text(b.to_json())
    assert main(["flops", "--config", str(tmp_path / "a.json"), "--compare", str(tmp_path / "b.json")]) == 0
    out = json.loads(capsys.readouterr().out)
    assert 1.001 <= out["ratio"] <= 1.015
    assert main(["flops", "--config", str(tmp_path / "a.json"), "--compare", str(tmp_path / "a.json")]) == 0
    assert json.loads(capsys.readouterr().out)["ratio"] == 1.0
    assert main(["flops", "--preset", "vit-b16"]) == 0
    assert json.loads(capsys.readouterr().out)["ratio"] == out["ratio"]


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "vitinflate", "flops", "--preset", "vit-b16"],
                          capture_output=True, text=True)
    assert proc.returncode == 0
    assert "ratio" in json.loads(proc.stdout)

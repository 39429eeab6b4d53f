import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from pagsr.cli import load_config, main
from pagsr.data import DegradationSpec, bicubic_resample, degrade, load_image, read_raw, save_image, write_synthetic_dataset
from pagsr.evaluate import dump_features, eval_dataset, guidance_features, infer, rmse
from pagsr.model import ModelConfig, init_weights, zero_weights
from pagsr.weights_io import save_weights


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("data")
    write_synthetic_dataset(root, 2, 64, seed=0)
    return root


# --------------------------------------------------------------------- rmse

def test_rmse_values():
    a = np.random.default_rng(0).random((5, 5))
    assert rmse(a, a) == 0.0
    assert rmse(np.full((3, 3), 0.5 + 5 / 255), np.full((3, 3), 0.5)) == pytest.approx(5.0, abs=1e-12)


def test_rmse_direct_summation():
    rng = np.random.default_rng(1)
    a, b = rng.random((6, 7)), rng.random((6, 7))
    acc = 0.0
    for x, y in zip(a.ravel().tolist(), b.ravel().tolist()):
        acc += ((x - y) * 255) ** 2
    assert rmse(a, b) == pytest.approx(math.sqrt(acc / a.size), abs=1e-9)


def test_rmse_mask_and_errors():
    gt = np.array([[0.0, 0.5], [0.5, 0.5]])
    pred = np.array([[1.0, 0.5], [0.5, 0.5]])
    assert rmse(pred, gt, valid_only=True) == 0.0
    assert rmse(pred, gt) > 0
    with pytest.raises(ValueError):
        rmse(np.zeros((2, 2)), np.zeros((2, 3)))


# quantised maps, as loaded from 16-bit files
maps = arrays(np.int64, (3, 4), elements=st.integers(0, 65535)).map(lambda a: a / 65535.0)


@given(maps, maps, maps)
def test_rmse_metric(a, b, c):
    assert rmse(a, b) == pytest.approx(rmse(b, a))
    assert rmse(a, c) <= rmse(a, b) + rmse(b, c) + 1e-9
    assert (rmse(a, b) == 0) == np.array_equal(a, b)


# ------------------------------------------------------------------ dataset

def test_eval_rows_and_identity_scale(dataset):
    rep = eval_dataset(_pairs(dataset), ["bicubic"], [1, 2, 4])
    assert len(rep.rows) == 2 * 3 * 1
    assert all(r.rmse == 0.0 for r in rep.rows if r.scale == 1)
    assert all(r.rmse > 0 for r in rep.rows if r.scale > 1)
    keys = [(r.image, r.scale, r.method) for r in rep.rows]
    assert keys == sorted(keys) and len(set(keys)) == len(keys)


def _pairs(root):
    from pagsr.data import load_pairs
    return load_pairs(root)


def test_eval_missing_weights_continues(dataset):
    rep = eval_dataset(_pairs(dataset), ["bicubic", "pagnet"], [2, 4], {2: zero_weights(ModelConfig(1, 4, 1, 2, 4))})
    assert len(rep.rows) == 2 * 2 * 2
    bad = [r for r in rep.rows if r.error]
    assert {(r.scale, r.method) for r in bad} == {(4, "pagnet")}
    # a zero-weight x2 model is the bicubic baseline (up to the [0, 1] clamp)
    by = {(r.image, r.scale, r.method): r.rmse for r in rep.rows}
    for name, _, _ in _pairs(dataset):
        assert by[(name, 2, "pagnet")] <= by[(name, 2, "bicubic")] + 1e-4


def test_eval_pure_and_crops(dataset):
    pairs = [(n, d[:, :62], c[:, :, :62]) for n, d, c in _pairs(dataset)]
    a = eval_dataset(pairs, ["bicubic"], [2, 4])
    b = eval_dataset(pairs, ["bicubic"], [2, 4])
    assert a.to_csv() == b.to_csv()
    assert "scene000@4" in a.metadata["crops"]
    assert a.metadata["config_hash"] == b.metadata["config_hash"]
    assert "scene000" in a.to_table().splitlines()[0]


# -------------------------------------------------------------------- infer

@pytest.fixture()
def model_files(tmp_path, dataset):
    cfg = ModelConfig(1, 4, 1, 2, 4)
    zero = tmp_path / "zero.pagw"
    rand = tmp_path / "rand.pagw"
    save_weights(zero_weights(cfg), zero)
    save_weights(init_weights(cfg), rand)
    hr = load_image(dataset / "scene000_depth.png")
    lr_path = tmp_path / "lr.png"
    save_image(degrade(hr, DegradationSpec(2)), lr_path, bits=16)
    return zero, rand, lr_path, dataset / "scene000_rgb.png"


def test_infer_zero_model_is_bicubic(tmp_path, model_files):
    zero, _, lr, rgb = model_files
    out = infer(zero, lr, rgb, tmp_path / "o.png")
    assert out.shape == (64, 64)
    expected = np.clip(bicubic_resample(load_image(lr), 64, 64), 0, 1)
    q, _ = read_raw(tmp_path / "o.png")
    assert np.max(np.abs(q / 65535.0 - expected)) <= 0.5 / 65535 + 1e-7


def test_infer_deterministic_and_ratio_error(tmp_path, model_files):
    _, rand, lr, rgb = model_files
    infer(rand, lr, rgb, tmp_path / "a.png")
    infer(rand, lr, rgb, tmp_path / "b.png")
    assert (tmp_path / "a.png").read_bytes() == (tmp_path / "b.png").read_bytes()
    with pytest.raises(ValueError, match="ratio 2"):
        infer(rand, rgb.with_name("scene000_depth.png"), rgb, tmp_path / "c.png")


# ------------------------------------------------------------ feature dumps

def test_feature_variants_related_by_attention(tmp_path):
    cfg = ModelConfig(2, 8, 1, 4, 6, init_gain=6 ** -0.5)
    mw = init_weights(cfg)
    rng = np.random.default_rng(3)
    lr, rgb = rng.random((4, 4)).astype(np.float32), rng.random((3, 16, 16)).astype(np.float32)
    f = guidance_features(mw, lr, rgb, 2)
    np.testing.assert_array_equal(f["with_attention"], f["without_attention"] * f["attention"][None])
    assert np.all((f["attention"] > 0) & (f["attention"] < 1))
    feats = dump_features(mw, lr, rgb, 1, "without_attention", tmp_path)
    pngs = sorted(tmp_path.glob("stage1_without_attention_ch*.png"))
    assert len(pngs) == cfg.guidance_channels
    assert (tmp_path / "stage1_attention.png").exists()
    assert feats["attention"].shape == (8, 8)
    with pytest.raises(ValueError):
        guidance_features(mw, lr, rgb, 3)


# ---------------------------------------------------------------------- CLI

def test_cli_degrade_infer_eval_dump(tmp_path, dataset, model_files, capsys):
    zero, rand, lr, rgb = model_files
    out = tmp_path / "lr.pgm"
    assert main(["degrade", "--factor", "4", "--sigma", "5", "--seed", "2",
                 "--input", str(dataset / "scene001_depth.png"), "--out", str(out)]) == 0
    assert load_image(out).shape == (16, 16)
    assert main(["infer", "--weights", str(rand), "--depth", str(lr), "--rgb", str(rgb),
                 "--out", str(tmp_path / "sr.pgm")]) == 0
    assert load_image(tmp_path / "sr.pgm").shape == (64, 64)
    rep = tmp_path / "r.csv"
    assert main(["eval", "--data", str(dataset), "--scales", "2,4", "--methods", "bicubic,pagnet",
                 "--weights", str(zero), "--report", str(rep)]) == 0
    lines = rep.read_text().splitlines()
    assert lines[0] == "image,scale,method,rmse,error" and len(lines) == 1 + 2 * 2 * 2
    assert main(["dump-features", "--weights", str(rand), "--depth", str(lr), "--rgb", str(rgb),
                 "--stage", "1", "--variant", "with", "--out-dir", str(tmp_path / "f")]) == 0
    assert len(list((tmp_path / "f").glob("*_ch*.png"))) == 4


def test_cli_error_is_one_json_line(tmp_path, capsys):
    code = main(["degrade", "--factor", "3", "--input", str(tmp_path / "nope.png"), "--out", str(tmp_path / "x.png")])
    assert code != 0
    err = capsys.readouterr().err.strip().splitlines()
    assert len(err) == 1
    msg = json.loads(err[0])
    assert msg["error"] and msg["message"]


def test_cli_train(tmp_path, dataset):
    cfg = tmp_path / "c.toml"
    cfg.write_text("upsample_exponent = 1\nbase_channels = 4\nrdb_layers = 1\ngrowth_rate = 2\n"
                   "guidance_channels = 4\nbatch_size = 4\nepochs = 1\nlearning_rate = 1e-3\n"
                   "patch_size = 32\npatch_stride = 32\naugment = false\n")
    out = tmp_path / "w.pagw"
    assert main(["train", "--config", str(cfg), "--data", str(dataset), "--out", str(out)]) == 0
    assert out.exists()
    hist = (tmp_path / "w.pagw.loss.csv").read_text().splitlines()
    assert hist[0] == "step,epoch,loss,l1,l2" and len(hist) == 1 + 2


def test_config_validation(tmp_path):
    p = tmp_path / "c.toml"
    p.write_text("upsample_exponent = 2\nscale = 4\nbatch_size = 8\n")
    m, t, d = load_config(p)
    assert m.factor == 4 and t.scale == 4 and d["patch_size"] == 256
    p.write_text("upsample_exponent = 2\nscale = 8\n")
    with pytest.raises(ValueError, match="scale"):
        load_config(p)
    p.write_text("bogus = 1\n")
    with pytest.raises(ValueError, match="unknown"):
        load_config(p)

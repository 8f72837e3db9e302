"""Config schema, checkpoint format, SVG plots, CLI pipeline."""

import numpy as np
import pytest

from spjscc.harness.checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from spjscc.harness.cli import main
from spjscc.harness.config import ConfigError, default_config, parse_config
from spjscc.harness.plots import PlotError, emit_plots, read_results_csv


# ---------------------------------------------------------------------------
# config
# ---------------------------------------------------------------------------


def test_config_defaults_and_overrides():
    cfg = parse_config("train.epochs = 3\neval.seeds = 1,2,3\n# comment\n")
    assert cfg["train.epochs"] == 3
    assert cfg["eval.seeds"] == [1, 2, 3]
    assert cfg["train.batch"] == 32  # untouched default


def test_config_unknown_key_rejected():
    with pytest.raises(ConfigError, match="unknown key"):
        parse_config("train.warmup = 5\n")


def test_config_bad_value_rejected():
    with pytest.raises(ConfigError, match="bad value"):
        parse_config("train.epochs = soon\n")


def test_config_hash_stable_and_sensitive():
    a = parse_config("train.epochs = 3\n")
    b = parse_config("# differently written\ntrain.epochs =   3\n")
    c = parse_config("train.epochs = 4\n")
    assert a.config_hash() == b.config_hash()
    assert a.config_hash() != c.config_hash()
    assert default_config().config_hash() == parse_config("").config_hash()


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------


def _toy_params(seed=0):
    rng = np.random.default_rng(seed)
    return {
        "layer.w": rng.normal(size=(4, 3)).astype(np.float32),
        "layer.b": rng.normal(size=(3,)).astype(np.float32),
    }


def test_checkpoint_round_trip_forward_equality(tmp_path):
    params = _toy_params()
    path = tmp_path / "m.ckpt"
    save_checkpoint(params, "toy", path, meta={"note": "x"})
    loaded, kind, meta = load_checkpoint(path)
    assert kind == "toy" and meta["note"] == "x"
    rng = np.random.default_rng(5)
    for _ in range(5):  # probe inputs
        x = rng.normal(size=(2, 4)).astype(np.float32)
        np.testing.assert_array_equal(x @ params["layer.w"] + params["layer.b"], x @ loaded["layer.w"] + loaded["layer.b"])


def test_checkpoint_save_load_save_byte_identical(tmp_path):
    params = _toy_params(1)
    save_checkpoint(params, "toy", tmp_path / "a.ckpt")
    loaded, _, _ = load_checkpoint(tmp_path / "a.ckpt")
    save_checkpoint(loaded, "toy", tmp_path / "b.ckpt")
    assert (tmp_path / "a.ckpt").read_bytes() == (tmp_path / "b.ckpt").read_bytes()


def test_checkpoint_truncated_blob_rejected_with_offset(tmp_path):
    save_checkpoint(_toy_params(), "toy", tmp_path / "m.ckpt")
    blob = (tmp_path / "m.ckpt").read_bytes()
    (tmp_path / "m.ckpt").write_bytes(blob[:-8])
    with pytest.raises(CheckpointError, match="truncated at byte"):
        load_checkpoint(tmp_path / "m.ckpt")


def test_checkpoint_version_mismatch_rejected(tmp_path):
    save_checkpoint(_toy_params(), "toy", tmp_path / "m.ckpt")
    blob = (tmp_path / "m.ckpt").read_bytes()
    (tmp_path / "m.ckpt").write_bytes(blob.replace(b"spjscc-checkpoint v1", b"spjscc-checkpoint v9", 1))
    with pytest.raises(CheckpointError, match="version"):
        load_checkpoint(tmp_path / "m.ckpt")


def test_checkpoint_corrupted_blob_hash_rejected(tmp_path):
    save_checkpoint(_toy_params(), "toy", tmp_path / "m.ckpt")
    blob = bytearray((tmp_path / "m.ckpt").read_bytes())
    blob[-1] ^= 0xFF
    (tmp_path / "m.ckpt").write_bytes(bytes(blob))
    with pytest.raises(CheckpointError, match="hash"):
        load_checkpoint(tmp_path / "m.ckpt")


def test_checkpoint_kind_check(tmp_path):
    save_checkpoint(_toy_params(), "classifier", tmp_path / "m.ckpt")
    with pytest.raises(CheckpointError, match="kind"):
        load_checkpoint(tmp_path / "m.ckpt", expected_kind="codec-sp")


# ---------------------------------------------------------------------------
# plots
# ---------------------------------------------------------------------------


_CSV = """# config_hash=abc
run_id,loss_mode,snr_db,seed,cpp,acc,f1,psnr_db,ssim
r,sp,0,1,0.5,0.30,0.28,12.0,0.40
r,sp,0,2,0.5,0.32,0.30,12.2,0.41
r,sp,5,1,0.5,0.50,0.47,14.0,0.55
r,sp,10,1,0.5,0.66,0.64,16.0,0.66
r,sp,15,1,0.5,0.71,0.69,17.0,0.71
r,sp,20,1,0.5,0.74,0.72,18.0,0.74
r,mse,0,1,0.5,0.28,0.27,12.1,0.41
r,mse,5,1,0.5,0.44,0.42,14.1,0.56
r,mse,10,1,0.5,0.60,0.58,16.1,0.67
r,mse,15,1,0.5,0.66,0.64,17.1,0.72
r,mse,20,1,0.5,0.69,0.67,18.1,0.75
"""


def test_plots_structure_two_polylines_five_vertices(tmp_path):
    (tmp_path / "r.csv").write_text(_CSV)
    written = emit_plots(tmp_path / "r.csv", tmp_path / "plots", config_hash="abc")
    assert sorted(p.name for p in written) == ["acc.svg", "cpp.svg", "f1.svg", "psnr_db.svg", "ssim.svg"]
    svg = (tmp_path / "plots" / "acc.svg").read_text()
    polylines = [l for l in svg.splitlines() if "<polyline" in l]
    assert len(polylines) == 2  # one per loss mode
    for line in polylines:
        points = line.split('points="')[1].split('"')[0].split()
        assert len(points) == 5  # one vertex per SNR
    assert "config_hash=abc" in svg
    assert "legend" not in svg  # legend is drawn as line+text pairs
    assert svg.count(">sp</text>") == 1 and svg.count(">mse</text>") == 1


def test_plots_identical_input_identical_bytes(tmp_path):
    (tmp_path / "r.csv").write_text(_CSV)
    emit_plots(tmp_path / "r.csv", tmp_path / "p1", config_hash="abc")
    emit_plots(tmp_path / "r.csv", tmp_path / "p2", config_hash="abc")
    for name in ("acc.svg", "psnr_db.svg", "cpp.svg"):
        assert (tmp_path / "p1" / name).read_bytes() == (tmp_path / "p2" / name).read_bytes()


def test_plots_missing_column_named(tmp_path):
    bad = _CSV.replace("psnr_db", "psnr")
    (tmp_path / "r.csv").write_text(bad)
    with pytest.raises(PlotError, match="psnr_db"):
        emit_plots(tmp_path / "r.csv", tmp_path / "plots")


def test_plots_empty_csv_rejected(tmp_path):
    (tmp_path / "r.csv").write_text("# config_hash=abc\n")
    with pytest.raises(PlotError, match="empty"):
        read_results_csv(tmp_path / "r.csv")
    (tmp_path / "r2.csv").write_text("run_id,loss_mode,snr_db,seed,cpp,acc,f1,psnr_db,ssim\n")
    with pytest.raises(PlotError, match="no data rows"):
        read_results_csv(tmp_path / "r2.csv")


# ---------------------------------------------------------------------------
# CLI
# ---------------------------------------------------------------------------


TINY_CFG = """
dataset.train_count = 60
dataset.test_count = 20
classifier.epochs = 2
train.epochs = 1
train.batch = 20
eval.snr_grid = 5,15
eval.seeds = 1,2
"""


def _cfg_file(tmp_path):
    p = tmp_path / "exp.cfg"
    p.write_text(TINY_CFG)
    return str(p)


def test_cli_extract_weights_requires_classifier(tmp_path, capsys):
    cfg = _cfg_file(tmp_path)
    rc = main(["extract-weights", "--config", cfg, "--out", str(tmp_path / "run")])
    assert rc == 1
    err = capsys.readouterr().err
    assert "classifier" in err and "pretrain-classifier" in err


def test_cli_train_sp_requires_weight_cache(tmp_path, capsys):
    cfg = _cfg_file(tmp_path)
    rc = main(["train", "--loss", "sp", "--config", cfg, "--out", str(tmp_path / "run")])
    assert rc == 1
    assert "weight" in capsys.readouterr().err


def test_cli_missing_config_is_error(tmp_path, capsys):
    rc = main(["plot", "--config", str(tmp_path / "nope.cfg"), "--out", str(tmp_path / "run")])
    assert rc == 1
    assert "config" in capsys.readouterr().err


@pytest.mark.slow
def test_cli_full_pipeline_and_determinism(tmp_path, capsys):
    cfg = _cfg_file(tmp_path)
    out = str(tmp_path / "run")
    for cmd in (
        ["pretrain-classifier", "--config", cfg, "--out", out],
        ["extract-weights", "--config", cfg, "--out", out],
        ["train", "--loss", "sp", "--config", cfg, "--out", out],
        ["train", "--loss", "mse", "--config", cfg, "--out", out],
        ["compare", "--config", cfg, "--out", out],
    ):
        assert main(cmd) == 0, f"{cmd} failed: {capsys.readouterr().err}"

    compare = tmp_path / "run" / "compare.csv"
    assert compare.exists()
    rows = read_results_csv(compare)
    assert len(rows) == 8  # 2 modes x 2 snr x 2 seeds
    assert {r["loss_mode"] for r in rows} == {"sp", "mse"}
    for name in ("acc.svg", "f1.svg", "psnr_db.svg", "ssim.svg", "cpp.svg"):
        assert (tmp_path / "run" / "plots" / name).exists()

    # byte-identical rerun of evaluation with unchanged config + seed
    first = compare.read_bytes()
    assert main(["compare", "--config", cfg, "--out", out]) == 0
    assert compare.read_bytes() == first

    # stage idempotence: re-running pretrain reproduces the checkpoint bytes
    ckpt = (tmp_path / "run" / "classifier.ckpt").read_bytes()
    assert main(["pretrain-classifier", "--config", cfg, "--out", out]) == 0
    assert (tmp_path / "run" / "classifier.ckpt").read_bytes() == ckpt

    # artifacts record the config hash they were produced from
    from spjscc.harness.config import load_config

    chash = load_config(cfg).config_hash()
    assert f"# config_hash={chash}" in compare.read_text()
    assert f"# config_hash={chash}" in (tmp_path / "run" / "trainlog_sp.csv").read_text()
    assert f"config_hash={chash}" in (tmp_path / "run" / "plots" / "acc.svg").read_text()

    # single-snr override writes a per-mode results file
    assert main(["evaluate", "--loss", "sp", "--config", cfg, "--out", out, "--snr", "5"]) == 0
    res = read_results_csv(tmp_path / "run" / "results_sp.csv")
    assert {float(r["snr_db"]) for r in res} == {5.0}

import csv
import os
import shutil

import numpy as np
import pytest
from scipy import ndimage

from lumbarseg import cli
from lumbarseg.phantom import ground_truth_box, read_manifest
from lumbarseg.volume import SAGITTAL, extract_slice, load_labels, load_volume

TINY = ["--toy", "--set", "phantom_train=3", "--set", "phantom_test=2", "--set", "loc_epochs=3",
        "--set", "loc_features=40", "--set", "seg_epochs_binary=2", "--set", "seg_epochs_multi=2"]


def run(*argv):
    return cli.main([str(a) for a in argv])


@pytest.fixture(scope="module")
def pipeline_run(tmp_path_factory):
    root = tmp_path_factory.mktemp("pipe")
    assert run("pipeline", "--run", root / "a", "--seed", 3, *TINY) == 0
    return root / "a"


def rows(path):
    with open(path) as fh:
        return [r for r in csv.reader(fh) if r and not r[0].startswith("#")]


# ---------------------------------------------------------------- configuration


def test_config_layering(tmp_path):
    path = tmp_path / "c.txt"
    path.write_text("# comment\nloc_epochs = 77\nseg_levels = 4   # trailing\ntoy = true\n")
    file_values = cli.read_config_file(str(path))
    cfg = cli.resolve_config(file_values, {"seg_levels": "2"})
    assert cfg.loc_epochs == 77  # file beats the toy profile
    assert cfg.seg_levels == 2  # flag beats the file
    assert cfg.seg_base == cli.TOY_PROFILE["seg_base"]


def test_full_scale_defaults():
    cfg = cli.resolve_config({}, {})
    assert (cfg.loc_features, cfg.loc_epochs, cfg.loc_lr, cfg.loc_momentum) == (500, 1000, 1e-3, 0.9)
    assert (cfg.seg_epochs_binary, cfg.seg_epochs_multi, cfg.seg_lr) == (3000, 2000, 1e-4)
    assert cfg.loc_tolerance == 15 and cfg.deltas == (5, 10, 15, 20, 25)


@pytest.mark.parametrize("text,match", [
    ("bogus = 1\n", "unknown"),
    ("toy = maybe\n", "boolean"),
    ("loc_epochs = ten\n", "parse"),
    ("loc_epochs\n", "key = value"),
    ("loc_momentum = 1.5\n", "momentum"),
])
def test_bad_config(tmp_path, text, match):
    path = tmp_path / "c.txt"
    path.write_text(text)
    with pytest.raises(ValueError, match=match):
        cli.resolve_config(cli.read_config_file(str(path)), {})


def test_config_error_exit_code(tmp_path, capsys):
    assert run("eval", "--run", tmp_path, "--set", "seg_levels=0") == 1
    assert "[config]" in capsys.readouterr().err


# ---------------------------------------------------------------- phantom command


def test_phantom_command_is_deterministic(tmp_path, capsys):
    for name in ("a", "b"):
        assert run("phantom", "--toy", "--train", 2, "--test", 1, "--seed", 5,
                   "--out", tmp_path / name / "new") == 0
    assert capsys.readouterr().out.strip().endswith("manifest.txt")
    files = sorted(os.listdir(tmp_path / "a" / "new"))
    assert len(files) == 3 * 4 + 1
    for f in files:
        assert (tmp_path / "a" / "new" / f).read_bytes() == (tmp_path / "b" / "new" / f).read_bytes()


# ---------------------------------------------------------------- errors


def test_predict_without_checkpoint(tmp_path, capsys, pipeline_run):
    manifest = pipeline_run / "data" / "manifest.txt"
    assert run("localize", "predict", "--run", tmp_path / "r", "--manifest", manifest) == 1
    err = capsys.readouterr().err
    assert "[localize]" in err and "checkpoint" in err


def test_train_without_pretraining(tmp_path, capsys, pipeline_run):
    manifest = pipeline_run / "data" / "manifest.txt"
    assert run("segment", "train", "--run", tmp_path / "r", "--manifest", manifest, *TINY) == 1
    err = capsys.readouterr().err
    assert "[segment]" in err and "--scratch" in err


def test_missing_manifest(tmp_path, capsys):
    assert run("localize", "train", "--run", tmp_path, "--manifest", tmp_path / "nope.txt") == 1
    assert "does not exist" in capsys.readouterr().err


# ---------------------------------------------------------------- pipeline outputs


def test_run_record(pipeline_run):
    snapshot = cli.read_config_file(str(pipeline_run / "config.txt"))
    assert snapshot["seed"] == 3 and snapshot["loc_epochs"] == 3
    seeds = (pipeline_run / "seeds.txt").read_text()
    assert "segment_multi = 5" in seeds


def test_csv_schemas(pipeline_run):
    sens = rows(pipeline_run / "sensitivity.csv")
    assert sens[0] == ["case", "sensitivity"]
    assert [r[0] for r in sens[1:]] == ["case004", "case005", "mean"]
    dice = rows(pipeline_run / "dice.csv")
    assert dice[0] == ["case", "label", "dice"] and len(dice) == 1 + 2 * 6 + 2 * 6
    table = rows(pipeline_run / "dice_table.csv")
    assert table[0] == ["case", "L1", "L2", "L3", "L4", "L5", "Lumbar"]
    assert [r[0] for r in table[1:]] == ["case004", "case005", "mean", "std"]
    boxes = rows(pipeline_run / "boxes.csv")
    assert boxes[0] == ["case", "x_min", "x_max", "y_min", "y_max", "z_min", "z_max"]


def test_predictions_are_clean(pipeline_run):
    for case in read_manifest(str(pipeline_run / "data" / "manifest.txt")):
        if case.split != "test":
            continue
        pred = load_labels(str(pipeline_run / "predictions" / f"{case.case_id}_labels.mhd"))
        assert pred.dims == load_volume(case.image_path).dims
        for k in range(1, 6):
            _, n = ndimage.label(pred.data == k, structure=np.ones((3, 3, 3)))
            assert n <= 1


def test_figures_written(pipeline_run):
    for name in ("dice_boxplot.png", "losses.png"):
        assert (pipeline_run / "figures" / name).read_bytes()[:4] == b"\x89PNG"


def test_pipeline_is_deterministic(tmp_path, pipeline_run):
    assert run("pipeline", "--run", tmp_path / "b", "--seed", 3, *TINY) == 0
    for name in ("boxes.csv", "sensitivity.csv", "dice.csv", "dice_table.csv"):
        assert (tmp_path / "b" / name).read_bytes() == (pipeline_run / name).read_bytes()


# ---------------------------------------------------------------- eval with oracle inputs


def test_eval_on_ground_truth(tmp_path, pipeline_run):
    manifest = pipeline_run / "data" / "manifest.txt"
    out = tmp_path / "gt"
    (out / "predictions").mkdir(parents=True)
    for case in read_manifest(str(manifest)):
        stem = case.label_path[:-4]
        for ext in (".mhd", ".raw"):
            shutil.copy(stem + ext, out / "predictions" / f"{case.case_id}_labels{ext}")
    # the copied header still points at the original raw file name
    for mhd in (out / "predictions").glob("*.mhd"):
        text = mhd.read_text()
        mhd.write_text(text.replace(text.split("ElementDataFile = ")[1].strip(),
                                    mhd.name.replace(".mhd", ".raw")))
    assert run("eval", "--run", out, "--manifest", manifest) == 0
    table = rows(out / "dice_table.csv")
    assert all(float(v) == 100.0 for r in table[1:-1] for v in r[1:])

    case = read_manifest(str(manifest))[-1]
    vol, lab = case.load()
    img = cli.read_ppm(str(out / "overlays" / f"{case.case_id}_sagittal.ppm"))
    mid = vol.dims[0] // 2
    assert img.shape[:2] == extract_slice(vol, SAGITTAL, mid).shape
    lab_slice = extract_slice(lab, SAGITTAL, mid)[::-1]
    grey = img[lab_slice == 0]
    assert np.all(grey[:, 0] == grey[:, 1]) and np.all(grey[:, 1] == grey[:, 2])
    red = img[lab_slice == 1]
    assert np.all(red[:, 0] >= red[:, 1]) and np.all(red[:, 2] == red[:, 1])


def test_localize_eval_on_ground_truth_boxes(tmp_path, pipeline_run):
    manifest = pipeline_run / "data" / "manifest.txt"
    rows_ = [(c.case_id, ground_truth_box(load_labels(c.label_path)))
             for c in read_manifest(str(manifest)) if c.split == "test"]
    (tmp_path / "r").mkdir()
    cli.write_boxes_csv(str(tmp_path / "r" / "boxes.csv"), rows_)
    assert run("localize", "eval", "--run", tmp_path / "r", "--manifest", manifest) == 0
    assert [r[1] for r in rows(tmp_path / "r" / "sensitivity.csv")[1:]] == ["1.0000"] * 3


def test_palette_blend():
    img = np.full((1, 6), 1000.0)
    rgb = cli.overlay_rgb(img, np.arange(6).reshape(1, 6))
    np.testing.assert_array_equal(rgb[0, 0], [255, 255, 255])
    np.testing.assert_array_equal(rgb[0, 1], [255, 128, 128])
    np.testing.assert_array_equal(rgb[0, 5], [255, 128, 255])


def test_ppm_round_trip_with_whitespace_bytes(tmp_path):
    # pixel bytes 9-13 and 32 are whitespace; they must not be eaten by the header parser
    img = np.array([[[10, 32, 9], [13, 200, 0]], [[255, 11, 12], [1, 2, 3]]], dtype=np.uint8)
    path = str(tmp_path / "x.ppm")
    cli.write_ppm(path, img)
    np.testing.assert_array_equal(cli.read_ppm(path), img)

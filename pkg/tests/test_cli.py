import csv
import logging

import numpy as np
import pytest

from app.imaging import ImageBuf, read_image, write_image
from app.main import EXIT_DATA, EXIT_OK, EXIT_USAGE, main
from app.network import init_model, save_model, zero_model
from app.sampler import load_dataset
from app.schemas import ArchConfig
from app.utils import compute_file_hash, rng_for


@pytest.fixture
def synth_dir(tmp_path):
    out = tmp_path / "data"
    assert main(["synth", "--count", "2", "--seed", "7", "--out", str(out)]) == EXIT_OK
    return out


@pytest.fixture
def zero_model_file(tmp_path):
    path = tmp_path / "zero.dift"
    save_model(zero_model(ArchConfig()), str(path))
    return path


@pytest.fixture
def noise_image(tmp_path):
    path = tmp_path / "noise.ppm"
    rng = np.random.default_rng(4)
    write_image(str(path), ImageBuf(rng.integers(0, 256, size=(60, 60, 3), dtype=np.uint8)))
    return path


def test_synth_writes_images_and_landmarks(synth_dir):
    assert sorted(p.name for p in synth_dir.iterdir()) == ["000001.ppm", "000002.ppm", "landmarks.txt"]
    assert (synth_dir / "landmarks.txt").read_text().splitlines()[0] == "2"
    dataset = load_dataset(str(synth_dir), str(synth_dir / "landmarks.txt"))
    assert [d.id for d in dataset] == ["000001.ppm", "000002.ppm"]
    assert dataset[0].image.width == 178


def test_synth_is_byte_reproducible(synth_dir, tmp_path):
    again = tmp_path / "again"
    assert main(["synth", "--count", "2", "--seed", "7", "--out", str(again)]) == EXIT_OK
    for name in ("000001.ppm", "000002.ppm", "landmarks.txt"):
        assert (synth_dir / name).read_bytes() == (again / name).read_bytes()


def test_seed_is_mandatory(tmp_path):
    assert main(["synth", "--count", "1", "--out", str(tmp_path)]) == EXIT_USAGE
    assert main(["frobnicate"]) == EXIT_USAGE


def test_train_without_landmarks_writes_nothing(synth_dir, tmp_path):
    out = tmp_path / "run" / "model.dift"
    code = main(
        ["train", "--images", str(synth_dir), "--landmarks", str(tmp_path / "missing.txt"), "--seed", "1", "--out", str(out)]
    )
    assert code == EXIT_DATA
    assert not out.exists()


def test_train_with_zero_lr_dumps_the_initial_model(synth_dir, tmp_path):
    out = tmp_path / "run" / "model.dift"
    args = ["train", "--images", str(synth_dir), "--landmarks", str(synth_dir / "landmarks.txt")]
    args += ["--batches", "2", "--batchsize", "4", "--lr", "0", "--seed", "5", "--out", str(out)]
    assert main(args) == EXIT_OK
    reference = tmp_path / "init.dift"
    save_model(init_model(ArchConfig(), rng_for(5, "init")), str(reference))
    assert out.read_bytes() == reference.read_bytes()
    rows = (tmp_path / "run" / "loss.csv").read_text().splitlines()
    assert rows[0] == "batch,loss,running_mean"
    assert len(rows) == 3


def test_heatmap_with_quantized_variant(zero_model_file, noise_image, tmp_path):
    out = tmp_path / "maps"
    args = ["heatmap", "--model", str(zero_model_file), "--image", str(noise_image), "--quantize", "--out", str(out)]
    assert main(args) == EXIT_OK
    names = sorted(p.name for p in out.iterdir())
    assert "heatmap.ppm" in names and "overlay.ppm" in names
    assert "quantized.ppm" in names and "quantized_c2.pgm" in names
    assert read_image(str(out / "heatmap_c0.pgm")).width == 60


def test_detect_zero_model_gives_empty_body(zero_model_file, noise_image, tmp_path):
    for mode in ("dense", "saccade"):
        out = tmp_path / mode
        args = ["detect", "--model", str(zero_model_file), "--image", str(noise_image), "--mode", mode, "--out", str(out)]
        assert main(args) == EXIT_OK
        lines = (out / "detections.csv").read_text().splitlines()
        assert lines[0] == "channel,x,y,score,evals"
        assert len(lines) == 2
        assert lines[1].startswith("# evals=")
        assert (out / "annotated.ppm").exists()


def test_detect_rejects_image_smaller_than_patch(zero_model_file, tmp_path):
    tiny = tmp_path / "tiny.pgm"
    write_image(str(tiny), ImageBuf(np.zeros((20, 20), dtype=np.uint8)))
    args = ["detect", "--model", str(zero_model_file), "--image", str(tiny), "--out", str(tmp_path / "d")]
    assert main(args) == EXIT_DATA


def test_benchmark_single_image(zero_model_file, noise_image, tmp_path):
    report = tmp_path / "bench.csv"
    images = noise_image.parent
    assert main(["benchmark", "--model", str(zero_model_file), "--images", str(images), "--out", str(report)]) == EXIT_OK
    with open(report, newline="") as f:
        rows = list(csv.reader(f))
    assert rows[0][:4] == ["image", "dense_evals", "saccade_evals", "ratio"]
    assert len(rows) == 3
    assert rows[1][0] == "noise.ppm"
    assert rows[1][1] == str(26 * 26)
    assert rows[2][0] == "mean"


def test_kernels_command(tmp_path):
    model_path = tmp_path / "m.dift"
    save_model(init_model(ArchConfig(), rng_for(0, "init")), str(model_path))
    out = tmp_path / "kernels"
    assert main(["kernels", "--model", str(model_path), "--out", str(out)]) == EXIT_OK
    assert len(list(out.glob("kernel_*.pgm"))) == 9


def test_missing_model_is_data_error(noise_image, tmp_path):
    args = ["heatmap", "--model", str(tmp_path / "none.dift"), "--image", str(noise_image), "--out", str(tmp_path)]
    assert main(args) == EXIT_DATA


def test_loading_a_model_logs_its_digest(zero_model_file, tmp_path, caplog):
    caplog.set_level(logging.INFO, logger="cli")
    assert main(["kernels", "--model", str(zero_model_file), "--out", str(tmp_path / "k")]) == EXIT_OK
    assert f"sha256 {compute_file_hash(str(zero_model_file), 12)}" in caplog.text
    assert "279786 parameters" in caplog.text

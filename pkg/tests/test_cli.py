import io

import numpy as np
import pytest

from virtualcodec import cli, codec, evaluate
from virtualcodec.image import ResampleMethod, load_image, psnr, resample, save_image
from virtualcodec.networks import FDNN, PPNN, build_network, save_checkpoint
from virtualcodec.sample_data import test_images as sample_test_images


@pytest.fixture(scope="module")
def ckdir(tmp_path_factory):
    d = tmp_path_factory.mktemp("ck")
    save_checkpoint(build_network(FDNN, seed=0, width=8), d / "fdnn_final.ckpt")
    save_checkpoint(build_network(PPNN, seed=1, width=8), d / "ppnn_final.ckpt")
    return d


@pytest.fixture(scope="module")
def images():
    return {k: v[:64, :64] for k, v in list(sample_test_images(size=64).items())[:3]}


@pytest.fixture
def photo(tmp_path):
    x = sample_test_images(size=160)["camera"]
    path = tmp_path / "camera.png"
    save_image(path, x)
    return path


# pipeline functions

def test_pipeline_halves_then_restores(images):
    f, p = build_network(FDNN, width=8), build_network(PPNN, seed=1, width=8)
    x = images["camera"]
    bs = evaluate.compress(x, f, 10)
    assert bs.coded_dims == (32, 32) and bs.original_dims == (64, 64)
    out = evaluate.decompress(bs, p)
    assert out.shape == x.shape and out.min() >= 0 and out.max() <= 1


def test_untrained_pipeline_is_a_plain_resampler(images):
    # with the interpolating init the untrained pipeline is AREA-down, JPEG, BICUBIC-up
    f, p = build_network(FDNN), build_network(PPNN, seed=1)
    x = images["astronaut"]
    out, bs = evaluate.pipeline(x, f, p, 20)
    area = codec.jpeg_encode(codec.quantize8(resample(x, 0.5, "area")), 20)
    assert len(area.data) == pytest.approx(len(bs.data), rel=0.01)
    z = codec.jpeg_decode(bs)
    ref = np.clip(resample(z, 2, ResampleMethod.BICUBIC), 0, 1)
    assert np.abs(out - ref).max() < 1e-5


def test_bicubic_baseline(images):
    out, bs = evaluate.bicubic_jpeg(images["camera"], 20)
    assert out.shape == (64, 64) and bs.coded_dims == (32, 32)
    assert psnr(out, images["camera"]) > 15


def test_rd_curve_rows_and_order(images):
    f, p = build_network(FDNN, width=8), build_network(PPNN, width=8)
    rows = evaluate.rd_curve(images, f, p, qualities=(5, 10, 20, 40), bicubic=True)
    by_method = {}
    for r in rows:
        by_method.setdefault(r.method, []).append(r)
    assert {m: len(v) for m, v in by_method.items()} == {"ours": 12, "bicubic_jpeg": 12, "jpeg": 15}
    keys = [(r.image_id, r.method, r.quality) for r in rows]
    assert keys == sorted(keys)
    for r in rows:
        assert 0 < r.psnr_db <= 100 and -1 <= r.ssim <= 1 and r.bpp > 0
    means = evaluate.mean_rows(rows)
    assert len(means) == 4 + 4 + 5 and all(m.image_id == "mean" for m in means)


def test_csv_round_trip(tmp_path, images):
    rows = evaluate.rd_curve(images, baseline_qualities=(5, 10))
    evaluate.write_csv(tmp_path / "rd.csv", rows)
    back = evaluate.read_csv(tmp_path / "rd.csv")
    assert (tmp_path / "rd.csv").read_text().splitlines()[0] == "image_id,method,quality,psnr_db,ssim,bpp"
    assert [(r.image_id, r.method, r.quality) for r in back] == [
        (r.image_id, r.method, r.quality) for r in rows]
    for a, b in zip(rows, back):
        assert a.psnr_db == pytest.approx(b.psnr_db, abs=1e-6)
    buf = io.StringIO()
    evaluate.write_csv(buf, rows)
    assert buf.getvalue() == (tmp_path / "rd.csv").read_text()


def test_odd_dims_rejected():
    with pytest.raises(ValueError):
        evaluate.compress(np.zeros((15, 16)), build_network(FDNN, width=8), 10)


# command line

def test_compress_then_decompress(tmp_path, photo, ckdir, capsys):
    jpg = tmp_path / "c.jpg"
    assert cli.main(["compress", str(photo), "-o", str(jpg), "--quality", "10",
                     "--checkpoint-dir", str(ckdir)]) == 0
    printed = capsys.readouterr().out
    bs = codec.read_bitstream(jpg)
    assert bs.coded_dims == (80, 80) and bs.original_dims == (160, 160)
    assert f"bpp={codec.bpp(bs):.6f}" in printed
    first = jpg.read_bytes()
    assert cli.main(["compress", str(photo), "-o", str(jpg), "--quality", "10",
                     "--checkpoint-dir", str(ckdir)]) == 0
    assert jpg.read_bytes() == first

    out = tmp_path / "r.png"
    assert cli.main(["decompress", str(jpg), "-o", str(out), "--checkpoint-dir", str(ckdir)]) == 0
    assert load_image(out).shape == (160, 160)


def test_rd_curve_command(tmp_path, ckdir, images):
    test_dir = tmp_path / "test"
    test_dir.mkdir()
    for name, x in images.items():
        save_image(test_dir / f"{name}.png", x)
    csv_path = tmp_path / "rd.csv"
    restored = tmp_path / "restored"
    assert cli.main(["rd-curve", str(test_dir), "--quality", "5", "10", "--checkpoint-dir",
                     str(ckdir), "--baseline-quality", "5", "-o", str(csv_path),
                     "--mean", "--save-restored", str(restored)]) == 0
    rows = evaluate.read_csv(csv_path)
    assert sum(r.method == "ours" and r.image_id != "mean" for r in rows) == 6
    assert len(list(restored.glob("*.png"))) == 6


def test_exit_codes(tmp_path, photo, ckdir):
    ck = ["--checkpoint-dir", str(ckdir)]
    assert cli.main(["compress", str(tmp_path / "nope.png"), "--quality", "10", *ck]) == 2
    assert cli.main(["compress", str(photo), "--quality", "10",
                     "--checkpoint-dir", str(tmp_path)]) == 2
    assert cli.main(["compress", str(photo), "--quality", "0", *ck]) == 2
    assert cli.main(["compress", str(photo), "--quality", "10", "--fdnn",
                     str(ckdir / "ppnn_final.ckpt")]) == 2
    odd = tmp_path / "odd.png"
    save_image(odd, np.zeros((15, 16)))
    assert cli.main(["compress", str(odd), "--quality", "10", *ck]) == 2
    bad = tmp_path / "bad.jpg"
    bad.write_bytes(b"\xff\xd8garbage")
    assert cli.main(["decompress", str(bad), *ck]) == 2
    empty = tmp_path / "empty"
    empty.mkdir()
    assert cli.main(["rd-curve", str(empty), *ck]) == 2
    assert cli.main(["bogus-verb"]) == 2
    assert cli.main(["train", "--config", str(tmp_path / "missing.ini")]) == 2


def test_internal_failure_exit_code(tmp_path, photo, ckdir, monkeypatch):
    def boom(*a, **k):
        raise RuntimeError("simulated")

    monkeypatch.setattr(evaluate, "compress", boom)
    assert cli.main(["compress", str(photo), "--quality", "10",
                     "--checkpoint-dir", str(ckdir)]) == 1


def test_train_command(tmp_path):
    cfg = tmp_path / "tiny.ini"
    cfg.write_text("[training]\nK = 1\np = 1\nq = 1\nm = 2\nn = 2\npatch_size = 16\nwidth = 8\n"
                   "checkpoint_dir = ck\n")
    assert cli.main(["train", "--config", str(cfg), "--seed", "3"]) == 0
    assert (tmp_path / "ck" / "ppnn_final.ckpt").exists()
    rows = (tmp_path / "ck" / "training_log.csv").read_text().splitlines()
    assert len(rows) == 1 + 1 * (2 * 1 + 1) + 1
    assert cli.main(["train", "--config", str(cfg), "--seed", "3", "--resume"]) == 0

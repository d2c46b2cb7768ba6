import json
import subprocess
import sys

import numpy as np
import pytest

from xblur.cli import main
from xblur.imagecore import Image2D, corner_noise_level, read_image, write_image
from xblur.psf import BlurModel

MEAN = BlurModel.from_fwhm(1, source=(2.7, 3.0), detector=(1.8, 135.7, 0.92))


@pytest.fixture
def model_file(tmp_path):
    MEAN.save(tmp_path / "mean.json")
    return tmp_path / "mean.json"


@pytest.fixture(scope="module")
def sim_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("sim")
    MEAN.save(d / "mean.json")
    code = main(["--threads", "1", "simulate", "--model", str(d / "mean.json"), "--sod-mm", "24.8", "50.3",
                 "--size", "64", "--seed", "11", "--out", str(d / "data")])
    assert code == 0
    return d


def test_normalize(tmp_path):
    s, b, d = np.full((4, 5), 3.0), np.full((4, 5), 5.0), np.ones((4, 5))
    for name, a in (("s", s), ("b", b), ("d", d)):
        write_image(tmp_path / f"{name}.sabr", Image2D(a, 0.675))
    args = ["normalize", "--sample", str(tmp_path / "s.sabr"), "--bright", str(tmp_path / "b.sabr"),
            "--dark", str(tmp_path / "d.sabr"), "--out", str(tmp_path / "n.sabr")]
    assert main(args) == 0
    assert np.allclose(read_image(tmp_path / "n.sabr").data, 0.5)


def test_normalize_bad_pixel_and_missing_file(tmp_path, capsys):
    b = np.full((4, 5), 5.0)
    b[2, 3] = 1.0
    write_image(tmp_path / "s.sabr", Image2D(np.full((4, 5), 3.0)))
    write_image(tmp_path / "b.sabr", Image2D(b))
    write_image(tmp_path / "d.sabr", Image2D(np.ones((4, 5))))
    args = ["normalize", "--sample", str(tmp_path / "s.sabr"), "--bright", str(tmp_path / "b.sabr"),
            "--dark", str(tmp_path / "d.sabr"), "--out", str(tmp_path / "n.sabr")]
    assert main(args) == 2
    assert "(2, 3)" in capsys.readouterr().err
    args[2] = str(tmp_path / "nope.sabr")
    assert main(args) == 2
    assert "not found" in capsys.readouterr().err


def test_usage_errors(model_file, tmp_path):
    assert main([]) == 2
    assert main(["frobnicate"]) == 2
    assert main(["deblur", "--radiograph", "x", "--model", str(model_file), "--out", "y"]) == 2


def test_simulate_writes_manifest_and_is_reproducible(sim_dir, tmp_path):
    doc = json.loads((sim_dir / "data" / "manifest.json").read_text())
    assert len(doc["entries"]) == 4 and doc["pitch_um"] == 0.675
    assert {e["orientation"] for e in doc["entries"]} == {"horizontal", "vertical"}
    assert main(["--threads", "1", "simulate", "--model", str(sim_dir / "mean.json"), "--sod-mm", "24.8", "50.3",
                 "--size", "64", "--seed", "11", "--out", str(tmp_path / "again")]) == 0
    for e in doc["entries"]:
        a = (sim_dir / "data" / e["radiograph_path"]).read_bytes()
        assert a == (tmp_path / "again" / e["radiograph_path"]).read_bytes()
    assert main(["simulate", "--model", str(sim_dir / "mean.json"), "--sod-mm", "80",
                 "--out", str(tmp_path / "bad")]) == 2


def test_estimate_single_ratio_manifest_rejected(sim_dir, tmp_path, capsys):
    doc = json.loads((sim_dir / "data" / "manifest.json").read_text())
    doc["entries"] = [e for e in doc["entries"] if e["sod_mm"] == 24.8] * 2
    (sim_dir / "data" / "one_ratio.json").write_text(json.dumps(doc))
    code = main(["estimate", "--manifest", str(sim_dir / "data" / "one_ratio.json"), "--out", str(tmp_path)])
    assert code == 2
    assert "need two distinct ODD/SOD ratios" in capsys.readouterr().err


def test_estimate_manifest_errors(tmp_path):
    (tmp_path / "m.json").write_text('{"entries": [{"sod_mm": 1}]}')
    assert main(["estimate", "--manifest", str(tmp_path / "m.json")]) == 2
    (tmp_path / "bad.json").write_text("{")
    assert main(["estimate", "--manifest", str(tmp_path / "bad.json")]) == 2
    assert main(["estimate", "--manifest", str(tmp_path / "none.json")]) == 2


def test_estimate_stage_one(sim_dir, tmp_path):
    code = main(["estimate", "--manifest", str(sim_dir / "data" / "manifest.json"), "--stage", "1",
                 "--max-iterations", "40", "--out", str(tmp_path)])
    assert code in (0, 3)
    m = json.loads((tmp_path / "model.json").read_text())
    assert m["detector"] is None and m["source"]["fwhm_x_um"] > 0
    rep = json.loads((tmp_path / "report.json").read_text())
    assert [s["stage"] for s in rep["stages"]] == ["source"]


def test_estimate_full_run(sim_dir, tmp_path):
    code = main(["estimate", "--manifest", str(sim_dir / "data" / "manifest.json"), "--out", str(tmp_path)])
    assert code in (0, 3)
    rep = json.loads((tmp_path / "report.json").read_text())
    assert [s["stage"] for s in rep["stages"]] == ["source", "detector", "joint"]
    assert rep["converged"] == (code == 0)
    assert len(json.loads((tmp_path / "transmission_params.json").read_text())) == 4
    est = BlurModel.load(tmp_path / "model.json")
    assert est.detector.fwhm_1 == pytest.approx(1.8, rel=0.3)


def _deblur(sim_dir, model_file, out, *extra):
    rad = sim_dir / "data" / "sod24.8_vertical.sabr"
    return main(["deblur", "--radiograph", str(rad), "--model", str(model_file), "--sod-mm", "24.8",
                 "--odd-mm", "46.2", "--reference", str(sim_dir / "data" / "sod24.8_vertical_ideal.sabr"),
                 "--out", str(out), *extra])


def test_deblur_wiener_to_target(sim_dir, model_file, tmp_path):
    out = tmp_path / "w.sabr"
    assert _deblur(sim_dir, model_file, out, "--method", "wiener", "--target-sd", "0.01", "--box", "6") == 0
    rep = json.loads(out.with_suffix(".json").read_text())
    assert rep["method"] == "wiener"
    assert rep["achieved_corner_sd"] == pytest.approx(corner_noise_level(read_image(out), 6), rel=1e-9)
    if rep["target_reached"]:
        assert rep["achieved_corner_sd"] == pytest.approx(0.01, rel=0.05)
    assert rep["rmse_vs_reference"] > 0


def test_deblur_rlsd_fixed_beta(sim_dir, model_file, tmp_path):
    out = tmp_path / "r.sabr"
    assert _deblur(sim_dir, model_file, out, "--method", "rlsd", "--beta", "1e-3", "--max-iterations", "30",
                   "--report", str(tmp_path / "rep.json")) == 0
    rep = json.loads((tmp_path / "rep.json").read_text())
    assert rep["regularization"] == 1e-3 and 0 < rep["iterations"] <= 30
    assert read_image(out).shape == (64, 64)


def test_deblur_bad_method(sim_dir, model_file, tmp_path, capsys):
    assert _deblur(sim_dir, model_file, tmp_path / "x.sabr", "--method", "magic") == 2
    assert "unknown method" in capsys.readouterr().err
    assert _deblur(sim_dir, model_file, tmp_path / "x.sabr", "--method", "rlsd") == 2


def test_predict_all_delta_is_identity(tmp_path):
    BlurModel(None, None).save(tmp_path / "delta.json")
    t = np.random.default_rng(0).random((12, 10))
    write_image(tmp_path / "t.sabr", Image2D(t, 0.675))
    assert main(["predict", "--transmission", str(tmp_path / "t.sabr"), "--model", str(tmp_path / "delta.json"),
                 "--sod-mm", "20", "--odd-mm", "30", "--out", str(tmp_path / "p.sabr")]) == 0
    assert np.array_equal(read_image(tmp_path / "p.sabr").data, t)


def test_predict_padded_matches_simulation(sim_dir, tmp_path):
    d = sim_dir / "data"
    code = main(["predict", "--transmission", str(d / "sod50.3_horizontal_ideal.sabr"), "--padded",
                 "--model", str(sim_dir / "mean.json"), "--sod-mm", "50.3", "--odd-mm", "20.7",
                 "--out", str(tmp_path / "p.sabr")])
    assert code == 0
    pred = read_image(tmp_path / "p.sabr").data
    noisy = read_image(d / "sod50.3_horizontal.sabr").data
    # the simulation is this prediction plus unit-variance noise scaled to 0.01
    assert np.std(noisy - pred) == pytest.approx(0.01, rel=0.15)


def test_psf_export(model_file, tmp_path):
    assert main(["psf-export", "--model", str(model_file), "--sod-mm", "24.8", "--odd-mm", "46.2",
                 "--out", str(tmp_path)]) == 0
    rep = json.loads((tmp_path / "psf_fwhm.json").read_text())
    assert rep["detector_component2_fwhm_um"] == pytest.approx(135.7, rel=0.1)
    assert rep["detector_component1_fwhm_um"] == pytest.approx(1.8, abs=0.675)
    for name in ("source_source_plane", "source_detector_plane", "detector", "combined"):
        assert (tmp_path / f"{name}.tif").is_file()


def test_console_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "xblur", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0 and "psf-export" in proc.stdout

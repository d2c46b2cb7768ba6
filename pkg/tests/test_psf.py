import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from xblur.psf import (BlurModel, DetectorPsfParams, ScanGeometry, SourcePsfParams, combined_psf,
                       detector_kernel, detector_psf, fwhm_to_scale, measure_fwhm, motion_psf,
                       round_floats, scale_to_fwhm, source_kernel, source_psf_detector_plane,
                       source_psf_source_plane, symmetrize)

widths = st.floats(0.5, 30.0)
exps = st.sampled_from([1.0, 2.0])


@given(widths, st.floats(1.0, 3.0))
def test_fwhm_scale_inverse(w, r):
    s = fwhm_to_scale(w, r)
    assert scale_to_fwhm(s, r) == pytest.approx(w, rel=1e-14)
    # exp(-(s * W/2)^r) = 1/2 at the half width
    assert math.exp(-((s * w / 2) ** r)) == pytest.approx(0.5)


@pytest.mark.parametrize("bad", [0.0, -1.0])
def test_fwhm_scale_rejects(bad):
    with pytest.raises(ValueError):
        fwhm_to_scale(bad, 1)
    with pytest.raises(ValueError):
        scale_to_fwhm(bad, 1)
    with pytest.raises(ValueError):
        fwhm_to_scale(1.0, 0.5)


@given(widths, widths, exps, st.floats(0.1, 10.0), st.integers(0, 12))
def test_source_kernel_sum_and_symmetry(wx, wy, r, mag, half):
    p = source_kernel(fwhm_to_scale(wx, r), fwhm_to_scale(wy, r), r, half, mag=mag)
    assert p.shape == (2 * half + 1, 2 * half + 1)
    assert abs(p.sum() - 1) < 1e-12
    assert np.array_equal(p, p[::-1, :]) and np.array_equal(p, p[:, ::-1])


@given(widths, st.floats(20.0, 300.0), st.floats(0.0, 1.0), exps, st.integers(0, 15))
def test_detector_kernel_radial(w1, w2, q, r, half):
    p = detector_kernel(fwhm_to_scale(w1, r), fwhm_to_scale(w2, r), q, r, half)
    assert abs(p.sum() - 1) < 1e-12
    assert np.array_equal(p, p.T) and np.array_equal(p, p[::-1, :])
    # values depend only on i^2 + j^2
    i, j = np.mgrid[-half:half + 1, -half:half + 1]
    rho2 = i * i + j * j
    for v in np.unique(rho2):
        vals = p[rho2 == v]
        assert np.ptp(vals) <= 1e-15 * vals.max()


@given(st.floats(0.05, 2.0), st.floats(0.05, 2.0), exps, st.floats(0.2, 5.0))
def test_source_kernel_derivative_sums_vanish_and_match_fd(ax, ay, r, mag):
    p, dx, dy = source_kernel(ax, ay, r, 6, mag=mag, grads=True)
    assert abs(dx.sum()) < 1e-12 and abs(dy.sum()) < 1e-12
    h = 1e-6
    fdx = (source_kernel(ax + h, ay, r, 6, mag) - source_kernel(ax - h, ay, r, 6, mag)) / (2 * h)
    fdy = (source_kernel(ax, ay + h, r, 6, mag) - source_kernel(ax, ay - h, r, 6, mag)) / (2 * h)
    assert np.allclose(dx, fdx, atol=1e-7) and np.allclose(dy, fdy, atol=1e-7)


@given(st.floats(0.1, 2.0), st.floats(0.002, 0.1), st.floats(0.0, 1.0), exps)
def test_detector_kernel_derivatives(a1, a2, q, r):
    p, d1, d2, dq = detector_kernel(a1, a2, q, r, 8, grads=True)
    for d in (d1, d2, dq):
        assert abs(d.sum()) < 1e-12
    h = 1e-7
    fd1 = (detector_kernel(a1 + h, a2, q, r, 8) - detector_kernel(a1 - h, a2, q, r, 8)) / (2 * h)
    fd2 = (detector_kernel(a1, a2 + h, q, r, 8) - detector_kernel(a1, a2 - h, q, r, 8)) / (2 * h)
    fdq = (detector_kernel(a1, a2, q + h, r, 8) - detector_kernel(a1, a2, q - h, r, 8)) / (2 * h)
    assert np.allclose(d1, fd1, atol=1e-6) and np.allclose(d2, fd2, atol=1e-6)
    assert np.allclose(dq, fdq, atol=1e-7)


def test_zero_scale_is_flat_with_finite_derivative():
    p, dx, dy = source_kernel(0.0, 0.0, 1.0, 3, grads=True)
    assert np.allclose(p, 1 / 49)
    assert np.all(np.isfinite(dx)) and np.all(np.isfinite(dy))


@given(st.floats(1.0, 10.0), st.floats(0.2, 5.0))
def test_detector_plane_fwhm_scales_with_blur_ratio(w_src, ratio):
    # source-plane width w_src um, pitch 1 um; projected width w_src * ODD/SOD
    g = ScanGeometry(10.0, 10.0 * ratio)
    k = source_psf_detector_plane(SourcePsfParams.from_fwhm(w_src, w_src), g, 1.0)
    expected = w_src * ratio
    if expected < 2.0:
        return  # below two pixels the sampled peak cannot resolve half maximum
    assert abs(measure_fwhm(k, 1) - expected) <= 1.0


def test_measured_fwhm_matches_nominal():
    for w in (4.0, 10.0, 25.0):
        k = detector_psf(DetectorPsfParams.from_fwhm(w, w, 1.0), 1.0)
        assert measure_fwhm(k, 1) == pytest.approx(w, abs=0.5)
        k2 = source_psf_source_plane(SourcePsfParams.from_fwhm(w, 2 * w, r=2), 1.0)
        assert measure_fwhm(k2, 1) == pytest.approx(w, abs=0.5)
        assert measure_fwhm(k2, 0) == pytest.approx(2 * w, abs=0.5)
    with pytest.raises(ValueError):
        measure_fwhm(np.ones((3, 3)))


def test_public_kernels_carry_pitch_and_sum_to_one():
    m = BlurModel.from_fwhm(1, source=(2.7, 3.0), detector=(1.8, 135.7, 0.92))
    g = ScanGeometry(24.8, 46.2)
    for k in (source_psf_source_plane(m.source, 0.675), source_psf_detector_plane(m.source, g, 0.675),
              detector_psf(m.detector, 0.675, half=40), combined_psf(m, g, 0.675, detector_half=40),
              motion_psf(0.675)):
        assert k.pitch == 0.675
        assert abs(k.data.sum() - 1) < 1e-12


def test_combined_psf_symmetric_and_delta_neutral():
    m = BlurModel.from_fwhm(1, source=(2.0, 5.0), detector=(1.5, 20.0, 0.9))
    g = ScanGeometry(20.0, 30.0)
    k = combined_psf(m, g, 1.0).data
    assert np.array_equal(k, k[::-1, :]) and np.array_equal(k, k[:, ::-1])
    only_src = combined_psf(BlurModel(m.source, None, 1.0), g, 1.0).data
    assert np.allclose(only_src, source_psf_detector_plane(m.source, g, 1.0).data, atol=1e-15)
    assert combined_psf(BlurModel(None, None), g, 1.0).data.shape == (1, 1)


def test_symmetrize_exact():
    a = np.random.default_rng(0).random((5, 7))
    s = symmetrize(a)
    assert np.array_equal(s, s[::-1]) and np.array_equal(s, s[:, ::-1])
    assert s.sum() == pytest.approx(a.sum())


def test_params_validation():
    with pytest.raises(ValueError):
        SourcePsfParams(-1, 1)
    with pytest.raises(ValueError):
        DetectorPsfParams(1, 1, 1.5)
    with pytest.raises(ValueError):
        ScanGeometry(0, 1)
    with pytest.raises(ValueError):
        ScanGeometry(1, 1, "diagonal")
    with pytest.raises(ValueError):
        BlurModel(SourcePsfParams(1, 1, 2.0), None, 1.0)
    with pytest.raises(ValueError):
        BlurModel(None, None, 1.0, motion="linear")
    assert ScanGeometry(24.8, 46.2).blur_ratio == pytest.approx(46.2 / 24.8)


def test_model_json_roundtrip(tmp_path):
    m = BlurModel.from_fwhm(1, source=(2.7, 3.0), detector=(1.8, 135.7, 0.92))
    m.save(tmp_path / "m.json")
    back = BlurModel.load(tmp_path / "m.json")
    assert back.source.fwhm_x == pytest.approx(2.7, rel=1e-10)
    assert back.detector.fwhm_2 == pytest.approx(135.7, rel=1e-10)
    assert back.detector.q == pytest.approx(0.92)
    # FWHM-only documents are accepted
    doc = {"r": 1, "source": {"fwhm_x_um": 2.7, "fwhm_y_um": 3.0}, "detector": None}
    assert BlurModel.from_dict(doc).detector is None
    # an unbounded component serialises as null width and survives the roundtrip
    z = BlurModel(None, DetectorPsfParams(0.5, 0.0, 0.9), 1.0)
    d = z.to_dict()
    assert d["detector"]["fwhm_2_um"] is None
    assert BlurModel.from_dict(json.loads(json.dumps(d))).detector.s_d2 == 0.0


def test_round_floats():
    assert round_floats({"a": [0.1 + 0.2, (1 / 3,)], "b": 2}) == {"a": [0.3, [0.333333333333]], "b": 2}

"""Shared test helpers."""

import numpy as np

from xblur import kernels
from xblur.estimate import Entry, EstimationProblem
from xblur.imagecore import band_mask
from xblur.psf import BlurModel, ScanGeometry
from xblur.synth import EdgeSpec, NoiseSpec, synth_edge_scan
from xblur.transmission import TransmissionParams

BACKENDS = ["python"] + (["cython"] if kernels.BACKEND == "cython" else [])

# acceptance criteria report their outcome here; printed in the terminal summary
ACCEPTANCE_LINES = {}


def small_problem(n=32, seed=0, noise=0.0, model=None, pairs=((20.0, 40.0, "vertical"), (40.0, 20.0, "horizontal")),
                  affine=(0.05, 0.95), source_half=None):
    """Problem with one radiograph per (sod, odd, orientation) plus the generator model."""
    if model is None:
        model = BlurModel.from_fwhm(1, source=(3.0, 4.0), detector=(2.0, 15.0, 0.85))
    entries = []
    tp = TransmissionParams(*affine)
    for k, (sod, odd, orient) in enumerate(pairs):
        g = ScanGeometry(sod, odd, orient)
        img, truth = synth_edge_scan(EdgeSpec(orient, 3.0, 0.2, (n, n)), tp, model, g, 1.0,
                                     NoiseSpec(noise, seed + k), source_half)
        entries.append(Entry(img, truth, g, band_mask(img.shape)))
    return EstimationProblem(entries, source_half=source_half), model, tp

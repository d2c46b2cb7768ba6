"""Blur of a padded transmission image, evaluated at its interior.

The padded grid is treated circularly by the FFT. Kernel supports are chosen
so that the combined kernel half-width never exceeds the padding margin; the
circular result at interior pixels is then identical to linear convolution.
The source kernel gets a fixed half-width and the detector kernel takes the
rest of the margin, so the (wide) detector PSF spans the whole interior.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.fft as sfft

from . import imagecore
from .psf import BlurModel, ScanGeometry, delta_kernel, detector_kernel, source_kernel


def default_source_half(interior_shape) -> int:
    return max(1, min(interior_shape) // 4)


@dataclass(frozen=True)
class PaddedLayout:
    padded_shape: tuple[int, int]
    offset: tuple[int, int]
    shape: tuple[int, int]

    def __post_init__(self):
        for p, o, s in zip(self.padded_shape, self.offset, self.shape):
            if o < 0 or s < 1 or o + s > p:
                raise ValueError(f"interior {self.shape} at {self.offset} does not fit in {self.padded_shape}")

    @classmethod
    def centered(cls, shape) -> PaddedLayout:
        """Three times the interior size with equal padding on every side."""
        r, c = shape
        return cls((3 * r, 3 * c), (r, c), (r, c))

    @property
    def margin(self) -> tuple[int, int]:
        return tuple(min(o, p - o - s) for p, o, s in zip(self.padded_shape, self.offset, self.shape))

    def supports(self, source_half=None):
        """Return (source half, detector (half_r, half_c)) fitting inside the margin."""
        if source_half is None:
            source_half = default_source_half(self.shape)
        mr, mc = self.margin
        if min(mr, mc) <= source_half:
            raise ValueError(
                f"padding margin {self.margin} too small for source half-width {source_half}")
        return int(source_half), (mr - source_half, mc - source_half)

    def crop(self, a):
        (r0, c0), (r, c) = self.offset, self.shape
        return a[r0:r0 + r, c0:c0 + c]

    def embed(self, interior):
        out = np.zeros(self.padded_shape)
        (r0, c0), (r, c) = self.offset, self.shape
        out[r0:r0 + r, c0:c0 + c] = interior
        return out


def kernel_indices(kshape, grid_shape):
    hr, hc = kshape[0] // 2, kshape[1] // 2
    ri = np.arange(-hr, hr + 1) % grid_shape[0]
    ci = np.arange(-hc, hc + 1) % grid_shape[1]
    return ri, ci


def embed_kernel(k, grid_shape):
    """Place a centred kernel at the origin of a periodic grid, folding any overhang."""
    ri, ci = kernel_indices(k.shape, grid_shape)
    out = np.zeros(grid_shape)
    if k.shape[0] <= grid_shape[0] and k.shape[1] <= grid_shape[1]:
        out[np.ix_(ri, ci)] = k
    else:
        np.add.at(out, (ri[:, None], ci[None, :]), k)
    return out


def extract_kernel(a, kshape):
    """Read values at the kernel offsets of a periodic grid (adjoint of embedding)."""
    ri, ci = kernel_indices(kshape, a.shape)
    return a[np.ix_(ri, ci)]


def rfft2(a):
    return sfft.rfft2(a, workers=imagecore.fft_workers)


def irfft2(a, shape):
    return sfft.irfft2(a, shape, workers=imagecore.fft_workers)


def model_kernels(model: BlurModel, geometry: ScanGeometry, pitch, source_half, detector_half):
    """Source (detector plane) and detector kernels at the given supports; delta when absent."""
    if model.source is None:
        ks = delta_kernel()
    else:
        s = model.source
        ks = source_kernel(s.s_sx * pitch, s.s_sy * pitch, model.r, source_half,
                           mag=geometry.sod / geometry.odd)
    if model.detector is None:
        kd = delta_kernel()
    else:
        d = model.detector
        kd = detector_kernel(d.s_d1 * pitch, d.s_d2 * pitch, d.q, model.r, detector_half)
    return ks, kd


def blur_padded(t_pad, layout: PaddedLayout, model: BlurModel, geometry: ScanGeometry,
                pitch: float, source_half=None) -> np.ndarray:
    """Interior of ``t_pad * p_source * p_detector`` (motion PSF is a delta)."""
    t_pad = np.asarray(t_pad, dtype=np.float64)
    if t_pad.shape != tuple(layout.padded_shape):
        raise ValueError(f"transmission shape {t_pad.shape} does not match layout {layout.padded_shape}")
    if model.source is None and model.detector is None:
        return layout.crop(t_pad).copy()
    hs, hd = layout.supports(source_half)
    ks, kd = model_kernels(model, geometry, pitch, hs, hd)
    spec = rfft2(t_pad)
    for k in (ks, kd):
        if k.size > 1:
            spec = spec * rfft2(embed_kernel(k, t_pad.shape))
    return layout.crop(irfft2(spec, t_pad.shape))


def image_kernel(model: BlurModel, geometry: ScanGeometry, pitch: float, shape,
                 source_half=None) -> np.ndarray:
    """Combined kernel with the supports :func:`blur_padded` uses for an image of ``shape``.

    Deconvolution with this kernel inverts exactly the blur applied by the
    synthesiser and assumed by the estimator.
    """
    hs, hd = PaddedLayout.centered(shape).supports(source_half)
    ks, kd = model_kernels(model, geometry, pitch, hs, hd)
    if ks.size == 1:
        return kd * ks[0, 0]
    if kd.size == 1:
        return ks * kd[0, 0]
    full = (ks.shape[0] + kd.shape[0] - 1, ks.shape[1] + kd.shape[1] - 1)
    fshape = tuple(sfft.next_fast_len(n, real=True) for n in full)
    k = sfft.irfft2(sfft.rfft2(ks, fshape) * sfft.rfft2(kd, fshape), fshape)
    return k[:full[0], :full[1]]

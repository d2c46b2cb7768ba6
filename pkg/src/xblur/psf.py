"""Parametric point-spread functions for source, detector and motion blur.

Scales are inverse lengths (um^-1). Kernels are evaluated on an integer pixel
grid centred on the origin and normalised over that finite grid, so every
emitted kernel sums to one regardless of truncation.

Axis convention: ``s_sx`` scales the column (x) offset and ``s_sy`` the row
(y) offset. A vertical edge is therefore sensitive to ``s_sx``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.fft as sfft

from .imagecore import Image2D

ORIENTATIONS = ("horizontal", "vertical", "none")


def fwhm_to_scale(w: float, r: float) -> float:
    """Scale ``s = 2 log(2)^(1/r) / w`` for a full width at half maximum ``w``."""
    if not w > 0:
        raise ValueError(f"FWHM must be positive, got {w}")
    if r < 1:
        raise ValueError(f"shape exponent must be >= 1, got {r}")
    return 2.0 * math.log(2.0) ** (1.0 / r) / w


def scale_to_fwhm(s: float, r: float) -> float:
    """Inverse of :func:`fwhm_to_scale`."""
    if not s > 0:
        raise ValueError(f"scale must be positive, got {s}")
    return 2.0 * math.log(2.0) ** (1.0 / r) / s


@dataclass(frozen=True)
class SourcePsfParams:
    s_sx: float
    s_sy: float
    r: float = 1.0

    def __post_init__(self):
        if self.s_sx < 0 or self.s_sy < 0:
            raise ValueError("source scales must be non-negative")
        if self.r < 1:
            raise ValueError("shape exponent r must be >= 1")

    @classmethod
    def from_fwhm(cls, fwhm_x: float, fwhm_y: float, r: float = 1.0) -> SourcePsfParams:
        return cls(fwhm_to_scale(fwhm_x, r), fwhm_to_scale(fwhm_y, r), r)

    @property
    def fwhm_x(self) -> float:
        return scale_to_fwhm(self.s_sx, self.r)

    @property
    def fwhm_y(self) -> float:
        return scale_to_fwhm(self.s_sy, self.r)


@dataclass(frozen=True)
class DetectorPsfParams:
    """Two-component radial mixture; component 1 is the narrow dominant one by convention."""

    s_d1: float
    s_d2: float
    q: float
    r: float = 1.0

    def __post_init__(self):
        if self.s_d1 < 0 or self.s_d2 < 0:
            raise ValueError("detector scales must be non-negative")
        if not 0.0 <= self.q <= 1.0:
            raise ValueError(f"mixture weight q must lie in [0, 1], got {self.q}")
        if self.r < 1:
            raise ValueError("shape exponent r must be >= 1")

    @classmethod
    def from_fwhm(cls, fwhm_1: float, fwhm_2: float, q: float, r: float = 1.0) -> DetectorPsfParams:
        return cls(fwhm_to_scale(fwhm_1, r), fwhm_to_scale(fwhm_2, r), q, r)

    @property
    def fwhm_1(self) -> float:
        return scale_to_fwhm(self.s_d1, self.r)

    @property
    def fwhm_2(self) -> float:
        return scale_to_fwhm(self.s_d2, self.r)


@dataclass(frozen=True)
class ScanGeometry:
    """Source-object and object-detector distances in mm."""

    sod: float
    odd: float
    orientation: str = "none"

    def __post_init__(self):
        if not (self.sod > 0 and self.odd > 0):
            raise ValueError(f"SOD and ODD must be positive, got {self.sod}, {self.odd}")
        if self.orientation not in ORIENTATIONS:
            raise ValueError(f"orientation must be one of {ORIENTATIONS}, got {self.orientation!r}")

    @property
    def blur_ratio(self) -> float:
        """ODD/SOD: the factor mapping source-plane widths onto the detector."""
        return self.odd / self.sod


@dataclass(frozen=True)
class BlurModel:
    """Source PSF, detector PSF and a delta motion PSF sharing one shape exponent.

    ``source=None`` or ``detector=None`` stands for a delta kernel, which is how
    source-only and detector-only models are represented.
    """

    source: SourcePsfParams | None
    detector: DetectorPsfParams | None
    r: float = 1.0
    motion: str = "delta"

    def __post_init__(self):
        for part in (self.source, self.detector):
            if part is not None and part.r != self.r:
                raise ValueError("source and detector PSFs must share the model exponent r")
        if self.motion != "delta":
            raise ValueError("only the delta motion PSF is supported")

    @classmethod
    def from_fwhm(cls, r=1.0, source=None, detector=None) -> BlurModel:
        """Build from FWHMs in um: ``source=(wx, wy)``, ``detector=(w1, w2, q)``."""
        src = None if source is None else SourcePsfParams.from_fwhm(*source, r=r)
        det = None if detector is None else DetectorPsfParams.from_fwhm(*detector, r=r)
        return cls(src, det, r)

    def to_dict(self) -> dict:
        """FWHMs in um (null for a zero scale, i.e. an unbounded width) plus the scales."""
        def w(scale):
            return scale_to_fwhm(scale, self.r) if scale > 0 else None

        src = det = None
        if self.source is not None:
            s = self.source
            src = {"fwhm_x_um": w(s.s_sx), "fwhm_y_um": w(s.s_sy),
                   "s_sx_per_um": s.s_sx, "s_sy_per_um": s.s_sy}
        if self.detector is not None:
            d = self.detector
            det = {"fwhm_1_um": w(d.s_d1), "fwhm_2_um": w(d.s_d2), "q": d.q,
                   "s_d1_per_um": d.s_d1, "s_d2_per_um": d.s_d2}
        return {"r": self.r, "source": src, "detector": det, "motion": self.motion}

    @classmethod
    def from_dict(cls, d: dict) -> BlurModel:
        """Inverse of :meth:`to_dict`; scales take precedence, FWHMs alone also work."""
        r = float(d.get("r", 1.0))

        def scale(part, skey, wkey):
            if skey in part:
                return float(part[skey])
            return fwhm_to_scale(float(part[wkey]), r)

        src = det = None
        if d.get("source") is not None:
            p = d["source"]
            src = SourcePsfParams(scale(p, "s_sx_per_um", "fwhm_x_um"), scale(p, "s_sy_per_um", "fwhm_y_um"), r)
        if d.get("detector") is not None:
            p = d["detector"]
            det = DetectorPsfParams(scale(p, "s_d1_per_um", "fwhm_1_um"), scale(p, "s_d2_per_um", "fwhm_2_um"),
                                    float(p["q"]), r)
        if d.get("motion", "delta") != "delta":
            raise ValueError("only the delta motion PSF is supported")
        return cls(src, det, r)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(round_floats(self.to_dict()), indent=2) + "\n")

    @classmethod
    def load(cls, path) -> BlurModel:
        return cls.from_dict(json.loads(Path(path).read_text()))


def round_floats(obj, ndigits=12):
    """Recursively round floats so JSON output is byte-stable."""
    if isinstance(obj, float):
        return round(obj, ndigits)
    if isinstance(obj, dict):
        return {k: round_floats(v, ndigits) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [round_floats(v, ndigits) for v in obj]
    return obj


# ---------------------------------------------------------------------------
# array-level kernels in pixel units (a = s * pitch)

def half_pair(half) -> tuple[int, int]:
    if np.ndim(half) == 0:
        h = int(half)
        return h, h
    hr, hc = (int(v) for v in half)
    return hr, hc


def _grid(half):
    hr, hc = half_pair(half)
    if hr < 0 or hc < 0:
        raise ValueError(f"kernel half-width must be >= 0, got {half}")
    rows = np.arange(-hr, hr + 1, dtype=np.float64)[:, None]
    cols = np.arange(-hc, hc + 1, dtype=np.float64)[None, :]
    return rows, cols


def source_kernel(ax, ay, r, half, mag=1.0, grads=False):
    """Normalised source kernel ``exp(-mag^r (x^2 ax^2 + y^2 ay^2)^(r/2))``.

    ``ax``/``ay`` are per-pixel scales. With ``grads=True`` also returns the
    derivatives of the normalised kernel with respect to ``ax`` and ``ay``.
    """
    rows, cols = _grid(half)
    x2 = cols * cols
    y2 = rows * rows
    base = x2 * ax * ax + y2 * ay * ay
    mr = mag ** r
    g = np.exp(-mr * base ** (0.5 * r))
    z = g.sum()
    p = g / z
    if not grads:
        return p
    with np.errstate(divide="ignore", invalid="ignore"):
        pw = np.where(base > 0, base ** (0.5 * r - 1.0), 0.0)
    common = -g * mr * r * pw
    dgx = common * ax * x2
    dgy = common * ay * y2
    dpx = (dgx - p * dgx.sum()) / z
    dpy = (dgy - p * dgy.sum()) / z
    return p, dpx, dpy


def _radial_component(a, rho_r, r, grads):
    g = np.exp(-(a ** r) * rho_r)
    z = g.sum()
    p = g / z
    if not grads:
        return p, None
    dg = -g * rho_r * r * a ** (r - 1.0)
    return p, (dg - p * dg.sum()) / z


def detector_kernel(a1, a2, q, r, half, grads=False):
    """Normalised two-component detector kernel in per-pixel scales.

    With ``grads=True`` also returns derivatives with respect to ``a1``, ``a2``
    and ``q``.
    """
    rows, cols = _grid(half)
    rho2 = rows * rows + cols * cols
    rho_r = rho2 ** (0.5 * r)
    p1, d1 = _radial_component(a1, rho_r, r, grads)
    p2, d2 = _radial_component(a2, rho_r, r, grads)
    p = q * p1 + (1.0 - q) * p2
    if not grads:
        return p
    return p, q * d1, (1.0 - q) * d2, p1 - p2


def delta_kernel():
    return np.ones((1, 1))


def default_half(fwhm_um: float, pitch: float) -> int:
    """Four FWHMs, in pixels, rounded up."""
    return int(math.ceil(4.0 * fwhm_um / pitch))


# ---------------------------------------------------------------------------
# public kernels

def source_psf_source_plane(p: SourcePsfParams, pitch: float, half=None) -> Image2D:
    if half is None:
        half = default_half(max(p.fwhm_x, p.fwhm_y), pitch)
    return Image2D(source_kernel(p.s_sx * pitch, p.s_sy * pitch, p.r, half), pitch)


def source_psf_detector_plane(p: SourcePsfParams, g: ScanGeometry, pitch: float, half=None) -> Image2D:
    """Source PSF projected onto the detector; widths scale with ODD/SOD."""
    if half is None:
        half = default_half(max(p.fwhm_x, p.fwhm_y) * g.blur_ratio, pitch)
    return Image2D(source_kernel(p.s_sx * pitch, p.s_sy * pitch, p.r, half, mag=g.sod / g.odd), pitch)


def detector_psf(p: DetectorPsfParams, pitch: float, half=None) -> Image2D:
    if half is None:
        half = default_half(max(p.fwhm_1, p.fwhm_2), pitch)
    return Image2D(detector_kernel(p.s_d1 * pitch, p.s_d2 * pitch, p.q, p.r, half), pitch)


def motion_psf(pitch: float = 1.0) -> Image2D:
    return Image2D(delta_kernel(), pitch)


def symmetrize(k: np.ndarray) -> np.ndarray:
    """Average over row and column flips; the result is exactly flip-symmetric."""
    k = k + k[::-1, :]
    return 0.25 * (k + k[:, ::-1])


def full_convolve(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    if a.size == 1:
        return b * a[0, 0]
    if b.size == 1:
        return a * b[0, 0]
    shape = (a.shape[0] + b.shape[0] - 1, a.shape[1] + b.shape[1] - 1)
    fshape = tuple(sfft.next_fast_len(n, real=True) for n in shape)
    out = sfft.irfft2(sfft.rfft2(a, fshape) * sfft.rfft2(b, fshape), fshape)
    return out[:shape[0], :shape[1]]


def combined_psf(m: BlurModel, g: ScanGeometry, pitch: float,
                 source_half=None, detector_half=None) -> Image2D:
    """Source (detector plane) * detector * motion kernel, renormalised to sum one.

    The support is the full linear convolution of the component supports.
    """
    ks = delta_kernel() if m.source is None else source_psf_detector_plane(m.source, g, pitch, source_half).data
    kd = delta_kernel() if m.detector is None else detector_psf(m.detector, pitch, detector_half).data
    k = symmetrize(np.clip(full_convolve(ks, kd), 0.0, None))
    return Image2D(k / k.sum(), pitch)


def measure_fwhm(kernel: Image2D | np.ndarray, axis: int = 1) -> float:
    """Half-maximum width of the central profile along ``axis`` in pixels.

    Crossings are located by linear interpolation. Multiply by the pitch for
    physical units.
    """
    data = kernel.data if isinstance(kernel, Image2D) else np.asarray(kernel)
    hr, hc = data.shape[0] // 2, data.shape[1] // 2
    prof = data[hr, :] if axis == 1 else data[:, hc]
    c = len(prof) // 2
    half = 0.5 * prof[c]
    widths = []
    for step in (1, -1):
        k = c
        while 0 <= k + step < len(prof) and prof[k + step] > half:
            k += step
        if not 0 <= k + step < len(prof):
            raise ValueError("profile does not fall to half maximum within the kernel support")
        v0, v1 = prof[k], prof[k + step]
        widths.append(abs(k - c) + (v0 - half) / (v0 - v1))
    return float(sum(widths))

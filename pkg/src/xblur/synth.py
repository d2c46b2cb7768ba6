"""Synthetic edge and star radiographs generated from a known blur model."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .forward import PaddedLayout, blur_padded
from .imagecore import Image2D
from .psf import BlurModel, ScanGeometry
from .transmission import EdgeLine, IdealTransmission, TransmissionParams


@dataclass(frozen=True)
class EdgeSpec:
    """Straight opaque edge through the image centre.

    Vertical edges have the plate on the left; horizontal edges have it at the
    bottom. ``tilt_deg`` rotates the edge counter-clockwise and
    ``subpixel_offset`` shifts it along its normal (towards open beam).
    """

    orientation: str = "vertical"
    tilt_deg: float = 2.0
    subpixel_offset: float = 0.0
    size: tuple[int, int] = (256, 256)

    def __post_init__(self):
        if self.orientation not in ("horizontal", "vertical"):
            raise ValueError(f"orientation must be horizontal or vertical, got {self.orientation!r}")
        if abs(self.tilt_deg) >= 10:
            raise ValueError("|tilt| must stay below 10 degrees")

    def line(self) -> EdgeLine:
        t = math.radians(self.tilt_deg)
        if self.orientation == "vertical":
            n = (math.cos(t), math.sin(t))
        else:
            n = (math.sin(t), -math.cos(t))
        rows, cols = self.size
        cx, cy = 0.5 * (cols - 1), 0.5 * (rows - 1)
        c = n[0] * cx + n[1] * cy + self.subpixel_offset
        return EdgeLine(math.degrees(math.atan2(n[1], n[0])), c)


@dataclass(frozen=True)
class NoiseSpec:
    sigma: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.sigma < 0:
            raise ValueError("noise sigma must be non-negative")


def _uniform_sum_cdf(t, a, b):
    # CDF of U(-a/2, a/2) + U(-b/2, b/2) with a >= b >= 0
    if b < 1e-6:
        return np.clip(t / a + 0.5, 0.0, 1.0)
    s, d = 0.5 * (a + b), 0.5 * (a - b)

    def ramp(x):
        return 0.5 * np.maximum(x, 0.0) ** 2

    return np.clip((ramp(t + s) - ramp(t + d) - ramp(t - d) + ramp(t - s)) / (a * b), 0.0, 1.0)


def halfplane_coverage(line: EdgeLine, rows, cols):
    """Exact area of each unit pixel (centred at (rows, cols)) on the open side of ``line``."""
    nx, ny = line.normal
    a, b = sorted((abs(nx), abs(ny)), reverse=True)
    t = -line.signed_distance(rows, cols)
    return 1.0 - _uniform_sum_cdf(t, a, b)


def edge_transmission(edge: EdgeSpec, pitch: float = 1.0) -> IdealTransmission:
    """Analytic anti-aliased ideal transmission of ``edge`` on the 3x padded grid."""
    layout = PaddedLayout.centered(edge.size)
    rows, cols = edge.size
    pr, pc = np.mgrid[0:layout.padded_shape[0], 0:layout.padded_shape[1]].astype(np.float64)
    line = edge.line()
    data = halfplane_coverage(line, pr - rows, pc - cols)
    return IdealTransmission(Image2D(data, pitch), layout.offset, layout.shape, line)


def synth_scan(ideal: IdealTransmission, affine: TransmissionParams, model: BlurModel,
               g: ScanGeometry, noise: NoiseSpec = NoiseSpec(), source_half=None) -> Image2D:
    """Blur ``l + (h - l) * ideal`` with the model, crop to the interior, add Gaussian noise."""
    t = affine.l + (affine.h - affine.l) * ideal.image.data
    out = blur_padded(t, ideal.layout, model, g, ideal.image.pitch, source_half)
    if noise.sigma > 0:
        out = out + np.random.default_rng(noise.seed).normal(0.0, noise.sigma, out.shape)
    return Image2D(out, ideal.image.pitch)


def synth_edge_scan(edge: EdgeSpec, affine: TransmissionParams, model: BlurModel,
                    g: ScanGeometry, pitch: float, noise: NoiseSpec = NoiseSpec(),
                    source_half=None) -> tuple[Image2D, IdealTransmission]:
    """Radiograph of a straight edge and the exact ideal transmission it was made from."""
    truth = edge_transmission(edge, pitch)
    return synth_scan(truth, affine, model, g, noise, source_half), truth


def synth_star(size=256, spokes=16, inner_radius=None, outer_radius=None,
               supersample=4, pitch=1.0) -> Image2D:
    """Star test pattern: ``spokes`` opaque wedges (value 0) on open beam (value 1).

    Wedges occupy alternating angular sectors of width pi/spokes inside the
    annulus ``inner_radius <= rho <= outer_radius`` (pixels). Sector boundaries
    are offset by half a sector so no sample lies exactly on one. Pixel values
    are area fractions from ``supersample`` x ``supersample`` sub-samples.
    """
    if spokes < 4:
        raise ValueError("need at least 4 spokes")
    if outer_radius is None:
        outer_radius = 0.4 * size
    if inner_radius is None:
        inner_radius = 0.05 * size
    if not 0 <= inner_radius < outer_radius:
        raise ValueError(f"degenerate radii: inner={inner_radius}, outer={outer_radius}")
    sector = math.pi / spokes
    sub = (np.arange(supersample) + 0.5) / supersample - 0.5
    c = 0.5 * (size - 1)
    y = (np.arange(size)[:, None] - c)[:, :, None, None] + sub[None, None, :, None]
    x = (np.arange(size)[None, :] - c)[:, :, None, None] + sub[None, None, None, :]
    rho = np.hypot(x, y)
    theta = np.mod(np.arctan2(y, x) + 0.5 * sector, 2 * math.pi)
    opaque = (np.floor(theta / sector) % 2 == 0) & (rho >= inner_radius) & (rho <= outer_radius)
    return Image2D(1.0 - opaque.mean(axis=(2, 3)), pitch)


def star_transmission(size=256, spokes=16, pitch=1.0, **kw) -> IdealTransmission:
    """Star pattern padded to three times its size with open beam."""
    star = synth_star(size, spokes, pitch=pitch, **kw).data
    layout = PaddedLayout.centered((size, size))
    padded = np.ones(layout.padded_shape)
    padded[size:2 * size, size:2 * size] = star
    return IdealTransmission(Image2D(padded, pitch), layout.offset, layout.shape, None)

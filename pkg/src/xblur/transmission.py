"""Ideal transmission of a straight-edge target and its affine link to a radiograph.

Pixel coordinates are (row, col) for arrays; geometric quantities use
``x = col`` and ``y = row`` in the frame of the original (unpadded) image.
"""

from __future__ import annotations

import json
import math
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from . import kernels
from .forward import PaddedLayout
from .imagecore import Image2D, ImageError, check_mask, read_raw, write_raw

L_BOUNDS = (-1.0, 0.5)
H_BOUNDS = (0.5, 2.0)


class EdgeDetectionError(ValueError):
    """The radiograph does not contain a usable single straight edge."""


class RansacError(RuntimeError):
    pass


@dataclass(frozen=True)
class TransmissionParams:
    """Affine pair: ``T = l + (h - l) * T_ideal``."""

    l: float
    h: float

    def __post_init__(self):
        if not (L_BOUNDS[0] <= self.l <= L_BOUNDS[1] and H_BOUNDS[0] <= self.h <= H_BOUNDS[1]):
            raise ValueError(f"(l, h) = ({self.l}, {self.h}) outside the admissible box")

    @classmethod
    def clamped(cls, l, h) -> TransmissionParams:
        return cls(float(np.clip(l, *L_BOUNDS)), float(np.clip(h, *H_BOUNDS)))


@dataclass(frozen=True)
class EdgeLine:
    """Line ``x cos(phi) + y sin(phi) = offset``; the positive side is open beam."""

    normal_angle_deg: float
    offset_px: float

    @property
    def normal(self) -> tuple[float, float]:
        phi = math.radians(self.normal_angle_deg)
        return math.cos(phi), math.sin(phi)

    @property
    def direction_angle_deg(self) -> float:
        """Angle of the line itself from the +x axis, folded into [0, 180)."""
        return (self.normal_angle_deg + 90.0) % 180.0

    def signed_distance(self, rows, cols):
        nx, ny = self.normal
        return cols * nx + rows * ny - self.offset_px


@dataclass(frozen=True)
class IdealTransmission:
    """Padded ideal transmission with the original image at ``interior_offset``."""

    image: Image2D
    interior_offset: tuple[int, int]
    interior_shape: tuple[int, int]
    edge_line: EdgeLine | None = None

    def __post_init__(self):
        d = self.image.data
        if d.min() < 0 or d.max() > 1:
            raise ImageError("ideal transmission values must lie in [0, 1]")
        self.layout  # validates geometry

    @property
    def layout(self) -> PaddedLayout:
        return PaddedLayout(self.image.shape, tuple(self.interior_offset), tuple(self.interior_shape))

    def interior(self) -> np.ndarray:
        return self.layout.crop(self.image.data)

    def save(self, path) -> None:
        """Raw image at ``path`` plus a JSON sidecar at ``path`` + '.json'."""
        write_raw(path, self.image)
        meta = {"offset": list(self.interior_offset), "shape": list(self.interior_shape)}
        if self.edge_line is not None:
            meta["line"] = {"angle_deg": self.edge_line.normal_angle_deg,
                            "intercept_px": self.edge_line.offset_px}
        Path(str(path) + ".json").write_text(json.dumps(meta, indent=2) + "\n")

    @classmethod
    def load(cls, path) -> IdealTransmission:
        meta = json.loads(Path(str(path) + ".json").read_text())
        img = read_raw(path)
        shape = meta.get("shape") or [img.rows // 3, img.cols // 3]
        line = None
        if "line" in meta:
            line = EdgeLine(meta["line"]["angle_deg"], meta["line"]["intercept_px"])
        return cls(img, tuple(meta["offset"]), tuple(shape), line)


# ---------------------------------------------------------------------------
# marching squares

def _chain_segments(points, keys):
    adj = defaultdict(list)
    for s, (a, b) in enumerate(keys.tolist()):
        adj[a].append(s)
        adj[b].append(s)
    used = np.zeros(len(keys), dtype=bool)
    chains = []
    for s0 in range(len(keys)):
        if used[s0]:
            continue
        used[s0] = True
        ks = [int(keys[s0, 0]), int(keys[s0, 1])]
        ps = [points[s0, 0], points[s0, 1]]
        for forward in (True, False):
            while True:
                end = ks[-1] if forward else ks[0]
                nxt = [s for s in adj[end] if not used[s]]
                if not nxt:
                    break
                s = nxt[0]
                used[s] = True
                j = 1 if keys[s, 0] == end else 0
                if forward:
                    ks.append(int(keys[s, j]))
                    ps.append(points[s, j])
                else:
                    ks.insert(0, int(keys[s, j]))
                    ps.insert(0, points[s, j])
        closed = len(ks) > 2 and ks[0] == ks[-1]
        chains.append((np.array(ps[:-1] if closed else ps), closed))
    return chains


def marching_squares(image, level):
    """Iso-contours of ``image`` at ``level`` as (polyline[n, 2] of (row, col), closed) pairs.

    Saddle cells are disambiguated by comparing the cell-corner average with
    ``level``.
    """
    points, keys = kernels.marching_squares_segments(image, level)
    if len(keys) == 0:
        return []
    return _chain_segments(points, keys)


# ---------------------------------------------------------------------------
# ideal transmission

def scale_unit_range(data, percentiles=(0.1, 99.9)):
    """Map the low/high percentiles to 0/1 and clip."""
    lo, hi = np.percentile(data, percentiles)
    if not hi > lo:
        raise EdgeDetectionError("radiograph has no contrast")
    return np.clip((data - lo) / (hi - lo), 0.0, 1.0)


def _on_border(pt, shape, tol=1e-9):
    r, c = pt
    return r <= tol or c <= tol or r >= shape[0] - 1 - tol or c >= shape[1] - 1 - tol


def fit_line_tls(pts_rc):
    """Total least-squares line through (row, col) points: (centroid_xy, unit normal_xy)."""
    xy = np.column_stack([pts_rc[:, 1], pts_rc[:, 0]])
    centroid = xy.mean(axis=0)
    _, _, vt = np.linalg.svd(xy - centroid, full_matrices=False)
    return centroid, vt[1]


def ideal_transmission_from_edge(radiograph: Image2D, level: float = 0.5,
                                 percentiles=(0.1, 99.9)) -> IdealTransmission:
    """Ideal (blur-free) transmission of a straight opaque edge seen in ``radiograph``.

    The scaled radiograph is contoured at ``level``; pixels on the plate side
    get 0, open-beam pixels 1, and pixels bracketing contour vertices are
    interpolated linearly from 0.5 on the contour. The result is padded to
    three times the size, with padding split by the fitted edge line.
    """
    data = radiograph.data
    rows, cols = data.shape
    scaled = scale_unit_range(data, percentiles)
    contours = marching_squares(scaled, level)
    if not contours:
        raise EdgeDetectionError(f"no iso-contour found at level {level}")
    pts, closed = max(contours, key=lambda c: len(c[0]))
    if closed or len(pts) < 3 or not (_on_border(pts[0], data.shape) and _on_border(pts[-1], data.shape)):
        raise EdgeDetectionError("edge contour does not cross the field of view")

    centroid, normal = fit_line_tls(pts)
    rr, cc = np.mgrid[0:rows, 0:cols].astype(np.float64)
    d = (cc - centroid[0]) * normal[0] + (rr - centroid[1]) * normal[1]
    if scaled[d > 1].mean() < scaled[d < -1].mean():
        normal = -normal
        d = -d
    line = EdgeLine(math.degrees(math.atan2(normal[1], normal[0])), float(centroid @ normal))

    ideal = (d > 0).astype(np.float64)
    # pixels bracketing each contour vertex
    cand = _bracket_pixels(pts)
    cand = cand[(cand[:, 0] >= 0) & (cand[:, 0] < rows) & (cand[:, 1] >= 0) & (cand[:, 1] < cols)]
    _, nearest = cKDTree(pts).query(cand)
    v = pts[nearest]
    local = (cand[:, 1] - v[:, 1]) * normal[0] + (cand[:, 0] - v[:, 0]) * normal[1]
    ci = cand.astype(int)
    ideal[ci[:, 0], ci[:, 1]] = np.clip(0.5 + local, 0.0, 1.0)

    layout = PaddedLayout.centered((rows, cols))
    pr, pc = np.mgrid[0:layout.padded_shape[0], 0:layout.padded_shape[1]].astype(np.float64)
    padded = (line.signed_distance(pr - rows, pc - cols) > 0).astype(np.float64)
    padded[rows:2 * rows, cols:2 * cols] = ideal
    return IdealTransmission(Image2D(padded, radiograph.pitch), (rows, cols), (rows, cols), line)


def _bracket_pixels(pts):
    fr, cr = np.floor(pts[:, 0]), np.ceil(pts[:, 0])
    fc, cc = np.floor(pts[:, 1]), np.ceil(pts[:, 1])
    cand = np.concatenate([
        np.column_stack([fr, fc]), np.column_stack([fr, cc]),
        np.column_stack([cr, fc]), np.column_stack([cr, cc]),
    ])
    return np.unique(cand, axis=0)


def apply_affine(t: IdealTransmission | Image2D, p: TransmissionParams) -> Image2D:
    """``T = l + (h - l) * T_ideal`` elementwise."""
    img = t.image if isinstance(t, IdealTransmission) else t
    return img.like(p.l + (p.h - p.l) * img.data)


# ---------------------------------------------------------------------------
# robust affine initialisation

def _line_fit(x, y):
    xm, ym = x.mean(), y.mean()
    sxx = np.sum((x - xm) ** 2)
    slope = np.sum((x - xm) * (y - ym)) / sxx
    return ym - slope * xm, slope


def init_affine_ransac(radiograph: Image2D, ideal: IdealTransmission, mask,
                       seed=0, min_samples=10, residual_threshold=0.1,
                       max_trials=1000, stop_probability=0.99) -> TransmissionParams:
    """Robust fit of ``I = l + (h - l) T_ideal`` over masked interior pixels.

    Random ``min_samples`` subsets are fitted by least squares; the model with
    the most inliers (|residual| < ``residual_threshold``) wins, ties broken by
    inlier squared error, and is refitted on its inliers. Samples whose ideal
    values are all equal cannot determine a slope and are skipped. The trial
    count adapts to the inlier ratio as in standard RANSAC.
    """
    mask = check_mask(mask, radiograph.shape)
    sel = mask > 0
    x = ideal.interior()[sel]
    y = radiograph.data[sel]
    n = x.size
    if n < min_samples:
        raise ValueError(f"only {n} masked pixels; RANSAC needs at least {min_samples}")
    if np.ptp(x) == 0:
        raise RansacError("ideal transmission is constant over the mask")
    rng = np.random.default_rng(seed)
    best = None  # (count, -sse, inliers)
    needed = max_trials
    trial = 0
    while trial < min(needed, max_trials):
        trial += 1
        idx = rng.choice(n, size=min_samples, replace=False)
        xs = x[idx]
        if np.ptp(xs) == 0:
            continue
        icpt, slope = _line_fit(xs, y[idx])
        res = np.abs(y - (icpt + slope * x))
        inl = res < residual_threshold
        count = int(inl.sum())
        if count < min_samples:
            continue
        score = (count, -float(np.sum(res[inl] ** 2)))
        if best is None or score > best[0]:
            best = (score, inl)
            ratio = count / n
            if ratio >= 1.0:
                needed = trial
            else:
                denom = math.log(max(1e-300, 1.0 - ratio ** min_samples))
                needed = math.ceil(math.log(1.0 - stop_probability) / denom) if denom < 0 else max_trials
    if best is None:
        raise RansacError(f"no consensus set found in {trial} trials")
    inl = best[1]
    if np.ptp(x[inl]) == 0:
        raise RansacError("consensus set does not constrain the slope")
    l, slope = _line_fit(x[inl], y[inl])
    return TransmissionParams.clamped(l, l + slope)

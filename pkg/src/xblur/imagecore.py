"""Image container, flat-field normalization, metrics, convolution and file IO."""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.fft as sfft

from . import kernels

#: kernels with more taps than this go through the FFT path
FFT_AREA_THRESHOLD = 49

RAW_MAGIC = b"SABR"
_RAW_HEADER = struct.Struct("<4sIIf")

# worker count handed to scipy.fft; set from the CLI --threads flag
fft_workers = 1


class ImageError(ValueError):
    """Invalid image data, shape or pitch."""


@dataclass(frozen=True)
class Image2D:
    """Single-channel float64 image with a uniform pixel pitch in micrometres.

    The array is copied on construction and made read-only.
    """

    data: np.ndarray
    pitch: float = 1.0

    def __post_init__(self):
        arr = np.array(self.data, dtype=np.float64, copy=True)
        if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ImageError(f"expected a non-empty 2D array, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ImageError("image contains non-finite values")
        if not (self.pitch > 0 and np.isfinite(self.pitch)):
            raise ImageError(f"pitch must be positive, got {self.pitch}")
        arr.setflags(write=False)
        object.__setattr__(self, "data", arr)
        object.__setattr__(self, "pitch", float(self.pitch))

    @property
    def rows(self) -> int:
        return self.data.shape[0]

    @property
    def cols(self) -> int:
        return self.data.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    def like(self, data) -> Image2D:
        """New image with the same pitch."""
        return Image2D(data, self.pitch)


def check_mask(mask, shape) -> np.ndarray:
    """Validate a weight mask against an image shape and return it as float64."""
    m = np.asarray(mask, dtype=np.float64)
    if m.shape != tuple(shape):
        raise ImageError(f"mask shape {m.shape} does not match image shape {tuple(shape)}")
    if np.any(m < 0) or not np.all(np.isfinite(m)):
        raise ImageError("mask values must be finite and non-negative")
    return m


def band_mask(shape, fraction=0.1) -> np.ndarray:
    """Ones everywhere except a border band of ``fraction`` of each dimension."""
    rows, cols = shape
    br = int(round(fraction * rows))
    bc = int(round(fraction * cols))
    m = np.zeros((rows, cols))
    m[br:rows - br, bc:cols - bc] = 1.0
    return m


def normalize_radiograph(sample: Image2D, bright: Image2D, dark: Image2D) -> Image2D:
    """Dark-corrected flat-field normalization ``(sample - dark) / (bright - dark)``."""
    if not (sample.shape == bright.shape == dark.shape):
        raise ImageError(
            f"shape mismatch: sample {sample.shape}, bright {bright.shape}, dark {dark.shape}")
    if not (sample.pitch == bright.pitch == dark.pitch):
        raise ImageError("sample, bright and dark images must share a pitch")
    denom = bright.data - dark.data
    bad = np.argwhere(denom <= 0)
    if bad.size:
        i, j = bad[0]
        raise ZeroDivisionError(
            f"bright <= dark at pixel ({i}, {j}): bright={bright.data[i, j]}, dark={dark.data[i, j]}")
    return sample.like((sample.data - dark.data) / denom)


def _fft_convolve_full(a, k):
    shape = (a.shape[0] + k.shape[0] - 1, a.shape[1] + k.shape[1] - 1)
    fshape = tuple(sfft.next_fast_len(n, real=True) for n in shape)
    fa = sfft.rfft2(a, fshape, workers=fft_workers)
    fk = sfft.rfft2(k, fshape, workers=fft_workers)
    return sfft.irfft2(fa * fk, fshape, workers=fft_workers)[:shape[0], :shape[1]]


def convolve_same_array(image, kernel, method="auto") -> np.ndarray:
    """Array-level 'same' convolution with zero-padded boundaries.

    ``method`` is 'direct', 'fft' or 'auto' (FFT once the kernel has more than
    ``FFT_AREA_THRESHOLD`` taps).
    """
    image = np.asarray(image, dtype=np.float64)
    kernel = np.asarray(kernel, dtype=np.float64)
    kr, kc = kernel.shape
    if kr % 2 == 0 or kc % 2 == 0:
        raise ImageError(f"kernel must have odd dimensions, got {kernel.shape}")
    if method == "auto":
        method = "fft" if kr * kc > FFT_AREA_THRESHOLD else "direct"
    if method == "direct":
        return kernels.convolve_direct(image, kernel)
    if method != "fft":
        raise ValueError(f"unknown convolution method {method!r}")
    full = _fft_convolve_full(image, kernel)
    hr, hc = kr // 2, kc // 2
    return full[hr:hr + image.shape[0], hc:hc + image.shape[1]]


def convolve_same(image: Image2D, kernel: Image2D, method: str = "auto") -> Image2D:
    """'Same'-size linear convolution of ``image`` with an odd-sized ``kernel``."""
    if kernel.pitch != image.pitch:
        raise ImageError(f"kernel pitch {kernel.pitch} differs from image pitch {image.pitch}")
    return image.like(convolve_same_array(image.data, kernel.data, method))


def masked_rmse(a: Image2D | np.ndarray, b: Image2D | np.ndarray, mask=None) -> float:
    """Weighted root-mean-square difference ``sqrt(sum m (a-b)^2 / sum m)``."""
    a = a.data if isinstance(a, Image2D) else np.asarray(a, dtype=np.float64)
    b = b.data if isinstance(b, Image2D) else np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ImageError(f"shape mismatch {a.shape} vs {b.shape}")
    m = np.ones(a.shape) if mask is None else check_mask(mask, a.shape)
    total = m.sum()
    if total <= 0:
        raise ImageError("mask has no nonzero entries")
    return float(np.sqrt(np.sum(m * (a - b) ** 2) / total))


def corner_noise_level(image: Image2D | np.ndarray, box: int) -> float:
    """Mean of the sample standard deviations of the four ``box`` x ``box`` corner patches."""
    data = image.data if isinstance(image, Image2D) else np.asarray(image, dtype=np.float64)
    rows, cols = data.shape
    if box < 2 or 2 * box > min(rows, cols):
        raise ImageError(f"box {box} does not fit twice into image of shape {data.shape}")
    patches = (
        data[:box, :box], data[:box, -box:],
        data[-box:, :box], data[-box:, -box:],
    )
    return float(np.mean([np.std(p, ddof=1) for p in patches]))


# ---------------------------------------------------------------------------
# file IO

def write_raw(path, image: Image2D) -> None:
    """Write the raw format: 16-byte little-endian header then row-major float64."""
    header = _RAW_HEADER.pack(RAW_MAGIC, image.rows, image.cols, image.pitch)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(image.data, dtype="<f8").tobytes())


def read_raw(path) -> Image2D:
    blob = Path(path).read_bytes()
    if len(blob) < _RAW_HEADER.size:
        raise ImageError(f"{path}: file too short for raw header")
    magic, rows, cols, pitch = _RAW_HEADER.unpack_from(blob)
    if magic != RAW_MAGIC:
        raise ImageError(f"{path}: bad magic {magic!r}")
    expected = _RAW_HEADER.size + 8 * rows * cols
    if len(blob) != expected:
        raise ImageError(f"{path}: expected {expected} bytes, found {len(blob)}")
    data = np.frombuffer(blob, dtype="<f8", offset=_RAW_HEADER.size).reshape(rows, cols)
    return Image2D(data, float(pitch))


def read_image(path, pitch: float | None = None) -> Image2D:
    """Read a raw (``.sabr``/``.raw``) or single-channel TIFF image.

    TIFF files carry no pitch, so ``pitch`` (default 1 um) is applied; for raw
    files a given ``pitch`` overrides the header value.
    """
    path = Path(path)
    if path.suffix.lower() in (".tif", ".tiff"):
        import tifffile

        arr = tifffile.imread(path)
        if arr.ndim != 2:
            raise ImageError(f"{path}: expected a single-channel image, got shape {arr.shape}")
        if arr.dtype not in (np.uint8, np.uint16, np.float32, np.float64):
            raise ImageError(f"{path}: unsupported sample type {arr.dtype}")
        return Image2D(arr.astype(np.float64), 1.0 if pitch is None else pitch)
    img = read_raw(path)
    return img if pitch is None else Image2D(img.data, pitch)


def write_image(path, image: Image2D, dtype=None) -> None:
    """Write raw or TIFF depending on the suffix.

    TIFF output is float32 unless ``dtype`` is ``np.uint8``/``np.uint16``, in
    which case values are rounded and clipped to the integer range.
    """
    path = Path(path)
    if path.suffix.lower() in (".tif", ".tiff"):
        import tifffile

        dtype = np.dtype(np.float32 if dtype is None else dtype)
        data = image.data
        if dtype.kind == "u":
            info = np.iinfo(dtype)
            data = np.clip(np.rint(data), info.min, info.max)
        elif dtype != np.float32:
            raise ImageError(f"unsupported TIFF sample type {dtype}")
        tifffile.imwrite(path, data.astype(dtype))
        return
    write_raw(path, image)

"""Pure numpy/Python versions of the compiled kernels in ``_ckernels.pyx``.

Results agree with the compiled versions to rounding; only the summation
order differs.
"""

import numpy as np

# (drow, dcol) of the 8-connected neighbourhood, same order as _ckernels
NEIGHBOR_OFFSETS = (
    (-1, -1), (-1, 0), (-1, 1),
    (0, -1), (0, 1),
    (1, -1), (1, 0), (1, 1),
)


def convolve_direct(image, kernel):
    """Zero-padded 'same' convolution, one shifted multiply-add per kernel tap."""
    rows, cols = image.shape
    kr, kc = kernel.shape
    hr, hc = kr // 2, kc // 2
    padded = np.zeros((rows + 2 * hr, cols + 2 * hc))
    padded[hr:hr + rows, hc:hc + cols] = image
    out = np.zeros((rows, cols))
    for a in range(kr):
        for b in range(kc):
            w = kernel[a, b]
            if w == 0.0:
                continue
            # out[i, j] += k[a, b] * image[i + hr - a, j + hc - b]
            out += w * padded[2 * hr - a:2 * hr - a + rows, 2 * hc - b:2 * hc - b + cols]
    return out


def _frac(a, b, level):
    return (level - a) / (b - a)


def marching_squares_segments(img, level):
    """Return (points[n, 2, 2], edge_keys[n, 2]) for every iso-line segment.

    Only cells whose corners straddle ``level`` are visited, so the Python loop
    is proportional to the contour length rather than the image area.
    """
    img = np.ascontiguousarray(img, dtype=np.float64)
    rows, cols = img.shape
    stride = cols + 1
    above = img >= level
    tl, tr = above[:-1, :-1], above[:-1, 1:]
    br, bl = above[1:, 1:], above[1:, :-1]
    case = tl * 1 + tr * 2 + br * 4 + bl * 8
    cand_i, cand_j = np.nonzero((case != 0) & (case != 15))
    points = []
    keys = []
    for i, j in zip(cand_i.tolist(), cand_j.tolist()):
        vtl, vtr = img[i, j], img[i, j + 1]
        vbr, vbl = img[i + 1, j + 1], img[i + 1, j]
        c = int(case[i, j])
        btl, btr, bbr, bbl = vtl >= level, vtr >= level, vbr >= level, vbl >= level
        px = [
            (i, j + _frac(vtl, vtr, level) if btl != btr else 0.0),
            (i + _frac(vtr, vbr, level) if btr != bbr else 0.0, j + 1),
            (i + 1, j + _frac(vbl, vbr, level) if bbl != bbr else 0.0),
            (i + _frac(vtl, vbl, level) if btl != bbl else 0.0, j),
        ]
        ek = [
            2 * (i * stride + j),
            2 * (i * stride + j + 1) + 1,
            2 * ((i + 1) * stride + j),
            2 * (i * stride + j) + 1,
        ]
        if c in (5, 10):
            high_center = 0.25 * (vtl + vtr + vbr + vbl) >= level
            pairs = ((0, 1), (2, 3)) if (c == 5) == high_center else ((0, 3), (1, 2))
        else:
            crossed = [e for e, hit in enumerate((btl != btr, btr != bbr, bbl != bbr, btl != bbl)) if hit]
            pairs = (tuple(crossed),)
        for e0, e1 in pairs:
            points.append((px[e0], px[e1]))
            keys.append((ek[e0], ek[e1]))
    return (np.asarray(points, dtype=np.float64).reshape(-1, 2, 2),
            np.asarray(keys, dtype=np.int64).reshape(-1, 2))


def neighbor_prior(t, weights, eps, power):
    """Value and gradient of sum_d sum_p w[d, p] * (|t[p] - t[p + d]|^2 + eps^2)^(power / 2)."""
    rows, cols = t.shape
    value = 0.0
    grad = np.zeros((rows, cols))
    half = 0.5 * power
    for d, (di, dj) in enumerate(NEIGHBOR_OFFSETS):
        # p ranges over pixels whose neighbour p + (di, dj) is inside the image
        r0, r1 = max(0, -di), rows - max(0, di)
        c0, c1 = max(0, -dj), cols - max(0, dj)
        w = weights[d, r0:r1, c0:c1]
        diff = t[r0:r1, c0:c1] - t[r0 + di:r1 + di, c0 + dj:c1 + dj]
        base = diff * diff + eps * eps
        value += float(np.sum(w * base ** half))
        g = w * power * diff * base ** (half - 1.0)
        grad[r0:r1, c0:c1] += g
        grad[r0 + di:r1 + di, c0 + dj:c1 + dj] -= g
    return value, grad

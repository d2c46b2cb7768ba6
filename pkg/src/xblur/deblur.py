"""Blur prediction and removal with a known blur model.

Both deconvolution methods work on a mirrored extension of the radiograph to
twice its size. The extension is periodic without seams, so frequency-domain
operations do not wrap one image border onto the other.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, NamedTuple

import numpy as np
from scipy.optimize import minimize

from . import kernels
from .forward import PaddedLayout, blur_padded, embed_kernel, image_kernel, irfft2, rfft2
from .imagecore import Image2D, ImageError, check_mask, corner_noise_level
from .psf import BlurModel, ScanGeometry

LAPLACIAN = np.array([[0.0, 1.0, 0.0], [1.0, -4.0, 1.0], [0.0, 1.0, 0.0]])


@dataclass(frozen=True)
class WienerConfig:
    balance: float = 1e-3

    def __post_init__(self):
        if not self.balance > 0:
            raise ValueError(f"balance must be positive, got {self.balance}")


@dataclass(frozen=True)
class RlsdConfig:
    """Regularised least-squares settings; the prior exponent is fixed at 1.2."""

    beta: float = 1e-2
    p_exponent: float = 1.2
    epsilon: float = 1e-8
    max_iterations: int = 500
    gradient_tolerance: float = 1e-7

    def __post_init__(self):
        if self.beta < 0:
            raise ValueError("beta must be non-negative")
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if self.p_exponent != 1.2:
            raise ValueError("the prior exponent is fixed at 1.2")
        if self.max_iterations < 1 or not self.gradient_tolerance > 0:
            raise ValueError("iteration limit and tolerance must be positive")


def predict(transmission: Image2D, model: BlurModel, g: ScanGeometry,
            layout: PaddedLayout | None = None, source_half=None) -> Image2D:
    """Blurred radiograph ``T * p`` at the interior of a padded transmission.

    Without ``layout`` the transmission must be the centred 3x padded grid.
    """
    if layout is None:
        r, c = transmission.shape
        if r % 3 or c % 3:
            raise ImageError(f"transmission {transmission.shape} is not a 3x padded grid")
        layout = PaddedLayout.centered((r // 3, c // 3))
    return Image2D(blur_padded(transmission.data, layout, model, g, transmission.pitch, source_half),
                   transmission.pitch)


# ---------------------------------------------------------------------------
# mirrored extension

def _mirror_index(n):
    return np.pad(np.arange(n), (n // 2, n - n // 2), mode="symmetric")


class _Extension:
    """Symmetric extension of an ``(R, C)`` image to ``(2R, 2C)`` and its adjoint."""

    def __init__(self, shape):
        self.shape = tuple(shape)
        self.ri = _mirror_index(shape[0])
        self.ci = _mirror_index(shape[1])
        self.ext_shape = (2 * shape[0], 2 * shape[1])
        self.flat = (self.ri[:, None] * shape[1] + self.ci[None, :]).ravel()
        self.off = (shape[0] // 2, shape[1] // 2)

    def extend(self, a):
        return a[np.ix_(self.ri, self.ci)]

    def extend_adjoint(self, e):
        return np.bincount(self.flat, weights=e.ravel(), minlength=self.shape[0] * self.shape[1]).reshape(self.shape)

    def crop(self, e):
        (r0, c0), (r, c) = self.off, self.shape
        return e[r0:r0 + r, c0:c0 + c]

    def crop_adjoint(self, a):
        out = np.zeros(self.ext_shape)
        (r0, c0), (r, c) = self.off, self.shape
        out[r0:r0 + r, c0:c0 + c] = a
        return out


def _transfer(model, g, pitch, shape, ext_shape, source_half=None):
    k = image_kernel(model, g, pitch, shape, source_half)
    return rfft2(embed_kernel(k, ext_shape))


def wiener_deblur(radiograph: Image2D, model: BlurModel, g: ScanGeometry,
                  cfg: WienerConfig = WienerConfig(), source_half=None) -> Image2D:
    """Wiener-type inverse ``conj(P) Y / (|P|^2 + balance |L|^2)`` with a Laplacian ``L``."""
    ext = _Extension(radiograph.shape)
    p = _transfer(model, g, radiograph.pitch, radiograph.shape, ext.ext_shape, source_half)
    lap = rfft2(embed_kernel(LAPLACIAN, ext.ext_shape))
    y = rfft2(ext.extend(radiograph.data))
    x = np.conj(p) * y / (np.abs(p) ** 2 + cfg.balance * np.abs(lap) ** 2)
    return radiograph.like(ext.crop(irfft2(x, ext.ext_shape)))


# ---------------------------------------------------------------------------
# regularised least squares

def neighbor_weights(shape) -> np.ndarray:
    """Inverse-distance weights over the 8-neighbourhood, summing to one per pixel.

    Border pixels renormalise over the neighbours that exist. Layout is
    ``[8, rows, cols]`` in the order of ``kernels.NEIGHBOR_OFFSETS``.
    """
    rows, cols = shape
    w = np.zeros((8, rows, cols))
    for d, (di, dj) in enumerate(kernels.NEIGHBOR_OFFSETS):
        r0, r1 = max(0, -di), rows - max(0, di)
        c0, c1 = max(0, -dj), cols - max(0, dj)
        w[d, r0:r1, c0:c1] = 1.0 / math.hypot(di, dj)
    total = w.sum(axis=0)
    return w / np.where(total > 0, total, 1.0)


class RlsdResult(NamedTuple):
    image: Image2D
    iterations: int
    converged: bool
    trajectory: list
    message: str


class _RlsdProblem:
    def __init__(self, radiograph, model, g, mask, cfg, source_half=None):
        self.y = radiograph.data
        self.shape = radiograph.shape
        self.mask = check_mask(mask, self.shape)
        self.cfg = cfg
        self.ext = _Extension(self.shape)
        self.p = _transfer(model, g, radiograph.pitch, self.shape, self.ext.ext_shape, source_half)
        self.weights = neighbor_weights(self.shape)

    def blur(self, t):
        e = self.ext
        return e.crop(irfft2(rfft2(e.extend(t)) * self.p, e.ext_shape))

    def blur_adjoint(self, a):
        e = self.ext
        return e.extend_adjoint(irfft2(rfft2(e.crop_adjoint(a)) * np.conj(self.p), e.ext_shape))

    def __call__(self, z):
        t = z.reshape(self.shape)
        res = self.y - self.blur(t)
        wr = self.mask * res
        f = float(np.sum(wr * res))
        grad = -2.0 * self.blur_adjoint(wr)
        if self.cfg.beta > 0:
            pv, pg = kernels.neighbor_prior(t, self.weights, self.cfg.epsilon, self.cfg.p_exponent)
            f += self.cfg.beta * pv
            grad += self.cfg.beta * pg
        return f, grad.ravel()


def rlsd_objective(radiograph, model, g, t, mask=None, cfg: RlsdConfig = RlsdConfig()):
    """Objective value and gradient at the image ``t`` (for checking)."""
    mask = np.ones(radiograph.shape) if mask is None else mask
    return _RlsdProblem(radiograph, model, g, mask, cfg)(np.asarray(t, dtype=np.float64).ravel())


def rlsd_solve(radiograph: Image2D, model: BlurModel, g: ScanGeometry, mask=None,
               cfg: RlsdConfig = RlsdConfig(), source_half=None) -> RlsdResult:
    """Minimise ``sum w (I - T*p)^2 + beta * sum w_nb rho(T_p - T_n)`` from ``T = I``.

    ``rho(x) = (x^2 + eps^2)^0.6`` over ordered 8-neighbour pairs. Solved with
    L-BFGS-B without bounds; the trajectory holds the objective per iteration.
    """
    mask = np.ones(radiograph.shape) if mask is None else mask
    prob = _RlsdProblem(radiograph, model, g, mask, cfg, source_half)
    z0 = radiograph.data.ravel().copy()
    traj = [prob(z0)[0]]
    last = {}

    def fun(z):
        out = prob(z)
        last["x"], last["f"] = z.copy(), out[0]
        return out

    def callback(zk):
        traj.append(last["f"] if np.array_equal(zk, last.get("x")) else prob(zk)[0])

    res = minimize(fun, z0, jac=True, method="L-BFGS-B", callback=callback,
                   options={"maxiter": cfg.max_iterations, "gtol": cfg.gradient_tolerance,
                            "ftol": 1e-12, "maxcor": 10})
    return RlsdResult(radiograph.like(res.x.reshape(radiograph.shape)), int(res.nit),
                      bool(res.status == 0), traj, str(res.message))


def rlsd_deblur(radiograph: Image2D, model: BlurModel, g: ScanGeometry, mask=None,
                cfg: RlsdConfig = RlsdConfig(), source_half=None) -> Image2D:
    return rlsd_solve(radiograph, model, g, mask, cfg, source_half).image


# ---------------------------------------------------------------------------
# noise matching

class TuneResult(NamedTuple):
    image: Image2D
    achieved_sd: float
    regularization: float
    steps: int
    reached: bool


def tune_to_noise(deblurrer: Callable[[float], Image2D], radiograph: Image2D, target_sd: float,
                  box: int | None = None, bracket=(1e-6, 1e2), rel_tol=0.05, max_steps=30) -> TuneResult:
    """Pick the regularisation whose output has corner noise ``target_sd``.

    ``deblurrer(reg)`` returns the deblurred image for regularisation ``reg``.
    The search bisects ``log(reg)`` inside ``bracket``, assuming the corner
    noise falls as regularisation grows. If the target lies outside what the
    bracket can reach, the closer endpoint is returned with ``reached=False``.
    """
    if not target_sd > 0:
        raise ValueError("target_sd must be positive")
    if box is None:
        box = max(2, min(radiograph.shape) // 8)
    lo, hi = (math.log(v) for v in bracket)

    def run(logreg):
        img = deblurrer(math.exp(logreg))
        return img, corner_noise_level(img, box)

    img_lo, sd_lo = run(lo)
    if abs(sd_lo - target_sd) <= rel_tol * target_sd or sd_lo < target_sd:
        return TuneResult(img_lo, sd_lo, math.exp(lo), 1, abs(sd_lo - target_sd) <= rel_tol * target_sd)
    img_hi, sd_hi = run(hi)
    if sd_hi > target_sd:
        return TuneResult(img_hi, sd_hi, math.exp(hi), 2, abs(sd_hi - target_sd) <= rel_tol * target_sd)
    best = min(((img_lo, sd_lo, lo), (img_hi, sd_hi, hi)), key=lambda b: abs(b[1] - target_sd))
    steps = 2
    while steps < max_steps:
        mid = 0.5 * (lo + hi)
        img, sd = run(mid)
        steps += 1
        if abs(sd - target_sd) < abs(best[1] - target_sd):
            best = (img, sd, mid)
        if abs(sd - target_sd) <= rel_tol * target_sd:
            break
        if sd > target_sd:
            lo = mid
        else:
            hi = mid
    img, sd, lr = best
    return TuneResult(img, sd, math.exp(lr), steps, abs(sd - target_sd) <= rel_tol * target_sd)

"""Least-squares blur estimation from edge radiographs.

The objective sums, over radiographs ``k``, ``0.5 * sum w_k (I_k - Ibar_k)^2``
with ``Ibar_k = l_k + (h_k - l_k) * (T_ideal_k * p_source_k * p_detector)``
evaluated on the padded grid. Blur scales are optimised internally as
per-pixel scales ``a = s * pitch``; public gradients are in physical units.

Parameter layout (length ``5 + 2K``)::

    [s_sx, s_sy, s_d1, s_d2, q, l_1 .. l_K, h_1 .. h_K]
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

from .forward import PaddedLayout, embed_kernel, extract_kernel, irfft2, rfft2
from .imagecore import Image2D, ImageError, band_mask, check_mask, convolve_same_array
from .psf import (BlurModel, DetectorPsfParams, ScanGeometry, SourcePsfParams,
                  detector_kernel, fwhm_to_scale, source_kernel)
from .transmission import (H_BOUNDS, L_BOUNDS, IdealTransmission, TransmissionParams,
                           ideal_transmission_from_edge, init_affine_ransac)

N_BLUR = 5
SOURCE_IDX = (0, 1)
DETECTOR_IDX = (2, 3, 4)
COMPONENT_MODES = ("free", "fixed", "delta")


class ProblemError(ValueError):
    """Inconsistent or insufficient estimation data."""


@dataclass(frozen=True)
class Entry:
    radiograph: Image2D
    ideal: IdealTransmission
    geometry: ScanGeometry
    mask: np.ndarray

    def __post_init__(self):
        if self.ideal.interior_shape != self.radiograph.shape:
            raise ProblemError(
                f"ideal interior {self.ideal.interior_shape} does not match radiograph {self.radiograph.shape}")
        if self.ideal.image.pitch != self.radiograph.pitch:
            raise ProblemError("radiograph and ideal transmission pitches differ")
        m = check_mask(self.mask, self.radiograph.shape)
        m.setflags(write=False)
        object.__setattr__(self, "mask", m)


def make_entry(radiograph: Image2D, geometry: ScanGeometry, mask=None, band=0.1) -> Entry:
    """Entry with the ideal transmission built from the radiograph's edge."""
    ideal = ideal_transmission_from_edge(radiograph)
    if mask is None:
        mask = band_mask(radiograph.shape, band)
    return Entry(radiograph, ideal, geometry, mask)


@dataclass(frozen=True)
class EstimationProblem:
    entries: tuple
    r: float = 1.0
    q_low: float = 0.8
    source_half: int | None = None

    def __post_init__(self):
        entries = tuple(self.entries)
        if not entries:
            raise ProblemError("no radiographs")
        pitches = {e.radiograph.pitch for e in entries}
        if len(pitches) != 1:
            raise ProblemError(f"entries do not share a pitch: {sorted(pitches)}")
        if self.r < 1:
            raise ProblemError("shape exponent r must be >= 1")
        if not 0.0 <= self.q_low <= 1.0:
            raise ProblemError("q_low must lie in [0, 1]")
        for e in entries:
            e.ideal.layout.supports(self.source_half)
        object.__setattr__(self, "entries", entries)

    @property
    def K(self) -> int:
        return len(self.entries)

    @property
    def pitch(self) -> float:
        return self.entries[0].radiograph.pitch

    def ratios(self) -> np.ndarray:
        return np.array([e.geometry.blur_ratio for e in self.entries])

    def check_full(self) -> None:
        """Requirements for three-stage estimation."""
        if len(_ratio_groups(self.ratios())) < 2:
            raise ProblemError("need two distinct ODD/SOD ratios")
        if self.K < 4:
            raise ProblemError(f"need at least 4 radiographs, got {self.K}")
        orient = {e.geometry.orientation for e in self.entries}
        if not {"horizontal", "vertical"} <= orient:
            raise ProblemError("need both horizontal and vertical edges")


@dataclass(frozen=True)
class ParameterVector:
    """Physical parameters: scales in um^-1, mixture weight, per-entry (l, h)."""

    s_sx: float
    s_sy: float
    s_d1: float
    s_d2: float
    q: float
    l: tuple
    h: tuple

    def __post_init__(self):
        object.__setattr__(self, "l", tuple(float(v) for v in self.l))
        object.__setattr__(self, "h", tuple(float(v) for v in self.h))
        if len(self.l) != len(self.h):
            raise ValueError("l and h must have one value per radiograph")

    @property
    def K(self) -> int:
        return len(self.l)

    def to_array(self) -> np.ndarray:
        return np.array([self.s_sx, self.s_sy, self.s_d1, self.s_d2, self.q, *self.l, *self.h])

    @classmethod
    def from_array(cls, x) -> ParameterVector:
        x = np.asarray(x, dtype=np.float64)
        k = (x.size - N_BLUR) // 2
        if x.size != N_BLUR + 2 * k:
            raise ValueError(f"parameter array of length {x.size} has no valid layout")
        return cls(*map(float, x[:N_BLUR]), tuple(x[N_BLUR:N_BLUR + k]), tuple(x[N_BLUR + k:]))

    @classmethod
    def from_model(cls, model: BlurModel, transmissions) -> ParameterVector:
        src = model.source or SourcePsfParams(0.0, 0.0, model.r)
        det = model.detector or DetectorPsfParams(0.0, 0.0, 1.0, model.r)
        return cls(src.s_sx, src.s_sy, det.s_d1, det.s_d2, det.q,
                   tuple(t.l for t in transmissions), tuple(t.h for t in transmissions))

    def blur_model(self, r=1.0, source=True, detector=True) -> BlurModel:
        src = SourcePsfParams(self.s_sx, self.s_sy, r) if source else None
        det = DetectorPsfParams(self.s_d1, self.s_d2, self.q, r) if detector else None
        return BlurModel(src, det, r)

    def transmissions(self) -> list[TransmissionParams]:
        return [TransmissionParams(l, h) for l, h in zip(self.l, self.h)]

    def in_bounds(self, q_low=0.8) -> bool:
        x = self.to_array()
        lo, hi = parameter_bounds(self.K, q_low)
        return bool(np.all(x >= lo) and np.all(x <= hi))


def parameter_bounds(K, q_low=0.8) -> tuple[np.ndarray, np.ndarray]:
    lo = np.concatenate([[0.0] * 4, [q_low], [L_BOUNDS[0]] * K, [H_BOUNDS[0]] * K])
    hi = np.concatenate([[np.inf] * 4, [1.0], [L_BOUNDS[1]] * K, [H_BOUNDS[1]] * K])
    return lo, hi


@dataclass(frozen=True)
class ActiveSet:
    """Which parameters vary and which radiographs enter the objective.

    ``source`` and ``detector`` are 'free' (optimised), 'fixed' (held at the
    given values) or 'delta' (replaced by a unit impulse).
    """

    source: str = "free"
    detector: str = "free"
    transmission: bool = True
    entries: tuple | None = None

    def __post_init__(self):
        if self.source not in COMPONENT_MODES or self.detector not in COMPONENT_MODES:
            raise ValueError(f"component modes must be in {COMPONENT_MODES}")
        if self.entries is not None:
            object.__setattr__(self, "entries", tuple(int(k) for k in self.entries))

    def entry_list(self, K) -> list[int]:
        ks = list(range(K)) if self.entries is None else list(self.entries)
        if not ks or min(ks) < 0 or max(ks) >= K or len(set(ks)) != len(ks):
            raise ValueError(f"invalid entry subset {self.entries} for K={K}")
        return ks

    def free_mask(self, K) -> np.ndarray:
        m = np.zeros(N_BLUR + 2 * K, dtype=bool)
        if self.source == "free":
            m[list(SOURCE_IDX)] = True
        if self.detector == "free":
            m[list(DETECTOR_IDX)] = True
        if self.transmission:
            for k in self.entry_list(K):
                m[N_BLUR + k] = m[N_BLUR + K + k] = True
        return m


@dataclass(frozen=True)
class SolverConfig:
    max_iterations: int = 500
    gradient_tolerance: float = 1e-8
    objective_tolerance: float = 1e-10
    history_size: int = 10
    threads: int = 1
    seed: int = 0

    def __post_init__(self):
        if min(self.max_iterations, self.history_size, self.threads) < 1:
            raise ValueError("iteration count, history size and threads must be positive")
        if not (self.gradient_tolerance > 0 and self.objective_tolerance > 0):
            raise ValueError("tolerances must be positive")


# ---------------------------------------------------------------------------
# evaluation

def _internal(x_phys, pitch):
    x = np.array(x_phys, dtype=np.float64)
    x[:4] *= pitch
    return x


def _physical(x_int, pitch):
    x = np.array(x_int, dtype=np.float64)
    x[:4] /= pitch
    return x


class _Evaluator:
    """Objective and gradient in internal variables for a fixed active set."""

    def __init__(self, problem: EstimationProblem, active: ActiveSet, threads=1, method="fft"):
        self.problem = problem
        self.active = active
        self.ks = active.entry_list(problem.K)
        self.threads = threads
        self.method = method
        self.cache = {}
        self.tft = {}
        for k in self.ks:
            e = problem.entries[k]
            if method == "fft":
                self.tft[k] = rfft2(e.ideal.image.data)

    def _kernels(self, x, grad):
        # kernels and their FFTs, keyed so entries with equal geometry/shape share them
        p = self.problem
        src, det = {}, {}
        for k in self.ks:
            e = p.entries[k]
            lay = e.ideal.layout
            hs, hd = lay.supports(p.source_half)
            shape = e.ideal.image.shape
            if self.active.source != "delta":
                key = (e.geometry.sod / e.geometry.odd, shape, hs)
                if key not in src:
                    out = source_kernel(x[0], x[1], p.r, hs, mag=key[0], grads=grad)
                    ker = out[0] if grad else out
                    ft = rfft2(embed_kernel(ker, shape)) if self.method == "fft" else None
                    src[key] = (ker, out[1:] if grad else (), ft)
            if self.active.detector != "delta":
                key = (shape, hd)
                if key not in det:
                    out = detector_kernel(x[2], x[3], x[4], p.r, hd, grads=grad)
                    ker = out[0] if grad else out
                    ft = rfft2(embed_kernel(ker, shape)) if self.method == "fft" else None
                    det[key] = (ker, out[1:] if grad else (), ft)
        return src, det

    def _entry(self, k, x, src, det, grad):
        p = self.problem
        e = p.entries[k]
        K = p.K
        lay: PaddedLayout = e.ideal.layout
        hs, hd = lay.supports(p.source_half)
        shape = e.ideal.image.shape
        s = src.get((e.geometry.sod / e.geometry.odd, shape, hs)) if self.active.source != "delta" else None
        d = det.get((shape, hd)) if self.active.detector != "delta" else None
        l, h = x[N_BLUR + k], x[N_BLUR + K + k]

        if self.method == "fft":
            spec = self.tft[k]
            for comp in (s, d):
                if comp is not None:
                    spec = spec * comp[2]
            b = lay.crop(irfft2(spec, shape))
        else:
            t = e.ideal.image.data
            for comp in (s, d):
                if comp is not None:
                    t = convolve_same_array(t, comp[0], "direct")
            b = lay.crop(t)

        res = e.radiograph.data - (l + (h - l) * b)
        wr = e.mask * res
        f = 0.5 * float(np.sum(wr * res))
        if not grad:
            return f, None
        g = np.zeros(N_BLUR + 2 * K)
        g[N_BLUR + k] = -float(np.sum(wr * (1.0 - b)))
        g[N_BLUR + K + k] = -float(np.sum(wr * b))
        if self.active.source == "free" or self.active.detector == "free":
            c = rfft2(lay.embed(wr)) * np.conj(self.tft[k])
            if self.active.source == "free" and s is not None:
                cs = c if d is None else c * np.conj(d[2])
                gs = extract_kernel(irfft2(cs, shape), s[0].shape)
                for i, dp in zip(SOURCE_IDX, s[1]):
                    g[i] = -(h - l) * float(np.sum(dp * gs))
            if self.active.detector == "free" and d is not None:
                cd = c if s is None else c * np.conj(s[2])
                gd = extract_kernel(irfft2(cd, shape), d[0].shape)
                for i, dp in zip(DETECTOR_IDX, d[1]):
                    g[i] = -(h - l) * float(np.sum(dp * gd))
        return f, g

    def __call__(self, x, grad=True):
        key = (x.tobytes(), grad)
        if key in self.cache:
            return self.cache[key]
        if grad and self.method != "fft":
            raise ValueError("gradients are only available on the FFT path")
        src, det = self._kernels(x, grad)
        if self.threads > 1 and len(self.ks) > 1:
            with ThreadPoolExecutor(self.threads) as ex:
                parts = list(ex.map(lambda k: self._entry(k, x, src, det, grad), self.ks))
        else:
            parts = [self._entry(k, x, src, det, grad) for k in self.ks]
        # fixed summation order keeps results independent of the thread count
        f = math.fsum(pf for pf, _ in parts)
        g = None
        if grad:
            g = np.sum(np.stack([pg for _, pg in parts]), axis=0)
            g[~self.active.free_mask(self.problem.K)] = 0.0
        self.cache = {key: (f, g)}
        return f, g


def _check_params(problem, params: ParameterVector):
    if params.K != problem.K:
        raise ProblemError(f"parameter vector has {params.K} (l, h) pairs for {problem.K} radiographs")
    if not params.in_bounds(problem.q_low):
        raise ValueError("parameters outside the admissible box")


def objective(problem: EstimationProblem, params: ParameterVector, active: ActiveSet = ActiveSet(),
              method: str = "fft", threads: int = 1) -> float:
    """Weighted half sum of squared residuals over the active radiographs.

    ``method='direct'`` evaluates the convolutions by explicit summation
    instead of FFTs (slow; meant for checking).
    """
    _check_params(problem, params)
    ev = _Evaluator(problem, active, threads, method)
    return ev(_internal(params.to_array(), problem.pitch), grad=False)[0]


def gradient(problem: EstimationProblem, params: ParameterVector, active: ActiveSet = ActiveSet(),
             threads: int = 1) -> np.ndarray:
    """Analytic gradient in physical units, same layout as ``params.to_array()``.

    Entries for inactive parameters are zero.
    """
    _check_params(problem, params)
    ev = _Evaluator(problem, active, threads)
    _, g = ev(_internal(params.to_array(), problem.pitch), grad=True)
    g = g.copy()
    g[:4] *= problem.pitch  # df/ds = df/da * pitch
    return g


# ---------------------------------------------------------------------------
# solver driver

@dataclass
class StageReport:
    stage: str
    entries: list
    parameters: list
    objective_initial: float
    objective_final: float
    trajectory: list = field(default_factory=list)
    iterations: int = 0
    evaluations: int = 0
    converged: bool = False
    termination: str = ""

    def to_dict(self) -> dict:
        return dict(self.__dict__)


_NAMES = ["s_sx", "s_sy", "s_d1", "s_d2", "q"]


def _param_names(K):
    return _NAMES + [f"l_{k}" for k in range(K)] + [f"h_{k}" for k in range(K)]


def optimize(problem: EstimationProblem, start: ParameterVector, active: ActiveSet,
             cfg: SolverConfig = SolverConfig(), name="stage") -> tuple[ParameterVector, StageReport]:
    """Bound-constrained L-BFGS over the free parameters of ``active``."""
    _check_params(problem, start)
    K = problem.K
    ev = _Evaluator(problem, active, cfg.threads)
    x0 = _internal(start.to_array(), problem.pitch)
    free = active.free_mask(K)
    lo, hi = parameter_bounds(K, problem.q_low)
    bounds = [(a, None if math.isinf(b) else b) for a, b in zip(lo[free], hi[free])]

    # per-pixel scales differ by decades (narrow vs wide components); solve in
    # units of the starting value so the first quasi-Newton step is balanced
    ref = _internal(initial_parameters(problem, start.transmissions()).to_array(), problem.pitch)
    unit = np.ones_like(x0)
    unit[:4] = np.where(x0[:4] > 0, x0[:4], ref[:4])
    u = unit[free]
    bounds = [(a / ui, None if b is None else b / ui) for (a, b), ui in zip(bounds, u)]

    def full(z):
        x = x0.copy()
        x[free] = z * u
        return x

    def fun(z):
        f, g = ev(full(z))
        return f, g[free] * u

    z0 = x0[free] / u
    f0 = ev(x0, grad=True)[0]
    traj = [f0]

    def callback(zk):
        traj.append(fun(zk)[0])

    res = minimize(fun, z0, jac=True, method="L-BFGS-B", bounds=bounds, callback=callback,
                   options={"maxiter": cfg.max_iterations, "maxcor": cfg.history_size,
                            "gtol": cfg.gradient_tolerance, "ftol": cfg.objective_tolerance})
    z = np.clip(res.x, [b[0] for b in bounds], [np.inf if b[1] is None else b[1] for b in bounds])
    f_end = fun(z)[0]
    if f_end > f0:  # never hand back a worse point than the start
        z, f_end = z0, f0
    out = ParameterVector.from_array(_physical(full(z), problem.pitch))
    names = _param_names(K)
    report = StageReport(
        stage=name, entries=active.entry_list(K),
        parameters=[n for n, m in zip(names, free) if m],
        objective_initial=f0, objective_final=f_end, trajectory=traj,
        iterations=int(res.nit), evaluations=int(res.nfev),
        converged=bool(res.status == 0), termination=str(res.message),
    )
    return out, report


def _ratio_groups(ratios, rtol=1e-9):
    """Indices grouped by equal ODD/SOD, groups ordered by decreasing ratio."""
    order = np.argsort(-np.asarray(ratios), kind="stable")
    groups = []
    for k in order:
        if groups and math.isclose(ratios[k], ratios[groups[-1][0]], rel_tol=rtol):
            groups[-1].append(int(k))
        else:
            groups.append([int(k)])
    return groups


def split_by_ratio(ratios) -> tuple[list[int], list[int]]:
    """High and low ODD/SOD halves; entries with equal ratio stay together.

    Whole groups are taken from the top until they hold at least half the
    entries, always leaving the lowest group for the low half.
    """
    groups = _ratio_groups(ratios)
    if len(groups) < 2:
        raise ProblemError("need two distinct ODD/SOD ratios")
    high = []
    for grp in groups[:-1]:
        if 2 * len(high) >= len(ratios):
            break
        high.extend(grp)
    low = [k for grp in groups for k in grp if k not in high]
    return sorted(high), sorted(low)


def _ransac_all(problem, seed):
    return [init_affine_ransac(e.radiograph, e.ideal, e.mask, seed=seed + k)
            for k, e in enumerate(problem.entries)]


def initial_parameters(problem: EstimationProblem, transmissions, source_px=2.0,
                       detector_px=2.0, wide_px=150.0, q=0.9) -> ParameterVector:
    """Starting point from widths in pixels.

    The source gets a detector-plane FWHM of ``source_px`` at the highest
    ODD/SOD; the detector components get ``detector_px`` and ``wide_px``.
    """
    pitch, r = problem.pitch, problem.r
    ratio = float(problem.ratios().max())
    s_src = fwhm_to_scale(source_px * pitch / ratio, r)
    return ParameterVector(s_src, s_src, fwhm_to_scale(detector_px * pitch, r),
                           fwhm_to_scale(wide_px * pitch, r), min(1.0, max(problem.q_low, q)),
                           tuple(t.l for t in transmissions), tuple(t.h for t in transmissions))


@dataclass
class EstimationReport:
    stages: list
    converged: bool

    def to_dict(self) -> dict:
        return {"converged": self.converged, "stages": [s.to_dict() for s in self.stages]}


def estimate_blur(problem: EstimationProblem, cfg: SolverConfig = SolverConfig()):
    """Three-stage estimation of the source and detector PSFs.

    1. Source scales on the radiographs with the highest ODD/SOD, detector
       replaced by a delta, (l, h) fixed at their RANSAC values.
    2. Detector parameters on the lowest ODD/SOD radiographs, source delta.
    3. All blur parameters and every (l_k, h_k) jointly, starting from stages
       1 and 2 with freshly initialised (l, h).

    Returns ``(BlurModel, [TransmissionParams], EstimationReport)``.
    """
    problem.check_full()
    high, low = split_by_ratio(problem.ratios())
    start = initial_parameters(problem, _ransac_all(problem, cfg.seed))

    p1, r1 = optimize(problem, start, ActiveSet("free", "delta", False, high), cfg, "source")
    p2, r2 = optimize(problem, p1, ActiveSet("delta", "free", False, low), cfg, "detector")
    fresh = _ransac_all(problem, cfg.seed)
    p3_start = ParameterVector(p2.s_sx, p2.s_sy, p2.s_d1, p2.s_d2, p2.q,
                               tuple(t.l for t in fresh), tuple(t.h for t in fresh))
    p3, r3 = optimize(problem, p3_start, ActiveSet(), cfg, "joint")
    stages = [r1, r2, r3]
    report = EstimationReport(stages, all(s.converged for s in stages))
    return p3.blur_model(problem.r), p3.transmissions(), report


def estimate_single_component(problem: EstimationProblem, component: str,
                              cfg: SolverConfig = SolverConfig(), starts_px=(2.0, 4.0, 8.0)):
    """Fit one blur component (the other a delta) together with every (l_k, h_k).

    ``component`` is 'source' or 'detector'. A single-component model has to
    absorb the missing blur and has several local minima, so the fit is
    started from each narrow width in ``starts_px`` (pixels, detector plane)
    and the lowest objective wins.
    """
    if component not in ("source", "detector"):
        raise ValueError(f"component must be 'source' or 'detector', got {component!r}")
    trans = _ransac_all(problem, cfg.seed)
    if component == "source":
        active = ActiveSet("free", "delta", True)
    else:
        active = ActiveSet("delta", "free", True)
    best = None
    for w in starts_px:
        start = initial_parameters(problem, trans, source_px=w, detector_px=w)
        p, rep = optimize(problem, start, active, cfg, component)
        if best is None or rep.objective_final < best[1].objective_final:
            best = (p, rep)
    p, rep = best
    model = p.blur_model(problem.r, source=component == "source", detector=component == "detector")
    return model, p.transmissions(), EstimationReport([rep], rep.converged)

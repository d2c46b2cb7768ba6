"""Estimation of X-ray source and detector blur from edge radiographs, and model-based deblurring."""

from .deblur import (
    RlsdConfig,
    WienerConfig,
    predict,
    rlsd_deblur,
    rlsd_solve,
    tune_to_noise,
    wiener_deblur,
)
from .estimate import (
    ActiveSet,
    EstimationProblem,
    ParameterVector,
    SolverConfig,
    estimate_blur,
    estimate_single_component,
    gradient,
    make_entry,
    objective,
)
from .imagecore import (
    Image2D,
    band_mask,
    convolve_same,
    corner_noise_level,
    masked_rmse,
    normalize_radiograph,
    read_image,
    write_image,
)
from .kernels import BACKEND
from .psf import (
    BlurModel,
    DetectorPsfParams,
    ScanGeometry,
    SourcePsfParams,
    combined_psf,
    detector_psf,
    fwhm_to_scale,
    motion_psf,
    scale_to_fwhm,
    source_psf_detector_plane,
    source_psf_source_plane,
)
from .transmission import (
    IdealTransmission,
    TransmissionParams,
    apply_affine,
    ideal_transmission_from_edge,
    init_affine_ransac,
)
from .synth import EdgeSpec, NoiseSpec, synth_edge_scan, synth_scan, synth_star

__version__ = "0.1.0"

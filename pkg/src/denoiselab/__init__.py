"""Optimal Gaussian denoisers, the densities they encode, and the checks that tie them together."""

from .mixture import (
    CorruptionModel,
    GaussianMixture,
    corrupt,
    density,
    log_density,
    posterior_mean,
    responsibilities,
    sample,
    score,
)
from .denoise import (
    Denoiser,
    MseEstimate,
    ProbeReport,
    empirical_mse,
    oracle_denoiser_monte_carlo,
    oracle_denoiser_quadrature,
    perturbation_probe,
    score_form_denoiser,
    small_noise_denoiser,
)
from .reconstruct import (
    Contour,
    GridDensity,
    curl_residual,
    line_integral_log_density,
    path_independence_check,
    reconstruct_density_on_grid,
)
from .deconv import full_chain_check, gaussian_convolve_grid, gaussian_deconvolve

__version__ = "0.1.0"

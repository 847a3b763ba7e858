"""Minimum S-divergence estimation with kernel-smoothed data and model."""

from .datasets import Dataset, load_dataset
from .diagnostics import (
    AsymptoticCov,
    IFReport,
    influence_function_general,
    influence_function_model,
    j_star_model,
    sandwich_cov,
    second_order_if,
    transparency_residual,
    u_1alpha_star,
    u_2alpha_star,
    u_alpha_star,
    v_star_model,
)
from .divergence import NormalDensity, NormalMixtureDensity, TuningPair, s_divergence
from .estimator import (
    FitConfig,
    FitResult,
    fit,
    fit_mdpde,
    fit_msde_beran,
    fit_msde_star,
    mdpde_star_equivalence_check,
)
from .exceptions import *  # noqa: F401,F403
from .models import NormalMeanModel, NormalModel, ParametricModel, sample_contaminated
from .quadrature import DEFAULT_QUAD, QuadratureSpec
from .simulation import SimulationConfig, bandwidth_stability_experiment, load_config, run_simulation
from .smoothing import BandwidthRule, KernelSpec, normal_reference_bandwidth, smooth_data, smooth_model
from .tuning import TuningSearchConfig, select_tuning

__version__ = "0.1.0"

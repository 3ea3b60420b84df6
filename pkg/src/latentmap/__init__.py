"""MAP image enhancement in an invertible diffusion latent space.

The package couples a deterministic, exactly invertible noising transform
(coupled-channel diffusion) with differentiable no-reference quality scorers
to enhance images by gradient-based MAP estimation in the latent, and ships
the analysis-by-synthesis tooling to compare scorers: discriminative pair
selection, forced-choice collection (simulated and served over HTTP), and
Thurstone Case V ranking with bootstrap significance groups.
"""

from .diffusion import (
    ConvDenoiser,
    CoupledState,
    NoiseSchedule,
    add_noise,
    coupled_denoise_step,
    coupled_noise_step,
    ddim_step,
    default_mixing_weight,
    denoising_loss,
    from_latent,
    load_denoiser,
    save_denoiser,
    to_latent,
    train_denoiser,
)
from .errors import (
    ConfigurationError,
    ContractViolation,
    DegenerateFitError,
    DisconnectedComparisonGraph,
)
from .solver import (
    EnhanceConfig,
    EnhanceResult,
    fidelity_d0,
    maximize_direct,
    maximize_latent,
    solve_map_latent,
    solve_map_pixel,
)
from . import comparison, grids, quality, study

__version__ = "0.1.0"

__all__ = [
    "NoiseSchedule",
    "CoupledState",
    "ConvDenoiser",
    "default_mixing_weight",
    "add_noise",
    "ddim_step",
    "coupled_denoise_step",
    "coupled_noise_step",
    "to_latent",
    "from_latent",
    "train_denoiser",
    "denoising_loss",
    "save_denoiser",
    "load_denoiser",
    "EnhanceConfig",
    "EnhanceResult",
    "fidelity_d0",
    "solve_map_latent",
    "maximize_latent",
    "solve_map_pixel",
    "maximize_direct",
    "comparison",
    "grids",
    "quality",
    "study",
    "ContractViolation",
    "ConfigurationError",
    "DegenerateFitError",
    "DisconnectedComparisonGraph",
    "__version__",
]

"""Desk-scale generative emulation of PDE dynamics.

Bridges between current and future states (with competing diffusion and
flow frameworks), their samplers, a spectral 2D forced-turbulence data
generator, forecast-verification metrics, and sample-based distribution
distances, all deterministic under named seed substreams.
"""

__version__ = "0.1.0"

from .process import (  # noqa: F401
    DiffusionSchedule,
    EdmSchedule,
    InterpolantSchedule,
    ProcessSample,
    antithetic_pair,
    build_edm_schedule,
    build_linear_schedule,
    fm_forward,
    interpolant_point,
    interpolant_target,
    vp_forward,
)
from .drift import (  # noqa: F401
    AdamState,
    DriftNetwork,
    TimeEmbedding,
    adam_update,
    backward,
    init_drift_network,
)
from .samplers import (  # noqa: F401
    SamplerSpec,
    rollout,
    run_sampler,
    sample_ddim,
    sample_ddpm,
    sample_direct,
    sample_edm,
    sample_fm,
    sample_si_em,
    sample_si_euler,
    sample_tsm,
)
from .kflow import (  # noqa: F401
    Dataset,
    GridSpec,
    SolverConfig,
    Trajectory,
    generate_dataset,
    load_dataset,
    sample_ic,
    save_dataset,
    step,
)
from .metrics import (  # noqa: F401
    EnsembleForecast,
    LatGrid,
    climatological_bias,
    crps,
    lat_weights,
    lmae,
    lrmse,
    nrmse,
    radial_power_spectrum,
    srmse_bands,
    ssr,
    vrmse,
)
from .distances import (  # noqa: F401
    c2st,
    distance_curves,
    jl_project,
    mmd,
    sliced_wasserstein,
)
from .training import (  # noqa: F401
    TrainConfig,
    TrainedModel,
    evaluate,
    load_model,
    make_pairs,
    rollout_model,
    save_model,
    train,
)

"""Anderson localization in the time domain, at desk scale.

Correlated Fourier disorder, the static effective Hamiltonian it generates
in the moving frame, transfer-matrix localization lengths with finite-size
scaling for the 3D mobility edge, interior eigenstates with lab-frame time
traces, and direct validation of the secular approximation on a driven 1D
system.
"""

from .disorder import (
    DisorderSpec,
    FourierCoeffs,
    SampledField,
    correlation_estimate,
    eval_h,
    eval_h_grid,
    eval_veff,
    extended_field,
    gaussianity_test,
    gen_coeffs,
    sawtooth_coeffs,
)
from .lattice import (
    DiscreteHamiltonian,
    Grid,
    build_hamiltonian,
    energy_convert,
    free_eigenvalues,
)
from .rng import substream
from .tmm import (
    BarGeometry,
    LyapunovResult,
    TmmScan,
    free_chain_gamma,
    from_record,
    lyapunov_run,
    run_record,
    scan,
)
from .greens import greens_decay
from .fss import (
    ScalingModel,
    XiCurve,
    extract_xi,
    fit_scaling,
    pairwise_crossings,
    synthetic_scan,
)
from .spectral import (
    EigenstateBundle,
    MarginalProfile,
    TimeTrace,
    XiFit,
    fit_localization_length,
    interior_eigs,
    lab_frame_trace,
    marginal,
    participation_ratio,
)
from .driven1d import (
    DrivenSpec1D,
    FidelitySeries,
    SecularReport,
    Trajectory1D,
    Wavepacket1D,
    drive_spec,
    effective_compare,
    effective_hamiltonian_1d,
    propagate,
    resonant_initial_state,
    secular_check,
)
from .config import ConfigError, RunConfig, load_config, parse_config
from .manifest import RunManifest

__version__ = "0.1.0"

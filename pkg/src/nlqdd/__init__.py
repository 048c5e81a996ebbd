"""Structure-preserving discretization of non-local quantum drift diffusion
on the periodic torus: constrained-entropy states, collisional Liouville
dynamics and their diffusive limit, entropy-dissipating density evolution,
and continuum heat-kernel comparisons."""

from .grid import Mesh, apply_laplacian, cell_average, difference, fisher_information, lp_norm
from .maxwellian import (
    MaxwellianState,
    SolverError,
    dual_jacobian,
    entropy,
    free_energy,
    free_energy_floor,
    nu_coefficients,
    partition_function,
    quantum_exponential,
    solve_potential,
)
from .liouville import (
    IntegrationError,
    LiouvilleControls,
    LiouvilleParams,
    diffusive_limit_gap,
    double_commutator_diag,
    integrate_liouville,
    liouville_rhs,
)
from .dynamics import NlqddControls, TrajectoryRecord, dissipation, integrate_nlqdd, nlqdd_rhs
from .kernels import (
    HeatKernelParams,
    continuum_quantum_exponential,
    contraction_weight,
    discrete_duhamel_check,
    discrete_heat_kernel,
    heat_kernel,
    kernel_error_report,
    solve_auxiliary_kernel,
)

__version__ = "0.1.0"

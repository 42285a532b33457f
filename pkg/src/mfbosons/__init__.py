"""Finite-dimensional simulator for mean-field bosons and their condensation bounds.

Submodules:

``fock``        occupation bases, ladder operators, second quantization
``dynamics``    many-body propagation and the Hartree flow
``excitation``  condensate frames, excitation statistics, excitation map
``bounds``      closed-form bounds, change of variables, Gronwall checks
``config``, ``experiments``, ``cli``  scenario files and pipelines
"""

from .bounds import BoundParams, beta_c, bound_f, change_of_variables, gronwall_check, tail_bound, vv_estimate
from .dynamics import HartreeTrajectory, MeanFieldModel, PropagatorPlan, assemble_hamiltonian, propagate, solve_hartree
from .errors import (
    CapacityError,
    ConfigError,
    ContractError,
    DomainError,
    IntegrationAccuracyError,
    MFBosonsError,
    RefinementError,
    ResolutionError,
)
from .excitation import CondensateFrame, ExcitationDistribution, excitation_distribution, mgf
from .fock import (
    ManyBodyState,
    SectorBasis,
    TruncatedFockBasis,
    TwoBodyTensor,
    condensate_state,
    dgamma_one_body,
    dgamma_two_body,
    enumerate_sector,
    symmetrize_tensor,
    truncated_fock_basis,
)

__version__ = "0.1.0"

"""Tails of Gaussian multiplicative chaos: fields, masses, Bessel paths and Tauberian checks."""
from .errors import (ConfigError, ContractError, DomainError, EmptySetError, FactorizationError,
                     GmcError, QuadratureError, RegimeError, ResourceError, SingularityError,
                     TruncationError, UnsupportedError)
from .field import FieldBatch, FieldSample, GridSpec, sample_field, sample_reference_radial, shift_field
from .gmc import (DensitySpec, GmcMassSample, SetSpec, cbar_subcritical, critical_mass,
                  critical_tail_coeff, subcritical_mass, subcritical_tail_coeff)
from .kernels import KernelDescriptor, QuadratureConfig, build_cov_matrix, eval_kernel, eval_Sd
from .rng import RngPolicy

__version__ = "0.1.0"

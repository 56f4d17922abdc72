"""Stochastic Galerkin variational integrators for stochastic Hamiltonian systems."""
from .model import (BUILTIN_SYSTEMS, ConfigurationError, EvaluatorError, Hamiltonian, PhaseState, SystemDef,
                    check_gradients, get_system, ito_coefficients, make_system)
from .noise import WienerPath, coarsen, sample_path, sample_paths, truncate_increment
from .quadrature import LagrangeBasis, QuadratureRule, named_rule, weights_from_nodes
from ._solve import SolverConfig, StepFailure, StepStats
from .galerkin import GalerkinScheme, StageVector
from .sprk import SprkTableau, Sprk32Tableau, check_symplectic, galerkin_to_sprk, milstein32_tableau
from .schemes import SCHEME_IDS, build, fast_step

__version__ = "0.1.0"

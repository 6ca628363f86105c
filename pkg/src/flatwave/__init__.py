"""flatwave: spectral simulator for a compressible viscous fluid layer with
a free surface, posed in flattened coordinates on a periodic box."""

__version__ = "0.1.0"

from .discretization import Grid, make_grid
from .dynamics import (
    StepperConfig,
    System,
    Trajectory,
    initialize_state,
    run,
    step,
)
from .energy_monitor import EnergyConfig, EnergyMonitor, EnergyReport, decay_fit
from .equilibrium import (
    CustomLaw,
    EquilibriumProfile,
    GammaLaw,
    IsothermalLaw,
    admissible_depth_bound,
    enthalpy,
    enthalpy_inverse,
    make_law,
    solve_equilibrium,
)
from .errors import (
    AdmissibilityError,
    BlowupError,
    CompatibilityError,
    ConfigurationError,
    DomainError,
    FlatwaveError,
    GeometryError,
    SolverError,
    StepRejectedError,
)
from .geometry import Geometry, build_geometry, poisson_extend
from .state import State, StateRates

__all__ = [name for name in dir() if not name.startswith("_")]

"""Multi-species Patlak-Keller-Segel toolkit: grids, criticality, transport, JKO and FV solvers."""

from .config import RunConfig, emit_config, parse_config, parse_config_text
from .criticality import (Regime, RegimeReport, blowup_time_bound, classify, lambda_subset,
                          lambda_weighted, two_species_map)
from .diagnostics import (check_second_moment_law, check_telescoping, detect_concentration,
                          energy_chain, fisher_inequality_report)
from .errors import (ConfigurationError, DegenerateProfileError, MassMismatchError, NumericalFailure,
                     PKSError, SolverNotConverged, UndefinedCOMError)
from .functionals import (EnergyBreakdown, admissibility_margin, dissipation, entropy,
                          entropy_positive, fisher_information, free_energy, interaction_energy)
from .fv import FvConfig, cfl_dt, cross_validate, fv_run, fv_step, holder_fit
from .grid import (DensityField, Disk, Gaussian, GridSpec, Liouville, Mixture, center_of_mass,
                   make_density, make_grid, mass, renormalize, second_moment, upsilon_moment)
from .jko import (JkoConfig, JkoStepReport, TestFunction, jko_run, jko_step,
                  production_identity_report, test_function_catalog, weak_residual_jko)
from .output import emit_csv, emit_heatmap
from .potential import PotentialField, drift_velocity, kernel_self_constant, newtonian_potential
from .series import TimeSeries, read_csv, write_csv
from .transport import (DiscreteMeasure, OTResult, dw1, dw1_grid, dw_multi, exact_w2_squared,
                        sinkhorn_w2_squared)

__version__ = "0.1.0"

"""Random walks among Bernoulli obstacles on Z^d.

Exact and Monte Carlo killed-walk dynamics, Dirichlet spectra of lattice
domains, continuum ball references, vacant-island localisation, and obstacle
surgery with its potential theory.
"""

__version__ = "0.1.0"

from .lattice import (EnvironmentField, empty_environment, euclidean_ball, label_clusters,
                      load_environment, plant_vacant_ball, sample_environment, save_environment)
from .domain import LatticeDomain, ball_domain
from .walk import (MassProfile, bridge_law, conditional_law, evolve_mass, hitting_time,
                   hitting_time_distribution, sample_paths, survival_probability)
from .spectral import (SpectralPair, eigenfunction_value_identity_check, expansion_law,
                       principal_pair, spectral_gap, sup_norm_bound_check)
from .continuum import ball_spectrum, discretize_profile, mu_ball, profile, rho_n
from .localization import (LocalizationConfig, detect_truly_open, fit_ball_center, localize,
                           low_density_region, shell_index)

__all__ = [name for name in dir() if not name.startswith("_")]

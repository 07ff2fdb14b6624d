"""Surface geometry, surface calculus, weighted Helmholtz-Leray decompositions,
thin-shell averaging and a limit Navier-Stokes solver on closed surfaces of
revolution."""

__version__ = "0.1.0"

from .errors import *  # noqa: F401,F403
from .surface import (Profile, Surface, SurfacePoint, ThinDomainSpec, RigidField,  # noqa: F401
                      boundary_frame, principal_weingarten, rigid_field_scan,
                      killing_eigen_check, shell_jacobian, surface_integral,
                      surface_quantities, offset_surface_integral)
from .calculus import (tangential_gradient, tangential_divergence, laplace_beltrami,  # noqa: F401
                       strain_rate, covariant_derivative, bochner_laplacian,
                       korn_constant_estimate)
from .helmholtz import (poisson_solve, weighted_poisson_solve,  # noqa: F401
                        project_weighted_solenoidal, decompose_general,
                        decompose_general_weighted)
from .thin_shell import (ShellGrid, constant_extension, normal_derivative, average_M,  # noqa: F401
                         average_Mtau, impermeable_extension, average_residual_split,
                         averaged_gradient_check, epsilon_rate_study)
from .limit_solver import (LimitConfig, LimitSolver, LimitState, form_a_g, form_b_g,  # noqa: F401
                           pressure_recover, solve, step, killing_mode_monitor)

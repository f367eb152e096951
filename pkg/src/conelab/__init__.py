"""conelab: cone analytics and solvers for fully nonlinear conformal
curvature equations of Loewner-Nirenberg type."""

__version__ = "0.1.0"

from . import cone, errors, geometry, solver_fd, solver_radial, symfunc, transform  # noqa: F401

"""Hybrid High-Order discretization of nonlinear poroelasticity on polygonal meshes."""

__version__ = "0.1.0"

from .constitutive import HenckyMises, IsotropicDamage, LinearElasticity, make_law, exp_hencky_mises
from .hho import HHOSpace
from .mesh import PolyMesh, generate_cartesian, load_mesh, save_mesh
from .solver import BiotDiscretization, ProblemData, SolverConfig, TimeGrid

__all__ = [
    "BiotDiscretization",
    "HHOSpace",
    "HenckyMises",
    "IsotropicDamage",
    "LinearElasticity",
    "PolyMesh",
    "ProblemData",
    "SolverConfig",
    "TimeGrid",
    "generate_cartesian",
    "load_mesh",
    "make_law",
    "exp_hencky_mises",
    "save_mesh",
]

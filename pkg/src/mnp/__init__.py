"""Rotation dynamics of magnetic nanoparticle ensembles.

Simulates the mean magnetic moment of large particle ensembles by solving an
advection-diffusion transport equation on the unit sphere, with two
interchangeable discretizations (spectral Galerkin in spherical harmonics
and a finite-volume scheme on refined icosahedral meshes), plus the two
parameter-identification pipelines built on top: polydisperse dictionary
fitting and x-space convolution-kernel estimation.
"""

from .errors import (
    DivergenceError,
    InvalidInputError,
    InvalidParameterError,
    MeshError,
    MnpError,
    SteadyStateError,
    StiffnessError,
)
from .fields import (
    ALPHA_DAMPING_DEFAULT,
    GAMMA_DEFAULT,
    KB,
    MU0,
    FieldSequence,
    ParticleModel,
    advection_field,
    axis_in_plane,
    brown_params,
    fixed_axis,
    neel_params,
    pulsed_sequence,
    sinusoidal_sequence,
    staircase,
)
from .mesh import TriMesh, build_icosphere, load_mesh, save_mesh, validate_mesh

__all__ = [
    "MnpError",
    "InvalidParameterError",
    "MeshError",
    "StiffnessError",
    "DivergenceError",
    "SteadyStateError",
    "InvalidInputError",
    "MU0",
    "KB",
    "GAMMA_DEFAULT",
    "ALPHA_DAMPING_DEFAULT",
    "ParticleModel",
    "FieldSequence",
    "neel_params",
    "brown_params",
    "advection_field",
    "sinusoidal_sequence",
    "pulsed_sequence",
    "staircase",
    "fixed_axis",
    "axis_in_plane",
    "TriMesh",
    "build_icosphere",
    "save_mesh",
    "load_mesh",
    "validate_mesh",
]

__version__ = "0.1.0"

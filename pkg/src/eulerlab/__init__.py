"""Numerical convex-integration laboratory for the incompressible Euler inclusion."""
from .grid import BoxUnion
from .fields import AtomLayer, EnergyTarget, Subsolution
from .perturb import StepConfig, iterate, perturbation_step
from .construct import build_initial_data, psystem_lift, scenario_a, scenario_b, scenario_c

__version__ = "0.1.0"

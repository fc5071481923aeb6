"""Constructive n-transitivity of diffeomorphism groups by composed flows of bump fields."""

from .estimator import FlowMatcher
from .fields import (
    BumpProfile,
    FieldFamily,
    GeneratorData,
    VectorField,
    build_family,
    check_conditions9,
    make_bump,
    make_contact_bump,
    make_divfree_bump,
    make_general_field,
    make_hamiltonian_bump,
)
from .flow import DiffeoProgram, IntegratorOptions, apply, apply_config, eval_f, flow, invert, jacobian, tangent_jacobian
from .geometry import Configuration, GeometryError, Manifold, distance, separation
from .solve import SolveOptions, SolveReport, jacobian_at_zero, local_step, plan_path, solve
from .verify import check_structure, oracle_field_check, roundtrip_check

__version__ = "0.1.0"

__all__ = [
    "BumpProfile", "Configuration", "DiffeoProgram", "FieldFamily", "FlowMatcher", "GeneratorData",
    "GeometryError", "IntegratorOptions", "Manifold", "SolveOptions", "SolveReport", "VectorField",
    "apply", "apply_config", "build_family", "check_conditions9", "check_structure", "distance",
    "eval_f", "flow", "invert", "jacobian", "jacobian_at_zero", "local_step", "make_bump",
    "make_contact_bump", "make_divfree_bump", "make_general_field", "make_hamiltonian_bump",
    "oracle_field_check", "plan_path", "roundtrip_check", "separation", "solve", "tangent_jacobian",
]

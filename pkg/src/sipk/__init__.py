"""Solvers and auditors for convex semi-infinite programs with a QCQP lower level."""

from .cutting_planes import CuttingPlaneSolver, certify_rates, run_cp
from .exceptions import (CertificationFailed, ConeMembershipFailed, InfeasibleY, InnerSetEmpty, InstanceError,
                         RestrictionInfeasible, SipError, SolverError)
from .generate import GeneratorSpec, generate_instance
from .instances import t1, t1_shifted, t2
from .ioa import InnerOuterSolver, run_ioa, solve_sipr
from .oracle import AdversarialOracle, FallbackOracle, GridOracle, OracleResult, SdpOracle, make_oracle
from .problem import SipInstance, load_instance, make_instance, validate_instance

__version__ = "0.1.0"

__all__ = [
    "CuttingPlaneSolver", "InnerOuterSolver", "run_cp", "run_ioa", "solve_sipr", "certify_rates",
    "SipInstance", "make_instance", "validate_instance", "load_instance", "GeneratorSpec", "generate_instance",
    "t1", "t1_shifted", "t2", "GridOracle", "SdpOracle", "FallbackOracle", "AdversarialOracle", "OracleResult",
    "make_oracle", "SipError", "InstanceError", "SolverError", "CertificationFailed", "InfeasibleY",
    "ConeMembershipFailed", "RestrictionInfeasible", "InnerSetEmpty",
]

"""Stochastic storage and barrier certificates for interconnected switching systems."""

__version__ = "0.1.0"

from .bound import BoundInput, safety_bound
from .certify import (NetworkCertificate, StorageCertificate, SupplyMatrix, falsify, verify_cbc_direct,
                      verify_csc)
from .compose import assemble_xcmp, check_dissipativity_lmi, check_level_gap, compose_cbc
from .model import Network, Subsystem, check_well_posed, load_network
from .poly import Polynomial, VarSpace, gaussian_expectation, parse_polynomial

__all__ = [
    "BoundInput", "safety_bound", "NetworkCertificate", "StorageCertificate", "SupplyMatrix", "falsify",
    "verify_cbc_direct", "verify_csc", "assemble_xcmp", "check_dissipativity_lmi", "check_level_gap",
    "compose_cbc", "Network", "Subsystem", "check_well_posed", "load_network", "Polynomial", "VarSpace",
    "gaussian_expectation", "parse_polynomial",
]

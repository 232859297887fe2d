"""Polar-coded tensor-based unsourced random access.

Device pipeline (CRC, polar code, Grassmannian segments), the GM-BTD
variational tensor decomposition, the iterative feedback receiver and a
seeded Monte Carlo harness.
"""
from .config import SystemConfig, allocate_bit_budgets, load_config, preset
from .gmbtd import GMBTD, DecompositionResult, complexity_estimate, estimate_initial_K
from .receiver import IBRFBReceiver, br_single_pass, ibr_fb, regenerate_symbols
from .simulator import ebn0_to_n0, generate_scene, pupe, reer, rnmse, run_trials
from .transmitter import transmit

__all__ = [
    "SystemConfig", "allocate_bit_budgets", "load_config", "preset",
    "GMBTD", "DecompositionResult", "complexity_estimate", "estimate_initial_K",
    "IBRFBReceiver", "br_single_pass", "ibr_fb", "regenerate_symbols",
    "ebn0_to_n0", "generate_scene", "pupe", "reer", "rnmse", "run_trials",
    "transmit",
]
__version__ = "0.1.0"

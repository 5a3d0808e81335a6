"""Desk-scale blockchain workbench: UTXO and account chains, network
simulation, security analysis, Plasma exits and cross-chain swaps."""

__version__ = "0.1.0"

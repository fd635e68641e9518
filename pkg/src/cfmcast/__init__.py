"""Distributed multi-group multicast precoding for cell-free massive MIMO.

Modules
-------
scenario     network geometry, groups and channel draws
airlink      pilots, precoded training rounds and LS estimators
centralized  alternating optimization, dual updates, power allocation
local        local MMSE and MF baselines
distributed  BR, BR-GS and GB precoders and the bi-directional training loop
metrics      MSE, SINR, rates and pilot-overhead accounting
harness      Monte Carlo experiments and export
"""

__version__ = '0.1.0'

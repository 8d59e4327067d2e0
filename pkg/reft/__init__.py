"""
reft-sim: in-memory fault tolerance for hybrid-parallel training, simulated.

Snapshot scheduling into pipeline bubbles, intra-group redundancy (copies, XOR
parity, optimizer replicas), failure injection, recovery and reliability planning.
"""

__version__ = "0.1.0"

"""Stateless figure rendering for condist CSV outputs.

Each figure kind consumes one documented CSV schema and writes one
image; rendering is deterministic (fixed style, no timestamps), so a
rerun on the same inputs is byte-identical.
"""

__version__ = "0.1.0"

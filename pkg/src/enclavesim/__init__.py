"""Trace-driven simulator for scalable enclave memory protection.

The package models a trusted execution environment whose protected memory is
split into a small hardware-integrity-protected page cache (EPC) and a large
encrypted extension (eEPC).  eEPC pages are encrypted with per-page randomized
keys, authenticated by a shallow forest of MAC trees, and page faults restart
execution after two memory reads while verification completes in the
background.  Comparable models of a Merkle-tree page-cache design, the same
design with a prefetcher, a mountable-Merkle-tree design without a page cache,
and an unprotected baseline run on the same traces for comparison.
"""

__version__ = "0.1.0"

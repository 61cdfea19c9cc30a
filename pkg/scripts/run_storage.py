#!/usr/bin/env python3
"""Metadata storage tables: forest vs full-memory counter tree scaling.

Prints the desk-reference table at 512 GiB and the counter-tree growth curve
across {64, 128, 256, 512} GiB, where the client-style full-memory tree grows
linearly into gigabytes while the forest's in-EPC anchor stays at 8 MiB.
"""

import sys

from enclavesim.cli import main as cli_main
from enclavesim.merkle import merkle_storage_bytes

GIB = 1 << 30
MIB = 1 << 20


def main() -> int:
    rc = cli_main(["storage"])
    print()
    print("client-style counter tree vs protected size:")
    for gib in (64, 128, 256, 512):
        tree = merkle_storage_bytes(gib * GIB)
        print(f"  {gib:>4} GiB protected -> {tree / MIB:9.2f} MB of counters")
    return rc


if __name__ == "__main__":
    sys.exit(main())

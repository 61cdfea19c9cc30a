#!/usr/bin/env python3
"""Full physical-adversary campaign plus a benign false-positive control.

Every attack kind runs across many seeds; each must be detected before the
enclave's next barrier completes.  A long benign churn run then confirms the
detection machinery never fires without cause.
"""

import argparse
import sys
from collections import Counter

from enclavesim.adversary import ATTACK_KINDS, run_benign, run_suite


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seeds", type=int, default=100)
    ap.add_argument("--benign-ops", type=int, default=100_000)
    args = ap.parse_args(argv)

    results = run_suite(ATTACK_KINDS, range(args.seeds))
    detected = Counter(r.kind for r in results if r.detected)
    layered = Counter(r.kind for r in results if r.layer_matched)
    for kind in ATTACK_KINDS:
        print(
            f"{kind:<24} detected {detected[kind]:>3}/{args.seeds}"
            f"   at expected layer {layered[kind]:>3}/{args.seeds}"
        )
    all_caught = len([r for r in results if r.detected]) == len(results)

    benign = run_benign(n_ops=args.benign_ops)
    print(
        f"benign control: {benign['ops']} ops, {benign['faults']} faults, "
        f"{benign['failures']} false positives"
    )
    clean = benign["failures"] == 0
    print(f"campaign: {'PASS' if all_caught and clean else 'FAIL'}")
    return 0 if all_caught and clean else 1


if __name__ == "__main__":
    sys.exit(main())

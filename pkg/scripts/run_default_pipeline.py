#!/usr/bin/env python3
"""Run the full default pipeline into ./out and print the evaluation table."""

import sys
from pathlib import Path

from curvecal import pipeline as pl


def main() -> int:
    out_dir = Path(sys.argv[1]) if len(sys.argv) > 1 else Path("out")
    outcome = pl.run_full(out_dir, pl.RunConfig())
    for name in pl.STAGE_ORDER:
        print(f"{name}: {outcome.actions.get(name, 'skipped')}")
    for gate_name, gate in outcome.manifest.gates.items():
        print(f"gate {gate_name}: {'pass' if gate['passed'] else 'FAIL'} ({gate['reason']})")
    if not outcome.all_gates_passed:
        return 3
    store = pl.ArtifactStore(out_dir)
    evaluation = store.get(outcome.manifest.stages["evaluation"]["artifact_hash"])
    print()
    print(evaluation["table"])
    return 0


if __name__ == "__main__":
    sys.exit(main())

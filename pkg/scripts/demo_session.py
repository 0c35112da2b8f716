#!/usr/bin/env python3
"""Serve a live demo session on a curved object.

Runs the default pipeline first if ./out has no artifacts yet, then starts
the WebSocket service the operator console connects to. Drive the applied
force from the UI slider (simulator mode) and watch the dwell ladder.

    python3 scripts/demo_session.py [--curvature 25] [--port 8765] [--speed 1]
"""

import argparse
import asyncio
from pathlib import Path

from curvecal import pipeline as pl, session as sn
from curvecal.service import SessionService


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--artifacts", type=Path, default=Path("out"))
    parser.add_argument("--curvature", type=float, default=25.0)
    parser.add_argument("--host", default="127.0.0.1")
    parser.add_argument("--port", type=int, default=8765)
    parser.add_argument("--speed", type=float, default=1.0)
    args = parser.parse_args()

    if not (args.artifacts / "manifest.json").exists():
        print(f"no artifacts in {args.artifacts}; running the default pipeline first ...")
        outcome = pl.run_full(args.artifacts, pl.RunConfig())
        if not outcome.all_gates_passed:
            print("pipeline gates failed; aborting")
            return 3

    config = pl.RunConfig()
    assets = pl.load_artifacts(args.artifacts)
    spec = sn.SessionSpec(sample_rate=config.circuit.scan_rate_hz)

    def factory() -> sn.SessionDriver:
        rig = sn.SimulatedRig(
            identity=config.fixtures().sensors[0], circuit=config.circuit,
            sim=config.sim, curvature_true=args.curvature, seed=config.seed,
        )
        return sn.SessionDriver(spec, assets["model"], assets["flat"], assets["aware"],
                                rig, label=f"demo_c{args.curvature:g}")

    service = SessionService(factory, host=args.host, port=args.port,
                             speed=args.speed, report_dir=args.artifacts / "session")

    async def run():
        await service.start()
        print(f"session service at ws://{args.host}:{service.port}")
        print("open frontend/dist/index.html (after npm run build) and connect")
        await asyncio.get_running_loop().create_future()

    try:
        asyncio.run(run())
    except KeyboardInterrupt:
        print("stopped")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())

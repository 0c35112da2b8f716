#!/usr/bin/env python3
"""Figures for a pipeline run: response curves, calibration surface, model fit.

Writes three PNGs next to the artifacts:
  response_curves.png   block reading vs force, one curve per fixture curvature
  surface.png           fitted curvature-aware calibration surface F(S, C)
  curvature_fit.png     predicted vs true curvature on the evaluation objects
"""

import argparse
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from curvecal import forcecal as fc, pipeline as pl


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--artifacts", type=Path, default=Path("out"))
    args = parser.parse_args()

    config = pl.RunConfig()
    assets = pl.load_artifacts(args.artifacts)
    store = pl.ArtifactStore(args.artifacts)
    manifest = assets["manifest"]

    force = store.get(manifest.stages["force_dataset"]["artifact_hash"])
    samples = [fc.CalibrationSample(s=s, c=c, f=f) for s, c, f in force["samples"]]

    fig, ax = plt.subplots(figsize=(6, 4))
    for kappa in sorted({smp.c for smp in samples}):
        pts = sorted((smp.f, smp.s) for smp in samples if smp.c == kappa)
        ax.plot([p[0] for p in pts], [p[1] for p in pts], marker="o", ms=3,
                label=f"{kappa:.0f} 1/m")
    ax.set_xlabel("applied block force [N]")
    ax.set_ylabel("block reading [counts]")
    ax.set_title("Sensor response vs force across curvatures")
    ax.legend(fontsize=7, ncol=2)
    fig.tight_layout()
    fig.savefig(args.artifacts / "response_curves.png", dpi=150)

    aware = assets["aware"]
    s_grid = np.linspace(0, max(smp.s for smp in samples), 80)
    c_grid = np.linspace(0, 80, 80)
    S, C = np.meshgrid(s_grid, c_grid)
    F = np.vectorize(lambda s, c: fc.predict_force(aware, s, c))(S, C)
    fig = plt.figure(figsize=(6, 4.5))
    ax3 = fig.add_subplot(projection="3d")
    ax3.plot_surface(S, C, F, cmap="viridis", alpha=0.9)
    ax3.scatter([smp.s for smp in samples], [smp.c for smp in samples],
                [smp.f for smp in samples], s=4, c="r")
    ax3.set_xlabel("reading S")
    ax3.set_ylabel("curvature C [1/m]")
    ax3.set_zlabel("force F [N]")
    ax3.set_title("Curvature-aware calibration surface")
    fig.tight_layout()
    fig.savefig(args.artifacts / "surface.png", dpi=150)

    evaluation = store.get(manifest.stages["evaluation"]["artifact_hash"])
    rows = evaluation["report"]["rows"]
    gt = [r["curvature_gt"] for r in rows]
    pr = [r["curvature_used"] for r in rows]
    fig, ax = plt.subplots(figsize=(4.2, 4))
    ax.scatter(gt, pr, c="tab:blue")
    lim = max(max(gt), max(pr)) * 1.1
    ax.plot([0, lim], [0, lim], "k--", lw=1)
    ax.set_xlabel("true curvature [1/m]")
    ax.set_ylabel("predicted curvature [1/m]")
    ax.set_title("Baseline-driven curvature prediction")
    fig.tight_layout()
    fig.savefig(args.artifacts / "curvature_fit.png", dpi=150)

    print(f"wrote response_curves.png, surface.png, curvature_fit.png to {args.artifacts}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())

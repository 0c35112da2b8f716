"""Command-line entry point for every pipeline stage and the session tools.

Exit codes: 0 success, 2 configuration/usage error, 3 gate failure. The gate
code is separate so scripted pipelines can branch on "model not good enough"
without parsing output.
"""

from __future__ import annotations

import argparse
import asyncio
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import curvnet, featurize, forcecal, pipeline, sensor_sim, session as session_mod
from .errors import CurveCalError
from .pipeline import ObjectSpec, RunConfig

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_GATE = 3

CONFIG_ENV_VAR = "CURVECAL_CONFIG"


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, default=None,
                   help=f"run config JSON (default: ${CONFIG_ENV_VAR} or built-in defaults)")
    p.add_argument("--seed", type=int, default=None, help="override the config seed")
    p.add_argument("--output-dir", type=Path, default=Path("out"),
                   help="directory for artifacts (default: out)")


def load_config(args) -> RunConfig:
    path = args.config
    if path is None and os.environ.get(CONFIG_ENV_VAR):
        path = Path(os.environ[CONFIG_ENV_VAR])
    config = RunConfig.load(path) if path else RunConfig()
    if args.seed is not None:
        config = RunConfig.from_dict({**config.to_dict(), "seed": args.seed})
    return config


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="curvecal",
        description="Curvature-aware calibration workbench for resistive tactile arrays.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate scan-frame streams from the sensor model")
    _add_common(p)
    p.add_argument("--curvature", type=float, default=0.0, help="mount curvature in 1/m")
    p.add_argument("--force", type=float, default=0.0, help="block force in N")
    p.add_argument("--frames", type=int, default=100, help="number of frames")
    p.add_argument("--format", choices=("csv", "jsonl"), default="csv")

    p = sub.add_parser("featurize", help="build the curvature feature dataset")
    _add_common(p)
    p.add_argument("--no-augment", action="store_true", help="skip dihedral orientation augmentation")

    p = sub.add_parser("train-curvature", help="train the curvature regressor on a feature dataset")
    _add_common(p)
    p.add_argument("--dataset", type=Path, required=True, help="feature CSV (kappa_true,f01..f24)")

    p = sub.add_parser("fit-calibration", help="fit flat and curvature-aware force surfaces")
    _add_common(p)
    p.add_argument("--samples", type=Path, default=None,
                   help="calibration CSV (s,c,f); simulated from config when omitted")

    p = sub.add_parser("evaluate", help="evaluate both calibration variants on objects")
    _add_common(p)
    p.add_argument("--artifacts", type=Path, required=True, help="pipeline output directory")
    p.add_argument("--objects", type=Path, default=None,
                   help="objects JSON [{name, curvature}, ...]; config objects when omitted")
    p.add_argument("--use-true-curvature", action="store_true",
                   help="feed ground-truth curvature to the aware variant instead of predictions")

    p = sub.add_parser("pipeline-run", help="run every stage with content-addressed caching")
    _add_common(p)

    p = sub.add_parser("session-serve", help="serve live calibration sessions over WebSocket")
    _add_common(p)
    p.add_argument("--artifacts", type=Path, required=True, help="pipeline output directory")
    p.add_argument("--object-curvature", type=float, default=25.0, help="mounted object curvature")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8765)
    p.add_argument("--speed", type=float, default=1.0, help="virtual clock speedup")

    p = sub.add_parser("session-replay", help="replay a recorded force trace through a session")
    _add_common(p)
    p.add_argument("--artifacts", type=Path, required=True, help="pipeline output directory")
    p.add_argument("--trace", type=Path, required=True, help="trace CSV (t,force)")
    p.add_argument("--object-curvature", type=float, default=25.0)

    return parser


def cmd_simulate(args, config: RunConfig) -> int:
    out = args.output_dir
    out.mkdir(parents=True, exist_ok=True)
    identity = config.fixtures().sensors[0]
    rng = np.random.default_rng([config.seed, 99])
    profile = sensor_sim.block_force_profile(args.force)
    frames = []
    for i in range(args.frames):
        frames.append(
            sensor_sim.scan(identity, config.circuit, config.sim, profile,
                            args.curvature, rng, t=i / config.circuit.scan_rate_hz)
        )
    path = out / f"frames.{args.format}"
    if args.format == "csv":
        sensor_sim.frames_to_csv(frames, path)
    else:
        sensor_sim.frames_to_jsonl(frames, path)
    print(f"wrote {len(frames)} frames at curvature {args.curvature:g} 1/m to {path}")
    return EXIT_OK


def cmd_featurize(args, config: RunConfig) -> int:
    out = args.output_dir
    out.mkdir(parents=True, exist_ok=True)
    augment = config.augment and not args.no_augment
    X, y = pipeline.build_curvature_dataset(
        config.fixtures(), config.circuit, config.sim, augment, config.seed
    )
    path = out / "features.csv"
    featurize.save_feature_dataset(path, X, y, config.norm())
    print(f"wrote {X.shape[0]} feature rows ({'with' if augment else 'no'} augmentation) to {path}")
    return EXIT_OK


def cmd_train_curvature(args, config: RunConfig) -> int:
    out = args.output_dir
    out.mkdir(parents=True, exist_ok=True)
    X, y = featurize.load_feature_dataset(args.dataset)
    train_cfg = config.train
    if args.seed is not None:
        train_cfg = curvnet.TrainConfig.from_dict({**train_cfg.to_dict(), "seed": args.seed})
    result = curvnet.train(X, y, train_cfg, feature_norm=config.norm())
    result.model.save(out / "model.json")
    with open(out / "history.json", "w") as fh:
        json.dump({"history": result.history, "best_epoch": result.best_epoch}, fh)
    for split, m in result.metrics.items():
        r2 = "undefined" if m.r2 is None else f"{m.r2:.4f}"
        print(f"{split}: rmse={m.rmse:.3f} mae={m.mae:.3f} r2={r2}")
    gate = pipeline.run_gate(result.metrics["test"], config.curvature_gate_threshold)
    print(f"gate: {'pass' if gate.passed else 'FAIL'} ({gate.reason})")
    return EXIT_OK if gate.passed else EXIT_GATE


def cmd_fit_calibration(args, config: RunConfig) -> int:
    out = args.output_dir
    out.mkdir(parents=True, exist_ok=True)
    if args.samples is not None:
        samples = forcecal.load_calibration_samples(args.samples)
    else:
        samples = pipeline.build_force_dataset(
            config.fixtures().sensors[0], config.circuit, config.sim,
            config.curvatures, config.force_grid, config.frames_per_force, config.seed,
        )
        forcecal.save_calibration_samples(out / "calibration_samples.csv", samples)
    flat_samples = [s for s in samples if s.c == 0.0]
    flat = forcecal.fit_surface(flat_samples, "flat")
    aware = forcecal.fit_surface(samples, "curvature_aware")
    surfaces = {
        "flat_full": flat.to_dict(),
        "flat_pruned": forcecal.prune_surface(flat_samples, flat).to_dict(),
        "aware_full": aware.to_dict(),
        "aware_pruned": forcecal.prune_surface(samples, aware).to_dict(),
    }
    with open(out / "surfaces.json", "w") as fh:
        json.dump(surfaces, fh, indent=2)
    print(f"flat fit R2 = {flat.fit_r2:.4f} over {len(flat_samples)} samples")
    print(f"aware fit R2 = {aware.fit_r2:.4f} over {len(samples)} samples")
    for i, j, coeff in aware.terms:
        print(f"  {forcecal.term_name(i, j):>6}: {coeff:+.6e}")
    gate = pipeline.gate_r2(aware.fit_r2, config.calibration_gate_threshold)
    print(f"gate: {'pass' if gate.passed else 'FAIL'} ({gate.reason})")
    return EXIT_OK if gate.passed else EXIT_GATE


def cmd_evaluate(args, config: RunConfig) -> int:
    out = args.output_dir
    out.mkdir(parents=True, exist_ok=True)
    assets = pipeline.load_artifacts(args.artifacts)
    if args.objects is not None:
        with open(args.objects) as fh:
            objects = tuple(ObjectSpec(**o) for o in json.load(fh))
    else:
        objects = config.objects
    cells = pipeline.build_eval_cells(
        assets["model"], config.fixtures().sensors[0], config.circuit, config.sim,
        objects, config.reference_forces,
        frames_per_cell=config.frames_per_eval_cell,
        baseline_frames=config.samples_per_baseline,
        seed=config.seed,
        use_true_curvature=args.use_true_curvature,
    )
    report = forcecal.compare_variants(assets["flat"], assets["aware"], cells)
    (out / "report.csv").write_text(report.to_csv_string())
    (out / "report.txt").write_text(report.to_text())
    with open(out / "report.json", "w") as fh:
        json.dump(report.to_dict(), fh, indent=2)
    print(report.to_text())
    return EXIT_OK


def cmd_pipeline_run(args, config: RunConfig) -> int:
    outcome = pipeline.run_full(args.output_dir, config)
    for name in pipeline.STAGE_ORDER:
        print(f"{name}: {outcome.actions.get(name, 'skipped')}")
    for gate_name, gate in outcome.manifest.gates.items():
        status = "pass" if gate["passed"] else "FAIL"
        print(f"gate {gate_name}: {status} ({gate['reason']})")
    print(f"manifest: {outcome.out_dir / 'manifest.json'}")
    return EXIT_OK if outcome.all_gates_passed else EXIT_GATE


def _session_driver_factory(args, config: RunConfig):
    assets = pipeline.load_artifacts(args.artifacts)
    spec = session_mod.SessionSpec(reference_forces=config.reference_forces,
                                   sample_rate=config.circuit.scan_rate_hz)

    def factory() -> session_mod.SessionDriver:
        rig = session_mod.SimulatedRig(
            identity=config.fixtures().sensors[0],
            circuit=config.circuit,
            sim=config.sim,
            curvature_true=args.object_curvature,
            seed=config.seed,
        )
        return session_mod.SessionDriver(
            spec, assets["model"], assets["flat"], assets["aware"], rig,
            label=f"object_c{args.object_curvature:g}",
        )

    return factory


def cmd_session_serve(args, config: RunConfig) -> int:
    from .service import SessionService

    factory = _session_driver_factory(args, config)
    service = SessionService(factory, host=args.host, port=args.port,
                             speed=args.speed, report_dir=args.output_dir)

    async def main_async():
        await service.start()
        print(f"ws://{args.host}:{service.port}", flush=True)
        await asyncio.get_running_loop().create_future()

    try:
        asyncio.run(main_async())
    except KeyboardInterrupt:
        print("stopped")
    return EXIT_OK


def cmd_session_replay(args, config: RunConfig) -> int:
    out = args.output_dir
    out.mkdir(parents=True, exist_ok=True)
    factory = _session_driver_factory(args, config)
    trace = session_mod.load_trace_csv(args.trace)
    driver = factory()
    report = session_mod.run_session(
        driver.spec, driver.model, driver.flat, driver.aware, driver.rig, trace,
        label=driver.label,
    )
    (out / "report.json").write_text(report.to_json())
    (out / "report.csv").write_text(report.to_csv_string())
    print(f"kappa_pred = {report.kappa_pred:.2f} 1/m "
          f"(true {report.curvature_true:g}), {len(report.records)} records, "
          f"completed={report.completed}")
    return EXIT_OK


COMMANDS = {
    "simulate": cmd_simulate,
    "featurize": cmd_featurize,
    "train-curvature": cmd_train_curvature,
    "fit-calibration": cmd_fit_calibration,
    "evaluate": cmd_evaluate,
    "pipeline-run": cmd_pipeline_run,
    "session-serve": cmd_session_serve,
    "session-replay": cmd_session_replay,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        config = load_config(args)
        return COMMANDS[args.command](args, config)
    except CurveCalError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())

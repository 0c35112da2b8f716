"""End-to-end calibration workflow with content-addressed stage artifacts.

Stage order: synthesize no-load baselines across curvature fixtures and
featurize them, train the curvature regressor, gate on held-out R^2, collect
block-level force data, fit flat and curvature-aware surfaces (full and
pruned), then evaluate both on a set of objects. Every stage artifact is
serialized canonically and addressed by its SHA-256, so reruns with unchanged
configs are no-ops and any deleted or corrupted intermediate is rebuilt
bit-identically.
"""

from __future__ import annotations

import hashlib
import json
import time
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from . import curvnet, featurize, forcecal, sensor_sim
from .errors import ConfigError
from .curvnet import CurvNetModel, RegressionMetrics, TrainConfig
from .featurize import BaselineMeasurement, NormalizationSpec
from .forcecal import CalibrationSample, EvalCell
from .sensor_sim import CircuitConfig, SensorIdentity, SimConfig

KAPPA_TRAIN_MAX = curvnet.KAPPA_TRAIN_MAX

# Stage tags mixed into per-sample rng seeds so streams never collide.
_SEED_CURVATURE = 1
_SEED_FORCE = 2
_SEED_EVAL = 3


def default_training_curvatures(n: int = 10, top: float = 80.0) -> tuple[float, ...]:
    """Even fixture spacing from flat to the usable curvature limit."""
    return tuple(float(v) for v in np.linspace(0.0, top, n))


@dataclass(frozen=True)
class FixtureSet:
    """Fixtures and repetition counts for the data-collection protocol."""

    curvatures: tuple[float, ...] = field(default_factory=default_training_curvatures)
    characterization_curvature: float = 100.0
    sensors: tuple[SensorIdentity, ...] = ()
    baselines_per_fixture: int = 10
    samples_per_baseline: int = 100

    def __post_init__(self):
        curv = self.curvatures
        if any(c < 0 for c in curv):
            raise ConfigError("curvatures must be nonnegative")
        if list(curv) != sorted(curv):
            raise ConfigError("curvature list must be sorted ascending")
        if self.baselines_per_fixture < 1 or self.samples_per_baseline < 1:
            raise ConfigError("repetition counts must be >= 1")


@dataclass(frozen=True)
class ObjectSpec:
    name: str
    curvature: float


DEFAULT_OBJECTS = (
    ObjectSpec("box_flat", 0.0),
    ObjectSpec("can_12", 12.0),
    ObjectSpec("can_17p5", 17.5),
    ObjectSpec("bottle_25", 25.0),
    ObjectSpec("ball_50", 50.0),
)


@dataclass(frozen=True)
class RunConfig:
    """Everything run_full needs, loadable from one nested JSON file."""

    seed: int = 0
    sim: SimConfig = field(default_factory=SimConfig)
    circuit: CircuitConfig = field(default_factory=CircuitConfig)
    sensor_seeds: tuple[int, ...] = (101, 102, 103)
    curvatures: tuple[float, ...] = field(default_factory=default_training_curvatures)
    baselines_per_fixture: int = 10
    samples_per_baseline: int = 100
    augment: bool = True
    train: TrainConfig = field(default_factory=TrainConfig)
    force_grid: tuple[float, ...] = tuple(float(f) for f in range(0, 21))
    frames_per_force: int = 100
    curvature_gate_threshold: float = 0.9
    calibration_gate_threshold: float = 0.9
    objects: tuple[ObjectSpec, ...] = DEFAULT_OBJECTS
    reference_forces: tuple[float, ...] = (2.0, 4.0, 6.0, 8.0)
    frames_per_eval_cell: int = 100

    def fixtures(self) -> FixtureSet:
        sensors = tuple(
            sensor_sim.make_identity(f"S{i}", seed, self.sim)
            for i, seed in enumerate(self.sensor_seeds)
        )
        return FixtureSet(
            curvatures=self.curvatures,
            sensors=sensors,
            baselines_per_fixture=self.baselines_per_fixture,
            samples_per_baseline=self.samples_per_baseline,
        )

    def norm(self) -> NormalizationSpec:
        return NormalizationSpec.for_adc_bits(self.circuit.adc_bits)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["objects"] = [{"name": o.name, "curvature": o.curvature} for o in self.objects]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        d = dict(d)
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        if "sim" in d:
            sim = dict(d["sim"])
            for key in ("r0_range", "alpha_range", "beta_range", "k_range"):
                if key in sim:
                    sim[key] = tuple(sim[key])
            d["sim"] = SimConfig(**sim)
        if "circuit" in d:
            d["circuit"] = CircuitConfig(**d["circuit"])
        if "train" in d:
            d["train"] = TrainConfig.from_dict(d["train"])
        if "objects" in d:
            d["objects"] = tuple(ObjectSpec(**o) for o in d["objects"])
        for key in ("sensor_seeds", "curvatures", "force_grid", "reference_forces"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(**d)

    @classmethod
    def load(cls, path) -> "RunConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)


# ---------------------------------------------------------------------------
# Dihedral augmentation
# ---------------------------------------------------------------------------


def dihedral_orientations(values16) -> list[np.ndarray]:
    """All 8 symmetries of the 4x4 grid applied to a flat 16-vector."""
    grid = np.asarray(values16, dtype=float).reshape(sensor_sim.GRID, sensor_sim.GRID)
    out = []
    for flipped in (grid, np.fliplr(grid)):
        for k in range(4):
            out.append(np.rot90(flipped, k).reshape(-1).copy())
    return out


# ---------------------------------------------------------------------------
# Stage builders
# ---------------------------------------------------------------------------


def collect_baseline(
    identity: SensorIdentity,
    circuit: CircuitConfig,
    sim: SimConfig,
    kappa: float,
    n_frames: int,
    rng: np.random.Generator,
) -> BaselineMeasurement:
    """Average n no-load frames into one baseline measurement."""
    zero = np.zeros(sensor_sim.N_NODES)
    counts = sensor_sim.scan_counts(identity, circuit, sim, zero, kappa, rng, n_frames)
    means = counts.mean(axis=0)
    return BaselineMeasurement(node_means=tuple(float(m) for m in means), n_averaged=n_frames)


def build_curvature_dataset(
    fixtures: FixtureSet,
    circuit: CircuitConfig,
    sim: SimConfig,
    augment: bool = True,
    seed: int = 0,
) -> tuple[np.ndarray, np.ndarray]:
    """Feature matrix and curvature labels for the training protocol.

    Row count: sensors x curvatures x repetitions x (8 if augment else 1).
    Orientation transforms are applied to the averaged node readings before
    featurization and inherit the fixture's curvature label.
    """
    if not fixtures.sensors:
        raise ConfigError("fixture set has no sensors configured")
    norm = NormalizationSpec.for_adc_bits(circuit.adc_bits)
    rows, labels = [], []
    for s_idx, identity in enumerate(fixtures.sensors):
        for c_idx, kappa in enumerate(fixtures.curvatures):
            if kappa > KAPPA_TRAIN_MAX:
                raise ConfigError(
                    f"fixture curvature {kappa} m^-1 exceeds the training limit"
                )
            for rep in range(fixtures.baselines_per_fixture):
                rng = np.random.default_rng([seed, _SEED_CURVATURE, s_idx, c_idx, rep])
                baseline = collect_baseline(
                    identity, circuit, sim, kappa, fixtures.samples_per_baseline, rng
                )
                readings = np.asarray(baseline.node_means)
                variants = dihedral_orientations(readings) if augment else [readings]
                for oriented in variants:
                    measurement = BaselineMeasurement(
                        node_means=tuple(float(v) for v in oriented),
                        n_averaged=baseline.n_averaged,
                    )
                    fv = featurize.extract_features(measurement, norm)
                    rows.append(fv.as_array())
                    labels.append(kappa)
    return np.array(rows), np.array(labels)


@dataclass(frozen=True)
class GateResult:
    passed: bool
    value: float | None
    threshold: float
    reason: str
    hints: tuple[str, ...] = ()

    def to_dict(self) -> dict:
        return {
            "passed": self.passed,
            "value": self.value,
            "threshold": self.threshold,
            "reason": self.reason,
            "hints": list(self.hints),
        }


GATE_HINTS = (
    "retune training hyperparameters",
    "revisit feature normalization",
    "collect data from more sensors or curvature fixtures",
)


def gate_r2(r2: float | None, threshold: float) -> GateResult:
    """Strict R^2 gate: pass only when r2 is defined and exceeds threshold."""
    if r2 is None:
        return GateResult(
            passed=False, value=None, threshold=threshold,
            reason="r2 undefined: labels are degenerate (zero variance)",
            hints=GATE_HINTS,
        )
    if r2 > threshold:
        return GateResult(passed=True, value=r2, threshold=threshold,
                          reason=f"r2={r2:.4f} > {threshold}")
    return GateResult(
        passed=False, value=r2, threshold=threshold,
        reason=f"r2={r2:.4f} <= {threshold}",
        hints=GATE_HINTS,
    )


def run_gate(metrics: RegressionMetrics, threshold: float = 0.9) -> GateResult:
    return gate_r2(metrics.r2, threshold)


def build_force_dataset(
    identity: SensorIdentity,
    circuit: CircuitConfig,
    sim: SimConfig,
    curvatures,
    force_grid,
    frames_per_force: int = 100,
    seed: int = 0,
) -> list[CalibrationSample]:
    """Block-level calibration samples over a curvature x force grid.

    Per fixture: capture the no-load block baseline, then for each force level
    average the raw block sums over the frame window and subtract the
    baseline. Curvatures beyond the usable limit are skipped (characterization
    only).
    """
    samples = []
    for c_idx, kappa in enumerate(curvatures):
        if kappa > KAPPA_TRAIN_MAX:
            continue
        rng = np.random.default_rng([seed, _SEED_FORCE, c_idx])
        zero = np.zeros(sensor_sim.N_NODES)
        base_counts = sensor_sim.scan_counts(identity, circuit, sim, zero, kappa, rng, frames_per_force)
        baseline_sum = float(sensor_sim.block_sum(base_counts).mean())
        for force in force_grid:
            profile = sensor_sim.block_force_profile(force)
            counts = sensor_sim.scan_counts(identity, circuit, sim, profile, kappa, rng, frames_per_force)
            mean_sum = float(sensor_sim.block_sum(counts).mean())
            s = max(0.0, mean_sum - baseline_sum)
            samples.append(CalibrationSample(s=s, c=float(kappa), f=float(force)))
    return samples


def build_eval_cells(
    model: CurvNetModel,
    identity: SensorIdentity,
    circuit: CircuitConfig,
    sim: SimConfig,
    objects,
    reference_forces,
    frames_per_cell: int = 100,
    baseline_frames: int = 100,
    seed: int = 0,
    use_true_curvature: bool = False,
) -> list[EvalCell]:
    """Steady-state evaluation groups for each object and reference force.

    The curvature fed to the aware surface is the model's prediction from the
    object's no-load baseline unless ``use_true_curvature`` is set. A
    natural-hold cell with a free-form grip force is appended per object.
    """
    norm = model.feature_norm
    cells = []
    for o_idx, obj in enumerate(objects):
        rng = np.random.default_rng([seed, _SEED_EVAL, o_idx])
        baseline = collect_baseline(identity, circuit, sim, obj.curvature, baseline_frames, rng)
        baseline_sum = float(sensor_sim.block_sum(np.asarray(baseline.node_means)))
        fv = featurize.extract_features(baseline, norm)
        kappa_pred = float(model.predict_one(fv.as_array()))
        kappa_used = obj.curvature if use_true_curvature else kappa_pred

        hold_force = float(rng.uniform(1.0, 3.0))
        for reference in [*reference_forces, None]:
            force = hold_force if reference is None else reference
            profile = sensor_sim.block_force_profile(force)
            counts = sensor_sim.scan_counts(identity, circuit, sim, profile, obj.curvature, rng, frames_per_cell)
            sums = sensor_sim.block_sum(counts)
            cells.append(
                EvalCell(
                    object_name=obj.name,
                    curvature_gt=obj.curvature,
                    curvature_used=kappa_used,
                    reference=reference,
                    samples=[(max(0.0, float(v) - baseline_sum), force) for v in sums],
                )
            )
    return cells


# ---------------------------------------------------------------------------
# Content-addressed artifact store and manifest
# ---------------------------------------------------------------------------


def canonical_json(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False).encode()


def content_hash(obj) -> str:
    return hashlib.sha256(canonical_json(obj)).hexdigest()


class ArtifactStore:
    """Flat JSON object store addressed by SHA-256 of canonical bytes."""

    def __init__(self, root):
        self.root = Path(root)
        (self.root / "objects").mkdir(parents=True, exist_ok=True)

    def path_for(self, digest: str) -> Path:
        return self.root / "objects" / f"{digest}.json"

    def put(self, obj) -> str:
        blob = canonical_json(obj)
        digest = hashlib.sha256(blob).hexdigest()
        path = self.path_for(digest)
        # unconditional write repairs files whose content no longer matches
        path.write_bytes(blob)
        return digest

    def get(self, digest: str):
        return json.loads(self.path_for(digest).read_bytes())

    def verify(self, digest: str) -> bool:
        path = self.path_for(digest)
        if not path.exists():
            return False
        return hashlib.sha256(path.read_bytes()).hexdigest() == digest


STAGE_ORDER = ("curvature_dataset", "curvature_model", "force_dataset", "surfaces", "evaluation")


@dataclass
class Manifest:
    seed: int
    stages: dict = field(default_factory=dict)
    gates: dict = field(default_factory=dict)
    version: int = 1

    def to_dict(self) -> dict:
        return {"version": self.version, "seed": self.seed, "stages": self.stages, "gates": self.gates}

    @classmethod
    def from_dict(cls, d: dict) -> "Manifest":
        return cls(seed=d["seed"], stages=d.get("stages", {}), gates=d.get("gates", {}), version=d.get("version", 1))

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)

    @classmethod
    def load(cls, path) -> "Manifest":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def stage_hashes(self) -> dict[str, str]:
        return {name: rec["artifact_hash"] for name, rec in self.stages.items()}


@dataclass
class RunOutcome:
    manifest: Manifest
    actions: dict[str, str]  # stage -> built | reused | skipped
    out_dir: Path

    @property
    def all_gates_passed(self) -> bool:
        return all(g["passed"] for g in self.manifest.gates.values())


def _stage(manifest, store, actions, name, stage_config, inputs, builder):
    """Run one stage unless its config+inputs hash matches a verifiable artifact."""
    config_hash = content_hash(stage_config)
    prior = manifest.stages.get(name)
    if (
        prior is not None
        and prior["config_hash"] == config_hash
        and prior["input_hashes"] == inputs
        and store.verify(prior["artifact_hash"])
    ):
        actions[name] = "reused"
        return prior["artifact_hash"]
    for upstream, digest in inputs.items():
        if not store.verify(digest):
            raise ConfigError(f"stage {name}: upstream artifact {upstream} missing or corrupt")
    artifact = builder()
    digest = store.put(artifact)
    manifest.stages[name] = {
        "artifact_hash": digest,
        "config_hash": config_hash,
        "input_hashes": inputs,
        "timestamp": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
    }
    actions[name] = "built"
    return digest


def run_full(out_dir, config: RunConfig = RunConfig()) -> RunOutcome:
    """Execute all stages in dependency order, stopping at a failed gate."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    store = ArtifactStore(out_dir)
    manifest_path = out_dir / "manifest.json"
    manifest = Manifest.load(manifest_path) if manifest_path.exists() else Manifest(seed=config.seed)
    actions: dict[str, str] = {}

    fixtures = config.fixtures()
    norm = config.norm()

    # 1. curvature dataset
    ds_cfg = {
        "sim": asdict(config.sim), "circuit": asdict(config.circuit),
        "sensor_seeds": list(config.sensor_seeds), "curvatures": list(config.curvatures),
        "baselines_per_fixture": config.baselines_per_fixture,
        "samples_per_baseline": config.samples_per_baseline,
        "augment": config.augment, "seed": config.seed,
    }

    def build_dataset():
        X, y = build_curvature_dataset(fixtures, config.circuit, config.sim, config.augment, config.seed)
        assert float(y.max(initial=0.0)) <= KAPPA_TRAIN_MAX, "training labels leaked past the curvature limit"
        return {"kind": "curvature_dataset", "norm": {"lo": norm.lo, "hi": norm.hi},
                "X": X.tolist(), "y": y.tolist()}

    ds_hash = _stage(manifest, store, actions, "curvature_dataset", ds_cfg, {}, build_dataset)

    # 2. curvature model + gate
    model_cfg = {"train": config.train.to_dict()}

    def build_model():
        data = store.get(ds_hash)
        X, y = np.array(data["X"]), np.array(data["y"])
        result = curvnet.train(X, y, config.train, feature_norm=norm)
        return {
            "kind": "curvature_model",
            "model": result.model.to_dict(),
            "metrics": {k: m.to_dict() for k, m in result.metrics.items()},
            "history": result.history,
            "best_epoch": result.best_epoch,
        }

    model_hash = _stage(manifest, store, actions, "curvature_model", model_cfg,
                        {"curvature_dataset": ds_hash}, build_model)
    model_artifact = store.get(model_hash)
    test_metrics = RegressionMetrics(**model_artifact["metrics"]["test"])
    gate = run_gate(test_metrics, config.curvature_gate_threshold)
    manifest.gates["curvature_r2"] = gate.to_dict()
    if not gate.passed:
        for name in ("force_dataset", "surfaces", "evaluation"):
            actions[name] = "skipped"
        manifest.save(manifest_path)
        return RunOutcome(manifest=manifest, actions=actions, out_dir=out_dir)

    # 3. force dataset
    force_cfg = {
        "sim": asdict(config.sim), "circuit": asdict(config.circuit),
        "sensor_seed": config.sensor_seeds[0], "curvatures": list(config.curvatures),
        "force_grid": list(config.force_grid), "frames_per_force": config.frames_per_force,
        "seed": config.seed,
    }

    def build_force():
        samples = build_force_dataset(
            fixtures.sensors[0], config.circuit, config.sim,
            config.curvatures, config.force_grid, config.frames_per_force, config.seed,
        )
        return {"kind": "force_dataset", "samples": [[s.s, s.c, s.f] for s in samples]}

    force_hash = _stage(manifest, store, actions, "force_dataset", force_cfg, {}, build_force)

    # 4. surfaces + calibration gate
    def build_surfaces():
        data = store.get(force_hash)
        samples = [CalibrationSample(s=s, c=c, f=f) for s, c, f in data["samples"]]
        flat_samples = [smp for smp in samples if smp.c == 0.0]
        flat = forcecal.fit_surface(flat_samples, "flat")
        aware = forcecal.fit_surface(samples, "curvature_aware")
        return {
            "kind": "surfaces",
            "flat_full": flat.to_dict(),
            "flat_pruned": forcecal.prune_surface(flat_samples, flat).to_dict(),
            "aware_full": aware.to_dict(),
            "aware_pruned": forcecal.prune_surface(samples, aware).to_dict(),
        }

    surf_hash = _stage(manifest, store, actions, "surfaces", {"basis": "degree-3"},
                       {"force_dataset": force_hash}, build_surfaces)
    surf_artifact = store.get(surf_hash)
    cal_gate = gate_r2(surf_artifact["aware_full"]["fit_r2"], config.calibration_gate_threshold)
    manifest.gates["calibration_r2"] = cal_gate.to_dict()
    if not cal_gate.passed:
        actions["evaluation"] = "skipped"
        manifest.save(manifest_path)
        return RunOutcome(manifest=manifest, actions=actions, out_dir=out_dir)

    # 5. evaluation on objects
    eval_cfg = {
        "objects": [{"name": o.name, "curvature": o.curvature} for o in config.objects],
        "reference_forces": list(config.reference_forces),
        "frames_per_eval_cell": config.frames_per_eval_cell,
        "seed": config.seed,
    }

    def build_eval():
        model = CurvNetModel.from_dict(store.get(model_hash)["model"])
        surfaces = store.get(surf_hash)
        flat = forcecal.CalibrationSurface.from_dict(surfaces["flat_full"])
        aware = forcecal.CalibrationSurface.from_dict(surfaces["aware_full"])
        cells = build_eval_cells(
            model, fixtures.sensors[0], config.circuit, config.sim,
            config.objects, config.reference_forces,
            frames_per_cell=config.frames_per_eval_cell,
            baseline_frames=config.samples_per_baseline,
            seed=config.seed,
        )
        report = forcecal.compare_variants(flat, aware, cells)
        return {"kind": "evaluation", "report": report.to_dict(), "csv": report.to_csv_string(),
                "table": report.to_text()}

    _stage(manifest, store, actions, "evaluation", eval_cfg,
           {"curvature_model": model_hash, "surfaces": surf_hash}, build_eval)

    manifest.save(manifest_path)
    return RunOutcome(manifest=manifest, actions=actions, out_dir=out_dir)


def load_artifacts(out_dir) -> dict:
    """Reload the trained model and fitted surfaces from a pipeline run."""
    out_dir = Path(out_dir)
    manifest = Manifest.load(out_dir / "manifest.json")
    store = ArtifactStore(out_dir)
    needed = ("curvature_model", "surfaces")
    missing = [name for name in needed if name not in manifest.stages]
    if missing:
        raise ConfigError(f"pipeline output at {out_dir} is missing stages: {missing}")
    model_art = store.get(manifest.stages["curvature_model"]["artifact_hash"])
    surf_art = store.get(manifest.stages["surfaces"]["artifact_hash"])
    return {
        "model": CurvNetModel.from_dict(model_art["model"]),
        "flat": forcecal.CalibrationSurface.from_dict(surf_art["flat_full"]),
        "aware": forcecal.CalibrationSurface.from_dict(surf_art["aware_full"]),
        "manifest": manifest,
    }

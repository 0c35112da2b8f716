"""Forward model of a 4x4 resistive tactile array and its readout circuit.

The array is modeled node by node. Mounting the sensor on a curved surface
pre-strains the film, which raises the no-load resistance and lowers force
sensitivity:

    R_base(C) = r0 + alpha*C + beta*C**2          (no-load resistance)
    k_eff(C)  = k / (1 + gamma*C)                 (force responsiveness)
    R(F, C)   = R_base(C) / (1 + k_eff(C)*F)      (loaded resistance)

Each node feeds a non-inverting amplifier, V = (1 + r_gain/R) * v_ref, whose
output is noise-corrupted, clamped to the ADC input range, and quantized.
All randomness comes from explicitly passed numpy Generators, so identical
seeds produce bit-identical frames.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, asdict

import numpy as np

from .errors import ConfigError, DomainError

N_NODES = 16
GRID = 4

# Central 2x2 block, flat indices into the row-major 4x4 grid.
BLOCK_NODES = (5, 6, 9, 10)


@dataclass(frozen=True)
class CircuitConfig:
    """Readout electronics: amplifier gain resistor plus ADC characteristics."""

    r_gain: float = 5600.0
    v_ref: float = 0.1
    adc_bits: int = 10
    adc_full_scale: float = 5.0
    scan_rate_hz: float = 50.0

    def __post_init__(self):
        if not (8 <= self.adc_bits <= 16):
            raise ConfigError(f"adc_bits must be in [8, 16], got {self.adc_bits}")
        if self.v_ref <= 0:
            raise ConfigError("v_ref must be positive")
        if self.r_gain <= 0:
            raise ConfigError("r_gain must be positive")
        if self.adc_full_scale <= 0:
            raise ConfigError("adc_full_scale must be positive")
        if self.scan_rate_hz <= 0:
            raise ConfigError("scan_rate_hz must be positive")

    @property
    def adc_max(self) -> int:
        return (1 << self.adc_bits) - 1

    @property
    def volts_per_count(self) -> float:
        return self.adc_full_scale / self.adc_max


@dataclass(frozen=True)
class SimConfig:
    """Parameter ranges for sensor identities plus global disturbance constants.

    Per-node parameters are drawn uniformly from the configured ranges.
    ``gamma`` controls how fast curvature erodes force sensitivity. Above
    ``unreliable_kappa`` the readout noise is inflated by
    ``unreliable_noise_factor`` to reproduce the erratic response of heavily
    bent film.
    """

    r0_range: tuple[float, float] = (800.0, 1200.0)
    alpha_range: tuple[float, float] = (1.0, 4.0)
    beta_range: tuple[float, float] = (0.005, 0.035)
    k_range: tuple[float, float] = (1.2, 1.8)
    gamma: float = 0.02
    noise_sigma_counts: float = 2.0
    unreliable_kappa: float = 90.0
    unreliable_noise_factor: float = 5.0

    def __post_init__(self):
        for name in ("r0_range", "alpha_range", "beta_range", "k_range"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ConfigError(f"{name}: min {lo} > max {hi}")
        if self.r0_range[0] <= 0:
            raise ConfigError("node baseline resistance must be positive")
        if self.k_range[0] <= 0:
            raise ConfigError("sensitivity must be positive")
        if self.gamma < 0 or self.noise_sigma_counts < 0:
            raise ConfigError("gamma and noise sigma must be nonnegative")
        if self.unreliable_noise_factor < 1.0:
            raise ConfigError("unreliable_noise_factor must be >= 1")


@dataclass(frozen=True)
class SensorIdentity:
    """Per-sensor random identity: one parameter set per node.

    ``node_baseline_r0`` is the flat-mount no-load resistance (ohms),
    ``prestrain_alpha``/``prestrain_beta`` the linear/quadratic growth of that
    resistance with curvature, ``sensitivity_k`` the force responsiveness.
    """

    sensor_id: str
    seed: int
    node_baseline_r0: tuple[float, ...]
    prestrain_alpha: tuple[float, ...]
    prestrain_beta: tuple[float, ...]
    sensitivity_k: tuple[float, ...]

    def __post_init__(self):
        for name in ("node_baseline_r0", "prestrain_alpha", "prestrain_beta", "sensitivity_k"):
            if len(getattr(self, name)) != N_NODES:
                raise ConfigError(f"{name} must have {N_NODES} entries")
        if min(self.node_baseline_r0) <= 0:
            raise ConfigError("node_baseline_r0 must be positive")
        if min(self.sensitivity_k) <= 0:
            raise ConfigError("sensitivity_k must be positive")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "SensorIdentity":
        return cls(
            sensor_id=d["sensor_id"],
            seed=int(d["seed"]),
            node_baseline_r0=tuple(d["node_baseline_r0"]),
            prestrain_alpha=tuple(d["prestrain_alpha"]),
            prestrain_beta=tuple(d["prestrain_beta"]),
            sensitivity_k=tuple(d["sensitivity_k"]),
        )


@dataclass(frozen=True)
class CurvatureLabel:
    """Reported curvature of a mount, with the two principal curvatures.

    Cylinder fixtures follow the operative labeling convention: a fixture
    labeled x has kappa = k1 = x and k2 = 0 (i.e. kappa = 1/R, not the mean
    of the principal curvatures; both components are kept so either reading
    can be reconstructed).
    """

    kappa: float
    k1: float
    k2: float = 0.0

    def __post_init__(self):
        if self.kappa < 0:
            raise DomainError("kappa must be nonnegative")

    @classmethod
    def cylinder(cls, kappa: float) -> "CurvatureLabel":
        # Cylinder fixtures are labeled by 1/R with k2 = 0.
        return cls(kappa=kappa, k1=kappa, k2=0.0)


@dataclass(frozen=True)
class ScanFrame:
    """One raster scan of the array: 16 ADC counts plus ground truth."""

    t: float
    node_counts: tuple[int, ...]
    applied_force: float
    curvature_true: float = 0.0

    def __post_init__(self):
        if len(self.node_counts) != N_NODES:
            raise ConfigError(f"node_counts must have {N_NODES} entries")
        if min(self.node_counts) < 0:
            raise DomainError("ADC counts cannot be negative")
        if self.applied_force < 0:
            raise DomainError("applied_force must be nonnegative")


def make_identity(sensor_id: str, seed: int, sim: SimConfig = SimConfig()) -> SensorIdentity:
    """Draw a reproducible per-node parameter set from a seeded RNG."""
    rng = np.random.default_rng(seed)
    r0 = rng.uniform(*sim.r0_range, size=N_NODES)
    alpha = rng.uniform(*sim.alpha_range, size=N_NODES)
    beta = rng.uniform(*sim.beta_range, size=N_NODES)
    k = rng.uniform(*sim.k_range, size=N_NODES)
    return SensorIdentity(
        sensor_id=sensor_id,
        seed=int(seed),
        node_baseline_r0=tuple(float(v) for v in r0),
        prestrain_alpha=tuple(float(v) for v in alpha),
        prestrain_beta=tuple(float(v) for v in beta),
        sensitivity_k=tuple(float(v) for v in k),
    )


def base_resistance(identity: SensorIdentity, node: int, kappa: float, sim: SimConfig = SimConfig()) -> float:
    """No-load resistance of one node when mounted at curvature kappa."""
    if kappa < 0:
        raise DomainError("kappa must be nonnegative")
    return (
        identity.node_baseline_r0[node]
        + identity.prestrain_alpha[node] * kappa
        + identity.prestrain_beta[node] * kappa**2
    )


def node_resistance(
    identity: SensorIdentity,
    node: int,
    force_on_node: float,
    kappa: float,
    sim: SimConfig = SimConfig(),
) -> float:
    """Loaded node resistance R = R_base(C) / (1 + k_eff(C) * F)."""
    if force_on_node < 0:
        raise DomainError("force must be nonnegative")
    r_base = base_resistance(identity, node, kappa, sim)
    k_eff = identity.sensitivity_k[node] / (1.0 + sim.gamma * kappa)
    return r_base / (1.0 + k_eff * force_on_node)


def readout_voltage(circuit: CircuitConfig, resistance: float) -> float:
    """Non-inverting amplifier output, V = (1 + r_gain/R) * v_ref."""
    if resistance <= 0:
        raise DomainError("resistance must be positive")
    return (1.0 + circuit.r_gain / resistance) * circuit.v_ref


def quantize(circuit: CircuitConfig, volts: float | np.ndarray) -> np.ndarray:
    """Clamp to the ADC input range and round to integer counts."""
    v = np.clip(volts, 0.0, circuit.adc_full_scale)
    return np.rint(v / circuit.adc_full_scale * circuit.adc_max).astype(np.int64)


def scan_counts(
    identity: SensorIdentity,
    circuit: CircuitConfig,
    sim: SimConfig,
    force_profile: np.ndarray,
    kappa: float,
    rng: np.random.Generator | None,
    n_frames: int = 1,
) -> np.ndarray:
    """Vectorized scan core: (n_frames, 16) integer ADC counts.

    Draws exactly ``n_frames * 16`` gaussians (none when sigma is zero), in the
    same order as repeated single-frame scans, so batched and frame-by-frame
    generation consume an rng stream identically.
    """
    forces = np.asarray(force_profile, dtype=float)
    if forces.shape != (N_NODES,):
        raise ConfigError(f"force_profile must have {N_NODES} entries")
    if np.any(forces < 0):
        raise DomainError("force must be nonnegative")
    if kappa < 0:
        raise DomainError("kappa must be nonnegative")

    r0 = np.asarray(identity.node_baseline_r0)
    alpha = np.asarray(identity.prestrain_alpha)
    beta = np.asarray(identity.prestrain_beta)
    k = np.asarray(identity.sensitivity_k)

    r_base = r0 + alpha * kappa + beta * kappa**2
    k_eff = k / (1.0 + sim.gamma * kappa)
    resistance = r_base / (1.0 + k_eff * forces)
    volts = (1.0 + circuit.r_gain / resistance) * circuit.v_ref

    sigma_counts = sim.noise_sigma_counts
    if kappa >= sim.unreliable_kappa:
        sigma_counts *= sim.unreliable_noise_factor
    sigma_volts = sigma_counts * circuit.volts_per_count

    out = np.broadcast_to(volts, (n_frames, N_NODES)).copy()
    if sigma_volts > 0:
        if rng is None:
            raise ConfigError("rng required when noise sigma is positive")
        out += rng.normal(0.0, sigma_volts, size=(n_frames, N_NODES))
    return quantize(circuit, out)


def scan(
    identity: SensorIdentity,
    circuit: CircuitConfig,
    sim: SimConfig,
    force_profile,
    kappa: float,
    rng: np.random.Generator | None = None,
    t: float = 0.0,
) -> ScanFrame:
    """Raster-scan all 16 nodes once and return a frame."""
    forces = np.asarray(force_profile, dtype=float)
    counts = scan_counts(identity, circuit, sim, forces, kappa, rng, n_frames=1)[0]
    return ScanFrame(
        t=float(t),
        node_counts=tuple(int(c) for c in counts),
        applied_force=float(forces.sum()),
        curvature_true=float(kappa),
    )


def block_force_profile(total_force: float) -> np.ndarray:
    """Spread a block-level force evenly over the four central nodes."""
    if total_force < 0:
        raise DomainError("force must be nonnegative")
    profile = np.zeros(N_NODES)
    profile[list(BLOCK_NODES)] = total_force / len(BLOCK_NODES)
    return profile


def block_sum(counts):
    """Raw sum of the four central node counts (per frame for 2-D input)."""
    arr = np.asarray(counts)
    s = arr[..., list(BLOCK_NODES)].sum(axis=-1)
    return float(s) if s.ndim == 0 else s


def block_reading(frame: ScanFrame, baseline_sum: float = 0.0) -> float:
    """Baseline-subtracted central-block reading, floored at zero.

    ``baseline_sum`` is the stored no-load block sum captured for the current
    mounting; with the default 0 this returns the raw block sum.
    """
    return max(0.0, block_sum(frame.node_counts) - baseline_sum)


# ---------------------------------------------------------------------------
# Frame stream persistence
# ---------------------------------------------------------------------------

FRAME_CSV_HEADER = ["t", "f_true", "kappa_true"] + [f"n{r}{c}" for r in range(GRID) for c in range(GRID)]


def frames_to_csv(frames, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(FRAME_CSV_HEADER)
        for f in frames:
            writer.writerow([f.t, f.applied_force, f.curvature_true, *f.node_counts])


def frames_from_csv(path) -> list[ScanFrame]:
    frames = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != FRAME_CSV_HEADER:
            raise ConfigError(f"unexpected frame CSV header: {header}")
        for row in reader:
            frames.append(
                ScanFrame(
                    t=float(row[0]),
                    node_counts=tuple(int(v) for v in row[3:]),
                    applied_force=float(row[1]),
                    curvature_true=float(row[2]),
                )
            )
    return frames


def frames_to_jsonl(frames, path) -> None:
    with open(path, "w") as fh:
        for f in frames:
            fh.write(
                json.dumps(
                    {
                        "t": f.t,
                        "f_true": f.applied_force,
                        "kappa_true": f.curvature_true,
                        "counts": list(f.node_counts),
                    }
                )
                + "\n"
            )


def frames_from_jsonl(path) -> list[ScanFrame]:
    frames = []
    with open(path) as fh:
        for line in fh:
            if not line.strip():
                continue
            d = json.loads(line)
            frames.append(
                ScanFrame(
                    t=float(d["t"]),
                    node_counts=tuple(int(v) for v in d["counts"]),
                    applied_force=float(d["f_true"]),
                    curvature_true=float(d["kappa_true"]),
                )
            )
    return frames

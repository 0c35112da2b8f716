"""Live calibration/validation session protocol.

A session walks an increasing ladder of reference forces. A target is
recorded once the measured force stays inside +-tolerance of the reference
for one full dwell window (continuous time, reset on any excursion); the
mean block reading and mean force over exactly that window are stored. After
the last reference an optional free-form natural hold (same duration, no
tolerance gate) is captured, then the session is done.

The transition function is pure: service and replay drivers feed it the same
samples and get identical states, which is what makes transport transparency
testable. Curvature is predicted once, from a no-load baseline captured
before targeting starts, and stays fixed for the session.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, asdict

import numpy as np

from . import featurize, forcecal, sensor_sim
from .curvnet import CurvNetModel
from .errors import ConfigError, ContaminationError, ProtocolError
from .forcecal import CalibrationSurface, ErrorStats, ForceErrorReport, ObjectErrorRow

PROTOCOL_VERSION = 1

IDLE = "idle"
TARGETING = "targeting"
NATURAL_HOLD = "natural_hold"
DONE = "done"

NATURAL_HOLD_INDEX = -1


@dataclass(frozen=True)
class SessionSpec:
    reference_forces: tuple[float, ...] = (2.0, 4.0, 6.0, 8.0)
    tolerance: float = 0.2
    dwell: float = 5.0
    include_natural_hold: bool = True
    sample_rate: float = 50.0
    baseline_duration: float = 2.0

    def __post_init__(self):
        if self.tolerance <= 0:
            raise ConfigError("tolerance must be positive")
        if self.dwell <= 0:
            raise ConfigError("dwell must be positive")
        if self.sample_rate <= 0:
            raise ConfigError("sample_rate must be positive")
        refs = self.reference_forces
        if len(refs) == 0 or any(b <= a for a, b in zip(refs, refs[1:])):
            raise ConfigError("reference forces must be strictly increasing")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["reference_forces"] = list(d["reference_forces"])  # JSON-stable
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SessionSpec":
        d = dict(d)
        if "reference_forces" in d:
            d["reference_forces"] = tuple(d["reference_forces"])
        return cls(**d)


@dataclass(frozen=True)
class Sample:
    t: float
    force: float
    block_reading: float


@dataclass(frozen=True)
class TargetRecord:
    target_index: int  # NATURAL_HOLD_INDEX for the natural-hold row
    reference: float | None
    mean_block_reading: float
    mean_force: float
    window_start: float
    window_end: float
    n_samples: int

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class SessionState:
    phase: str = IDLE
    target_index: int = 0
    dwell_progress: float = 0.0
    window_start: float | None = None
    window_samples: tuple[Sample, ...] = ()
    last_t: float | None = None
    records: tuple[TargetRecord, ...] = ()
    aborted: bool = False


def _msg(kind: str, **payload) -> dict:
    return {"v": PROTOCOL_VERSION, "kind": kind, **payload}


def state_change_message(t: float, state: SessionState, spec: SessionSpec) -> dict:
    reference = None
    if state.phase == TARGETING:
        reference = spec.reference_forces[state.target_index]
    return _msg("state_change", t=t, phase=state.phase,
                target_index=state.target_index if state.phase == TARGETING else None,
                reference=reference)


def record_message(t: float, record: TargetRecord) -> dict:
    return _msg("record", t=t, **record.to_dict())


def telemetry_message(t, force, block_reading, predicted_force_flat=None,
                      predicted_force_aware=None, kappa_pred=None, phase=None,
                      dwell_progress=None) -> dict:
    return _msg(
        "telemetry", t=t, force=force, block_reading=block_reading,
        predicted_force_flat=predicted_force_flat,
        predicted_force_aware=predicted_force_aware,
        kappa_pred=kappa_pred, phase=phase, dwell_progress=dwell_progress,
    )


def start_targeting(state: SessionState, spec: SessionSpec, t: float) -> tuple[SessionState, list[dict]]:
    if state.phase != IDLE:
        raise ProtocolError(f"cannot start targeting from phase {state.phase!r}")
    new = SessionState(phase=TARGETING, target_index=0, last_t=state.last_t, records=state.records)
    return new, [state_change_message(t, new, spec)]


def advance_to_natural_hold(state: SessionState, spec: SessionSpec, t: float) -> tuple[SessionState, list[dict]]:
    """Skip any remaining targets; lands on Done when no hold is configured."""
    if state.phase not in (TARGETING, NATURAL_HOLD):
        raise ProtocolError(f"cannot advance from phase {state.phase!r}")
    phase = NATURAL_HOLD if spec.include_natural_hold else DONE
    new = SessionState(phase=phase, target_index=state.target_index,
                       last_t=state.last_t, records=state.records)
    return new, [state_change_message(t, new, spec)]


def abort(state: SessionState, t: float, spec: SessionSpec) -> tuple[SessionState, list[dict]]:
    new = SessionState(phase=DONE, target_index=state.target_index, last_t=state.last_t,
                       records=state.records, aborted=True)
    return new, [state_change_message(t, new, spec)]


def _window_mean(samples: tuple[Sample, ...], attr: str) -> float:
    total = 0.0
    for s in samples:
        total += getattr(s, attr)
    return total / len(samples)


def step(state: SessionState, spec: SessionSpec, sample: Sample) -> tuple[SessionState, list[dict]]:
    """Advance the protocol with one (t, force, block_reading) sample.

    Dwell accounting is continuous time: progress is the elapsed span since
    the first sample of the current in-window run, and resets to zero the
    moment a sample leaves the window.
    """
    if state.last_t is not None and sample.t < state.last_t:
        raise ProtocolError(f"time regression: {sample.t} < {state.last_t}")
    if state.phase == DONE:
        return state, []
    if state.phase == IDLE:
        raise ProtocolError("session not started; samples during Idle belong to baseline capture")

    messages: list[dict] = []

    if state.phase == TARGETING:
        reference = spec.reference_forces[state.target_index]
        in_window = abs(sample.force - reference) <= spec.tolerance
    else:  # NATURAL_HOLD has no tolerance gate
        reference = None
        in_window = True

    if in_window:
        window_start = state.window_start if state.window_start is not None else sample.t
        window_samples = state.window_samples + (sample,)
        dwell_progress = sample.t - window_start
    else:
        window_start = None
        window_samples = ()
        dwell_progress = 0.0

    new = SessionState(
        phase=state.phase,
        target_index=state.target_index,
        dwell_progress=dwell_progress,
        window_start=window_start,
        window_samples=window_samples,
        last_t=sample.t,
        records=state.records,
        aborted=state.aborted,
    )

    if dwell_progress >= spec.dwell:
        record = TargetRecord(
            target_index=state.target_index if state.phase == TARGETING else NATURAL_HOLD_INDEX,
            reference=reference,
            mean_block_reading=_window_mean(window_samples, "block_reading"),
            mean_force=_window_mean(window_samples, "force"),
            window_start=window_start,
            window_end=sample.t,
            n_samples=len(window_samples),
        )
        messages.append(record_message(sample.t, record))
        if state.phase == TARGETING and state.target_index + 1 < len(spec.reference_forces):
            phase, index = TARGETING, state.target_index + 1
        elif state.phase == TARGETING and spec.include_natural_hold:
            phase, index = NATURAL_HOLD, state.target_index
        else:
            phase, index = DONE, state.target_index
        new = SessionState(phase=phase, target_index=index, last_t=sample.t,
                           records=state.records + (record,), aborted=state.aborted)
        messages.append(state_change_message(sample.t, new, spec))

    return new, messages


# ---------------------------------------------------------------------------
# Simulated rig: the stand-in for sensor + reference force hardware
# ---------------------------------------------------------------------------


@dataclass
class SimulatedRig:
    """One sensor mounted on one object, driven by commanded forces.

    Interactive commands are slew-limited so UI slider jumps turn into
    physically plausible ramps; replayed traces set the force exactly.
    """

    identity: sensor_sim.SensorIdentity
    circuit: sensor_sim.CircuitConfig
    sim: sensor_sim.SimConfig
    curvature_true: float
    seed: int = 0
    slew_rate: float = 20.0  # N/s
    applied: float = 0.0
    commanded: float = 0.0

    def __post_init__(self):
        self.rng = np.random.default_rng([self.seed, 4])

    def command(self, force: float) -> None:
        self.commanded = max(0.0, float(force))

    def set_exact(self, force: float) -> None:
        self.applied = max(0.0, float(force))
        self.commanded = self.applied

    def tick(self, dt: float) -> None:
        limit = self.slew_rate * dt
        self.applied += float(np.clip(self.commanded - self.applied, -limit, limit))

    def scan_nodes(self) -> np.ndarray:
        profile = sensor_sim.block_force_profile(self.applied)
        return sensor_sim.scan_counts(
            self.identity, self.circuit, self.sim, profile, self.curvature_true, self.rng
        )[0]


# ---------------------------------------------------------------------------
# Session report
# ---------------------------------------------------------------------------


@dataclass
class SessionReport:
    label: str
    kappa_pred: float
    curvature_true: float | None
    completed: bool
    aborted: bool
    spec: SessionSpec
    records: list[TargetRecord]
    target_rows: list[dict]
    natural_hold: dict | None

    def to_dict(self) -> dict:
        return {
            "label": self.label,
            "kappa_pred": self.kappa_pred,
            "curvature_true": self.curvature_true,
            "completed": self.completed,
            "aborted": self.aborted,
            "spec": self.spec.to_dict(),
            "records": [r.to_dict() for r in self.records],
            "target_rows": self.target_rows,
            "natural_hold": self.natural_hold,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    def to_csv_string(self) -> str:
        """Single-row CSV in the flat-vs-aware validation table layout."""
        cells = {}
        for row in self.target_rows:
            cells[row["reference"]] = {
                "flat": ErrorStats(**row["flat"]),
                "aware": ErrorStats(**row["aware"]),
            }
        natural = None
        if self.natural_hold is not None:
            natural = {
                "force_gt": self.natural_hold["force_gt"],
                "flat": ErrorStats(**self.natural_hold["flat"]),
                "aware": ErrorStats(**self.natural_hold["aware"]),
            }
        report = ForceErrorReport(
            reference_forces=[row["reference"] for row in self.target_rows],
            rows=[
                ObjectErrorRow(
                    name=self.label,
                    curvature_gt=self.curvature_true if self.curvature_true is not None else float("nan"),
                    curvature_used=self.kappa_pred,
                    cells=cells,
                    natural_hold=natural,
                )
            ],
        )
        return report.to_csv_string()


# ---------------------------------------------------------------------------
# Headless session driver
# ---------------------------------------------------------------------------


def trace_force(trace: list[tuple[float, float]], tau: float) -> float:
    """Zero-order-hold lookup of a (t, force) trace; zero before the first row."""
    force = 0.0
    for t, f in trace:
        if t > tau:
            break
        force = f
    return force


class SessionDriver:
    """Shared engine for headless runs and the streaming service.

    Owns the rig, the baseline capture, prediction enrichment, the sample
    log, and report assembly. Each call to ``tick`` advances one sample
    period and returns the emitted messages.
    """

    def __init__(
        self,
        spec: SessionSpec,
        model: CurvNetModel,
        flat: CalibrationSurface,
        aware: CalibrationSurface,
        rig: SimulatedRig,
        label: str = "session",
    ):
        self.spec = spec
        self.model = model
        self.flat = flat
        self.aware = aware
        self.rig = rig
        self.label = label
        self.state = SessionState()
        self.kappa_pred: float | None = None
        self.baseline_block_sum: float | None = None
        self.sample_log: list[Sample] = []
        self.tick_index = 0
        self.messages: list[dict] = []

    @property
    def dt(self) -> float:
        return 1.0 / self.spec.sample_rate

    @property
    def t(self) -> float:
        return self.tick_index / self.spec.sample_rate

    def capture_baseline(self) -> list[dict]:
        """First seconds of the session: no-load frames -> kappa_pred.

        Refuses to proceed when any baseline frame carries force, so a
        contaminated capture can never leak into the curvature estimate.
        """
        n = max(1, int(round(self.spec.baseline_duration * self.spec.sample_rate)))
        messages = []
        counts = np.zeros((n, sensor_sim.N_NODES))
        for i in range(n):
            if self.rig.applied > featurize.FORCE_EPSILON:
                raise ContaminationError(
                    f"baseline capture saw {self.rig.applied:.3f} N at t={self.t:.3f}s; "
                    "session refuses to start targeting"
                )
            counts[i] = self.rig.scan_nodes()
            messages.append(
                telemetry_message(self.t, self.rig.applied, 0.0, phase=IDLE, dwell_progress=0.0)
            )
            self.tick_index += 1
        means = counts.mean(axis=0)
        baseline = featurize.BaselineMeasurement(
            node_means=tuple(float(m) for m in means), n_averaged=n
        )
        self.baseline_block_sum = float(sensor_sim.block_sum(means))
        fv = featurize.extract_features(baseline, self.model.feature_norm)
        self.kappa_pred = self.model.predict_one(fv.as_array())
        self.state, msgs = start_targeting(self.state, self.spec, self.t)
        messages.extend(msgs)
        self.messages.extend(messages)
        return messages

    def tick(self) -> list[dict]:
        """Scan once, enrich telemetry with both force predictions, step."""
        if self.kappa_pred is None:
            raise ProtocolError("baseline not captured")
        t = self.t
        counts = self.rig.scan_nodes()
        s = max(0.0, float(sensor_sim.block_sum(counts)) - self.baseline_block_sum)
        sample = Sample(t=t, force=self.rig.applied, block_reading=s)
        self.sample_log.append(sample)
        messages = [
            telemetry_message(
                t, sample.force, s,
                predicted_force_flat=forcecal.predict_force(self.flat, s, self.kappa_pred),
                predicted_force_aware=forcecal.predict_force(self.aware, s, self.kappa_pred),
                kappa_pred=self.kappa_pred,
                phase=self.state.phase,
                dwell_progress=self.state.dwell_progress,
            )
        ]
        self.state, msgs = step(self.state, self.spec, sample)
        messages.extend(msgs)
        self.tick_index += 1
        self.messages.extend(messages)
        return messages

    def do_abort(self) -> list[dict]:
        self.state, msgs = abort(self.state, self.t, self.spec)
        self.messages.extend(msgs)
        return msgs

    def _window_stats(self, record: TargetRecord) -> dict:
        window = [
            (s.block_reading, s.force)
            for s in self.sample_log
            if record.window_start <= s.t <= record.window_end
        ]
        return {
            "flat": asdict(forcecal.error_stats(self.flat, window, self.kappa_pred)),
            "aware": asdict(forcecal.error_stats(self.aware, window, self.kappa_pred)),
        }

    def report(self) -> SessionReport:
        target_rows = []
        natural_hold = None
        for record in self.state.records:
            stats = self._window_stats(record)
            if record.target_index == NATURAL_HOLD_INDEX:
                natural_hold = {"force_gt": record.mean_force, **stats}
            else:
                target_rows.append(
                    {"reference": record.reference, "mean_force": record.mean_force,
                     "mean_block_reading": record.mean_block_reading,
                     "n_samples": record.n_samples, **stats}
                )
        return SessionReport(
            label=self.label,
            kappa_pred=self.kappa_pred if self.kappa_pred is not None else float("nan"),
            curvature_true=self.rig.curvature_true,
            completed=self.state.phase == DONE and not self.state.aborted,
            aborted=self.state.aborted,
            spec=self.spec,
            records=list(self.state.records),
            target_rows=target_rows,
            natural_hold=natural_hold,
        )


def run_session(
    spec: SessionSpec,
    model: CurvNetModel,
    flat: CalibrationSurface,
    aware: CalibrationSurface,
    rig: SimulatedRig,
    trace: list[tuple[float, float]],
    label: str = "session",
    on_message=None,
) -> SessionReport:
    """Replay a (t, force) trace through a full session, headlessly.

    The no-load baseline is captured automatically before the trace starts;
    trace time zero is the first targeting sample. The trace drives the rig
    exactly (no slew limiting): it stands for the ground-truth force the
    reference sensor measured.
    """
    driver = SessionDriver(spec, model, flat, aware, rig, label=label)
    for msg in driver.capture_baseline():
        if on_message:
            on_message(msg)
    if not trace:
        raise ConfigError("empty trace")
    t_end = max(t for t, _ in trace)
    k = 0
    while driver.state.phase != DONE:
        tau = k / spec.sample_rate
        if tau > t_end + 0.5 * driver.dt:
            break
        driver.rig.set_exact(trace_force(trace, tau))
        for msg in driver.tick():
            if on_message:
                on_message(msg)
        k += 1
    return driver.report()


def load_trace_csv(path) -> list[tuple[float, float]]:
    import csv as _csv

    rows = []
    with open(path, newline="") as fh:
        reader = _csv.reader(fh)
        header = next(reader)
        if header != ["t", "force"]:
            raise ConfigError(f"unexpected trace header: {header}")
        for row in reader:
            rows.append((float(row[0]), float(row[1])))
    if rows != sorted(rows, key=lambda r: r[0]):
        raise ProtocolError("trace timestamps must be nondecreasing")
    return rows

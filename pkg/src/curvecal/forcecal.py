"""Force-calibration surfaces F(S, C) fitted by third-degree least squares.

The basis is restricted to monomials containing at least one power of the
sensor reading S, so F(0, C) = 0 holds exactly:

    flat variant:            S, S^2, S^3
    curvature-aware variant: S, S^2, S^3, S*C, S*C^2, S^2*C

S spans ~1e3 and C ~1e2, so columns are scaled to unit max-absolute before
solving and coefficients unscaled afterwards. Columns that are identically
zero (all-flat data fed to the aware variant) are dropped with a zero
coefficient so both variants agree on flat data; genuinely collinear columns
raise instead.
"""

from __future__ import annotations

import csv
import io
import json
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DegenerateDataError, DomainError

FLAT_BASIS = ((1, 0), (2, 0), (3, 0))
AWARE_BASIS = ((1, 0), (2, 0), (3, 0), (1, 1), (1, 2), (2, 1))

CURVATURE_FIT_MAX = 80.0  # anything beyond is the unreliable regime
PRUNE_THRESHOLD = 1e-8  # on column-scaled coefficients


def basis_for(variant: str) -> tuple[tuple[int, int], ...]:
    if variant == "flat":
        return FLAT_BASIS
    if variant == "curvature_aware":
        return AWARE_BASIS
    raise ConfigError(f"unknown variant {variant!r}")


def term_name(i: int, j: int) -> str:
    s = "S" if i == 1 else f"S^{i}" if i else ""
    c = "C" if j == 1 else f"C^{j}" if j else ""
    return s + ("*" if s and c else "") + c


@dataclass(frozen=True)
class CalibrationSample:
    """One (block reading, curvature, reference force) triple.

    Physical captures always have f >= 0; synthetic fitting sets (e.g. data
    generated from a published surface over a full grid) may carry negative
    forces, so only finiteness is enforced on f.
    """

    s: float
    c: float
    f: float

    def __post_init__(self):
        if self.c < 0:
            raise DomainError("curvature must be nonnegative")
        if not all(np.isfinite([self.s, self.c, self.f])):
            raise DomainError("sample values must be finite")


@dataclass(frozen=True)
class ForcePrediction:
    force: float
    raw: float
    clamped: bool
    extrapolated: bool


@dataclass(frozen=True)
class CalibrationSurface:
    """Fitted polynomial surface: sum of coeff * S^i * C^j over the term list."""

    variant: str
    terms: tuple[tuple[int, int, float], ...]
    fit_r2: float
    fit_domain: tuple[tuple[float, float], tuple[float, float]]

    def __post_init__(self):
        for i, j, _ in self.terms:
            if i < 1 or i + j > 3:
                raise ConfigError(f"term S^{i}*C^{j} outside the declared basis")
        if self.variant == "flat" and any(j != 0 for _, j, _ in self.terms):
            raise ConfigError("flat variant cannot carry curvature terms")

    def coefficient(self, i: int, j: int) -> float:
        for ti, tj, coeff in self.terms:
            if (ti, tj) == (i, j):
                return coeff
        return 0.0

    def to_dict(self) -> dict:
        return {
            "format": "curvecal-surface-v1",
            "variant": self.variant,
            "terms": [[i, j, coeff] for i, j, coeff in self.terms],
            "fit_r2": self.fit_r2,
            "fit_domain": [list(self.fit_domain[0]), list(self.fit_domain[1])],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CalibrationSurface":
        if d.get("format") != "curvecal-surface-v1":
            raise ConfigError(f"unknown surface format: {d.get('format')!r}")
        return cls(
            variant=d["variant"],
            terms=tuple((int(i), int(j), float(c)) for i, j, c in d["terms"]),
            fit_r2=float(d["fit_r2"]),
            fit_domain=(tuple(d["fit_domain"][0]), tuple(d["fit_domain"][1])),
        )

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh)

    @classmethod
    def load(cls, path) -> "CalibrationSurface":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def _design_matrix(s: np.ndarray, c: np.ndarray, basis) -> np.ndarray:
    return np.column_stack([s**i * c**j for i, j in basis])


def fit_surface(samples, variant: str, basis=None) -> CalibrationSurface:
    """Ordinary least squares over the variant's basis with column scaling."""
    samples = list(samples)
    basis = tuple(basis) if basis is not None else basis_for(variant)
    if any(smp.c > CURVATURE_FIT_MAX for smp in samples):
        raise ConfigError(
            f"calibration samples above {CURVATURE_FIT_MAX:g} m^-1 are in the "
            "unreliable regime and must be excluded from fitting"
        )
    if len(samples) < 2 * len(basis):
        raise DegenerateDataError(
            f"need at least {2 * len(basis)} samples for {len(basis)} terms, got {len(samples)}"
        )

    s = np.array([smp.s for smp in samples], dtype=float)
    c = np.array([smp.c for smp in samples], dtype=float)
    f = np.array([smp.f for smp in samples], dtype=float)

    A = _design_matrix(s, c, basis)
    scale = np.abs(A).max(axis=0)
    zero_cols = scale == 0.0
    if np.any(zero_cols):
        # Identically-zero columns (e.g. curvature terms on all-flat data)
        # contribute nothing; solve without them and report zero coefficients.
        warnings.warn(
            "dropping zero columns from the fit: "
            + ", ".join(term_name(i, j) for (i, j), z in zip(basis, zero_cols) if z),
            stacklevel=2,
        )
    live = ~zero_cols
    A_live = A[:, live] / scale[live]

    rank = np.linalg.matrix_rank(A_live)
    if rank < A_live.shape[1]:
        raise DegenerateDataError(
            "design matrix is rank-deficient; collinear columns: "
            + ", ".join(_collinear_columns(A_live, [b for b, keep in zip(basis, live) if keep]))
        )

    beta_scaled, *_ = np.linalg.lstsq(A_live, f, rcond=None)
    beta = np.zeros(len(basis))
    beta[live] = beta_scaled / scale[live]

    pred = A @ beta
    ss_res = float(np.sum((f - pred) ** 2))
    ss_tot = float(np.sum((f - f.mean()) ** 2))
    fit_r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0

    return CalibrationSurface(
        variant=variant,
        terms=tuple((i, j, float(b)) for (i, j), b in zip(basis, beta)),
        fit_r2=fit_r2,
        fit_domain=((float(s.min()), float(s.max())), (float(c.min()), float(c.max()))),
    )


def _collinear_columns(A: np.ndarray, basis) -> list[str]:
    names = []
    for j in range(A.shape[1]):
        others = np.delete(A, j, axis=1)
        coef, res, *_ = np.linalg.lstsq(others, A[:, j], rcond=None)
        resid = A[:, j] - others @ coef
        if np.linalg.norm(resid) < 1e-8 * max(np.linalg.norm(A[:, j]), 1.0):
            names.append(term_name(*basis[j]))
    return names or [term_name(*b) for b in basis]


def prune_surface(samples, surface: CalibrationSurface, threshold: float = PRUNE_THRESHOLD) -> CalibrationSurface:
    """Drop terms with negligible column-scaled coefficients, then refit."""
    samples = list(samples)
    s = np.array([smp.s for smp in samples], dtype=float)
    c = np.array([smp.c for smp in samples], dtype=float)
    basis = tuple((i, j) for i, j, _ in surface.terms)
    A = _design_matrix(s, c, basis)
    scale = np.abs(A).max(axis=0)
    keep = [
        (i, j)
        for (i, j, coeff), sc in zip(surface.terms, scale)
        if abs(coeff) * sc >= threshold
    ]
    if len(keep) == len(basis):
        return surface
    if not keep:
        raise DegenerateDataError("pruning removed every term; surface is all noise")
    return fit_surface(samples, surface.variant, basis=keep)


def evaluate_surface(surface: CalibrationSurface, s: float, c: float) -> ForcePrediction:
    """Polynomial evaluation with zero flooring and extrapolation flagging."""
    raw = 0.0
    for i, j, coeff in surface.terms:
        raw += coeff * s**i * c**j
    (s_lo, s_hi), (c_lo, c_hi) = surface.fit_domain
    extrapolated = not (s_lo <= s <= s_hi and c_lo <= c <= c_hi)
    clamped = raw < 0.0
    return ForcePrediction(
        force=0.0 if clamped else float(raw),
        raw=float(raw),
        clamped=clamped,
        extrapolated=extrapolated,
    )


def predict_force(surface: CalibrationSurface, s: float, c: float) -> float:
    return evaluate_surface(surface, s, c).force


def residual_sum_of_squares(surface: CalibrationSurface, samples) -> float:
    total = 0.0
    for smp in samples:
        raw = sum(coeff * smp.s**i * smp.c**j for i, j, coeff in surface.terms)
        total += (raw - smp.f) ** 2
    return total


# ---------------------------------------------------------------------------
# Error reports in the validation-table layout
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ErrorStats:
    """Absolute-error summary for one (object, force) cell and one variant."""

    mae: float
    sd: float
    bias: float  # mean signed error; negative means underestimation
    n: int


@dataclass
class EvalCell:
    """Steady-state samples for one object at one reference force."""

    object_name: str
    curvature_gt: float
    curvature_used: float
    reference: float | None  # None marks the natural-hold cell
    samples: list[tuple[float, float]] = field(default_factory=list)  # (s, f_true)


@dataclass
class ObjectErrorRow:
    name: str
    curvature_gt: float
    curvature_used: float
    cells: dict[float, dict[str, ErrorStats]]
    natural_hold: dict | None = None  # {"force_gt": float, "flat"/"aware": ErrorStats}


@dataclass
class ForceErrorReport:
    reference_forces: list[float]
    rows: list[ObjectErrorRow]

    def csv_header(self) -> list[str]:
        cols = ["object", "curvature_gt", "curvature_pred"]
        for ref in self.reference_forces:
            tag = f"{ref:g}N"
            cols += [f"flat_mae_{tag}", f"flat_sd_{tag}", f"curve_mae_{tag}", f"curve_sd_{tag}"]
        cols += ["nh_force_gt", "nh_flat_mae", "nh_flat_sd", "nh_curve_mae", "nh_curve_sd"]
        return cols

    def to_csv_string(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(self.csv_header())
        for row in self.rows:
            rec: list = [row.name, repr(float(row.curvature_gt)), repr(float(row.curvature_used))]
            for ref in self.reference_forces:
                cell = row.cells.get(ref)
                if cell is None:
                    rec += ["", "", "", ""]
                else:
                    rec += [
                        repr(cell["flat"].mae), repr(cell["flat"].sd),
                        repr(cell["aware"].mae), repr(cell["aware"].sd),
                    ]
            if row.natural_hold is None:
                rec += ["", "", "", "", ""]
            else:
                nh = row.natural_hold
                rec += [
                    repr(float(nh["force_gt"])),
                    repr(nh["flat"].mae), repr(nh["flat"].sd),
                    repr(nh["aware"].mae), repr(nh["aware"].sd),
                ]
            writer.writerow(rec)
        return buf.getvalue()

    def to_text(self) -> str:
        """Aligned table: one object per row, MAE+-SD per force and variant."""
        lines = []
        head = f"{'object':<12} {'GT':>6} {'PR':>6}"
        for ref in self.reference_forces:
            head += f" | {f'{ref:g} N flat':>12} {f'{ref:g} N curve':>12}"
        head += f" | {'hold GT':>8} {'hold flat':>12} {'hold curve':>12}"
        lines.append(head)
        lines.append("-" * len(head))
        for row in self.rows:
            line = f"{row.name:<12} {row.curvature_gt:>6.2f} {row.curvature_used:>6.2f}"
            for ref in self.reference_forces:
                cell = row.cells.get(ref)
                if cell is None:
                    line += f" | {'-':>12} {'-':>12}"
                else:
                    line += (
                        f" | {cell['flat'].mae:5.2f}+-{cell['flat'].sd:<5.2f}"
                        f" {cell['aware'].mae:5.2f}+-{cell['aware'].sd:<5.2f}"
                    )
            if row.natural_hold is None:
                line += f" | {'-':>8} {'-':>12} {'-':>12}"
            else:
                nh = row.natural_hold
                line += (
                    f" | {nh['force_gt']:>8.2f}"
                    f" {nh['flat'].mae:5.2f}+-{nh['flat'].sd:<5.2f}"
                    f" {nh['aware'].mae:5.2f}+-{nh['aware'].sd:<5.2f}"
                )
            lines.append(line)
        return "\n".join(lines) + "\n"

    def to_dict(self) -> dict:
        def stats(e: ErrorStats) -> dict:
            return {"mae": e.mae, "sd": e.sd, "bias": e.bias, "n": e.n}

        return {
            "reference_forces": list(self.reference_forces),
            "rows": [
                {
                    "name": r.name,
                    "curvature_gt": r.curvature_gt,
                    "curvature_used": r.curvature_used,
                    "cells": {repr(ref): {v: stats(e) for v, e in cell.items()} for ref, cell in r.cells.items()},
                    "natural_hold": None
                    if r.natural_hold is None
                    else {
                        "force_gt": r.natural_hold["force_gt"],
                        "flat": stats(r.natural_hold["flat"]),
                        "aware": stats(r.natural_hold["aware"]),
                    },
                }
                for r in self.rows
            ],
        }


def error_stats(surface: CalibrationSurface, samples, curvature: float) -> ErrorStats:
    errs = np.array([predict_force(surface, s, curvature) - f for s, f in samples])
    absolute = np.abs(errs)
    return ErrorStats(
        mae=float(absolute.mean()),
        sd=float(absolute.std()),
        bias=float(errs.mean()),
        n=len(samples),
    )


def compare_variants(
    flat: CalibrationSurface,
    aware: CalibrationSurface,
    cells: list[EvalCell],
) -> ForceErrorReport:
    """MAE +- SD per (object, reference force) cell for both variants."""
    rows: dict[str, ObjectErrorRow] = {}
    references: list[float] = []
    for cell in cells:
        if not cell.samples:
            warnings.warn(f"skipping empty evaluation group {cell.object_name!r}@{cell.reference}", stacklevel=2)
            continue
        row = rows.setdefault(
            cell.object_name,
            ObjectErrorRow(
                name=cell.object_name,
                curvature_gt=cell.curvature_gt,
                curvature_used=cell.curvature_used,
                cells={},
            ),
        )
        flat_stats = error_stats(flat, cell.samples, cell.curvature_used)
        aware_stats = error_stats(aware, cell.samples, cell.curvature_used)
        if cell.reference is None:
            gt = float(np.mean([f for _, f in cell.samples]))
            row.natural_hold = {"force_gt": gt, "flat": flat_stats, "aware": aware_stats}
        else:
            row.cells[cell.reference] = {"flat": flat_stats, "aware": aware_stats}
            if cell.reference not in references:
                references.append(cell.reference)
    return ForceErrorReport(reference_forces=sorted(references), rows=list(rows.values()))


# ---------------------------------------------------------------------------
# Calibration dataset persistence: s,c,f
# ---------------------------------------------------------------------------

CALIBRATION_CSV_HEADER = ["s", "c", "f"]


def save_calibration_samples(path, samples) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CALIBRATION_CSV_HEADER)
        for smp in samples:
            writer.writerow([repr(smp.s), repr(smp.c), repr(smp.f)])


def load_calibration_samples(path) -> list[CalibrationSample]:
    out = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != CALIBRATION_CSV_HEADER:
            raise ConfigError(f"unexpected calibration CSV header: {header}")
        for row in reader:
            out.append(CalibrationSample(s=float(row[0]), c=float(row[1]), f=float(row[2])))
    return out

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from curvecal import forcecal as fc
from curvecal import curvnet as cn, pipeline
from curvecal.errors import ConfigError, DegenerateDataError, DomainError

# Coefficient set with published-style magnitudes, used as a recovery target.
TRUE_COEFFS = {(1, 0): 0.009625, (2, 0): -0.000014, (1, 1): -0.000372, (1, 2): 0.000005}


def surface_value(s, c):
    return sum(coeff * s**i * c**j for (i, j), coeff in TRUE_COEFFS.items())


def grid_samples(noise_sigma=0.0, seed=0):
    rng = np.random.default_rng(seed)
    samples = []
    for c in (0.0, 20.0, 40.0, 60.0, 80.0):
        for s in np.linspace(0.0, 1023.0, 64):
            f = surface_value(s, c)
            if noise_sigma > 0:
                f += rng.normal(0.0, noise_sigma)
            samples.append(fc.CalibrationSample(s=float(s), c=c, f=float(f)))
    return samples


class TestFitSurface:
    def test_recovers_generating_coefficients_exactly(self):
        surface = fc.fit_surface(grid_samples(), "curvature_aware")
        for (i, j), expected in TRUE_COEFFS.items():
            got = surface.coefficient(i, j)
            assert abs(got - expected) / abs(expected) < 1e-6, (i, j, got)
        for i, j in ((3, 0), (2, 1)):  # terms absent from the generator
            assert abs(surface.coefficient(i, j)) <= 1e-9

    def test_noisy_fit_keeps_high_r2(self):
        surface = fc.fit_surface(grid_samples(noise_sigma=0.3, seed=1), "curvature_aware")
        assert surface.fit_r2 >= 0.92

    def test_flat_variant_recovers_flat_slice(self):
        samples = [
            fc.CalibrationSample(s=float(s), c=0.0, f=0.01 * s - 2e-5 * s**2)
            for s in np.linspace(0, 1000, 50)
        ]
        surface = fc.fit_surface(samples, "flat")
        assert surface.coefficient(1, 0) == pytest.approx(0.01, rel=1e-8)
        assert surface.coefficient(2, 0) == pytest.approx(-2e-5, rel=1e-8)
        assert abs(surface.coefficient(3, 0)) < 1e-12

    def test_rejects_unreliable_curvatures(self):
        samples = grid_samples() + [fc.CalibrationSample(s=1.0, c=100.0, f=0.0)]
        with pytest.raises(ConfigError, match="unreliable"):
            fc.fit_surface(samples, "curvature_aware")

    def test_rejects_too_few_samples(self):
        samples = grid_samples()[:8]
        with pytest.raises(DegenerateDataError):
            fc.fit_surface(samples, "curvature_aware")

    def test_two_distinct_curvatures_raise_naming_collinear_columns(self):
        samples = [
            fc.CalibrationSample(s=float(s), c=c, f=surface_value(s, c))
            for c in (0.0, 40.0)
            for s in np.linspace(1.0, 1000.0, 30)
        ]
        with pytest.raises(DegenerateDataError, match=r"S\*C"):
            fc.fit_surface(samples, "curvature_aware")

    def test_flat_equals_aware_on_flat_only_data(self):
        samples = [smp for smp in grid_samples() if smp.c == 0.0]
        flat = fc.fit_surface(samples, "flat")
        with pytest.warns(UserWarning, match="zero columns"):
            aware = fc.fit_surface(samples, "curvature_aware")
        for s in np.linspace(0, 1023, 20):
            assert fc.predict_force(flat, s, 0.0) == pytest.approx(
                fc.predict_force(aware, s, 0.0), abs=1e-9
            )

    def test_perturbing_any_coefficient_increases_rss(self):
        samples = grid_samples(noise_sigma=0.3, seed=3)
        surface = fc.fit_surface(samples, "curvature_aware")
        base_rss = fc.residual_sum_of_squares(surface, samples)
        for idx, (i, j, coeff) in enumerate(surface.terms):
            for factor in (0.99, 1.01):
                terms = list(surface.terms)
                terms[idx] = (i, j, coeff * factor)
                perturbed = fc.CalibrationSurface(
                    variant=surface.variant, terms=tuple(terms),
                    fit_r2=surface.fit_r2, fit_domain=surface.fit_domain,
                )
                assert fc.residual_sum_of_squares(perturbed, samples) >= base_rss


class TestPruning:
    def test_prunes_to_generating_terms(self):
        surface = fc.fit_surface(grid_samples(), "curvature_aware")
        pruned = fc.prune_surface(grid_samples(), surface)
        assert {(i, j) for i, j, _ in pruned.terms} == set(TRUE_COEFFS)
        for (i, j), expected in TRUE_COEFFS.items():
            assert pruned.coefficient(i, j) == pytest.approx(expected, rel=1e-6)

    def test_noisy_fit_keeps_all_terms(self):
        samples = grid_samples(noise_sigma=0.3, seed=4)
        surface = fc.fit_surface(samples, "curvature_aware")
        assert fc.prune_surface(samples, surface) is surface


class TestPredictForce:
    def test_zero_reading_predicts_zero(self, paper_like_surface):
        for c in (0.0, 17.5, 50.0, 80.0):
            assert fc.predict_force(paper_like_surface, 0.0, c) == 0.0

    def test_published_coefficients_flat_point(self, paper_like_surface):
        assert fc.predict_force(paper_like_surface, 100.0, 0.0) == pytest.approx(0.8225)

    def test_published_coefficients_curved_point(self, paper_like_surface):
        # curvature suppresses inferred force at equal reading
        assert fc.predict_force(paper_like_surface, 100.0, 20.0) == pytest.approx(0.2785)
        assert fc.predict_force(paper_like_surface, 100.0, 20.0) < fc.predict_force(
            paper_like_surface, 100.0, 0.0
        )

    @given(c=st.floats(0.0, 80.0, allow_nan=False))
    @settings(max_examples=100)
    def test_zero_load_identity_property(self, c):
        flat = fc.CalibrationSurface(
            variant="flat", terms=((1, 0, 0.01), (2, 0, -1e-5), (3, 0, 1e-9)),
            fit_r2=1.0, fit_domain=((0.0, 1000.0), (0.0, 0.0)),
        )
        aware = fc.CalibrationSurface(
            variant="curvature_aware",
            terms=((1, 0, 0.01), (2, 0, -1e-5), (3, 0, 1e-9), (1, 1, -3e-4), (1, 2, 5e-6), (2, 1, 1e-8)),
            fit_r2=1.0, fit_domain=((0.0, 1000.0), (0.0, 80.0)),
        )
        assert fc.predict_force(flat, 0.0, c) == 0.0
        assert fc.predict_force(aware, 0.0, c) == 0.0

    def test_negative_polynomial_floors_to_zero_with_flag(self, paper_like_surface):
        # past the vertex the published-style quadratic dips negative
        pred = fc.evaluate_surface(paper_like_surface, 1023.0, 0.0)
        assert pred.raw < 0.0
        assert pred.clamped
        assert pred.force == 0.0

    def test_extrapolation_is_flagged(self, paper_like_surface):
        assert fc.evaluate_surface(paper_like_surface, 2000.0, 0.0).extrapolated
        assert not fc.evaluate_surface(paper_like_surface, 500.0, 20.0).extrapolated

    def test_invalid_terms_rejected(self):
        with pytest.raises(ConfigError):
            fc.CalibrationSurface(variant="flat", terms=((0, 0, 1.0),), fit_r2=1.0,
                                  fit_domain=((0, 1), (0, 1)))
        with pytest.raises(ConfigError):
            fc.CalibrationSurface(variant="flat", terms=((1, 1, 1.0),), fit_r2=1.0,
                                  fit_domain=((0, 1), (0, 1)))


class TestSampleValidation:
    def test_negative_curvature_rejected(self):
        with pytest.raises(DomainError):
            fc.CalibrationSample(s=1.0, c=-1.0, f=0.0)

    def test_nonfinite_rejected(self):
        with pytest.raises(DomainError):
            fc.CalibrationSample(s=float("nan"), c=0.0, f=0.0)


class TestPersistence:
    def test_surface_json_round_trip(self, tmp_path):
        surface = fc.fit_surface(grid_samples(), "curvature_aware")
        path = tmp_path / "surface.json"
        surface.save(path)
        assert fc.CalibrationSurface.load(path) == surface

    def test_calibration_csv_round_trip(self, tmp_path):
        samples = grid_samples()[:10]
        path = tmp_path / "cal.csv"
        fc.save_calibration_samples(path, samples)
        assert fc.load_calibration_samples(path) == samples
        assert path.read_text().splitlines()[0] == "s,c,f"


def simulated_surfaces(identity, circuit, sim, seed=0):
    samples = pipeline.build_force_dataset(
        identity, circuit, sim,
        curvatures=np.linspace(0, 80, 10), force_grid=np.arange(0.0, 21.0, 2.0),
        frames_per_force=25, seed=seed,
    )
    flat = fc.fit_surface([s for s in samples if s.c == 0.0], "flat")
    aware = fc.fit_surface(samples, "curvature_aware")
    return flat, aware


class TestCompareVariants:
    def test_flat_object_errors_comparable(self, identity, circuit, sim):
        flat, aware = simulated_surfaces(identity, circuit, sim)
        cells = pipeline.build_eval_cells(
            _constant_curvature_model(0.0), identity, circuit, sim,
            [pipeline.ObjectSpec("flat_obj", 0.0)], (2.0, 4.0, 6.0, 8.0),
            frames_per_cell=25, baseline_frames=25, seed=5, use_true_curvature=True,
        )
        report = fc.compare_variants(flat, aware, cells)
        row = report.rows[0]
        for ref in (2.0, 4.0, 6.0, 8.0):
            diff = abs(row.cells[ref]["flat"].mae - row.cells[ref]["aware"].mae)
            assert diff < 0.25, (ref, row.cells[ref])

    def test_curved_object_flat_error_grows_and_exceeds_aware(self, identity, circuit, sim):
        flat, aware = simulated_surfaces(identity, circuit, sim)
        cells = pipeline.build_eval_cells(
            _constant_curvature_model(25.0), identity, circuit, sim,
            [pipeline.ObjectSpec("curved_obj", 25.0)], (2.0, 4.0, 6.0, 8.0),
            frames_per_cell=25, baseline_frames=25, seed=6, use_true_curvature=True,
        )
        report = fc.compare_variants(flat, aware, cells)
        row = report.rows[0]
        maes = [row.cells[ref]["flat"].mae for ref in (2.0, 4.0, 6.0, 8.0)]
        assert all(b > a for a, b in zip(maes, maes[1:]))  # grows with force
        for ref in (4.0, 6.0, 8.0):
            assert row.cells[ref]["flat"].mae > row.cells[ref]["aware"].mae

    def test_true_curvature_beats_noisy_curvature_in_expectation(self, identity, circuit, sim):
        flat, aware = simulated_surfaces(identity, circuit, sim)
        rng = np.random.default_rng(42)
        true_total, noisy_total = 0.0, 0.0
        for seed in range(10):
            cells_true = pipeline.build_eval_cells(
                _constant_curvature_model(25.0), identity, circuit, sim,
                [pipeline.ObjectSpec("obj", 25.0)], (4.0, 8.0),
                frames_per_cell=20, baseline_frames=20, seed=100 + seed,
                use_true_curvature=True,
            )
            noisy = [
                fc.EvalCell(c.object_name, c.curvature_gt, c.curvature_gt + rng.normal(0, 5.0),
                            c.reference, c.samples)
                for c in cells_true
            ]
            rep_true = fc.compare_variants(flat, aware, cells_true)
            rep_noisy = fc.compare_variants(flat, aware, noisy)
            for row_t, row_n in zip(rep_true.rows, rep_noisy.rows):
                for ref in (4.0, 8.0):
                    true_total += row_t.cells[ref]["aware"].mae
                    noisy_total += row_n.cells[ref]["aware"].mae
        assert true_total <= noisy_total

    def test_empty_group_skipped_with_warning(self, paper_like_surface):
        flat = fc.CalibrationSurface(variant="flat", terms=((1, 0, 0.01),), fit_r2=1.0,
                                     fit_domain=((0, 1000), (0, 0)))
        cells = [fc.EvalCell("empty", 0.0, 0.0, 2.0, samples=[])]
        with pytest.warns(UserWarning, match="skipping empty"):
            report = fc.compare_variants(flat, paper_like_surface, cells)
        assert report.rows == []

    def test_report_layout(self, paper_like_surface):
        flat = fc.CalibrationSurface(variant="flat", terms=((1, 0, 0.01),), fit_r2=1.0,
                                     fit_domain=((0, 1000), (0, 0)))
        cells = [
            fc.EvalCell("obj", 25.0, 24.0, ref, samples=[(100.0 * ref, ref), (101.0 * ref, ref)])
            for ref in (2.0, 4.0, 6.0, 8.0)
        ] + [fc.EvalCell("obj", 25.0, 24.0, None, samples=[(150.0, 1.5)])]
        report = fc.compare_variants(flat, paper_like_surface, cells)
        csv_text = report.to_csv_string()
        header = csv_text.splitlines()[0].split(",")
        assert header[:3] == ["object", "curvature_gt", "curvature_pred"]
        assert "flat_mae_2N" in header and "curve_sd_8N" in header
        assert header[-5:] == ["nh_force_gt", "nh_flat_mae", "nh_flat_sd", "nh_curve_mae", "nh_curve_sd"]
        assert len(csv_text.splitlines()) == 2
        text = report.to_text()
        assert "obj" in text and "hold" in text


def _constant_curvature_model(value: float):
    """Tiny stand-in predictor: bias-only network emitting one fixed value."""
    params = cn.init_params(np.random.default_rng(0), 24, 4, 1)
    for k in params:
        params[k] = np.zeros_like(params[k])
    params["head.b"] = np.array([value / cn.TARGET_SCALE])
    return cn.CurvNetModel(params=params, in_dim=24, width=4, n_blocks=1, dropout_rate=0.0)

import numpy as np
import pytest

from curvecal import curvnet, forcecal, pipeline, sensor_sim
from curvecal.pipeline import ObjectSpec, RunConfig
from curvecal.curvnet import TrainConfig


@pytest.fixture(scope="session")
def sim():
    return sensor_sim.SimConfig()


@pytest.fixture(scope="session")
def sim_quiet():
    return sensor_sim.SimConfig(noise_sigma_counts=0.0)


@pytest.fixture(scope="session")
def circuit():
    return sensor_sim.CircuitConfig()


@pytest.fixture(scope="session")
def identity(sim):
    return sensor_sim.make_identity("A", 101, sim)


def tiny_run_config(seed: int = 7) -> RunConfig:
    """Small but complete run config: fast enough for unit tests, good enough
    to pass both gates."""
    return RunConfig(
        seed=seed,
        sensor_seeds=(11, 12),
        curvatures=tuple(float(v) for v in np.linspace(0.0, 80.0, 10)),
        baselines_per_fixture=3,
        samples_per_baseline=25,
        augment=False,
        train=TrainConfig(epochs=300, batch_size=16, seed=seed),
        force_grid=tuple(float(f) for f in range(0, 21, 2)),
        frames_per_force=25,
        objects=(ObjectSpec("flat_obj", 0.0), ObjectSpec("curved_obj", 25.0)),
        frames_per_eval_cell=25,
    )


@pytest.fixture(scope="session")
def tiny_config():
    return tiny_run_config()


@pytest.fixture(scope="session")
def tiny_pipeline(tmp_path_factory, tiny_config):
    """One full pipeline run shared by session/service/CLI tests."""
    out_dir = tmp_path_factory.mktemp("pipeline")
    outcome = pipeline.run_full(out_dir, tiny_config)
    assert outcome.all_gates_passed, outcome.manifest.gates
    return outcome


@pytest.fixture(scope="session")
def tiny_assets(tiny_pipeline):
    return pipeline.load_artifacts(tiny_pipeline.out_dir)


@pytest.fixture(scope="session")
def paper_like_surface():
    """A curvature-aware surface with published-style coefficient magnitudes."""
    return forcecal.CalibrationSurface(
        variant="curvature_aware",
        terms=((1, 0, 0.009625), (2, 0, -0.000014), (1, 1, -0.000372), (1, 2, 0.000005)),
        fit_r2=1.0,
        fit_domain=((0.0, 1023.0), (0.0, 80.0)),
    )

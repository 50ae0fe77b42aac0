import pytest

from resight.pipeline import ExperimentConfig, run_experiment
from resight.synthpop import SyntheticSpec


@pytest.fixture(scope="session")
def benchmark_run(tmp_path_factory):
    """One full default-benchmark experiment (64x4, seed 7, oracle,
    f=0.01, 2 iterations), shared by every test that needs it."""
    base = tmp_path_factory.mktemp("benchmark")
    config = ExperimentConfig(
        dataset=SyntheticSpec(),
        iterations=2,
        budget_fraction=0.01,
        annotator_mode="oracle",
        seed=7,
        out_dir=base / "out",
        data_dir=base / "dei",
        durability="none",
    )
    return run_experiment(config)

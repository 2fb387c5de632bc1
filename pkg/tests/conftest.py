import numpy as np
import pytest

from latentda.config import ExperimentConfig
from latentda.data import DomainTransform, SyntheticSpec, generate

# one line per acceptance criterion, shown in the terminal summary
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def tiny_spec():
    return SyntheticSpec(name="tiny", num_classes=3, feature_dim=5,
                         source_domains=[DomainTransform(0.0), DomainTransform(90.0)],
                         target_domains=[DomainTransform(45.0)],
                         prototype_center=(3.0, 0.0), prototype_radius=1.0,
                         noise_std=0.2, nuisance_std=0.3,
                         n_source=120, n_target=120, n_test=60, seed=5)


@pytest.fixture
def tiny_dataset(tiny_spec):
    return generate(tiny_spec)


@pytest.fixture
def tiny_config(tiny_spec):
    return ExperimentConfig(dataset=tiny_spec.to_dict(), hidden=[8, 8], branch_width=8,
                            batch_size=16, total_steps=30, eval_every=10,
                            weights={"lambda_C": 0.2, "lambda_E": 0.1,
                                     "lambda_B": 0.1, "lambda_D": 0.5})

import numpy as np
import pytest

from histonorm.lut import bake_lut
from histonorm.pipeline.synthetic import REFERENCE_BASIS, SHIFTED_BASIS, render_stains
from histonorm.stain_norm import fit_template


def random_concentrations(rng, shape, hi=1.5):
    return rng.uniform(0.0, hi, size=shape + (2,))


@pytest.fixture(scope="session")
def reference_image():
    rng = np.random.default_rng(7)
    return render_stains(random_concentrations(rng, (256, 256)), REFERENCE_BASIS)


@pytest.fixture(scope="session")
def shifted_image():
    rng = np.random.default_rng(8)
    return render_stains(random_concentrations(rng, (256, 256), hi=1.2), SHIFTED_BASIS, noise_sd=2.0, rng=rng)


@pytest.fixture(scope="session")
def reference_template(reference_image):
    return fit_template(reference_image)


@pytest.fixture(scope="session")
def shifted_template(shifted_image):
    return fit_template(shifted_image)


@pytest.fixture(scope="session")
def transfer_lut(shifted_template, reference_template):
    return bake_lut(shifted_template, reference_template)


TOY_WIDTHS = (2, 4, 8, 16, 64, 32)


@pytest.fixture(scope="session")
def toy_data():
    from histonorm.pipeline.synthetic import SyntheticConfig, generate_synthetic_dataset

    return generate_synthetic_dataset(SyntheticConfig(classes=3, patches_per_class=48, seed=21))


@pytest.fixture(scope="session")
def toy_model(toy_data):
    """A small classifier of the background / nuclei / stroma textures."""
    from histonorm.pipeline.training import TrainConfig, train

    return train(toy_data, TrainConfig(iterations=150, batch_size=24, widths=TOY_WIDTHS, seed=3))


ACCEPTANCE_LINES = []


def record(criterion, ok, detail):
    """Remember one acceptance verdict for the end-of-run summary."""
    ACCEPTANCE_LINES.append(f"{'PASS' if ok else 'FAIL'} {criterion}: {detail}")


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)

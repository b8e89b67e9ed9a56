import time

import numpy as np
import pytest
import torch

from lidm.codec import SensorConfig
from lidm.synth import synthesize

# Desk-scale setup shared by the slow learning tests: 8 scenes on a 16 x 128 sensor.
DESK_SHAPE = (16, 128)
DESK_SCENES = 8
DESK_STEPS = 2000

_acceptance = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion number")
    torch.set_num_threads(1)


def pytest_runtest_makereport(item, call):
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    if call.when != "call" and not (call.when == "setup" and call.excinfo is not None):
        return
    n = marker.args[0]
    ok = call.excinfo is None
    _acceptance.setdefault(n, []).append((item.name, ok))


def pytest_terminal_summary(terminalreporter):
    if not _acceptance:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_acceptance):
        results = _acceptance[n]
        status = "PASS" if all(ok for _, ok in results) else "FAIL"
        names = ", ".join(name for name, _ in results)
        terminalreporter.write_line(f"criterion {n:2d}: {status}  ({names})")


@pytest.fixture(scope="session")
def desk_sensor():
    return SensorConfig.preset(64).resized(*DESK_SHAPE)


@pytest.fixture(scope="session")
def desk_images(desk_sensor):
    return synthesize(DESK_SCENES, desk_sensor, seed=0).images


@pytest.fixture(scope="session")
def trained_ae(desk_images, desk_sensor):
    """Autoencoder overfit on the desk scenes for the full step budget."""
    from lidm.compression import CompressionConfig
    from lidm.compression.train import AETrainer, images_to_tensor

    trainer = AETrainer(CompressionConfig(batch_size=4, codebook_size=512), desk_sensor, seed=0)
    start = time.perf_counter()
    trainer.run(images_to_tensor(desk_images), DESK_STEPS)
    trainer.train_seconds = time.perf_counter() - start
    return trainer


@pytest.fixture(scope="session")
def trained_dm(trained_ae, desk_images):
    from lidm.diffusion import DiffusionConfig
    from lidm.diffusion.train import DMTrainer

    trainer = DMTrainer(trained_ae.state(), DiffusionConfig(), seed=0)
    z0, _ = trainer.prepare(desk_images)
    trainer.run(z0, DESK_STEPS)
    return trainer


@pytest.fixture
def rng():
    return np.random.default_rng(1234)

import numpy as np
import pytest

from pipespace.dataset import all_pipelines
from pipespace.synth import Blob, SynthConfig, generate, planted_by
from pipespace.volume import Volume


def make_volume(data, affine=None):
    data = np.asarray(data, dtype=np.float64)
    return Volume(data.shape, np.eye(4) if affine is None else affine, data)


@pytest.fixture
def ramp():
    """4x4x4 volume with value = x index."""
    return make_volume(np.broadcast_to(np.arange(4.0)[:, None, None], (4, 4, 4)))


@pytest.fixture(scope="session")
def planted4(tmp_path_factory):
    """The reference synthetic dataset: 24 pipelines, 4 communities, 100 groups, 16^3."""
    cfg = SynthConfig(n_groups=100, seed=2024)
    out = tmp_path_factory.mktemp("planted4")
    manifest, truth = generate(cfg, out)
    return cfg, manifest, truth


@pytest.fixture(scope="session")
def two_contrasts(tmp_path_factory):
    """Small two-contrast dataset: software x hrf (4 communities) vs motion (3)."""
    ps = all_pipelines()
    cfg = SynthConfig(n_groups=12, seed=5, dims=(12, 12, 12),
                      planted={"right-hand": planted_by(ps, ["software", "hrf"]),
                               "right-foot": planted_by(ps, ["motion"])})
    out = tmp_path_factory.mktemp("two_contrasts")
    manifest, truth = generate(cfg, out)
    return cfg, manifest, truth


@pytest.fixture(scope="session")
def blob_dataset(tmp_path_factory):
    cfg = SynthConfig(n_groups=10, seed=11, sigma_group=0.0, sigma_community=0.0, sigma_noise=1.0,
                      blob=Blob((8, 8, 8), 3.0, 8.0),
                      planted={"right-hand": planted_by(all_pipelines(), ["software"])})
    out = tmp_path_factory.mktemp("blob")
    manifest, truth = generate(cfg, out)
    return cfg, manifest, truth


ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[key])

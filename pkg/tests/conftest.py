import pytest
import torch

from mmbeam.dataio import SyntheticSceneConfig, generate_synthetic

torch.set_num_threads(1)


@pytest.fixture(scope="session")
def small_dataset(tmp_path_factory):
    """60-sample synthetic scene shared by the I/O and model tests."""
    out = tmp_path_factory.mktemp("small")
    cfg = SyntheticSceneConfig(n_samples=60, rng_seed=11)
    return cfg, generate_synthetic(cfg, out)


SMALL_ENCODER = dict(d_shared=16, d_v=16, d_l=16, d_p=8, d_t=8, vision_heads=2, n_vision_blocks=2,
                     vfe_dim=4, voxel_conv_dims=(4, 4), mlp_hidden=8, text_dim=8, text_heads=2)


@pytest.fixture(scope="session")
def small_enc_cfg():
    from mmbeam.encoders import EncoderConfig
    return EncoderConfig(**SMALL_ENCODER)


@pytest.fixture(scope="session")
def small_splits(small_dataset, small_enc_cfg):
    from mmbeam.harness import prepare_splits
    cfg, index = small_dataset
    return prepare_splits(index.root / "index.csv", small_enc_cfg, cfg.M, cfg.bs_position)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)

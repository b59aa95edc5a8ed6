"""
Test configuration for FLOSS
"""

import os
import sys
import tempfile

import pytest
import torch
import yaml

# Add the project root to Python path for imports
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from floss.core.geometry import DTYPE  # noqa: E402
from floss.nn.eqnet import EqNet, NetConfig  # noqa: E402
from floss.utils.config import ConfigManager  # noqa: E402

# Test configuration
TEST_CONFIG = {
    'data': {
        'sample_rate': 16000,
        'n_sources': 2,
        'crop_seconds': 0.1,
        'source_seconds': 0.25,
        'level_range': [-29.0, -19.0],
        'snr_range': [-5.0, 5.0],
        'kinds': ['sine_chirp', 'filtered_noise', 'am_tones'],
        'max_retries': 10
    },
    'model': {
        'n_blocks': 1,
        'embed_dim': 8,
        'n_heads': 2,
        'n_bands': 4,
        'norm_groups': 4,
        'mlp_ratio': 2,
        'bsja_kernel': 3,
        'tspa_kernel': [3, 3],
        'mlp_band_kernel': 3,
        'frame_ms': 20.0,
        'compress_exponent': 0.33
    },
    'loss': {
        'kind': 'db',
        'time_weighting': 'mostly_uniform',
        'p0': 0.01,
        'db_floor': 1.0e-12,
        'pit_max': 4
    },
    'noise': {
        'kind': 'envelope',
        'sigma0': 1.0,
        'env_window_ms': 16.0,
        'env_threshold_db': -40.0
    },
    'train': {
        'steps': 3,
        'batch_size': 2,
        'lr': 1.0e-3,
        'warmup_fraction': 0.34,
        'log_every': 1,
        'checkpoint_every': 0,
        'seed': 0,
        'assignment': 'pit'
    },
    'sample': {
        'schedule': 'linear:3',
        'use_ema': True,
        'seed': 0
    },
    'eval': {
        'n_mixtures': 3,
        'seed': 10000
    },
    'ablation': {
        'max_total_steps': 100
    },
    'logging': {
        'level': 'DEBUG',
        'format': '{time} | {level} | {message}',
        'progress': False
    },
    'performance': {
        'threads': 1,
        'prefetch': 2
    }
}

# Small enough for exhaustive permutation checks to stay fast
TINY_NET = dict(n_bands=4, embed_dim=8, n_heads=2, n_blocks=1, norm_groups=4,
                bsja_kernel=3, tspa_kernel=(3, 3), time_embed_dim=8)
TINY_LEN = 480


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="run slow acceptance tests")


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long-running acceptance test, needs --runslow")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


def write_config(directory: str, overrides=None) -> str:
    """Write TEST_CONFIG (with per-section overrides) as YAML and return its path"""
    data = {section: dict(values) for section, values in TEST_CONFIG.items()}
    data['train']['output_dir'] = os.path.join(directory, 'run')
    data['logging']['file'] = os.path.join(directory, 'logs', 'test.log')
    for section, values in (overrides or {}).items():
        data.setdefault(section, {}).update(values)
    path = os.path.join(directory, 'config.yaml')
    with open(path, 'w') as f:
        yaml.safe_dump(data, f)
    return path


def randomize(model: torch.nn.Module, seed: int = 0, scale: float = 0.1) -> torch.nn.Module:
    """Overwrite every parameter (zero-initialized projections included) with seeded noise"""
    g = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for p in model.parameters():
            p.copy_(scale * torch.randn(p.shape, generator=g, dtype=p.dtype))
    return model


@pytest.fixture
def test_config():
    """Provide test configuration"""
    return TEST_CONFIG


@pytest.fixture
def temp_dir():
    """Create temporary directory for tests"""
    with tempfile.TemporaryDirectory() as tmpdir:
        yield tmpdir


@pytest.fixture
def config_path(temp_dir):
    return write_config(temp_dir)


@pytest.fixture
def config(config_path):
    """Validated Config built from TEST_CONFIG"""
    return ConfigManager(config_path).get_config()


@pytest.fixture
def generator():
    return torch.Generator().manual_seed(1234)


@pytest.fixture
def tiny_net():
    """Randomly initialized tiny network with every path active"""
    return randomize(EqNet(NetConfig(seed=0, **TINY_NET)), seed=0)


@pytest.fixture
def fresh_net():
    """Tiny network as constructed (zero-initialized output projections)"""
    return EqNet(NetConfig(seed=0, **TINY_NET))


@pytest.fixture
def sources(generator):
    """Two random sources of TINY_LEN samples"""
    return torch.randn(2, TINY_LEN, generator=generator, dtype=DTYPE)

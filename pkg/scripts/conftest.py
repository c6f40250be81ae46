"""
Shared pytest setup: put src/ on the import path and provide small ensembles.
"""
import os
import sys

import pytest

project_root = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))

# Add src to path
sys.path.insert(0, os.path.join(project_root, "src"))

from core import make_grid, sample_brownian  # noqa: E402


@pytest.fixture
def config_dir():
    return os.path.join(project_root, "config")


@pytest.fixture
def ensemble():
    """ensemble(T, N, M, seed=7) -> BrownianEnsemble"""

    def build(T=1.0, N=32, M=2000, seed=7):
        return sample_brownian(make_grid(T, N), M, seed)

    return build

"""
Shared pytest fixtures for HeatCluster.
"""

import logging
import sys
from pathlib import Path

import numpy as np
import pytest

# Add project root to Python path
sys.path.insert(0, str(Path(__file__).parent))

from core.geometry import triangulate
from models.cluster import ReferenceShape
from utils.config import get_config
from utils.logger import get_logger


@pytest.fixture
def output_dir(tmp_path, monkeypatch):
    """Redirect result files into a per-test directory"""
    monkeypatch.setattr(get_config().output, 'directory', str(tmp_path))
    return tmp_path


@pytest.fixture(scope="session")
def coarse_sphere():
    """Unit sphere, 80 panels"""
    return triangulate(ReferenceShape.unit_sphere(), 1)


@pytest.fixture(scope="session")
def sphere_mesh():
    """Unit sphere, 320 panels"""
    return triangulate(ReferenceShape.unit_sphere(), 2)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


class _RecordCollector(logging.Handler):
    def __init__(self):
        super().__init__(logging.DEBUG)
        self.records = []

    def emit(self, record):
        self.records.append(record)


@pytest.fixture
def log_records():
    """Records emitted by the heatsim logger during the test, DEBUG and up"""
    logger = get_logger()
    handler = _RecordCollector()
    previous = logger.logger.level
    logger.logger.setLevel(logging.DEBUG)
    logger.logger.addHandler(handler)
    yield handler.records
    logger.logger.removeHandler(handler)
    logger.logger.setLevel(previous)
